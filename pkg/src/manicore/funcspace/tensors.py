"""Dense symmetric derivative tensors and the partition form of Faa di Bruno.

Tensors are carried batched over points: ``D^m f`` at ``n`` points is an
array of shape ``(n, p) + (d,) * m`` where ``p`` is the codomain and ``d``
the domain dimension.  The public :class:`SymmetricTensor` wraps a single
point's value and exposes the multi-index table view.
"""

from __future__ import annotations

import itertools
import string
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

__all__ = [
    "SymmetricTensor",
    "set_partitions",
    "fdb_from_jets",
    "pullback",
    "left_apply",
    "tensor_opnorm",
]

_LETTERS = [c for c in string.ascii_letters if c not in "yz"]


@dataclass(frozen=True, eq=False)
class SymmetricTensor:
    """Value of ``D^m f(x)``: array of shape ``(p,) + (d,) * m``."""

    array: np.ndarray

    @property
    def order(self) -> int:
        return self.array.ndim - 1

    @property
    def entries(self) -> dict[tuple[int, ...], np.ndarray]:
        """Multi-index table: sorted index tuple -> coefficient vector."""
        d = self.array.shape[1] if self.order else 0
        out = {}
        for combo in itertools.combinations_with_replacement(range(d), self.order):
            out[combo] = np.array(self.array[(slice(None),) + combo])
        return out

    def apply(self, *vectors) -> np.ndarray:
        out = self.array
        for v in vectors:
            out = np.tensordot(out, np.asarray(v, dtype=float), axes=([1], [0]))
        return out

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.array, dtype=dtype)


@lru_cache(maxsize=None)
def set_partitions(m: int) -> tuple[tuple[tuple[int, ...], ...], ...]:
    """All set partitions of ``{0, ..., m-1}`` (Bell number many)."""
    if m == 0:
        return ((),)
    out = []
    for part in set_partitions(m - 1):
        last = m - 1
        out.append(part + ((last,),))
        for i in range(len(part)):
            new = list(part)
            new[i] = part[i] + (last,)
            out.append(tuple(new))
    return tuple(out)


def fdb_from_jets(
    outer_jet: list[np.ndarray],
    inner_jet: list[np.ndarray],
    m: int,
    min_blocks: int = 1,
    max_blocks: int | None = None,
) -> np.ndarray:
    """Sum of Faa di Bruno partition terms with a block count in range.

    ``outer_jet[k]`` is ``D^k f1`` at ``f2(x)`` with shape ``(n, p) + (q,)*k``
    and ``inner_jet[j]`` is ``D^j f2(x)`` with shape ``(n, q) + (d,)*j``.
    With the full range this is ``D^m (f1 o f2)(x)``; with blocks in
    ``[2, m-1]`` it is the partition remainder.
    """
    if max_blocks is None:
        max_blocks = m
    n, p = outer_jet[0].shape[:2] if outer_jet[0].ndim >= 2 else (outer_jet[1].shape[0], outer_jet[1].shape[1])
    d = inner_jet[1].shape[-1]
    out = np.zeros((n, p) + (d,) * m)
    outidx = _LETTERS[:m]
    for part in set_partitions(m):
        k = len(part)
        if k < min_blocks or k > max_blocks:
            continue
        qidx = _LETTERS[m : m + k]
        subs = ["zy" + "".join(qidx)]
        ops = [outer_jet[k]]
        for b, block in enumerate(part):
            subs.append("z" + qidx[b] + "".join(outidx[i] for i in block))
            ops.append(inner_jet[len(block)])
        expr = ",".join(subs) + "->zy" + "".join(outidx)
        out += np.einsum(expr, *ops, optimize=True)
    return out


def pullback(tensor: np.ndarray, lin: np.ndarray) -> np.ndarray:
    """``T(L., ..., L.)``: every slot of ``T (n,p)+(q,)*m`` composed with ``L (n,q,d)``."""
    m = tensor.ndim - 2
    out = tensor
    for slot in range(m):
        # contract axis 2 (the first remaining q slot) and append the new d axis at the end
        out = np.einsum("zyq...,zqd->zy...d", out, lin)
    return out


def left_apply(mat: np.ndarray, tensor: np.ndarray) -> np.ndarray:
    """``M(x) T(x)``: ``mat (n,r,p)`` or ``(r,p)`` acting on the codomain of ``T (n,p,...)``."""
    if mat.ndim == 2:
        return np.einsum("rp,zp...->zr...", mat, tensor)
    return np.einsum("zrp,zp...->zr...", mat, tensor)


def tensor_opnorm(tensor: np.ndarray) -> np.ndarray:
    """Per-point operator norm (exact for m <= 1, Frobenius bound for m >= 2)."""
    n = tensor.shape[0]
    m = tensor.ndim - 2
    if tensor.size == 0:
        return np.zeros(n)
    if m == 0:
        return np.linalg.norm(tensor, axis=1)
    if m == 1:
        if tensor.shape[1] == 1 or tensor.shape[2] == 1:
            return np.linalg.norm(tensor.reshape(n, -1), axis=1)
        return np.linalg.norm(tensor, ord=2, axis=(1, 2))
    flat = tensor.reshape(n, tensor.shape[1], -1)
    if tensor.shape[2] == 1:
        return np.linalg.norm(flat, axis=(1, 2))
    return np.sqrt((flat**2).sum(axis=(1, 2)))
