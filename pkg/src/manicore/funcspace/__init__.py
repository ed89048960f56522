"""Function-space substrate: Taylor tables, grids, norms, composition, inversion."""

from __future__ import annotations

from .grid import GridRep, fd_apply, fd_weights
from .inversion import invert_center_map, inverse_derivative_tensor, inverse_jet
from .maps import SmoothMapRep, fit_taylor
from .ops import (
    NormEstimate,
    ball_samples,
    cn_norm,
    compose,
    faa_di_bruno,
    jet_of_composition,
    partition_remainder,
    sup_derivative,
)
from .poly import TaylorRep, multi_indices
from .tensors import SymmetricTensor, fdb_from_jets, left_apply, pullback, set_partitions, tensor_opnorm

__all__ = [
    "GridRep",
    "NormEstimate",
    "SmoothMapRep",
    "SymmetricTensor",
    "TaylorRep",
    "ball_samples",
    "cn_norm",
    "compose",
    "faa_di_bruno",
    "fd_apply",
    "fd_weights",
    "fdb_from_jets",
    "fit_taylor",
    "inverse_derivative_tensor",
    "inverse_jet",
    "invert_center_map",
    "jet_of_composition",
    "left_apply",
    "multi_indices",
    "partition_remainder",
    "pullback",
    "set_partitions",
    "sup_derivative",
    "tensor_opnorm",
]
