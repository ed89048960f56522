"""Independent reference computations used to freeze expected values in the tests."""

from __future__ import annotations

import sympy as sp


def map_a_series(mu, degree: int = 6) -> tuple[list, list]:
    """Coefficients of ``k_s`` and ``r`` for ``F(x, y) = (x + mu x y, y/2 + mu x^2)`` with ``k_c = 0``.

    The conjugacy ``F(x, k(x)) = (R(x), k(R(x)))`` gives ``R(x) = x + mu x k(x)``
    from the first row and ``k(x)/2 + mu x^2 = k(R(x))`` from the second;
    matching powers of ``x`` symbolically gives the coefficients.
    Returns ``(b, c)`` with ``k = sum b[d] x^d`` and ``r = sum c[d] x^d``.
    """
    x = sp.Symbol("x")
    b = sp.symbols(f"b0:{degree + 1}")
    k = sum(b[d] * x**d for d in range(2, degree + 1))
    R = x + mu * x * k
    eq = sp.expand(k / 2 + mu * x**2 - k.subs(x, R))
    sol = {}
    for d in range(2, degree + 1):
        coeff = eq.coeff(x, d).subs(sol)
        sol[b[d]] = sp.solve(coeff, b[d])[0]
    bs = [0, 0] + [sp.nsimplify(sol[b[d]]) for d in range(2, degree + 1)]
    r = sp.expand((mu * x * k).subs(sol))
    cs = [r.coeff(x, d) for d in range(degree + 1)]
    return bs, cs


def map_b_series(mu) -> tuple[list, list]:
    """``F(x, y) = (x, 2y + mu x^2)``: the graph ``y = -mu x^2`` is invariant with ``R = Id``."""
    x = sp.Symbol("x")
    k = -mu * x**2
    assert sp.expand(2 * k + mu * x**2 - k) == 0
    return [0, 0, -mu], [0, 0, 0]


if __name__ == "__main__":
    mu = sp.Rational(1, 20)
    b, c = map_a_series(mu)
    print("k_s", b, [float(v) for v in b])
    print("r", c, [float(v) for v in c])
    m = sp.Symbol("mu")
    print(map_a_series(m, 4))
