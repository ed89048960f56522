"""Scalar constant ledger: derived Lipschitz constants, contraction factors, delta(eps).

Every quantity is a closed-form expression in the operator norms of the
linear blocks, ``L_g``, ``L_c``, ``eps`` and ``n``.  Infeasibility is a value:
the ledger always fills every computable field and lists the violated
inequalities; :meth:`ConstantsLedger.require_feasible` turns that into an
exception for callers that need a feasible ledger.
"""

from __future__ import annotations

import json
import math
from collections.abc import Callable, Mapping
from dataclasses import dataclass, field

import numpy as np

from .errors import InfeasibleConstants, NoThreshold

__all__ = [
    "ConstantsLedger",
    "derive_ledger",
    "epsilon_threshold",
    "ledger_for_problem",
    "ledger_family",
    "FORMULAS",
]

_NORM_KEYS = ("A_c", "A_c_inv", "A_u", "A_u_inv", "A_s", "A")

FORMULAS = {
    "L_r": "(L_g + L_c(2|A_c| + L_g)) / (1 - L_c)",
    "L_t": "|A_c^-1|^2 L_r / (1 - |A_c^-1| L_r)",
    "L_u": "|A_u^-1|(1 + L_c)L_g / (1 - L_r|A_u^-1| - |A_c||A_u^-1|)",
    "L_s": "|A_c^-1|(1 + L_c)L_g / (1 - L_r|A_c^-1| - |A_s||A_c^-1|)",
    "L_m1": "|A_c^-1| + L_t",
    "theta_k1": "L_g + L_c",
    "theta_k2": "|A_u^-1|((|A_c| + L_r)^k + L_g + L_u)",
    "theta_k3": "L_m1^k(|A_s|(1 + L_m1 L_s) + L_g(1 + L_m1(1 + L_c)))",
    "C_1": "(|A_c| + (1 + L_c)^2 + L_g + (|A_c| + L_r)^2) eps",
    "C_2": "|A_u^-1|((1 + L_c)^2 + L_g) eps",
    "C_3": "L_m1^2((1 + L_c)^2 + L_g) eps",
    "delta": "max_i C_i / (1 - theta_2i)",
    "gamma": "max(eps, delta)",
    "theta0": "max_i theta_0i",
    "theta1_eps": "max_i theta_1i + max_i C_1i(eps)",
    "lambda1": "max(theta0, theta1_eps)",
    "theta2_eps": "max_i theta_2i + max_i C_2i(eps)",
    "lambda2": "max(max_i theta_1i, theta2_eps)",
    "theta_mt_eps": "max_i theta_mt,i + max_i C_mt,i(eps), mt = m + 1",
    "lambda_mt": "max(max_i theta_m,i, theta_mt_eps)",
}


def _div(num: float, den: float) -> float:
    """``num / den`` with a nonpositive denominator mapped to infinity."""
    if den <= 0:
        return math.inf
    return num / den


def _norms_dict(norms) -> dict[str, float]:
    if isinstance(norms, Mapping):
        src = dict(norms)
    else:
        src = {k: getattr(norms, k) for k in _NORM_KEYS if hasattr(norms, k)}
    out = {k: float(src.get(k, 0.0)) for k in _NORM_KEYS}
    if "A" not in src:
        out["A"] = max(out["A_c"], out["A_u"], out["A_s"])
    return out


@dataclass(frozen=True)
class ConstantsLedger:
    """All scalar constants for one choice of ``(norms, L_g, L_c, eps, n)``.

    ``theta[k, i]`` holds the contraction constant for ``n~ = k`` and
    component ``i + 1``; the table runs through ``n~ = n + 2`` because the
    higher-derivative stages reference one or two orders past ``n``.
    """

    norms: dict
    L_g: float
    L_c: float
    eps: float
    n: int
    L_r: float
    L_t: float
    L_u: float
    L_s: float
    L_m1: float
    theta: np.ndarray
    C: tuple[float, float, float]
    delta: float
    gamma: float
    violations: tuple[str, ...] = field(default=())

    # ------------------------------------------------------------- feasibility
    @property
    def feasible(self) -> bool:
        return not self.violations

    @property
    def infeasibility(self) -> InfeasibleConstants | None:
        """The first violated inequality as an exception value, or ``None``."""
        return InfeasibleConstants(self.violations[0]) if self.violations else None

    def require_feasible(self) -> ConstantsLedger:
        if self.violations:
            raise InfeasibleConstants(self.violations[0])
        return self

    # ---------------------------------------------------------- stage helpers
    def theta_max(self, k: int) -> float:
        """``theta_k = max_i theta_{k,i}``."""
        return float(self.theta[k].max())

    @property
    def theta0(self) -> float:
        return self.theta_max(0)

    def stage_terms(self, stage: int) -> tuple[float, float, float]:
        """``C_{k,i}(eps)`` for stage ``k`` (1: C^1 step, 2: first derivative, k >= 3: ``m~ = k``)."""
        nm = self.norms
        a_c, a_u_inv = nm["A_c"], nm["A_u_inv"]
        Lc, Lr, Lm1, eps = self.L_c, self.L_r, self.L_m1, self.eps
        delta, gamma = self.delta, self.gamma
        c1 = (1 + Lc + a_c + Lr) * eps
        if stage == 1:
            c2 = a_u_inv * ((1 + Lc) * eps + (a_c + Lr) * delta)
            c3 = self.theta[2, 2] * gamma + Lm1 * (1 + Lc) * eps + Lm1**2 * (1 + Lc) ** 2 * eps
        elif stage == 2:
            c2 = a_u_inv * ((2 + Lc) * eps + (a_c + Lr) * delta)
            c3 = 2 * self.theta[3, 2] * gamma + Lm1**2 * (1 + Lc) * eps + Lm1**3 * (1 + Lc) ** 2 * eps
        else:
            mt = stage
            m = mt - 1
            self._need_order(mt + 1)
            c2 = a_u_inv * ((1 + Lc) * eps + (a_c + Lr + m * (a_c + Lr) ** (m - 1)) * delta)
            c3 = mt * self.theta[mt + 1, 2] * gamma + Lm1**mt * (1 + Lc) * eps + Lm1 ** (mt + 1) * (1 + Lc) ** 2 * eps
        return float(c1), float(c2), float(c3)

    def _need_order(self, k: int) -> None:
        if k >= self.theta.shape[0]:
            raise ValueError(f"theta table stops at order {self.theta.shape[0] - 1}; need {k}")

    def theta_stage(self, stage: int) -> float:
        """``theta_k(eps) = max_i theta_{k,i} + max_i C_{k,i}(eps)``."""
        self._need_order(stage)
        return self.theta_max(stage) + max(self.stage_terms(stage))

    def lambda_stage(self, stage: int) -> float:
        """Contraction factor of the stage: ``max(theta_{k-1}, theta_k(eps))``."""
        return max(self.theta_max(stage - 1), self.theta_stage(stage))

    @property
    def theta1_eps(self) -> float:
        return self.theta_stage(1)

    @property
    def lambda1(self) -> float:
        return self.lambda_stage(1)

    @property
    def theta2_eps(self) -> float:
        return self.theta_stage(2)

    @property
    def lambda2(self) -> float:
        return self.lambda_stage(2)

    def delta_identity_gaps(self) -> tuple[float, float, float]:
        """``delta - (theta_{2,i} delta + C_i)``; all nonnegative when the ledger closes."""
        return tuple(float(self.delta - (self.theta[2, i] * self.delta + self.C[i])) for i in range(3))

    # ----------------------------------------------------------------- export
    def as_dict(self) -> dict[str, float]:
        """Flat key-value view (infinite values kept as ``inf``)."""
        out: dict[str, float] = {f"norm_{k}": v for k, v in self.norms.items()}
        out.update(L_g=self.L_g, L_c=self.L_c, eps=self.eps, n=self.n)
        out.update(L_r=self.L_r, L_t=self.L_t, L_u=self.L_u, L_s=self.L_s, L_m1=self.L_m1)
        for k in range(self.theta.shape[0]):
            for i in range(3):
                out[f"theta_{k}_{i + 1}"] = float(self.theta[k, i])
        out.update(C_1=self.C[0], C_2=self.C[1], C_3=self.C[2], delta=self.delta, gamma=self.gamma)
        out["theta0"] = self.theta0
        for name, fn in (("theta1_eps", lambda: self.theta1_eps), ("lambda1", lambda: self.lambda1),
                         ("theta2_eps", lambda: self.theta2_eps), ("lambda2", lambda: self.lambda2)):
            out[name] = float(fn())
        for mt in range(3, self.n + 1):
            out[f"theta_mt{mt}_eps"] = self.theta_stage(mt)
            out[f"lambda_mt{mt}"] = self.lambda_stage(mt)
        out["feasible"] = float(self.feasible)
        return out

    def to_text(self) -> str:
        lines = []
        for key, val in self.as_dict().items():
            base = key
            if key.startswith("theta_") and key[6:7].isdigit():
                base = f"theta_k{key.rsplit('_', 1)[1]}"
            formula = FORMULAS.get(base, "")
            if key.startswith("theta_mt"):
                formula = FORMULAS["theta_mt_eps"]
            elif key.startswith("lambda_mt"):
                formula = FORMULAS["lambda_mt"]
            lines.append(f"{key} = {val:.12g}" + (f"    # {formula}" if formula else ""))
        if self.violations:
            lines.extend(f"VIOLATED: {v}" for v in self.violations)
        else:
            lines.append("feasible: all inequalities hold")
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        data = {k: (v if math.isfinite(v) else str(v)) for k, v in self.as_dict().items()}
        data["violations"] = list(self.violations)
        return json.dumps(data, indent=2)


def derive_ledger(norms, L_g: float, L_c: float, eps: float, n: int) -> ConstantsLedger:
    """Evaluate every closed-form constant; infeasibility is reported, not raised."""
    vals = (L_g, L_c, eps)
    if any((not math.isfinite(v)) or v < 0 for v in vals):
        raise ValueError("L_g, L_c and eps must be finite and nonnegative")
    if n < 1:
        raise ValueError("n must be at least 1")
    nm = _norms_dict(norms)
    a_c, a_ci, a_ui, a_s = nm["A_c"], nm["A_c_inv"], nm["A_u_inv"], nm["A_s"]
    L_g, L_c, eps = float(L_g), float(L_c), float(eps)

    violations = []
    den_c = 1 - L_c
    if den_c <= 0:
        violations.append("1 - L_c > 0 violated")
    L_r = _div(L_g + L_c * (2 * a_c + L_g), den_c)
    den_t = 1 - a_ci * L_r
    if not den_t > 0:
        violations.append("1 - L_r|A_c^-1| > 0 violated")
    L_t = _div(a_ci**2 * L_r, den_t)
    den_u = 1 - L_r * a_ui - a_c * a_ui
    if not den_u > 0:
        violations.append("1 - L_r|A_u^-1| - |A_c||A_u^-1| > 0 violated")
    L_u = _div(a_ui * (1 + L_c) * L_g, den_u) if a_ui > 0 or den_u <= 0 else 0.0
    den_s = 1 - L_r * a_ci - a_s * a_ci
    if not den_s > 0:
        violations.append("1 - L_r|A_c^-1| - |A_s||A_c^-1| > 0 violated")
    L_s = _div(a_ci * (1 + L_c) * L_g, den_s)
    L_m1 = a_ci + L_t

    top = n + 2
    theta = np.empty((top + 1, 3))
    with np.errstate(invalid="ignore", over="ignore"):
        for k in range(top + 1):
            theta[k, 0] = L_g + L_c
            theta[k, 1] = a_ui * ((a_c + L_r) ** k + L_g + L_u) if a_ui > 0 else 0.0
            theta[k, 2] = L_m1**k * (a_s * (1 + L_m1 * L_s) + L_g * (1 + L_m1 * (1 + L_c)))
    theta = np.nan_to_num(theta, nan=math.inf, posinf=math.inf)
    for k in range(n + 1):
        for i in range(3):
            if not theta[k, i] < 1:
                violations.append(f"theta_{{{k},{i + 1}}} < 1 violated ({theta[k, i]:.6g})")

    C1 = (a_c + (1 + L_c) ** 2 + L_g + (a_c + L_r) ** 2) * eps
    C2 = a_ui * ((1 + L_c) ** 2 + L_g) * eps
    C3 = L_m1**2 * ((1 + L_c) ** 2 + L_g) * eps
    C = (float(C1), float(C2), float(C3))
    parts = []
    for i in range(3):
        if C[i] == 0.0:
            parts.append(0.0)
        else:
            parts.append(_div(C[i], 1 - theta[2, i]))
    delta = float(max(parts))
    gamma = max(eps, delta)
    return ConstantsLedger(
        norms=nm, L_g=L_g, L_c=L_c, eps=eps, n=int(n),
        L_r=float(L_r), L_t=float(L_t), L_u=float(L_u), L_s=float(L_s), L_m1=float(L_m1),
        theta=theta, C=C, delta=delta, gamma=float(gamma), violations=tuple(violations),
    )


def _parse_stage(stage) -> int:
    if isinstance(stage, int):
        return stage
    if isinstance(stage, tuple) and len(stage) == 2 and stage[0] == "Cm":
        return int(stage[1]) + 1
    s = str(stage)
    if s == "C1":
        return 1
    if s == "C2":
        return 2
    if s.startswith("Cm"):
        return int(s[2:].strip("():= ")) + 1
    raise ValueError(f"unknown stage {stage!r}; use 'C1', 'C2' or ('Cm', m)")


def epsilon_threshold(
    ledger_family: Callable[[float], ConstantsLedger],
    stage="C1",
    rel_tol: float = 1e-6,
) -> float:
    """Largest ``eps0`` with the stage contraction factor below 1 on ``[0, eps0)``.

    ``stage`` is ``"C1"`` (the C^1 step), ``"C2"`` (first derivative) or
    ``("Cm", m)`` for ``m >= 2``.  The factor is nondecreasing in ``eps``,
    so bisection on a doubling bracket finds the crossing to ``rel_tol``.
    """
    k = _parse_stage(stage)
    f = lambda e: ledger_family(e).lambda_stage(k)
    base = f(0.0)
    if not base < 1:
        raise NoThreshold(f"stage contraction factor is {base:.6g} >= 1 already at eps = 0")
    hi = 1.0
    while f(hi) < 1:
        hi *= 2
        if hi > 1e12:
            return math.inf
    lo = 0.0
    while hi - lo > rel_tol * hi:
        mid = 0.5 * (lo + hi)
        if f(mid) < 1:
            lo = mid
        else:
            hi = mid
    return lo


def ledger_family(problem) -> Callable[[float], ConstantsLedger]:
    """``eps -> ledger`` with the problem's norms, ``L_g``, ``L_c`` and ``n`` fixed."""
    lip = problem.lipschitz
    norms = problem.linear.op_norms
    return lambda e: derive_ledger(norms, lip["L_g"], lip["L_c"], e, problem.n)


def ledger_for_problem(problem, eps: float | None = None) -> ConstantsLedger:
    """Ledger from the sampled constants of a problem (``eps`` overrides the sampled value)."""
    lip = problem.lipschitz
    return derive_ledger(problem.linear.op_norms, lip["L_g"], lip["L_c"], lip["eps"] if eps is None else eps, problem.n)
