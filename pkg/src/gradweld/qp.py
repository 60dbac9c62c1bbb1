"""Numerical oracle for the two gradient-projection quadratic programs.

Solves, without using any closed-form update rule from ``projection``:

    minimize    0.5 ||g_n - z_n||^2 + 0.5 ||g_b - z_b||^2
    subject to  z_n . g_b >= 0            (always)
                z_b . g_n >= 0            (two-constraint variant only)

The problem separates into two independent halfspace projections whose
optima lie on the lines ``z_n = g_n + t * g_b`` and ``z_b = g_b + t * g_n``.
Each line coefficient is found by projected gradient descent, then certified
twice: a dense grid refinement around the candidate must not find a better
feasible objective (evaluated with full vector arithmetic), and the KKT
residual of the candidate must be below tolerance. Any failure raises --
the oracle is a test tool and never returns silently wrong answers.

This module intentionally does not import the closed-form rules; it is the
independent half of the dual-route check.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import DataError, OracleError

MAX_DIMENSION = 4096
_MAX_ITER = 200
_GRID_POINTS = 241
_GRID_LEVELS = 3


class ConstraintSet(str, Enum):
    AGEM_ONE = "agem_one"
    CFA_TWO = "cfa_two"


@dataclass(frozen=True, eq=False)
class QpSolution:
    """Certified solution of one projection QP.

    For the one-constraint variant, ``z_b`` is the unconstrained ``g_b``
    (it contributes zero to the objective) and ``alpha2`` is 0.
    """

    z_n: np.ndarray
    z_b: np.ndarray
    alpha1: float
    alpha2: float
    objective: float
    kkt_residual: float


def _validated(vec, name: str) -> np.ndarray:
    arr = np.asarray(vec, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError(f"{name} must be a non-empty 1-D vector")
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name} contains non-finite entries")
    return arr


def _line_objective(v: np.ndarray, w: np.ndarray, ts: np.ndarray) -> np.ndarray:
    """0.5 ||v - (v + t w)||^2 for each t, via explicit vector arithmetic."""
    z = v[None, :] + ts[:, None] * w[None, :]
    diff = v[None, :] - z
    return 0.5 * np.einsum("ij,ij->i", diff, diff)


def _descend_coefficient(v: np.ndarray, w: np.ndarray) -> float:
    """Minimize 0.5||v - (v + t w)||^2 s.t. (v + t w).w >= 0 over t.

    Projected gradient descent with exact step; raises on non-convergence.
    """
    ww = float(w @ w)
    if ww == 0.0:
        return 0.0  # constraint is 0 >= 0, unconstrained optimum stays
    vw = float(v @ w)
    step = 1.0 / ww
    t = 0.0 if vw >= 0.0 else (-2.0 * vw) / ww  # any feasible start
    for _ in range(_MAX_ITER):
        t_next = t - step * (t * ww)  # gradient of 0.5 t^2 ww, exact step size
        slack = vw + t_next * ww
        if slack < 0.0:
            t_next += -slack / ww  # project back onto the feasible halfline
        if abs(t_next - t) <= 1e-15 * (1.0 + abs(t)):
            return t_next
        t = t_next
    raise OracleError("projected gradient descent did not converge")


def _grid_certify(v: np.ndarray, w: np.ndarray, t_star: float, scale: float) -> None:
    """Dense grid refinement: no feasible t may beat the candidate."""
    vw = float(v @ w)
    ww = float(w @ w)
    f_star = float(_line_objective(v, w, np.array([t_star]))[0])
    radius = max(1.0, abs(t_star))
    for _ in range(_GRID_LEVELS):
        ts = np.linspace(t_star - radius, t_star + radius, _GRID_POINTS)
        feasible = vw + ts * ww >= -1e-12 * scale
        if not feasible.any():
            radius *= 0.1
            continue
        ts = ts[feasible]
        values = _line_objective(v, w, ts)
        best = float(values.min())
        if best < f_star - 1e-9 * (1.0 + scale):
            raise OracleError(
                f"grid refinement found a better feasible point ({best} < {f_star})"
            )
        radius *= 0.1


def _kkt_residual(v: np.ndarray, w: np.ndarray, z: np.ndarray, constrained: bool) -> tuple[float, float]:
    """Max normalized KKT violation for one halfspace projection, plus dual.

    Stationarity: z - v - alpha * w = 0, alpha recovered by least squares.
    """
    norm_v = float(np.linalg.norm(v))
    norm_w = float(np.linalg.norm(w))
    norm_z = float(np.linalg.norm(z))
    if not constrained or norm_w == 0.0:
        alpha = 0.0
        stationarity = float(np.linalg.norm(z - v)) / (1.0 + norm_v)
        return stationarity, alpha
    ww = float(w @ w)
    alpha = float((z - v) @ w) / ww
    stationarity = float(np.linalg.norm(z - v - alpha * w)) / (1.0 + norm_v + norm_w)
    slack = float(z @ w)
    primal = max(0.0, -slack) / (1.0 + norm_z * norm_w)
    dual = max(0.0, -alpha) / (1.0 + abs(alpha))
    complementarity = abs(alpha * slack) / (1.0 + abs(alpha) * norm_z * norm_w)
    return max(stationarity, primal, dual, complementarity), alpha


def qp_oracle(g_n, g_b, constraints: ConstraintSet = ConstraintSet.CFA_TWO) -> QpSolution:
    """Solve one projection QP numerically and certify the answer."""
    g_n = _validated(g_n, "g_n")
    g_b = _validated(g_b, "g_b")
    if g_n.shape != g_b.shape:
        raise ValueError(f"dimension mismatch: {g_n.shape[0]} vs {g_b.shape[0]}")
    if g_n.size > MAX_DIMENSION:
        raise ValueError(f"oracle supports dimension <= {MAX_DIMENSION}, got {g_n.size}")
    constraints = ConstraintSet(constraints)

    scale = float(np.linalg.norm(g_n) + np.linalg.norm(g_b))

    t_n = _descend_coefficient(g_n, g_b)
    z_n = g_n + t_n * g_b
    _grid_certify(g_n, g_b, t_n, scale)
    res_n, alpha1 = _kkt_residual(g_n, g_b, z_n, constrained=True)

    if constraints is ConstraintSet.CFA_TWO:
        t_b = _descend_coefficient(g_b, g_n)
        z_b = g_b + t_b * g_n
        _grid_certify(g_b, g_n, t_b, scale)
        res_b, alpha2 = _kkt_residual(g_b, g_n, z_b, constrained=True)
    else:
        z_b = g_b.copy()
        res_b, alpha2 = _kkt_residual(g_b, g_n, z_b, constrained=False)

    kkt = max(res_n, res_b)
    if kkt > 1e-9:
        raise OracleError(f"KKT residual {kkt} above tolerance 1e-9")

    objective = 0.5 * float(np.sum((g_n - z_n) ** 2)) + 0.5 * float(np.sum((g_b - z_b) ** 2))
    return QpSolution(
        z_n=z_n, z_b=z_b, alpha1=alpha1, alpha2=alpha2,
        objective=objective, kkt_residual=kkt,
    )
