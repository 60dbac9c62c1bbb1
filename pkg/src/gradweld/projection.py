"""Closed-form gradient projection rules for replay-constrained finetuning.

Two rules act on a (novel, base) gradient pair. Both test the sign of
``g_n . g_b`` and treat a non-negative dot product as "no conflict":

* A-GEM: on conflict, project the novel gradient onto the halfspace
  ``{z : z . g_b >= 0}`` and apply that alone; otherwise apply ``g_n``.
* CFA: on conflict, project each gradient against the other's halfspace
  constraint and average the two projections; otherwise average the raw pair.

All arithmetic is 64-bit; the projection identities degrade visibly in
32-bit floats.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import DataError

logger = logging.getLogger(__name__)

# Projections whose norm falls below this fraction of the source gradient's
# norm are pure rounding remainders (the true value is the zero vector, the
# antiparallel case) and are snapped to exact zero so the stall flag and the
# sign guarantees are reliable.
_NOISE_FLOOR = 1e-12


class Rule(str, Enum):
    AGEM = "agem"
    CFA = "cfa"


def as_gradient(values, name: str = "gradient") -> np.ndarray:
    """Coerce to a finite 1-D float64 vector."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError(f"{name} must be a non-empty 1-D vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name} contains non-finite entries")
    return arr


def _check_pair(g_n, g_b) -> tuple[np.ndarray, np.ndarray]:
    g_n = as_gradient(g_n, "g_n")
    g_b = as_gradient(g_b, "g_b")
    if g_n.shape != g_b.shape:
        raise ValueError(f"dimension mismatch: {g_n.shape[0]} vs {g_b.shape[0]}")
    return g_n, g_b


def dot_and_angle(u, v) -> tuple[float, float]:
    """Dot product and angle in degrees, in [0, 180].

    The angle against a zero vector is defined as 0 by convention.
    """
    u, v = _check_pair(u, v)
    dot = float(u @ v)
    norm_u = float(np.linalg.norm(u))
    norm_v = float(np.linalg.norm(v))
    if norm_u == 0.0 or norm_v == 0.0:
        logger.debug("zero vector in angle computation; angle defined as 0")
        return dot, 0.0
    cos = min(1.0, max(-1.0, dot / (norm_u * norm_v)))
    return dot, math.degrees(math.acos(cos))


def _snap_noise(projected: np.ndarray, source_norm: float) -> np.ndarray:
    if float(np.linalg.norm(projected)) <= _NOISE_FLOOR * source_norm:
        return np.zeros_like(projected)
    return projected


@dataclass(frozen=True, eq=False)
class ProjectionOutcome:
    """Result of applying a projection rule to one gradient pair."""

    rule: Rule
    violated: bool
    dot_nb: float
    update: np.ndarray
    projected_novel: np.ndarray
    projected_base: np.ndarray | None
    alpha1: float
    alpha2: float
    angle_to_novel_deg: float
    angle_to_base_deg: float

    @property
    def stall(self) -> bool:
        """True when the update is exactly the zero vector."""
        return not self.update.any()


def agem_update(g_n, g_b) -> ProjectionOutcome:
    """A-GEM rule: apply g_n, projected orthogonal to g_b on conflict."""
    g_n, g_b = _check_pair(g_n, g_b)
    dot = float(g_n @ g_b)
    if dot >= 0.0:
        update = g_n.copy()
        proj_n = g_n.copy()
        alpha1 = 0.0
        violated = False
    else:
        bb = float(g_b @ g_b)
        alpha1 = -dot / bb
        proj_n = _snap_noise(g_n - (dot / bb) * g_b, float(np.linalg.norm(g_n)))
        update = proj_n.copy()
        violated = True
    return ProjectionOutcome(
        rule=Rule.AGEM,
        violated=violated,
        dot_nb=dot,
        update=update,
        projected_novel=proj_n,
        projected_base=None,
        alpha1=alpha1,
        alpha2=0.0,
        angle_to_novel_deg=dot_and_angle(update, g_n)[1],
        angle_to_base_deg=dot_and_angle(update, g_b)[1],
    )


def cfa_project_pair(g_n, g_b) -> tuple[np.ndarray, np.ndarray, float, float]:
    """Mutual halfspace projections of a conflicting gradient pair.

    Only defined on the conflict branch (``g_n . g_b < 0``); the caller is
    expected to have tested the sign already. Returns the two projected
    gradients together with the dual variables of the two constraints.
    """
    g_n, g_b = _check_pair(g_n, g_b)
    dot = float(g_n @ g_b)
    if dot >= 0.0:
        raise ValueError(
            f"cfa_project_pair requires conflicting gradients (g_n.g_b < 0), got {dot}"
        )
    nn = float(g_n @ g_n)
    bb = float(g_b @ g_b)
    alpha1 = -dot / bb
    alpha2 = -dot / nn
    proj_n = _snap_noise(g_n - (dot / bb) * g_b, float(np.linalg.norm(g_n)))
    proj_b = _snap_noise(g_b - (dot / nn) * g_n, float(np.linalg.norm(g_b)))
    return proj_n, proj_b, alpha1, alpha2


def cfa_update(g_n, g_b) -> ProjectionOutcome:
    """CFA rule: average of the pair, projection-reweighted on conflict.

    Exactly antiparallel gradients yield the zero update (a stall step);
    the outcome's ``stall`` flag reports it and the trainer logs and
    continues.
    """
    g_n, g_b = _check_pair(g_n, g_b)
    dot = float(g_n @ g_b)
    if dot >= 0.0:
        proj_n = g_n.copy()
        proj_b = g_b.copy()
        alpha1 = alpha2 = 0.0
        violated = False
    else:
        proj_n, proj_b, alpha1, alpha2 = cfa_project_pair(g_n, g_b)
        violated = True
    update = 0.5 * (proj_n + proj_b)
    return ProjectionOutcome(
        rule=Rule.CFA,
        violated=violated,
        dot_nb=dot,
        update=update,
        projected_novel=proj_n,
        projected_base=proj_b,
        alpha1=alpha1,
        alpha2=alpha2,
        angle_to_novel_deg=dot_and_angle(update, g_n)[1],
        angle_to_base_deg=dot_and_angle(update, g_b)[1],
    )
