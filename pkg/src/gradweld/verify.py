"""Randomized verification of the projection algebra against the QP oracle.

Five suites run over seeded random gradient pairs (standard-normal entries,
several dimensions) plus adversarial near-parallel, near-antiparallel, and
exactly-antiparallel pairs:

* oracle agreement -- closed forms vs the numerical QP oracle, both rules
* orthogonality    -- projected gradients are orthogonal to the opposing
                      raw gradient on every violated pair
* duals            -- dual variables match an independent recomputation and
                      are strictly positive on violation
* sign property    -- the averaged update never points against either raw
                      gradient, boundary (dot exactly 0) cases included
* homogeneity      -- scaling both gradients by c > 0 scales the update by
                      c and leaves the violation flag and angles unchanged

Each suite reports its maximum residual; ``run_verification`` never raises
on a failed bound (callers inspect the results), only on oracle breakdown.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .projection import agem_update, cfa_project_pair, cfa_update
from .qp import ConstraintSet, qp_oracle
from .rng import STREAM_VERIFY, Xoshiro256StarStar, derive_seed

ORACLE_TOLERANCE = 1e-6
KKT_TOLERANCE = 1e-9
ORTHOGONALITY_TOLERANCE = 1e-9
DUAL_TOLERANCE = 1e-12
HOMOGENEITY_TOLERANCE = 1e-12
DEFAULT_DIMS = (2, 8, 64, 512)
DEFAULT_ADVERSARIAL = 50


@dataclass(frozen=True)
class SuiteResult:
    name: str
    max_residual: float
    bound: float
    passed: bool
    pairs: int


def _random_pairs(trials: int, dims, seed: int, adversarial: int):
    """Seeded gradient pairs: `trials` random per dimension plus adversarial."""
    pairs = []
    for dim in dims:
        rng = Xoshiro256StarStar(derive_seed(seed, STREAM_VERIFY, dim))
        for _ in range(trials):
            g_n = np.array(rng.normals(dim))
            g_b = np.array(rng.normals(dim))
            pairs.append((g_n, g_b))
    adv_rng = Xoshiro256StarStar(derive_seed(seed, STREAM_VERIFY, 0))
    for i in range(adversarial):
        dim = dims[i % len(dims)]
        g_n = np.array(adv_rng.normals(dim))
        jitter = 1e-6 * np.array(adv_rng.normals(dim))
        scale = 0.5 + adv_rng.next_double()
        if i % 3 == 2:
            g_b = -scale * g_n  # exactly antiparallel
        elif i % 3 == 1:
            g_b = scale * g_n + jitter  # near parallel
        else:
            g_b = -scale * g_n + jitter  # near antiparallel
        pairs.append((g_n, g_b))
    return pairs


def _closed_form_pair(g_n, g_b, flip_sign: bool):
    """Closed-form (z_n, z_b) for the two-constraint problem, both branches."""
    if float(g_n @ g_b) < 0.0:
        z_n, z_b, _, _ = cfa_project_pair(g_n, g_b)
    else:
        z_n, z_b = g_n.copy(), g_b.copy()
    if flip_sign:
        z_n = -z_n
    return z_n, z_b


def run_verification(
    trials: int,
    dims=DEFAULT_DIMS,
    seed: int = 0,
    adversarial: int = DEFAULT_ADVERSARIAL,
    inject_bug: bool = False,
) -> list[SuiteResult]:
    """Run all suites; ``inject_bug`` flips a closed-form sign (test hook)."""
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    dims = tuple(int(d) for d in dims)
    if not dims or any(d < 1 for d in dims):
        raise ValueError(f"dims must be positive integers, got {dims}")
    pairs = _random_pairs(trials, dims, seed, adversarial)

    oracle_max = 0.0
    kkt_max = 0.0
    ortho_max = 0.0
    dual_max = 0.0
    sign_max = 0.0
    homo_max = 0.0
    dual_positive = True
    violated_pairs = 0

    boundary_pairs = []
    for dim in dims:
        g_n = np.zeros(dim)
        g_b = np.zeros(dim)
        g_n[0] = 1.5
        g_b[-1] = 2.5 if dim > 1 else 0.0  # dot exactly 0 (zero g_b for dim 1)
        boundary_pairs.append((g_n, g_b))

    for g_n, g_b in pairs:
        norm_scale = 1.0 + float(np.linalg.norm(g_n) + np.linalg.norm(g_b))

        sol_two = qp_oracle(g_n, g_b, ConstraintSet.CFA_TWO)
        sol_one = qp_oracle(g_n, g_b, ConstraintSet.AGEM_ONE)
        kkt_max = max(kkt_max, sol_two.kkt_residual, sol_one.kkt_residual)

        z_n, z_b = _closed_form_pair(g_n, g_b, flip_sign=inject_bug)
        agem = agem_update(g_n, g_b)
        agem_upd = -agem.update if inject_bug else agem.update
        oracle_max = max(
            oracle_max,
            float(np.linalg.norm(z_n - sol_two.z_n)) / norm_scale,
            float(np.linalg.norm(z_b - sol_two.z_b)) / norm_scale,
            float(np.linalg.norm(agem_upd - sol_one.z_n)) / norm_scale,
        )

        cfa = cfa_update(g_n, g_b)
        update = -cfa.update if inject_bug else cfa.update
        eps = 1e-9 * float(
            np.linalg.norm(update) * max(np.linalg.norm(g_n), np.linalg.norm(g_b))
        )
        sign_max = max(
            sign_max,
            max(0.0, -(float(update @ g_b)) - eps),
            max(0.0, -(float(update @ g_n)) - eps),
        )

        if cfa.violated:
            violated_pairs += 1
            proj_n, proj_b, alpha1, alpha2 = cfa_project_pair(g_n, g_b)
            if inject_bug:
                proj_n = -proj_n
            cross = 1e-300 + float(np.linalg.norm(g_n) * np.linalg.norm(g_b))
            ortho_max = max(
                ortho_max,
                abs(float(proj_n @ g_b)) / cross,
                abs(float(proj_b @ g_n)) / cross,
            )
            # independent recomputation of the dual solutions
            dot = float(g_n @ g_b)
            expect_a1 = -dot / float(g_b @ g_b)
            expect_a2 = -dot / float(g_n @ g_n)
            dual_max = max(
                dual_max,
                abs(alpha1 - expect_a1) / abs(expect_a1),
                abs(alpha2 - expect_a2) / abs(expect_a2),
            )
            dual_positive = dual_positive and alpha1 > 0 and alpha2 > 0

        # positive homogeneity under an exact power-of-two scale
        scaled = cfa_update(2.0 * g_n, 2.0 * g_b)
        scaled_update = -scaled.update if inject_bug else scaled.update
        homo_max = max(
            homo_max,
            float(np.linalg.norm(scaled_update - 2.0 * update)) / norm_scale,
            0.0 if scaled.violated == cfa.violated else 1.0,
            abs(scaled.angle_to_novel_deg - cfa.angle_to_novel_deg),
            abs(scaled.angle_to_base_deg - cfa.angle_to_base_deg),
        )

    for g_n, g_b in boundary_pairs:
        cfa = cfa_update(g_n, g_b)
        update = -cfa.update if inject_bug else cfa.update
        sign_max = max(
            sign_max,
            max(0.0, -(float(update @ g_b))),
            max(0.0, -(float(update @ g_n))),
        )
        if cfa.violated:
            sign_max = max(sign_max, 1.0)  # boundary dot = 0 must not violate

    return [
        SuiteResult("oracle-agreement", oracle_max, ORACLE_TOLERANCE, oracle_max <= ORACLE_TOLERANCE, len(pairs)),
        SuiteResult("oracle-kkt", kkt_max, KKT_TOLERANCE, kkt_max <= KKT_TOLERANCE, len(pairs)),
        SuiteResult("orthogonality", ortho_max, ORTHOGONALITY_TOLERANCE, ortho_max <= ORTHOGONALITY_TOLERANCE, violated_pairs),
        SuiteResult(
            "duals",
            dual_max if dual_positive else max(dual_max, 1.0),
            DUAL_TOLERANCE,
            dual_positive and dual_max <= DUAL_TOLERANCE,
            violated_pairs,
        ),
        SuiteResult("sign-property", sign_max, 0.0, sign_max <= 0.0, len(pairs) + len(boundary_pairs)),
        SuiteResult("homogeneity", homo_max, HOMOGENEITY_TOLERANCE, homo_max <= HOMOGENEITY_TOLERANCE, len(pairs)),
    ]
