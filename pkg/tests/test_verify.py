import pytest

from gradweld.verify import run_verification


def test_small_verification_passes():
    results = run_verification(trials=40, dims=(2, 8), seed=0, adversarial=12)
    assert all(r.passed for r in results), [
        (r.name, r.max_residual) for r in results if not r.passed
    ]
    names = {r.name for r in results}
    assert names == {
        "oracle-agreement",
        "oracle-kkt",
        "orthogonality",
        "duals",
        "sign-property",
        "homogeneity",
    }


def test_residuals_are_tiny():
    results = run_verification(trials=40, dims=(2, 8), seed=1, adversarial=12)
    by_name = {r.name: r for r in results}
    assert by_name["oracle-agreement"].max_residual <= 1e-10
    assert by_name["oracle-kkt"].max_residual <= 1e-12
    assert by_name["homogeneity"].max_residual == 0.0


def test_violated_pairs_present():
    results = run_verification(trials=40, dims=(2,), seed=2, adversarial=6)
    by_name = {r.name: r for r in results}
    assert by_name["orthogonality"].pairs > 0
    assert by_name["duals"].pairs > 0


def test_injected_bug_is_caught():
    results = run_verification(trials=10, dims=(2, 8), seed=0, adversarial=4, inject_bug=True)
    assert any(not r.passed for r in results)


def test_trials_validation():
    with pytest.raises(ValueError):
        run_verification(trials=0)
    with pytest.raises(ValueError):
        run_verification(trials=10, dims=())
