import numpy as np
import pytest

from conftest import EXAMPLE_LOADINGS
from factor.errors import UsageError
from factor.model import CellKind, PatternMatrix
from identification.rotation_search import find_preserving_rotation
from identification.ucfm import check_ucfm, ledermann_check, structural_rank

F, Z, A = CellKind.FREE, CellKind.ZERO, CellKind.ANCHOR


def admitted_loadings(pattern: PatternMatrix, rng) -> np.ndarray:
    lam = pattern.fill(rng.uniform(0.3, 0.8, size=pattern.shape) * rng.choice([-1.0, 1.0], size=pattern.shape))
    lam[pattern.anchor_mask] = np.abs(lam[pattern.anchor_mask])
    return lam


def test_structural_rank():
    assert structural_rank(np.eye(3, dtype=bool)) == 3
    assert structural_rank(np.array([[True, True], [False, False]])) == 1
    assert structural_rank(np.array([[True, False], [True, False], [False, True]])) == 2
    assert structural_rank(np.zeros((0, 2), dtype=bool)) == 0


def test_two_factor_pattern_is_identified(two_factor_pattern):
    report = check_ucfm(two_factor_pattern)
    assert report.overall
    assert [c.name for c in report.conditions] == ["C1", "C2", "C3", "C4"]
    assert not report.ledermann.exceeded
    assert report.ledermann.free_parameters == 17 and report.ledermann.moments == 21
    result = find_preserving_rotation(two_factor_pattern, EXAMPLE_LOADINGS, np.array([[1.0, 0.3], [0.3, 1.0]]))
    assert not result.found


def test_exploratory_pattern_fails_zero_conditions():
    report = check_ucfm(PatternMatrix.efa(5, 2))
    assert not report.overall
    assert report.failed == ["C2", "C3"]
    assert report.condition("C2").columns == [1, 2]


def test_shared_zero_rows_fail_and_admit_a_rotation(rng):
    pattern = PatternMatrix(np.array([[Z, Z], [A, F], [F, A], [F, F]]))
    report = check_ucfm(pattern)
    c3 = report.condition("C3")
    assert not c3.passed
    assert c3.columns == [1, 2]
    assert c3.rows == [1]
    assert any("share the same zero rows" in d for d in c3.details)
    result = find_preserving_rotation(pattern, admitted_loadings(pattern, rng), seed=3)
    assert result.found
    assert pattern.admits(np.where(pattern.fixed_mask, pattern.values, result.loadings))
    np.testing.assert_allclose(np.diag(result.phi), 1.0, atol=1e-6)


def test_missing_anchor_fails_c4_and_leaves_a_sign_flip(rng):
    pattern = PatternMatrix(np.array([[A, Z], [F, F], [Z, F], [F, F]]))
    report = check_ucfm(pattern)
    assert report.failed == ["C4"]
    assert report.condition("C4").columns == [2]
    assert find_preserving_rotation(pattern, admitted_loadings(pattern, rng)).found


def test_two_anchors_in_a_column_fail_c4():
    pattern = PatternMatrix(np.array([[A, Z], [A, A], [Z, F], [F, F]]))
    c4 = check_ucfm(pattern).condition("C4")
    assert c4.columns == [1]
    assert c4.rows == [1, 2]


def test_passing_patterns_admit_no_rotation(rng):
    found = 0
    while found < 5:
        p = int(rng.integers(4, 7))
        kinds = rng.choice([F, F, Z], size=(p, 2))
        rows = rng.choice(p, size=2, replace=False)
        kinds[rows[0], 0] = A
        kinds[rows[1], 1] = A
        pattern = PatternMatrix(kinds)
        if not check_ucfm(pattern).overall:
            continue
        found += 1
        result = find_preserving_rotation(pattern, admitted_loadings(pattern, rng), n_starts=10, seed=found)
        assert not result.found


@pytest.mark.slow
def test_conditions_agree_with_rotation_search(rng):
    outcomes = []
    for trial in range(100):
        p = int(rng.integers(4, 7))
        kinds = rng.choice([F, F, Z], size=(p, 2))
        rows = rng.choice(p, size=2, replace=False)
        kinds[rows[0], 0] = A
        kinds[rows[1], 1] = A
        pattern = PatternMatrix(kinds)
        identified = check_ucfm(pattern).overall
        result = find_preserving_rotation(pattern, admitted_loadings(pattern, rng), n_starts=20, seed=trial)
        assert identified == (not result.found), kinds.tolist()
        outcomes.append(identified)
    assert any(outcomes) and not all(outcomes)


def test_ledermann_bound_exceeded(caplog):
    pattern = PatternMatrix.efa(3, 2)
    assert ledermann_check(pattern).exceeded
    report = check_ucfm(pattern)
    assert report.warnings
    assert "Ledermann" in caplog.text


def test_expected_factor_count():
    with pytest.raises(UsageError):
        check_ucfm(PatternMatrix.efa(4, 2), m=3)


def test_rotation_search_without_factors():
    result = find_preserving_rotation(PatternMatrix.all_free(3, 0), np.zeros((3, 0)))
    assert not result.found
    assert result.n_starts == 0
