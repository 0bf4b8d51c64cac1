import numpy as np
import pytest

from factor.algebra import generate_synthetic, standardize
from factor.model import CellKind, FactorModel, PatternMatrix, TrueModelSpec
from sampler.priors import ChainConfig

F, Z, A = CellKind.FREE, CellKind.ZERO, CellKind.ANCHOR

LAMBDA1_TEXT = """model lambda1
L[1,1] > |L[1,2]|
L[2,1] > 0
L[2,2] = 0
L[3,1] < -0.3
L[3,2] > 0.3
L[4,1] > |L[4,2]|
L[5,1] > |L[5,2]|
L[6,1] = 0
L[6,2] > 0
"""

LAMBDA2_TEXT = """model lambda2
|L[1,1]| < -L[1,2]
L[2,1] > 0
L[2,2] = 0
|L[3,1]| < L[3,2]
|L[4,1]| < -L[4,2]
L[5,1] > -L[5,2]
L[6,1] = 0
L[6,2] > 0
"""

EXAMPLE_LOADINGS = np.array([[0.6, 0.2], [0.5, 0.0], [-0.5, 0.5], [0.6, 0.1], [0.7, 0.3], [0.0, 0.6]])


def two_factor_kinds() -> np.ndarray:
    return np.array([[F, F], [A, Z], [F, F], [F, F], [F, F], [Z, A]])


@pytest.fixture
def two_factor_pattern() -> PatternMatrix:
    """6 items, 2 factors; zeros at (2,2) and (6,1), anchors at (2,1) and (6,2)."""
    return PatternMatrix(two_factor_kinds())


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


@pytest.fixture
def one_factor_data():
    """Standardized 4-item, 1-factor data."""
    model = FactorModel(np.array([[0.8], [0.7], [0.6], [0.5]]), np.array([0.36, 0.51, 0.64, 0.75]))
    return standardize(generate_synthetic(TrueModelSpec(model, 200, 7)))


@pytest.fixture
def short_chain() -> ChainConfig:
    return ChainConfig(n_iter=600, burn_in=200, n_chains=2, seed=99)


def two_factor_truth() -> FactorModel:
    """A standardized two-factor model satisfying lambda1 but not lambda2."""
    lam = np.array([[0.7, 0.1], [0.7, 0.0], [-0.5, 0.5], [0.7, 0.1], [0.7, 0.2], [0.0, 0.7]])
    return FactorModel(lam, 1.0 - np.sum(lam**2, axis=1))
