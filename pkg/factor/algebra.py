##################
## Implied covariance, likelihood, standardization and synthetic data
## for the normal linear factor model.
##################

import logging
from typing import Tuple, Union

import numpy as np
from scipy import linalg

from factor.errors import NumericalError, UsageError
from factor.model import Dataset, FactorModel, TrueModelSpec

LOG_2PI = float(np.log(2.0 * np.pi))


def implied_covariance(model: FactorModel) -> np.ndarray:
    """Lambda Phi Lambda' + Psi, symmetrized."""
    lam = model.loadings
    sigma = lam @ model.factor_correlations @ lam.T + np.diag(model.unique_variances)
    return 0.5 * (sigma + sigma.T)


def log_likelihood(data: Dataset, model: FactorModel) -> float:
    """
    Zero-mean multivariate normal log likelihood of the data under the
    covariance implied by `model` (factor scores integrated out).
    """
    if data.p != model.p:
        raise UsageError(f"data has {data.p} items but the model has {model.p}")
    if data.n == 0:
        return 0.0
    sigma = implied_covariance(model)
    try:
        chol = linalg.cholesky(sigma, lower=True)
    except linalg.LinAlgError:
        raise NumericalError("covariance not PD")
    diag = np.diag(chol)
    if not np.all(diag > 0) or not np.all(np.isfinite(diag)):
        raise NumericalError("covariance not PD")
    whitened = linalg.solve_triangular(chol, data.values.T, lower=True)
    log_det = 2.0 * np.sum(np.log(diag))
    return float(-0.5 * (data.n * (data.p * LOG_2PI + log_det) + np.sum(whitened**2)))


def standardize(data: Dataset) -> Dataset:
    """Center each column and scale it to unit sample variance (divisor n - 1)."""
    if data.n < 2:
        raise UsageError("standardization needs at least two observations")
    values = data.values
    means = values.mean(axis=0)
    centered = values - means
    sd = np.sqrt(np.sum(centered**2, axis=0) / (data.n - 1))
    constant = [name for name, s in zip(data.item_names, sd) if not s > 0]
    if constant:
        raise UsageError(f"cannot standardize constant item(s): {', '.join(constant)}")
    scaled = centered / sd
    # second pass removes the rounding residue of the first
    scaled = scaled - scaled.mean(axis=0)
    scaled = scaled / np.sqrt(np.sum(scaled**2, axis=0) / (data.n - 1))
    return Dataset(scaled, data.item_names, standardized=True)


def center(data: Dataset) -> Dataset:
    """Mean-subtracted copy for raw-covariance analysis."""
    return Dataset(data.values - data.values.mean(axis=0), data.item_names, standardized=False)


def generate_synthetic(spec: TrueModelSpec, return_scores: bool = False) -> Union[Dataset, Tuple[Dataset, np.ndarray]]:
    """n i.i.d. draws from N(0, implied covariance), deterministic given the seed."""
    model = spec.model
    rng = np.random.default_rng(spec.seed)
    scores = rng.standard_normal((spec.n, model.m))
    if model.m > 0:
        scores = scores @ np.linalg.cholesky(model.factor_correlations).T
    noise = rng.standard_normal((spec.n, model.p)) * np.sqrt(model.unique_variances)
    values = scores @ model.loadings.T + noise
    logging.debug(f"Generated {spec.n} observations on {model.p} items from a {model.m}-factor model")
    data = Dataset(values, spec.item_names or (), standardized=False)
    if return_scores:
        return data, scores
    return data
