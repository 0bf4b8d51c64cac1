##################
## Full conditionals of the factor model with augmented factor scores.
## All functions here are pure: identical inputs give identical outputs.
##################

from dataclasses import dataclass
from typing import Callable, List, Tuple

import numpy as np
from scipy import linalg

from factor.errors import NumericalError
from factor.model import CellKind, FactorModel, PatternMatrix
from sampler.priors import PriorSpec, correlation_log_density

# reciprocal condition number below which a loading conditional is degenerate
DEGENERATE_RCOND = 1e-12
MAX_SLICE_SHRINKS = 200


def factor_score_conditional(model: FactorModel, observation: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Conditional of one observation's factor scores.

    Returns:
        (mean, covariance) with covariance V = (Phi^-1 + Lambda' Psi^-1 Lambda)^-1
        and mean V Lambda' Psi^-1 y.
    """
    covariance, weights = score_posterior(model.loadings, model.unique_variances, model.factor_correlations)
    return weights @ np.asarray(observation, dtype=float), covariance


def score_posterior(loadings: np.ndarray, psi: np.ndarray, phi: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Shared pieces of the score conditional for every observation: the
    covariance V and the m x p matrix V Lambda' Psi^-1 mapping y to the mean.
    """
    m = loadings.shape[1]
    if m == 0:
        return np.zeros((0, 0)), np.zeros((0, loadings.shape[0]))
    scaled = loadings / psi[:, None]
    precision = linalg.inv(phi) + loadings.T @ scaled
    precision = 0.5 * (precision + precision.T)
    covariance = linalg.inv(precision)
    covariance = 0.5 * (covariance + covariance.T)
    return covariance, covariance @ scaled.T


@dataclass(frozen=True)
class RowLayout:
    """Index bookkeeping of the rows sharing one free/fixed layout."""
    rows: np.ndarray
    free: np.ndarray
    fixed: np.ndarray
    fixed_values: np.ndarray

    @property
    def dim(self) -> int:
        return len(self.free)


def row_layouts(pattern: PatternMatrix) -> List[RowLayout]:
    """Group rows with at least one free cell by their free-cell layout."""
    groups = {}
    free = pattern.free_mask
    for i in range(pattern.p):
        if not free[i].any():
            continue
        groups.setdefault(tuple(free[i].tolist()), []).append(i)
    layouts = []
    for key, rows in groups.items():
        mask = np.array(key, dtype=bool)
        rows = np.array(rows, dtype=int)
        layouts.append(RowLayout(
            rows=rows,
            free=np.flatnonzero(mask),
            fixed=np.flatnonzero(~mask),
            fixed_values=pattern.values[np.ix_(rows, np.flatnonzero(~mask))],
        ))
    return layouts


def layout_conditionals(layout: RowLayout, ftf: np.ndarray, fty: np.ndarray, psi: np.ndarray,
                        prior_precision: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Normal conditional of the free loadings of every row in `layout` from the
    score cross-products FtF (m x m) and FtY (m x p).

    Returns:
        means (rows x d) and precisions (rows x d x d).
    """
    f, c = layout.free, layout.fixed
    psi_rows = psi[layout.rows]
    gram = ftf[np.ix_(f, f)]
    # fixed cells move to the response: F_f'(y - F_c v) = F_f'y - F_f'F_c v
    rhs = fty[np.ix_(f, layout.rows)].T - layout.fixed_values @ ftf[np.ix_(c, f)]
    precisions = gram[None, :, :] / psi_rows[:, None, None] + prior_precision * np.eye(layout.dim)[None, :, :]
    rhs = rhs / psi_rows[:, None]
    means = np.linalg.solve(precisions, rhs[:, :, None])[:, :, 0]
    return means, precisions


def check_conditioning(precisions: np.ndarray, row_indices: np.ndarray):
    eig = np.linalg.eigvalsh(precisions)
    top = eig[:, -1]
    bad = ~(eig[:, 0] > DEGENERATE_RCOND * np.maximum(top, 1e-300))
    if bad.any():
        raise NumericalError(
            f"degenerate conditional; check rank diagnostics (item {int(row_indices[np.argmax(bad)]) + 1})"
        )


def loading_row_conditional(row_index: int, pattern_row: np.ndarray, factor_scores: np.ndarray, psi_i: float,
                            data_column: np.ndarray, prior: PriorSpec, fixed_values: np.ndarray = None
                            ) -> Tuple[np.ndarray, np.ndarray]:
    """
    Normal regression conditional of one row's free loadings given the scores.

    Args:
        row_index: item index (0-based), used in error messages.
        pattern_row: CellKind codes of the row.
        factor_scores: n x m score matrix.
        psi_i: unique variance of the item.
        data_column: the item's n observations.
        prior: prior regime; improper and ball priors add no precision.
        fixed_values: values of the row's fixed cells (zeros when omitted).

    Returns:
        (mean, covariance) over the free cells; empty arrays when the row has none.
    """
    pattern_row = np.asarray(pattern_row)
    free = (pattern_row == CellKind.FREE) | (pattern_row == CellKind.ANCHOR)
    if not free.any():
        return np.zeros(0), np.zeros((0, 0))
    values = np.zeros(len(pattern_row)) if fixed_values is None else np.asarray(fixed_values, dtype=float)
    layout = RowLayout(
        rows=np.array([0]),
        free=np.flatnonzero(free),
        fixed=np.flatnonzero(~free),
        fixed_values=values[~free][None, :],
    )
    scores = np.asarray(factor_scores, dtype=float)
    y = np.asarray(data_column, dtype=float)
    means, precisions = layout_conditionals(layout, scores.T @ scores, (scores.T @ y)[:, None],
                                            np.array([psi_i]), prior.loading_precision())
    check_conditioning(precisions, np.array([row_index]))
    covariance = linalg.inv(precisions[0])
    return means[0], 0.5 * (covariance + covariance.T)


def normal_log_density(x: np.ndarray, means: np.ndarray, precisions: np.ndarray) -> np.ndarray:
    """
    Log N(x; mean, precision^-1) for each row; `x` may carry leading batch
    axes in front of the (rows x d) block.
    """
    d = means.shape[-1]
    chol = np.linalg.cholesky(precisions)
    half_log_det = np.sum(np.log(np.diagonal(chol, axis1=-2, axis2=-1)), axis=-1)
    diff = x - means
    # (x - mu)' Q (x - mu) = |L'(x - mu)|^2 with Q = L L'
    z = np.einsum("rdk,...rd->...rk", chol, diff)
    return half_log_det - 0.5 * d * np.log(2.0 * np.pi) - 0.5 * np.sum(z**2, axis=-1)


def correlation_conditional_log_density(phi: np.ndarray, ftf: np.ndarray, n: int, prior_df: float) -> float:
    """
    Unnormalized log density of Phi given n score rows with cross-product FtF,
    under the rescaled inverse-Wishart(prior_df, I) correlation prior.
    """
    try:
        factor = linalg.cho_factor(phi, lower=True)
    except linalg.LinAlgError:
        return -np.inf
    log_det = 2.0 * float(np.sum(np.log(np.diag(factor[0]))))
    quadratic = float(np.trace(linalg.cho_solve(factor, ftf)))
    return -0.5 * n * log_det - 0.5 * quadratic + correlation_log_density(phi, prior_df)


def slice_correlations(phi: np.ndarray, log_density: Callable[[np.ndarray], float],
                       rng: np.random.Generator) -> np.ndarray:
    """
    One sweep of univariate slice sampling over the off-diagonal entries of a
    correlation matrix. Each entry starts from the bracket (-1, 1) and shrinks
    towards its current value.
    """
    phi = phi.copy()
    m = phi.shape[0]
    current = log_density(phi)
    if not np.isfinite(current):
        raise NumericalError("factor correlations left their support")
    for a in range(m):
        for b in range(a + 1, m):
            x0 = phi[a, b]
            level = current + np.log(rng.random())
            lo, hi = -1.0, 1.0
            for _ in range(MAX_SLICE_SHRINKS):
                x = rng.uniform(lo, hi)
                phi[a, b] = phi[b, a] = x
                value = log_density(phi)
                if value > level:
                    current = value
                    break
                if x < x0:
                    lo = x
                else:
                    hi = x
            else:
                phi[a, b] = phi[b, a] = x0
    return phi
