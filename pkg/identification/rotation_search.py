##################
## Numeric search for an oblique transform T that maps a loading matrix
## satisfying a pattern onto another one satisfying it:
##   Lambda1 = Lambda0 T,  Phi1 = T^-1 Phi0 T^-T,  diag(Phi1) = 1,
## fixed cells and anchor signs preserved. A non-identity solution means
## the pattern does not identify the rotation.
##################

from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict
from scipy.optimize import least_squares

from factor.model import PatternMatrix
from factor.seeding import generator

SOLVED_TOL = 1e-8
TRIVIAL_TOL = 1e-5
SINGULAR_PENALTY = 1e6


class RotationSearchResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    found: bool
    transform: Optional[np.ndarray] = None
    loadings: Optional[np.ndarray] = None
    phi: Optional[np.ndarray] = None
    residual: float
    n_starts: int


def _transform(loadings: np.ndarray, phi: np.ndarray, t: np.ndarray):
    lam1 = loadings @ t
    t_inv = np.linalg.inv(t)
    phi1 = t_inv @ phi @ t_inv.T
    return lam1, 0.5 * (phi1 + phi1.T)


def _residuals(x: np.ndarray, pattern: PatternMatrix, loadings: np.ndarray, phi: np.ndarray) -> np.ndarray:
    m = pattern.m
    fixed = pattern.fixed_mask
    t = x.reshape(m, m)
    try:
        lam1, phi1 = _transform(loadings, phi, t)
    except np.linalg.LinAlgError:
        return np.full(int(fixed.sum()) + m, SINGULAR_PENALTY)
    return np.concatenate([lam1[fixed] - pattern.values[fixed], np.diag(phi1) - 1.0])


def _fix_signs(pattern: PatternMatrix, t: np.ndarray, loadings: np.ndarray) -> np.ndarray:
    """Flip columns whose anchor came out negative."""
    lam1 = loadings @ t
    signs = np.ones(pattern.m)
    for j, rows in enumerate(pattern.anchors()):
        if rows and lam1[rows[0], j] < 0:
            signs[j] = -1.0
    return t * signs


def _admissible(pattern: PatternMatrix, lam1: np.ndarray) -> bool:
    return bool(np.all(lam1[pattern.anchor_mask] > 0))


def find_preserving_rotation(pattern: PatternMatrix, loadings: np.ndarray, phi: Optional[np.ndarray] = None,
                             n_starts: int = 20, seed: int = 0) -> RotationSearchResult:
    """
    Multi-start least-squares search for a non-trivial transform that keeps
    every fixed cell, the unit diagonal of Phi and the anchor signs.
    `loadings` must satisfy the pattern.
    """
    m = pattern.m
    loadings = np.asarray(loadings, dtype=float)
    phi = np.eye(m) if phi is None else np.asarray(phi, dtype=float)
    if m == 0:
        return RotationSearchResult(found=False, residual=0.0, n_starts=0)
    rng = generator(seed)
    best = None
    for _ in range(n_starts):
        start = rng.standard_normal((m, m))
        fit = least_squares(_residuals, start.ravel(), args=(pattern, loadings, phi), xtol=1e-12, ftol=1e-12, gtol=1e-12)
        t = _fix_signs(pattern, fit.x.reshape(m, m), loadings)
        try:
            lam1, phi1 = _transform(loadings, phi, t)
        except np.linalg.LinAlgError:
            continue
        residual = float(np.max(np.abs(_residuals(t.ravel(), pattern, loadings, phi)), initial=0.0))
        if residual > SOLVED_TOL or not _admissible(pattern, lam1):
            continue
        moved = max(float(np.max(np.abs(lam1 - loadings), initial=0.0)), float(np.max(np.abs(phi1 - phi), initial=0.0)))
        if moved > TRIVIAL_TOL:
            return RotationSearchResult(found=True, transform=t, loadings=lam1, phi=phi1, residual=residual, n_starts=n_starts)
        if best is None or residual < best:
            best = residual
    return RotationSearchResult(found=False, residual=best if best is not None else np.inf, n_starts=n_starts)
