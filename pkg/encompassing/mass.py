##################
## Prior and posterior mass of constraint systems. Prior draws come from the
## encompassing ball prior on the base pattern; posterior draws are the
## retained loadings of chains run under that prior.
##################

import logging
from concurrent.futures import ThreadPoolExecutor
from enum import Enum
from typing import List, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, Field

from constraints.binding import BoundSystem, evaluate_many
from factor.ball import uniform_unit_ball
from factor.errors import ModelError
from factor.model import PatternMatrix
from factor.seeding import generator
from sampler.diagnostics import effective_size
from sampler.gibbs import Chain
from sampler.priors import MIN_DRAWS_FOR_MASS, PriorKind, draw_prior_correlations

PRIOR_MASS_KEY = 401
PRIOR_BLOCK = 10_000
MIN_PRIOR_DRAWS = 10_000
MAX_ANCHOR_REDRAWS = 1000
BELOW_RESOLUTION = "prior mass below resolution; increase n_draws"


class PhiMode(str, Enum):
    IDENTITY = "identity"
    FROM_PRIOR = "from_prior"


class MassEstimate(BaseModel):
    proportion: float = Field(..., ge=0, le=1)
    n_draws: int = Field(..., ge=0)
    n_satisfied: int = Field(..., ge=0)
    standard_error: float = Field(..., ge=0, description="Binomial standard error; uses the ESS of the indicator for posterior draws.")
    effective_draws: float = Field(..., ge=0)
    flags: List[str] = Field(default_factory=list)


def _estimate(n_satisfied: int, n_draws: int, effective_draws: Optional[float] = None) -> MassEstimate:
    proportion = n_satisfied / n_draws if n_draws else 0.0
    n_eff = float(n_draws if effective_draws is None else effective_draws)
    se = float(np.sqrt(proportion * (1.0 - proportion) / n_eff)) if n_eff > 0 else 0.0
    return MassEstimate(proportion=proportion, n_draws=n_draws, n_satisfied=n_satisfied,
                        standard_error=se, effective_draws=n_eff)


def _row_sections(free: np.ndarray, row_values: np.ndarray, phis: np.ndarray):
    """Center, radius and shape Cholesky of the free-cell ellipsoid for every Phi in a stack."""
    fixed = ~free
    c = row_values[fixed]
    a = phis[:, free][:, :, free]
    b = phis[:, free][:, :, fixed] @ c
    cc = np.einsum("i,gij,j->g", c, phis[:, fixed][:, :, fixed], c)
    center = -np.linalg.solve(a, b[:, :, None])[:, :, 0]
    r2 = 1.0 - cc + np.einsum("gi,gi->g", b, -center)
    if np.any(r2 <= 0):
        raise ModelError("fixed loadings of a row leave no room inside the communality ball")
    return center, np.sqrt(r2), np.linalg.cholesky(a)


def _sample_row(rng: np.random.Generator, free: np.ndarray, row_values: np.ndarray, anchor: Optional[int],
                phis: np.ndarray) -> np.ndarray:
    center, radius, chol = _row_sections(free, row_values, phis)
    d = int(free.sum())

    def draw(idx: np.ndarray) -> np.ndarray:
        u = uniform_unit_ball(rng, len(idx), d)
        step = np.linalg.solve(np.swapaxes(chol[idx], 1, 2), u[:, :, None])[:, :, 0]
        return center[idx] + radius[idx, None] * step

    x = draw(np.arange(len(phis)))
    if anchor is None:
        return x
    # anchor rows live on the half-ball
    k = int(np.sum(free[:anchor]))
    for _ in range(MAX_ANCHOR_REDRAWS):
        bad = np.flatnonzero(x[:, k] <= 0)
        if len(bad) == 0:
            return x
        x[bad] = draw(bad)
    raise ModelError("the anchor cell has no positive room inside the communality ball")


def sample_prior_block(rng: np.random.Generator, pattern: PatternMatrix, phi_mode: PhiMode, size: int) -> np.ndarray:
    """size x p x m loadings from the encompassing ball prior restricted to the pattern."""
    p, m = pattern.shape
    if phi_mode == PhiMode.FROM_PRIOR:
        phis = draw_prior_correlations(rng, m, size)
    else:
        phis = np.broadcast_to(np.eye(m), (size, m, m))
    loadings = np.broadcast_to(pattern.fill(), (size, p, m)).copy()
    free = pattern.free_mask
    for i in range(p):
        if not free[i].any():
            if np.any(np.einsum("j,gjk,k->g", pattern.values[i], phis, pattern.values[i]) > 1.0):
                raise ModelError(f"fixed loadings of item {i + 1} lie outside the communality ball")
            continue
        anchors = np.flatnonzero(pattern.anchor_mask[i])
        anchor = int(anchors[0]) if len(anchors) else None
        loadings[:, i, free[i]] = _sample_row(rng, free[i], pattern.values[i], anchor, phis)
    return loadings


def _block_sizes(n_draws: int) -> List[int]:
    full, rest = divmod(n_draws, PRIOR_BLOCK)
    return [PRIOR_BLOCK] * full + ([rest] if rest else [])


def prior_masses(bounds: Sequence[BoundSystem], pattern: PatternMatrix, phi_mode: PhiMode = PhiMode.IDENTITY,
                 n_draws: int = 100_000, seed: int = 20250101, max_workers: int = 1) -> List[MassEstimate]:
    """
    Prior mass of several systems from one common set of prior draws, so that
    a refined system never gets more mass than the system it refines.
    """
    for bound in bounds:
        if not bound.pattern.same_as(pattern):
            raise ModelError(f"system '{bound.name}' is bound to a different base pattern")
    if n_draws < MIN_PRIOR_DRAWS:
        logging.warning(f"{n_draws} prior draws is below the recommended {MIN_PRIOR_DRAWS}")

    def block(b: int, size: int) -> np.ndarray:
        draws = sample_prior_block(generator(seed, PRIOR_MASS_KEY, b), pattern, phi_mode, size)
        return np.array([int(evaluate_many(bound, draws).sum()) for bound in bounds], dtype=np.int64)

    sizes = _block_sizes(n_draws)
    if max_workers > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            counts = list(pool.map(block, range(len(sizes)), sizes))
    else:
        counts = [block(b, size) for b, size in enumerate(sizes)]
    totals = np.sum(counts, axis=0) if counts else np.zeros(len(bounds), dtype=np.int64)

    estimates = []
    for bound, n_sat in zip(bounds, totals):
        estimate = _estimate(int(n_sat), n_draws)
        if n_sat == 0:
            estimate.flags.append(BELOW_RESOLUTION)
            logging.warning(f"System '{bound.name}': {BELOW_RESOLUTION}")
        logging.info(f"Prior mass of '{bound.name}': {estimate.proportion:.4f} (se {estimate.standard_error:.4f})")
        estimates.append(estimate)
    return estimates


def prior_mass(bound: BoundSystem, pattern: Optional[PatternMatrix] = None, phi_mode: PhiMode = PhiMode.IDENTITY,
               n_draws: int = 100_000, seed: int = 20250101, max_workers: int = 1) -> MassEstimate:
    """Monte Carlo prior mass of one bound system under the encompassing ball prior."""
    return prior_masses([bound], pattern or bound.pattern, phi_mode, n_draws, seed, max_workers)[0]


def _check_chain(bound: BoundSystem, chain: Chain):
    if not chain.pattern.same_as(bound.pattern):
        raise ModelError(f"chain {chain.chain_index} was run on a different base pattern than system '{bound.name}'")
    if chain.prior is not None and chain.prior.kind != PriorKind.ENCOMPASSING_BALL:
        raise ModelError(f"posterior mass needs chains run under the encompassing ball prior, not {chain.prior.kind.value}")


def posterior_mass(bound: BoundSystem, chains: Union[Chain, Sequence[Chain]]) -> MassEstimate:
    """Fraction of retained draws satisfying the system, with an ESS-based standard error."""
    chains = [chains] if isinstance(chains, Chain) else list(chains)
    if not chains:
        raise ModelError("posterior mass needs at least one chain")
    for chain in chains:
        _check_chain(bound, chain)
    n = min(c.n_draws for c in chains)
    indicator = np.stack([evaluate_many(bound, c.loadings[:n]) for c in chains]).astype(float)
    total = indicator.size
    if total < MIN_DRAWS_FOR_MASS:
        logging.warning(f"Posterior mass of '{bound.name}' from only {total} draws")
    n_eff = effective_size(indicator)
    return _estimate(int(indicator.sum()), total, n_eff if n_eff is not None else total)
