##################
## Convergence and mode-splitting diagnostics over finished chains.
##################

import logging
from typing import Dict, List, Optional

import arviz as az
import numpy as np
from pydantic import BaseModel, Field

from sampler.gibbs import Chain

NEAR_ZERO_LOADING = 0.1
NEAR_ZERO_MASS_FLAG = 0.05


class Diagnostics(BaseModel):
    """Per-parameter R-hat / ESS plus loading-specific mode diagnostics."""
    rhat: Dict[str, Optional[float]] = Field(..., description="Split R-hat per parameter; null when undefined (zero variance).")
    ess: Dict[str, Optional[float]] = Field(..., description="Effective sample size per parameter; null when degenerate.")
    degenerate: List[str] = Field(default_factory=list, description="Parameters whose draws have zero variance.")
    sign_switch_rate: Dict[str, float] = Field(..., description="Fraction of consecutive within-chain draws where a loading changes sign.")
    near_zero_mass: List[float] = Field(..., description="Per column: pooled fraction of draws with max_i |lambda_ij| below the threshold.")
    near_zero_threshold: float = NEAR_ZERO_LOADING
    near_zero_flag_level: float = NEAR_ZERO_MASS_FLAG
    total_draws: int = 0
    n_chains: int = 0

    @property
    def flagged_columns(self) -> List[int]:
        return [j + 1 for j, mass in enumerate(self.near_zero_mass) if mass > self.near_zero_flag_level]


def loading_name(i: int, j: int) -> str:
    return f"L[{i + 1},{j + 1}]"


def stack_parameters(chains: List[Chain]) -> Dict[str, np.ndarray]:
    """(chain, draw) arrays for every free loading, unique variance and correlation."""
    n = min(c.n_draws for c in chains)
    pattern = chains[0].pattern
    out = {}
    free = pattern.free_mask
    for i, j in zip(*np.nonzero(free)):
        out[loading_name(i, j)] = np.stack([c.loadings[:n, i, j] for c in chains])
    for i in range(pattern.p):
        out[f"psi[{i + 1}]"] = np.stack([c.psi[:n, i] for c in chains])
    m = pattern.m
    for a in range(m):
        for b in range(a + 1, m):
            values = np.stack([c.phi[:n, a, b] for c in chains])
            if np.ptp(values) > 0:
                out[f"phi[{a + 1},{b + 1}]"] = values
    return out


def split_rhat(values: np.ndarray) -> Optional[float]:
    """Split R-hat on a (chain, draw) array; None when undefined."""
    if values.shape[1] < 4 or np.ptp(values) == 0:
        return None
    value = float(az.rhat(values, method="split"))
    if not np.isfinite(value):
        return None
    return max(value, 1.0)


def effective_size(values: np.ndarray) -> Optional[float]:
    """Bulk ESS on a (chain, draw) array clipped to the total draw count; None when degenerate."""
    if values.shape[1] < 4 or np.ptp(values) == 0:
        return None
    value = float(az.ess(values, method="bulk"))
    if not np.isfinite(value) or value <= 0:
        return None
    return min(value, float(values.size))


def sign_switch_rate(values: np.ndarray) -> float:
    if values.shape[1] < 2:
        return 0.0
    signs = np.sign(values)
    return float(np.mean(signs[:, 1:] != signs[:, :-1]))


def near_zero_mass(loadings: np.ndarray, threshold: float = NEAR_ZERO_LOADING) -> np.ndarray:
    """Per column, fraction of draws (G x p x m) whose largest absolute loading is below threshold."""
    if loadings.shape[2] == 0:
        return np.zeros(0)
    return np.mean(np.max(np.abs(loadings), axis=1) < threshold, axis=0)


def diagnostics(chains: List[Chain], threshold: float = NEAR_ZERO_LOADING,
                flag_level: float = NEAR_ZERO_MASS_FLAG) -> Diagnostics:
    if not chains:
        raise ValueError("diagnostics needs at least one chain")
    params = stack_parameters(chains)
    rhat, ess, degenerate, switches = {}, {}, [], {}
    for name, values in params.items():
        rhat[name] = split_rhat(values)
        ess[name] = effective_size(values)
        if np.ptp(values) == 0:
            degenerate.append(name)
        if name.startswith("L["):
            switches[name] = sign_switch_rate(values)
    pooled_loadings = np.concatenate([c.loadings for c in chains], axis=0)
    mass = near_zero_mass(pooled_loadings, threshold)
    result = Diagnostics(
        rhat=rhat,
        ess=ess,
        degenerate=degenerate,
        sign_switch_rate=switches,
        near_zero_mass=mass.tolist(),
        near_zero_threshold=threshold,
        near_zero_flag_level=flag_level,
        total_draws=int(pooled_loadings.shape[0]),
        n_chains=len(chains),
    )
    if result.flagged_columns:
        logging.info(f"Near-zero loading mass above {flag_level:.0%} in columns {result.flagged_columns}")
    return result


class CellSummary(BaseModel):
    cell: str
    mean: float
    sd: float
    q025: float
    q975: float


class PosteriorSummary(BaseModel):
    """Posterior moments of loadings (as stored), unique variances and correlations."""
    loadings: List[CellSummary]
    unique_variances: List[float]
    factor_correlations: List[List[float]]


def posterior_summary(chains: List[Chain], loadings: Optional[np.ndarray] = None) -> PosteriorSummary:
    """
    Summaries of pooled draws. `loadings` may pass an aligned draw stack in
    place of the raw one.
    """
    lam = np.concatenate([c.loadings for c in chains], axis=0) if loadings is None else loadings
    pattern = chains[0].pattern
    cells = []
    for i, j in zip(*np.nonzero(pattern.free_mask)):
        v = lam[:, i, j]
        cells.append(CellSummary(
            cell=loading_name(i, j),
            mean=float(v.mean()),
            sd=float(v.std(ddof=1)) if len(v) > 1 else 0.0,
            q025=float(np.quantile(v, 0.025)),
            q975=float(np.quantile(v, 0.975)),
        ))
    psi = np.concatenate([c.psi for c in chains], axis=0)
    phi = np.concatenate([c.phi for c in chains], axis=0)
    return PosteriorSummary(
        loadings=cells,
        unique_variances=psi.mean(axis=0).tolist(),
        factor_correlations=phi.mean(axis=0).tolist(),
    )
