##################
## Rank-deficiency assessment: detects the separated posterior regions
## that appear when more factors are fitted than the data support.
##################

import logging
from typing import List

import numpy as np
from pydantic import BaseModel, Field

from factor.model import PatternMatrix
from marglik.symmetry import align_draws, pattern_symmetries
from sampler.diagnostics import NEAR_ZERO_LOADING, NEAR_ZERO_MASS_FLAG, near_zero_mass, split_rhat
from sampler.gibbs import Chain


class RegularityThresholds(BaseModel):
    """Configurable thresholds of the regularity flag; embedded in every report."""
    singular_value_ratio: float = Field(0.1, gt=0, lt=1, description="Flag when sigma_min/sigma_max of the aligned posterior-mean loadings falls below this.")
    near_zero_loading: float = Field(NEAR_ZERO_LOADING, gt=0, description="A column is near zero in a draw when max_i |lambda_ij| is below this.")
    near_zero_mass: float = Field(NEAR_ZERO_MASS_FLAG, gt=0, lt=1, description="Flag when any column's near-zero posterior mass exceeds this.")
    max_rhat: float = Field(1.2, gt=1, description="Flag when the pooled split R-hat after alignment exceeds this.")


class RegularityReport(BaseModel):
    singular_value_ratio: float = Field(..., ge=0, le=1)
    near_zero_mass: List[float]
    max_pooled_rhat: float
    multimodality_flag: bool
    reasons: List[str] = Field(default_factory=list)
    thresholds: RegularityThresholds = Field(default_factory=RegularityThresholds)


def _reference(chains: List[Chain]) -> np.ndarray:
    """Loadings of the highest-kernel draw over all chains."""
    best_chain = max(chains, key=lambda c: float(np.max(c.log_kernel)))
    return best_chain.loadings[int(np.argmax(best_chain.log_kernel))]


def assess_regularity(chains: List[Chain], pattern: PatternMatrix,
                      thresholds: RegularityThresholds = None) -> RegularityReport:
    """
    Singular-value ratio of the anchor-aligned posterior-mean loadings,
    per-column near-zero mass and the pooled R-hat after alignment.
    """
    thresholds = thresholds or RegularityThresholds()
    m = pattern.m
    if len(chains) < 2:
        logging.warning("Regularity assessment wants at least two dispersed-start chains")
    if m == 0:
        return RegularityReport(singular_value_ratio=1.0, near_zero_mass=[], max_pooled_rhat=1.0,
                                multimodality_flag=False, thresholds=thresholds)

    symmetries = pattern_symmetries(pattern)
    reference = _reference(chains)
    n = min(c.n_draws for c in chains)
    aligned = [align_draws(c.loadings[:n], reference, symmetries)[0] for c in chains]
    stacked = np.concatenate(aligned, axis=0)

    sv = np.linalg.svd(stacked.mean(axis=0), compute_uv=False)
    ratio = float(sv[-1] / sv[0]) if sv[0] > 0 else 0.0
    mass = near_zero_mass(stacked, thresholds.near_zero_loading)

    rhats = []
    for i, j in zip(*np.nonzero(pattern.free_mask)):
        value = split_rhat(np.stack([a[:, i, j] for a in aligned]))
        if value is not None:
            rhats.append(value)
    max_rhat = max(rhats) if rhats else 1.0

    reasons = []
    if ratio < thresholds.singular_value_ratio:
        reasons.append(f"singular value ratio {ratio:.3f} below {thresholds.singular_value_ratio}")
    heavy = [j + 1 for j, v in enumerate(mass) if v > thresholds.near_zero_mass]
    if heavy:
        reasons.append(f"near-zero loading mass above {thresholds.near_zero_mass:.0%} in columns {heavy}")
    if max_rhat > thresholds.max_rhat:
        reasons.append(f"pooled R-hat {max_rhat:.2f} above {thresholds.max_rhat} after alignment")

    report = RegularityReport(
        singular_value_ratio=min(max(ratio, 0.0), 1.0),
        near_zero_mass=mass.tolist(),
        max_pooled_rhat=max_rhat,
        multimodality_flag=bool(reasons),
        reasons=reasons,
        thresholds=thresholds,
    )
    if report.multimodality_flag:
        logging.info(f"Regularity flag raised for m={m}: {'; '.join(reasons)}")
    return report
