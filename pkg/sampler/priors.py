import logging
from enum import Enum
from typing import Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import stats

from factor.ball import RowBall
from factor.model import FactorModel, PatternMatrix
from factor.seeding import MAX_SEED

# unique-variance prior under the encompassing ball; recorded in every report
BALL_PSI_SHAPE = 1.0
BALL_PSI_RATE = 0.5

MIN_DRAWS_FOR_MASS = 1000


class PriorKind(str, Enum):
    IMPROPER_DEFAULT = "improper_default"
    CONJUGATE_VAGUE = "conjugate_vague"
    ENCOMPASSING_BALL = "encompassing_ball"


class PhiPrior(str, Enum):
    FIXED_IDENTITY = "fixed_identity"
    CORRELATION_PRIOR = "correlation_prior"


class PriorSpec(BaseModel):
    """Prior regime for loadings, unique variances and factor correlations."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: PriorKind = Field(PriorKind.IMPROPER_DEFAULT, description="Prior family for loadings and unique variances.")
    loading_prior_variance: Optional[float] = Field(None, gt=0, description="Normal prior variance of free loadings (conjugate_vague only).")
    ig_shape: Optional[float] = Field(None, gt=0, description="Inverse-gamma shape for unique variances (conjugate_vague only).")
    ig_rate: Optional[float] = Field(None, gt=0, description="Inverse-gamma rate for unique variances (conjugate_vague only).")
    phi_prior: PhiPrior = Field(PhiPrior.FIXED_IDENTITY, description="Phi fixed at the identity or sampled under the inverse-Wishart correlation prior.")

    @model_validator(mode="after")
    def _check_hyperparameters(self):
        if self.kind == PriorKind.CONJUGATE_VAGUE:
            if None in (self.loading_prior_variance, self.ig_shape, self.ig_rate):
                raise ValueError("conjugate_vague needs loading_prior_variance, ig_shape and ig_rate")
        return self

    @classmethod
    def improper(cls, oblique: bool = False) -> "PriorSpec":
        return cls(kind=PriorKind.IMPROPER_DEFAULT, phi_prior=PhiPrior.CORRELATION_PRIOR if oblique else PhiPrior.FIXED_IDENTITY)

    @classmethod
    def conjugate(cls, loading_prior_variance: float = 10.0, ig_shape: float = 1.0, ig_rate: float = 1.0,
                  oblique: bool = False) -> "PriorSpec":
        return cls(
            kind=PriorKind.CONJUGATE_VAGUE,
            loading_prior_variance=loading_prior_variance,
            ig_shape=ig_shape,
            ig_rate=ig_rate,
            phi_prior=PhiPrior.CORRELATION_PRIOR if oblique else PhiPrior.FIXED_IDENTITY,
        )

    @classmethod
    def ball(cls, oblique: bool = True) -> "PriorSpec":
        return cls(kind=PriorKind.ENCOMPASSING_BALL, phi_prior=PhiPrior.CORRELATION_PRIOR if oblique else PhiPrior.FIXED_IDENTITY)

    @property
    def oblique(self) -> bool:
        return self.phi_prior == PhiPrior.CORRELATION_PRIOR

    def loading_precision(self) -> float:
        """Diagonal prior precision added to the loading-row conditional."""
        if self.kind == PriorKind.CONJUGATE_VAGUE:
            return 1.0 / self.loading_prior_variance
        return 0.0

    def psi_hyperparameters(self) -> Tuple[float, float]:
        """(shape, rate) of the inverse-gamma prior; (0, 0) is the 1/psi reference prior."""
        if self.kind == PriorKind.CONJUGATE_VAGUE:
            return self.ig_shape, self.ig_rate
        if self.kind == PriorKind.ENCOMPASSING_BALL:
            return BALL_PSI_SHAPE, BALL_PSI_RATE
        return 0.0, 0.0


class ChainConfig(BaseModel):
    """Length, thinning and seeding of a set of Gibbs chains."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    n_iter: int = Field(4000, gt=0, description="Total sweeps per chain, burn-in included.")
    burn_in: int = Field(1000, ge=0, description="Sweeps discarded at the start of each chain.")
    thin: int = Field(1, gt=0, description="Keep every thin-th sweep after burn-in.")
    seed: int = Field(20250101, ge=0, le=MAX_SEED, description="Root seed; chain c uses the child stream keyed by c.")
    n_chains: int = Field(2, gt=0, description="Number of independent chains.")
    dispersed_starts: bool = Field(True, description="Start loadings from N(0,1) draws instead of a common start.")
    retain_scores: Literal["none", "stats", "full"] = Field("none", description="Keep per-draw score cross-products or whole score matrices.")
    max_workers: int = Field(1, gt=0, description="Chains run concurrently in a thread pool when > 1.")

    @model_validator(mode="after")
    def _check_lengths(self):
        if self.burn_in >= self.n_iter:
            raise ValueError("burn_in must be smaller than n_iter")
        return self

    @property
    def retained_per_chain(self) -> int:
        return (self.n_iter - self.burn_in) // self.thin

    def warn_if_short(self):
        if self.retained_per_chain < MIN_DRAWS_FOR_MASS:
            logging.warning(
                f"Only {self.retained_per_chain} retained draws per chain; mass estimates want at least {MIN_DRAWS_FOR_MASS}"
            )


def correlation_log_density(phi: np.ndarray, df: float) -> float:
    """
    Unnormalized log density of the correlation matrix obtained by rescaling an
    inverse-Wishart(df, I) covariance.
    """
    m = phi.shape[0]
    if m < 2:
        return 0.0
    sign, log_det = np.linalg.slogdet(phi)
    if sign <= 0:
        return -np.inf
    minors = 0.0
    for i in range(m):
        keep = [k for k in range(m) if k != i]
        minors += np.linalg.slogdet(phi[np.ix_(keep, keep)])[1]
    return float((0.5 * (df - 1.0) * (m - 1) - 1.0) * log_det - 0.5 * df * minors)


def draw_prior_correlations(rng: np.random.Generator, m: int, size: int) -> np.ndarray:
    """Correlation matrices from inverse-Wishart(m + 2, I) draws rescaled to unit diagonal."""
    if m == 0:
        return np.zeros((size, 0, 0))
    if m == 1:
        return np.ones((size, 1, 1))
    cov = stats.invwishart.rvs(df=m + 2, scale=np.eye(m), size=size, random_state=rng)
    cov = np.asarray(cov).reshape(size, m, m)
    d = 1.0 / np.sqrt(np.einsum("gii->gi", cov))
    phi = cov * d[:, :, None] * d[:, None, :]
    idx = np.arange(m)
    phi[:, idx, idx] = 1.0
    return phi


def log_prior(model: FactorModel, pattern: PatternMatrix, prior: PriorSpec, include_phi: bool = True) -> float:
    """
    Log prior density of (Lambda, Psi, Phi). Improper pieces are unnormalized:
    flat loadings and the 1/psi reference prior.
    """
    free = pattern.free_mask
    lam = model.loadings
    psi = model.unique_variances
    shape, rate = prior.psi_hyperparameters()
    total = 0.0

    if prior.kind == PriorKind.IMPROPER_DEFAULT:
        total -= float(np.sum(np.log(psi)))
    else:
        total += float(np.sum(stats.invgamma.logpdf(psi, a=shape, scale=rate)))

    if prior.kind == PriorKind.CONJUGATE_VAGUE:
        total += float(np.sum(stats.norm.logpdf(lam[free], scale=np.sqrt(prior.loading_prior_variance))))
    elif prior.kind == PriorKind.ENCOMPASSING_BALL:
        phi = model.factor_correlations
        for i in range(pattern.p):
            ball = RowBall.for_row(free[i], pattern.values[i], phi)
            if ball.dim == 0:
                continue
            if not ball.contains(lam[i, free[i]])[0]:
                return -np.inf
            # anchor rows live on the half-ball
            n_anchor = int(pattern.anchor_mask[i].sum())
            total -= ball.log_volume() - n_anchor * np.log(2.0)

    if include_phi and prior.oblique and model.m >= 2:
        total += correlation_log_density(model.factor_correlations, model.m + 2)
    return total
