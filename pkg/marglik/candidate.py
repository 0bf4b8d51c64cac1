##################
## Candidate (basic marginal likelihood identity) estimator on the
## collapsed parameter theta = (Lambda, Psi, Phi):
##
##   log m(y) = log f(y | theta*) + log pi(theta*) - log pi(theta* | y)
##
## with the posterior ordinate split into a loading block averaged over
## main-run draws, a unique-variance block from a reduced run with the
## loadings held at Lambda*, and (oblique models) a correlation block from
## a second reduced run with Lambda* and Psi* held.
##################

import logging
from typing import List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field
from scipy import stats
from scipy.special import logsumexp

from factor.algebra import log_likelihood
from factor.errors import ModelError, NumericalError
from factor.model import Dataset, FactorModel, PatternMatrix
from factor.records import FactorModelRecord
from factor.seeding import derive_seed, generator
from marglik.symmetry import SignedPermutation, pattern_symmetries
from sampler.conditionals import layout_conditionals, normal_log_density, row_layouts
from sampler.gibbs import Chain, pooled, run_chain, run_chains
from sampler.priors import ChainConfig, PriorKind, PriorSpec, draw_prior_correlations, log_prior

EXACT_SUM_MAX_M = 4
N_BATCHES = 20
PRIOR_CORRELATION_DRAWS = 20000

# child-seed keys of the auxiliary runs
PSI_RUN_KEY = 101
PHI_RUN_KEY = 102
PHI_PRIOR_KEY = 103

Symmetrization = Literal["ExactSum", "AdditiveApprox"]


class OrdinateBreakdown(BaseModel):
    """Log terms of the candidate identity, each with its Monte Carlo error."""
    log_likelihood: float = Field(..., description="log f(y | theta*), scores integrated out.")
    log_prior: float = Field(..., description="log pi(theta*), improper pieces unnormalized.")
    loading_ordinate: float = Field(..., description="Symmetrized log pi(Lambda* | y).")
    loading_single_mode: float = Field(..., description="Log ordinate from the identity image only.")
    loading_image_sum: float = Field(..., description="Log of the summed ordinate over every symmetric image.")
    psi_ordinate: float = Field(..., description="log pi(Psi* | Lambda*, y).")
    phi_ordinate: float = Field(0.0, description="log pi(Phi* | Lambda*, Psi*, y); zero when Phi is fixed.")
    phi_log_prior: float = Field(0.0, description="Kernel estimate of the correlation prior at Phi*.")
    se_loading: float = 0.0
    se_psi: float = 0.0
    se_phi: float = 0.0
    group_size: int = Field(1, description="Number of symmetric images of theta*.")


class MarglikEstimate(BaseModel):
    log_marginal: float
    mc_standard_error: float = Field(..., ge=0)
    ordinate_breakdown: OrdinateBreakdown
    theta_star: FactorModelRecord
    symmetrization: Symmetrization
    m: int
    n_draws: int
    flags: List[str] = Field(default_factory=list)


def log_average(terms: np.ndarray, n_batches: int = N_BATCHES) -> Tuple[float, float]:
    """
    log of the mean of exp(terms) and its standard error by batch means
    (delta method on the log scale).
    """
    terms = np.asarray(terms, dtype=float)
    if terms.size == 0:
        return 0.0, 0.0
    top = float(np.max(terms))
    if not np.isfinite(top):
        return top, np.inf
    weights = np.exp(terms - top)
    mean = float(weights.mean())
    log_mean = top + float(np.log(mean))
    k = min(n_batches, len(weights))
    if k < 2:
        return log_mean, 0.0
    usable = (len(weights) // k) * k
    batches = weights[:usable].reshape(k, -1).mean(axis=1)
    se = float(np.sqrt(batches.var(ddof=1) / k) / mean)
    return log_mean, se


def loading_ordinate_terms(theta_loadings: np.ndarray, ftf: np.ndarray, fty: np.ndarray, psi: np.ndarray,
                           pattern: PatternMatrix, prior: PriorSpec,
                           images: List[SignedPermutation]) -> np.ndarray:
    """
    Per-draw log conditional ordinates of every image of Lambda*.

    Returns:
        G x S array; column 0 is the identity image.
    """
    layouts = row_layouts(pattern)
    stack = np.stack([g.apply(theta_loadings) for g in images])
    out = np.zeros((ftf.shape[0], len(images)))
    if not layouts:
        return out
    precision = prior.loading_precision()
    for g in range(ftf.shape[0]):
        for layout in layouts:
            means, precisions = layout_conditionals(layout, ftf[g], fty[g], psi[g], precision)
            x = stack[:, layout.rows][:, :, layout.free]
            out[g] += normal_log_density(x, means, precisions).sum(axis=1)
    return out


def _psi_ordinate_terms(data: Dataset, theta: FactorModel, shape0: float, rate0: float,
                        ftf: np.ndarray, fty: np.ndarray) -> np.ndarray:
    lam = theta.loadings
    yty = np.sum(data.values**2, axis=0)
    cross = np.einsum("gkp,pk->gp", fty, lam)
    quad = np.einsum("pk,gkl,pl->gp", lam, ftf, lam)
    rss = yty[None, :] - 2.0 * cross + quad
    shape = shape0 + 0.5 * data.n
    rate = rate0 + 0.5 * np.maximum(rss, 0.0)
    return np.sum(stats.invgamma.logpdf(theta.unique_variances[None, :], a=shape, scale=rate), axis=1)


def _kde_terms(samples: np.ndarray, point: np.ndarray) -> np.ndarray:
    """Per-sample Gaussian kernel log contributions at `point` (Scott bandwidth)."""
    kde = stats.gaussian_kde(samples.T)
    return stats.multivariate_normal.logpdf(samples, mean=point, cov=kde.covariance, allow_singular=False)


def _offdiagonal(phi: np.ndarray) -> np.ndarray:
    m = phi.shape[-1]
    rows, cols = np.triu_indices(m, k=1)
    return phi[..., rows, cols]


def candidate_with_chains(data: Dataset, pattern: PatternMatrix, prior: PriorSpec, config: ChainConfig,
                          symmetrization: Optional[Symmetrization] = None,
                          improper_ok: bool = False) -> Tuple[MarglikEstimate, List[Chain]]:
    """Candidate estimate plus the main-run chains it was computed from."""
    if prior.kind == PriorKind.ENCOMPASSING_BALL:
        raise ModelError("the candidate estimator is defined for the improper and conjugate priors only")
    if prior.kind == PriorKind.IMPROPER_DEFAULT and not improper_ok:
        raise ModelError("improper priors need the training-sample correction; use intrinsic_type1_bf")
    m = pattern.m
    mode = symmetrization or ("ExactSum" if m <= EXACT_SUM_MAX_M else "AdditiveApprox")

    main_config = config.model_copy(update={"retain_scores": "stats"})
    chains = run_chains(data, pattern, prior, main_config)
    lam_all = pooled(chains, "loadings")
    psi_all = pooled(chains, "psi")
    phi_all = pooled(chains, "phi")
    kernel_all = pooled(chains, "log_kernel")
    best = int(np.argmax(kernel_all))
    theta = FactorModel(lam_all[best], psi_all[best], phi_all[best], check=False)
    oblique = prior.oblique and m >= 2
    shape0, rate0 = prior.psi_hyperparameters()

    loglik = log_likelihood(data, theta)
    logprior = log_prior(theta, pattern, prior, include_phi=False)

    # loading block
    symmetries = pattern_symmetries(pattern)
    images = symmetries if mode == "ExactSum" else symmetries[:1]
    terms = loading_ordinate_terms(
        theta.loadings, pooled(chains, "score_ftf"), pooled(chains, "score_fty"), psi_all, pattern, prior, images
    )
    single, se_single = log_average(terms[:, 0])
    image_sum, se_sum = log_average(logsumexp(terms, axis=1))
    log_group = float(np.log(len(symmetries)))
    if mode == "ExactSum":
        lam_ordinate, se_lam = image_sum - log_group, se_sum
    else:
        lam_ordinate, se_lam = single - log_group, se_single

    # unique-variance block
    if m == 0:
        yty = np.sum(data.values**2, axis=0)
        psi_ordinate = float(np.sum(stats.invgamma.logpdf(
            theta.unique_variances, a=shape0 + 0.5 * data.n, scale=rate0 + 0.5 * yty
        )))
        se_psi = 0.0
    else:
        reduced = config.model_copy(update={
            "seed": derive_seed(config.seed, PSI_RUN_KEY), "n_chains": 1,
            "dispersed_starts": False, "retain_scores": "stats",
        })
        psi_chain = run_chain(data, PatternMatrix.fixed(theta.loadings), prior, reduced)
        psi_ordinate, se_psi = log_average(
            _psi_ordinate_terms(data, theta, shape0, rate0, psi_chain.score_ftf, psi_chain.score_fty)
        )

    # correlation block
    phi_ordinate, se_phi, phi_prior, se_phi_prior = 0.0, 0.0, 0.0, 0.0
    if oblique:
        reduced = config.model_copy(update={
            "seed": derive_seed(config.seed, PHI_RUN_KEY), "n_chains": 1,
            "dispersed_starts": False, "retain_scores": "none",
        })
        phi_chain = run_chain(data, PatternMatrix.fixed(theta.loadings), prior, reduced,
                              hold_psi=theta.unique_variances)
        point = _offdiagonal(theta.factor_correlations)
        try:
            phi_ordinate, se_phi = log_average(_kde_terms(_offdiagonal(phi_chain.phi), point))
            prior_draws = draw_prior_correlations(generator(config.seed, PHI_PRIOR_KEY), m, PRIOR_CORRELATION_DRAWS)
            phi_prior, se_phi_prior = log_average(_kde_terms(_offdiagonal(prior_draws), point))
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise NumericalError(f"ordinate degenerate - run regularity assessment ({exc})")

    log_marginal = loglik + logprior + phi_prior - (lam_ordinate + psi_ordinate + phi_ordinate)
    se = float(np.sqrt(se_lam**2 + se_psi**2 + se_phi**2 + se_phi_prior**2))
    if not np.isfinite(log_marginal) or not np.isfinite(se):
        raise NumericalError("ordinate degenerate - run regularity assessment")

    breakdown = OrdinateBreakdown(
        log_likelihood=loglik,
        log_prior=logprior,
        loading_ordinate=lam_ordinate,
        loading_single_mode=single,
        loading_image_sum=image_sum,
        psi_ordinate=psi_ordinate,
        phi_ordinate=phi_ordinate,
        phi_log_prior=phi_prior,
        se_loading=se_lam,
        se_psi=se_psi,
        se_phi=float(np.sqrt(se_phi**2 + se_phi_prior**2)),
        group_size=len(symmetries),
    )
    estimate = MarglikEstimate(
        log_marginal=float(log_marginal),
        mc_standard_error=se,
        ordinate_breakdown=breakdown,
        theta_star=FactorModelRecord.from_model(theta),
        symmetrization=mode,
        m=m,
        n_draws=int(lam_all.shape[0]),
    )
    logging.debug(f"Candidate estimate m={m}: {estimate.log_marginal:.3f} (se {se:.3f}, {mode})")
    return estimate, chains


def candidate_log_marginal(data: Dataset, pattern: PatternMatrix, prior: PriorSpec, config: ChainConfig,
                           symmetrization: Optional[Symmetrization] = None,
                           improper_ok: bool = False) -> MarglikEstimate:
    """
    Candidate estimate of the log marginal likelihood.

    Args:
        data: dataset analysed (standardized or centered).
        pattern: loading pattern of the model.
        prior: conjugate prior, or the improper prior when called through the
            training-sample correction (`improper_ok`).
        config: chain settings for the main run; the reduced runs reuse them
            with one chain and child seeds.
        symmetrization: "ExactSum" (default for m <= 4) or "AdditiveApprox".

    Returns:
        MarglikEstimate with the per-block ordinate breakdown.
    """
    estimate, _ = candidate_with_chains(data, pattern, prior, config, symmetrization, improper_ok)
    return estimate
