##################
## Training-sample (intrinsic) correction of Bayes factors computed
## under the improper default prior. Both models see the same training
## subsamples and the same seeds so unknown prior constants cancel.
##################

import logging
from typing import List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field

from factor.errors import FactorSelectionError, NumericalError, UsageError
from factor.model import Dataset, PatternMatrix
from factor.seeding import derive_seed, generator
from marglik.candidate import MarglikEstimate, candidate_log_marginal
from sampler.priors import ChainConfig, PriorSpec

DEFAULT_SUBSAMPLES = 30
MAX_FAILED_FRACTION = 0.2
TRAINING_KEY = 201

Averaging = Literal["arithmetic", "geometric"]


class TrainingCorrection(BaseModel):
    """log of the averaged training-sample Bayes factor B_ab(y(l))."""
    log_correction: float
    mc_standard_error: float
    n_train: int
    n_subsamples: int
    n_failed: int
    averaging: Averaging
    log_bf_per_subsample: List[Optional[float]] = Field(..., description="log B_ab on each training subsample; null when it failed.")


class IntrinsicBayesFactor(BaseModel):
    """Intrinsic log Bayes factor of model 2 against model 1."""
    log_bf: float
    mc_standard_error: float
    full_data_log_bf: float
    correction: TrainingCorrection
    estimate_1: MarglikEstimate
    estimate_2: MarglikEstimate


def default_training_size(m_max: int) -> int:
    return m_max + 3


def training_config(config: ChainConfig) -> ChainConfig:
    """Shorter single-chain runs for the training subsamples."""
    n_iter = max(config.n_iter // 2, 2)
    return config.model_copy(update={
        "n_iter": n_iter,
        "burn_in": min(config.burn_in // 2, n_iter - 1),
        "n_chains": 1,
    })


def training_subsamples(n: int, n_train: int, n_subsamples: int, seed: int) -> List[np.ndarray]:
    """Row indices of each training subsample, drawn without replacement."""
    if not 0 < n_train < n:
        raise UsageError(f"training size {n_train} must be between 1 and n - 1 = {n - 1}")
    rng = generator(seed, TRAINING_KEY)
    return [np.sort(rng.choice(n, size=n_train, replace=False)) for _ in range(n_subsamples)]


def _log_mean_exp(values: np.ndarray) -> float:
    top = float(np.max(values))
    return top + float(np.log(np.mean(np.exp(values - top))))


def training_correction(data: Dataset, pattern_a: PatternMatrix, pattern_b: PatternMatrix, prior: PriorSpec,
                        config: ChainConfig, n_train: int, n_subsamples: int = DEFAULT_SUBSAMPLES,
                        averaging: Averaging = "arithmetic", subsamples: Optional[List[np.ndarray]] = None
                        ) -> TrainingCorrection:
    """
    Average of B_ab^N over training subsamples, where B_ab^N = m_a / m_b under
    the improper prior. Raises when 20% or more of the subsamples fail.
    """
    if subsamples is None:
        subsamples = training_subsamples(data.n, n_train, n_subsamples, config.seed)
    if not subsamples:
        raise UsageError("at least one training subsample is required")
    short = training_config(config)
    values, errors = [], []
    for ell, rows in enumerate(subsamples):
        train = data.subset(rows)
        run = short.model_copy(update={"seed": derive_seed(config.seed, TRAINING_KEY, ell)})
        try:
            log_a, se_a = _training_log_marginal(train, pattern_a, prior, run)
            log_b, se_b = _training_log_marginal(train, pattern_b, prior, run)
            value = log_a - log_b
        except (FactorSelectionError, np.linalg.LinAlgError) as exc:
            logging.debug(f"Training subsample {ell} failed: {exc}")
            value, se_a, se_b = np.nan, np.nan, np.nan
        values.append(value if np.isfinite(value) else None)
        errors.append(float(np.hypot(se_a, se_b)) if np.isfinite(value) else None)

    n_failed = sum(v is None for v in values)
    if n_failed >= MAX_FAILED_FRACTION * len(subsamples):
        raise NumericalError(f"training size too small ({n_failed} of {len(subsamples)} training subsamples failed)")
    if n_failed:
        logging.warning(f"{n_failed} of {len(subsamples)} training subsamples failed and were dropped")

    good = np.array([v for v in values if v is not None])
    good_se = np.array([s for s in errors if s is not None])
    if averaging == "geometric":
        log_corr = float(good.mean())
        spread = good.std(ddof=1) / np.sqrt(len(good)) if len(good) > 1 else 0.0
        mc = np.sqrt(np.sum(good_se**2)) / len(good)
    else:
        log_corr = _log_mean_exp(good)
        w = np.exp(good - good.max())
        spread = w.std(ddof=1) / np.sqrt(len(w)) / w.mean() if len(w) > 1 else 0.0
        mc = np.sqrt(np.sum((w * good_se) ** 2)) / w.sum()
    return TrainingCorrection(
        log_correction=log_corr,
        mc_standard_error=float(np.hypot(spread, mc)),
        n_train=len(subsamples[0]),
        n_subsamples=len(subsamples),
        n_failed=n_failed,
        averaging=averaging,
        log_bf_per_subsample=values,
    )


def _training_log_marginal(train: Dataset, pattern: PatternMatrix, prior: PriorSpec,
                           config: ChainConfig) -> Tuple[float, float]:
    estimate = candidate_log_marginal(train, pattern, prior, config, improper_ok=True)
    return estimate.log_marginal, estimate.mc_standard_error


def intrinsic_type1_bf(data: Dataset, pattern_k1: PatternMatrix, pattern_k2: PatternMatrix, prior: PriorSpec,
                       config: ChainConfig, n_train: Optional[int] = None,
                       n_subsamples: int = DEFAULT_SUBSAMPLES,
                       averaging: Averaging = "arithmetic") -> IntrinsicBayesFactor:
    """
    Arithmetic intrinsic Bayes factor of model 2 against model 1:

        log B21 = log B21^N(y) + log[(1/L) sum_l B12^N(y(l))]

    Returns:
        IntrinsicBayesFactor with both full-data estimates and the correction.
    """
    if n_train is None:
        n_train = default_training_size(max(pattern_k1.m, pattern_k2.m))
    e1 = candidate_log_marginal(data, pattern_k1, prior, config, improper_ok=True)
    e2 = candidate_log_marginal(data, pattern_k2, prior, config, improper_ok=True)
    correction = training_correction(data, pattern_k1, pattern_k2, prior, config, n_train, n_subsamples, averaging)
    full = e2.log_marginal - e1.log_marginal
    se = float(np.sqrt(e1.mc_standard_error**2 + e2.mc_standard_error**2 + correction.mc_standard_error**2))
    logging.info(f"Intrinsic log BF (m={pattern_k2.m} vs m={pattern_k1.m}): {full + correction.log_correction:.3f} (se {se:.3f})")
    return IntrinsicBayesFactor(
        log_bf=full + correction.log_correction,
        mc_standard_error=se,
        full_data_log_bf=full,
        correction=correction,
        estimate_1=e1,
        estimate_2=e2,
    )
