##################
## Type I selection: evaluate k = 0..k_max exploratory models, put their
## improper-prior marginals on a common scale with the training-sample
## correction against k = 0, and select the best admissible k.
##################

import logging
from typing import Dict, List, Optional

import numpy as np
from pydantic import BaseModel, Field, PrivateAttr

from factor.errors import FactorSelectionError, ModelError, UsageError
from factor.model import Dataset, PatternMatrix
from factor.seeding import derive_seed
from marglik.candidate import MarglikEstimate, candidate_with_chains
from marglik.intrinsic import (DEFAULT_SUBSAMPLES, Averaging, TrainingCorrection, default_training_size,
                               training_correction, training_subsamples)
from marglik.regularity import RegularityReport, RegularityThresholds, assess_regularity
from sampler.diagnostics import Diagnostics, PosteriorSummary, diagnostics, posterior_summary
from sampler.gibbs import Chain
from sampler.priors import ChainConfig, PhiPrior, PriorSpec

DIMENSION_KEY = 301


class DimensionRecord(BaseModel):
    k: int
    estimate: Optional[MarglikEstimate] = Field(None, description="Full-data candidate estimate under the improper prior.")
    correction: Optional[TrainingCorrection] = Field(None, description="Training-sample correction against k = 0.")
    regularity: Optional[RegularityReport] = None
    diagnostics: Optional[Diagnostics] = Field(None, description="Convergence diagnostics of the full-data chains.")
    posterior: Optional[PosteriorSummary] = Field(None, description="Posterior summary of the full-data chains.")
    log_marginal: Optional[float] = Field(None, description="Corrected log marginal on the scale of the k = 0 model.")
    standard_error: Optional[float] = None
    admissible: bool = False
    reasons: List[str] = Field(default_factory=list)


class ConsecutiveBayesFactor(BaseModel):
    k_from: int
    k_to: int
    log_bf: Optional[float]
    standard_error: Optional[float]


class DimensionalitySelection(BaseModel):
    records: List[DimensionRecord]
    selected_k: int
    log_bf_consecutive: List[ConsecutiveBayesFactor]
    thresholds: RegularityThresholds
    prior: PriorSpec
    chain: ChainConfig
    n_train: int
    n_subsamples: int
    averaging: Averaging

    _chains: Dict[int, List[Chain]] = PrivateAttr(default_factory=dict)

    def chains_for(self, k: int) -> List[Chain]:
        return self._chains.get(k, [])

    def record(self, k: int) -> DimensionRecord:
        return next(r for r in self.records if r.k == k)


def _evaluate(data: Dataset, k: int, prior: PriorSpec, config: ChainConfig, thresholds: RegularityThresholds,
              subsamples, n_train: int, averaging: Averaging):
    pattern = PatternMatrix.efa(data.p, k)
    run = config.model_copy(update={"seed": derive_seed(config.seed, DIMENSION_KEY, k), "dispersed_starts": True})
    record = DimensionRecord(k=k)
    chains: List[Chain] = []
    try:
        estimate, chains = candidate_with_chains(data, pattern, prior, run, improper_ok=True)
    except (FactorSelectionError, np.linalg.LinAlgError) as exc:
        record.reasons.append(f"estimation failed: {exc}")
        return record, chains
    record.estimate = estimate
    record.regularity = assess_regularity(chains, pattern, thresholds)
    record.diagnostics = diagnostics(chains)
    record.posterior = posterior_summary(chains)
    if record.regularity.multimodality_flag:
        record.reasons.extend(record.regularity.reasons)

    if k == 0:
        record.log_marginal = estimate.log_marginal
        record.standard_error = estimate.mc_standard_error
    else:
        try:
            record.correction = training_correction(
                data, PatternMatrix.efa(data.p, 0), pattern, prior, config, n_train,
                len(subsamples), averaging, subsamples=subsamples,
            )
        except (FactorSelectionError, np.linalg.LinAlgError) as exc:
            record.reasons.append(str(exc))
        else:
            record.log_marginal = estimate.log_marginal + record.correction.log_correction
            record.standard_error = float(np.hypot(estimate.mc_standard_error, record.correction.mc_standard_error))
    record.admissible = record.log_marginal is not None and not record.reasons
    return record, chains


def select_dimensionality(data: Dataset, k_max: int, prior: PriorSpec, config: ChainConfig,
                          thresholds: Optional[RegularityThresholds] = None, n_train: Optional[int] = None,
                          n_subsamples: int = DEFAULT_SUBSAMPLES,
                          averaging: Averaging = "arithmetic") -> DimensionalitySelection:
    """
    Run exploratory models for k = 0..k_max (Phi = I, positive diagonal
    anchors), flag rank-deficient fits, and pick the admissible k with the
    largest corrected log marginal likelihood.
    """
    if k_max < 1:
        raise UsageError("k_max must be at least 1")
    if k_max > data.p:
        raise UsageError(f"k_max = {k_max} exceeds the number of items ({data.p})")
    if prior.oblique:
        prior = prior.model_copy(update={"phi_prior": PhiPrior.FIXED_IDENTITY})
    thresholds = thresholds or RegularityThresholds()
    n_train = n_train or default_training_size(k_max)
    subsamples = training_subsamples(data.n, n_train, n_subsamples, config.seed)

    records: List[DimensionRecord] = []
    all_chains: Dict[int, List[Chain]] = {}
    for k in range(k_max + 1):
        logging.info(f"Evaluating the {k}-factor exploratory model")
        record, chains = _evaluate(data, k, prior, config, thresholds, subsamples, n_train, averaging)
        records.append(record)
        all_chains[k] = chains
        if record.log_marginal is not None:
            logging.info(f"k={k}: log marginal {record.log_marginal:.3f} (se {record.standard_error:.3f}), "
                         f"admissible={record.admissible}")

    admissible = [r for r in records if r.admissible]
    if not admissible:
        raise ModelError("no admissible dimensionality; inspect data")
    selected = max(admissible, key=lambda r: r.log_marginal)

    consecutive = []
    for a, b in zip(records[:-1], records[1:]):
        if a.log_marginal is None or b.log_marginal is None:
            consecutive.append(ConsecutiveBayesFactor(k_from=a.k, k_to=b.k, log_bf=None, standard_error=None))
        else:
            consecutive.append(ConsecutiveBayesFactor(
                k_from=a.k, k_to=b.k, log_bf=b.log_marginal - a.log_marginal,
                standard_error=float(np.hypot(a.standard_error, b.standard_error)),
            ))

    selection = DimensionalitySelection(
        records=records,
        selected_k=selected.k,
        log_bf_consecutive=consecutive,
        thresholds=thresholds,
        prior=prior,
        chain=config,
        n_train=n_train,
        n_subsamples=n_subsamples,
        averaging=averaging,
    )
    selection._chains = all_chains
    assert all(r.admissible for r in selection.records if r.k == selection.selected_k)
    logging.info(f"Selected k = {selection.selected_k}")
    return selection
