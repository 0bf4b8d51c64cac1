##################
## Type II selection: each inequality-constrained model against the
## unconstrained base model by the ratio of posterior to prior mass,
## pairwise Bayes factors and posterior model probabilities.
##################

import logging
from typing import List, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, Field
from scipy.special import logsumexp

from constraints.binding import BoundSystem
from encompassing.mass import MassEstimate, PhiMode, posterior_mass, prior_masses
from factor.errors import ModelError, UsageError
from sampler.gibbs import Chain

UNCONSTRAINED = "unconstrained"


class ModelRow(BaseModel):
    name: str
    source: Optional[str] = None
    prior_mass: MassEstimate
    posterior_mass: MassEstimate
    complexity: float = Field(..., description="Prior mass of the constrained region; smaller is more parsimonious.")
    log_bf_vs_unconstrained: Optional[float] = Field(None, description="log(posterior mass / prior mass); null when a mass is zero.")
    standard_error: Optional[float] = Field(None, description="Delta-method standard error of the log Bayes factor.")
    prior_odds: float
    posterior_probability: Optional[float] = Field(None, description="Null when the model is excluded for lack of prior mass.")
    flags: List[str] = Field(default_factory=list)


class Type2Report(BaseModel):
    models: List[ModelRow]
    pairwise_log_bf: List[List[Optional[float]]] = Field(..., description="Entry [a][b] is log BF of model a against model b.")
    pairwise_standard_error: List[List[Optional[float]]]
    phi_mode: PhiMode
    n_prior_draws: int
    prior_seed: int
    n_posterior_draws: int
    monotonicity_violations: List[str] = Field(default_factory=list)
    flags: List[str] = Field(default_factory=list)

    @property
    def model_names(self) -> List[str]:
        return [row.name for row in self.models]

    def row(self, name: str) -> ModelRow:
        return next(r for r in self.models if r.name == name)

    def best(self) -> str:
        """Name of the model with the highest posterior probability."""
        ranked = [r for r in self.models if r.posterior_probability is not None]
        return max(ranked, key=lambda r: r.posterior_probability).name


def _log_bf(prior: MassEstimate, post: MassEstimate):
    if prior.proportion == 0 or post.proportion == 0:
        return None, None
    log_bf = float(np.log(post.proportion) - np.log(prior.proportion))
    se = float(np.hypot(post.standard_error / post.proportion, prior.standard_error / prior.proportion))
    return log_bf, se


def _full_mass(n_draws: int) -> MassEstimate:
    return MassEstimate(proportion=1.0, n_draws=n_draws, n_satisfied=n_draws, standard_error=0.0, effective_draws=float(n_draws))


def _check_monotone(bounds: Sequence[BoundSystem], rows: List[ModelRow]) -> List[str]:
    """A system refining another must not get more prior or posterior mass."""
    violations = []
    for a, row_a in zip(bounds, rows):
        for b, row_b in zip(bounds, rows):
            if a is b or not a.refines(b):
                continue
            for label in ("prior_mass", "posterior_mass"):
                if getattr(row_a, label).n_satisfied > getattr(row_b, label).n_satisfied:
                    violations.append(f"{label} of '{a.name}' exceeds that of '{b.name}' which it refines")
    for v in violations:
        logging.error(f"Monotonicity violated: {v}")
    return violations


def type2_bayes_factors(bounds: Sequence[BoundSystem], chains: Union[Chain, Sequence[Chain]],
                        phi_mode: PhiMode = PhiMode.IDENTITY, n_prior_draws: int = 100_000,
                        prior_seed: int = 20250101, prior_odds: Optional[Sequence[float]] = None,
                        max_workers: int = 1) -> Type2Report:
    """
    Encompassing-prior Bayes factors of every bound system. The unconstrained
    base model is the first row with Bayes factor 1.

    Args:
        bounds: constraint systems bound to the chains' base pattern.
        chains: UCFM chains run under the encompassing ball prior.
        phi_mode: how Phi is treated when drawing prior loadings.
        n_prior_draws: Monte Carlo draws for every prior mass.
        prior_seed: seed of the prior draws (shared by all systems).
        prior_odds: one positive weight per row, unconstrained first; equal by default.

    Returns:
        Type2Report with per-model rows, pairwise log Bayes factors and
        posterior model probabilities.
    """
    chains = [chains] if isinstance(chains, Chain) else list(chains)
    if not chains:
        raise ModelError("type II Bayes factors need at least one chain")
    pattern = chains[0].pattern
    n_rows = len(bounds) + 1
    if prior_odds is None:
        prior_odds = [1.0] * n_rows
    if len(prior_odds) != n_rows or any(not w > 0 for w in prior_odds):
        raise UsageError(f"prior_odds needs {n_rows} positive weights (unconstrained first)")
    odds = np.asarray(prior_odds, dtype=float) / np.sum(prior_odds)

    priors = prior_masses(bounds, pattern, phi_mode, n_prior_draws, prior_seed, max_workers)
    posteriors = [posterior_mass(b, chains) for b in bounds]
    n_post = posteriors[0].n_draws if posteriors else min(c.n_draws for c in chains) * len(chains)

    rows = [ModelRow(
        name=UNCONSTRAINED,
        prior_mass=_full_mass(n_prior_draws),
        posterior_mass=_full_mass(n_post),
        complexity=1.0,
        log_bf_vs_unconstrained=0.0,
        standard_error=0.0,
        prior_odds=float(odds[0]),
    )]
    for bound, prior, post, w in zip(bounds, priors, posteriors, odds[1:]):
        log_bf, se = _log_bf(prior, post)
        row = ModelRow(
            name=bound.name,
            source=bound.source,
            prior_mass=prior,
            posterior_mass=post,
            complexity=prior.proportion,
            log_bf_vs_unconstrained=log_bf,
            standard_error=se,
            prior_odds=float(w),
            flags=list(prior.flags),
        )
        if prior.proportion == 0:
            row.flags.append("excluded from model probabilities: zero prior mass")
        elif post.proportion == 0:
            row.flags.append("no posterior draw satisfies the system")
        rows.append(row)

    # probabilities proportional to prior odds times BF, over models with prior mass
    included = [r for r in rows if r.prior_mass.proportion > 0]
    log_weights = np.array([
        np.log(r.prior_odds) + (r.log_bf_vs_unconstrained if r.log_bf_vs_unconstrained is not None else -np.inf)
        for r in included
    ])
    probs = np.exp(log_weights - logsumexp(log_weights))
    for r, prob in zip(included, probs):
        r.posterior_probability = float(prob)

    pairwise, pairwise_se = [], []
    for a in rows:
        line, line_se = [], []
        for b in rows:
            if a is b:
                line.append(0.0)
                line_se.append(0.0)
            elif a.log_bf_vs_unconstrained is None or b.log_bf_vs_unconstrained is None:
                line.append(None)
                line_se.append(None)
            else:
                line.append(a.log_bf_vs_unconstrained - b.log_bf_vs_unconstrained)
                line_se.append(float(np.hypot(a.standard_error, b.standard_error)))
        pairwise.append(line)
        pairwise_se.append(line_se)

    report = Type2Report(
        models=rows,
        pairwise_log_bf=pairwise,
        pairwise_standard_error=pairwise_se,
        phi_mode=phi_mode,
        n_prior_draws=n_prior_draws,
        prior_seed=prior_seed,
        n_posterior_draws=n_post,
        monotonicity_violations=_check_monotone(bounds, rows[1:]),
        flags=sorted({f for r in rows for f in r.flags}),
    )
    for r in rows:
        if r.posterior_probability is not None:
            logging.info(f"Model '{r.name}': posterior probability {r.posterior_probability:.4f}")
    return report
