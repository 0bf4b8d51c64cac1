##################
## Systematic-scan Gibbs sampler for the factor model:
## scores -> loading rows -> unique variances -> factor correlations.
##################

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from factor.algebra import log_likelihood
from factor.ball import RowBall
from factor.errors import ModelError, NumericalError, UsageError
from factor.model import Dataset, FactorModel, PatternMatrix
from factor.seeding import generator
from sampler.conditionals import (correlation_conditional_log_density, layout_conditionals, normal_log_density,
                                  row_layouts, score_posterior, slice_correlations)
from sampler.priors import ChainConfig, PriorKind, PriorSpec, log_prior

MAX_REJECTIONS = 1000
PROPOSAL_BATCH = 16
PROGRESS_EVERY = 1000


@dataclass
class Chain:
    """
    Retained draws of one chain, stored as stacked arrays
    (loadings G x p x m, psi G x p, phi G x m x m) with provenance.
    """
    loadings: np.ndarray
    psi: np.ndarray
    phi: np.ndarray
    log_kernel: np.ndarray
    pattern: PatternMatrix
    prior: Optional[PriorSpec] = None
    config: Optional[ChainConfig] = None
    chain_index: int = 0
    score_ftf: Optional[np.ndarray] = None
    score_fty: Optional[np.ndarray] = None
    factor_score_draws: Optional[np.ndarray] = None
    sampler_stats: Dict[str, float] = field(default_factory=dict)

    @classmethod
    def from_arrays(cls, loadings, psi=None, phi=None, log_kernel=None, pattern: Optional[PatternMatrix] = None,
                    prior: Optional[PriorSpec] = None, chain_index: int = 0) -> "Chain":
        """Wrap externally produced draws (imports, constructed test chains)."""
        loadings = np.asarray(loadings, dtype=float)
        if loadings.ndim == 2:
            loadings = loadings[:, :, None]
        g, p, m = loadings.shape
        psi = np.ones((g, p)) if psi is None else np.asarray(psi, dtype=float)
        phi = np.broadcast_to(np.eye(m), (g, m, m)).copy() if phi is None else np.asarray(phi, dtype=float)
        log_kernel = np.zeros(g) if log_kernel is None else np.asarray(log_kernel, dtype=float)
        pattern = PatternMatrix.all_free(p, m) if pattern is None else pattern
        return cls(loadings, psi, phi, log_kernel, pattern, prior, None, chain_index)

    @property
    def n_draws(self) -> int:
        return self.loadings.shape[0]

    @property
    def p(self) -> int:
        return self.loadings.shape[1]

    @property
    def m(self) -> int:
        return self.loadings.shape[2]

    def model(self, g: int) -> FactorModel:
        return FactorModel(self.loadings[g], self.psi[g], self.phi[g], check=False)

    @property
    def draws(self) -> List[FactorModel]:
        return [self.model(g) for g in range(self.n_draws)]


def _check_inputs(data: Dataset, pattern: PatternMatrix, prior: PriorSpec):
    if data.p != pattern.p:
        raise UsageError(f"data has {data.p} items but the pattern has {pattern.p} rows")
    if prior.kind == PriorKind.ENCOMPASSING_BALL and not data.standardized:
        raise ModelError("the encompassing ball prior needs standardized data")
    for j, rows in enumerate(pattern.anchors()):
        if len(rows) > 1:
            raise ModelError(f"column {j + 1} has {len(rows)} anchors; the sampler needs at most one")
        if rows and np.any(pattern.values[:, j] != 0):
            raise ModelError(f"column {j + 1} mixes an anchor with nonzero fixed values; reflection would break them")


class _Sweep:
    """Mutable state of one chain; one instance per run_chain call."""

    def __init__(self, data: Dataset, pattern: PatternMatrix, prior: PriorSpec, config: ChainConfig,
                 chain_index: int, hold_psi: Optional[np.ndarray]):
        self.data = data
        self.y = data.values
        self.pattern = pattern
        self.prior = prior
        self.config = config
        self.chain_index = chain_index
        self.rng = generator(config.seed, chain_index)
        self.n, self.p = data.values.shape
        self.m = pattern.m
        self.layouts = row_layouts(pattern)
        self.prior_precision = prior.loading_precision()
        self.psi_shape, self.psi_rate = prior.psi_hyperparameters()
        self.anchor_rows = [rows[0] if rows else None for rows in pattern.anchors()]
        self.sample_phi = prior.oblique and self.m >= 2
        self.ball = prior.kind == PriorKind.ENCOMPASSING_BALL
        self.hold_psi = None if hold_psi is None else np.asarray(hold_psi, dtype=float)
        self.stats = {"rejections": 0, "fallback_steps": 0, "fallback_accepted": 0}
        self._init_state()

    def _init_state(self):
        pattern = self.pattern
        free = pattern.free_mask
        if self.config.dispersed_starts:
            start = self.rng.standard_normal(pattern.shape)
        else:
            start = np.where(pattern.anchor_mask, 0.5, 0.0)
        self.lam = pattern.fill(start)
        self.lam[pattern.anchor_mask] = np.abs(self.lam[pattern.anchor_mask]) + 1e-3
        self.phi = np.eye(self.m)
        if self.ball:
            for i in range(self.p):
                ball = RowBall.for_row(free[i], pattern.values[i], self.phi)
                if ball.dim == 0:
                    continue
                x = self.lam[i, free[i]]
                while not ball.contains(x)[0]:
                    x = ball.center + 0.5 * (x - ball.center)
                self.lam[i, free[i]] = x
        if self.hold_psi is not None:
            self.psi = self.hold_psi.copy()
        elif self.n >= 2:
            self.psi = np.maximum(0.5 * self.y.var(axis=0, ddof=1), 1e-3)
        else:
            self.psi = np.full(self.p, 0.5)

    def step(self, iteration: int):
        self._draw_scores()
        self._draw_loadings()
        self._reflect_anchors()
        if self.hold_psi is None:
            self._draw_psi(iteration)
        if self.sample_phi:
            self._draw_phi()

    def _draw_scores(self):
        if self.m == 0:
            self.scores = np.zeros((self.n, 0))
        else:
            covariance, weights = score_posterior(self.lam, self.psi, self.phi)
            chol = np.linalg.cholesky(covariance)
            self.scores = self.y @ weights.T + self.rng.standard_normal((self.n, self.m)) @ chol.T
        self.ftf = self.scores.T @ self.scores
        self.fty = self.scores.T @ self.y

    def _draw_loadings(self):
        for layout in self.layouts:
            means, precisions = layout_conditionals(layout, self.ftf, self.fty, self.psi, self.prior_precision)
            try:
                chol = np.linalg.cholesky(precisions)
            except np.linalg.LinAlgError:
                raise NumericalError(
                    f"degenerate conditional; check rank diagnostics (items {(layout.rows + 1).tolist()})"
                )
            if self.ball:
                for r, row in enumerate(layout.rows):
                    self.lam[row, layout.free] = self._ball_row(row, means[r], precisions[r], chol[r])
            else:
                z = self.rng.standard_normal(means.shape)
                # mean + L^-T z has covariance (L L')^-1
                draws = means + np.linalg.solve(np.swapaxes(chol, 1, 2), z[:, :, None])[:, :, 0]
                self.lam[np.ix_(layout.rows, layout.free)] = draws

    def _ball_row(self, row: int, mean: np.ndarray, precision: np.ndarray, chol: np.ndarray) -> np.ndarray:
        free = self.pattern.free_mask[row]
        ball = RowBall.for_row(free, self.pattern.values[row], self.phi)
        rejected = 0
        while rejected < MAX_REJECTIONS:
            z = self.rng.standard_normal((PROPOSAL_BATCH, len(mean)))
            proposals = mean + np.linalg.solve(chol.T, z.T).T
            inside = np.flatnonzero(ball.contains(proposals))
            if len(inside):
                rejected += int(inside[0])
                self.stats["rejections"] += int(inside[0])
                return proposals[inside[0]]
            rejected += PROPOSAL_BATCH
            self.stats["rejections"] += PROPOSAL_BATCH
        # independence Metropolis step with a uniform-ball proposal
        self.stats["fallback_steps"] += 1
        current = self.lam[row, free]
        proposal = ball.sample(self.rng, 1)[0]
        if not ball.contains(current)[0]:
            self.stats["fallback_accepted"] += 1
            return proposal
        log_ratio = (normal_log_density(proposal[None, :], mean[None, :], precision[None])[0]
                     - normal_log_density(current[None, :], mean[None, :], precision[None])[0])
        if np.log(self.rng.random()) < log_ratio:
            self.stats["fallback_accepted"] += 1
            return proposal
        return current

    def _reflect_anchors(self):
        signs = np.ones(self.m)
        for j, row in enumerate(self.anchor_rows):
            if row is not None and self.lam[row, j] < 0:
                signs[j] = -1.0
        if np.all(signs > 0):
            return
        # a column sign flip with matching scores and Phi leaves the posterior unchanged
        self.lam *= signs
        self.scores *= signs
        self.phi = self.phi * signs[:, None] * signs[None, :]
        self.ftf = self.ftf * signs[:, None] * signs[None, :]
        self.fty = self.fty * signs[:, None]

    def _draw_psi(self, iteration: int):
        residual = self.y - self.scores @ self.lam.T
        rss = np.sum(residual**2, axis=0)
        shape = self.psi_shape + 0.5 * self.n
        rate = self.psi_rate + 0.5 * rss
        self.psi = rate / self.rng.gamma(shape, 1.0, size=self.p)
        if not np.all(np.isfinite(self.psi)) or not np.all(self.psi > 0):
            raise NumericalError(f"chain {self.chain_index} diverged at iteration {iteration + 1}", iteration=iteration + 1)

    def _draw_phi(self):
        def log_target(phi: np.ndarray) -> float:
            value = correlation_conditional_log_density(phi, self.ftf, self.n, self.m + 2)
            if self.ball and np.isfinite(value):
                # the ball prior on the loadings depends on Phi through the row volumes
                value += self._ball_log_density(phi)
            return value

        self.phi = slice_correlations(self.phi, log_target, self.rng)

    def _ball_log_density(self, phi: np.ndarray) -> float:
        """Log of prod_i 1 / vol_i(Phi) when every row lies in its ball, else -inf."""
        free = self.pattern.free_mask
        total = 0.0
        for i in range(self.p):
            try:
                ball = RowBall.for_row(free[i], self.pattern.values[i], phi)
            except ModelError:
                return -np.inf
            if ball.dim == 0:
                continue
            if not ball.contains(self.lam[i, free[i]])[0]:
                return -np.inf
            total -= ball.log_volume()
        return total

    def kernel(self, iteration: int) -> float:
        model = FactorModel(self.lam, self.psi, self.phi, check=False)
        try:
            value = log_likelihood(self.data, model) + log_prior(model, self.pattern, self.prior)
        except NumericalError:
            value = np.nan
        if not np.isfinite(value):
            raise NumericalError(f"chain {self.chain_index} diverged at iteration {iteration + 1}", iteration=iteration + 1)
        return value


def run_chain(data: Dataset, pattern: PatternMatrix, prior: PriorSpec, config: ChainConfig,
              chain_index: int = 0, hold_psi: Optional[np.ndarray] = None) -> Chain:
    """
    Run one Gibbs chain. Deterministic given (data, pattern, prior, config,
    chain_index). `hold_psi` fixes the unique variances (reduced runs).
    """
    _check_inputs(data, pattern, prior)
    sweep = _Sweep(data, pattern, prior, config, chain_index, hold_psi)
    g_total = config.retained_per_chain
    p, m = pattern.shape
    loadings = np.empty((g_total, p, m))
    psi = np.empty((g_total, p))
    phi = np.empty((g_total, m, m))
    log_kernel = np.empty(g_total)
    keep_stats = config.retain_scores == "stats"
    keep_full = config.retain_scores == "full"
    ftf = np.empty((g_total, m, m)) if keep_stats or keep_full else None
    fty = np.empty((g_total, m, p)) if keep_stats or keep_full else None
    scores = np.empty((g_total, data.n, m)) if keep_full else None

    g = 0
    for t in range(config.n_iter):
        sweep.step(t)
        if (t + 1) % PROGRESS_EVERY == 0:
            logging.debug(f"Chain {chain_index}: {t + 1}/{config.n_iter} sweeps")
        if t < config.burn_in or (t - config.burn_in + 1) % config.thin != 0 or g >= g_total:
            continue
        loadings[g] = sweep.lam
        psi[g] = sweep.psi
        phi[g] = sweep.phi
        log_kernel[g] = sweep.kernel(t)
        if ftf is not None:
            ftf[g] = sweep.ftf
            fty[g] = sweep.fty
        if scores is not None:
            scores[g] = sweep.scores
        g += 1

    if sweep.stats["fallback_steps"]:
        logging.debug(f"Chain {chain_index}: {sweep.stats['fallback_steps']} uniform-ball fallback steps")
    return Chain(
        loadings=loadings,
        psi=psi,
        phi=phi,
        log_kernel=log_kernel,
        pattern=pattern,
        prior=prior,
        config=config,
        chain_index=chain_index,
        score_ftf=ftf,
        score_fty=fty,
        factor_score_draws=scores,
        sampler_stats=dict(sweep.stats),
    )


def run_chains(data: Dataset, pattern: PatternMatrix, prior: PriorSpec, config: ChainConfig,
               hold_psi: Optional[np.ndarray] = None) -> List[Chain]:
    """`config.n_chains` independent chains, returned in chain order."""
    def one(c: int) -> Chain:
        return run_chain(data, pattern, prior, config, chain_index=c, hold_psi=hold_psi)

    if config.max_workers > 1 and config.n_chains > 1:
        with ThreadPoolExecutor(max_workers=config.max_workers) as pool:
            return list(pool.map(one, range(config.n_chains)))
    return [one(c) for c in range(config.n_chains)]


def pooled(chains: List[Chain], attribute: str = "loadings") -> np.ndarray:
    """Concatenate one draw array over chains."""
    return np.concatenate([getattr(c, attribute) for c in chains], axis=0)
