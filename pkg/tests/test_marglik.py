import numpy as np
import pytest
from scipy import stats
from scipy.special import gammaln, logsumexp

from conftest import two_factor_truth
from factor.algebra import generate_synthetic, standardize
from factor.errors import ModelError, UsageError
from factor.model import CellKind, Dataset, FactorModel, PatternMatrix, TrueModelSpec
from marglik.candidate import candidate_log_marginal, log_average
from marglik.dimensionality import select_dimensionality
from marglik.intrinsic import (default_training_size, intrinsic_type1_bf, training_config, training_correction,
                               training_subsamples)
from marglik.regularity import assess_regularity
from marglik.symmetry import (align_draws, align_to_reference, group_size, pattern_symmetries,
                              signed_permutations)
from sampler.gibbs import Chain, run_chains
from sampler.priors import ChainConfig, PriorSpec

TINY = ChainConfig(n_iter=300, burn_in=100, n_chains=2, seed=17)


def test_log_average_known_values():
    value, se = log_average(np.full(100, -3.0))
    assert value == pytest.approx(-3.0)
    assert se == 0.0
    value, _ = log_average(np.log(np.array([1.0, 3.0])))
    assert value == pytest.approx(np.log(2.0))


def test_group_size_and_identity_first():
    assert group_size(2) == 8
    assert group_size(3) == 48
    perms = signed_permutations(2)
    assert len(perms) == 8
    assert perms[0].is_identity


def test_pattern_symmetries(two_factor_pattern):
    assert len(pattern_symmetries(PatternMatrix.all_free(4, 2))) == 8
    # the zeros at (2,2) and (6,1) rule out the column swap
    symmetries = pattern_symmetries(two_factor_pattern)
    assert len(symmetries) == 4
    assert all(g.perm == (0, 1) for g in symmetries)


def test_align_recovers_signed_permutation(rng):
    reference = rng.normal(size=(6, 3))
    for g in signed_permutations(3)[::7]:
        moved = g.apply(reference) + 0.01 * rng.normal(size=(6, 3))
        back = align_to_reference(moved, reference)
        np.testing.assert_allclose(back.apply(moved), reference, atol=0.05)


def test_align_draws_moves_phi_with_loadings():
    reference = np.array([[0.8, 0.0], [0.0, 0.7], [0.5, 0.4]])
    phi = np.array([[1.0, 0.3], [0.3, 1.0]])
    swapped = reference[:, [1, 0]] * np.array([1.0, -1.0])
    aligned, aligned_phi = align_draws(swapped[None], reference, phi=phi[None])
    np.testing.assert_allclose(aligned[0], reference)
    assert aligned_phi[0, 0, 1] == pytest.approx(-0.3)


def test_candidate_matches_closed_form_without_factors():
    data = standardize(generate_synthetic(TrueModelSpec(FactorModel(np.zeros((3, 0)), np.ones(3)), 40, 2)))
    a, b = 2.0, 1.5
    prior = PriorSpec.conjugate(ig_shape=a, ig_rate=b)
    estimate = candidate_log_marginal(data, PatternMatrix.all_free(3, 0), prior, TINY)
    s = np.sum(data.values**2, axis=0)
    n = data.n
    expected = np.sum(a * np.log(b) - gammaln(a) + gammaln(a + n / 2) - (a + n / 2) * np.log(b + s / 2)
                      - n / 2 * np.log(2 * np.pi))
    assert estimate.log_marginal == pytest.approx(expected, abs=1e-8)
    assert estimate.mc_standard_error == 0.0


def test_candidate_rejects_priors_it_cannot_normalize(one_factor_data):
    pattern = PatternMatrix.efa(4, 1)
    with pytest.raises(ModelError, match="training-sample"):
        candidate_log_marginal(one_factor_data, pattern, PriorSpec.improper(), TINY)
    with pytest.raises(ModelError):
        candidate_log_marginal(one_factor_data, pattern, PriorSpec.ball(), TINY)


def test_candidate_one_factor_breakdown(one_factor_data):
    estimate = candidate_log_marginal(one_factor_data, PatternMatrix.efa(4, 1), PriorSpec.conjugate(), TINY)
    parts = estimate.ordinate_breakdown
    assert estimate.symmetrization == "ExactSum"
    assert parts.group_size == 2
    assert np.isfinite(estimate.log_marginal)
    assert estimate.log_marginal == pytest.approx(
        parts.log_likelihood + parts.log_prior + parts.phi_log_prior
        - parts.loading_ordinate - parts.psi_ordinate - parts.phi_ordinate
    )
    # the anchor leaves a single mode, so summing over images changes little
    assert parts.loading_image_sum >= parts.loading_single_mode
    assert estimate.theta_star.to_model().loadings[0, 0] > 0


def test_candidate_additive_approximation(one_factor_data):
    exact = candidate_log_marginal(one_factor_data, PatternMatrix.efa(4, 1), PriorSpec.conjugate(), TINY)
    approx = candidate_log_marginal(one_factor_data, PatternMatrix.efa(4, 1), PriorSpec.conjugate(), TINY,
                                    symmetrization="AdditiveApprox")
    assert approx.symmetrization == "AdditiveApprox"
    assert approx.log_marginal == pytest.approx(exact.log_marginal, abs=0.1)


def test_additive_approximation_two_factors(two_factor_pattern):
    data = standardize(generate_synthetic(TrueModelSpec(two_factor_truth(), 500, 31)))
    config = ChainConfig(n_iter=1000, burn_in=300, n_chains=2, seed=8)
    exact = candidate_log_marginal(data, two_factor_pattern, PriorSpec.conjugate(), config)
    approx = candidate_log_marginal(data, two_factor_pattern, PriorSpec.conjugate(), config,
                                    symmetrization="AdditiveApprox")
    assert exact.ordinate_breakdown.group_size == 4
    assert approx.log_marginal == pytest.approx(exact.log_marginal, abs=0.1)


def test_training_subsamples():
    first = training_subsamples(50, 6, 10, seed=3)
    again = training_subsamples(50, 6, 10, seed=3)
    assert len(first) == 10
    assert all(len(rows) == 6 and len(set(rows.tolist())) == 6 for rows in first)
    assert all(np.array_equal(a, b) for a, b in zip(first, again))
    with pytest.raises(UsageError):
        training_subsamples(6, 6, 10, seed=3)
    with pytest.raises(UsageError):
        training_subsamples(6, 0, 10, seed=3)


def test_training_defaults():
    assert default_training_size(2) == 5
    short = training_config(ChainConfig(n_iter=1000, burn_in=400, n_chains=3))
    assert short.n_chains == 1 and short.n_iter == 500 and short.burn_in == 200


@pytest.mark.parametrize("averaging", ["arithmetic", "geometric"])
def test_intrinsic_bf_prefers_the_factor(one_factor_data, averaging):
    result = intrinsic_type1_bf(one_factor_data, PatternMatrix.efa(4, 0), PatternMatrix.efa(4, 1),
                                PriorSpec.improper(), TINY, n_train=10, n_subsamples=10, averaging=averaging)
    assert result.log_bf > 10
    assert result.correction.n_subsamples == 10
    assert result.correction.averaging == averaging
    assert np.isfinite(result.mc_standard_error)


@pytest.mark.parametrize("averaging", ["arithmetic", "geometric"])
def test_intrinsic_bf_of_a_model_against_itself_is_zero(one_factor_data, averaging):
    pattern = PatternMatrix.efa(4, 1)
    result = intrinsic_type1_bf(one_factor_data, pattern, pattern, PriorSpec.improper(), TINY,
                                n_train=10, n_subsamples=5, averaging=averaging)
    assert result.full_data_log_bf == 0.0
    assert result.correction.log_correction == pytest.approx(0.0, abs=1e-12)
    assert result.log_bf == pytest.approx(0.0, abs=1e-12)


def test_training_correction_needs_subsamples(one_factor_data):
    with pytest.raises(UsageError, match="training subsample"):
        training_correction(one_factor_data, PatternMatrix.efa(4, 0), PatternMatrix.efa(4, 1),
                            PriorSpec.improper(), TINY, n_train=10, n_subsamples=0)
    with pytest.raises(UsageError):
        training_correction(one_factor_data, PatternMatrix.efa(4, 0), PatternMatrix.efa(4, 1),
                            PriorSpec.improper(), TINY, n_train=10, subsamples=[])


def test_regularity_flags_empty_column(rng):
    lam = np.zeros((2, 300, 5, 2))
    lam[..., 0] = 0.7 + 0.02 * rng.normal(size=(2, 300, 5))
    lam[..., 1] = 0.02 * rng.normal(size=(2, 300, 5))
    pattern = PatternMatrix.efa(5, 2)
    chains = [Chain.from_arrays(np.abs(lam[c]), log_kernel=rng.normal(size=300), pattern=pattern, chain_index=c)
              for c in range(2)]
    report = assess_regularity(chains, pattern)
    assert report.multimodality_flag
    assert report.singular_value_ratio < 0.1
    assert report.near_zero_mass[1] > 0.05


def test_regularity_passes_clean_fit(one_factor_data):
    pattern = PatternMatrix.efa(4, 1)
    chains = run_chains(one_factor_data, pattern, PriorSpec.improper(), TINY)
    report = assess_regularity(chains, pattern)
    assert not report.multimodality_flag
    assert report.singular_value_ratio == 1.0


def test_dimensionality_argument_checks(one_factor_data):
    with pytest.raises(UsageError):
        select_dimensionality(one_factor_data, 0, PriorSpec.improper(), TINY)
    with pytest.raises(UsageError):
        select_dimensionality(one_factor_data, 5, PriorSpec.improper(), TINY)


def test_dimensionality_selects_one_factor(one_factor_data):
    selection = select_dimensionality(one_factor_data, 1, PriorSpec.improper(), TINY, n_train=10, n_subsamples=10)
    assert selection.selected_k == 1
    assert [r.k for r in selection.records] == [0, 1]
    assert selection.log_bf_consecutive[0].log_bf > 10
    assert len(selection.chains_for(1)) == 2
    record = selection.record(1)
    assert record.diagnostics.n_chains == 2
    assert "L[1,1]" in record.diagnostics.rhat
    assert len(record.posterior.loadings) == 4
    assert selection.record(0).posterior.loadings == []


@pytest.mark.slow
def test_dimensionality_two_factor_truth():
    lam = np.zeros((8, 2))
    lam[:4, 0] = [0.8, 0.7, 0.7, 0.6]
    lam[4:, 1] = [0.8, 0.7, 0.7, 0.6]
    truth = FactorModel(lam, 1.0 - np.sum(lam**2, axis=1))
    data = standardize(generate_synthetic(TrueModelSpec(truth, 400, 21)))
    config = ChainConfig(n_iter=3000, burn_in=1000, n_chains=2, seed=5)
    selection = select_dimensionality(data, 3, PriorSpec.improper(), config, n_subsamples=10)
    assert selection.selected_k == 2
    assert selection.record(2).admissible


@pytest.mark.slow
def test_candidate_estimates_agree_across_seeds(one_factor_data):
    pattern = PatternMatrix(np.array([[CellKind.ANCHOR], [CellKind.FREE], [CellKind.FREE], [CellKind.FREE]]))
    runs = [candidate_log_marginal(one_factor_data, pattern, PriorSpec.conjugate(),
                                   ChainConfig(n_iter=5000, burn_in=1000, seed=s)) for s in (1, 2)]
    se = np.hypot(runs[0].mc_standard_error, runs[1].mc_standard_error)
    assert abs(runs[0].log_marginal - runs[1].log_marginal) < 0.3 + 4 * se


def importance_log_marginal(data: Dataset, chains, prior: PriorSpec, n_draws: int, seed: int):
    """
    One-factor log marginal likelihood by importance sampling on (lambda, log psi),
    with a Student-t proposal fitted to the anchored posterior draws.
    """
    lam = np.concatenate([c.loadings[:, :, 0] for c in chains])
    psi = np.concatenate([c.psi for c in chains])
    x = np.hstack([lam, np.log(psi)])
    proposal = stats.multivariate_t(loc=x.mean(axis=0), shape=2.0 * np.cov(x.T), df=5)
    draws = proposal.rvs(size=n_draws, random_state=np.random.default_rng(seed))
    p = data.p
    lam_d, psi_d = draws[:, :p], np.exp(draws[:, p:])

    sigma = lam_d[:, :, None] * lam_d[:, None, :] + psi_d[:, :, None] * np.eye(p)
    _, log_det = np.linalg.slogdet(sigma)
    s = data.values.T @ data.values
    trace = np.einsum("gij,ji->g", np.linalg.inv(sigma), s)
    loglik = -0.5 * (data.n * (p * np.log(2 * np.pi) + log_det) + trace)
    shape, rate = prior.psi_hyperparameters()
    logprior = (stats.norm.logpdf(lam_d, scale=np.sqrt(prior.loading_prior_variance)).sum(axis=1)
                + stats.invgamma.logpdf(psi_d, a=shape, scale=rate).sum(axis=1))
    log_w = loglik + logprior + np.log(psi_d).sum(axis=1) - proposal.logpdf(draws)
    # the integrand is symmetric under lambda -> -lambda; the proposal covers the anchored half
    log_w = np.where(lam_d[:, 0] > 0, log_w, -np.inf)
    estimate = np.log(2.0) + logsumexp(log_w) - np.log(n_draws)
    w = np.exp(log_w - log_w.max())
    se = w.std() / np.sqrt(n_draws) / w.mean()
    return float(estimate), float(se)


@pytest.mark.slow
def test_candidate_matches_importance_sampling_one_factor():
    model = FactorModel(np.array([[0.8], [0.7], [0.6]]), np.array([0.36, 0.51, 0.64]))
    data = standardize(generate_synthetic(TrueModelSpec(model, 40, 19)))
    prior = PriorSpec.conjugate(loading_prior_variance=10.0, ig_shape=1.0, ig_rate=1.0)
    config = ChainConfig(n_iter=6000, burn_in=1000, n_chains=2, seed=23)
    pattern = PatternMatrix.efa(3, 1)
    estimate = candidate_log_marginal(data, pattern, prior, config)
    oracle, oracle_se = importance_log_marginal(data, run_chains(data, pattern, prior, config), prior, 200_000, 29)
    se = np.hypot(estimate.mc_standard_error, oracle_se)
    assert abs(estimate.log_marginal - oracle) < max(3 * se, 0.05)


@pytest.mark.slow
def test_candidate_error_shrinks_with_chain_length(one_factor_data):
    pattern = PatternMatrix.efa(4, 1)

    def mean_se(n_iter):
        return np.mean([
            candidate_log_marginal(one_factor_data, pattern, PriorSpec.conjugate(),
                                   ChainConfig(n_iter=n_iter, burn_in=200, n_chains=2, seed=s)).mc_standard_error
            for s in (3, 4, 5)
        ])

    # four times the retained draws should roughly halve the error
    assert mean_se(1200) / mean_se(4200) >= 1.5


@pytest.mark.slow
def test_intrinsic_bf_ignores_observation_order(one_factor_data):
    order = np.random.default_rng(41).permutation(one_factor_data.n)
    shuffled = Dataset(one_factor_data.values[order], one_factor_data.item_names, standardized=True)
    config = ChainConfig(n_iter=3000, burn_in=1000, n_chains=2, seed=13)

    def log_bf(data):
        return intrinsic_type1_bf(data, PatternMatrix.efa(4, 0), PatternMatrix.efa(4, 1), PriorSpec.improper(),
                                  config, n_train=10, n_subsamples=20)

    a, b = log_bf(one_factor_data), log_bf(shuffled)
    # the training subsamples differ, so the two agree only up to Monte Carlo error
    assert abs(a.log_bf - b.log_bf) < 3 * np.hypot(a.mc_standard_error, b.mc_standard_error)


@pytest.mark.slow
def test_dimensionality_selects_zero_factors_on_noise():
    noise = FactorModel(np.zeros((6, 0)), np.ones(6))
    data = standardize(generate_synthetic(TrueModelSpec(noise, 500, 43)))
    config = ChainConfig(n_iter=2000, burn_in=500, n_chains=2, seed=47)
    selection = select_dimensionality(data, 2, PriorSpec.improper(), config, n_subsamples=10)
    assert selection.selected_k == 0


@pytest.mark.slow
def test_dimensionality_recovers_three_factors_and_flags_overfactoring():
    lam = np.zeros((9, 3))
    for j in range(3):
        lam[3 * j:3 * j + 3, j] = 0.7
    truth = FactorModel(lam, np.full(9, 0.51))
    selected, flagged = 0, 0
    for seed in range(10):
        data = standardize(generate_synthetic(TrueModelSpec(truth, 500, 100 + seed)))
        config = ChainConfig(n_iter=2000, burn_in=500, n_chains=2, seed=200 + seed)
        selection = select_dimensionality(data, 5, PriorSpec.improper(), config, n_subsamples=10)
        selected += selection.selected_k == 3
        regularity = selection.record(5).regularity
        flagged += regularity is not None and regularity.multimodality_flag
    assert selected >= 9
    assert flagged >= 9
