import numpy as np
import pytest
from scipy import integrate, stats
from scipy.special import logsumexp

from conftest import EXAMPLE_LOADINGS, LAMBDA1_TEXT, LAMBDA2_TEXT, two_factor_truth
from constraints.binding import bind
from constraints.parser import parse
from encompassing.bayes_factors import UNCONSTRAINED, type2_bayes_factors
from encompassing.mass import BELOW_RESOLUTION, PhiMode, posterior_mass, prior_mass, prior_masses, sample_prior_block
from factor.algebra import generate_synthetic, standardize
from factor.ball import row_quadratic
from factor.errors import ModelError, UsageError
from factor.model import CellKind, Dataset, FactorModel, PatternMatrix, TrueModelSpec
from sampler.gibbs import Chain, run_chains
from sampler.priors import BALL_PSI_RATE, BALL_PSI_SHAPE, ChainConfig, PriorSpec

N_PRIOR = 20_000
N_WEDGE = 100_000


def bound(text, pattern):
    return bind(parse(text), pattern)


def test_prior_block_respects_pattern_and_ball(two_factor_pattern, rng):
    draws = sample_prior_block(rng, two_factor_pattern, PhiMode.IDENTITY, 5000)
    assert draws.shape == (5000, 6, 2)
    assert np.all(draws[:, 1, 1] == 0.0) and np.all(draws[:, 5, 0] == 0.0)
    assert np.all(draws[:, 1, 0] > 0) and np.all(draws[:, 5, 1] > 0)
    assert np.all(row_quadratic(draws, np.eye(2)) <= 1.0 + 1e-12)


def test_prior_block_from_correlation_prior(two_factor_pattern, rng):
    draws = sample_prior_block(rng, two_factor_pattern, PhiMode.FROM_PRIOR, 2000)
    assert np.all(draws[:, 1, 0] > 0)
    assert np.all(np.isfinite(draws))


def test_prior_mass_of_a_wedge(two_factor_pattern):
    estimate = prior_mass(bound("L[1,1] > |L[1,2]|", two_factor_pattern), n_draws=N_WEDGE, seed=1)
    # a quarter of the unit disk
    assert estimate.proportion == pytest.approx(0.25, abs=0.01)
    assert estimate.n_draws == N_WEDGE
    assert estimate.standard_error == pytest.approx(np.sqrt(0.25 * 0.75 / N_WEDGE), rel=0.1)


def test_prior_mass_of_a_corner(two_factor_pattern):
    estimate = prior_mass(bound("L[3,1] < -0.3\nL[3,2] > 0.3", two_factor_pattern), n_draws=N_PRIOR, seed=2)
    area, _ = integrate.quad(lambda x: max(np.sqrt(1.0 - x * x) - 0.3, 0.0), 0.3, 1.0)
    assert estimate.proportion == pytest.approx(area / np.pi, abs=0.01)


def test_anchor_relation_has_full_mass(two_factor_pattern):
    assert prior_mass(bound("L[2,1] > 0", two_factor_pattern), n_draws=N_PRIOR).proportion == 1.0


def test_prior_masses_are_monotone_and_reproducible(two_factor_pattern):
    loose = bound(LAMBDA1_TEXT, two_factor_pattern)
    tight = bound(LAMBDA1_TEXT + "L[4,2] > 0\n", two_factor_pattern)
    first = prior_masses([loose, tight], two_factor_pattern, n_draws=N_PRIOR + 500, seed=3)
    again = prior_masses([loose, tight], two_factor_pattern, n_draws=N_PRIOR + 500, seed=3, max_workers=2)
    assert first[1].n_satisfied <= first[0].n_satisfied
    assert [e.n_satisfied for e in first] == [e.n_satisfied for e in again]
    assert first[0].n_draws == N_PRIOR + 500


def test_prior_mass_below_resolution(two_factor_pattern):
    estimate = prior_mass(bound("L[1,1] > 0.9\nL[1,2] > 0.9", two_factor_pattern), n_draws=N_PRIOR)
    assert estimate.proportion == 0.0
    assert BELOW_RESOLUTION in estimate.flags


def test_prior_mass_rejects_other_pattern(two_factor_pattern):
    other = PatternMatrix.efa(6, 2)
    with pytest.raises(ModelError, match="different base pattern"):
        prior_masses([bound("L[1,1] > 0", two_factor_pattern)], other, n_draws=100)


def constructed_chains(pattern, n=1000, noise=0.01, seed=0, prior=None):
    rng = np.random.default_rng(seed)
    chains = []
    for c in range(2):
        lam = EXAMPLE_LOADINGS[None] + noise * rng.normal(size=(n, 6, 2)) * pattern.free_mask
        chains.append(Chain.from_arrays(lam, pattern=pattern, prior=prior or PriorSpec.ball(), chain_index=c))
    return chains


def test_posterior_mass_counts_draws(two_factor_pattern):
    chains = constructed_chains(two_factor_pattern)
    assert posterior_mass(bound(LAMBDA1_TEXT, two_factor_pattern), chains).proportion == 1.0
    assert posterior_mass(bound(LAMBDA2_TEXT, two_factor_pattern), chains).proportion == 0.0
    # L[4,2] is 0.1 with sd 0.01
    half = posterior_mass(bound("L[4,2] > 0.1", two_factor_pattern), chains)
    assert half.proportion == pytest.approx(0.5, abs=0.05)
    assert half.n_draws == 2000
    assert half.standard_error > 0


def test_posterior_mass_needs_ball_prior_chains(two_factor_pattern):
    chains = constructed_chains(two_factor_pattern, prior=PriorSpec.improper())
    with pytest.raises(ModelError, match="encompassing ball"):
        posterior_mass(bound(LAMBDA1_TEXT, two_factor_pattern), chains)
    with pytest.raises(ModelError):
        posterior_mass(bound(LAMBDA1_TEXT, two_factor_pattern), [])


def test_type2_report_from_constructed_chains(two_factor_pattern):
    bounds = [bound(LAMBDA1_TEXT, two_factor_pattern), bound(LAMBDA2_TEXT, two_factor_pattern)]
    report = type2_bayes_factors(bounds, constructed_chains(two_factor_pattern), n_prior_draws=N_PRIOR, prior_seed=4)
    assert report.model_names == [UNCONSTRAINED, "lambda1", "lambda2"]
    base, lambda1, lambda2 = report.models
    assert base.log_bf_vs_unconstrained == 0.0
    assert lambda1.log_bf_vs_unconstrained == pytest.approx(-np.log(lambda1.prior_mass.proportion))
    assert lambda1.complexity == lambda1.prior_mass.proportion
    assert lambda2.log_bf_vs_unconstrained is None
    assert lambda2.posterior_probability == 0.0
    assert report.best() == "lambda1"
    total = sum(r.posterior_probability for r in report.models)
    assert total == pytest.approx(1.0)
    assert report.pairwise_log_bf[1][0] == pytest.approx(lambda1.log_bf_vs_unconstrained)
    assert report.pairwise_log_bf[1][2] is None
    assert all(report.pairwise_log_bf[i][i] == 0.0 for i in range(3))
    assert not report.monotonicity_violations


def test_type2_prior_odds(two_factor_pattern):
    bounds = [bound(LAMBDA1_TEXT, two_factor_pattern)]
    chains = constructed_chains(two_factor_pattern)
    even = type2_bayes_factors(bounds, chains, n_prior_draws=N_PRIOR)
    skewed = type2_bayes_factors(bounds, chains, n_prior_draws=N_PRIOR, prior_odds=[9.0, 1.0])
    assert skewed.row("lambda1").posterior_probability < even.row("lambda1").posterior_probability
    with pytest.raises(UsageError):
        type2_bayes_factors(bounds, chains, n_prior_draws=N_PRIOR, prior_odds=[1.0])


def test_type2_excludes_models_without_prior_mass(two_factor_pattern):
    impossible = bind(parse("model impossible\nL[1,1] > 0.9\nL[1,2] > 0.9"), two_factor_pattern)
    report = type2_bayes_factors([impossible], constructed_chains(two_factor_pattern), n_prior_draws=N_PRIOR)
    row = report.row("impossible")
    assert row.posterior_probability is None
    assert report.row(UNCONSTRAINED).posterior_probability == pytest.approx(1.0)
    assert BELOW_RESOLUTION in report.flags


@pytest.mark.slow
def test_type2_selects_the_generating_structure(two_factor_pattern):
    data = standardize(generate_synthetic(TrueModelSpec(two_factor_truth(), 500, 8)))
    chains = run_chains(data, two_factor_pattern, PriorSpec.ball(oblique=True),
                        ChainConfig(n_iter=4000, burn_in=1000, n_chains=2, seed=9))
    bounds = [bound(LAMBDA1_TEXT, two_factor_pattern), bound(LAMBDA2_TEXT, two_factor_pattern)]
    report = type2_bayes_factors(bounds, chains, n_prior_draws=100_000)
    assert report.best() == "lambda1"
    assert report.row("lambda1").log_bf_vs_unconstrained > 0
    assert report.pairwise_log_bf[1][2] is None or report.pairwise_log_bf[1][2] > 0


def grid_posterior_mass(data: Dataset, threshold: float) -> float:
    """
    Posterior mass of L[1,1] > threshold for a two-item, one-factor model under
    the ball prior, by midpoint quadrature over (l1, l2, log psi1, log psi2).
    """
    s = data.values.T @ data.values
    n = data.n
    l1 = (np.arange(120) + 0.5) / 120
    l2 = -1.0 + 2.0 * (np.arange(200) + 0.5) / 200
    log_psi = np.linspace(np.log(0.01), np.log(2.5), 80)
    psi = np.exp(log_psi)
    # psi prior with the log-scale Jacobian
    log_psi_weight = stats.invgamma.logpdf(psi, a=BALL_PSI_SHAPE, scale=BALL_PSI_RATE) + log_psi

    a, b, c = np.meshgrid(l1, l2, psi, indexing="ij")
    above, total = [], []
    for i, psi1 in enumerate(psi):
        s11, s22, s12 = a**2 + psi1, b**2 + c, a * b
        det = s11 * s22 - s12**2
        trace = (s22 * s[0, 0] + s11 * s[1, 1] - 2.0 * s12 * s[0, 1]) / det
        log_f = -0.5 * n * np.log(det) - 0.5 * trace + log_psi_weight[i] + log_psi_weight[None, None, :]
        total.append(logsumexp(log_f))
        above.append(logsumexp(log_f[l1 > threshold]))
    return float(np.exp(logsumexp(above) - logsumexp(total)))


@pytest.mark.slow
def test_posterior_mass_matches_quadrature():
    truth = FactorModel(np.array([[0.6], [0.6]]), np.array([0.64, 0.64]))
    data = standardize(generate_synthetic(TrueModelSpec(truth, 60, 61)))
    pattern = PatternMatrix(np.array([[CellKind.ANCHOR], [CellKind.FREE]]))
    system = bound("L[1,1] > 0.5", pattern)
    chains = run_chains(data, pattern, PriorSpec.ball(oblique=False),
                        ChainConfig(n_iter=22_000, burn_in=2000, n_chains=2, seed=67))
    oracle = grid_posterior_mass(data, 0.5)
    post = posterior_mass(system, chains)
    prior = prior_mass(system, n_draws=N_WEDGE, seed=71)
    assert prior.proportion == pytest.approx(0.5, abs=0.01)
    assert post.proportion == pytest.approx(oracle, abs=max(0.02, 3 * post.standard_error))
    bf = post.proportion / prior.proportion
    assert bf == pytest.approx(oracle / 0.5, rel=max(0.05, 3 * post.standard_error / post.proportion))


@pytest.mark.slow
def test_mirrored_systems_tie_on_symmetric_data():
    noise = generate_synthetic(TrueModelSpec(FactorModel(np.zeros((4, 0)), np.ones(4)), 200, 73))
    # stacking a copy with item 1 negated zeroes its cross-products exactly
    values = np.vstack([noise.values, noise.values * np.array([-1.0, 1.0, 1.0, 1.0])])
    data = standardize(Dataset(values, noise.item_names))
    F, A = CellKind.FREE, CellKind.ANCHOR
    pattern = PatternMatrix(np.array([[F], [A], [F], [F]]))
    positive = bind(parse("model positive\nL[1,1] > 0"), pattern)
    negative = bind(parse("model negative\nL[1,1] < 0"), pattern)
    chains = run_chains(data, pattern, PriorSpec.ball(oblique=False),
                        ChainConfig(n_iter=6000, burn_in=1000, n_chains=2, seed=79))
    report = type2_bayes_factors([positive, negative], chains, n_prior_draws=N_WEDGE, prior_seed=83)
    log_bf = report.pairwise_log_bf[1][2]
    post, prior = report.row("positive").posterior_mass, report.row("positive").prior_mass
    # the two masses are complements, so the log-odds error adds rather than averages
    se = np.hypot(post.standard_error / (post.proportion * (1 - post.proportion)),
                  prior.standard_error / (prior.proportion * (1 - prior.proportion)))
    assert log_bf is not None
    assert abs(log_bf) < 3 * se
