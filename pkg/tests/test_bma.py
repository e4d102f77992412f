import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ivbma.bma import (
    LinearDesign,
    RankDeficientError,
    acceptance_probability,
    conditional_posterior_coefficients,
    exact_bma,
    log_marginal_likelihood,
    mc3_sample,
    model_frequencies,
    total_variation,
)
from ivbma.config import PriorConfig, SamplerConfig
from ivbma.models import codes_to_matrix
from ivbma.synthetic import SyntheticConfig, brute_force_pips, generate_linear


def _design(seed, n=50, K=8, k_true=3):
    mask = tuple([True] * k_true + [False] * (K - k_true))
    cfg = SyntheticConfig(n=n, K=K, true_mask=mask, true_coefficients=(1.0, -0.5, 0.3)[:k_true], seed=seed)
    return generate_linear(cfg)


def test_empty_model_log_ml_zero():
    y = np.array([1.0, 2.0, 0.5, 3.0])
    assert log_marginal_likelihood(y, np.zeros((4, 0))) == 0.0


def test_log_ml_hand_example():
    y = np.array([-1.0, 0.0, 1.0])
    x = np.array([[-1.0], [0.0], [1.0]])
    assert log_marginal_likelihood(y, x, PriorConfig(3.0)) == pytest.approx(0.5 * math.log(4), abs=1e-12)


def test_log_ml_matches_numerical_integration():
    # closed form vs integrating the conjugate model over beta and log sigma
    from scipy import integrate

    rng = np.random.default_rng(3)
    n, g = 12, 4.0
    x = rng.standard_normal(n)
    y = 0.8 * x + rng.standard_normal(n)
    yc, xc = y - y.mean(), x - x.mean()
    sxx = xc @ xc

    def integrand(beta, log_s, with_x):
        s2 = math.exp(2 * log_s)
        b = beta if with_x else 0.0
        rss = float(np.sum((yc - b * xc) ** 2))
        like = s2 ** (-(n - 1) / 2) * math.exp(-rss / (2 * s2))
        if not with_x:
            return like
        prior = math.exp(-beta**2 * sxx / (2 * g * s2)) / math.sqrt(2 * math.pi * g * s2 / sxx)
        return like * prior

    full = integrate.dblquad(lambda b, ls: integrand(b, ls, True), -3, 3, -6, 6)[0]
    null = integrate.quad(lambda ls: integrand(0.0, ls, False), -3, 3)[0]
    assert math.log(full / null) == pytest.approx(
        log_marginal_likelihood(y, x[:, None], PriorConfig(g)), abs=1e-6)


@given(st.floats(0.01, 100.0))
def test_log_ml_scale_invariant(c):
    d = _design(0)
    a = log_marginal_likelihood(d.y, d.columns[:, :3])
    b = log_marginal_likelihood(c * d.y, d.columns[:, :3])
    assert b == pytest.approx(a, rel=1e-9, abs=1e-9)


def test_conditional_coefficients():
    x = np.array([0.0, 0.0, 1.0, -1.0, 0.0]) / math.sqrt(2)
    y = np.array([0.0, 0.0, 2.0, -2.0, 0.0]) / math.sqrt(2)  # y'x = 2 on centered data
    mean, cov = conditional_posterior_coefficients(y, x[:, None], PriorConfig(5.0))
    assert mean[0] == pytest.approx(5 / 6 * 2, abs=1e-12)
    # ridge oracle with penalty 1/g on the centered data
    ridge = (x @ y) / (x @ x + 1 / 5.0)
    assert mean[0] == pytest.approx(ridge, abs=1e-12)
    m0, c0 = conditional_posterior_coefficients(y, np.zeros((5, 0)))
    assert m0.shape == (0,) and c0.shape == (0, 0)


def test_large_g_recovers_ols():
    d = _design(1)
    mean, _ = conditional_posterior_coefficients(d.y, d.columns[:, :3], PriorConfig(1e12))
    X = np.column_stack([np.ones(d.n), d.columns[:, :3]])
    ols = np.linalg.lstsq(X, d.y, rcond=None)[0][1:]
    np.testing.assert_allclose(mean, ols, atol=1e-8)


def test_rank_deficient_coefficients_raise():
    x = np.arange(6.0)
    with pytest.raises(RankDeficientError):
        conditional_posterior_coefficients(np.sin(x), np.column_stack([x, 2 * x]))


def test_acceptance_probability():
    assert acceptance_probability(math.log(2)) == 1.0
    assert acceptance_probability(math.log(0.5)) == pytest.approx(0.5)
    assert acceptance_probability(0.0) == 1.0


def test_symmetric_single_column_pip_half():
    # column orthogonal to y after centering gives R^2 = 0; with g chosen so the
    # Occam penalty vanishes both models have equal likelihood
    y = np.array([1.0, -1.0, 1.0, -1.0])
    x = np.array([1.0, 1.0, -1.0, -1.0])
    design = LinearDesign(y, x[:, None])
    _, s = exact_bma(design, PriorConfig(1e-12))
    assert s.pip[0] == pytest.approx(0.5, abs=1e-9)
    assert brute_force_pips(y, x[:, None], PriorConfig(1e-12)).pip[0] == pytest.approx(0.5, abs=1e-9)


def test_mixture_arithmetic():
    # two models, PMP 0.6 / 0.4, means 1 / 2, zero within-model variance
    pmp = np.array([0.6, 0.4])
    means = np.array([1.0, 2.0])
    assert pmp @ means == pytest.approx(1.4)
    pmp = np.array([0.5, 0.5])
    var = pmp @ means**2 - (pmp @ means) ** 2
    assert math.sqrt(var) == pytest.approx(0.5)


@pytest.mark.parametrize("seed", range(5))
def test_exact_invariants(seed):
    d = _design(seed)
    table, s = exact_bma(d)
    assert table.pmp.sum() == pytest.approx(1.0, abs=1e-12)
    incl = table.inclusion()
    np.testing.assert_allclose(s.pip, table.pmp @ incl, atol=1e-12)
    assert np.all((s.pip >= 0) & (s.pip <= 1)) and np.all(s.post_sd >= 0)


@pytest.mark.parametrize("seed", range(20))
def test_oracle_equivalence(seed):
    d = _design(seed)
    _, s = exact_bma(d)
    o = brute_force_pips(d.y, d.columns)
    np.testing.assert_allclose(s.pip, o.pip, atol=1e-8)
    np.testing.assert_allclose(s.post_mean, o.post_mean, atol=1e-8)
    np.testing.assert_allclose(s.post_sd, o.post_sd, atol=1e-8)


def test_duplicate_columns_excluded_identically():
    d = _design(4, K=5)
    cols = np.column_stack([d.columns, d.columns[:, 0]])
    with pytest.warns(UserWarning, match="rank-deficient"):
        table, s = exact_bma(LinearDesign(d.y, cols))
    o = brute_force_pips(d.y, cols)
    both = codes_to_matrix(table.codes, 6)
    dup = both[:, 0] & both[:, 5]
    assert np.all(np.isinf(table.log_ml[dup])) and np.all(table.pmp[dup] == 0)
    np.testing.assert_allclose(s.pip, o.pip, atol=1e-8)


def test_workers_do_not_change_result():
    d = _design(2, n=60, K=14)
    _, a = exact_bma(d, workers=1)
    _, b = exact_bma(d, workers=4)
    assert a.pip.tobytes() == b.pip.tobytes()
    assert a.post_mean.tobytes() == b.post_mean.tobytes()


@given(st.permutations(list(range(6))))
def test_permutation_equivariance(order):
    d = _design(5, K=6)
    _, a = exact_bma(d)
    _, b = exact_bma(d.permuted(order))
    np.testing.assert_allclose(b.pip, a.pip[order], atol=1e-12)
    np.testing.assert_allclose(b.post_mean, a.post_mean[order], atol=1e-12)
    np.testing.assert_allclose(b.post_sd, a.post_sd[order], atol=1e-12)
    assert b.names == tuple(a.names[i] for i in order)


def test_null_data_mean_pip_below_half():
    pips = []
    for seed in range(20):
        rng = np.random.default_rng(seed)
        d = LinearDesign(rng.standard_normal(80), rng.standard_normal((80, 6)))
        pips.append(exact_bma(d)[1].pip.mean())
    assert np.mean(pips) < 0.5


def test_true_variables_rank_top():
    hits = 0
    for seed in range(50):
        cfg = SyntheticConfig(n=100, K=8, true_mask=(True, False, True, False, False, True, False, False),
                              true_coefficients=(1.0, -1.2, 1.5), seed=seed)
        _, s = exact_bma(generate_linear(cfg))
        hits += set(np.argsort(-s.pip)[:3]) == {0, 2, 5}
    assert hits >= 45


def test_posterior_variance_matches_mixture_draws():
    # draw a model by PMP, then a coefficient from its within-model posterior
    d = _design(6, K=4)
    table, s = exact_bma(d)
    from ivbma.bma import _Gram

    gram = _Gram(d.y, d.columns, float(d.n), None)
    rng = np.random.default_rng(0)
    picks = rng.choice(len(table.pmp), size=200_000, p=table.pmp)
    draws = np.zeros((len(picks), 4))
    moments = {}
    for code in np.unique(picks):
        idx = np.flatnonzero(codes_to_matrix(np.array([code]), 4)[0])
        _, m, v = gram.fit(idx)
        moments[code] = (idx, m, v)
    for code, (idx, m, v) in moments.items():
        rows = np.flatnonzero(picks == code)
        if len(idx):
            draws[np.ix_(rows, idx)] = m + np.sqrt(v) * rng.standard_normal((len(rows), len(idx)))
    var = draws.var(axis=0)
    # standard error of a sample variance ~ sqrt((m4 - var^2) / N)
    m4 = ((draws - draws.mean(axis=0)) ** 4).mean(axis=0)
    se = np.sqrt((m4 - var**2) / len(draws))
    assert np.all(np.abs(var - s.post_sd**2) < 3 * se + 1e-12)


def test_mc3_matches_exact_k10():
    cfg = SyntheticConfig(n=100, K=10, true_mask=(True,) * 3 + (False,) * 7,
                          true_coefficients=(0.4, -0.3, 0.25), seed=11)
    d = generate_linear(cfg)
    _, ex = exact_bma(d)
    _, mc = mc3_sample(d, config=SamplerConfig(iterations=220_000, burn_in=20_000, seed=3))
    assert np.max(np.abs(mc.pip - ex.pip)) < 0.02


def test_mc3_stationary_distribution_k5():
    cfg = SyntheticConfig(n=60, K=5, true_mask=(True, True, False, False, False),
                          true_coefficients=(0.3, -0.2), seed=2)
    d = generate_linear(cfg)
    table, _ = exact_bma(d)
    chain, _ = mc3_sample(d, config=SamplerConfig(iterations=510_000, burn_in=10_000, seed=9))
    freq = model_frequencies(chain.codes[chain.burn_in:])
    exact = {int(c): float(p) for c, p in zip(table.codes, table.pmp)}
    assert total_variation(freq, exact) < 0.02


def test_mc3_deterministic():
    d = _design(3)
    cfg = SamplerConfig(iterations=20_000, burn_in=2_000, seed=5)
    c1, s1 = mc3_sample(d, config=cfg)
    c2, s2 = mc3_sample(d, config=cfg)
    assert c1.codes.tobytes() == c2.codes.tobytes()
    assert s1.pip.tobytes() == s2.pip.tobytes() and s1.post_mean.tobytes() == s2.post_mean.tobytes()


def test_mc3_chain_lines():
    d = _design(3, K=4)
    chain, _ = mc3_sample(d, config=SamplerConfig(iterations=50, burn_in=10, seed=1))
    lines = list(chain.lines())
    assert len(lines) == 50
    mask, val = lines[0].split()
    assert len(mask) == 4 and set(mask) <= {"0", "1"}
    float(val)


def test_mc3_starts_from_empty_model():
    d = _design(0, K=4)
    chain, _ = mc3_sample(d, config=SamplerConfig(iterations=5, burn_in=0, seed=0))
    # the first state is at Hamming distance <= 1 from the empty model
    assert bin(int(chain.codes[0])).count("1") <= 1
