import numpy as np
import pytest

from ivbma.bma import exact_bma
from ivbma.pipeline import build_from_files, dump_roster, write_panel
from ivbma.synthetic import (
    Endogeneity,
    SyntheticConfig,
    SyntheticConfigError,
    brute_force_pips,
    design_to_panel,
    endogeneity_benchmark,
    endogenous_sigma,
    generate_endogenous,
    generate_linear,
    democracy_panel,
    reference_fits,
)


def test_noiseless_identification():
    cfg = SyntheticConfig(n=30, K=4, true_mask=(True, False, True, False), true_coefficients=(2.0, -1.5),
                          noise_sd=1e-12, seed=0, intercept=0.5)
    d = generate_linear(cfg)
    X = np.column_stack([np.ones(30), d.columns[:, [0, 2]]])
    coef = np.linalg.lstsq(X, d.y, rcond=None)[0]
    np.testing.assert_allclose(coef, [0.5, 2.0, -1.5], atol=1e-6)


def test_pure_noise_correlation_shrinks():
    cfg = SyntheticConfig(n=20_000, K=3, true_mask=(False,) * 3, true_coefficients=(), seed=1)
    d = generate_linear(cfg)
    r = [np.corrcoef(d.y, d.columns[:, j])[0, 1] for j in range(3)]
    assert max(abs(v) for v in r) < 4 / np.sqrt(20_000)


def test_generators_seed_deterministic():
    cfg = endogeneity_benchmark(3)
    a, b = generate_endogenous(cfg), generate_endogenous(cfg)
    assert a.y.tobytes() == b.y.tobytes() and a.Z.tobytes() == b.Z.tobytes()


def test_config_validation():
    with pytest.raises(SyntheticConfigError):
        SyntheticConfig(n=10, K=2, true_mask=(True, True), true_coefficients=(1.0,))
    with pytest.raises(SyntheticConfigError):
        SyntheticConfig(n=10, K=2, true_mask=(True, False), true_coefficients=(1.0,), noise_sd=0)
    bad = SyntheticConfig(n=10, K=1, true_mask=(True, False), true_coefficients=(1.0,),
                          endogeneity=Endogeneity(1, endogenous_sigma(1), instrument_strength=1.0))
    with pytest.raises(SyntheticConfigError, match="unreachable"):
        generate_endogenous(bad)


def _errors(s12, s11=1.0, s22=1.0, strength=0.9, seed=0):
    cfg = SyntheticConfig(n=10_000, K=1, true_mask=(True, False), true_coefficients=(1.0,),
                          endogeneity=Endogeneity(1, endogenous_sigma(1, s11, s22, s12), strength), seed=seed)
    d = generate_endogenous(cfg)
    eps = d.y - d.X[:, 0]
    # eta is X minus its instrument part; recover by regressing X on Z
    slope = np.polyfit(d.Z[:, 0], d.X[:, 0], 1)[0]
    eta = d.X[:, 0] - slope * d.Z[:, 0]
    return d, eps, eta


def test_generator_error_correlation_zero():
    _, eps, eta = _errors(0.0)
    assert abs(np.corrcoef(eps, eta)[0, 1]) < 3 / np.sqrt(10_000)


def test_generator_error_correlation_07():
    _, eps, eta = _errors(0.7)
    assert np.corrcoef(eps, eta)[0, 1] == pytest.approx(0.7, abs=0.03)


def test_generator_instrument_strength():
    d, _, _ = _errors(0.7)
    assert np.corrcoef(d.Z[:, 0], d.X[:, 0])[0, 1] == pytest.approx(0.9, abs=0.03)


def test_brute_force_cap():
    rng = np.random.default_rng(0)
    with pytest.raises(SyntheticConfigError):
        brute_force_pips(rng.standard_normal(40), rng.standard_normal((40, 16)))


def test_brute_force_is_independent_of_engine():
    import inspect

    import ivbma.synthetic as syn

    src = inspect.getsource(syn._oracle_model) + inspect.getsource(syn.brute_force_pips)
    assert "_Gram" not in src and "log_marginal_likelihood" not in src and "exact_bma" not in src


def test_reference_fits_exogenous_agree():
    d = generate_endogenous(endogeneity_benchmark(0, n=5_000, s12=0.0))
    ols, tsls = reference_fits(d.y, d.X, d.W, d.Z)
    assert abs(ols[1] - tsls[1]) < 0.05


def test_reference_fits_perfect_instrument():
    d = generate_endogenous(endogeneity_benchmark(1))
    ols, tsls = reference_fits(d.y, d.X, d.W, d.X)
    np.testing.assert_allclose(tsls, ols, atol=1e-10)


def test_reference_fits_rank_failure():
    d = generate_endogenous(endogeneity_benchmark(1))
    with pytest.raises(np.linalg.LinAlgError):
        reference_fits(d.y, d.X, np.column_stack([d.W, d.W[:, 0]]), d.Z)


def test_ols_bias_exceeds_tsls_bias():
    wins = 0
    for seed in range(50):
        d = generate_endogenous(endogeneity_benchmark(seed))
        ols, tsls = reference_fits(d.y, d.X, d.W, d.Z)
        wins += abs(ols[1] - 1.0) > abs(tsls[1] - 1.0)
    assert wins >= 45


def test_benchmark_ols_inflation_oracle():
    # large-n Monte Carlo of the OLS slope: inflation s12 (1 - rho^2) / s22 ~ 0.27
    d = generate_endogenous(endogeneity_benchmark(0, n=200_000))
    ols, _ = reference_fits(d.y, d.X, d.W, d.Z)
    assert ols[1] - 1.0 == pytest.approx(0.7 * (1 - 0.81) / 0.5, abs=0.01)


def test_design_csv_roundtrip(tmp_path):
    d = generate_endogenous(endogeneity_benchmark(2, n=50))
    frame, specs = design_to_panel(d)
    write_panel(frame, tmp_path / "p.csv")
    dump_roster(specs, tmp_path / "r.yaml")
    _, _, back = build_from_files(tmp_path / "p.csv", tmp_path / "r.yaml")
    order = np.argsort(d.countries)
    for a, b in ((d.y, back.y), (d.X, back.X), (d.W, back.W), (d.Z, back.Z)):
        assert a[order].tobytes() == b.tobytes()


def test_democracy_fixture_assembles(tmp_path):
    fx = democracy_panel(0)
    write_panel(fx.panel, tmp_path / "p.csv")
    from ivbma.synthetic import roster_path
    import shutil

    shutil.copyfile(roster_path(), tmp_path / "r.yaml")
    _, _, d = build_from_files(tmp_path / "p.csv", tmp_path / "r.yaml")
    assert (d.n, d.p, d.q) == (111, 16, 26)
    assert len(d.drop_log) == 3
    _, _, sub = build_from_files(tmp_path / "p.csv", tmp_path / "r.yaml", countries=fx.non_oecd)
    assert sub.n == 80
