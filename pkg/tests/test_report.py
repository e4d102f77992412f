import numpy as np
import pandas as pd
import pytest
from hypothesis import given, strategies as st

from ivbma.bma import PosteriorSummary
from ivbma.config import SamplerConfig
from ivbma.iv import run_ivbma
from ivbma.report import (
    DRAW_HEADER,
    MARKER,
    EvidenceClass,
    batch_means_se,
    classify_evidence,
    export_draws,
    parse_table,
    render_table,
)
from ivbma.synthetic import endogeneity_benchmark, generate_endogenous


def _summary(rows):
    names, pip, mean, sd = zip(*rows) if rows else ((), (), (), ())
    return PosteriorSummary(tuple(names), np.array(pip, dtype=float), np.array(mean, dtype=float),
                            np.array(sd, dtype=float), n_models=0)


@pytest.mark.parametrize("pip,cls", [(0.995, "Decisive"), (0.961, "Strong"), (0.96, "Strong"),
                                     (0.80, "Positive"), (0.75, "Weak"), (0.50, "Weak"),
                                     (0.99, "Strong"), (0.95, "Positive"), (1.0, "Decisive"), (0.0, "Weak")])
def test_classify(pip, cls):
    assert classify_evidence(pip).name == cls


@pytest.mark.parametrize("bad", [-0.01, 1.01, float("nan")])
def test_classify_out_of_range(bad):
    with pytest.raises(ValueError):
        classify_evidence(bad)


@given(st.floats(0, 1), st.floats(0, 1))
def test_classify_monotone(a, b):
    lo, hi = sorted((a, b))
    assert classify_evidence(lo) <= classify_evidence(hi)
    assert EvidenceClass.Weak < EvidenceClass.Positive < EvidenceClass.Strong < EvidenceClass.Decisive


def test_top_row_marker_and_flag():
    s = _summary([("gdp_pc", 0.758, 1.2, 0.9), ("arable_land", 0.961, 0.156, 0.054), ("fdi", 0.1, 0.0, 0.01)])
    text = render_table(s, labels={"arable_land": "Arable land", "gdp_pc": "GDP pc"}, endogenous=["gdp_pc"])
    rows = [ln for ln in text.splitlines() if ln[:1] in (MARKER, " ") and ln[2:3].strip()]
    first = rows[1]  # rows[0] is the header
    assert first.startswith(MARKER + " Arable land ")
    assert "0.961" in first and "0.156" in first and "0.054" in first and first.endswith("Strong")
    assert "*" not in first
    assert any(ln.startswith(MARKER + " GDP pc *") for ln in rows)
    assert any(ln.startswith("  FDI") or ln.startswith("  fdi") for ln in rows)
    assert "lower class" in text  # boundary rule documented in the footer


def test_empty_summary_header_only():
    text = render_table(_summary([]), footer=False)
    assert text.strip().startswith("Variable") and len(text.strip().splitlines()) == 1


def test_ties_follow_roster_order():
    s = _summary([("b", 0.5, 0, 0), ("a", 0.5, 0, 0), ("c", 0.9, 0, 0)])
    names = [r[0] for r in parse_table(render_table(s, order=["a", "b", "c"]))]
    assert names == ["c", "a", "b"]
    names = [r[0] for r in parse_table(render_table(s, order=["b", "a", "c"]))]
    assert names == ["c", "b", "a"]


@given(st.lists(st.tuples(st.floats(0, 1), st.floats(-1e3, 1e3), st.floats(0, 1e3)), max_size=12))
def test_table_roundtrip(vals):
    rows = [(f"v{i}", *v) for i, v in enumerate(vals)]
    parsed = parse_table(render_table(_summary(rows)))
    got = {r[0]: r[1:4] for r in parsed}
    assert len(parsed) == len(rows)
    for name, pip, mean, sd in rows:
        assert got[name] == (round(pip, 3) + 0.0, float(f"{mean:.3f}") + 0.0, float(f"{sd:.3f}") + 0.0)


@pytest.fixture(scope="module")
def result():
    d = generate_endogenous(endogeneity_benchmark(0))
    return run_ivbma(d, config=SamplerConfig(iterations=11_000, burn_in=1_000, thinning=10, seed=0))


def test_export_rows_per_variable(result, tmp_path):
    path = export_draws(result, tmp_path / "second.csv")
    df = pd.read_csv(path)
    assert list(df.columns) == DRAW_HEADER
    counts = df["variable"].value_counts()
    # 10,000 post-burn-in iterations at thinning 10
    assert counts["x1"] == 1_000 and counts["sigma_0_1"] == 1_000
    assert set(counts.index) >= {"x1", "w1", "sigma_0_0", "sigma_0_1", "sigma_1_1"}
    first = pd.read_csv(export_draws(result, tmp_path / "first.csv", stage="first"))
    assert (first["variable"] == "x1:z1").sum() == 1_000


def test_export_consistent_with_summary(result, tmp_path):
    df = pd.read_csv(export_draws(result, tmp_path / "d.csv"))
    x = df.loc[df["variable"] == "x1", "coefficient"].to_numpy()
    se = batch_means_se(x)
    assert abs(x.mean() - result.second_stage.post_mean[0]) < 3 * se


def test_export_header_only_without_draws(result, tmp_path):
    import dataclasses

    empty = dataclasses.replace(result, draws=dataclasses.replace(
        result.draws, second_stage=result.draws.second_stage[:0], sigma=result.draws.sigma[:0],
        first_stage=result.draws.first_stage[:0], iterations=result.draws.iterations[:0]))
    path = export_draws(empty, tmp_path / "e.csv")
    assert path.read_text() == ",".join(DRAW_HEADER) + "\n"


def test_export_unwritable(result, tmp_path):
    with pytest.raises(OSError):
        export_draws(result, tmp_path / "missing_dir" / "x.csv")


def test_export_multiple_chains(result, tmp_path):
    import dataclasses

    other = dataclasses.replace(result, draws=dataclasses.replace(result.draws, chain=1))
    df = pd.read_csv(export_draws([result, other], tmp_path / "c.csv"))
    assert sorted(df["chain"].unique()) == [0, 1]
