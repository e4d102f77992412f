"""Evidence classes, table rendering and draw export."""
from __future__ import annotations

import csv
import enum
import math
import re
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .bma import Mc3Chain, PosteriorSummary
from .pipeline import DiagnosticsReport, InstrumentCorrelation, SummaryRow

MARKER = "►"  # flags PIP > 0.75
ENDOGENOUS_FLAG = "*"
DRAW_HEADER = ["chain", "iteration", "variable", "coefficient"]


class EvidenceClass(enum.IntEnum):
    Weak = 0
    Positive = 1
    Strong = 2
    Decisive = 3


def classify_evidence(pip: float) -> EvidenceClass:
    """PIP evidence scale; a PIP exactly on a threshold falls in the lower class."""
    if not (0.0 <= pip <= 1.0) or math.isnan(pip):
        raise ValueError(f"PIP must lie in [0, 1], got {pip}")
    if pip > 0.99:
        return EvidenceClass.Decisive
    if pip > 0.95:
        return EvidenceClass.Strong
    if pip > 0.75:
        return EvidenceClass.Positive
    return EvidenceClass.Weak


FOOTER = (
    f"{MARKER} PIP > 0.75.  {ENDOGENOUS_FLAG} potentially endogenous (instrumented in IVBMA).\n"
    "Evidence: Decisive PIP > 0.99; Strong 0.95 < PIP <= 0.99; Positive 0.75 < PIP <= 0.95; "
    "Weak PIP <= 0.75. A PIP exactly at a threshold is assigned the lower class.\n"
)

_ROW = re.compile(
    r"^(?P<mark>[ " + MARKER + r"]) (?P<name>.+?)\s+(?P<pip>-?\d+\.\d{3})\s+(?P<mean>-?\d+\.\d{3})"
    r"\s+(?P<sd>-?\d+\.\d{3})\s+(?P<cls>Decisive|Strong|Positive|Weak)$"
)


def render_table(
    summary: PosteriorSummary,
    *,
    title: str = "",
    labels: dict[str, str] | None = None,
    endogenous: Iterable[str] = (),
    order: Sequence[str] | None = None,
    footer: bool = True,
) -> str:
    """Plain-text PIP / Post Mean / Post SD table sorted by descending PIP.

    Ties keep ``order`` (roster order; defaults to the summary's own order).
    """
    labels = labels or {}
    endogenous = set(endogenous)
    rank = {name: i for i, name in enumerate(order or summary.names)}
    rows = summary.rows()
    rows.sort(key=lambda r: (-round(r[1], 12), rank.get(r[0], len(rank))))
    shown = []
    for name, pip, mean, sd in rows:
        label = labels.get(name, name) + (f" {ENDOGENOUS_FLAG}" if name in endogenous else "")
        shown.append((label, pip, mean, sd))
    width = max([len("Variable")] + [len(r[0]) for r in shown])
    lines = []
    if title:
        lines.append(title)
    lines.append(f"  {'Variable':<{width}}  {'PIP':>7}  {'Post Mean':>10}  {'Post SD':>9}  Evidence")
    for label, pip, mean, sd in shown:
        mark = MARKER if pip > 0.75 else " "
        lines.append(
            f"{mark} {label:<{width}}  {pip:>7.3f}  {_fmt(mean):>10}  {_fmt(sd):>9}  "
            f"{classify_evidence(min(max(pip, 0.0), 1.0)).name}"
        )
    text = "\n".join(lines) + "\n"
    if footer:
        text += "\n" + FOOTER
    return text


def _fmt(x: float) -> str:
    s = f"{x:.3f}"
    return "0.000" if s == "-0.000" else s


def parse_table(text: str) -> list[tuple[str, float, float, float, str]]:
    """Rows of a rendered table as (label, pip, mean, sd, evidence class)."""
    out = []
    for line in text.splitlines():
        m = _ROW.match(line)
        if m:
            out.append((m["name"].rstrip(), float(m["pip"]), float(m["mean"]), float(m["sd"]), m["cls"]))
    return out


def render_top_models(summary: PosteriorSummary, k: int = 10) -> str:
    if not summary.top_models:
        return ""
    lines = ["Top models (mask bits in regressor order: endogenous, then exogenous)"]
    for mask, prob in summary.top_models[:k]:
        lines.append(f"  {mask}  {prob:.4f}")
    return "\n".join(lines) + "\n"


def render_diagnostics(report: DiagnosticsReport, drop_log: Sequence[str] = (),
                       labels: dict[str, str] | None = None) -> str:
    labels = labels or {}
    out = ["Instrument correlations (endogenous vs instrument)"]
    corr = sorted(report.correlations, key=_corr_key)
    for c in corr:
        val = "undefined" if c.correlation is None else f"{c.correlation:.3f}"
        out.append(f"  {labels.get(c.endogenous, c.endogenous):<32} {c.instrument:<32} {val}")
    out.append("")
    out.append("Dropped countries")
    out.extend(f"  {line}" for line in drop_log) if drop_log else out.append("  none")
    out.append("")
    if report.summary:
        out.append(f"Summary statistics (n-1 SD)")
        head = f"  {'Variable':<32} {'Mean':>10} {'Median':>10} {'SD':>10} {'Min':>10} {'Max':>10} {'Corr':>7}"
        out.append(head)
        for r in report.summary:
            corr_s = "-" if r.corr_outcome is None else f"{r.corr_outcome:.2f}"
            out.append(
                f"  {labels.get(r.variable, r.variable):<32} {r.mean:>10.2f} {r.median:>10.2f} "
                f"{r.sd:>10.2f} {r.min:>10.2f} {r.max:>10.2f} {corr_s:>7}"
            )
    return "\n".join(out) + "\n"


def _corr_key(c: InstrumentCorrelation):
    return (c.correlation is None, -(c.correlation or 0.0), c.endogenous)


def _draw_rows(result, stage: str):
    d = result.draws
    chain = d.chain
    if stage == "second":
        names = result.second_stage.names
        for r, it in enumerate(d.iterations):
            for j, name in enumerate(names):
                yield chain, int(it), name, d.second_stage[r, j]
            E = d.sigma.shape[1]
            for a in range(E):
                for b in range(a, E):
                    yield chain, int(it), f"sigma_{a}_{b}", d.sigma[r, a, b]
    else:
        for r, it in enumerate(d.iterations):
            for e, fs in enumerate(result.first_stage):
                endog = result.endogenous_names[e] if result.endogenous_names else f"x{e + 1}"
                for j, name in enumerate(fs.names):
                    yield chain, int(it), f"{endog}:{name}", d.first_stage[r, e, j]


def export_draws(results, path: str | Path, stage: str = "second") -> Path:
    """Write retained draws as long CSV (chain, iteration, variable, coefficient).

    The second-stage file also carries the upper triangle of Sigma as
    ``sigma_i_j`` rows (index 0 is the outcome error). Several results
    (chains) are concatenated in the order given.
    """
    if stage not in ("second", "first"):
        raise ValueError("stage must be 'second' or 'first'")
    if not isinstance(results, (list, tuple)):
        results = [results]
    path = Path(path)
    try:
        fh = open(path, "w", newline="", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write draws to {path}: {exc}") from exc
    with fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DRAW_HEADER)
        for res in results:
            for chain, it, name, value in _draw_rows(res, stage):
                w.writerow([chain, it, name, repr(float(value))])
    return path


def read_draws(path: str | Path):
    import pandas as pd

    return pd.read_csv(path)


def export_chain(chain: Mc3Chain, path: str | Path) -> Path:
    """One line per iteration: mask string and log marginal likelihood."""
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        for line in chain.lines():
            fh.write(line + "\n")
    return path


def batch_means_se(x: np.ndarray, batches: int = 20) -> float:
    """Monte Carlo standard error of the mean of an autocorrelated series."""
    x = np.asarray(x, dtype=float)
    size = len(x) // batches
    if size < 1:
        return float(np.std(x, ddof=1) / math.sqrt(len(x))) if len(x) > 1 else math.inf
    means = x[: size * batches].reshape(batches, size).mean(axis=1)
    return float(np.std(means, ddof=1) / math.sqrt(batches))
