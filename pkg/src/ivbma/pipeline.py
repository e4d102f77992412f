"""Panel ingestion and construction of the averaged cross-section.

Input is long-format CSV (``country,year,variable,value``). Each roster entry
averages one source series over its own year window, optionally takes a
base-10 log, and is assigned a role in the regression system:

    y = X beta + W gamma + eps          (outcome equation)
    X = Z delta + W tau + eta           (first stage, one Z column per X column)
"""
from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd
import yaml

log = logging.getLogger(__name__)

ROLES = ("outcome", "exogenous", "endogenous", "instrument")
TRANSFORMS = ("none", "log10")
HEADER = ["country", "year", "variable", "value"]


class PipelineError(ValueError):
    pass


class PanelParseError(PipelineError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class DuplicateObservationError(PipelineError):
    pass


class UnknownVariableError(PipelineError):
    pass


class TransformDomainError(PipelineError):
    pass


class InsufficientDataError(PipelineError):
    pass


class RosterError(PipelineError):
    pass


@dataclass(frozen=True)
class VariableSpec:
    name: str
    role: str
    window: tuple[int, int] = (2001, 2010)
    transform: str = "none"
    target: str | None = None  # endogenous variable an instrument belongs to
    source: str | None = None  # panel series; defaults to ``name``
    category: str = ""
    label: str | None = None

    def __post_init__(self):
        if self.role not in ROLES:
            raise RosterError(f"{self.name}: role must be one of {ROLES}, got {self.role!r}")
        if self.transform not in TRANSFORMS:
            raise RosterError(f"{self.name}: transform must be one of {TRANSFORMS}")
        start, end = self.window
        if start > end:
            raise RosterError(f"{self.name}: window start {start} after end {end}")
        if self.role == "instrument" and not self.target:
            raise RosterError(f"{self.name}: instrument needs a target endogenous variable")
        if self.role != "instrument" and self.target:
            raise RosterError(f"{self.name}: only instruments take a target")

    @property
    def series(self) -> str:
        return self.source or self.name

    @property
    def display(self) -> str:
        return self.label or self.name


def validate_roster(specs: Sequence[VariableSpec]) -> None:
    names = [s.name for s in specs]
    dupes = {n for n in names if names.count(n) > 1}
    if dupes:
        raise RosterError(f"duplicate variable names: {sorted(dupes)}")
    outcomes = [s for s in specs if s.role == "outcome"]
    if len(outcomes) != 1:
        raise RosterError(f"exactly one outcome variable required, found {len(outcomes)}")
    endog = {s.name for s in specs if s.role == "endogenous"}
    targets: dict[str, list[str]] = {e: [] for e in endog}
    for s in specs:
        if s.role == "instrument":
            if s.target not in endog:
                raise RosterError(f"{s.name}: target {s.target!r} is not an endogenous variable")
            targets[s.target].append(s.name)
    for e, inst in targets.items():
        if len(inst) != 1:
            raise RosterError(f"endogenous {e!r} needs exactly one instrument, found {len(inst)}")


def load_roster(path: str | Path) -> list[VariableSpec]:
    """Read the YAML variable roster."""
    doc = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    entries = doc.get("variables") if isinstance(doc, dict) else doc
    if not isinstance(entries, list):
        raise RosterError("roster must be a list of variables (or a mapping with 'variables')")
    specs = []
    for e in entries:
        e = dict(e)
        if "window" in e:
            e["window"] = tuple(int(v) for v in e["window"])
        try:
            specs.append(VariableSpec(**e))
        except TypeError as exc:
            raise RosterError(f"bad roster entry {e.get('name')!r}: {exc}") from None
    validate_roster(specs)
    return specs


def dump_roster(specs: Sequence[VariableSpec], path: str | Path) -> None:
    rows = []
    for s in specs:
        row = {"name": s.name, "role": s.role, "window": list(s.window)}
        if s.transform != "none":
            row["transform"] = s.transform
        for key in ("target", "source", "label"):
            if getattr(s, key):
                row[key] = getattr(s, key)
        if s.category:
            row["category"] = s.category
        rows.append(row)
    Path(path).write_text(yaml.safe_dump({"variables": rows}, sort_keys=False), encoding="utf-8")


@dataclass
class PanelTable:
    frame: pd.DataFrame  # columns country, year, variable, value (NaN = missing)

    def __len__(self) -> int:
        return len(self.frame)


def load_panel(path: str | Path, specs: Sequence[VariableSpec]) -> PanelTable:
    known = {s.series for s in specs}
    seen: dict[tuple[str, int, str], int] = {}
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != HEADER:
            raise PanelParseError(1, f"header must be {','.join(HEADER)}, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 4:
                raise PanelParseError(lineno, f"expected 4 fields, got {len(row)}")
            country, year, variable, value = (c.strip() for c in row)
            if not country:
                raise PanelParseError(lineno, "empty country")
            if len(year) != 4 or not year.isdigit():
                raise PanelParseError(lineno, f"year must be a 4-digit integer, got {year!r}")
            if variable not in known:
                raise UnknownVariableError(f"line {lineno}: unknown variable {variable!r}")
            if value == "":
                val = math.nan
            else:
                try:
                    val = float(value)
                except ValueError:
                    raise PanelParseError(lineno, f"value is not a number: {value!r}") from None
            key = (country, int(year), variable)
            if key in seen:
                raise DuplicateObservationError(
                    f"line {lineno}: duplicate observation {key} (first at line {seen[key]})"
                )
            seen[key] = lineno
            rows.append((country, int(year), variable, val))
    frame = pd.DataFrame(rows, columns=HEADER)
    frame["value"] = frame["value"].astype(float)
    return PanelTable(frame)


def write_panel(frame: pd.DataFrame, path: str | Path) -> None:
    """Write a long-format panel; missing values become empty cells."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HEADER)
        for country, year, variable, value in frame[HEADER].itertuples(index=False):
            w.writerow([country, int(year), variable, "" if pd.isna(value) else repr(float(value))])


def wide_to_long(frame: pd.DataFrame, country: str = "country", year: str = "year") -> pd.DataFrame:
    """Convert a country-year wide table (one column per variable) to long format."""
    long = frame.melt(id_vars=[country, year], var_name="variable", value_name="value")
    long = long.rename(columns={country: "country", year: "year"})
    return long[HEADER].sort_values(["country", "variable", "year"], kind="stable").reset_index(drop=True)


def decade_average(panel: PanelTable, specs: Sequence[VariableSpec]) -> pd.DataFrame:
    """Country x variable means over each variable's own year window.

    Missing years are skipped; a cell with no data in its window is NaN.
    """
    df = panel.frame.dropna(subset=["value"])
    # sorted so the floating-point sums do not depend on input row order
    df = df.sort_values(["variable", "country", "year"], kind="stable")
    countries = sorted(panel.frame["country"].unique())
    out = {}
    for s in specs:
        lo, hi = s.window
        sub = df[(df["variable"] == s.series) & (df["year"] >= lo) & (df["year"] <= hi)]
        out[s.name] = sub.groupby("country", sort=True)["value"].mean()
    table = pd.DataFrame(out, index=pd.Index(countries, name="country"))
    return table[[s.name for s in specs]]


def apply_transforms(table: pd.DataFrame, specs: Sequence[VariableSpec]) -> pd.DataFrame:
    out = table.copy()
    for s in specs:
        if s.transform == "none":
            continue
        col = out[s.name]
        bad = col[col.notna() & (col <= 0)]
        if len(bad):
            country = bad.index[0]
            raise TransformDomainError(
                f"log of non-positive value {bad.iloc[0]} for country {country!r}, variable {s.name!r}"
            )
        out[s.name] = np.log10(col)
    return out


@dataclass
class DesignMatrices:
    countries: tuple[str, ...]
    y: np.ndarray
    X: np.ndarray
    W: np.ndarray
    Z: np.ndarray
    outcome_name: str = "y"
    endogenous_names: tuple[str, ...] = ()
    exogenous_names: tuple[str, ...] = ()
    instrument_names: tuple[str, ...] = ()
    labels: dict[str, str] = field(default_factory=dict)
    drop_log: list[str] = field(default_factory=list)
    intercept: bool = True  # always included, never a mask bit

    def __post_init__(self):
        n = len(self.y)
        self.y = np.asarray(self.y, dtype=float).reshape(-1)
        self.X = np.asarray(self.X, dtype=float).reshape(n, -1)
        self.W = np.asarray(self.W, dtype=float).reshape(n, -1)
        self.Z = np.asarray(self.Z, dtype=float).reshape(n, -1)
        if self.Z.shape[1] != self.X.shape[1]:
            raise ValueError("Z must have one column per endogenous X column")
        if not self.endogenous_names:
            self.endogenous_names = tuple(f"x{i + 1}" for i in range(self.p))
        if not self.exogenous_names:
            self.exogenous_names = tuple(f"w{i + 1}" for i in range(self.q))
        if not self.instrument_names:
            self.instrument_names = tuple(f"z{i + 1}" for i in range(self.p))
        if not self.countries:
            self.countries = tuple(str(i) for i in range(n))
        for a in (self.y, self.X, self.W, self.Z):
            if not np.all(np.isfinite(a)):
                raise ValueError("design matrices must not contain missing values")

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def q(self) -> int:
        return self.W.shape[1]

    @property
    def regressors(self) -> np.ndarray:
        return np.hstack([self.X, self.W])

    @property
    def regressor_names(self) -> tuple[str, ...]:
        return self.endogenous_names + self.exogenous_names

    @property
    def first_stage_pool(self) -> np.ndarray:
        return np.hstack([self.Z, self.W])

    @property
    def first_stage_names(self) -> tuple[str, ...]:
        return self.instrument_names + self.exogenous_names

    def label(self, name: str) -> str:
        return self.labels.get(name, name)

    def single_stage(self):
        from .bma import LinearDesign

        return LinearDesign(self.y, self.regressors, self.regressor_names)

    def subset(self, countries: Iterable[str]) -> DesignMatrices:
        keep = set(countries)
        idx = [i for i, c in enumerate(self.countries) if c in keep]
        return DesignMatrices(
            countries=tuple(self.countries[i] for i in idx),
            y=self.y[idx], X=self.X[idx], W=self.W[idx], Z=self.Z[idx],
            outcome_name=self.outcome_name,
            endogenous_names=self.endogenous_names,
            exogenous_names=self.exogenous_names,
            instrument_names=self.instrument_names,
            labels=dict(self.labels),
            drop_log=list(self.drop_log),
        )


def build_design(table: pd.DataFrame, specs: Sequence[VariableSpec]) -> DesignMatrices:
    """Assemble (y, X, W, Z), dropping countries with any missing used cell."""
    validate_roster(specs)
    outcome = next(s for s in specs if s.role == "outcome")
    endog = [s for s in specs if s.role == "endogenous"]
    exog = [s for s in specs if s.role == "exogenous"]
    inst_by_target = {s.target: s for s in specs if s.role == "instrument"}
    inst = [inst_by_target[e.name] for e in endog]
    used = [outcome.name] + [s.name for s in endog + exog + inst]

    drop_log = []
    keep = []
    for country, row in table[used].iterrows():
        missing = [v for v in used if pd.isna(row[v])]
        if missing:
            drop_log.append(f"dropped {country}: missing {', '.join(missing)}")
        else:
            keep.append(country)
    for line in drop_log:
        log.info(line)
    sub = table.loc[keep, used]
    n, p, q = len(keep), len(endog), len(exog)
    if n <= p + q + 1:
        raise InsufficientDataError(
            f"{n} complete countries but the system needs n > p + q + 1 = {p + q + 1}"
        )

    def block(group):
        if not group:
            return np.zeros((n, 0))
        return sub[[s.name for s in group]].to_numpy(dtype=float)

    return DesignMatrices(
        countries=tuple(str(c) for c in keep),
        y=sub[outcome.name].to_numpy(dtype=float),
        X=block(endog),
        W=block(exog),
        Z=block(inst),
        outcome_name=outcome.name,
        endogenous_names=tuple(s.name for s in endog),
        exogenous_names=tuple(s.name for s in exog),
        instrument_names=tuple(s.name for s in inst),
        labels={s.name: s.display for s in specs},
        drop_log=drop_log,
    )


@dataclass(frozen=True)
class InstrumentCorrelation:
    endogenous: str
    instrument: str
    correlation: float | None  # None when a column is constant


@dataclass(frozen=True)
class SummaryRow:
    variable: str
    mean: float
    median: float
    sd: float
    min: float
    max: float
    corr_outcome: float | None


@dataclass
class DiagnosticsReport:
    correlations: list[InstrumentCorrelation] = field(default_factory=list)
    summary: list[SummaryRow] = field(default_factory=list)


def _pearson(a: np.ndarray, b: np.ndarray) -> float | None:
    da, db = a - a.mean(), b - b.mean()
    sa, sb = float(np.sqrt(da @ da)), float(np.sqrt(db @ db))
    if sa == 0.0 or sb == 0.0:
        return None
    return float(np.clip((da @ db) / (sa * sb), -1.0, 1.0))


def instrument_diagnostics(design: DesignMatrices) -> DiagnosticsReport:
    if design.n < 3:
        raise InsufficientDataError("instrument diagnostics need at least 3 countries")
    out = []
    for j, (xn, zn) in enumerate(zip(design.endogenous_names, design.instrument_names)):
        r = _pearson(design.X[:, j], design.Z[:, j])
        if r is None:
            warnings.warn(f"correlation undefined for {xn}/{zn}: constant column")
        out.append(InstrumentCorrelation(xn, zn, r))
    return DiagnosticsReport(correlations=out)


def summary_stats(table: pd.DataFrame, outcome: str) -> list[SummaryRow]:
    """Mean, median, sample SD, range and correlation with the outcome per column."""
    rows = []
    for name in table.columns:
        v = table[name].dropna().to_numpy(dtype=float)
        if len(v) == 0:
            rows.append(SummaryRow(name, *([math.nan] * 5), None))
            continue
        sd = float(np.std(v, ddof=1)) if len(v) > 1 else math.nan
        pair = table[[name, outcome]].dropna().to_numpy(dtype=float)
        corr = _pearson(pair[:, 0], pair[:, 1]) if len(pair) > 1 else None
        rows.append(SummaryRow(name, float(v.mean()), float(np.median(v)), sd,
                               float(v.min()), float(v.max()), corr))
    return rows


def build_from_files(
    data: str | Path, roster: str | Path, countries: Sequence[str] | None = None
) -> tuple[list[VariableSpec], pd.DataFrame, DesignMatrices]:
    """Roster + panel CSV -> (specs, transformed cross-section, design)."""
    specs = load_roster(roster)
    panel = load_panel(data, specs)
    table = apply_transforms(decade_average(panel, specs), specs)
    if countries is not None:
        wanted = set(countries)
        table = table.loc[[c for c in table.index if c in wanted]]
    return specs, table, build_design(table, specs)
