"""Command-line entry point: pipeline -> engine -> report files."""
from __future__ import annotations

import argparse
import hashlib
import json
import platform
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .bma import exact_bma, mc3_sample
from .config import METHODS, PriorConfig, RunConfig, read_country_list
from .iv import run_ivbma
from .models import DEFAULT_ENUMERATION_CAP
from .pipeline import build_from_files, instrument_diagnostics, summary_stats
from .report import export_chain, export_draws, render_diagnostics, render_table, render_top_models

EXIT_CONFIG, EXIT_PIPELINE, EXIT_ENGINE, EXIT_REPORT = 2, 3, 4, 5


class StageError(RuntimeError):
    def __init__(self, stage: str, exc: BaseException, code: int):
        super().__init__(f"[{stage}] {type(exc).__name__}: {exc}")
        self.stage = stage
        self.code = code


def _sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _versions() -> dict:
    import numba
    import pandas

    return {
        "ivbma": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "pandas": pandas.__version__,
        "numba": numba.__version__,
    }


def _report_header(config: RunConfig, design, extra: list[str]) -> list[str]:
    prior = PriorConfig(config.g)
    lines = [
        f"Method: {config.method}",
        f"Outcome: {design.label(design.outcome_name)}",
        f"Countries (n): {design.n}",
        f"Candidate regressors: {design.p + design.q} ({design.p} endogenous, {design.q} exogenous)",
        f"Slope prior: Zellner g-prior, g = {prior.resolve(design.n):g} ({prior.mode})",
    ]
    return lines + extra + [""]


def _run_engine(config: RunConfig, design, specs, out: Path) -> tuple[str, list[Path]]:
    sampler = config.sampler()
    order = [s.name for s in specs if s.role in ("endogenous", "exogenous")]
    labels = dict(design.labels)
    files: list[Path] = []
    if config.method == "ivbma":
        result = run_ivbma(design, config=sampler)
        extra = [
            f"Iterations: {sampler.iterations}, burn-in: {sampler.burn_in}, "
            f"thinning: {result.thinning}, retained draws: {len(result.draws)}",
            "Acceptance rates: outcome "
            + f"{result.acceptance[0]:.3f}"
            + (f", first stage mean {np.mean(result.acceptance[1:]):.3f}" if design.p else ""),
        ]
        body = render_table(result.second_stage, title="Second stage (outcome equation)",
                            labels=labels, endogenous=design.endogenous_names, order=order)
        body += "\n" + _render_sigma(result.sigma_summary, ("outcome",) + design.endogenous_names, labels)
        body += "\n" + render_top_models(result.second_stage)
        files.append(export_draws(result, out / "draws_second_stage.csv", stage="second"))
        files.append(export_draws(result, out / "draws_first_stage.csv", stage="first"))
    elif config.method == "bma-mc3":
        chain, summary = mc3_sample(design.single_stage(), config=sampler)
        extra = [
            f"Iterations: {sampler.iterations}, burn-in: {sampler.burn_in}",
            f"Acceptance rate: {chain.acceptance_rate:.3f}; distinct models visited: {summary.n_models}",
        ]
        body = render_table(summary, title="Single-equation BMA (MC3)", labels=labels,
                            endogenous=design.endogenous_names, order=order)
        body += "\n" + render_top_models(summary)
        files.append(export_chain(chain, out / "chain.txt"))
    else:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            table, summary = exact_bma(design.single_stage(), PriorConfig(config.g),
                                       cap=config.enumeration_cap)
        extra = [f"Models enumerated: {summary.n_models}"]
        extra += [f"Note: {w.message}" for w in caught]
        body = render_table(summary, title="Single-equation BMA (exact enumeration)",
                            labels=labels, endogenous=design.endogenous_names, order=order)
        body += "\n" + render_top_models(summary)
    header = _report_header(config, design, extra)
    return "\n".join(header) + body, files


def _render_sigma(sigma: np.ndarray, names, labels) -> str:
    lines = ["Posterior mean of the error covariance (natural scale)"]
    shown = [labels.get(n, n) for n in names]
    for i, row in enumerate(sigma):
        vals = " ".join(f"{v:>10.4f}" for v in row)
        lines.append(f"  {f'[{i}]':<5}{shown[i][:28]:<28} {vals}")
    return "\n".join(lines) + "\n"


def run(config: RunConfig) -> dict:
    """Execute one configured run and write its files under ``config.out``.

    Returns the manifest. Failures raise StageError tagged with the stage.
    """
    t0 = time.perf_counter()
    out = Path(config.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise StageError("report", exc, EXIT_REPORT) from exc

    try:
        with warnings.catch_warnings(record=True) as pipe_warn:
            warnings.simplefilter("always")
            specs, table, design = build_from_files(config.data, config.roster, config.subsample)
            diag = instrument_diagnostics(design)
        used = [design.outcome_name] + list(design.regressor_names) + list(design.instrument_names)
        diag.summary = summary_stats(table.loc[list(design.countries), used], design.outcome_name)
    except Exception as exc:
        raise StageError("pipeline", exc, EXIT_PIPELINE) from exc

    try:
        report, files = _run_engine(config, design, specs, out)
    except Exception as exc:
        raise StageError(config.method, exc, EXIT_ENGINE) from exc

    try:
        (out / "report.txt").write_text(report, encoding="utf-8")
        diag_text = render_diagnostics(diag, design.drop_log, design.labels)
        if pipe_warn:
            diag_text += "\nWarnings\n" + "".join(f"  {w.message}\n" for w in pipe_warn)
        (out / "diagnostics.txt").write_text(diag_text, encoding="utf-8")
        sampler = config.sampler()
        manifest = {
            "config": config.to_dict(),
            "config_hash": config.config_hash(),
            "seed": config.seed,
            "dataset_sha256": _sha256(config.data),
            "roster_sha256": _sha256(config.roster),
            "n": design.n,
            "effective_thinning": sampler.effective_thinning if config.method == "ivbma" else None,
            "files": sorted(p.name for p in [out / "report.txt", out / "diagnostics.txt", *files]),
            "versions": _versions(),
            "wall_time_seconds": round(time.perf_counter() - t0, 3),
        }
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    except OSError as exc:
        raise StageError("report", exc, EXIT_REPORT) from exc
    return manifest


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ivbma", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run BMA or IVBMA on a panel CSV")
    r.add_argument("--data", required=True, help="long-format panel CSV (country,year,variable,value)")
    r.add_argument("--roster", required=True, help="variable roster YAML")
    r.add_argument("--method", choices=METHODS, default="ivbma")
    r.add_argument("--iterations", type=int, default=100_000)
    r.add_argument("--burn-in", type=int, default=10_000)
    r.add_argument("--thin", type=int, default=10)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--g", default=None, help="g-prior constant; omit or 'n' for g = n")
    r.add_argument("--subsample", default=None,
                   help="country ids to keep: a file with one id per line, or a comma list")
    r.add_argument("--out", default="out")
    r.add_argument("--max-draws", type=int, default=5_000,
                   help="cap on retained draws; thinning is raised to respect it")
    r.add_argument("--enumeration-cap", type=int, default=DEFAULT_ENUMERATION_CAP)
    return ap


def config_from_args(args) -> RunConfig:
    g = PriorConfig.parse(args.g).g
    sub = read_country_list(args.subsample) if args.subsample else None
    return RunConfig(
        data=args.data, roster=args.roster, method=args.method, iterations=args.iterations,
        burn_in=args.burn_in, thinning=args.thin, seed=args.seed, g=g, subsample=sub,
        out=args.out, enumeration_cap=args.enumeration_cap, max_draws=args.max_draws,
    )


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = config_from_args(args)
    except (ValueError, OSError) as exc:
        print(f"error [config] {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        manifest = run(config)
    except StageError as exc:
        print(f"error {exc}", file=sys.stderr)
        return exc.code
    print(f"wrote {', '.join(manifest['files'])} and manifest.json to {config.out} "
          f"(n = {manifest['n']}, {manifest['wall_time_seconds']:.1f} s)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
