"""Write a synthetic panel on the full 43-variable roster, plus subsample lists.

    python scripts/make_democracy_fixture.py --out fixture/ --seed 0

Produces panel.csv, roster.yaml (a copy of the bundled roster), non_oecd.txt
and oecd.txt. Values are synthetic; use this to exercise the full pipeline
at full scale before supplying real data.
"""
import argparse
import shutil
from pathlib import Path

from ivbma.pipeline import write_panel
from ivbma.synthetic import democracy_panel, roster_path


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="fixture")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    fx = democracy_panel(args.seed)
    write_panel(fx.panel, out / "panel.csv")
    shutil.copyfile(roster_path(), out / "roster.yaml")
    (out / "non_oecd.txt").write_text("\n".join(fx.non_oecd) + "\n")
    (out / "oecd.txt").write_text("\n".join(fx.oecd) + "\n")
    print(f"{len(fx.countries)} countries ({len(fx.incomplete)} incomplete), "
          f"{len(fx.non_oecd)} non-OECD ids; wrote {out}")


if __name__ == "__main__":
    main()
