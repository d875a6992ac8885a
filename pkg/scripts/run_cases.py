"""Solve and simulate every bundled case with all three controllers.

Writes run summaries, trajectories and the comparison tables under
``--out-dir``. Cases 1-4 share one offline table; case 5 gets its own.
"""
import argparse
import sys
from pathlib import Path

from dsomdp.cli import main


def run(preset: str, out_dir: Path, workers: int | None) -> int:
    extra = ["--workers", str(workers)] if workers else []
    tables = []
    for case in (1, 5):
        table = out_dir / f"table_case{case}.dsu"
        code = main(["solve-offline", "--preset", preset, "--case", str(case),
                     "--out", str(table), "-q", *extra])
        if code:
            return code
        tables += ["--table", str(table)]
    code = main(["run", "--preset", preset, "--case", "all", "--controller", "all",
                 *tables, "--out-dir", str(out_dir / "runs"), "-q", *extra])
    if code:
        return code
    summaries = sorted(str(p) for p in (out_dir / "runs").glob("case*_*.json"))
    return main(["compare", *summaries, "--out-dir", str(out_dir / "compare")])


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--preset", default="desk")
    ap.add_argument("--out-dir", type=Path, default=Path("results"))
    ap.add_argument("--workers", type=int)
    args = ap.parse_args()
    sys.exit(run(args.preset, args.out_dir, args.workers))
