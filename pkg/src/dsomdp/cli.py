"""Command-line harness.

Sub-commands: ``solve-offline``, ``run``, ``compare``, ``estimate-matrix`` and
``gen-fixtures``. Files written by any command depend only on the inputs;
wall-clock timings go to stderr.

Exit codes: 0 success, 2 usage, 3 invalid configuration, 4 missing or
malformed input data, 5 checksum mismatch, 1 anything else.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

from . import fixtures
from .config import (ConfigError, build, load_config, offline_checksum, preset,
                     scenario_checksum)
from .mdp.solver import TableMismatch, UtilityTable, solve_offline
from .profiles import ProfileError, estimate_transition_matrix, error_bins, load_history
from .reference import DeterministicController, optimal_oracle
from .simulate import COST_FIELDS, MdpController, simulate_day

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_CONFIG, EXIT_INPUT, EXIT_CHECKSUM = 0, 1, 2, 3, 4, 5
CONTROLLERS = ("mdp", "deterministic", "oracle")


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _log(args, msg: str) -> None:
    if not getattr(args, "quiet", False):
        print(msg, file=sys.stderr)


def _config(args):
    cfg = preset(args.preset) if args.preset else load_config(args.config)
    if getattr(args, "workers", None) is not None:
        cfg = replace(cfg, workers=args.workers)
    return cfg


def _cases(spec: str | None, default: int) -> list[int]:
    if spec is None:
        return [default]
    if spec == "all":
        return [1, 2, 3, 4, 5]
    try:
        out = [int(x) for x in spec.split(",")]
    except ValueError:
        raise CliError(f"bad case list {spec!r}", EXIT_USAGE) from None
    if any(c not in range(1, 6) for c in out):
        raise CliError("cases must be in 1..5", EXIT_USAGE)
    return out


# ---------------------------------------------------------------------------

def cmd_solve_offline(args) -> int:
    cfg = _config(args)
    if args.case is not None:
        cfg = replace(cfg, case=_cases(args.case, cfg.case)[0])
    sc = build(cfg)
    st, act = sc.setup.states, sc.setup.actions
    prob = sc.offline_problem()
    report = {
        "case": cfg.case,
        "horizon": cfg.horizon,
        "states": st.size,
        "pv_states": st.n_pv,
        "soc_states": st.n_soc,
        "offline_actions": act.size(online=False),
        "online_actions": act.size(online=True),
        "checksum": prob.checksum,
    }
    if args.dry_run:
        sys.stdout.write(_json(report))
        return EXIT_OK

    def progress(t: int) -> None:
        _log(args, f"epoch {t} solved")

    start = time.perf_counter()
    table = solve_offline(prob, cfg.n_workers(), progress)
    wall = time.perf_counter() - start
    report["infeasible_states_t0"] = table.infeasible_count(0)
    report["infeasible_state_epochs"] = table.infeasible_count()
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    table.save(out)
    report["table"] = out.name
    _write(out.with_suffix(".json"), _json(report))
    _log(args, f"offline solve took {wall:.1f} s")
    sys.stdout.write(_json(report))
    return EXIT_OK


def _tables(paths) -> dict[str, UtilityTable]:
    out = {}
    for p in paths or ():
        if not Path(p).exists():
            raise FileNotFoundError(f"utility table not found: {p}")
        t = UtilityTable.load(p)
        out[t.checksum] = t
    return out


def cmd_run(args) -> int:
    cfg = _config(args)
    base = build(cfg)
    cases = _cases(args.case, cfg.case)
    ctrls = list(CONTROLLERS) if args.controller == "all" else [args.controller or cfg.controller]
    tables = _tables(args.table)
    out_dir = Path(args.out_dir)
    checksum = scenario_checksum(cfg)
    for case in cases:
        sc = base.with_case(case)
        off = offline_checksum(sc)
        oracle = None
        if "oracle" in ctrls or not args.no_oracle:
            oracle = optimal_oracle(sc.setup, sc.day)
        for name in ctrls:
            if name == "oracle":
                traj = oracle.trajectory
            elif name == "deterministic":
                ctrl = DeterministicController(plan_online=cfg.deterministic_plan_online)
                traj = simulate_day(ctrl, sc.setup, sc.day)
            else:
                if off not in tables:
                    if not args.solve:
                        if tables:
                            raise TableMismatch(f"no utility table matches case {case} "
                                                f"(checksum {off[:12]})")
                        raise CliError("controller mdp needs --table or --solve", EXIT_USAGE)
                    _log(args, f"solving offline table for case {case}")
                    tables[off] = solve_offline(sc.offline_problem(), cfg.n_workers())
                traj = simulate_day(MdpController(tables[off]), sc.setup, sc.day)
            stem = f"case{case}_{name}"
            _write(out_dir / f"{stem}.csv", traj.to_csv())
            summary = {"case": case, "controller": name, "scenario_checksum": checksum,
                       "offline_checksum": off, "trajectory": f"{stem}.csv", **traj.summary()}
            if oracle is not None:
                summary["excessive"] = traj.total - oracle.trajectory.total
                summary["oracle_feasible"] = oracle.feasible
            _write(out_dir / f"{stem}.json", _json(summary))
            line = f"case {case} {name:<13} total {traj.total:12.4f}"
            if "excessive" in summary:
                line += f"  excessive {summary['excessive']:10.4f}"
            print(line)
    return EXIT_OK


# ---------------------------------------------------------------------------

CATEGORIES = COST_FIELDS  # c_grid .. c_tso, total


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def cmd_compare(args) -> int:
    if len(args.summaries) < 2:
        raise CliError("compare needs at least two run summaries", EXIT_USAGE)
    runs = []
    for p in args.summaries:
        p = Path(p)
        if not p.exists():
            raise FileNotFoundError(f"run summary not found: {p}")
        try:
            runs.append((p, json.loads(p.read_text(encoding="utf-8"))))
        except json.JSONDecodeError as e:
            raise ProfileError(f"{p}:{e.lineno}: invalid JSON: {e.msg}") from None
    sums = {r["scenario_checksum"] for _, r in runs}
    if len(sums) > 1:
        raise TableMismatch("runs come from different scenarios: "
                            + ", ".join(sorted(s[:12] for s in sums)))
    order = {c: i for i, c in enumerate(CONTROLLERS)}
    runs.sort(key=lambda pr: (pr[1]["case"], order.get(pr[1]["controller"], len(order))))

    # per case, deltas are taken against the oracle if present, else the first run
    base = {}
    for _, r in runs:
        base.setdefault(r["case"], r)
    for _, r in runs:
        if r["controller"] == "oracle" and base[r["case"]]["controller"] != "oracle":
            base[r["case"]] = r
    rows, bars = [], []
    for _, r in runs:
        b = base[r["case"]]
        vals = [r[c] for c in CATEGORIES]
        deltas = [r[c] - b[c] for c in CATEGORIES]
        rows.append([r["case"], r["controller"], *map(repr, vals), *map(repr, deltas)])
        bars += [[r["case"], r["controller"], c, repr(r[c])] for c in CATEGORIES]
    out_dir = Path(args.out_dir)
    table = _csv(["case", "controller", *CATEGORIES, *(f"delta_{c}" for c in CATEGORIES)], rows)
    _write(out_dir / "comparison.csv", table)
    _write(out_dir / "cost_bars.csv", _csv(["case", "controller", "category", "value"], bars))

    soc_rows, p_rows = [], []
    for path, r in runs:
        traj = path.parent / r["trajectory"]
        if not traj.exists():
            raise FileNotFoundError(f"trajectory not found: {traj}")
        reader = csv.DictReader(io.StringIO(traj.read_text(encoding="utf-8")))
        soc_cols = None
        for rec in reader:
            if soc_cols is None:
                soc_cols = [k for k in rec if k.startswith("soc_") and not k.startswith("soc_idx")]
            soc_rows.append([r["case"], r["controller"], rec["t"], *(rec[k] for k in soc_cols)])
            p_rows.append([r["case"], r["controller"], rec["t"], rec["p_ts"], rec["p_min"],
                           rec["p_max"]])
    n_soc = len(soc_rows[0]) - 3 if soc_rows else 0
    _write(out_dir / "soc_trace.csv",
           _csv(["case", "controller", "t", *(f"soc_{b + 1}" for b in range(n_soc))], soc_rows))
    _write(out_dir / "p_ts_trace.csv",
           _csv(["case", "controller", "t", "p_ts", "p_min", "p_max"], p_rows))
    sys.stdout.write(table)
    return EXIT_OK


# ---------------------------------------------------------------------------

def cmd_estimate_matrix(args) -> int:
    if not Path(args.history).exists():
        raise FileNotFoundError(f"history file not found: {args.history}")
    if args.bins < 2:
        raise CliError("--bins must be at least 2", EXIT_USAGE)
    m = estimate_transition_matrix(load_history(args.history), error_bins(args.bins))
    text = m.to_csv()
    if args.out:
        _write(Path(args.out), text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_gen_fixtures(args) -> int:
    for p in fixtures.write(args.out_dir, fixtures.FixtureParams(seed=args.seed)):
        print(p.name)
    return EXIT_OK


# ---------------------------------------------------------------------------

def _add_config(p: argparse.ArgumentParser) -> None:
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("config", nargs="?", help="scenario JSON file")
    g.add_argument("--preset", help="bundled scenario (desk or full)")
    p.add_argument("--workers", type=int, help="override the worker count")
    p.add_argument("-q", "--quiet", action="store_true", help="no progress on stderr")


def parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dsomdp", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve-offline", help="backward induction over the day-ahead view")
    _add_config(p)
    p.add_argument("--case", help="case id (default from the config)")
    p.add_argument("--out", default="table.dsu", help="utility table file (report goes next to it)")
    p.add_argument("--dry-run", action="store_true", help="report dimensions without solving")
    p.set_defaults(func=cmd_solve_offline)

    p = sub.add_parser("run", help="simulate the day with one or all controllers")
    _add_config(p)
    p.add_argument("--controller", choices=(*CONTROLLERS, "all"))
    p.add_argument("--case", help="case id, comma list or 'all'")
    p.add_argument("--table", action="append", help="utility table (repeatable)")
    p.add_argument("--solve", action="store_true", help="solve missing tables in-process")
    p.add_argument("--no-oracle", action="store_true", help="skip the excessive-cost baseline")
    p.add_argument("--out-dir", default="runs")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="tabulate run summaries and export plot data")
    p.add_argument("summaries", nargs="*", help="run summary JSON files")
    p.add_argument("--out-dir", default="compare")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("estimate-matrix", help="PV error transition matrix from history")
    p.add_argument("history")
    p.add_argument("--bins", type=int, default=11)
    p.add_argument("--out", help="output CSV (default stdout)")
    p.set_defaults(func=cmd_estimate_matrix)

    p = sub.add_parser("gen-fixtures", help="write the synthetic profile set")
    p.add_argument("out_dir")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_fixtures)
    return ap


def main(argv=None) -> int:
    args = parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as e:
        msg, code = str(e), e.code
    except ConfigError as e:
        msg, code = str(e), EXIT_CONFIG
    except (FileNotFoundError, ProfileError) as e:
        msg, code = str(e), EXIT_INPUT
    except TableMismatch as e:
        msg, code = str(e), EXIT_CHECKSUM
    print(f"dsomdp: error: {msg}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
