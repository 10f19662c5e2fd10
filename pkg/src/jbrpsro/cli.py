"""Command-line front end.

Subcommands::

    run           execute a grid of PSRO runs and write CSVs, a summary and figures
    delta-sweep   exploration-rate sweep for random and/or targeted exploration
    theory-check  perturbation bound check on a small game
    schema-check  validate emitted CSV files
    show-config   print the expanded run grid without running it

Experiment files are flat ``key = value`` text (``#`` starts a comment).
List-valued keys take comma-separated values and are expanded as a grid
over methods x deltas x seeds.  Command-line flags override file values.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import statistics
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .plotting import PLOT_COLUMNS, convergence_figure, delta_sweep_figure, tradeoff_figure
from .games import GameId
from .psro import CSV_COLUMNS, RunConfig, run_psro, theory_check_perturbation

log = logging.getLogger("jbrpsro")

ENV_OUT = "JBRPSRO_OUT"
DEFAULT_OUT = "results"

EXIT_OK, EXIT_RUN_FAILED, EXIT_CONFIG = 0, 1, 2

SUMMARY_COLUMNS = (
    "game",
    "method",
    "delta",
    "runs",
    "median_min_nashconv",
    "median_final_nashconv",
    "total_br_episodes",
)
SWEEP_COLUMNS = ("kind", "delta", "runs", "median_min_nashconv")

# key -> (parser, is_list)
_KEYS = {
    "game": (str, False),
    "methods": (str, True),
    "deltas": (float, True),
    "seeds": (int, True),
    "iterations": (int, False),
    "budget": (int, False),
    "hybrid_k": (int, False),
    "n_wedge": (str, False),
    "spi_min": (int, False),
    "spi_max": (int, False),
    "prd_steps": (int, False),
    "prd_dt": (float, False),
    "prd_floor": (float, False),
    "prd_average_from": (float, False),
    "out": (str, False),
    "jobs": (int, False),
}
_ALIASES = {"method": "methods", "delta": "deltas", "seed": "seeds"}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentSpec:
    runs: list[RunConfig]
    out: Path
    jobs: int = 1


def _split(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def parse_spec_text(text: str) -> dict:
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = _ALIASES.get(key.replace("-", "_"), key.replace("-", "_"))
        if key not in _KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = value
    return _typed(values)


def _typed(values: dict) -> dict:
    out = {}
    for key, value in values.items():
        if value is None:
            continue
        conv, is_list = _KEYS[key]
        try:
            out[key] = [conv(v) for v in _split(value)] if is_list else conv(value.strip())
        except ValueError as e:
            raise ConfigError(f"{key}: {e}") from None
    return out


def build_experiment(values: dict) -> ExperimentSpec:
    """Expand methods x deltas x seeds into validated run configs.

    Deltas apply only to exploring methods; the others run once per seed.
    """
    v = dict(values)
    methods = v.get("methods", ["psro"])
    deltas = v.get("deltas")
    seeds = v.get("seeds", [0])
    out = Path(v.get("out") or os.environ.get(ENV_OUT) or DEFAULT_OUT)
    common = {}
    for key in ("game", "iterations", "budget", "prd_steps", "prd_dt", "prd_floor", "prd_average_from"):
        if key in v:
            common[key] = v[key]
    wedge = v.get("n_wedge", "sweep")
    if wedge != "sweep":
        try:
            common["n_wedge"] = int(wedge)
        except ValueError:
            raise ConfigError(f"n_wedge must be an integer or 'sweep', got {wedge!r}") from None
    if "spi_min" in v or "spi_max" in v:
        common["spi_range"] = (v.get("spi_min", 0), v.get("spi_max", 50))
    runs = []
    try:
        for method in methods:
            probe = RunConfig.from_method(method, hybrid_k=v.get("hybrid_k"), **common)
            grid = deltas if (deltas and probe.exploration != "none") else [None]
            for delta in grid:
                for seed in seeds:
                    runs.append(
                        RunConfig.from_method(method, delta=delta, hybrid_k=v.get("hybrid_k"), seed=seed, **common)
                    )
        for cfg in runs:
            GameId.parse(cfg.game)
    except ValueError as e:
        raise ConfigError(str(e)) from None
    jobs = v.get("jobs", 1)
    if jobs < 1:
        raise ConfigError("jobs must be >= 1")
    return ExperimentSpec(runs, out, jobs)


def run_name(cfg: RunConfig) -> str:
    game = cfg.game.replace(":", "-")
    delta = f"_d{cfg.delta:g}" if cfg.exploration != "none" else ""
    return f"{game}_{cfg.label}{delta}_s{cfg.seed}"


# --------------------------------------------------------------------------
# Execution
# --------------------------------------------------------------------------


def _execute(args) -> tuple[str, str | None]:
    cfg, path = args
    try:
        run_psro(cfg, csv_path=path)
        return str(path), None
    except Exception:
        return str(path), traceback.format_exc()


def execute_runs(runs: list[RunConfig], run_dir: Path, jobs: int = 1) -> list[tuple[str, str | None]]:
    run_dir.mkdir(parents=True, exist_ok=True)
    tasks = [(cfg, run_dir / f"{run_name(cfg)}.csv") for cfg in runs]
    names = [t[1].name for t in tasks]
    if len(set(names)) != len(names):
        raise ConfigError("the grid contains duplicate runs")
    results = []
    if jobs == 1:
        for task in tasks:
            log.info("running %s", task[1].name)
            results.append(_execute(task))
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_execute, tasks))
    for path, err in results:
        if err:
            log.error("run %s failed:\n%s", path, err)
    return results


# --------------------------------------------------------------------------
# Aggregation (pure functions of the per-run files)
# --------------------------------------------------------------------------


def read_run(csv_path) -> tuple[dict, list[dict]]:
    csv_path = Path(csv_path)
    with open(csv_path.with_suffix(".json")) as f:
        meta = json.load(f)
    with open(csv_path, newline="") as f:
        rows = list(csv.DictReader(f))
    return meta, rows


def load_runs(run_dir) -> list[tuple[dict, list[dict]]]:
    return [read_run(p) for p in sorted(Path(run_dir).glob("*.csv"))]


def _group_key(meta: dict) -> tuple[str, str, str]:
    cfg = meta["config"]
    delta = repr(cfg["delta"]) if cfg["exploration"] != "none" else ""
    return cfg["game"], meta["method"], delta


def summarize(runs: list[tuple[dict, list[dict]]]) -> list[dict]:
    """Median minimum / final NashConv and episode totals per (game, method, delta)."""
    groups: dict[tuple, list[list[dict]]] = {}
    for meta, rows in runs:
        if rows:
            groups.setdefault(_group_key(meta), []).append(rows)
    out = []
    for (game, method, delta), members in sorted(groups.items()):
        out.append(
            {
                "game": game,
                "method": method,
                "delta": delta,
                "runs": len(members),
                "median_min_nashconv": statistics.median(float(r[-1]["min_nashconv_so_far"]) for r in members),
                "median_final_nashconv": statistics.median(float(r[-1]["nashconv"]) for r in members),
                "total_br_episodes": int(statistics.median(int(r[-1]["cumulative_br_episodes"]) for r in members)),
            }
        )
    return out


def write_table(rows: list[dict], columns, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=columns)
        w.writeheader()
        for row in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def render_figures(runs, summary, fig_dir: Path) -> list[Path]:
    written = []
    for game in sorted({r["game"] for r in summary}):
        curves: dict[str, list[list[float]]] = {}
        for meta, rows in runs:
            if meta["config"]["game"] != game or not rows:
                continue
            g, method, delta = _group_key(meta)
            label = method + (f" d={float(delta):g}" if delta else "")
            curves.setdefault(label, []).append([float(r["nashconv"]) for r in rows])
        series = {}
        for label, members in sorted(curves.items()):
            n = min(len(m) for m in members)
            ys = [statistics.median(m[t] for m in members) for t in range(n)]
            series[label] = (list(range(1, n + 1)), ys)
        stem = game.replace(":", "-")
        written.append(convergence_figure(series, fig_dir / f"convergence_{stem}.png", title=game))
        points = {}
        for row in summary:
            if row["game"] == game:
                label = row["method"] + (f" d={float(row['delta']):g}" if row["delta"] else "")
                points[label] = (row["total_br_episodes"], row["median_min_nashconv"])
        written.append(tradeoff_figure(points, fig_dir / f"tradeoff_{stem}.png", title=game))
    return written


# --------------------------------------------------------------------------
# Schema checks
# --------------------------------------------------------------------------

SCHEMAS = {
    "run": CSV_COLUMNS,
    "summary": SUMMARY_COLUMNS,
    "sweep": SWEEP_COLUMNS,
    "plot": PLOT_COLUMNS,
}


def check_csv(path) -> list[str]:
    """Problems with one emitted CSV (empty list when it conforms)."""
    path = Path(path)
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows:
        return [f"{path}: empty file"]
    header = tuple(rows[0])
    matches = [k for k, cols in SCHEMAS.items() if cols == header]
    if not matches:
        return [f"{path}: unknown header {','.join(header)}"]
    problems = []
    for i, row in enumerate(rows[1:], 2):
        if len(row) != len(header):
            problems.append(f"{path}:{i}: {len(row)} columns, expected {len(header)}")
    if matches[0] == "run":
        prev = -1
        for i, row in enumerate(rows[1:], 2):
            if len(row) != len(header):
                continue
            try:
                eps = int(row[4])
                [float(x) for x in (row[2], row[3], row[5], row[6], row[7])]
            except ValueError:
                problems.append(f"{path}:{i}: non-numeric metric")
                continue
            if eps < prev:
                problems.append(f"{path}:{i}: cumulative episodes decreased")
            prev = eps
    return problems


# --------------------------------------------------------------------------
# Subcommands
# --------------------------------------------------------------------------


def _overrides(args) -> dict:
    raw = {
        "game": args.game,
        "methods": args.method,
        "deltas": args.delta,
        "seeds": args.seeds,
        "iterations": args.iterations,
        "budget": args.budget,
        "hybrid_k": args.hybrid_k,
        "out": args.out,
        "jobs": args.jobs,
    }
    return _typed({k: v for k, v in raw.items() if v is not None})


def _values(args) -> dict:
    values = {}
    if args.spec:
        try:
            values = parse_spec_text(Path(args.spec).read_text())
        except OSError as e:
            raise ConfigError(f"cannot read spec file: {e}") from None
    values.update(_overrides(args))
    return values


def _experiment(args) -> ExperimentSpec:
    return build_experiment(_values(args))


def cmd_run(args) -> int:
    exp = _experiment(args)
    out = exp.out
    out.mkdir(parents=True, exist_ok=True)
    results = execute_runs(exp.runs, out / "runs", exp.jobs)
    runs = [read_run(p) for p, _ in results if Path(p).exists()]
    summary = summarize(runs)
    write_table(summary, SUMMARY_COLUMNS, out / "summary.csv")
    render_figures(runs, summary, out / "figures")
    _print_summary(summary)
    failed = sum(err is not None for _, err in results)
    if failed:
        print(f"{failed} of {len(results)} runs failed", file=sys.stderr)
        return EXIT_RUN_FAILED
    return EXIT_OK


def _print_summary(summary: list[dict]) -> None:
    print(f"{'game':<14}{'method':<14}{'delta':>7}{'runs':>6}{'min NashConv':>16}{'episodes':>14}")
    for r in summary:
        print(
            f"{r['game']:<14}{r['method']:<14}{r['delta']:>7}{r['runs']:>6}"
            f"{r['median_min_nashconv']:>16.6f}{r['total_br_episodes']:>14d}"
        )


def cmd_delta_sweep(args) -> int:
    values = _values(args)
    values.pop("methods", None)
    kinds = ["random", "targeted"] if args.kind == "both" else [args.kind]
    deltas = values.pop("deltas", [0.05, 0.1, 0.2, 0.4, 0.6])
    if any(not 0.0 <= d <= 1.0 for d in deltas):
        raise ConfigError("deltas must lie in [0, 1]")
    methods = {"random": "jbr-dr", "targeted": "jbr-dt"}
    values["methods"] = ["jbr"] + [methods[k] for k in kinds]
    values["deltas"] = [d for d in deltas if d > 0]
    exp = build_experiment(values)
    exp.out.mkdir(parents=True, exist_ok=True)
    results = execute_runs(exp.runs, exp.out / "runs", exp.jobs)
    runs = [read_run(p) for p, _ in results if Path(p).exists()]
    summary = summarize(runs)
    naive = next((r for r in summary if r["method"] == "jbr"), None)
    rows = []
    for kind in kinds:
        if naive is not None and 0.0 in deltas:
            rows.append({"kind": kind, "delta": 0.0, "runs": naive["runs"], "median_min_nashconv": naive["median_min_nashconv"]})
        for r in summary:
            if r["method"] == methods[kind]:
                rows.append({"kind": kind, "delta": float(r["delta"]), "runs": r["runs"], "median_min_nashconv": r["median_min_nashconv"]})
    rows.sort(key=lambda r: (r["kind"], r["delta"]))
    write_table(rows, SWEEP_COLUMNS, exp.out / "delta_sweep.csv")
    series = {k: ([r["delta"] for r in rows if r["kind"] == k], [r["median_min_nashconv"] for r in rows if r["kind"] == k]) for k in kinds}
    delta_sweep_figure(
        series,
        exp.out / "figures" / "delta_sweep.png",
        baseline=None if naive is None else naive["median_min_nashconv"],
        title=exp.runs[0].game,
    )
    for r in rows:
        print(f"{r['kind']:<10}{r['delta']:>6g}{r['median_min_nashconv']:>14.6f}")
    if naive is not None:
        print(f"{'naive':<10}{0:>6g}{naive['median_min_nashconv']:>14.6f}")
    return EXIT_RUN_FAILED if any(err for _, err in results) else EXIT_OK


def cmd_theory_check(args) -> int:
    deltas = [float(d) for d in _split(args.delta or "0.1,0.5")]
    if args.trials < 0:
        raise ConfigError("trials must be >= 0")
    try:
        report = theory_check_perturbation(args.game or "kuhn", args.trials, deltas, seed=args.seed)
    except ValueError as e:
        raise ConfigError(str(e)) from None
    out = Path(args.out or os.environ.get(ENV_OUT) or DEFAULT_OUT)
    out.mkdir(parents=True, exist_ok=True)
    text = report.render()
    path = out / f"theory_check_{report.game.replace(':', '-')}.txt"
    path.write_text(text)
    print(text, end="")
    print(f"report written to {path}")
    return EXIT_OK if report.violations == 0 else EXIT_RUN_FAILED


def cmd_schema_check(args) -> int:
    paths = []
    for p in args.paths:
        p = Path(p)
        paths.extend(sorted(p.rglob("*.csv")) if p.is_dir() else [p])
    problems = []
    for p in paths:
        problems.extend(check_csv(p))
    for msg in problems:
        print(msg)
    print(f"checked {len(paths)} files, {len(problems)} problems")
    return EXIT_OK if not problems else EXIT_RUN_FAILED


def cmd_show_config(args) -> int:
    exp = _experiment(args)
    print(f"# out={exp.out} jobs={exp.jobs} runs={len(exp.runs)}")
    for cfg in exp.runs:
        d = dataclasses.asdict(cfg)
        d["spi_range"] = list(cfg.spi_range)
        print(json.dumps({"name": run_name(cfg), **d}, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="jbrpsro", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def grid_flags(p, methods=True):
        p.add_argument("--spec", help="experiment file (key = value lines)")
        p.add_argument("--out", help=f"output directory (default ${ENV_OUT} or ./{DEFAULT_OUT})")
        p.add_argument("--seeds", help="comma-separated seeds")
        p.add_argument("--jobs", help="worker processes")
        p.add_argument("--game", help="kuhn, leduc or matrix:<seed>:<m>x<n>")
        if methods:
            p.add_argument("--method", help="comma-separated: psro, jbr, jbr-spi, jbr-dr, jbr-dt, hbr<k>[-dt]")
        p.add_argument("--delta", help="comma-separated exploration rates")
        p.add_argument("--budget", help="episodes per best-response computation")
        p.add_argument("--iterations", help="PSRO iterations")
        p.add_argument("--hybrid-k", help="period of independent best responses for hbr methods")

    p = sub.add_parser("run", help="run a grid of PSRO experiments")
    grid_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("show-config", help="print the expanded run grid")
    grid_flags(p)
    p.set_defaults(func=cmd_show_config)

    p = sub.add_parser("delta-sweep", help="sweep the exploration rate")
    grid_flags(p, methods=False)
    p.add_argument("--kind", choices=("random", "targeted", "both"), default="both")
    p.set_defaults(func=cmd_delta_sweep, method=None)

    p = sub.add_parser("theory-check", help="check the perturbation bound on random profiles")
    p.add_argument("--game", default="kuhn")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--delta", help="comma-separated rates (default 0.1,0.5)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_theory_check)

    p = sub.add_parser("schema-check", help="validate emitted CSV files")
    p.add_argument("paths", nargs="+", help="files or directories")
    p.set_defaults(func=cmd_schema_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
