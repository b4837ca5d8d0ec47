"""Command-line entry points: run experiments, aggregate, validate.

    dro run --config cfg.yaml --method DRO --seeds 0..9 --out results/
    dro report --in results/ --out merged.csv
    dro validate --out oracle_report.csv

`DRO_NUM_WORKERS` caps process-level parallelism of the seed fan-out
(default 1: fully serial, byte-reproducible output either way).
"""

from __future__ import annotations

import argparse
import logging
import os
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from dro.config import ConfigError, build_run_config, load_config
from dro.orchestrator import METHODS, run as execute_run, write_csv

logger = logging.getLogger("dro")


def parse_seeds(spec: str) -> list[int]:
    """Either a single seed ("7") or an inclusive range ("0..9")."""
    match = re.fullmatch(r"(-?\d+)\.\.(-?\d+)", spec.strip())
    if match:
        lo, hi = int(match.group(1)), int(match.group(2))
        if hi < lo:
            raise ValueError(f"empty seed range: {spec}")
        return list(range(lo, hi + 1))
    return [int(spec.strip())]


def seed_csv_path(out_dir: Path, method: str, seed: int) -> Path:
    return out_dir / f"{method.lower()}_seed{seed}.csv"


def _execute_seed(payload: tuple) -> tuple[int, str | None]:
    """Worker: build the run config, execute, write the per-seed CSV."""
    config, method, seed, out_dir, timings = payload
    try:
        record = execute_run(build_run_config(config, method, seed))
        write_csv(record, seed_csv_path(Path(out_dir), method, seed), include_timings=timings)
        return seed, None
    except Exception as exc:  # noqa: BLE001 - reported per seed, exit code 2
        return seed, f"{type(exc).__name__}: {exc}"


def _quantiles(values: list[float]) -> tuple[float, float, float]:
    arr = np.asarray(values, dtype=float)
    return (
        float(np.median(arr)),
        float(np.percentile(arr, 25)),
        float(np.percentile(arr, 75)),
    )


def write_summary(out_dir: Path, method: str, seeds: list[int], path: Path) -> None:
    """Per-iteration median and interquartile best/regret across seeds."""
    per_seed: dict[int, list[dict]] = {}
    for seed in seeds:
        csv_path = seed_csv_path(out_dir, method, seed)
        if not csv_path.exists():
            continue
        per_seed[seed] = _read_rows(csv_path)
    if not per_seed:
        raise FileNotFoundError("no per-seed CSVs to summarize")
    n_iters = min(len(rows) for rows in per_seed.values())
    lines = [
        "iter,best_median,best_q1,best_q3,regret_median,regret_q1,regret_q3"
    ]
    for i in range(n_iters):
        bests = [rows[i]["best"] for rows in per_seed.values()]
        regrets = [rows[i]["regret"] for rows in per_seed.values()]
        bm, b1, b3 = _quantiles(bests)
        if any(r is None for r in regrets):
            rm = r1 = r3 = ""
        else:
            rm, r1, r3 = (repr(v) for v in _quantiles(regrets))
        lines.append(f"{i + 1},{bm!r},{b1!r},{b3!r},{rm},{r1},{r3}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _read_rows(path: Path) -> list[dict]:
    text = path.read_text(encoding="utf-8").strip().splitlines()
    header = text[0].split(",")
    idx = {name: i for i, name in enumerate(header)}
    rows = []
    for line in text[1:]:
        parts = line.split(",")
        regret = parts[idx["regret"]]
        rows.append(
            {
                "iter": int(parts[idx["iter"]]),
                "best": float(parts[idx["best"]]),
                "regret": None if regret == "" else float(regret),
            }
        )
    return rows


def cmd_run(args: argparse.Namespace) -> int:
    try:
        config = load_config(args.config)
        seeds = parse_seeds(args.seeds)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if args.method not in METHODS:
        print(f"error: unknown method {args.method!r}; known: {METHODS}", file=sys.stderr)
        return 1
    if args.reset_dt:
        config = dict(config)
        config["run"] = dict(config["run"], reset_dt=True)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    # surface config problems (bad objective, inconsistent dims) before fan-out
    try:
        build_run_config(config, args.method, seeds[0])
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    workers = int(os.environ.get("DRO_NUM_WORKERS", "1"))
    payloads = [(config, args.method, s, str(out_dir), args.timings) for s in seeds]
    failures: list[tuple[int, str]] = []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for seed, err in pool.map(_execute_seed, payloads):
                if err is not None:
                    failures.append((seed, err))
    else:
        for payload in payloads:
            seed, err = _execute_seed(payload)
            if err is not None:
                failures.append((seed, err))

    for seed, err in failures:
        logger.error("seed %d failed: %s", seed, err)
    done = [s for s in seeds if s not in {f[0] for f in failures}]
    if done:
        write_summary(out_dir, args.method, done, out_dir / "summary.csv")
    return 0 if not failures else 2


def cmd_report(args: argparse.Namespace) -> int:
    in_dir = Path(args.in_dir)
    files = sorted(in_dir.glob("*_seed*.csv"))
    if not files:
        print(f"error: no run CSVs found in {in_dir}", file=sys.stderr)
        return 1
    pattern = re.compile(r"(?P<method>.+)_seed(?P<seed>-?\d+)\.csv")
    long_rows: list[tuple[str, int, int, float, float | None]] = []
    for path in files:
        match = pattern.fullmatch(path.name)
        if not match:
            continue
        method = match.group("method").upper()
        seed = int(match.group("seed"))
        for row in _read_rows(path):
            long_rows.append((method, seed, row["iter"], row["best"], row["regret"]))

    # mean +/- standard error per (method, iteration)
    groups: dict[tuple[str, int], list[tuple[float, float | None]]] = {}
    for method, _, it, best, regret in long_rows:
        groups.setdefault((method, it), []).append((best, regret))

    def _stats(values: list[float]) -> tuple[str, str]:
        mean = repr(float(np.mean(values)))
        if len(values) < 2:
            return mean, ""  # single seed: standard error reported empty
        se = float(np.std(values, ddof=1) / np.sqrt(len(values)))
        return mean, repr(se)

    lines = [
        "method,seed,iter,best,regret,mean_best,se_best,mean_regret,se_regret"
    ]
    for method, seed, it, best, regret in long_rows:
        bests = [b for b, _ in groups[(method, it)]]
        regrets = [r for _, r in groups[(method, it)]]
        mean_best, se_best = _stats(bests)
        if any(r is None for r in regrets):
            mean_regret = se_regret = ""
        else:
            mean_regret, se_regret = _stats(regrets)
        regret_s = "" if regret is None else repr(regret)
        lines.append(
            f"{method},{seed},{it},{best!r},{regret_s},"
            f"{mean_best},{se_best},{mean_regret},{se_regret}"
        )
    Path(args.out).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return 0


def cmd_validate(args: argparse.Namespace) -> int:
    from dro.oracles import run_validation

    reports = run_validation(seed=args.seed)
    lines = ["name,max_abs_err,max_rel_err,n_cases,pass"]
    for rep in reports:
        lines.append(
            f"{rep.name},{rep.max_abs_err!r},{rep.max_rel_err!r},{rep.n_cases},"
            f"{str(rep.passed).lower()}"
        )
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0 if all(r.passed for r in reports) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dro", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute one method over a seed sweep")
    p_run.add_argument("--config", default=None, help="YAML config (defaults if omitted)")
    p_run.add_argument("--method", required=True, help=f"one of {METHODS}")
    p_run.add_argument("--seeds", default="0", help='single seed "7" or range "0..9"')
    p_run.add_argument("--out", required=True, help="output directory")
    p_run.add_argument("--timings", action="store_true", help="include wall-clock phase columns")
    p_run.add_argument("--reset-dt", action="store_true", help="reinitialize the policy each iteration")

    p_rep = sub.add_parser("report", help="merge run CSVs into one long table")
    p_rep.add_argument("--in", dest="in_dir", required=True)
    p_rep.add_argument("--out", required=True)

    p_val = sub.add_parser("validate", help="run the oracle suite")
    p_val.add_argument("--out", default=None)
    p_val.add_argument("--seed", type=int, default=0)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    if args.command == "run":
        return cmd_run(args)
    if args.command == "report":
        return cmd_report(args)
    return cmd_validate(args)


if __name__ == "__main__":
    sys.exit(main())
