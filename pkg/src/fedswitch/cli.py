"""Command-line entry point: ``fedswitch run|sweep|check|plotdata``."""

from __future__ import annotations

import argparse
import csv
import itertools
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig, STRATEGIES, load_preset, parse_config
from .metrics import format_float, parse_metrics, write_rows

__all__ = ["main", "run_one", "run_sweep", "plot_series", "VARY_ALIASES"]

VARY_ALIASES = {"K": "n_ues", "N": "n_modules", "mu": "mu_per_j", "T": "rounds", "theta": "theta_db",
                "s_t": "subscription_cap"}
SUMMARY_COLUMNS = ("config_hash", "strategy", "seed", "varied", "rounds", "final_phi", "final_risk",
                   "rounds_to_threshold", "total_energy_J", "total_comm_energy_J")


def _load(spec: str | None, overrides: dict) -> ExperimentConfig:
    if spec and spec.startswith("preset:"):
        return load_preset(spec[len("preset:"):], **overrides)
    return parse_config(spec, **overrides)


def output_name(config: ExperimentConfig, strategy: str, seed: int) -> str:
    return f"{strategy}_s{seed}_{config.replace(strategy=strategy).config_hash()}.csv"


def run_one(config: ExperimentConfig, strategy: str, seed: int, out_dir) -> tuple[Path, dict]:
    """Run one (config, strategy, seed); write its CSV and return the path and summary row."""
    from . import orchestrator as orc

    cfg = config.replace(strategy=strategy)
    rows = orc.run_experiment(cfg, strategy, seeds=[seed])
    path = write_rows(rows, Path(out_dir) / output_name(config, strategy, seed), cfg.config_hash())
    s = orc.summarize(rows, cfg.phi_threshold).get(seed, {})
    summary = {
        "config_hash": cfg.config_hash(), "strategy": strategy, "seed": seed, "rounds": len(rows),
        "final_phi": s.get("final_phi"), "final_risk": s.get("final_risk"),
        "rounds_to_threshold": s.get("rounds_to_threshold"),
        "total_energy_J": s.get("total_energy_J", 0.0), "total_comm_energy_J": s.get("total_comm_energy_J", 0.0),
    }
    return path, summary


def _job(args):
    config, varied, strategy, seed, out_dir = args
    _, summary = run_one(config, strategy, seed, out_dir)
    summary["varied"] = varied
    return summary


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return format_float(v)
    return str(v)


def run_sweep(config: ExperimentConfig, vary: dict, strategies, seeds, out_dir, workers: int = 1) -> Path:
    """Cartesian sweep over ``vary`` values x strategies x seeds.

    One CSV per run plus ``summary.csv``; rows are ordered by the grid, not by
    completion, so the summary is identical for any worker count.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    keys = list(vary)
    jobs = []
    for combo in itertools.product(*(vary[k] for k in keys)):
        cfg = config.replace(**dict(zip(keys, combo))) if keys else config
        varied = ";".join(f"{k}={v}" for k, v in zip(keys, combo))
        for strategy in strategies:
            for seed in seeds:
                jobs.append((cfg, varied, strategy, seed, out_dir))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            summaries = list(pool.map(_job, jobs))
    else:
        summaries = [_job(j) for j in jobs]
    path = out_dir / "summary.csv"
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for s in summaries:
            w.writerow([_cell(s[c]) for c in SUMMARY_COLUMNS])
    return path


SERIES_COLUMNS = ("config_hash", "strategy", "round", "n_seeds", "phi_mean", "phi_std", "bound_mean",
                  "risk_mean", "energy_cum_mean_J", "comm_energy_cum_mean_J", "success_mean", "power_mean_W")


def plot_series(paths, out_path) -> Path:
    """Aggregate per-round CSVs into seed-averaged series per (config, strategy)."""
    groups = {}
    for p in sorted(map(Path, paths)):
        rows = parse_metrics(p)
        if not rows:
            continue
        key = (rows[0]["config_hash"], rows[0]["strategy"])
        groups.setdefault(key, []).append(rows)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SERIES_COLUMNS)
        for (h, strategy), runs in sorted(groups.items()):
            T = min(len(r) for r in runs)

            def col(name, cum=False):
                a = np.array([[row[name] for row in r[:T]] for r in runs])
                return np.cumsum(a, axis=1) if cum else a

            phi, bound, risk = col("phi_measured"), col("bound_total"), col("risk_ensemble")
            energy, comm = col("energy_total_J", True), col("energy_comm_J", True)
            succ, power = col("success_rate"), col("power_mean_W")
            for t in range(T):
                w.writerow([h, strategy, runs[0][t]["round"], len(runs)] + [format_float(v) for v in (
                    phi[:, t].mean(), phi[:, t].std(), bound[:, t].mean(), risk[:, t].mean(),
                    energy[:, t].mean(), comm[:, t].mean(), succ[:, t].mean(), power[:, t].mean())])
    return out_path


def _parse_value(text: str):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return {"true": True, "false": False}.get(text.lower(), text)


def _parse_vary(items) -> dict:
    vary = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError(f"--vary: expected KEY=v1,v2,... got {item!r}")
        key, values = item.split("=", 1)
        key = VARY_ALIASES.get(key.strip(), key.strip())
        vary[key] = [_parse_value(v.strip()) for v in values.split(",") if v.strip()]
    return vary


def _parse_set(items) -> dict:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError(f"--set: expected KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        out[VARY_ALIASES.get(key.strip(), key.strip())] = _parse_value(value.strip())
    return out


def _strategies(text: str | None, default: str):
    names = [s.strip() for s in (text or default).split(",") if s.strip()]
    return [parse_config(None, strategy=s).strategy for s in names]


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fedswitch", description="Model-switching federated fine-tuning simulator.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="TOML file, or preset:NAME for a bundled preset")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
        sp.add_argument("--out", default=None, help="output directory (default: the config's output_dir)")

    r = sub.add_parser("run", help="run one experiment")
    common(r)
    r.add_argument("--seed", type=int, action="append", help="root seed (repeatable; default: the config's seeds)")
    r.add_argument("--strategy", default=None, help=f"one of {', '.join(STRATEGIES)}")

    s = sub.add_parser("sweep", help="cartesian sweep over config values, strategies and seeds")
    common(s)
    s.add_argument("--vary", action="append", metavar="KEY=v1,v2", help="grid axis; K, N, mu, T, theta are aliases")
    s.add_argument("--strategy", default=None, help="comma-separated strategies")
    s.add_argument("--seeds", default=None, help="comma-separated seeds")
    s.add_argument("--workers", type=int, default=1)

    c = sub.add_parser("check", help="run the acceptance checks")
    c.add_argument("--only", default=None, help="comma-separated check numbers")
    c.add_argument("--quick", action="store_true", help="reduced workloads, no runtime limits")

    d = sub.add_parser("plotdata", help="aggregate per-round CSVs into seed-averaged series")
    d.add_argument("inputs", nargs="+", help="CSV files or directories")
    d.add_argument("--out", required=True, help="output CSV")
    return p


def main(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.command == "run":
            cfg = _load(args.config, _parse_set(args.set))
            out = Path(args.out or cfg.output_dir)
            strategy = _strategies(args.strategy, cfg.strategy)[0]
            for seed in args.seed or cfg.seeds:
                path, s = run_one(cfg, strategy, seed, out)
                print(f"{path}  final_phi={_cell(s['final_phi'])}  total_energy_J={_cell(s['total_energy_J'])}")
            return 0
        if args.command == "sweep":
            cfg = _load(args.config, _parse_set(args.set))
            seeds = [int(x) for x in args.seeds.split(",")] if args.seeds else list(cfg.seeds)
            vary = _parse_vary(args.vary)
            if "theta_db" in vary:
                vary["theta"] = [10 ** (v / 10) for v in vary.pop("theta_db")]
            for key, values in vary.items():
                # validate every grid point before any run starts
                vary[key] = [getattr(parse_config(cfg.to_dict() | {key: v}), key) for v in values]
            path = run_sweep(cfg, vary, _strategies(args.strategy, cfg.strategy), seeds,
                             Path(args.out or cfg.output_dir), args.workers)
            print(path.read_text(encoding="utf-8"), end="")
            return 0
        if args.command == "check":
            from .checks import CHECKS, run_checks

            only = [int(x) for x in args.only.split(",")] if args.only else None
            if only and any(n not in CHECKS for n in only):
                raise ConfigError(f"--only: checks are numbered 1-{len(CHECKS)}")
            results = run_checks(only, args.quick, report=lambda r: print(r.line(), flush=True))
            failed = [r.number for r in results if not r.passed]
            print(f"{len(results) - len(failed)}/{len(results)} checks passed")
            return 1 if failed else 0
        if args.command == "plotdata":
            files = []
            for item in map(Path, args.inputs):
                files += sorted(p for p in item.glob("*.csv") if p.name != "summary.csv") if item.is_dir() else [item]
            print(plot_series(files, args.out))
            return 0
    except (ConfigError, ValueError, OSError) as exc:
        print(f"fedswitch {args.command}: error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 2
    return 2


if __name__ == "__main__":
    sys.exit(main())
