"""unity-sim: run experiments, sweep parameters, verify chain dumps.

Exit codes: 0 success, 1 verification violations, 2 usage or parse error,
3 the simulated network stalled.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from . import __version__
from .chain import Block, ProtocolParams, StakeLedger, StructuralError, make_genesis
from .consensus import ErrorCode, ValidationError, validate_block
from .sim.config import SWEEP_AXES, ScenarioError, apply_overrides, load_scenario_text, resolve
from .sim.engine import WORK, STAKE
from .sim.experiments import (
    block_time_histogram, chain_summary, collusion_report, convergence_report,
    expected_double_spend_win, fairness_ratios, grinding_inputs, run_double_spend,
    run_stake_grinding, simulate,
)
from .stake import StallDetected
from .store import ChainStore

EXIT_OK, EXIT_VIOLATIONS, EXIT_USAGE, EXIT_STALL = 0, 1, 2, 3


class UsageError(Exception):
    pass


def _round(obj, places: int = 6):
    if isinstance(obj, float):
        return round(obj, places) if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _round(v, places) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round(v, places) for v in obj]
    return obj


def _dumps(obj) -> str:
    return json.dumps(_round(obj), indent=2, sort_keys=True) + "\n"


def worker_count(flag: int | None) -> int:
    if flag is not None:
        return max(1, flag)
    env = os.environ.get("UNITY_SIM_WORKERS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise UsageError(f"UNITY_SIM_WORKERS={env!r} is not an integer") from None
    return os.cpu_count() or 1


def bundled_scenarios() -> dict[str, Path]:
    root = resources.files("unity_sim") / "scenarios"
    return {p.name: Path(str(p)) for p in root.iterdir() if p.name.endswith(".json")}


def find_scenario(name: str) -> Path:
    path = Path(name)
    if path.exists():
        return path
    bundled = bundled_scenarios()
    for candidate in (name, name + ".json"):
        if candidate in bundled:
            return bundled[candidate]
    raise UsageError(f"scenario {name!r} not found (bundled: {', '.join(sorted(bundled))})")


def load_config(scenario: str, overrides, seed: int | None):
    path = find_scenario(scenario)
    try:
        data = load_scenario_text(path.read_text(), str(path))
        if seed is not None:
            overrides = list(overrides) + [("rng_seed", seed)]
        if overrides:
            data = apply_overrides(data, overrides)
        return path, resolve(data, str(path))
    except ScenarioError as exc:
        raise UsageError(str(exc)) from None


# -- experiment dispatch ----------------------------------------------------

@dataclass
class Outcome:
    summary: dict
    headline: tuple[float, float]
    csvs: dict = field(default_factory=dict)  # file name -> (header, rows)
    stats: object = None


def _histogram_summary(stats, kind, config):
    try:
        h = block_time_histogram(stats, kind, config.bins, config.bin_width, config.params.T)
    except ValueError:
        return None
    return {"n": h.n, "mean": h.mean, "std": h.std, "ks_statistic": h.ks_statistic,
            "ks_pvalue": h.ks_pvalue, "ks_passes_0.01": h.passes(0.01),
            "bin_width": config.bin_width, "counts": h.counts.tolist()}


def _chain_csvs(stats) -> dict:
    kinds, ts, deltas, diffs = stats.arrays()
    out = {}
    for kind, name in ((WORK, "blocktimes_pow.csv"), (STAKE, "blocktimes_pos.csv")):
        rows = [(h + 1, ts[h], deltas[h]) for h in range(len(kinds)) if kinds[h] == int(kind)]
        out[name] = (("height", "timestamp", "delta_seconds"), rows)
    out["difficulty_trace.csv"] = (
        ("height", "kind", "difficulty"),
        [(h + 1, "work" if kinds[h] == int(WORK) else "stake", diffs[h]) for h in range(len(kinds))],
    )
    return out


def execute(config, workers: int = 1, keep_proofs: bool = False) -> Outcome:
    """Run one scenario; raises StallDetected if the network stalls."""
    kind = config.type
    if kind in ("steady_state", "fairness", "collusion", "convergence"):
        stats, sim = simulate(config, record_proofs=keep_proofs or config.validate_every > 0)
        if kind == "steady_state":
            deltas = stats.arrays()[2]
            extra = {}
            headline = (float(deltas.mean()), float(deltas.std() / math.sqrt(max(1, deltas.size))))
        elif kind == "fairness":
            ratios = fairness_ratios(stats, config.actors)
            extra = {"ratios": ratios}
            first = ratios[config.actors[0].id]["total"]
            headline = (first, math.sqrt(first * (1 - first) / max(1, len(stats))))
        elif kind == "collusion":
            report = collusion_report(stats, config)
            extra = {"collusion": report, "leak_fraction": config.leak_fraction}
            headline = (report["miner_excess_share"], report["stderr"])
        else:
            report = convergence_report(stats, config)
            extra = {"difficulty": report}
            w = report["work"]
            headline = (w["relative_std"], w["relative_std"] / math.sqrt(2 * max(1, w["samples"] - 1)))
        summary = {
            "type": kind,
            "chain": chain_summary(stats),
            "histograms": {k.label: _histogram_summary(stats, k, config) for k in (WORK, STAKE)},
        }
        summary.update(extra)
        return Outcome(summary, headline, _chain_csvs(stats), stats)

    if kind == "double_spend":
        res = run_double_spend(config, workers)
        d_w, d_s = config.params.genesis_d_w, config.params.genesis_d_s
        margins = res.margins
        summary = {
            "type": kind, "k": config.k, "l": config.l, "horizon": config.horizon,
            "trials": res.trials, "wins": res.wins, "win_rate": res.win_rate,
            "stderr": res.stderr, "d_w": d_w, "d_s": d_s,
            "analytic_win": expected_double_spend_win(config.k, config.l, d_w, d_s),
            "analytic_difficulty": config.analytic_difficulty,
            "margin_mean": sum(margins) / len(margins),
        }
        csvs = {"margins.csv": (("trial", "relative_margin"), list(enumerate(margins)))}
        return Outcome(summary, (res.win_rate, res.stderr), csvs)

    if kind == "stake_grinding":
        p, x = grinding_inputs(config)
        res = run_stake_grinding(p, x, config.trials, config.rng_seed, config.method)
        summary = {
            "type": kind, "p": p, "x": x, "windows": res.windows, "method": config.method,
            "successes": res.successes, "frequency": res.frequency,
            "closed_form": res.closed_form, "stderr": res.stderr,
            "within_3sigma": abs(res.frequency - res.closed_form) <= 3 * res.stderr,
        }
        return Outcome(summary, (res.frequency, res.stderr))

    raise UsageError(f"unknown scenario type {kind!r}")


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([f"{v:.6f}" if isinstance(v, float) else v for v in row])


def _write_manifest(out_dir: Path, scenario: Path, config, artifacts, started: float):
    manifest = {
        "scenario": str(scenario),
        "config": config.to_dict(),
        "rng_seed": config.rng_seed,
        "artifacts": sorted(artifacts + ["manifest.json"]),
        "wall_clock_seconds": time.perf_counter() - started,
        "version": f"unity-sim {__version__}",
    }
    (out_dir / "manifest.json").write_text(_dumps(manifest))


def cmd_run(args) -> int:
    started = time.perf_counter()
    scenario, config = load_config(args.scenario, args.override, args.seed)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    workers = worker_count(args.workers)
    artifacts = []
    try:
        outcome = execute(config, workers, keep_proofs=args.dump_chain)
    except StallDetected as exc:
        report = {"error": "StallDetected", "message": str(exc), "height": exc.height,
                  "timestamp": exc.timestamp}
        (out_dir / "stall.json").write_text(_dumps(report))
        _write_manifest(out_dir, scenario, config, ["stall.json"], started)
        print(f"StallDetected: {exc} (chain height {exc.height})", file=sys.stderr)
        return EXIT_STALL

    (out_dir / "summary.json").write_text(_dumps(outcome.summary))
    artifacts.append("summary.json")
    for name, (header, rows) in outcome.csvs.items():
        _write_csv(out_dir / name, header, rows)
        artifacts.append(name)
    if args.dump_chain:
        if outcome.stats is None or len(outcome.stats.proofs) != len(outcome.stats):
            raise UsageError(f"--dump-chain is not available for {config.type} scenarios")
        with open(out_dir / "chain.jsonl", "w") as fh:
            for block in outcome.stats.blocks():
                fh.write(block.to_json() + "\n")
        stakes = {a.id: a.stake for a in config.actors if a.stake > 0}
        (out_dir / "chain_params.json").write_text(
            json.dumps({"params": config.params.to_dict(), "stakes": stakes}, indent=2) + "\n")
        artifacts += ["chain.jsonl", "chain_params.json"]
    _write_manifest(out_dir, scenario, config, artifacts, started)
    sys.stdout.write(_dumps(outcome.summary))
    return EXIT_OK


def _parse_values(text: str) -> list[float]:
    items = [v for v in (t.strip() for t in text.split(",")) if v]
    if not items:
        raise UsageError("empty value list")
    try:
        return [json.loads(v) for v in items]
    except json.JSONDecodeError:
        raise UsageError(f"values must be numbers: {text!r}") from None


def cmd_sweep(args) -> int:
    started = time.perf_counter()
    if args.axis not in SWEEP_AXES:
        raise UsageError(f"unknown axis {args.axis!r} (choose from {', '.join(sorted(SWEEP_AXES))})")
    values = _parse_values(args.values)
    if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in values):
        raise UsageError("sweep values must be numeric")
    scenario, config = load_config(args.scenario, args.override, args.seed)
    workers = worker_count(args.workers)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for v in values:
        _, cfg = load_config(str(scenario), list(args.override) + [(SWEEP_AXES[args.axis], v)], args.seed)
        try:
            outcome = execute(cfg, workers)
        except StallDetected as exc:
            print(f"StallDetected at {args.axis}={v}: {exc}", file=sys.stderr)
            return EXIT_STALL
        stat, err = outcome.headline
        rows.append((float(v), float(stat), float(err)))
        print(f"{args.axis}={v} headline={stat:.6f} stderr={err:.6f}")
    _write_csv(out_dir / "sweep.csv", ("axis_value", "headline_stat", "stderr"), rows)
    _write_manifest(out_dir, scenario, config, ["sweep.csv"], started)
    return EXIT_OK


def load_verify_params(path: Path) -> tuple[ProtocolParams, StakeLedger]:
    try:
        data = json.loads(path.read_text())
        params = ProtocolParams.from_dict(data["params"])
        ledger = StakeLedger.with_stakes(data.get("stakes", {}), params.unlock_delay)
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"{path}: cannot load params: {exc}") from None
    return params, ledger


def verify_dump(lines, params: ProtocolParams, ledger: StakeLedger):
    """Replay dump lines; returns a list of (height, id hex, variant, detail).

    Raises UsageError for a line that cannot be parsed at all. Blocks that
    break a rule are still stored when their parent is known, so one bad
    block does not cascade into its descendants.
    """
    violations = []
    genesis = make_genesis(params)
    store = ChainStore(genesis)
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            block, claimed = Block.from_json(line)
        except (StructuralError, json.JSONDecodeError) as exc:
            raise UsageError(f"line {lineno}: {exc}") from None
        if lineno == 1:
            if block.id != genesis.id or claimed != genesis.id:
                violations.append((block.height, claimed.hex(), ErrorCode.StructuralError.value,
                                   "first line is not the genesis block for these params"))
            continue
        if claimed != block.id:
            violations.append((block.height, claimed.hex(), ErrorCode.StructuralError.value,
                               f"id does not match contents ({block.id.hex()})"))
            continue
        try:
            validate_block(block, store, ledger, block.timestamp, params)
        except ValidationError as exc:
            violations.append((block.height, block.id.hex(), exc.code.value, exc.detail))
        if block.parent_id in store and block.id not in store:
            store.add(block)
    return violations


def cmd_verify(args) -> int:
    params, ledger = load_verify_params(Path(args.params_file))
    try:
        with open(args.chain_dump) as fh:
            violations = verify_dump(fh, params, ledger)
    except OSError as exc:
        raise UsageError(str(exc)) from None
    for height, bid, variant, detail in violations:
        print(f"{height} {bid} {variant} {detail}")
    return EXIT_VIOLATIONS if violations else EXIT_OK


def cmd_scenarios(args) -> int:
    for name, path in sorted(bundled_scenarios().items()):
        desc = json.loads(path.read_text()).get("description", "")
        print(f"{name:32s} {desc}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="unity-sim",
        description="Interleaved PoW/PoS consensus simulator.",
        epilog="Value precedence: --seed > --override > scenario file > built-in defaults. "
               "Worker count: --workers > UNITY_SIM_WORKERS > CPU count.",
    )
    parser.add_argument("--version", action="version", version=f"unity-sim {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("scenario", help="scenario JSON path or bundled scenario name")
        p.add_argument("--seed", type=int, help="rng seed (overrides rng_seed)")
        p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                       help="override a scenario value, e.g. alpha=0.05 or params.T=12")
        p.add_argument("--workers", type=int, help="parallel trial workers")
        p.add_argument("-o", "--out", default="out", help="output directory (default: out)")

    p = sub.add_parser("run", help="run one scenario")
    common(p)
    p.add_argument("--dump-chain", action="store_true",
                   help="also write chain.jsonl and chain_params.json for `verify`")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run a scenario once per value of one parameter")
    common(p)
    p.add_argument("--axis", required=True, help="numeric scenario field, e.g. k, l, alpha")
    p.add_argument("--values", required=True, help="comma-separated values")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("verify", help="validate a chain dump")
    p.add_argument("chain_dump")
    p.add_argument("params_file", help="JSON with 'params' and 'stakes'")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("scenarios", help="list bundled scenarios")
    p.set_defaults(func=cmd_scenarios)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
