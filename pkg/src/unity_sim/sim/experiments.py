"""Experiments: steady state, fairness, convergence and the attack analyses."""

from __future__ import annotations

import math
import random
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from fractions import Fraction

import numpy as np
from scipy import stats as sps

from ..chain import BlockKind
from ..stake import StallDetected, best_staker_draw
from .config import ScenarioConfig
from .engine import ActorSpec, ChainStats, Simulation, derive_seed, self_validate

WORK, STAKE = BlockKind.WORK, BlockKind.STAKE


def _simulation(config: ScenarioConfig, record_proofs: bool) -> Simulation:
    return Simulation(
        config.params,
        config.actors,
        random.Random(derive_seed(config.rng_seed, "work")),
        leak_fraction=config.leak_fraction,
        stall_timeout=config.stall_timeout,
        record_proofs=record_proofs,
        nonce_rng=random.Random(derive_seed(config.rng_seed, "nonce")),
    )


def simulate(config: ScenarioConfig, record_proofs: bool | None = None):
    """Run the scenario's chain for its duration; returns (stats, simulation).

    A stall re-raises StallDetected with the partial stats attached as ``.stats``.
    """
    if record_proofs is None:
        record_proofs = config.validate_every > 0
    sim = _simulation(config, record_proofs)
    try:
        sim.run(max_blocks=config.duration_blocks, until=config.until)
    except StallDetected as exc:
        exc.stats = sim.stats
        raise
    if config.validate_every > 0:
        self_validate(sim.stats, config.validate_every, sim.ledger)
    return sim.stats, sim


def run_steady_state(config: ScenarioConfig) -> ChainStats:
    return simulate(config)[0]


def chain_summary(stats: ChainStats) -> dict:
    kinds, ts, deltas, diffs = stats.arrays()
    out = {
        "total_blocks": len(stats),
        "elapsed_seconds": float(ts[-1]) if len(ts) else 0.0,
        "stalled": stats.stalled,
    }
    for kind in (WORK, STAKE):
        mask = kinds == int(kind)
        d = deltas[mask]
        out[kind.label] = {
            "blocks": int(mask.sum()),
            "delta_mean": float(d.mean()) if d.size else 0.0,
            "delta_std": float(d.std()) if d.size else 0.0,
            "difficulty_mean": float(diffs[mask].mean()) if d.size else 0.0,
        }
    return out


def expected_share(actor: ActorSpec, actors) -> float:
    """Half the actor's share of stake plus half its share of hash power."""
    H = sum(a.hash_rate for a in actors)
    V = sum(a.stake for a in actors)
    return 0.5 * (actor.stake / V if V else 0.0) + 0.5 * (actor.hash_rate / H if H else 0.0)


def fairness_ratios(stats: ChainStats, actors) -> dict:
    counts = stats.counts()
    n_work = sum(c["work"] for c in counts.values())
    n_stake = sum(c["stake"] for c in counts.values())
    n = n_work + n_stake
    out = {}
    for a in actors:
        c = counts[a.id]
        out[a.id] = {
            "total": (c["work"] + c["stake"]) / n if n else 0.0,
            "stake": c["stake"] / n_stake if n_stake else 0.0,
            "work": c["work"] / n_work if n_work else 0.0,
            "expected_total": expected_share(a, actors),
        }
    return out


def run_fairness(config: ScenarioConfig):
    stats = run_steady_state(config)
    return stats, fairness_ratios(stats, config.actors)


@dataclass
class Histogram:
    counts: np.ndarray
    edges: np.ndarray
    n: int
    mean: float
    std: float
    ks_statistic: float
    ks_pvalue: float

    def passes(self, significance: float = 0.01) -> bool:
        return self.ks_pvalue > significance


def block_time_histogram(stats, kind: BlockKind = WORK, bins: int = 100, width: float = 1.0,
                         T: float | None = None, min_samples: int = 1000) -> Histogram:
    """Histogram of inter-block times plus a KS test against Exp(1/T)."""
    if isinstance(stats, ChainStats):
        samples = stats.deltas(kind)
        T = T or stats.params.T
    else:
        samples = np.asarray(stats, dtype=float)
    if T is None:
        raise ValueError("T required for raw samples")
    if samples.size < min_samples:
        raise ValueError(f"need at least {min_samples} samples, got {samples.size}")
    counts, edges = np.histogram(samples, bins=bins, range=(0.0, bins * width))
    ks = sps.kstest(samples, "expon", args=(0.0, T))
    return Histogram(counts, edges, int(samples.size), float(samples.mean()), float(samples.std()),
                     float(ks.statistic), float(ks.pvalue))


def convergence_report(stats: ChainStats, config: ScenarioConfig) -> dict:
    H = sum(a.hash_rate for a in config.actors)
    V = sum(a.stake for a in config.actors)
    report = {}
    for kind, resource in ((WORK, H), (STAKE, V)):
        trace = stats.difficulty_trace(kind)
        target = resource * config.params.T
        rel = np.abs(trace / target - 1.0)
        inside = np.nonzero(rel <= 0.1)[0]
        tail = trace[config.burn_in:] if config.burn_in < trace.size else trace
        report[kind.label] = {
            "target": target,
            "initial": float(trace[0]) if trace.size else 0.0,
            "mean": float(trace.mean()) if trace.size else 0.0,
            "relative_error": float(trace.mean() / target - 1.0) if trace.size else 0.0,
            "converged_at": int(inside[0]) if inside.size else -1,
            "relative_std": float(tail.std() / target) if tail.size else 0.0,
            "samples": int(tail.size),
        }
    return report


def run_convergence(config: ScenarioConfig):
    """Difficulty traces from the configured (possibly off-equilibrium) start."""
    stats = run_steady_state(config)
    return stats, convergence_report(stats, config)


# -- double spend -----------------------------------------------------------

def expected_double_spend_win(k: float, l: float, d_w: float, d_s: float) -> bool:
    """Long-run win condition of a private side-chain: k*d_w + l*d_s > d_w + d_s.

    Compared exactly on the shortest decimal form of each input (0.9 means
    9/10); float arithmetic would call k just above the frontier a tie.
    """
    k, l, d_w, d_s = (Fraction(repr(float(v))) for v in (k, l, d_w, d_s))
    return k * d_w + l * d_s > d_w + d_s


@dataclass
class DoubleSpendResult:
    win_rate: float
    wins: int
    trials: int
    margins: list

    @property
    def stderr(self) -> float:
        p = self.win_rate
        return math.sqrt(p * (1 - p) / self.trials) if self.trials else 0.0


def _double_spend_trial(args) -> float:
    """Relative margin (attacker td - honest td) / honest td for one trial."""
    config, trial = args
    honest = ActorSpec("honest",
                       sum(a.hash_rate for a in config.actors if a.behavior == "honest"),
                       sum(a.stake for a in config.actors if a.behavior == "honest"))
    attacker = ActorSpec("attacker", config.k * honest.hash_rate, config.l * honest.stake,
                         "double_spender")
    fork_rng = random.Random(derive_seed(config.rng_seed, trial, "fork"))
    base = replace(config.params,
                   genesis_seed_0=fork_rng.randbytes(32), genesis_seed_1=fork_rng.randbytes(32))
    hsim = Simulation(base, [honest], random.Random(derive_seed(config.rng_seed, trial, "honest")),
                      stall_timeout=config.stall_timeout)
    hsim.run(max_blocks=config.horizon)
    td_honest = sum(hsim.stats.total_difficulty())
    if attacker.hash_rate <= 0 or attacker.stake <= 0:
        return -1.0
    aparams = base
    if config.analytic_difficulty:
        aparams = replace(base, genesis_d_w=max(config.k * base.genesis_d_w, 1.0),
                          genesis_d_s=config.l * base.genesis_d_s)
    asim = Simulation(aparams, [attacker],
                      random.Random(derive_seed(config.rng_seed, trial, "attacker")),
                      stall_timeout=math.inf)
    asim.run(until=hsim.tip_ts)
    td_attacker = sum(asim.stats.total_difficulty())
    return (td_attacker - td_honest) / td_honest


def _map_trials(fn, config: ScenarioConfig, trials: int, workers: int):
    jobs = [(config, t) for t in range(trials)]
    if workers <= 1 or trials < 2:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        # map preserves trial order, so results do not depend on scheduling
        return list(pool.map(fn, jobs, chunksize=max(1, trials // (4 * workers))))


def run_double_spend(config: ScenarioConfig, workers: int = 1) -> DoubleSpendResult:
    """Race an isolated attacker chain (k*H, l*V) against the honest chain from a common fork.

    The honest chain grows ``horizon`` blocks; the attacker chain grows for
    the same simulated time. A trial is won when the attacker's total
    difficulty is strictly larger.
    """
    margins = _map_trials(_double_spend_trial, config, config.trials, workers)
    wins = sum(1 for m in margins if m > 0)
    return DoubleSpendResult(wins / config.trials, wins, config.trials, margins)


# -- stake grinding ---------------------------------------------------------

def stake_grinding_success(p: float, x: int) -> float:
    """Probability a staker with win probability p keeps a streak over the x lockout blocks."""
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must be in [0, 1]")
    if x < 0:
        raise ValueError("x must be >= 0")
    return p ** x


@dataclass
class GrindingResult:
    p: float
    x: int
    windows: int
    successes: int
    closed_form: float

    @property
    def frequency(self) -> float:
        return self.successes / self.windows

    @property
    def stderr(self) -> float:
        q = self.closed_form
        return math.sqrt(q * (1 - q) / self.windows)


def run_stake_grinding(p: float, x: int, windows: int, rng_seed: int = 0,
                       method: str = "bernoulli", chunk: int = 1_000_000) -> GrindingResult:
    """Empirical frequency of winning the x PoS heights after a block already won.

    ``bernoulli`` draws each height as an independent win with probability p.
    ``race`` runs the actual seed race between a staker holding fraction p of
    the stake and one holding the rest, following the real seed lineage.
    """
    stake_grinding_success(p, x)
    if method == "bernoulli":
        rng = np.random.default_rng(rng_seed)
        successes, left = 0, windows
        while left:
            n = min(left, chunk)
            if x == 0:
                successes += n
            else:
                successes += int((rng.random((n, x)) < p).all(axis=1).sum())
            left -= n
    elif method == "race":
        if not 0.0 < p < 1.0:
            raise ValueError("race method needs 0 < p < 1")
        rng = random.Random(rng_seed)
        stakers = [("grinder", p), ("others", 1.0 - p)]
        successes = 0
        for _ in range(windows):
            seed = rng.randbytes(32)  # seed of the block the grinder just won
            for _ in range(x):
                winner, _, seed = best_staker_draw(stakers, seed, 1.0)
                if winner != "grinder":
                    break
            else:
                successes += 1
    else:
        raise ValueError(f"unknown method {method!r}")
    return GrindingResult(p, x, windows, successes, stake_grinding_success(p, x))


def grinding_inputs(config: ScenarioConfig) -> tuple[float, int]:
    if config.p is not None:
        p = config.p
    else:
        grinders = [a for a in config.actors if a.behavior == "stake_grinder"] or config.actors[:1]
        total = sum(a.stake for a in config.actors)
        p = grinders[0].stake / total if total else 0.0
    x = config.x if config.x is not None else config.params.unlock_delay
    return p, x


# -- collusion --------------------------------------------------------------

def collusion_report(stats: ChainStats, config: ScenarioConfig) -> dict:
    counts = stats.counts()
    n_work = sum(c["work"] for c in counts.values())
    H = sum(a.hash_rate for a in config.actors)
    excess = {}
    for a in config.actors:
        if a.hash_rate <= 0:
            continue
        share = counts[a.id]["work"] / n_work
        fair = a.hash_rate / H
        excess[a.id] = {
            "work_share": share,
            "fair_share": fair,
            "excess": share - fair,
            "stderr": math.sqrt(fair * (1 - fair) / n_work),
        }
    colluders = [a.id for a in config.actors if a.behavior == "colluding_pair" and a.id in excess]
    head = excess[colluders[0]] if colluders else {"excess": 0.0, "stderr": 0.0}
    return {
        "miner_excess_share": head["excess"],
        "stderr": head["stderr"],
        "colluder": colluders[0] if colluders else None,
        "work_blocks": n_work,
        "miners": excess,
    }


def run_collusion_headstart(config: ScenarioConfig):
    """Share of Work blocks won by each miner minus its hash-power share.

    The colluding pair's staker hands its winning Stake block to its miner
    ``leak_fraction`` of the wait time early.
    """
    if not 0.0 <= config.leak_fraction <= 1.0:
        raise ValueError("leak_fraction must be in [0, 1]")
    stats = run_steady_state(config)
    return stats, collusion_report(stats, config)
