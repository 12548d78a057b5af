"""Alternating-kind race engine.

Heights strictly alternate between Work and Stake, so instead of a global
event queue each height is one race: miners draw exponential solve times,
stakers compute their seed-determined wait times, and the earliest wins.
"""

from __future__ import annotations

import hashlib
import math
import random
from dataclasses import dataclass, field, replace

import numpy as np

from ..chain import Block, BlockKind, ProtocolParams, StakeLedger, make_genesis
from ..consensus import ValidationError, validate_block
from ..difficulty import adjust, genesis_difficulty
from ..stake import DEFAULT_SIGNER, StallDetected, earliest_timestamp, wait_time
from ..store import ChainStore
from ..work import oracle_nonce, sample_mining_time

WORK, STAKE = BlockKind.WORK, BlockKind.STAKE

BEHAVIORS = ("honest", "double_spender", "stake_grinder", "colluding_pair")


@dataclass(frozen=True)
class ActorSpec:
    id: str
    hash_rate: float = 0.0
    stake: float = 0.0
    behavior: str = "honest"

    def __post_init__(self):
        if self.hash_rate < 0 or self.stake < 0:
            raise ValueError(f"actor {self.id}: hash_rate and stake must be >= 0")
        if self.behavior not in BEHAVIORS:
            raise ValueError(f"actor {self.id}: unknown behavior {self.behavior!r}")


def derive_seed(*parts) -> int:
    """64-bit seed from a tuple such as (scenario seed, trial index, role)."""
    digest = hashlib.sha256(repr(parts).encode()).digest()
    return int.from_bytes(digest[:8], "big")


def steady_state_params(params: ProtocolParams, actors) -> ProtocolParams:
    """Copy of ``params`` with d_w = H*T and d_s = V*T for the actors' totals."""
    H = sum(a.hash_rate for a in actors)
    V = sum(a.stake for a in actors)
    return replace(params,
                   genesis_d_w=max(H * params.T, 1.0) if H > 0 else params.genesis_d_w,
                   genesis_d_s=V * params.T if V > 0 else params.genesis_d_s)


@dataclass
class ChainStats:
    """Per-block record of one simulated chain (genesis excluded)."""
    actor_ids: list
    params: ProtocolParams
    kinds: list = field(default_factory=list)
    producers: list = field(default_factory=list)
    timestamps: list = field(default_factory=list)
    difficulties: list = field(default_factory=list)
    proofs: list = field(default_factory=list)
    stalled: bool = False

    def __len__(self):
        return len(self.kinds)

    @property
    def height(self) -> int:
        return len(self.kinds)

    def arrays(self):
        kinds = np.asarray(self.kinds, dtype=np.int8)
        ts = np.asarray(self.timestamps, dtype=float)
        prev = np.concatenate(([0.0], ts[:-1]))
        return kinds, ts, ts - prev, np.asarray(self.difficulties, dtype=float)

    def deltas(self, kind: BlockKind) -> np.ndarray:
        kinds, _, deltas, _ = self.arrays()
        return deltas[kinds == int(kind)]

    def difficulty_trace(self, kind: BlockKind) -> np.ndarray:
        kinds, _, _, diffs = self.arrays()
        return diffs[kinds == int(kind)]

    def counts(self) -> dict:
        """actor id -> {"work": n, "stake": n}"""
        out = {a: {"work": 0, "stake": 0} for a in self.actor_ids}
        for k, p in zip(self.kinds, self.producers):
            out[self.actor_ids[p]]["work" if k == WORK else "stake"] += 1
        return out

    def total_difficulty(self) -> tuple[float, float]:
        td_w = td_s = 0.0
        for k, d in zip(self.kinds, self.difficulties):
            if k == WORK:
                td_w += d
            else:
                td_s += d
        return td_w, td_s

    def blocks(self):
        """Materialize the chain as Block objects, genesis first."""
        if len(self.proofs) != len(self.kinds):
            raise ValueError("chain was simulated without recording proofs")
        parent = make_genesis(self.params)
        yield parent
        for i, k in enumerate(self.kinds):
            kind = BlockKind(k)
            proof = self.proofs[i]
            parent = Block(
                parent_id=parent.id, kind=kind, height=i + 1,
                timestamp=self.timestamps[i], difficulty=self.difficulties[i],
                producer_id=self.actor_ids[self.producers[i]],
                nonce=proof if kind is WORK else None,
                seed=proof if kind is STAKE else None,
            )
            yield parent


class Simulation:
    """One chain grown by a fixed set of actors.

    The stake ledger is read once: it is not mutated during a run, so the
    stake effective at every parent height is the same.
    """

    def __init__(self, params: ProtocolParams, actors, rng: random.Random,
                 ledger: StakeLedger | None = None, leak_fraction: float = 0.0,
                 stall_timeout: float = math.inf, record_proofs: bool = False,
                 nonce_rng: random.Random | None = None, signer=DEFAULT_SIGNER):
        if not 0.0 <= leak_fraction <= 1.0:
            raise ValueError("leak_fraction must be in [0, 1]")
        self.params = params
        self.actors = list(actors)
        ids = [a.id for a in self.actors]
        if len(set(ids)) != len(ids):
            raise ValueError("actor ids must be unique")
        self.rng = rng
        self.signer = signer
        self.leak_fraction = leak_fraction
        self.stall_timeout = stall_timeout
        self.record_proofs = record_proofs
        self.nonce_rng = nonce_rng or random.Random(rng.getrandbits(64))
        self.ledger = ledger if ledger is not None else StakeLedger.with_stakes(
            {a.id: a.stake for a in self.actors}, params.unlock_delay)
        index = {a: i for i, a in enumerate(ids)}
        self.miners = [(i, a.hash_rate) for i, a in enumerate(self.actors) if a.hash_rate > 0]
        self.stakers = [(index[sid], sid, v) for sid, v in self.ledger.stakers(0) if sid in index]
        self.colluders = {i for i, a in enumerate(self.actors) if a.behavior == "colluding_pair"}

        self.stats = ChainStats(ids, params)
        self.height = 0
        self.tip_ts = 0.0
        self.tip_kind = WORK
        self.tip_producer = -1
        self.tip_delta = 0.0
        self.pos_seed = params.genesis_seed_0
        # kind -> (difficulty, own arrival interval) of the last non-genesis block
        self.last = {WORK: None, STAKE: None}

    def difficulty_for(self, kind: BlockKind) -> float:
        last = self.last[kind]
        if last is None:
            return genesis_difficulty(kind, self.params)
        return adjust(last[0], last[1], self.params.lam, self.params.alpha)

    def _stall(self, why: str):
        self.stats.stalled = True
        raise StallDetected(f"{why} at height {self.height}", self.height, self.tip_ts)

    def _stake_race(self, d_s: float):
        if not self.stakers:
            self._stall("no stakers")
        best = None
        sign = self.signer.sign
        for idx, sid, v in self.stakers:
            seed = sign(self.pos_seed, sid)
            delta = wait_time(seed, v, d_s)
            if best is None or (delta, seed) < (best[1], best[2]):
                best = (idx, delta, seed)
        idx, delta, seed = best
        return idx, earliest_timestamp(self.tip_ts, delta), seed

    def _work_race(self, d_w: float):
        if not self.miners:
            self._stall("no miners")
        parent_ts = self.tip_ts
        leak = 0.0
        if self.tip_producer in self.colluders and self.leak_fraction > 0:
            leak = self.leak_fraction * self.tip_delta
        best_idx, best_ts = -1, math.inf
        for idx, h in self.miners:
            t = sample_mining_time(h, d_w, self.rng)
            if leak and idx == self.tip_producer:
                # partner started on the leaked block early but cannot publish before it
                ts = max(parent_ts + t - leak, parent_ts)
            else:
                ts = parent_ts + t
            if ts < best_ts:
                best_idx, best_ts = idx, ts
        return best_idx, best_ts

    def step(self, until: float | None = None) -> bool:
        """Grow one block. Returns False (nothing committed) if it would land after ``until``."""
        kind = self.tip_kind.opposite()
        d = self.difficulty_for(kind)
        if kind is STAKE:
            idx, ts, proof = self._stake_race(d)
        else:
            idx, ts = self._work_race(d)
            proof = None
        if ts - self.tip_ts > self.stall_timeout:
            self._stall(f"next {kind.label} block needs {ts - self.tip_ts:.1f}s")
        if until is not None and ts > until:
            return False
        if kind is WORK and self.record_proofs:
            proof = oracle_nonce(d, self.nonce_rng)

        delta = ts - self.tip_ts
        self.last[kind] = (d, delta)
        if kind is STAKE:
            self.pos_seed = proof
        self.height += 1
        self.tip_ts, self.tip_kind, self.tip_producer, self.tip_delta = ts, kind, idx, delta
        st = self.stats
        st.kinds.append(kind)
        st.producers.append(idx)
        st.timestamps.append(ts)
        st.difficulties.append(d)
        if self.record_proofs:
            st.proofs.append(proof)
        return True

    def run(self, max_blocks: int | None = None, until: float | None = None) -> ChainStats:
        if max_blocks is None and until is None:
            raise ValueError("need max_blocks or until")
        n = 0
        while max_blocks is None or n < max_blocks:
            if not self.step(until):
                break
            n += 1
        return self.stats


def self_validate(stats: ChainStats, every: int = 1, ledger: StakeLedger | None = None) -> int:
    """Replay a recorded chain through the validator, checking one block in ``every``.

    Returns the number of blocks validated; raises ValidationError on the first failure.
    """
    if every < 1:
        raise ValueError("every must be >= 1")
    params = stats.params
    if ledger is None:
        raise ValueError("ledger required")
    blocks = stats.blocks()
    store = ChainStore(next(blocks))
    checked = 0
    for block in blocks:
        if block.height % every == 0 or block.height == len(stats):
            try:
                validate_block(block, store, ledger, block.timestamp, params)
            except ValidationError as exc:
                raise ValidationError(exc.code, f"height {block.height}: {exc.detail}") from None
            checked += 1
        store.add(block)
    return checked
