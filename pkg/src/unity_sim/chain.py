"""Blocks, protocol parameters and stake accounting."""

from __future__ import annotations

import enum
import hashlib
import json
import math
import struct
from bisect import bisect_left, bisect_right
from dataclasses import dataclass, field, asdict

ZERO_ID = bytes(32)
NONCE_LEN = 32
SEED_LEN = 32

_HEADER = struct.Struct(">B32sQdd")
_LEN = struct.Struct(">I")


class StructuralError(ValueError):
    """A block whose fields do not fit its kind."""


class BlockKind(enum.IntEnum):
    WORK = 0
    STAKE = 1

    @property
    def label(self) -> str:
        return "work" if self is BlockKind.WORK else "stake"

    @classmethod
    def from_label(cls, label: str) -> "BlockKind":
        try:
            return {"work": cls.WORK, "stake": cls.STAKE}[label]
        except KeyError:
            raise StructuralError(f"unknown block kind {label!r}") from None

    def opposite(self) -> "BlockKind":
        return BlockKind.STAKE if self is BlockKind.WORK else BlockKind.WORK


@dataclass(frozen=True)
class Block:
    parent_id: bytes
    kind: BlockKind
    height: int
    timestamp: float
    difficulty: float
    producer_id: str
    nonce: bytes | None = None
    seed: bytes | None = None
    id: bytes = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not isinstance(self.kind, BlockKind):
            object.__setattr__(self, "kind", BlockKind(self.kind))
        if len(self.parent_id) != 32:
            raise StructuralError("parent_id must be 32 bytes")
        if self.kind is BlockKind.WORK:
            if self.nonce is None or self.seed is not None:
                raise StructuralError("work block needs a nonce and no seed")
            if len(self.nonce) != NONCE_LEN:
                raise StructuralError(f"nonce must be {NONCE_LEN} bytes")
        elif self.kind is BlockKind.STAKE:
            if self.seed is None or self.nonce is not None:
                raise StructuralError("stake block needs a seed and no nonce")
            if len(self.seed) != SEED_LEN:
                raise StructuralError(f"seed must be {SEED_LEN} bytes")
        else:
            raise StructuralError(f"bad kind {self.kind!r}")
        if self.height < 0:
            raise StructuralError("height must be non-negative")
        if not (self.difficulty > 0 and math.isfinite(self.difficulty)):
            raise StructuralError("difficulty must be positive and finite")
        if not (self.timestamp >= 0 and math.isfinite(self.timestamp)):
            raise StructuralError("timestamp must be non-negative and finite")
        object.__setattr__(self, "id", hashlib.sha256(serialize(self)).digest())

    @property
    def proof(self) -> bytes:
        return self.nonce if self.kind is BlockKind.WORK else self.seed

    def to_json(self) -> str:
        """One line of the chain dump format (full float precision)."""
        d = {
            "id": self.id.hex(),
            "parent_id": self.parent_id.hex(),
            "kind": self.kind.label,
            "height": self.height,
            "timestamp": self.timestamp,
            "difficulty": self.difficulty,
            "producer_id": self.producer_id,
        }
        if self.kind is BlockKind.WORK:
            d["nonce"] = self.nonce.hex()
        else:
            d["seed"] = self.seed.hex()
        return json.dumps(d, separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> tuple["Block", bytes]:
        """Parse a dump line; returns the block and the id claimed by the line."""
        d = json.loads(line)
        if not isinstance(d, dict):
            raise StructuralError("dump line is not a JSON object")
        try:
            kind = BlockKind.from_label(d["kind"])
            block = cls(
                parent_id=bytes.fromhex(d["parent_id"]),
                kind=kind,
                height=int(d["height"]),
                timestamp=float(d["timestamp"]),
                difficulty=float(d["difficulty"]),
                producer_id=str(d["producer_id"]),
                nonce=bytes.fromhex(d["nonce"]) if "nonce" in d else None,
                seed=bytes.fromhex(d["seed"]) if "seed" in d else None,
            )
            claimed = bytes.fromhex(d["id"])
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, StructuralError):
                raise
            raise StructuralError(f"malformed dump line: {exc}") from None
        return block, claimed


def header_bytes(block: Block) -> bytes:
    """Canonical serialization minus the proof field."""
    producer = block.producer_id.encode()
    return (
        _HEADER.pack(int(block.kind), block.parent_id, block.height,
                     block.timestamp, block.difficulty)
        + _LEN.pack(len(producer)) + producer
    )


def serialize(block: Block) -> bytes:
    """Fixed field order, big-endian integers and doubles, length-prefixed byte strings."""
    proof = block.proof
    return header_bytes(block) + _LEN.pack(len(proof)) + proof


def block_id(block: Block) -> bytes:
    return hashlib.sha256(serialize(block)).digest()


def _default_seed(i: int) -> bytes:
    return hashlib.sha256(b"unity-interleave genesis seed %d" % i).digest()


@dataclass(frozen=True)
class ProtocolParams:
    T: float = 10.0
    alpha: float = 0.02
    unlock_delay: int = 30
    genesis_d_w: float = 5e6
    genesis_d_s: float = 5e6
    genesis_seed_0: bytes = field(default_factory=lambda: _default_seed(0))
    genesis_seed_1: bytes = field(default_factory=lambda: _default_seed(1))
    max_future_drift: float = 1.0
    # "sha256" hashes header||nonce; "oracle" reads the nonce as the oracle output
    # so simulated blocks carry a verifiable claim without real grinding.
    pow_hash: str = "sha256"
    lam: float | None = None

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError("T must be positive")
        if self.lam is None:
            object.__setattr__(self, "lam", 1.0 / self.T)
        if not self.lam > 0:
            raise ValueError("lambda must be positive")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.unlock_delay < 0:
            raise ValueError("unlock_delay must be >= 0")
        if not (self.genesis_d_w >= 1 and self.genesis_d_s > 0):
            raise ValueError("genesis difficulties must be positive (d_w >= 1)")
        if self.pow_hash not in ("sha256", "oracle"):
            raise ValueError(f"unknown pow_hash {self.pow_hash!r}")
        for name in ("genesis_seed_0", "genesis_seed_1"):
            if len(getattr(self, name)) != SEED_LEN:
                raise ValueError(f"{name} must be {SEED_LEN} bytes")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["genesis_seed_0"] = self.genesis_seed_0.hex()
        d["genesis_seed_1"] = self.genesis_seed_1.hex()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ProtocolParams":
        d = dict(d)
        for name in ("genesis_seed_0", "genesis_seed_1"):
            if isinstance(d.get(name), str):
                d[name] = bytes.fromhex(d[name])
        return cls(**d)


def make_genesis(params: ProtocolParams) -> Block:
    """The single Work-kind root. Its nonce binds genesis_seed_1 into the id."""
    return Block(
        parent_id=ZERO_ID,
        kind=BlockKind.WORK,
        height=0,
        timestamp=0.0,
        difficulty=params.genesis_d_w,
        producer_id="genesis",
        nonce=params.genesis_seed_1,
    )


class StakeError(ValueError):
    pass


@dataclass
class Account:
    liquid: float = 0
    locked: float = 0
    pending_unlocks: list = field(default_factory=list)  # [(amount, release_height)]
    # (height, locked amount after the operation), in operation order
    history: list = field(default_factory=list)

    @property
    def pending(self):
        return sum(a for a, _ in self.pending_unlocks)


class StakeLedger:
    """Per-account liquid / locked / unlocking stake.

    Locks count toward voting power from the next height; unlocks stop
    counting immediately and the funds return to liquid ``unlock_delay``
    heights later. Height -1 is accepted for pre-genesis allocations.
    """

    def __init__(self, unlock_delay: int = 0):
        if unlock_delay < 0:
            raise ValueError("unlock_delay must be >= 0")
        self.unlock_delay = unlock_delay
        self.accounts: dict[str, Account] = {}
        self.total_locked = 0

    def account(self, account_id: str) -> Account:
        return self.accounts.setdefault(account_id, Account())

    def deposit(self, account_id: str, amount) -> None:
        if not amount > 0:
            raise StakeError("deposit must be positive")
        self.account(account_id).liquid += amount

    def _record(self, acct: Account, height: int):
        if acct.history and height < acct.history[-1][0]:
            raise StakeError(f"height {height} precedes last operation at {acct.history[-1][0]}")
        if height < -1:
            raise StakeError("height must be >= -1")

    def lock_stake(self, account_id: str, amount, height: int) -> None:
        acct = self.account(account_id)
        if not amount > 0:
            raise StakeError("lock amount must be positive")
        if acct.liquid < amount:
            raise StakeError(f"insufficient liquid balance: {acct.liquid} < {amount}")
        self._record(acct, height)
        acct.liquid -= amount
        acct.locked += amount
        self.total_locked += amount
        acct.history.append((height, acct.locked))

    def unlock_stake(self, account_id: str, amount, height: int) -> None:
        acct = self.accounts.get(account_id)
        if not amount > 0:
            raise StakeError("unlock amount must be positive")
        if acct is None or acct.locked < amount:
            raise StakeError("insufficient locked balance")
        self._record(acct, height)
        acct.locked -= amount
        self.total_locked -= amount
        acct.pending_unlocks.append((amount, height + self.unlock_delay))
        acct.history.append((height, acct.locked))

    def release_pending(self, height: int) -> None:
        """Move every unlock whose release height has been reached back to liquid."""
        for acct in self.accounts.values():
            keep = []
            for amount, release in acct.pending_unlocks:
                if release <= height:
                    acct.liquid += amount
                else:
                    keep.append((amount, release))
            acct.pending_unlocks = keep

    def effective_stake(self, account_id: str, height: int):
        """Locked amount usable for producing a block at ``height``."""
        acct = self.accounts.get(account_id)
        if acct is None or not acct.history:
            return 0
        heights = [h for h, _ in acct.history]
        lo = bisect_left(heights, height)
        hi = bisect_right(heights, height)
        before = acct.history[lo - 1][1] if lo else 0
        return min([before] + [acct.history[i][1] for i in range(lo, hi)])

    def stakers(self, height: int) -> list[tuple[str, float]]:
        """(account, effective stake) for every account with positive stake, sorted by id."""
        out = []
        for account_id in sorted(self.accounts):
            v = self.effective_stake(account_id, height)
            if v > 0:
                out.append((account_id, v))
        return out

    @classmethod
    def with_stakes(cls, stakes: dict, unlock_delay: int = 0) -> "StakeLedger":
        """Ledger where each account's stake is locked before genesis."""
        ledger = cls(unlock_delay)
        for account_id, amount in stakes.items():
            if amount > 0:
                ledger.deposit(account_id, amount)
                ledger.lock_stake(account_id, amount, -1)
        return ledger
