"""Seed lineage, wait times and the staker race."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

from .work import HASH_RANGE, HashFunction256, sha256_int


class StallDetected(RuntimeError):
    """No producer can extend the chain."""

    def __init__(self, message: str, height: int = 0, timestamp: float = 0.0):
        super().__init__(message)
        self.height = height
        self.timestamp = timestamp


class HashSeedSigner:
    """Deterministic, publicly checkable stand-in for a unique signature.

    A real signature scheme can be swapped in by providing the same two methods.
    """

    def sign(self, prev_seed: bytes, staker_id: str) -> bytes:
        return hashlib.sha256(b"seed" + staker_id.encode() + prev_seed).digest()

    def verify(self, seed: bytes, prev_seed: bytes, staker_id: str) -> bool:
        return seed == self.sign(prev_seed, staker_id)


DEFAULT_SIGNER = HashSeedSigner()


@dataclass(frozen=True)
class StakerSpec:
    id: str
    stake: float
    honest: bool = True


def next_seed(prev_pos_seed: bytes, staker_id: str, signer=DEFAULT_SIGNER) -> bytes:
    return signer.sign(prev_pos_seed, staker_id)


def verify_seed(seed: bytes, prev_pos_seed: bytes, staker_id: str, signer=DEFAULT_SIGNER) -> bool:
    return signer.verify(seed, prev_pos_seed, staker_id)


def wait_time(seed: bytes, V: float, d_s: float, hash_fn: HashFunction256 = sha256_int) -> float:
    """d_s * ln(2^256 / H(seed)) / V.

    H(seed) / 2^256 is uniform on (0, 1], so over random seeds the result is
    exponential with mean d_s / V. H(seed) = 0 is read as 1.
    """
    if not V > 0:
        raise ValueError("stake V must be positive")
    if not d_s > 0:
        raise ValueError("difficulty d_s must be positive")
    h = hash_fn(seed) or 1
    return d_s * -math.log(h / HASH_RANGE) / V


def earliest_timestamp(parent_timestamp: float, delta: float) -> float:
    if delta < 0:
        raise ValueError("wait time must be non-negative")
    return parent_timestamp + delta


def best_staker_draw(stakers, prev_pos_seed: bytes, d_s: float, signer=DEFAULT_SIGNER):
    """Race every staker's wait time; returns (winner id, wait time, seed).

    ``stakers`` is an iterable of StakerSpec or (id, stake) pairs. Ties go to
    the lexicographically smallest seed.
    """
    best = None
    for s in stakers:
        sid, v = (s.id, s.stake) if isinstance(s, StakerSpec) else s
        if not v > 0:
            continue
        seed = signer.sign(prev_pos_seed, sid)
        delta = wait_time(seed, v, d_s)
        if best is None or (delta, seed) < (best[1], best[2]):
            best = (sid, delta, seed)
    if best is None:
        raise StallDetected("no staker with positive stake")
    return best
