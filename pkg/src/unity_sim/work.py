"""Proof-of-work target, verification and the simulator's mining-time model."""

from __future__ import annotations

import hashlib
import random
from fractions import Fraction
from typing import Callable

HASH_RANGE = 1 << 256

HashFunction256 = Callable[[bytes], int]


def sha256_int(data: bytes) -> int:
    return int.from_bytes(hashlib.sha256(data).digest(), "big")


def oracle_int(data: bytes) -> int:
    """Stand-in oracle for simulated blocks: the last 32 bytes (the nonce) are the output."""
    return int.from_bytes(data[-32:], "big")


HASHES = {"sha256": sha256_int, "oracle": oracle_int}


def pow_target(d_w) -> Fraction:
    """2^256 / d_w, exactly."""
    if d_w < 1:
        raise ValueError(f"difficulty {d_w} < 1 would put the target above the hash range")
    return Fraction(HASH_RANGE) / Fraction(d_w)


def pow_threshold(d_w) -> int:
    """Largest hash value accepted at difficulty d_w (floor of the target)."""
    t = pow_target(d_w)
    return t.numerator // t.denominator


def verify_pow(header: bytes, nonce: bytes, d_w, hash_fn: HashFunction256 = sha256_int) -> bool:
    return hash_fn(header + nonce) <= pow_threshold(d_w)


def sample_mining_time(hash_rate: float, d_w: float, rng: random.Random) -> float:
    """Time to first solution for a miner: exponential with mean d_w / hash_rate."""
    if not hash_rate > 0:
        raise ValueError("hash_rate must be positive")
    return rng.expovariate(hash_rate / d_w)


def oracle_nonce(d_w: float, rng: random.Random) -> bytes:
    """A uniformly drawn winning oracle output for difficulty d_w, as a 32-byte nonce."""
    return rng.randint(0, min(pow_threshold(d_w), HASH_RANGE - 1)).to_bytes(32, "big")
