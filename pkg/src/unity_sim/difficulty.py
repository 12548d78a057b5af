"""Per-kind multiplicative difficulty controller around the exponential median."""

from __future__ import annotations

import math

from .chain import BlockKind, ProtocolParams
from .store import ChainStore

MIN_DIFFICULTY = 1.0


def boundary(lam: float) -> float:
    """Median of Exp(lam): the x with 1 - exp(-lam x) = 1/2."""
    if not lam > 0:
        raise ValueError("lambda must be positive")
    return -math.log(0.5) / lam


def adjust(d_n: float, delta: float, lam: float, alpha: float) -> float:
    """Lower the difficulty after a slow block, raise it after a fast one."""
    if not d_n > 0:
        raise ValueError("difficulty must be positive")
    if delta < 0:
        raise ValueError("interval must be non-negative")
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    b = boundary(lam)
    if delta > b:
        d = d_n / (1 + alpha)
    elif delta < b:
        d = d_n * (1 + alpha)
    else:
        d = d_n
    return max(d, MIN_DIFFICULTY)


def genesis_difficulty(kind: BlockKind, params: ProtocolParams) -> float:
    return params.genesis_d_w if kind is BlockKind.WORK else params.genesis_d_s


def next_difficulty(store: ChainStore, parent: bytes, kind: BlockKind, params: ProtocolParams) -> float:
    """Difficulty required of a ``kind`` block built on ``parent``.

    Adjusts the nearest same-kind ancestor's difficulty by that ancestor's own
    arrival interval (its timestamp minus its parent's).
    """
    anc = store.nearest(parent, kind)
    if anc is None or anc.id == store.genesis_id:
        return genesis_difficulty(kind, params)
    prev = store[anc.parent_id]
    return adjust(anc.difficulty, anc.timestamp - prev.timestamp, params.lam, params.alpha)
