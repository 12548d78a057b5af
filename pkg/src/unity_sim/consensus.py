"""Block validation, insertion and fork choice."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

from .chain import Block, BlockKind, ProtocolParams, StakeLedger, header_bytes
from .difficulty import next_difficulty
from .stake import DEFAULT_SIGNER, earliest_timestamp, wait_time
from .store import ChainStore, fork_choice, total_difficulty  # noqa: F401
from .work import HASHES, verify_pow

DIFFICULTY_RTOL = 1e-9


class ErrorCode(enum.Enum):
    InterleaveViolation = "InterleaveViolation"
    BadProofOfWork = "BadProofOfWork"
    BadSeed = "BadSeed"
    TooEarly = "TooEarly"
    FutureBlock = "FutureBlock"
    BadDifficulty = "BadDifficulty"
    UnknownParent = "UnknownParent"
    StructuralError = "StructuralError"


class ValidationError(Exception):
    def __init__(self, code: ErrorCode, detail: str = ""):
        super().__init__(f"{code.value}: {detail}" if detail else code.value)
        self.code = code
        self.detail = detail


def pos_parent_seed(store: ChainStore, parent: Block, params: ProtocolParams) -> bytes:
    """Seed a new Stake block on ``parent`` must sign: the nearest Stake ancestor's."""
    anc = store.nearest(parent.id, BlockKind.STAKE)
    return anc.seed if anc is not None else params.genesis_seed_0


def validate_block(block: Block, store: ChainStore, stake_view: StakeLedger,
                   local_clock: float, params: ProtocolParams, signer=DEFAULT_SIGNER) -> None:
    """Raise ValidationError for the first rule the block breaks."""
    parent = store.blocks.get(block.parent_id)
    if parent is None:
        raise ValidationError(ErrorCode.UnknownParent, block.parent_id.hex())
    if block.height != parent.height + 1:
        raise ValidationError(ErrorCode.StructuralError,
                              f"height {block.height} != parent height {parent.height} + 1")
    if block.kind is parent.kind:
        raise ValidationError(ErrorCode.InterleaveViolation,
                              f"{block.kind.label} block on {parent.kind.label} parent")

    expected = next_difficulty(store, parent.id, block.kind, params)
    if not math.isclose(block.difficulty, expected, rel_tol=DIFFICULTY_RTOL, abs_tol=0.0):
        raise ValidationError(ErrorCode.BadDifficulty, f"{block.difficulty!r} != expected {expected!r}")

    if block.kind is BlockKind.WORK:
        if not verify_pow(header_bytes(block), block.nonce, block.difficulty, HASHES[params.pow_hash]):
            raise ValidationError(ErrorCode.BadProofOfWork, f"nonce {block.nonce.hex()}")
    else:
        prev_seed = pos_parent_seed(store, parent, params)
        if not signer.verify(block.seed, prev_seed, block.producer_id):
            raise ValidationError(ErrorCode.BadSeed, f"seed does not sign {prev_seed.hex()}")
        v = stake_view.effective_stake(block.producer_id, parent.height)
        if not v > 0:
            raise ValidationError(ErrorCode.TooEarly, f"{block.producer_id} has no effective stake")
        earliest = earliest_timestamp(parent.timestamp, wait_time(block.seed, v, block.difficulty))
        if block.timestamp < earliest:
            raise ValidationError(ErrorCode.TooEarly, f"timestamp {block.timestamp!r} < {earliest!r}")

    if block.timestamp > local_clock + params.max_future_drift:
        raise ValidationError(ErrorCode.FutureBlock,
                              f"timestamp {block.timestamp!r} > clock {local_clock!r} + drift")
    if block.timestamp < parent.timestamp:
        raise ValidationError(ErrorCode.StructuralError, "timestamp precedes parent")


@dataclass(frozen=True)
class InsertResult:
    accepted: bool
    reorg: bool
    new_canonical_tip: bytes


def insert_block(store: ChainStore, block: Block, stake_view: StakeLedger,
                 local_clock: float, params: ProtocolParams, signer=DEFAULT_SIGNER) -> InsertResult:
    """Validate and store a block, then re-run fork choice.

    Raises ValidationError (store untouched) for invalid blocks; a block
    already in the store is a no-op with ``accepted=False``.
    """
    if block.id in store:
        return InsertResult(False, False, store.canonical_tip)
    validate_block(block, store, stake_view, local_clock, params, signer)
    old_tip = store.canonical_tip
    store.add(block)
    new_tip = store.canonical_tip
    reorg = new_tip != old_tip and not store.is_ancestor(old_tip, new_tip)
    return InsertResult(True, reorg, new_tip)
