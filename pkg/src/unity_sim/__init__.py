"""Interleaved proof-of-work / proof-of-stake consensus: protocol rules and simulator."""

__version__ = "0.1.0"

from .chain import Block, BlockKind, ProtocolParams, StakeLedger, block_id, make_genesis
from .consensus import ErrorCode, ValidationError, insert_block, validate_block
from .store import ChainStore, fork_choice, total_difficulty

__all__ = [
    "Block", "BlockKind", "ChainStore", "ErrorCode", "ProtocolParams", "StakeLedger",
    "ValidationError", "block_id", "fork_choice", "insert_block", "make_genesis",
    "total_difficulty", "validate_block",
]
