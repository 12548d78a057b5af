"""Block DAG with cumulative difficulty totals and heaviest-tip selection."""

from __future__ import annotations

from .chain import Block, BlockKind


class UnknownBlock(KeyError):
    pass


def _key(totals: tuple[float, float], block_id: bytes):
    td_w, td_s = totals
    # heavier sum, then more work, then the smaller id
    return (td_w + td_s, td_w, bytes(255 - b for b in block_id))


class ChainStore:
    """Append-only store of every block ever accepted (no pruning).

    ``totals`` holds (td_w, td_s) for every stored block, not only tips,
    so that a child's totals are one addition away from its parent's.
    """

    def __init__(self, genesis: Block):
        self.genesis_id = genesis.id
        self.blocks: dict[bytes, Block] = {genesis.id: genesis}
        self.children: dict[bytes, list[bytes]] = {genesis.id: []}
        self.totals: dict[bytes, tuple[float, float]] = {genesis.id: _own(genesis, (0.0, 0.0))}
        self.tips: set[bytes] = {genesis.id}
        self.canonical_tip = genesis.id

    def __contains__(self, block_id: bytes) -> bool:
        return block_id in self.blocks

    def __len__(self) -> int:
        return len(self.blocks)

    def __getitem__(self, block_id: bytes) -> Block:
        try:
            return self.blocks[block_id]
        except KeyError:
            raise UnknownBlock(block_id.hex()) from None

    @property
    def genesis(self) -> Block:
        return self.blocks[self.genesis_id]

    def parent(self, block: Block) -> Block | None:
        if block.id == self.genesis_id:
            return None
        return self.blocks.get(block.parent_id)

    def add(self, block: Block) -> bool:
        """Store a block without validation. Returns False if already present."""
        if block.id in self.blocks:
            return False
        if block.parent_id not in self.blocks:
            raise UnknownBlock(block.parent_id.hex())
        self.blocks[block.id] = block
        self.children[block.id] = []
        self.children[block.parent_id].append(block.id)
        self.totals[block.id] = _own(block, self.totals[block.parent_id])
        self.tips.discard(block.parent_id)
        self.tips.add(block.id)
        if _key(self.totals[block.id], block.id) > _key(self.totals[self.canonical_tip], self.canonical_tip):
            self.canonical_tip = block.id
        return True

    def ancestors(self, block_id: bytes):
        """Yield the block and its ancestors back to genesis."""
        block = self[block_id]
        while True:
            yield block
            if block.id == self.genesis_id:
                return
            block = self.blocks[block.parent_id]

    def nearest(self, block_id: bytes, kind: BlockKind) -> Block | None:
        """The block itself or its nearest ancestor of the given kind."""
        for block in self.ancestors(block_id):
            if block.kind is kind:
                return block
        return None

    def is_ancestor(self, ancestor_id: bytes, block_id: bytes) -> bool:
        target = self[ancestor_id]
        block = self[block_id]
        while block.height > target.height:
            block = self.blocks[block.parent_id]
        return block.id == target.id

    def chain(self, tip: bytes | None = None) -> list[Block]:
        """Blocks from genesis to ``tip`` (default: canonical tip)."""
        out = list(self.ancestors(tip if tip is not None else self.canonical_tip))
        out.reverse()
        return out


def _own(block: Block, parent_totals: tuple[float, float]) -> tuple[float, float]:
    td_w, td_s = parent_totals
    if block.kind is BlockKind.WORK:
        return (td_w + block.difficulty, td_s)
    return (td_w, td_s + block.difficulty)


def total_difficulty(store: ChainStore, tip: bytes) -> tuple[float, float]:
    """(td_w, td_s) summed over the path from genesis to ``tip``."""
    if tip not in store.blocks:
        raise UnknownBlock(tip.hex())
    return store.totals[tip]


def fork_choice(store: ChainStore) -> bytes:
    """Tip with the largest td_w + td_s; ties go to more work, then the smaller id."""
    return max(store.tips, key=lambda t: _key(store.totals[t], t))
