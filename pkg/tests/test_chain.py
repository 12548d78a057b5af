import random

import pytest
from hypothesis import given, settings, strategies as st

from sha256_ref import sha256 as ref_sha256
from unity_sim.chain import (
    Block, BlockKind, ProtocolParams, StakeError, StakeLedger, StructuralError,
    block_id, make_genesis, serialize,
)
from unity_sim.store import ChainStore, total_difficulty

# frozen with tests/sha256_ref.py (independent of hashlib)
GENESIS_SERIALIZATION = (
    "00"
    + "00" * 32
    + "0000000000000000"  # height
    + "0000000000000000"  # timestamp 0.0
    + "415312d000000000"  # difficulty 5e6
    + "00000007" + b"genesis".hex()
    + "00000020" + "3f7f3f9fea6a87282f258ed96241741347a9529f981adef619cc17b7020bd238"
)
GENESIS_ID = "a398f0a5be16316b554735764a5673662777306dc36018fbc0c7d1f4545262b0"


def work(parent, d, ts=1.0, nonce=b"\x00" * 32, producer="m"):
    return Block(parent.id, BlockKind.WORK, parent.height + 1, ts, d, producer, nonce=nonce)


def stake(parent, d, ts=1.0, seed=b"\x01" * 32, producer="s"):
    return Block(parent.id, BlockKind.STAKE, parent.height + 1, ts, d, producer, seed=seed)


class TestBlockId:
    def test_genesis_vector(self):
        g = make_genesis(ProtocolParams())
        assert serialize(g).hex() == GENESIS_SERIALIZATION
        assert g.id.hex() == GENESIS_ID
        assert ref_sha256(bytes.fromhex(GENESIS_SERIALIZATION)).hex() == GENESIS_ID

    def test_deterministic(self):
        g = make_genesis(ProtocolParams())
        a, b = work(g, 3.0), work(g, 3.0)
        assert a.id == b.id == block_id(a)

    def test_nonce_changes_id(self):
        g = make_genesis(ProtocolParams())
        assert work(g, 3.0, nonce=b"\x00" * 32).id != work(g, 3.0, nonce=b"\x00" * 31 + b"\x01").id

    def test_every_field_changes_id(self):
        g = make_genesis(ProtocolParams())
        base = stake(g, 7.0)
        variants = [
            stake(g, 7.5), stake(g, 7.0, ts=2.0), stake(g, 7.0, producer="t"),
            stake(g, 7.0, seed=b"\x02" * 32),
            Block(b"\x09" * 32, BlockKind.STAKE, 1, 1.0, 7.0, "s", seed=b"\x01" * 32),
            Block(g.id, BlockKind.STAKE, 5, 1.0, 7.0, "s", seed=b"\x01" * 32),
        ]
        assert len({base.id} | {v.id for v in variants}) == len(variants) + 1

    @pytest.mark.parametrize("kw", [
        dict(kind=BlockKind.WORK, seed=b"\x00" * 32),
        dict(kind=BlockKind.WORK, nonce=b"\x00" * 32, seed=b"\x00" * 32),
        dict(kind=BlockKind.STAKE, nonce=b"\x00" * 32),
        dict(kind=BlockKind.WORK, nonce=b"\x00" * 5),
    ])
    def test_mixed_kind_fields_rejected(self, kw):
        with pytest.raises(StructuralError):
            Block(bytes(32), height=1, timestamp=0.0, difficulty=1.0, producer_id="x", **kw)

    def test_nonpositive_difficulty_rejected(self):
        with pytest.raises(StructuralError):
            Block(bytes(32), BlockKind.WORK, 1, 0.0, 0.0, "x", nonce=bytes(32))

    def test_json_round_trip(self):
        g = make_genesis(ProtocolParams())
        b = stake(g, 7.123456789012345, ts=10.000000000000002)
        back, claimed = Block.from_json(b.to_json())
        assert back == b and back.id == b.id == claimed


class TestLedger:
    def test_lock(self):
        led = StakeLedger(30)
        led.deposit("a", 100)
        led.lock_stake("a", 60, 5)
        acct = led.accounts["a"]
        assert (acct.liquid, acct.locked) == (40, 60)
        assert led.effective_stake("a", 5) == 0
        assert led.effective_stake("a", 6) == 60

    @pytest.mark.parametrize("amount", [0, 101])
    def test_lock_rejected(self, amount):
        led = StakeLedger(30)
        led.deposit("a", 100)
        with pytest.raises(StakeError):
            led.lock_stake("a", amount, 5)
        assert (led.accounts["a"].liquid, led.accounts["a"].locked, led.total_locked) == (100, 0, 0)

    def test_unlock_and_release(self):
        led = StakeLedger(30)
        led.deposit("a", 60)
        led.lock_stake("a", 60, 0)
        led.unlock_stake("a", 60, 10)
        acct = led.accounts["a"]
        assert acct.locked == 0 and acct.pending_unlocks == [(60, 40)]
        led.release_pending(39)
        assert acct.liquid == 0 and acct.pending_unlocks == [(60, 40)]
        led.release_pending(40)
        assert acct.liquid == 60 and acct.pending_unlocks == []

    def test_unlock_too_much(self):
        led = StakeLedger(30)
        led.deposit("a", 60)
        led.lock_stake("a", 60, 0)
        with pytest.raises(StakeError):
            led.unlock_stake("a", 61, 3)
        with pytest.raises(StakeError):
            led.unlock_stake("nobody", 1, 3)

    def test_unknown_account(self):
        assert StakeLedger().effective_stake("ghost", 10) == 0

    def test_lock_then_unlock_trace(self):
        # lock at 5 counts from 6; unlock at 8 stops counting at 8
        led = StakeLedger(30)
        led.deposit("a", 60)
        led.lock_stake("a", 60, 5)
        led.unlock_stake("a", 60, 8)
        assert [led.effective_stake("a", h) for h in range(4, 10)] == [0, 0, 60, 60, 0, 0]

    def test_same_height_lock_unlock(self):
        led = StakeLedger(0)
        led.deposit("a", 60)
        led.lock_stake("a", 60, 5)
        led.unlock_stake("a", 60, 5)
        assert led.effective_stake("a", 5) == 0
        assert led.effective_stake("a", 6) == 0

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**32))
    def test_conservation(self, seed):
        rng = random.Random(seed)
        accounts = ["a", "b", "c", "d"]
        led = StakeLedger(unlock_delay=rng.randint(0, 20))
        initial = {a: rng.randint(1, 1000) for a in accounts}
        for a, v in initial.items():
            led.deposit(a, v)
        height = 0
        max_locked = {a: 0 for a in accounts}
        for _ in range(400):
            height += rng.randint(0, 2)
            a = rng.choice(accounts)
            acct = led.account(a)
            op = rng.random()
            try:
                if op < 0.45:
                    led.lock_stake(a, rng.randint(0, max(1, int(acct.liquid))), height)
                elif op < 0.9:
                    led.unlock_stake(a, rng.randint(0, max(1, int(acct.locked))), height)
                else:
                    led.release_pending(height)
            except StakeError:
                pass
            for b in accounts:
                x = led.accounts[b]
                assert x.liquid >= 0 and x.locked >= 0
                assert all(p >= 0 for p, _ in x.pending_unlocks)
                assert x.liquid + x.locked + x.pending == initial[b]
                max_locked[b] = max(max_locked[b], x.locked)
            assert led.total_locked == sum(x.locked for x in led.accounts.values())
        for b in accounts:
            for h in range(-1, height + 2):
                assert 0 <= led.effective_stake(b, h) <= max_locked[b]


class TestTotalDifficulty:
    def test_genesis_only(self):
        g = make_genesis(ProtocolParams(genesis_d_w=5))
        assert total_difficulty(ChainStore(g), g.id) == (5, 0)

    def test_three_blocks(self):
        g = make_genesis(ProtocolParams(genesis_d_w=5))
        s = ChainStore(g)
        b1 = stake(g, 7)
        b2 = work(b1, 6)
        s.add(b1)
        s.add(b2)
        assert total_difficulty(s, b2.id) == (11, 7)

    def test_unknown_tip(self):
        s = ChainStore(make_genesis(ProtocolParams()))
        with pytest.raises(KeyError):
            total_difficulty(s, b"\x07" * 32)

    def test_incremental_matches_resum(self):
        rng = random.Random(3)
        g = make_genesis(ProtocolParams(genesis_d_w=rng.uniform(1, 100)))
        s = ChainStore(g)
        blocks = [g]
        for i in range(50):
            parent = rng.choice(blocks)
            maker = stake if parent.kind is BlockKind.WORK else work
            b = maker(parent, rng.uniform(1, 100), nonce=bytes(31) + bytes([i])) if maker is work \
                else maker(parent, rng.uniform(1, 100), seed=bytes(31) + bytes([i]))
            s.add(b)
            blocks.append(b)
        for b in blocks:
            path = s.chain(b.id)
            td_w = sum(x.difficulty for x in path if x.kind is BlockKind.WORK)
            td_s = sum(x.difficulty for x in path if x.kind is BlockKind.STAKE)
            got = total_difficulty(s, b.id)
            assert got == pytest.approx((td_w, td_s), rel=1e-12)
            parent = s.parent(b)
            if parent is not None:
                pw, ps = total_difficulty(s, parent.id)
                expect = (b.difficulty, 0) if b.kind is BlockKind.WORK else (0, b.difficulty)
                assert (got[0] - pw, got[1] - ps) == pytest.approx(expect)


class TestParams:
    def test_lambda_derived_from_T(self):
        assert ProtocolParams(T=10).lam == pytest.approx(0.1)

    @pytest.mark.parametrize("kw", [dict(T=0), dict(alpha=0), dict(unlock_delay=-1), dict(lam=-1.0)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            ProtocolParams(**kw)

    def test_dict_round_trip(self):
        p = ProtocolParams(T=12, alpha=0.05)
        assert ProtocolParams.from_dict(p.to_dict()) == p
