import math
import random

import numpy as np
import pytest
from scipy import stats

from sha256_ref import sha256 as ref_sha256
from unity_sim.stake import (
    StakerSpec, StallDetected, best_staker_draw, earliest_timestamp, next_seed, verify_seed, wait_time,
)
from unity_sim.work import sha256_int

PREV = bytes(range(32))
ALICE_SEED = "e9b979e807a87e8e838726b2007b4750f6a18a97438ee3e71f0c955aa998ee0d"
# d_s = 5e6, V = 5e5, computed at 50 digits with mpmath from the reference hash
ALICE_DELTA = 6.4418240116994851511962803987126249982473298473554


class TestSeed:
    def test_deterministic(self):
        assert next_seed(PREV, "alice") == next_seed(PREV, "alice")

    def test_distinct_stakers(self):
        assert next_seed(PREV, "alice") != next_seed(PREV, "bob")

    def test_vector(self):
        assert ref_sha256(b"seed" + b"alice" + PREV).hex() == ALICE_SEED
        assert next_seed(PREV, "alice").hex() == ALICE_SEED

    def test_verify(self):
        s = next_seed(PREV, "alice")
        assert verify_seed(s, PREV, "alice")
        assert not verify_seed(s, PREV, "bob")
        assert not verify_seed(s, bytes(32), "alice")


class TestWaitTime:
    def test_vector(self):
        assert wait_time(bytes.fromhex(ALICE_SEED), 5e5, 5e6) == pytest.approx(ALICE_DELTA, rel=1e-12)

    def test_max_hash_is_zero_wait(self):
        assert wait_time(b"x", 1.0, 1.0, hash_fn=lambda _: 2**256) == 0.0

    def test_contrived_log_two(self):
        h = round(2**256 * math.exp(-2.0))
        assert wait_time(b"x", 5e5, 5e6, hash_fn=lambda _: h) == pytest.approx(20.0, rel=1e-12)

    def test_zero_hash_is_finite(self):
        d = wait_time(b"x", 1.0, 1.0, hash_fn=lambda _: 0)
        assert d == pytest.approx(256 * math.log(2))

    @pytest.mark.parametrize("V,d", [(0, 1), (-1, 1), (1, 0), (1, -2)])
    def test_bad_params(self, V, d):
        with pytest.raises(ValueError):
            wait_time(b"x", V, d)

    def test_homogeneity(self):
        rng = random.Random(0)
        for _ in range(2000):
            seed = rng.randbytes(32)
            V, d, c = rng.uniform(1, 1e6), rng.uniform(1, 1e9), rng.uniform(1e-3, 1e3)
            base = wait_time(seed, V, d)
            assert wait_time(seed, c * V, d) == pytest.approx(base / c, rel=4e-16, abs=0)
            assert wait_time(seed, V, c * d) == pytest.approx(c * base, rel=4e-16, abs=0)

    def test_mean(self):
        rng = random.Random(1)
        x = [wait_time(rng.randbytes(32), 5e5, 5e6) for _ in range(1_000_000)]
        assert np.mean(x) == pytest.approx(10.0, abs=0.05)

    def test_exponential(self):
        rng = random.Random(2)
        V, d = 3.0, 7.0
        x = [wait_time(rng.randbytes(32), V, d) * V / d for _ in range(100_000)]
        assert stats.kstest(x, "expon").pvalue > 0.01


class TestEarliest:
    def test_values(self):
        assert earliest_timestamp(100.0, 7.25) == 107.25
        assert earliest_timestamp(100.0, 0) == 100.0

    def test_boundary(self):
        bound = earliest_timestamp(100.0, 7.25)
        assert not 107.24 >= bound
        assert 107.25 >= bound

    def test_negative(self):
        with pytest.raises(ValueError):
            earliest_timestamp(1.0, -0.1)


class TestRace:
    def test_single(self):
        who, delta, seed = best_staker_draw([StakerSpec("a", 5.0)], PREV, 10.0)
        assert who == "a"
        assert delta == wait_time(next_seed(PREV, "a"), 5.0, 10.0)
        assert seed == next_seed(PREV, "a")

    def test_empty(self):
        with pytest.raises(StallDetected):
            best_staker_draw([], PREV, 1.0)
        with pytest.raises(StallDetected):
            best_staker_draw([StakerSpec("a", 0.0)], PREV, 1.0)

    @pytest.mark.parametrize("stakes,share", [((1, 1), 0.5), ((2, 1), 2 / 3)])
    def test_shares(self, stakes, share):
        rng = random.Random(sum(stakes))
        n = 100_000
        stakers = [StakerSpec("one", stakes[0]), StakerSpec("two", stakes[1])]
        wins = sum(best_staker_draw(stakers, rng.randbytes(32), 1.0)[0] == "one" for _ in range(n))
        assert wins / n == pytest.approx(share, abs=0.01)
        assert abs(wins / n - share) <= 3 * math.sqrt(share * (1 - share) / n)

    def test_seed_lineage(self):
        # each winner's seed is the next height's previous seed
        stakers = [("a", 1.0), ("b", 2.0), ("c", 3.0)]
        prev = PREV
        for _ in range(50):
            who, _, seed = best_staker_draw(stakers, prev, 1.0)
            assert verify_seed(seed, prev, who)
            prev = seed

    def test_tie_breaks_on_seed(self):
        stakers = [("a", 1.0), ("b", 1.0)]
        # equal stake and a constant hash make every wait time equal
        import unity_sim.stake as stake_mod
        orig = stake_mod.wait_time
        try:
            stake_mod.wait_time = lambda seed, V, d, hash_fn=sha256_int: 1.0
            who, _, seed = best_staker_draw(stakers, PREV, 1.0)
        finally:
            stake_mod.wait_time = orig
        assert seed == min(next_seed(PREV, "a"), next_seed(PREV, "b"))
