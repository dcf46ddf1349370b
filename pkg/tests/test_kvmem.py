"""Block pool arithmetic and conservation."""

import numpy as np
import pytest

from servesim.kvmem import (
    KvBlockPool,
    PROFILES,
    blocks_needed,
    kv_bytes,
    pool_blocks_for,
)


def test_blocks_needed_values():
    assert blocks_needed(0, 16) == 0
    assert blocks_needed(1, 16) == 1
    assert blocks_needed(16, 16) == 1
    assert blocks_needed(17, 16) == 2
    assert blocks_needed(2000, 16) == 125
    assert blocks_needed(100, 1) == 100
    assert blocks_needed(5, 8) == 1


def test_blocks_needed_rejects_bad_args():
    with pytest.raises(ValueError):
        blocks_needed(-1, 16)
    with pytest.raises(ValueError):
        blocks_needed(10, 0)


def test_kv_bytes_70b_sequence():
    profile = PROFILES["llama3-70b"]
    total = kv_bytes(8192, profile)
    assert total == 8192 * profile.kv_bytes_per_token
    # A full 8k-token sequence lands within 2% of 2.7 GB.
    assert abs(total / 2.7e9 - 1) < 0.02
    assert abs(profile.kv_bytes_per_token / 3.3e5 - 1) < 0.02


def test_pool_blocks_for_40gb_8b():
    profile = PROFILES["llama3-8b"]
    blocks = pool_blocks_for(40e9, profile, block_size=16)
    assert blocks == int((40e9 - profile.weights_bytes) // (profile.kv_bytes_per_token * 16))
    assert blocks == 11444


def test_pool_blocks_for_rejects_too_small_device():
    with pytest.raises(ValueError):
        pool_blocks_for(8e9, PROFILES["llama3-70b"])


def test_allocate_and_free_roundtrip():
    pool = KvBlockPool(10, block_size=16)
    assert pool.try_allocate(1, 100)  # 7 blocks
    assert pool.free_blocks == 3
    assert pool.allocations == {1: 7}
    assert pool.free(1) == 7
    assert pool.free_blocks == 10
    assert pool.allocations == {}


def test_failed_allocate_has_no_side_effects():
    pool = KvBlockPool(4, block_size=16)
    assert not pool.try_allocate(1, 65)  # needs 5 blocks
    assert pool.free_blocks == 4
    assert pool.allocations == {}
    assert pool.try_allocate(1, 64)


def test_double_allocate_rejected():
    pool = KvBlockPool(10, block_size=16)
    pool.try_allocate(1, 10)
    with pytest.raises(ValueError):
        pool.try_allocate(1, 10)


def test_allocate_zero_tokens_succeeds():
    pool = KvBlockPool(10, block_size=16)
    assert pool.try_allocate(1, 0)
    assert pool.free_blocks == 10
    assert pool.try_grow(1, 5)
    assert pool.free_blocks == 9


def test_grow_within_partial_block_is_free():
    pool = KvBlockPool(10, block_size=16)
    pool.try_allocate(1, 17)  # 2 blocks, 15 tokens spare in the second
    free_before = pool.free_blocks
    assert pool.try_grow(1, 32)
    assert pool.free_blocks == free_before
    assert pool.try_grow(1, 33)
    assert pool.free_blocks == free_before - 1


def test_grow_failure_has_no_side_effects():
    pool = KvBlockPool(2, block_size=16)
    pool.try_allocate(1, 16)
    pool.try_allocate(2, 16)
    assert not pool.try_grow(1, 17)
    assert pool.allocated_tokens(1) == 16
    assert pool.free_blocks == 0


def test_grow_never_shrinks():
    pool = KvBlockPool(10, block_size=16)
    pool.try_allocate(1, 32)
    with pytest.raises(ValueError):
        pool.try_grow(1, 31)


def test_unknown_request_errors():
    pool = KvBlockPool(10, block_size=16)
    with pytest.raises(KeyError):
        pool.try_grow(7, 10)
    with pytest.raises(KeyError):
        pool.free(7)


def test_conservation_under_random_ops():
    rng = np.random.default_rng(42)
    pool = KvBlockPool(64, block_size=8)
    live: dict[int, int] = {}
    next_id = 0
    for _ in range(10_000):
        op = rng.integers(3)
        if op == 0:
            tokens = int(rng.integers(0, 200))
            if pool.try_allocate(next_id, tokens):
                live[next_id] = tokens
            else:
                assert next_id not in pool.allocations
            next_id += 1
        elif op == 1 and live:
            rid = int(rng.choice(list(live)))
            new_total = live[rid] + int(rng.integers(0, 50))
            if pool.try_grow(rid, new_total):
                live[rid] = new_total
        elif op == 2 and live:
            rid = int(rng.choice(list(live)))
            pool.free(rid)
            del live[rid]
        assert pool.conserved()
        assert pool.free_blocks >= 0
    assert pool.allocations.keys() == live.keys()
