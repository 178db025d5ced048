import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from ecar.matching import (DescriptorIndex, descriptor_bits, hamming_matrix,
                           match_descriptors)


def popcount_xor(a: bytes, b: bytes) -> int:
    return bin(int.from_bytes(a, "big") ^ int.from_bytes(b, "big")).count("1")


def flip_bits(desc: bytes, n: int, seed: int = 0) -> bytes:
    rng = np.random.default_rng(seed)
    raw = bytearray(desc)
    for bit in rng.choice(256, size=n, replace=False):
        raw[bit // 8] ^= 1 << (7 - bit % 8)
    return bytes(raw)


def test_descriptor_bits_shape_and_values():
    bits = descriptor_bits([b"\x00" * 32, b"\xff" * 32, b"\x80" + b"\x00" * 31])
    assert bits.shape == (3, 256)
    assert bits[0].sum() == 0 and bits[1].sum() == 256
    assert bits[2, 0] == 1 and bits[2].sum() == 1


def test_descriptor_bits_empty():
    assert descriptor_bits([]).shape == (0, 256)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.binary(min_size=32, max_size=32), min_size=1, max_size=6),
       st.lists(st.binary(min_size=32, max_size=32), min_size=1, max_size=6))
def test_hamming_matrix_matches_popcount_oracle(a, b):
    dist = hamming_matrix(descriptor_bits(a), descriptor_bits(b))
    for i, da in enumerate(a):
        for j, db in enumerate(b):
            assert dist[i, j] == popcount_xor(da, db)


def test_exact_match_found():
    rng = np.random.default_rng(0)
    train = [rng.bytes(32) for _ in range(20)]
    got = match_descriptors([train[7]], descriptor_bits(train))
    assert got == [(0, 7)]


def test_noisy_match_within_hamming_budget():
    rng = np.random.default_rng(1)
    train = [rng.bytes(32) for _ in range(50)]
    noisy = flip_bits(train[3], 10, seed=2)
    got = match_descriptors([noisy], descriptor_bits(train), hamming_max=50)
    assert got == [(0, 3)]


def test_hamming_max_rejects_distant_query():
    rng = np.random.default_rng(3)
    train = [rng.bytes(32) for _ in range(10)]
    far = flip_bits(train[0], 120, seed=4)
    assert match_descriptors([far], descriptor_bits(train),
                             hamming_max=30) == []


def test_ratio_test_rejects_ambiguous_match():
    base = np.random.default_rng(5).bytes(32)
    # two train entries nearly equidistant from the query
    t0 = flip_bits(base, 20, seed=6)
    t1 = flip_bits(base, 20, seed=7)
    got = match_descriptors([base], descriptor_bits([t0, t1]),
                            hamming_max=256, ratio_max=0.8)
    assert got == []


def test_exact_hit_bypasses_ratio_test():
    # identical twins in the train set: ratio is 0/0 but distance 0 wins
    rng = np.random.default_rng(8)
    d = rng.bytes(32)
    got = match_descriptors([d], descriptor_bits([d, d]))
    assert got == [(0, 0)]


def test_empty_inputs():
    bits = descriptor_bits([b"\x00" * 32])
    assert match_descriptors([], bits) == []
    assert match_descriptors([b"\x00" * 32], descriptor_bits([])) == []


def test_index_exact_fast_path_and_fallback():
    rng = np.random.default_rng(9)
    idx = DescriptorIndex()
    descs = [rng.bytes(32) for _ in range(30)]
    for d in descs:
        assert idx.add(d) == len(idx) - 1
    noisy = flip_bits(descs[12], 8, seed=10)
    got = idx.match([descs[4], noisy, descs[25]])
    assert got == [(0, 4), (1, 12), (2, 25)]


def test_index_incremental_bits_consistent():
    rng = np.random.default_rng(11)
    idx = DescriptorIndex()
    first = [rng.bytes(32) for _ in range(5)]
    for d in first:
        idx.add(d)
    _ = idx.bits()
    second = [rng.bytes(32) for _ in range(5)]
    for d in second:
        idx.add(d)
    assert np.array_equal(idx.bits(), descriptor_bits(first + second))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.binary(min_size=32, max_size=32), min_size=1, max_size=10,
                unique=True))
def test_index_self_query_is_identity(descs):
    idx = DescriptorIndex()
    for d in descs:
        idx.add(d)
    assert idx.match(list(descs)) == [(i, i) for i in range(len(descs))]
