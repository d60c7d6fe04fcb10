import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import merge_oracle
from tokencompact.errors import ConfigError, DegenerateInputError, ShapeError
from tokencompact.mke import (
    FeatureMap,
    MkeConfig,
    bipartite_merge,
    bipartite_partition,
    cross_merge,
    floor_count,
    mke_forward,
    mke_token_count,
    self_merge,
    space_to_depth,
)


def fmap(tokens, sizes=None):
    tokens = np.asarray(tokens, dtype=np.float64)
    n = tokens.shape[0]
    return FeatureMap(
        height=1,
        width=max(n, 1),
        tokens=tokens,
        positions=np.stack([np.zeros(n, dtype=np.int64), np.arange(n)], axis=1),
        sizes=np.ones(n) if sizes is None else np.asarray(sizes, dtype=np.float64),
    )


def random_instance(g):
    nd = int(g.integers(1, 9))
    ns = int(g.integers(0, 9))
    dim = int(g.integers(2, 6))
    dst = g.standard_normal((nd, dim))
    src = g.standard_normal((ns, dim))
    dsz = g.integers(1, 5, nd).astype(float)
    ssz = g.integers(1, 5, ns).astype(float)
    return dst, dsz, src, ssz


def check_against_oracle(dst, dsz, src, ssz, k):
    out, trace = bipartite_merge(fmap(dst, dsz), fmap(src, ssz), k)
    vecs, sizes, groups = merge_oracle(dst.tolist(), dsz.tolist(), src.tolist(), ssz.tolist(), k)
    assert trace.groups == groups
    assert trace.survivors == [g[0] for g in groups]
    np.testing.assert_array_equal(out.sizes, sizes)
    if vecs:
        np.testing.assert_allclose(out.tokens, vecs, rtol=0, atol=1e-9)
    assert out.sizes.sum() == dsz.sum() + ssz.sum()


def test_merge_matches_oracle_on_random_instances():
    g = np.random.default_rng(2024)
    for _ in range(200):
        dst, dsz, src, ssz = random_instance(g)
        for k in range(len(src) + 1):
            check_against_oracle(dst, dsz, src, ssz, k)


def test_merge_hand_case():
    dst = [[1.0, 0.0], [0.0, 1.0]]
    src = [[2.0, 0.1], [0.0, 3.0], [-1.0, -1.0]]
    out, trace = bipartite_merge(fmap(dst), fmap(src), 2)
    # src 1 is exactly parallel to dst 1; src 0 is nearly parallel to dst 0
    assert [e[:2] for e in trace.edges] == [(3, 1), (2, 0)]
    np.testing.assert_allclose(out.tokens, [[1.5, 0.05], [0.0, 2.0], [-1.0, -1.0]])
    np.testing.assert_array_equal(out.sizes, [2, 2, 1])


def test_merge_tie_goes_to_lower_dst_and_lower_src():
    dst = [[1.0, 0.0], [1.0, 0.0]]
    src = [[2.0, 0.0], [3.0, 0.0]]
    out, trace = bipartite_merge(fmap(dst), fmap(src), 1)
    assert trace.edges == [(2, 0, 1.0)]
    assert trace.groups == [[0, 2], [1], [3]]


def test_merge_k_zero_is_concatenation():
    dst = np.arange(6.0).reshape(3, 2) + 1
    src = -np.arange(4.0).reshape(2, 2) - 1
    out, trace = bipartite_merge(fmap(dst), fmap(src), 0)
    np.testing.assert_array_equal(out.tokens, np.concatenate([dst, src]))
    assert trace.edges == []


def test_merge_bad_k_and_empty_dst():
    with pytest.raises(ConfigError):
        bipartite_merge(fmap(np.ones((2, 2))), fmap(np.ones((1, 2))), 2)
    with pytest.raises(DegenerateInputError):
        bipartite_merge(fmap(np.zeros((0, 2))), fmap(np.ones((1, 2))), 1)


def test_merge_zero_norm_token_is_reported():
    with pytest.raises(DegenerateInputError):
        bipartite_merge(fmap([[1.0, 0.0]]), fmap([[0.0, 0.0]]), 1)


@given(st.integers(0, 2**32 - 1), st.data())
def test_merge_invariants(seed, data):
    g = np.random.default_rng(seed)
    dst, dsz, src, ssz = random_instance(g)
    k = data.draw(st.integers(0, len(src)))
    out, trace = bipartite_merge(fmap(dst, dsz), fmap(src, ssz), k)
    assert out.n_tokens == len(dst) + len(src) - k
    assert out.sizes.sum() == dsz.sum() + ssz.sum()
    ids = sorted(i for grp in trace.groups for i in grp)
    assert ids == list(range(len(dst) + len(src)))
    allv = np.concatenate([dst, src])
    alls = np.concatenate([dsz, ssz])
    for row, grp in zip(out.tokens, trace.groups):
        w = alls[grp] / alls[grp].sum()
        np.testing.assert_allclose(row, w @ allv[grp], atol=1e-12)
        lo, hi = allv[grp].min(axis=0), allv[grp].max(axis=0)
        assert (row >= lo - 1e-12).all() and (row <= hi + 1e-12).all()


def test_partition_alternates():
    a, b = bipartite_partition(fmap(np.ones((7, 2))))
    assert a.tolist() == [0, 2, 4, 6] and b.tolist() == [1, 3, 5]
    with pytest.raises(DegenerateInputError):
        bipartite_partition(fmap(np.ones((1, 2))))


def test_space_to_depth_matches_index_oracle(rng):
    h, w, c, r = 6, 4, 3, 2
    grid = rng.standard_normal((h, w, c))
    out = space_to_depth(FeatureMap.from_grid(grid), r)
    assert (out.height, out.width, out.n_tokens, out.dim) == (3, 2, 6, 12)
    for i in range(h // r):
        for j in range(w // r):
            expected = [grid[i * r + a, j * r + b, ch] for a in range(r) for b in range(r) for ch in range(c)]
            np.testing.assert_array_equal(out.tokens[i * (w // r) + j], expected)
    np.testing.assert_array_equal(out.sizes, 4.0)


@given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 3), st.integers(1, 3), st.integers(0, 2**32 - 1))
def test_space_to_depth_is_a_permutation(ho, wo, c, r, seed):
    grid = np.random.default_rng(seed).standard_normal((ho * r, wo * r, c))
    out = space_to_depth(FeatureMap.from_grid(grid), r)
    assert out.n_tokens == ho * wo and out.dim == r * r * c
    np.testing.assert_array_equal(np.sort(out.tokens.ravel()), np.sort(grid.ravel()))


def test_space_to_depth_rejects_indivisible():
    with pytest.raises(ShapeError):
        space_to_depth(FeatureMap.from_grid(np.ones((5, 4, 1))), 2)


def test_floor_count_guards_rounding():
    assert floor_count(0.29, 100) == 29
    assert floor_count(0.5, 7) == 3
    assert floor_count(0.0, 10) == 0


@pytest.mark.parametrize(
    "k_self,k_cross,expected",
    [(0.0, 0.0, 288), (0.3, 0.2, 225), (0.3, 0.4, 205), (0.5, 0.4, 188), (0.8, 0.4, 162), (0.8, 0.6, 156)],
)
def test_token_count_table(k_self, k_cross, expected, rng):
    cfg = MkeConfig(k_self=k_self, k_cross=k_cross)
    assert mke_token_count(576, cfg) == expected
    grid_m = rng.standard_normal((24, 24, 8))
    grid_e = rng.standard_normal((24, 24, 8))
    v, traces = mke_forward(FeatureMap.from_grid(grid_m), FeatureMap.from_grid(grid_e), cfg, 16)
    assert v.n_tokens == expected
    assert v.sizes.sum() == 1152


def test_bypass_keeps_everything(rng):
    cfg = MkeConfig(bypass=True)
    g = rng.standard_normal((24, 24, 4))
    v, traces = mke_forward(FeatureMap.from_grid(g), FeatureMap.from_grid(g), cfg, 8)
    assert v.n_tokens == 1152 == mke_token_count(576, cfg)
    assert traces == []


def test_self_merge_multi_round_reaches_target(rng):
    f = fmap(rng.standard_normal((144, 6)))
    out, trace = self_merge(f, 0.8)
    assert out.n_tokens == 144 - 115
    assert len(trace.edges) == 115
    assert out.sizes.sum() == 144
    assert sorted(i for grp in trace.groups for i in grp) == list(range(144))
    for row, grp in zip(out.tokens, trace.groups):
        np.testing.assert_allclose(row, f.tokens[grp].mean(axis=0), atol=1e-12)


def test_self_merge_zero_is_identity(rng):
    f = fmap(rng.standard_normal((9, 3)))
    out, trace = self_merge(f, 0.0)
    np.testing.assert_array_equal(out.tokens, f.tokens)
    assert trace.edges == []


def test_merge_robust_to_src_permutation(rng):
    dst = rng.standard_normal((6, 4))
    src = rng.standard_normal((5, 4))
    perm = rng.permutation(5)
    a, ta = bipartite_merge(fmap(dst), fmap(src), 3)
    b, tb = bipartite_merge(fmap(dst), fmap(src[perm]), 3)
    # the set of merged source vectors is the same regardless of order
    merged_a = {tuple(src[e[0] - 6]) for e in ta.edges}
    merged_b = {tuple(src[perm][e[0] - 6]) for e in tb.edges}
    assert merged_a == merged_b
    np.testing.assert_allclose(a.tokens[:6], b.tokens[:6], atol=1e-12)


def test_cross_merge_count(rng):
    main = fmap(rng.standard_normal((10, 4)))
    extra = fmap(rng.standard_normal((5, 4)))
    out, trace = cross_merge(main, extra, 0.6)
    assert out.n_tokens == 12 and len(trace.edges) == 3


def test_config_validation():
    with pytest.raises(ConfigError):
        MkeConfig(k_self=1.0)
    with pytest.raises(ConfigError):
        MkeConfig(r=0)
