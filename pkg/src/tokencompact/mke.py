"""Multi-aspect feature merging: space-to-depth, bipartite merge, self/cross merge."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, DegenerateInputError, ShapeError
from .tensor import cosine_sim_matrix, make_rng, orthonormal_projection

# guards floor() against products like 0.29 * 100 == 28.999999999999996
_FLOOR_EPS = 1e-9


def floor_count(fraction: float, n: int) -> int:
    return int(math.floor(fraction * n + _FLOOR_EPS))


@dataclass(frozen=True)
class FeatureMap:
    """Token matrix on a 2-D grid.

    ``positions`` holds the ``(row, col)`` grid coordinate of every token and
    ``sizes`` the number of original tokens it stands for.
    """

    height: int
    width: int
    tokens: np.ndarray
    positions: np.ndarray
    sizes: np.ndarray

    def __post_init__(self):
        n = self.tokens.shape[0]
        if self.tokens.ndim != 2:
            raise ShapeError("tokens must be 2-D")
        if self.positions.shape != (n, 2) or self.sizes.shape != (n,):
            raise ShapeError(
                f"positions {self.positions.shape} / sizes {self.sizes.shape} do not match {n} tokens"
            )

    @classmethod
    def from_grid(cls, grid: np.ndarray) -> "FeatureMap":
        grid = np.asarray(grid, dtype=np.float64)
        if grid.ndim != 3:
            raise ShapeError(f"grid must be H x W x C, got {grid.shape}")
        h, w, c = grid.shape
        rows, cols = np.divmod(np.arange(h * w), w)
        return cls(
            height=h,
            width=w,
            tokens=grid.reshape(h * w, c).copy(),
            positions=np.stack([rows, cols], axis=1).astype(np.int64),
            sizes=np.ones(h * w),
        )

    @property
    def n_tokens(self) -> int:
        return self.tokens.shape[0]

    @property
    def dim(self) -> int:
        return self.tokens.shape[1]

    @property
    def grid_shaped(self) -> bool:
        return self.n_tokens == self.height * self.width

    def take(self, idx) -> "FeatureMap":
        idx = np.asarray(idx, dtype=np.int64)
        return replace(self, tokens=self.tokens[idx], positions=self.positions[idx], sizes=self.sizes[idx])

    def with_tokens(self, tokens: np.ndarray) -> "FeatureMap":
        return replace(self, tokens=np.asarray(tokens, dtype=np.float64))


@dataclass
class MergeTrace:
    """Who merged into whom.

    ``edges`` are ``(src_id, dst_id, similarity)`` in descending similarity;
    ``groups[i]`` lists the input ids that make up output token ``i`` (its own
    id first).
    """

    edges: list = field(default_factory=list)
    groups: list = field(default_factory=list)
    alpha_mode: str = "size_weighted"

    @property
    def survivors(self) -> list:
        return [g[0] for g in self.groups]

    def summary(self) -> dict:
        sims = [e[2] for e in self.edges]
        return {
            "n_in": sum(len(g) for g in self.groups),
            "n_out": len(self.groups),
            "n_edges": len(self.edges),
            "max_group": max((len(g) for g in self.groups), default=0),
            "mean_similarity": float(np.mean(sims)) if sims else None,
            "alpha_mode": self.alpha_mode,
        }


@dataclass(frozen=True)
class MkeConfig:
    r: int = 2
    k_self: float = 0.5
    k_cross: float = 0.4
    bypass: bool = False

    def __post_init__(self):
        if not isinstance(self.r, int) or self.r < 1:
            raise ConfigError(f"r must be a positive integer, got {self.r!r}")
        if not 0.0 <= self.k_self < 1.0:
            raise ConfigError(f"k_self must lie in [0, 1), got {self.k_self}")
        if not 0.0 <= self.k_cross <= 1.0:
            raise ConfigError(f"k_cross must lie in [0, 1], got {self.k_cross}")


def space_to_depth(f: FeatureMap, r: int) -> FeatureMap:
    """Fold each ``r x r`` block into channels, block pixels in row-major order."""
    if r < 1 or f.height % r or f.width % r:
        raise ShapeError(f"grid {f.height}x{f.width} is not divisible by r={r}")
    if not f.grid_shaped:
        raise ShapeError("space_to_depth needs a grid-shaped feature map")
    if r == 1:
        return f
    h, w, c = f.height, f.width, f.dim
    ho, wo = h // r, w // r
    grid = f.tokens.reshape(ho, r, wo, r, c).transpose(0, 2, 1, 3, 4)
    sizes = f.sizes.reshape(ho, r, wo, r).sum(axis=(1, 3))
    rows, cols = np.divmod(np.arange(ho * wo), wo)
    return FeatureMap(
        height=ho,
        width=wo,
        tokens=grid.reshape(ho * wo, r * r * c),
        positions=np.stack([rows, cols], axis=1).astype(np.int64),
        sizes=sizes.reshape(-1),
    )


def bipartite_partition(f: FeatureMap):
    n = f.n_tokens
    if n < 2:
        raise DegenerateInputError(f"bipartite_partition needs >= 2 tokens, got {n}")
    idx = np.arange(n)
    return idx[0::2], idx[1::2]


def bipartite_merge(dst: FeatureMap, src: FeatureMap, k: int, dst_ids=None, src_ids=None):
    """Fuse the ``k`` most similar src tokens into their best-matching dst token.

    Each src token's best edge is its highest cosine match among dst (ties to the
    lower dst index). Edges are ranked by similarity, ties to the lower src index.
    Fusion is the size-weighted mean. Unmerged src tokens follow all dst tokens,
    in their original order.
    """
    nd, ns = dst.n_tokens, src.n_tokens
    if dst.dim != src.dim:
        raise ShapeError(f"dst dim {dst.dim} != src dim {src.dim}")
    if k < 0 or k > ns:
        raise ConfigError(f"k={k} outside [0, {ns}]")
    if k and nd == 0:
        raise DegenerateInputError("cannot merge into an empty dst set")
    dst_ids = list(range(nd)) if dst_ids is None else list(dst_ids)
    src_ids = list(range(nd, nd + ns)) if src_ids is None else list(src_ids)

    if k == 0 or nd == 0:
        best_dst = np.zeros(ns, dtype=np.int64)
        best_sim = np.zeros(ns)
        order = np.arange(ns)
    else:
        sim = cosine_sim_matrix(src.tokens, dst.tokens)
        best_dst = sim.argmax(axis=1)
        best_sim = sim[np.arange(ns), best_dst]
        order = np.argsort(-best_sim, kind="stable")
    merged, kept = order[:k], np.sort(order[k:])

    tokens = dst.tokens * dst.sizes[:, None]
    sizes = dst.sizes.copy()
    groups = [[i] for i in dst_ids]
    for j in merged:
        t = best_dst[j]
        tokens[t] += src.tokens[j] * src.sizes[j]
        sizes[t] += src.sizes[j]
        groups[t].append(src_ids[j])
    tokens = tokens / sizes[:, None]
    # untouched dst rows keep their exact values
    untouched = np.setdiff1d(np.arange(nd), best_dst[merged])
    tokens[untouched] = dst.tokens[untouched]

    out = FeatureMap(
        height=dst.height,
        width=dst.width,
        tokens=np.concatenate([tokens, src.tokens[kept]]),
        positions=np.concatenate([dst.positions, src.positions[kept]]),
        sizes=np.concatenate([sizes, src.sizes[kept]]),
    )
    edges = [(src_ids[j], dst_ids[best_dst[j]], float(best_sim[j])) for j in merged]
    groups += [[src_ids[j]] for j in kept]
    return out, MergeTrace(edges=edges, groups=groups)


def self_merge(extra: FeatureMap, k_self: float):
    """Remove ``floor(k_self * n)`` tokens by alternating-partition bipartite merging.

    One round removes at most half the tokens, so larger ratios run further
    rounds on the result until the target count is reached.
    """
    if not 0.0 <= k_self < 1.0:
        raise ConfigError(f"k_self must lie in [0, 1), got {k_self}")
    n = extra.n_tokens
    if n < 2:
        raise DegenerateInputError(f"self_merge needs >= 2 tokens, got {n}")
    remaining = floor_count(k_self, n)
    current = extra
    ids = list(range(n))
    groups = [[i] for i in ids]
    edges = []
    while remaining > 0 and current.n_tokens >= 2:
        a, b = bipartite_partition(current)
        k = min(remaining, len(b))
        out, trace = bipartite_merge(
            current.take(a), current.take(b), k, dst_ids=[ids[i] for i in a], src_ids=[ids[i] for i in b]
        )
        by_id = {g[0]: g for g in groups}
        groups = [[i for member in g for i in by_id[member]] for g in trace.groups]
        edges.extend(trace.edges)
        ids = [g[0] for g in groups]
        current = out
        remaining -= k
    edges.sort(key=lambda e: -e[2])
    return current, MergeTrace(edges=edges, groups=groups)


def cross_merge(main: FeatureMap, extra_tilde: FeatureMap, k_cross: float):
    if not 0.0 <= k_cross <= 1.0:
        raise ConfigError(f"k_cross must lie in [0, 1], got {k_cross}")
    k = floor_count(k_cross, extra_tilde.n_tokens)
    return bipartite_merge(main, extra_tilde, k)


def branch_projection(seed: int, branch: str, in_dim: int, out_dim: int) -> np.ndarray:
    rng = make_rng(seed, "mke", "projection", branch)
    return orthonormal_projection(rng, in_dim, out_dim)


def project(f: FeatureMap, w: np.ndarray) -> FeatureMap:
    if f.dim != w.shape[0]:
        raise ShapeError(f"projection expects dim {w.shape[0]}, got {f.dim}")
    return f.with_tokens(f.tokens @ w)


def mke_forward(f_main: FeatureMap, f_extra: FeatureMap, cfg: MkeConfig, hidden_dim: int, seed: int = 0):
    """Build the unified visual tokens. Returns ``(V, traces)``.

    In bypass mode both projected branches are concatenated untouched.
    """
    if (f_main.height, f_main.width) != (f_extra.height, f_extra.width):
        raise ShapeError(
            f"branch grids differ: {f_main.height}x{f_main.width} vs {f_extra.height}x{f_extra.width}"
        )
    if cfg.bypass:
        main = project(f_main, branch_projection(seed, "main", f_main.dim, hidden_dim))
        extra = project(f_extra, branch_projection(seed, "extra", f_extra.dim, hidden_dim))
        out, _ = bipartite_merge(main, extra, 0)
        return out, []

    main = space_to_depth(f_main, cfg.r)
    extra = space_to_depth(f_extra, cfg.r)
    main = project(main, branch_projection(seed, "main", main.dim, hidden_dim))
    extra = project(extra, branch_projection(seed, "extra", extra.dim, hidden_dim))
    extra_tilde, self_trace = self_merge(extra, cfg.k_self)
    v, cross_trace = cross_merge(main, extra_tilde, cfg.k_cross)
    return v, [self_trace, cross_trace]


def mke_token_count(n_branch: int, cfg: MkeConfig) -> int:
    """Closed-form output count for two branches of ``n_branch`` tokens each."""
    if cfg.bypass:
        return 2 * n_branch
    n = n_branch // (cfg.r * cfg.r)
    n_extra = n - floor_count(cfg.k_self, n)
    return n + n_extra - floor_count(cfg.k_cross, n_extra)
