"""Router-gated token pruning inside a toy MoE transformer stack."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DegenerateInputError, ShapeError
from .mke import FeatureMap, floor_count
from .tensor import as_matrix, make_rng, row_softmax

SCHEDULES = ("first_half", "second_half", "dense", "sparse")
SCORE_FNS = ("max", "sum", "random")
MODES = ("drop_rate", "threshold")


@dataclass(frozen=True)
class LlmShape:
    n_layers: int = 28
    hidden_dim: int = 64
    n_heads: int = 4
    ffn_dim: int = 128
    expert_ffn_dim: int = 64
    n_visual_experts: int = 4
    router_topk: int = 2
    # 3 for gated (SwiGLU) FFNs; only used by the FLOPs model
    ffn_matmuls: int = 2

    def __post_init__(self):
        if min(self.n_layers, self.hidden_dim, self.n_heads, self.ffn_dim) < 1:
            raise ConfigError(f"non-positive size in {self}")
        if self.hidden_dim % self.n_heads:
            raise ConfigError(f"hidden_dim {self.hidden_dim} not divisible by n_heads {self.n_heads}")
        if self.expert_ffn_dim > self.ffn_dim:
            raise ConfigError("expert_ffn_dim must not exceed ffn_dim")
        if not 1 <= self.router_topk <= self.n_visual_experts:
            raise ConfigError(f"router_topk {self.router_topk} must be in [1, {self.n_visual_experts}]")
        if self.ffn_matmuls not in (2, 3):
            raise ConfigError("ffn_matmuls must be 2 or 3")


# Approximation of a Qwen3-0.6B backbone (grouped KV ignored, SwiGLU FFN) with
# lightweight visual experts at half the FFN width.
QWEN3_06B_LIKE = LlmShape(
    n_layers=28,
    hidden_dim=1024,
    n_heads=16,
    ffn_dim=3072,
    expert_ffn_dim=1536,
    n_visual_experts=4,
    router_topk=2,
    ffn_matmuls=3,
)


@dataclass(frozen=True)
class HteConfig:
    schedule: str = "second_half"
    sparse_step: int = 4
    mode: str = "drop_rate"
    drop_rate: float = 0.1
    threshold: float = 0.0
    score_fn: str = "max"
    renormalize: bool = True

    def __post_init__(self):
        if self.schedule not in SCHEDULES:
            raise ConfigError(f"unknown schedule {self.schedule!r}; expected one of {SCHEDULES}")
        if self.sparse_step < 1:
            raise ConfigError("sparse_step must be >= 1")
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.score_fn not in SCORE_FNS:
            raise ConfigError(f"unknown score_fn {self.score_fn!r}; expected one of {SCORE_FNS}")
        if not 0.0 <= self.drop_rate < 1.0:
            raise ConfigError(f"drop_rate must lie in [0, 1), got {self.drop_rate}")
        if not 0.0 <= self.threshold <= 1.0:
            raise ConfigError(f"threshold must lie in [0, 1], got {self.threshold}")


@dataclass
class RouterDecision:
    logits: np.ndarray
    weights: np.ndarray
    selected: np.ndarray
    saliency: np.ndarray


@dataclass
class PruneRecord:
    layer_index: int
    token_ids: np.ndarray
    positions: np.ndarray
    vectors: np.ndarray
    kept_count: int

    @property
    def n_dropped(self) -> int:
        return len(self.token_ids)


def topk_indices(w: np.ndarray, k: int) -> np.ndarray:
    """Row-wise indices of the ``k`` largest entries, ties to the lower index."""
    order = np.argsort(-w, axis=1, kind="stable")
    return order[:, :k]


def token_saliency(weights: np.ndarray, selected: np.ndarray, mode: str = "max", rng=None) -> np.ndarray:
    if mode == "max":
        return np.take_along_axis(weights, selected, axis=1).max(axis=1)
    if mode == "sum":
        return np.take_along_axis(weights, selected, axis=1).sum(axis=1)
    if mode == "random":
        if rng is None:
            raise ConfigError("random saliency needs a generator")
        return 1.0 - rng.random(weights.shape[0])
    raise ConfigError(f"unknown saliency mode {mode!r}")


def router_forward(x, w_r, topk: int, score_fn: str = "max", rng=None) -> RouterDecision:
    x = as_matrix(x, "x")
    w_r = as_matrix(w_r, "w_r")
    if x.shape[1] != w_r.shape[0]:
        raise ShapeError(f"router expects dim {w_r.shape[0]}, got {x.shape[1]}")
    logits = x @ w_r
    weights = row_softmax(logits)
    selected = topk_indices(weights, topk)
    return RouterDecision(logits, weights, selected, token_saliency(weights, selected, score_fn, rng))


def load_balance_loss(weights: np.ndarray) -> float:
    """Switch-style auxiliary loss ``N * sum_i f_i * P_i`` over a batch of routing weights."""
    weights = as_matrix(weights, "weights")
    n, n_exp = weights.shape
    if n == 0:
        raise DegenerateInputError("load_balance_loss needs at least one token")
    top1 = weights.argmax(axis=1)
    f = np.bincount(top1, minlength=n_exp) / n
    p = weights.mean(axis=0)
    return float(n_exp * np.dot(f, p))


def gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + np.tanh(math.sqrt(2.0 / math.pi) * (x + 0.044715 * x**3)))


def rms_norm(x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    return x / np.sqrt(np.mean(x * x, axis=1, keepdims=True) + eps)


@dataclass
class Ffn:
    w_in: np.ndarray
    w_out: np.ndarray

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return gelu(x @ self.w_in) @ self.w_out


@dataclass
class LayerWeights:
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    global_ffn: Ffn
    experts: list
    w_router: np.ndarray
    prenorm: bool = True

    @classmethod
    def init(cls, shape: LlmShape, rng: np.random.Generator, scale: float = 1.0) -> "LayerWeights":
        d, f, fe = shape.hidden_dim, shape.ffn_dim, shape.expert_ffn_dim

        def w(rows, cols):
            return rng.standard_normal((rows, cols)) * (scale / math.sqrt(rows))

        return cls(
            wq=w(d, d),
            wk=w(d, d),
            wv=w(d, d),
            wo=w(d, d),
            global_ffn=Ffn(w(d, f), w(f, d)),
            experts=[Ffn(w(d, fe), w(fe, d)) for _ in range(shape.n_visual_experts)],
            w_router=w(d, shape.n_visual_experts),
        )

    def zero_experts(self) -> "LayerWeights":
        zeroed = [Ffn(np.zeros_like(e.w_in), np.zeros_like(e.w_out)) for e in self.experts]
        return LayerWeights(self.wq, self.wk, self.wv, self.wo, self.global_ffn, zeroed, self.w_router, self.prenorm)


def attention_forward(x: np.ndarray, weights: LayerWeights, n_heads: int) -> np.ndarray:
    """Causal multi-head self-attention (pre-norm), residual added."""
    n, d = x.shape
    if n == 0:
        return x
    h = rms_norm(x) if weights.prenorm else x
    hd = d // n_heads
    q = (h @ weights.wq).reshape(n, n_heads, hd).transpose(1, 0, 2)
    k = (h @ weights.wk).reshape(n, n_heads, hd).transpose(1, 0, 2)
    v = (h @ weights.wv).reshape(n, n_heads, hd).transpose(1, 0, 2)
    scores = q @ k.transpose(0, 2, 1) / math.sqrt(hd)
    scores = np.where(np.tri(n, dtype=bool)[None], scores, -np.inf)
    scores -= scores.max(axis=2, keepdims=True)
    p = np.exp(scores)
    p /= p.sum(axis=2, keepdims=True)
    out = (p @ v).transpose(1, 0, 2).reshape(n, d)
    return x + out @ weights.wo


def dense_layer_forward(hidden: np.ndarray, weights: LayerWeights) -> np.ndarray:
    h = rms_norm(hidden) if weights.prenorm else hidden
    return hidden + weights.global_ffn(h)


def moe_layer_forward(
    hidden,
    visual_mask,
    weights: LayerWeights,
    topk: int,
    score_fn: str = "max",
    renormalize: bool = True,
    rng=None,
):
    """``y = x + E_global(x) + 1_vis(x) * sum_{i in K} w_i(x) E_i(x)``.

    Returns ``(y, decision)``; ``decision`` covers the visual rows only, in order.
    """
    hidden = as_matrix(hidden, "hidden")
    mask = np.asarray(visual_mask, dtype=bool)
    if mask.shape != (hidden.shape[0],):
        raise ShapeError(f"visual_mask length {mask.shape} != token count {hidden.shape[0]}")
    h = rms_norm(hidden) if weights.prenorm else hidden
    y = hidden + weights.global_ffn(h)

    vis = np.flatnonzero(mask)
    decision = router_forward(hidden[vis], weights.w_router, topk, score_fn, rng)
    if vis.size:
        gate = np.take_along_axis(decision.weights, decision.selected, axis=1)
        if renormalize:
            gate = gate / gate.sum(axis=1, keepdims=True)
        hv = h[vis]
        mix = np.zeros((vis.size, hidden.shape[1]))
        for e_idx, expert in enumerate(weights.experts):
            rows, slot = np.nonzero(decision.selected == e_idx)
            if rows.size:
                mix[rows] += gate[rows, slot][:, None] * expert(hv[rows])
        y[vis] = y[vis] + mix
    return y, decision


def layer_schedule(shape: LlmShape, cfg: HteConfig) -> list:
    n = shape.n_layers
    if cfg.schedule == "second_half":
        return list(range(math.ceil(n / 2), n))
    if cfg.schedule == "first_half":
        return list(range(n // 2))
    if cfg.schedule == "dense":
        return list(range(n))
    return list(range(0, n, cfg.sparse_step))


def prune_layer(saliency: np.ndarray, cfg: HteConfig) -> np.ndarray:
    """Indices (into the visual rows) to keep, in their original order.

    drop_rate mode drops the ``floor(d * n)`` lowest scores, higher index first on
    ties; threshold mode drops every score ``<= tau``.
    """
    s = np.asarray(saliency, dtype=np.float64)
    n = s.size
    if cfg.mode == "threshold":
        return np.flatnonzero(s > cfg.threshold)
    n_drop = floor_count(cfg.drop_rate, n)
    if n_drop == 0:
        return np.arange(n)
    # ascending score, then descending index: the first n_drop entries go
    order = np.lexsort((-np.arange(n), s))
    return np.sort(order[n_drop:])


@dataclass
class StackResult:
    hidden: np.ndarray
    visual_ids: np.ndarray
    records: list
    visual_counts: list
    final_visual_count: int
    text_len: int
    layer_states: list = field(default_factory=list)
    router_weights: list = field(default_factory=list)

    @property
    def visual_hidden(self) -> np.ndarray:
        return self.hidden[: len(self.visual_ids)]


def build_stack(shape: LlmShape, seed: int, scale: float = 1.0) -> list:
    return [LayerWeights.init(shape, make_rng(seed, "hte", "layer", i), scale) for i in range(shape.n_layers)]


def text_embeddings(seed: int, text_len: int, dim: int) -> np.ndarray:
    return make_rng(seed, "hte", "text").standard_normal((text_len, dim))


def run_stack(
    v: FeatureMap,
    text_len: int,
    shape: LlmShape,
    cfg: HteConfig,
    seed: int = 0,
    layers: list | None = None,
    keep_states: bool = True,
) -> StackResult:
    """Run ``[visual | text]`` through the stack, pruning visual tokens per schedule.

    ``visual_counts[i]`` is the number of visual tokens layer ``i`` processes;
    ``layer_states[i]`` holds the visual hidden rows leaving layer ``i`` (after
    any pruning there).
    """
    if v.n_tokens == 0:
        raise DegenerateInputError("run_stack needs at least one visual token")
    if v.dim != shape.hidden_dim:
        raise ShapeError(f"visual dim {v.dim} != hidden_dim {shape.hidden_dim}")
    layers = build_stack(shape, seed) if layers is None else layers
    pruning = set(layer_schedule(shape, cfg))

    hidden = np.concatenate([v.tokens, text_embeddings(seed, text_len, shape.hidden_dim)])
    ids = np.arange(v.n_tokens)
    records, counts, states, routes = [], [], [], []
    for li, lw in enumerate(layers):
        n_vis = ids.size
        counts.append(n_vis)
        mask = np.zeros(hidden.shape[0], dtype=bool)
        mask[:n_vis] = True
        hidden = attention_forward(hidden, lw, shape.n_heads)
        rng = make_rng(seed, "hte", "random-score", li) if cfg.score_fn == "random" else None
        hidden, decision = moe_layer_forward(hidden, mask, lw, shape.router_topk, cfg.score_fn, cfg.renormalize, rng)
        routes.append(decision.weights)
        if li in pruning and n_vis:
            keep = prune_layer(decision.saliency, cfg)
            drop = np.setdiff1d(np.arange(n_vis), keep)
            records.append(
                PruneRecord(
                    layer_index=li,
                    token_ids=ids[drop].copy(),
                    positions=v.positions[ids[drop]].copy(),
                    vectors=hidden[drop].copy(),
                    kept_count=int(keep.size),
                )
            )
            hidden = np.concatenate([hidden[keep], hidden[n_vis:]])
            ids = ids[keep]
        if keep_states:
            states.append(hidden[: ids.size].copy())
    return StackResult(hidden, ids, records, counts, int(ids.size), text_len, states, routes)
