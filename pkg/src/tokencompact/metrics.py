"""Information metrics, the analytical FLOPs model and token schedules."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, DegenerateInputError, ShapeError
from .hte import HteConfig, LlmShape, layer_schedule
from .mke import MkeConfig, floor_count, mke_token_count
from .tensor import as_matrix, make_rng


def spectral_norm(a, max_iter: int = 1000, tol: float = 1e-8, seed: int = 0) -> float:
    """Largest singular value by power iteration on ``A^T A``."""
    a = as_matrix(a)
    gram = a.T @ a if a.shape[0] >= a.shape[1] else a @ a.T
    x = make_rng(seed, "power-iteration").standard_normal(gram.shape[0])
    x /= np.linalg.norm(x)
    lam = float(x @ (gram @ x))
    for _ in range(max_iter):
        y = gram @ x
        norm = np.linalg.norm(y)
        if norm == 0.0:
            return 0.0
        x = y / norm
        gx = gram @ x
        lam = float(x @ gx)
        if np.linalg.norm(gx - lam * x) <= tol * abs(lam):
            break
    return math.sqrt(max(lam, 0.0))


def stable_rank(a) -> float:
    a = as_matrix(a)
    fro2 = float((a * a).sum())
    if fro2 == 0.0:
        raise DegenerateInputError("stable_rank of a zero matrix")
    s = spectral_norm(a)
    return fro2 / (s * s)


def coding_rate(a, eps: float = 0.5) -> float:
    """``0.5 * logdet(I_d + d / (n eps^2) A^T A)`` via Cholesky."""
    a = as_matrix(a)
    if not np.isfinite(a).all():
        raise DataError("coding_rate input contains non-finite values")
    if eps <= 0:
        raise DataError(f"eps must be > 0, got {eps}")
    n, d = a.shape
    if n == 0:
        raise DegenerateInputError("coding_rate needs at least one row")
    m = np.eye(d) + (d / (n * eps * eps)) * (a.T @ a)
    chol = np.linalg.cholesky(m)
    return float(np.log(np.diag(chol)).sum())


@dataclass
class LayerFlops:
    layer: int
    visual_tokens: int
    text_tokens: int
    attention: float
    ffn: float
    expert: float
    router: float

    @property
    def total(self) -> float:
        return self.attention + self.ffn + self.expert + self.router


@dataclass
class FlopsReport:
    per_layer: list
    total_g: float
    token_ratio_final: float | None = None

    def to_dict(self) -> dict:
        return {
            "total_g": self.total_g,
            "token_ratio_final": self.token_ratio_final,
            "per_layer": [
                {
                    "layer": p.layer,
                    "visual_tokens": p.visual_tokens,
                    "text_tokens": p.text_tokens,
                    "attention": p.attention,
                    "ffn": p.ffn,
                    "expert": p.expert,
                    "router": p.router,
                }
                for p in self.per_layer
            ],
        }


def layer_flops(shape: LlmShape, n_vis: int, n_text: int, experts: bool = True) -> tuple:
    d = shape.hidden_dim
    n = n_vis + n_text
    attention = 4 * n * d * d + 2 * n * n * d
    ffn = 2 * shape.ffn_matmuls * n * d * shape.ffn_dim
    if not experts:
        return attention, ffn, 0, 0
    expert = 2 * shape.ffn_matmuls * n_vis * shape.router_topk * d * shape.expert_ffn_dim
    router = 2 * n_vis * d * shape.n_visual_experts
    return attention, ffn, expert, router


def flops_estimate(shape: LlmShape, visual_counts, n_text: int, experts: bool = True, token_ratio_final=None) -> FlopsReport:
    """Forward FLOPs per layer.

    attention = 4nD^2 + 2n^2 D, dense FFN = 2 m n D F (m matmuls, 2 for a plain
    FFN and 3 for a gated one), visual experts = 2 m n_vis k D F_e,
    router = 2 n_vis D N. Embeddings, norms and the LM head are not counted.
    ``experts=False`` models a dense backbone without visual experts.
    """
    counts = list(visual_counts)
    if len(counts) != shape.n_layers:
        raise ShapeError(f"schedule has {len(counts)} entries for {shape.n_layers} layers")
    per_layer = []
    for i, n_vis in enumerate(counts):
        att, ffn, exp, rt = layer_flops(shape, int(n_vis), n_text, experts)
        per_layer.append(LayerFlops(i, int(n_vis), n_text, float(att), float(ffn), float(exp), float(rt)))
    total = sum(p.total for p in per_layer) / 1e9
    return FlopsReport(per_layer, total, token_ratio_final)


@dataclass
class TokenSchedule:
    visual_counts: list
    start_count: int
    final_count: int
    n_base: int

    @property
    def start_ratio(self) -> float:
        return self.start_count / self.n_base

    @property
    def final_ratio(self) -> float:
        return self.final_count / self.n_base


def prune_trajectory(start: int, shape: LlmShape, hte_cfg: HteConfig):
    """Per-layer visual counts and the count after the last layer (drop-rate mode)."""
    pruning = set(layer_schedule(shape, hte_cfg))
    n = start
    counts = []
    for li in range(shape.n_layers):
        counts.append(n)
        if li in pruning:
            n -= floor_count(hte_cfg.drop_rate, n)
    return counts, n


def token_schedule(
    mke_cfg: MkeConfig, hte_cfg: HteConfig, shape: LlmShape, n_base_tokens: int, start_count: int | None = None
) -> TokenSchedule:
    """Analytical token trajectory: MKE count formula, then per-layer floor drops.

    ``n_base_tokens`` is the per-branch token count and the denominator of all
    ratios. ``start_count`` overrides the MKE stage.
    """
    start = mke_token_count(n_base_tokens, mke_cfg) if start_count is None else start_count
    counts, final = prune_trajectory(start, shape, hte_cfg)
    return TokenSchedule(counts, start, final, n_base_tokens)


@dataclass
class DensityProfile:
    per_layer: list = field(default_factory=list)

    def to_dict(self) -> list:
        return [
            {"layer": layer, "stable_rank": sr, "coding_rate": cr, "tokens": n}
            for layer, sr, cr, n in self.per_layer
        ]


def density_profile(layer_states, eps: float = 0.5) -> DensityProfile:
    rows = []
    for i, states in enumerate(layer_states):
        n = states.shape[0]
        if n == 0:
            rows.append((i, None, None, 0))
            continue
        rows.append((i, stable_rank(states), coding_rate(states, eps), n))
    return DensityProfile(rows)
