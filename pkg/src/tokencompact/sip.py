"""Parameter-free reconstruction of pruned tokens and the quantized reconstruction loss."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, ShapeError
from .tensor import as_matrix, rope2d_embed


@dataclass(frozen=True)
class SipConfig:
    scale: float | None = None  # affinity scale; None -> 1/sqrt(D)
    topk: int = 8
    omega: float = 0.8
    iterations: int = 3
    fsq_levels: int = 8

    def __post_init__(self):
        if self.scale is not None and not self.scale > 0:
            raise ConfigError(f"affinity scale must be > 0, got {self.scale}")
        if self.topk < 1:
            raise ConfigError("topk must be >= 1")
        if not 0.0 <= self.omega <= 1.0:
            raise ConfigError(f"omega must lie in [0, 1], got {self.omega}")
        if self.iterations < 0:
            raise ConfigError("iterations must be >= 0")
        if self.fsq_levels < 2:
            raise ConfigError("fsq_levels must be >= 2")

    def affinity_scale(self, dim: int) -> float:
        return 1.0 / math.sqrt(dim) if self.scale is None else self.scale


@dataclass
class PropagationState:
    vc: np.ndarray
    vp: np.ndarray
    z_sparse: np.ndarray
    iteration: int
    deltas: list = field(default_factory=list)


def init_pruned_embeddings(records, dim: int) -> np.ndarray:
    """RoPE rows at the dropped tokens' grid positions, in record order."""
    rows = []
    for rec in records:
        if len(rec.token_ids) == 0:
            continue
        pos = np.asarray(rec.positions)
        if pos.ndim != 2 or pos.shape[1] != 2 or len(pos) != len(rec.token_ids):
            raise DataError(f"prune record at layer {rec.layer_index} lacks grid positions")
        rows.append(pos)
    if not rows:
        return np.zeros((0, dim))
    return rope2d_embed(np.concatenate(rows), dim)


def affinity(vc, vp, scale: float) -> np.ndarray:
    vc = as_matrix(vc, "vc")
    vp = as_matrix(vp, "vp")
    if vc.shape[1] != vp.shape[1]:
        raise ShapeError(f"affinity dim mismatch: {vc.shape[1]} vs {vp.shape[1]}")
    return scale * (vc @ vp.T)


def sparsify_topk(z, k: int) -> np.ndarray:
    """Keep the ``k`` largest entries of each row (ties to the lower column)."""
    z = as_matrix(z, "z")
    if k < 1 or k > z.shape[1]:
        raise ConfigError(f"k={k} outside [1, {z.shape[1]}]")
    order = np.argsort(-z, axis=1, kind="stable")[:, :k]
    out = np.zeros_like(z)
    rows = np.arange(z.shape[0])[:, None]
    out[rows, order] = z[rows, order]
    return out


def l1_row_normalize(m: np.ndarray) -> np.ndarray:
    norms = np.abs(m).sum(axis=1, keepdims=True)
    return np.divide(m, norms, out=np.zeros_like(m), where=norms > 0)


def propagate(vc0, vp0, cfg: SipConfig, iterations: int | None = None) -> PropagationState:
    """Alternate condensed/pruned updates with a fixed sparsified affinity.

    The affinity is ``|Vc| x |Vp|``; the condensed update mixes pruned rows with
    its L1-normalised rows, the pruned update mixes condensed rows with the
    L1-normalised rows of its transpose. Both mixes are convex-bounded.
    """
    vc0 = as_matrix(vc0, "vc0")
    vp0 = as_matrix(vp0, "vp0")
    t_max = cfg.iterations if iterations is None else iterations
    if vc0.shape[0] == 0:
        raise DataError("propagate needs at least one condensed token")
    if vp0.shape[0] == 0:
        return PropagationState(vc0, vp0, np.zeros((vc0.shape[0], 0)), 0)
    z = affinity(vc0, vp0, cfg.affinity_scale(vc0.shape[1]))
    z_sparse = sparsify_topk(z, min(cfg.topk, z.shape[1]))
    to_c = l1_row_normalize(z_sparse)
    to_p = l1_row_normalize(z_sparse.T)
    w = cfg.omega
    vc, vp = vc0, vp0
    deltas = []
    for _ in range(t_max):
        vc = w * (to_c @ vp) + (1.0 - w) * vc0
        vp_next = w * (to_p @ vc) + (1.0 - w) * vp0
        deltas.append(float(np.abs(vp_next - vp).max()))
        vp = vp_next
    return PropagationState(vc, vp, z_sparse, t_max, deltas)


def fsq_gain(levels: int) -> float:
    # shrinks with L so the squash deviates from the lattice by < 1/2 step
    return min(0.5, 1.5 / math.sqrt(levels))


def fsq_codes(v, levels: int) -> np.ndarray:
    """Integer lattice index in ``[0, levels)`` for each entry."""
    g = fsq_gain(levels)
    bounded = np.clip(np.tanh(g * np.asarray(v, dtype=np.float64)) / math.tanh(g), -1.0, 1.0)
    return np.rint((bounded + 1.0) * (levels - 1) / 2.0).astype(np.int64)


def fsq_quantize(v, levels: int = 8) -> np.ndarray:
    """Finite scalar quantization onto ``levels`` evenly spaced points in ``[-1, 1]``.

    Entries are squashed by a scaled tanh (which pins ``+-1`` to ``+-1``), rounded
    half-to-even to the nearest level and mapped back. The lattice points are
    fixed points, so the map is idempotent. With even ``levels`` zero is not a
    level and rounds to ``+1/(levels-1)``.
    """
    if levels < 2:
        raise ConfigError("levels must be >= 2")
    return fsq_codes(v, levels) * (2.0 / (levels - 1)) - 1.0


def qrec_loss(vp, v_orig, levels: int = 8) -> float:
    vp = as_matrix(vp, "vp")
    v_orig = as_matrix(v_orig, "v_orig")
    if vp.shape != v_orig.shape:
        raise DataError(f"reconstruction rows misaligned: {vp.shape} vs {v_orig.shape}")
    diff = fsq_quantize(vp, levels) - fsq_quantize(v_orig, levels)
    return float(np.sqrt((diff * diff).sum(axis=1)).sum())
