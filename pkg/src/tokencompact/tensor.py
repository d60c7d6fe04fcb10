"""Dense float64 primitives shared by every stage.

Matrices are plain 2-D ``numpy.ndarray`` objects of dtype float64. Randomness goes
through :func:`make_rng`, a Philox (counter-based) generator keyed by an integer
seed and an optional tuple of stream labels, so every consumer gets an
independent, reproducible stream.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, ShapeError

RNG_ALGORITHM = "philox4x64"


@dataclass(frozen=True)
class RngState:
    seed: int
    algorithm: str = RNG_ALGORITHM

    def generator(self, *stream) -> np.random.Generator:
        return make_rng(self.seed, *stream)


def _stream_key(stream) -> int:
    if not stream:
        return 0
    text = "/".join(str(s) for s in stream).encode()
    return int.from_bytes(hashlib.sha256(text).digest()[:8], "little")


def make_rng(seed: int, *stream) -> np.random.Generator:
    """Generator for ``seed`` and a named sub-stream, e.g. ``make_rng(0, "layer", 3)``."""
    bitgen = np.random.Philox(key=[seed & (2**64 - 1), _stream_key(stream)])
    return np.random.Generator(bitgen)


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {m.shape}")
    return m


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul dimension mismatch: {a.shape} x {b.shape}")
    return a @ b


def row_softmax(a) -> np.ndarray:
    a = as_matrix(a)
    z = a - a.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def row_norms(x: np.ndarray) -> np.ndarray:
    return np.sqrt(np.einsum("ij,ij->i", x, x))


def cosine_sim_matrix(x, y) -> np.ndarray:
    x = as_matrix(x, "x")
    y = as_matrix(y, "y")
    if x.shape[1] != y.shape[1]:
        raise ShapeError(f"cosine_sim_matrix column mismatch: {x.shape[1]} vs {y.shape[1]}")
    nx = row_norms(x)
    ny = row_norms(y)
    for label, norms in (("x", nx), ("y", ny)):
        bad = np.flatnonzero(norms == 0.0)
        if bad.size:
            raise DegenerateInputError(f"zero-norm row {int(bad[0])} in {label}")
    return (x / nx[:, None]) @ (y / ny[:, None]).T


def rope2d_embed(positions, dim: int, base: float = 10000.0) -> np.ndarray:
    """Axial 2-D rotary phases.

    Channels ``[0, dim/2)`` encode the row coordinate and ``[dim/2, dim)`` the
    column, each as interleaved ``(sin, cos)`` pairs with frequencies
    ``base ** (-2i / (dim/2))``.
    """
    if dim <= 0 or dim % 4:
        raise ShapeError(f"rope2d_embed needs dim divisible by 4, got {dim}")
    pos = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
    half = dim // 2
    freqs = base ** (-np.arange(0, half, 2, dtype=np.float64) / half)
    out = np.empty((pos.shape[0], dim), dtype=np.float64)
    for axis in range(2):
        phase = pos[:, axis : axis + 1] * freqs[None, :]
        block = out[:, axis * half : (axis + 1) * half]
        block[:, 0::2] = np.sin(phase)
        block[:, 1::2] = np.cos(phase)
    return out


def random_matrix(rng: np.random.Generator, rows: int, cols: int, scale: float = 1.0) -> np.ndarray:
    return rng.standard_normal((rows, cols)) * scale


def orthonormal_projection(rng: np.random.Generator, in_dim: int, out_dim: int) -> np.ndarray:
    """``in_dim x out_dim`` map with orthonormal columns (or rows, when ``in_dim < out_dim``)."""
    g = rng.standard_normal((max(in_dim, out_dim), min(in_dim, out_dim)))
    q, r = np.linalg.qr(g)
    q = q * np.sign(np.diag(r))[None, :]
    return q if in_dim >= out_dim else q.T
