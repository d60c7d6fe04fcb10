"""Synthetic dual-branch features and the on-disk feature format.

A feature file is a pair: ``<stem>.json`` (header) and ``<stem>.bin`` (flat
little-endian payload, H x W x C row-major). Header keys::

    {"format": "tokencompact-features", "version": 1, "dims": [H, W, C],
     "dtype": "f32" | "f64", "byte_order": "little", "branch": "main",
     "payload": "<stem>.bin"}
"""

from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path

import numpy as np

from .errors import DataError, ParseError
from .mke import FeatureMap
from .tensor import make_rng

FORMAT_NAME = "tokencompact-features"
DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}
NOISE_LEVEL = 0.05


def _smooth_field(rng: np.random.Generator, h: int, w: int, dim: int, n_modes: int = 4) -> np.ndarray:
    """Sum of low-frequency cosine modes, scaled to unit RMS per channel."""
    rows = np.cos(np.pi * np.outer(np.arange(n_modes), np.arange(h) + 0.5) / h)  # modes x h
    cols = np.cos(np.pi * np.outer(np.arange(n_modes), np.arange(w) + 0.5) / w)
    decay = 1.0 / (1.0 + np.add.outer(np.arange(n_modes), np.arange(n_modes)))
    coeff = rng.standard_normal((n_modes, n_modes, dim)) * decay[:, :, None]
    field = np.einsum("ah,bw,abc->hwc", rows, cols, coeff)
    field -= field.mean(axis=(0, 1), keepdims=True)
    return field / np.sqrt((field**2).mean(axis=(0, 1), keepdims=True))


def synth_features(seed: int, grid, dim: int, rho: float):
    """Two branches over ``grid``: main = shared + noise,
    extra = rho * shared + (1 - rho) * independent + noise."""
    if not 0.0 <= rho <= 1.0:
        raise DataError(f"rho must lie in [0, 1], got {rho}")
    h, w = grid
    shared = _smooth_field(make_rng(seed, "synth", "shared"), h, w, dim)
    indep = _smooth_field(make_rng(seed, "synth", "independent"), h, w, dim)
    noise = make_rng(seed, "synth", "noise")
    main = shared + NOISE_LEVEL * noise.standard_normal((h, w, dim))
    extra = rho * shared + (1.0 - rho) * indep + NOISE_LEVEL * noise.standard_normal((h, w, dim))
    return FeatureMap.from_grid(main), FeatureMap.from_grid(extra)


def _paths(path) -> tuple:
    p = Path(path)
    if p.suffix in (".json", ".bin"):
        p = p.with_suffix("")
    return p.with_suffix(".json"), p.with_suffix(".bin")


def save_features(path, grid: np.ndarray, branch: str, dtype: str = "f32") -> Path:
    """Write header + payload; returns the header path."""
    if dtype not in DTYPES:
        raise DataError(f"unsupported dtype tag {dtype!r}")
    grid = np.asarray(grid)
    if grid.ndim != 3:
        raise DataError(f"expected an H x W x C array, got shape {grid.shape}")
    header_path, payload_path = _paths(path)
    header = {
        "format": FORMAT_NAME,
        "version": 1,
        "dims": [int(d) for d in grid.shape],
        "dtype": dtype,
        "byte_order": "little",
        "branch": branch,
        "payload": payload_path.name,
    }
    header_path.parent.mkdir(parents=True, exist_ok=True)
    payload_path.write_bytes(np.ascontiguousarray(grid, dtype=DTYPES[dtype]).tobytes())
    header_path.write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")
    return header_path


def _parse_header(raw: bytes) -> dict:
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError("header is not UTF-8", exc.start) from None
    try:
        header = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed header: {exc.msg}", len(text[: exc.pos].encode())) from None
    if not isinstance(header, dict):
        raise ParseError("header must be an object", 0)
    for key in ("dims", "dtype", "byte_order", "branch"):
        if key not in header:
            raise ParseError(f"header missing {key!r}", 0)
    dims = header["dims"]
    if not (isinstance(dims, list) and len(dims) == 3 and all(isinstance(d, int) and d > 0 for d in dims)):
        raise ParseError(f"dims must be three positive integers, got {dims!r}", raw.find(b'"dims"'))
    if header["dtype"] not in DTYPES:
        raise ParseError(f"unsupported dtype {header['dtype']!r}", raw.find(b'"dtype"'))
    if header["byte_order"] != "little":
        raise ParseError(f"unsupported byte order {header['byte_order']!r}", raw.find(b'"byte_order"'))
    return header


def header_digest(path) -> str:
    header_path, _ = _paths(path)
    return hashlib.sha256(header_path.read_bytes()).hexdigest()


def read_feature_grid(path):
    """Return ``(grid, header)``; the grid keeps the file's dtype."""
    header_path, payload_path = _paths(path)
    header = _parse_header(header_path.read_bytes())
    if "payload" in header:
        payload_path = header_path.parent / header["payload"]
    dtype = DTYPES[header["dtype"]]
    payload = payload_path.read_bytes()
    expected = math.prod(header["dims"]) * dtype.itemsize
    if len(payload) != expected:
        raise DataError(f"payload is {len(payload)} bytes, header implies {expected}")
    grid = np.frombuffer(payload, dtype=dtype).reshape(header["dims"])
    bad = np.flatnonzero(~np.isfinite(grid.reshape(-1)))
    if bad.size:
        raise DataError(f"non-finite value at flat index {int(bad[0])}")
    return grid, header


def load_features(path) -> FeatureMap:
    grid, _ = read_feature_grid(path)
    return FeatureMap.from_grid(grid.astype(np.float64))
