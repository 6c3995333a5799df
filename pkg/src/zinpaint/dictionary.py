"""Patch dictionary, subset layouts, PCA and byte quantization.

A dictionary entry is a fully KNOWN K x K window, identified by its
top-left corner encoded as ``y * width + x`` (so integer order is row-major
order).  Each of the eight subset layouts picks the ``round(c * K^2)`` patch
pixels nearest to one edge midpoint or corner; a per-layout PCA maps the
layout pixels (all channels) to ``D`` principal coordinates, which are
quantized to bytes and sorted along the z-curve.
"""

from __future__ import annotations

import io
import math
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .image_core import MaskImage, RasterImage, check_pair, check_patch_size
from .zcurve import Norm, ZCurveIndex

ANCHOR_NAMES = ("N", "E", "S", "W", "NW", "NE", "SW", "SE")

_CHUNK = 8192
QUERY_MODES = ("fit", "mean")
SCALE_MODES = ("shared", "axis")


class ConfigError(ValueError):
    """Invalid index or run configuration."""


class EmptyDictionaryError(RuntimeError):
    """No fully known patch exists, so nothing can be copied."""


def round_half_away(x: float) -> int:
    return int(math.floor(abs(x) + 0.5)) * (1 if x >= 0 else -1)


def layout_size(K: int, c: float) -> int:
    return round_half_away(c * K * K)


@dataclass(frozen=True)
class IndexConfig:
    K: int = 9
    c: float = 0.6
    D: int = 10
    k: int = 80
    mu: int = 256
    nu: int = 2048
    norm: Norm = Norm.L2
    query: str = "fit"  # unknown layout pixels: "fit" (least squares) or "mean"
    scale: str = "shared"  # quantizer range: "shared" or per-"axis"

    def __post_init__(self):
        object.__setattr__(self, "norm", Norm.parse(self.norm))

    def validate(self, channels: int | None = None) -> "IndexConfig":
        if self.K < 3 or self.K % 2 == 0:
            raise ConfigError(f"patch size K must be odd and >= 3, got {self.K}")
        if not 0 < self.c <= 1:
            raise ConfigError(f"coverage c must lie in (0, 1], got {self.c}")
        m = layout_size(self.K, self.c)
        if m < 1:
            raise ConfigError(f"coverage {self.c} leaves no pixel in a {self.K}x{self.K} patch")
        if self.D < 1:
            raise ConfigError("D must be at least 1")
        if channels is not None and self.D > m * channels:
            raise ConfigError(f"D={self.D} exceeds the {m * channels} layout coordinates")
        if self.k < 1:
            raise ConfigError("k must be at least 1")
        if self.mu < 1:
            raise ConfigError("mu must be at least 1")
        if self.nu < self.mu:
            raise ConfigError("nu must not be below mu")
        if self.query not in QUERY_MODES:
            raise ConfigError(f"query must be one of {QUERY_MODES}, got {self.query!r}")
        if self.scale not in SCALE_MODES:
            raise ConfigError(f"scale must be one of {SCALE_MODES}, got {self.scale!r}")
        return self


# --- layouts ------------------------------------------------------------------

@dataclass(frozen=True)
class SubsetLayout:
    id: int
    anchor: tuple[int, int]
    name: str
    pixels: np.ndarray  # (m, 2) patch-local (row, col), row-major

    def flat_index(self, K: int) -> np.ndarray:
        """Pixel positions as ``row * K + col``."""
        return self.pixels[:, 0] * K + self.pixels[:, 1]

    def columns(self, K: int, channels: int) -> np.ndarray:
        """Positions of the layout coordinates inside a flattened (K, K, C) patch."""
        base = self.flat_index(K)[:, None] * channels
        return (base + np.arange(channels)[None, :]).reshape(-1)


def layout_anchors(K: int) -> list[tuple[int, int]]:
    h = (K - 1) // 2
    return [(0, h), (h, K - 1), (K - 1, h), (h, 0),
            (0, 0), (0, K - 1), (K - 1, 0), (K - 1, K - 1)]


def build_subset_layouts(K: int, c: float) -> list[SubsetLayout]:
    """The eight layouts: 4 edge midpoints (N, E, S, W), then 4 corners (NW, NE, SW, SE)."""
    if not 0 < c <= 1:
        raise ConfigError(f"coverage c must lie in (0, 1], got {c}")
    if K < 3 or K % 2 == 0:
        raise ConfigError(f"patch size K must be odd and >= 3, got {K}")
    m = layout_size(K, c)
    if m < 1:
        raise ConfigError(f"coverage {c} leaves no pixel in a {K}x{K} patch")
    rows, cols = np.divmod(np.arange(K * K), K)
    out = []
    for i, (ar, ac) in enumerate(layout_anchors(K)):
        d2 = (rows - ar) ** 2 + (cols - ac) ** 2
        # stable sort on distance keeps row-major order among ties
        pick = np.sort(np.argsort(d2, kind="stable")[:m])
        pixels = np.stack([rows[pick], cols[pick]], axis=1)
        pixels.setflags(write=False)
        out.append(SubsetLayout(i, (ar, ac), ANCHOR_NAMES[i], pixels))
    return out


# --- dictionary ---------------------------------------------------------------

def collect_dictionary(image: RasterImage, mask: MaskImage, K: int) -> np.ndarray:
    """Encoded keys of every fully KNOWN K x K window, row-major.

    Raises :class:`EmptyDictionaryError` if there is none.
    """
    check_patch_size(K)
    check_pair(image, mask)
    H, W = mask.height, mask.width
    if H < K or W < K:
        raise EmptyDictionaryError(f"image {W}x{H} is smaller than one {K}x{K} patch")
    unknown = (~mask.known).astype(np.int64)
    s = np.zeros((H + 1, W + 1), np.int64)
    s[1:, 1:] = unknown.cumsum(0).cumsum(1)
    holes = s[K:, K:] - s[:-K, K:] - s[K:, :-K] + s[:-K, :-K]
    ys, xs = np.nonzero(holes == 0)
    if ys.size == 0:
        raise EmptyDictionaryError("no fully known patch in the image")
    return ys.astype(np.int64) * W + xs


def decode_keys(keys: np.ndarray, width: int) -> tuple[np.ndarray, np.ndarray]:
    """Rows (y) and columns (x) of encoded keys."""
    keys = np.asarray(keys, dtype=np.int64)
    return keys // width, keys % width


def gather_patches(image: RasterImage, keys: np.ndarray, K: int,
                   columns: np.ndarray | None = None) -> np.ndarray:
    """Flattened ``(n, K*K*C)`` float64 patch vectors, optionally only ``columns``."""
    y, x = decode_keys(keys, image.width)
    windows = np.lib.stride_tricks.sliding_window_view(image.data, (K, K), axis=(0, 1))
    # windows: (H-K+1, W-K+1, C, K, K) -> reorder to (..., K, K, C)
    block = windows[y, x].transpose(0, 2, 3, 1).reshape(len(keys), -1)
    if columns is not None:
        block = block[:, columns]
    return block.astype(np.float64)


# --- PCA ----------------------------------------------------------------------

@dataclass
class PcaModel:
    mean: np.ndarray  # (p,)
    components: np.ndarray  # (D, p), rows orthonormal
    eigenvalues: np.ndarray  # (D,), non-increasing

    @property
    def D(self) -> int:
        return self.components.shape[0]

    def project(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) @ self.components.T

    def project_known(self, x: np.ndarray, known: np.ndarray) -> np.ndarray:
        """Principal coordinates fitted to the ``known`` coordinates of ``x`` alone.

        Least squares over the known rows of the component matrix, minimum
        norm when underdetermined.  Equals :meth:`project` when everything is
        known and the origin when nothing is.
        """
        x = np.asarray(x, dtype=np.float64)
        known = np.asarray(known, dtype=bool)
        if known.all():
            return self.project(x)
        if not known.any():
            return np.zeros(self.D)
        A = self.components[:, known].T
        return np.linalg.lstsq(A, x[known] - self.mean[known], rcond=None)[0]


def _fix_signs(vecs: np.ndarray) -> np.ndarray:
    # make the largest-magnitude entry of every component positive
    idx = np.argmax(np.abs(vecs), axis=1)
    signs = np.sign(vecs[np.arange(vecs.shape[0]), idx])
    signs[signs == 0] = 1
    return vecs * signs[:, None]


def pca_from_moments(n: int, mean: np.ndarray, scatter: np.ndarray, D: int) -> PcaModel:
    """PCA from the sample mean and centred scatter matrix ``sum (x-m)(x-m)^T``."""
    p = mean.shape[0]
    if n < D:
        raise ConfigError(f"PCA needs at least D={D} samples, got {n}")
    if D > p:
        raise ConfigError(f"D={D} exceeds the sample dimension {p}")
    cov = scatter / max(n - 1, 1)
    cov = (cov + cov.T) / 2
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(-vals, kind="stable")[:D]
    vals = np.clip(vals[order], 0.0, None)
    comps = _fix_signs(vecs[:, order].T.copy())
    return PcaModel(mean.copy(), np.ascontiguousarray(comps), vals)


def fit_pca(samples, D: int) -> PcaModel:
    """Top-``D`` principal components of the rows of ``samples``."""
    X = np.asarray(samples, dtype=np.float64)
    if X.ndim != 2:
        raise ConfigError("samples must be a 2-D array")
    if X.shape[0] < D:
        raise ConfigError(f"PCA needs at least D={D} samples, got {X.shape[0]}")
    mean = X.mean(axis=0)
    Xc = X - mean
    return pca_from_moments(X.shape[0], mean, Xc.T @ Xc, D)


# --- quantizer ----------------------------------------------------------------

@dataclass
class Quantizer:
    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def fit(cls, projections: np.ndarray, shared: bool = True) -> "Quantizer":
        """Range of the projections; ``shared`` uses one range for every dimension.

        A shared range keeps byte distances proportional to distances in
        principal space.  Per-dimension ranges stretch the weak components
        to the same 256 levels as the strong ones.
        """
        projections = np.asarray(projections, dtype=np.float64)
        lo = projections.min(axis=0)
        hi = projections.max(axis=0)
        if shared and lo.size:
            lo = np.full_like(lo, lo.min())
            hi = np.full_like(hi, hi.max())
        return cls(lo, hi)

    def quantize(self, y: np.ndarray) -> np.ndarray:
        """Clamp to [lo, hi], map to [0, 255], round half away from zero."""
        y = np.asarray(y, dtype=np.float64)
        span = self.hi - self.lo
        flat = span <= 0
        safe = np.where(flat, 1.0, span)
        t = (np.clip(y, self.lo, self.hi) - self.lo) / safe * 255.0
        out = np.floor(t + 0.5)
        out = np.where(flat, 0.0, out)
        return np.clip(out, 0, 255).astype(np.uint8)


def project_quantize(x, model: PcaModel, q: Quantizer) -> np.ndarray:
    """Bytes of the quantized principal coordinates of ``x``."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.mean.shape[0]:
        raise ValueError(f"input has {x.shape[-1]} coordinates, model expects {model.mean.shape[0]}")
    return q.quantize(model.project(x))


# --- index building -----------------------------------------------------------

@dataclass
class PatchIndex:
    """One layout's PCA, quantizer and z-curve index."""

    layout: SubsetLayout
    model: PcaModel
    quantizer: Quantizer
    index: ZCurveIndex
    build_seconds: float = 0.0
    sort_seconds: float = 0.0

    def query(self, x) -> np.ndarray:
        return project_quantize(x, self.model, self.quantizer)


@dataclass
class PatchMoments:
    """Mean and centred scatter of full patch vectors, shared by all layouts."""

    n: int
    mean: np.ndarray
    scatter: np.ndarray = field(repr=False)

    def restrict(self, columns: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return self.mean[columns], self.scatter[np.ix_(columns, columns)]


def patch_moments(image: RasterImage, keys: np.ndarray, K: int,
                  columns: np.ndarray | None = None) -> PatchMoments:
    """Two chunked passes: mean first, then the centred scatter matrix."""
    n = len(keys)
    total = None
    for s in range(0, n, _CHUNK):
        X = gather_patches(image, keys[s:s + _CHUNK], K, columns)
        part = X.sum(axis=0)
        total = part if total is None else total + part
    mean = total / n
    scatter = np.zeros((mean.shape[0], mean.shape[0]))
    for s in range(0, n, _CHUNK):
        X = gather_patches(image, keys[s:s + _CHUNK], K, columns) - mean
        scatter += X.T @ X
    return PatchMoments(n, mean, scatter)


def project_dictionary(image: RasterImage, keys: np.ndarray, K: int, columns: np.ndarray,
                       model: PcaModel) -> np.ndarray:
    out = np.empty((len(keys), model.D))
    for s in range(0, len(keys), _CHUNK):
        out[s:s + _CHUNK] = model.project(gather_patches(image, keys[s:s + _CHUNK], K, columns))
    return out


def build_index(image: RasterImage, mask: MaskImage, layout: SubsetLayout, cfg: IndexConfig,
                keys: np.ndarray | None = None, moments: PatchMoments | None = None) -> PatchIndex:
    """PCA, quantizer and sorted z-curve index for one layout.

    ``keys`` and ``moments`` may be passed in to share the dictionary scan
    across layouts; ``moments`` must then cover full patch vectors.
    """
    cfg.validate(image.channels)
    check_pair(image, mask)
    t0 = time.perf_counter()
    if keys is None:
        keys = collect_dictionary(image, mask, cfg.K)
    columns = layout.columns(cfg.K, image.channels)
    if moments is None:
        moments = patch_moments(image, keys, cfg.K)
    mean, scatter = moments.restrict(columns)
    model = pca_from_moments(moments.n, mean, scatter, cfg.D)
    proj = project_dictionary(image, keys, cfg.K, columns, model)
    quant = Quantizer.fit(proj, shared=cfg.scale == "shared")
    coords = quant.quantize(proj)
    t1 = time.perf_counter()
    index = ZCurveIndex.from_points(coords, keys, layout.id)
    t2 = time.perf_counter()
    return PatchIndex(layout, model, quant, index, t1 - t0, t2 - t1)


# --- persistence --------------------------------------------------------------

MAGIC = b"ZIDX1"
_HEADER = struct.Struct("<IdIIQI")


def _entry_dtype(D: int) -> np.dtype:
    return np.dtype([("coords", np.uint8, (D,)), ("x", "<u4"), ("y", "<u4")])


def write_index(stream, pidx: PatchIndex, K: int, c: float, channels: int, width: int) -> None:
    """Append one index record in the ZIDX1 layout."""
    D = pidx.model.D
    n = len(pidx.index)
    stream.write(MAGIC)
    stream.write(_HEADER.pack(K, float(c), D, pidx.layout.id, n, channels))
    for arr in (pidx.model.mean, pidx.model.components, pidx.model.eigenvalues,
                pidx.quantizer.lo, pidx.quantizer.hi):
        stream.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    entries = np.empty(n, _entry_dtype(D))
    entries["coords"] = pidx.index.coords
    y, x = decode_keys(pidx.index.keys, width)
    entries["x"] = x
    entries["y"] = y
    stream.write(entries.tobytes())


def _read_exact(stream, n: int) -> bytes:
    data = stream.read(n)
    if len(data) != n:
        raise ValueError("truncated index file")
    return data


def read_index(stream, width: int) -> tuple[PatchIndex, dict] | None:
    """Read one record; None at end of stream."""
    magic = stream.read(len(MAGIC))
    if not magic:
        return None
    if magic != MAGIC:
        raise ValueError("not a ZIDX1 index file")
    K, c, D, layout_id, n, channels = _HEADER.unpack(_read_exact(stream, _HEADER.size))
    if not 0 <= layout_id < 8:
        raise ValueError(f"bad layout id {layout_id}")
    p = layout_size(K, c) * channels

    def floats(count, shape):
        return np.frombuffer(_read_exact(stream, 8 * count), dtype="<f8").astype(np.float64).reshape(shape)

    mean = floats(p, (p,))
    comps = floats(D * p, (D, p))
    eig = floats(D, (D,))
    lo = floats(D, (D,))
    hi = floats(D, (D,))
    dt = _entry_dtype(D)
    entries = np.frombuffer(_read_exact(stream, dt.itemsize * n), dtype=dt)
    keys = entries["y"].astype(np.int64) * width + entries["x"].astype(np.int64)
    layout = build_subset_layouts(K, c)[layout_id]
    # re-sort rather than trust the stored order
    index = ZCurveIndex.from_points(entries["coords"], keys, layout_id)
    meta = {"K": K, "c": c, "D": D, "channels": channels,
            "x": entries["x"].astype(np.int64), "y": entries["y"].astype(np.int64)}
    return PatchIndex(layout, PcaModel(mean, comps, eig), Quantizer(lo, hi), index), meta


def save_indices(path, indices: list[PatchIndex], K: int, c: float, channels: int, width: int) -> None:
    buf = io.BytesIO()
    for pidx in indices:
        write_index(buf, pidx, K, c, channels, width)
    Path(path).write_bytes(buf.getvalue())


def load_indices(path, width: int) -> list[tuple[PatchIndex, dict]]:
    out = []
    with open(path, "rb") as f:
        while True:
            rec = read_index(f, width)
            if rec is None:
                break
            out.append(rec)
    if not out:
        raise ValueError(f"{path} holds no index")
    return out
