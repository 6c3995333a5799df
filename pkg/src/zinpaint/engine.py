"""Exemplar-based fill loop with the multi-index filter-and-refine search.

Each iteration picks the fill-front pixel of highest priority, takes the
K x K window around it (shifted inwards at the image border), chooses the
layout index covering most of the window's known pixels, looks up ``k``
candidates in that index and keeps the candidate with the lowest masked cost
in image space.  Its pixels fill the unknown part of the window.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import _fill
from .dictionary import (
    IndexConfig,
    PatchIndex,
    build_index,
    build_subset_layouts,
    collect_dictionary,
    patch_moments,
    project_quantize,
)
from .image_core import (
    MaskImage,
    PatchKey,
    PatchView,
    RasterImage,
    check_pair,
    clamp_center,
)
from .zcurve import Norm, knn_search

EPS = _fill.EPS


@dataclass
class IterationRecord:
    iteration: int
    target: tuple[int, int]  # (row, col) of the chosen fill-front pixel
    layout_id: int  # -1 on the brute-force path
    # errors are norms of the masked difference: sqrt of the squared cost
    # under L2, the cost itself under L1
    z_error: float | None
    bf_error: float | None
    candidates: int
    elapsed: float
    source: PatchKey | None = None
    filled: int = 0


@dataclass
class MultiIndex:
    """Eight layout indices over one shared dictionary."""

    indices: list[PatchIndex]
    keys: np.ndarray  # dictionary keys, ascending
    K: int
    c: float
    D: int
    moment_seconds: float = 0.0

    @classmethod
    def build(cls, image: RasterImage, mask: MaskImage, cfg: IndexConfig) -> "MultiIndex":
        cfg.validate(image.channels)
        keys = collect_dictionary(image, mask, cfg.K)
        t0 = time.perf_counter()
        # one scatter matrix over full patches serves every layout
        moments = patch_moments(image, keys, cfg.K)
        t1 = time.perf_counter()
        layouts = build_subset_layouts(cfg.K, cfg.c)
        indices = [build_index(image, mask, lay, cfg, keys=keys, moments=moments) for lay in layouts]
        return cls(indices, keys, cfg.K, cfg.c, cfg.D, t1 - t0)

    @classmethod
    def from_loaded(cls, loaded, image: RasterImage, mask: MaskImage) -> "MultiIndex":
        """Assemble indices read by :func:`load_indices` for use on ``image``.

        All records must share K, c, D and the dictionary, cover distinct
        layouts, and every stored patch must be fully known in ``mask``.
        """
        check_pair(image, mask)
        if not loaded:
            raise ValueError("no index records")
        meta0 = loaded[0][1]
        K, c, D = meta0["K"], meta0["c"], meta0["D"]
        keys = np.sort(loaded[0][0].index.keys)
        seen = set()
        for pidx, meta in loaded:
            if (meta["K"], meta["c"], meta["D"]) != (K, c, D):
                raise ValueError("index records disagree on K, c or D")
            if meta["channels"] != image.channels:
                raise ValueError(f"index built for {meta['channels']} channels, image has {image.channels}")
            if pidx.layout.id in seen:
                raise ValueError(f"layout {pidx.layout.id} stored twice")
            seen.add(pidx.layout.id)
            if not np.array_equal(np.sort(pidx.index.keys), keys):
                raise ValueError("index records cover different dictionaries")
        if keys.size and (keys.max() >= image.width * image.height
                          or meta0["x"].max() > image.width - K or meta0["y"].max() > image.height - K):
            raise ValueError("stored patches fall outside the image")
        usable = collect_dictionary(image, mask, K) if keys.size else keys
        if not np.isin(keys, usable).all():
            raise ValueError("stored patches overlap unknown pixels of the mask")
        if len(seen) != 8:
            raise ValueError(f"expected 8 layout indices, found {len(seen)}")
        indices = sorted((p for p, _ in loaded), key=lambda p: p.layout.id)
        return cls(indices, keys, K, c, D)

    @property
    def layouts(self):
        return [p.layout for p in self.indices]

    def build_seconds(self) -> list[float]:
        return [p.build_seconds for p in self.indices]

    def sort_seconds(self) -> float:
        return float(sum(p.sort_seconds for p in self.indices))


# --- per-target operations ------------------------------------------------------

def masked_cost(target: PatchView, candidate: PatchView, norm=Norm.L2) -> int:
    """Sum over the target's known pixels (all channels) of squared or absolute differences."""
    t = target.values.astype(np.int64)
    s = candidate.values.astype(np.int64)
    if t.shape != s.shape:
        raise ValueError("patches differ in size or channels")
    diff = (t - s)[target.known]
    if Norm.parse(norm).is_l1:
        return int(np.abs(diff).sum())
    return int((diff * diff).sum())


def _state_arrays(image: RasterImage, mask: MaskImage, confidence: np.ndarray | None, K: int):
    H, W = mask.height, mask.width
    img = image.data
    known = mask.known
    conf = confidence if confidence is not None else known.astype(np.float64)
    gray = np.zeros((H, W))
    gx = np.zeros((H, W))
    gy = np.zeros((H, W))
    gm = np.zeros((H, W))
    front = np.zeros((H, W), np.bool_)
    prio = np.full((H, W), -1.0)
    rowmax = np.full(H, -1.0)
    rowarg = np.full(H, -1, np.int64)
    _fill.init_state(img, known, conf, gray, gx, gy, gm, front, prio, rowmax, rowarg, K)
    return img, known, conf, gray, gx, gy, gm, front, prio, rowmax, rowarg


def compute_priorities(image: RasterImage, mask: MaskImage, K: int,
                       confidence: np.ndarray | None = None) -> np.ndarray:
    """Priority of every fill-front pixel (-1 elsewhere)."""
    check_pair(image, mask)
    return _state_arrays(image, mask, confidence, K)[8]


def compute_priority(center, image: RasterImage, mask: MaskImage, confidence: np.ndarray | None,
                     K: int) -> float:
    """Confidence term times data term at a fill-front pixel ``center`` (row, col)."""
    check_pair(image, mask)
    st = _state_arrays(image, mask, confidence, K)
    _, known, conf, _, gx, gy, gm = st[:7]
    return float(_fill.priority_at(known, conf, gx, gy, gm, int(center[0]), int(center[1]), K))


def select_target(fillfront: np.ndarray, priorities) -> tuple[int, int]:
    """Fill-front pixel of highest priority, ties to the smallest (row, col).

    ``priorities`` is either a full (H, W) map or one value per front pixel.
    """
    pts = np.asarray(fillfront, dtype=np.int64).reshape(-1, 2)
    if len(pts) == 0:
        raise ValueError("empty fill front")
    p = np.asarray(priorities, dtype=np.float64)
    vals = p[pts[:, 0], pts[:, 1]] if p.ndim == 2 else p
    order = np.lexsort((pts[:, 1], pts[:, 0], -vals))
    return int(pts[order[0], 0]), int(pts[order[0], 1])


def layout_overlaps(known_window: np.ndarray, layouts) -> np.ndarray:
    K = known_window.shape[0]
    flat = known_window.reshape(-1)
    return np.array([int(flat[lay.flat_index(K)].sum()) for lay in layouts])


def select_index(known_window: np.ndarray, layouts) -> int:
    """Layout covering the most known pixels; ties to the smaller id."""
    known_window = np.asarray(known_window, dtype=bool)
    if not known_window.any():
        raise ValueError("target has no known pixel")
    return int(np.argmax(layout_overlaps(known_window, layouts)))


def make_query(target: PatchView, pidx: PatchIndex, mode: str = "fit") -> np.ndarray:
    """Quantized principal coordinates of the target's layout pixels.

    ``mode="fit"`` fits the coordinates to the known layout pixels only;
    ``mode="mean"`` replaces unknown layout pixels by the PCA mean and
    projects the full vector.
    """
    K = target.K
    C = target.values.shape[2]
    cols = pidx.layout.columns(K, C)
    x = target.values.reshape(-1).astype(np.float64)[cols]
    known = np.repeat(target.known.reshape(-1)[pidx.layout.flat_index(K)], C)
    if mode == "fit":
        y = pidx.model.project_known(x, known)
    elif mode == "mean":
        y = pidx.model.project(np.where(known, x, pidx.model.mean))
    else:
        raise ValueError(f"unknown query mode {mode!r}")
    return pidx.quantizer.quantize(y)


def _as_norm(cost, l1: bool) -> float:
    return float(cost) if l1 else math.sqrt(cost)


def _flat32(img: np.ndarray) -> np.ndarray:
    return img.reshape(-1).astype(np.int32)


def _target_view(img, known, tr, tc, K) -> PatchView:
    kw = known[tr:tr + K, tc:tc + K].copy()
    vals = img[tr:tr + K, tc:tc + K].copy()
    vals[~kw] = 0
    return PatchView(vals, kw)


def query_best_patch(image: RasterImage, mask: MaskImage, center, multi: MultiIndex,
                     cfg: IndexConfig, workers: int = 1):
    """Filter with the knn index, refine in image space.

    Returns ``(key, cost, layout_id, candidates)`` with ``key`` encoded.
    """
    H, W = mask.height, mask.width
    K = cfg.K
    r, c = clamp_center(center, K, H, W)
    tr, tc = r - (K - 1) // 2, c - (K - 1) // 2
    view = _target_view(image.data, mask.known, tr, tc, K)
    return _query(image.data, _flat32(image.data), mask.known, view, tr, tc, multi, cfg, workers)


def _query(img, flat, known, view, tr, tc, multi, cfg, workers):
    lid = select_index(view.known, multi.layouts)
    pidx = multi.indices[lid]
    q = make_query(view, pidx, cfg.query)
    knn = knn_search(pidx.index, q, cfg.k, cfg.mu, cfg.norm, workers=workers, nu=cfg.nu)
    cand = knn.keys[:len(knn)].copy()
    tv, tw = _fill.target_rows(img, known, tr, tc, cfg.K)
    key, cost = _fill.best_of(flat, img.shape[1], img.shape[2], cand, tv, tw, cfg.norm.is_l1)
    return int(key), int(cost), pidx.layout.id, len(cand)


def brute_force_best(image: RasterImage, mask: MaskImage, center, keys: np.ndarray, K: int,
                     norm=Norm.L2) -> tuple[int, int]:
    """Exact best dictionary patch for the window at ``center``: ``(key, cost)``."""
    H, W = mask.height, mask.width
    r, c = clamp_center(center, K, H, W)
    tr, tc = r - (K - 1) // 2, c - (K - 1) // 2
    tv, tw = _fill.target_rows(image.data, mask.known, tr, tc, K)
    key, cost = _fill.best_of(_flat32(image.data), W, image.channels, np.asarray(keys, np.int64), tv, tw,
                              Norm.parse(norm).is_l1)
    return int(key), int(cost)


def paste(image: RasterImage, mask: MaskImage, confidence: np.ndarray, center, source: PatchKey,
          K: int) -> int:
    """Fill the unknown pixels of the window at ``center`` from ``source``; returns the count.

    Filled pixels get the window's confidence term from before the paste.
    """
    H, W = mask.height, mask.width
    r, c = clamp_center(center, K, H, W)
    tr, tc = r - (K - 1) // 2, c - (K - 1) // 2
    if not mask.known[source.y:source.y + K, source.x:source.x + K].all():
        raise ValueError("source patch is not fully known")
    value = _fill.confidence_term(mask.known, confidence, tr, tc, K)
    gray = np.zeros((H, W))
    return int(_fill.paste(image.data, _flat32(image.data), mask.known, confidence, gray, tr, tc,
                           source.y, source.x, K, value))


# --- the loop ---------------------------------------------------------------------

@dataclass
class InpaintResult:
    image: RasterImage
    records: list[IterationRecord]
    dictionary_size: int
    timings: dict = field(default_factory=dict)
    multi_index: MultiIndex | None = None

    @property
    def chosen_keys(self) -> list[tuple[int, int]]:
        """Source (row, col) of every iteration."""
        return [(r.source.y, r.source.x) for r in self.records]


def inpaint(image: RasterImage, mask: MaskImage, cfg: IndexConfig | None = None, *,
            workers: int = 1, oracle: bool = False, brute_force: bool = False,
            multi_index: MultiIndex | None = None, progress=None) -> InpaintResult:
    """Fill every unknown pixel of ``image``.

    ``brute_force`` replaces the index search by the exhaustive scan (no index
    is built).  ``oracle`` additionally runs the exhaustive scan for every
    iteration and records its cost next to the indexed one.  ``progress``, if
    given, is called after every paste with the new record and the live
    confidence map (read it, do not modify it).  Inputs are not modified.
    """
    cfg = (cfg or IndexConfig()).validate(image.channels)
    check_pair(image, mask)
    t_start = time.perf_counter()
    keys = collect_dictionary(image, mask, cfg.K)
    timings = {}
    multi = None
    if not brute_force:
        if multi_index is None:
            multi = MultiIndex.build(image, mask, cfg)
        else:
            multi = multi_index
            if multi.K != cfg.K or multi.D != cfg.D:
                raise ValueError("index does not match the configuration")
            keys = multi.keys
        timings["index_seconds"] = time.perf_counter() - t_start
        timings["per_index_seconds"] = multi.build_seconds()
        timings["sort_seconds"] = multi.sort_seconds()

    work = image.copy()
    state = MaskImage(mask.known.copy())
    K = cfg.K
    h = (K - 1) // 2
    H, W = state.height, state.width
    img, known, conf, gray, gx, gy, gm, front, prio, rowmax, rowarg = _state_arrays(work, state, None, K)
    l1 = cfg.norm.is_l1
    C = work.channels
    flat = _flat32(img)
    records = []
    remaining = state.unknown_count()
    t_loop = time.perf_counter()
    it = 0
    while remaining > 0:
        t0 = time.perf_counter()
        r, c = _fill.best_target(rowmax, rowarg)
        if r < 0:
            raise RuntimeError("unknown pixels remain but the fill front is empty")
        r, c = int(r), int(c)
        cr, cc = clamp_center((r, c), K, H, W)
        tr, tc = cr - h, cc - h
        bf_cost = None
        if brute_force:
            tv, tw = _fill.target_rows(img, known, tr, tc, K)
            key, cost = _fill.best_of(flat, W, C, keys, tv, tw, l1)
            key, cost, lid, ncand = int(key), int(cost), -1, len(keys)
            bf_cost = cost
        else:
            view = _target_view(img, known, tr, tc, K)
            key, cost, lid, ncand = _query(img, flat, known, view, tr, tc, multi, cfg, workers)
            if oracle:
                tv, tw = _fill.target_rows(img, known, tr, tc, K)
                bf_cost = int(_fill.best_of(flat, W, C, keys, tv, tw, l1)[1])
        sy, sx = divmod(key, W)
        value = _fill.confidence_term(known, conf, tr, tc, K)
        filled = int(_fill.paste(img, flat, known, conf, gray, tr, tc, sy, sx, K, value))
        _fill.after_paste(img, known, conf, gray, gx, gy, gm, front, prio, rowmax, rowarg, tr, tc, K)
        remaining -= filled
        rec = IterationRecord(it, (r, c), lid, None if brute_force else _as_norm(cost, l1),
                              None if bf_cost is None else _as_norm(bf_cost, l1), ncand,
                              time.perf_counter() - t0, PatchKey(sx, sy), filled)
        records.append(rec)
        it += 1
        if progress is not None:
            progress(rec, conf)
    timings["inpaint_seconds"] = time.perf_counter() - t_loop
    timings["total_seconds"] = time.perf_counter() - t_start
    return InpaintResult(work, records, len(keys), timings, multi)


# --- quality metric ---------------------------------------------------------------

@dataclass
class AccelerationError:
    mean_percent: float | None  # None when no iteration contributes
    contributing: int
    zero_bf_excluded: int  # bf cost 0 but indexed cost > 0


def acceleration_error(records) -> AccelerationError:
    """Mean of ``z / bf - 1`` over iterations, in percent.

    ``z`` and ``bf`` are the difference norms stored in the records, so
    under L2 the ratio is taken between square roots of the costs.

    Iterations with a zero oracle cost count as 0 when the indexed cost is
    also zero and are otherwise left out (and counted).
    """
    values = []
    excluded = 0
    for rec in records:
        if rec.bf_error is None or rec.z_error is None:
            continue
        if rec.bf_error > 0:
            values.append(rec.z_error / rec.bf_error - 1.0)
        elif rec.z_error == 0:
            values.append(0.0)
        else:
            excluded += 1
    if not values:
        return AccelerationError(None, 0, excluded)
    return AccelerationError(100.0 * math.fsum(values) / len(values), len(values), excluded)
