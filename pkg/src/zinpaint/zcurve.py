"""Z-curve index over byte vectors and exact knn search on it.

Points are ``D`` bytes.  Their z-address interleaves the bits most
significant first, dimension 0 first within each bit level.  The index keeps
the points sorted by z-address (ties by key) and answers knn queries by
splitting the query region at litmax/bigmin, visiting the nearer half first
and pruning the farther half against the current k-th distance.

L2 distances are squared integers throughout; L1 distances are plain
integer sums.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numba
import numpy as np
from numba import njit

from . import _zkernels as _k

KNOW_NONE = _k.KNOW_NONE
KNOW_LOWER = _k.KNOW_LOWER
KNOW_UPPER = _k.KNOW_UPPER


class Norm(enum.Enum):
    L2 = "l2"
    L1 = "l1"

    @classmethod
    def parse(cls, value) -> "Norm":
        if isinstance(value, Norm):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown norm {value!r}, expected 'l2' or 'l1'") from None

    @property
    def is_l1(self) -> bool:
        return self is Norm.L1


# --- comparators --------------------------------------------------------------

def less_most_significant_bit(a, b):
    """True iff the highest set bit of ``a`` is below the highest set bit of ``b``.

    Works on Python ints and elementwise on integer arrays.
    """
    if isinstance(a, np.ndarray) or isinstance(b, np.ndarray):
        a = np.asarray(a, dtype=np.int64)
        b = np.asarray(b, dtype=np.int64)
        return (a < b) & (a < (a ^ b))
    a = int(a)
    b = int(b)
    return a < b and a < (a ^ b)


def morton_less(a, b) -> bool:
    """True iff the z-address of byte vector ``a`` is smaller than that of ``b``."""
    a = np.asarray(a, dtype=np.uint8)
    b = np.asarray(b, dtype=np.uint8)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("morton_less expects two byte vectors of equal length")
    return bool(_k.morton_less_vec(a, b))


@njit(cache=True)
def _morton_less_rows(a, b, out):
    for i in range(a.shape[0]):
        out[i] = _k.morton_less_vec(a[i], b[i])


def morton_less_many(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise :func:`morton_less` for two ``(n, D)`` byte arrays."""
    a = np.ascontiguousarray(a, dtype=np.uint8)
    b = np.ascontiguousarray(b, dtype=np.uint8)
    if a.shape != b.shape or a.ndim != 2:
        raise ValueError("expected two (n, D) arrays of equal shape")
    out = np.empty(a.shape[0], dtype=np.bool_)
    _morton_less_rows(a, b, out)
    return out


def z_address(points: np.ndarray) -> np.ndarray:
    """Packed z-addresses of ``(n, D)`` byte points as ``(n, W)`` big-endian words.

    Comparing rows lexicographically (word 0 first) is the z-curve order.
    """
    points = np.ascontiguousarray(points, dtype=np.uint8)
    if points.ndim != 2:
        raise ValueError("points must be a (n, D) array")
    spread = _k.spread_table(points.shape[1])
    words = np.zeros((points.shape[0], spread.shape[2]), dtype=np.uint64)
    for d in range(points.shape[1]):
        words |= spread[d][points[:, d]]
    return words


def z_order(points: np.ndarray, keys: np.ndarray) -> np.ndarray:
    """Permutation sorting ``points`` along the z-curve, ties by ``keys``."""
    words = z_address(points)
    columns = [np.asarray(keys)] + [words[:, w] for w in range(words.shape[1] - 1, -1, -1)]
    return np.lexsort(columns)


# --- regions ------------------------------------------------------------------

@dataclass
class HyperCube:
    """Axis-aligned box of byte coordinates, both corners inclusive."""

    first: np.ndarray
    last: np.ndarray

    def __post_init__(self):
        self.first = np.array(self.first, dtype=np.int64).reshape(-1)
        self.last = np.array(self.last, dtype=np.int64).reshape(-1)
        if self.first.shape != self.last.shape:
            raise ValueError("corners must have the same length")

    @classmethod
    def full(cls, D: int) -> "HyperCube":
        return cls(np.zeros(D, np.int64), np.full(D, 255, np.int64))

    @property
    def D(self) -> int:
        return self.first.shape[0]

    def is_empty(self) -> bool:
        return bool(np.any(self.first > self.last))

    def contains(self, points: np.ndarray) -> np.ndarray:
        p = np.asarray(points, dtype=np.int64)
        return np.all((p >= self.first) & (p <= self.last), axis=-1)

    def split(self) -> tuple["HyperCube", "HyperCube"]:
        """Left (up to litmax) and right (from bigmin) halves."""
        dim, pos = find_split(self)
        left = self.copy()
        right = self.copy()
        left.last[dim] = pos
        right.first[dim] = pos + 1
        return left, right

    def copy(self) -> "HyperCube":
        return HyperCube(self.first.copy(), self.last.copy())


@dataclass(frozen=True)
class Interval:
    """Inclusive range ``first..last`` of positions in the sorted index."""

    first: int
    last: int

    def __len__(self) -> int:
        return max(0, self.last - self.first + 1)

    @property
    def empty(self) -> bool:
        return self.last < self.first


def find_split(cube: HyperCube) -> tuple[int, int]:
    """Dimension and litmax coordinate where the corners first differ.

    The left half keeps ``last[dim] = pos``, the right half starts at
    ``first[dim] = pos + 1``.
    """
    for d in range(cube.D):
        if not (0 <= cube.first[d] <= cube.last[d] <= 255):
            raise ValueError("cube corners must be bytes with first <= last")
    dim, pos = _k.find_split(cube.first, cube.last)
    if dim < 0:
        raise ValueError("cannot split a single-point cube")
    return int(dim), int(pos)


def region_distance(query, cube: HyperCube, norm=Norm.L2) -> int:
    """Distance from ``query`` to its clamp onto ``cube`` (squared for L2)."""
    q = np.asarray(query, dtype=np.uint8)
    return int(_k.box_distance(q, cube.first, cube.last, Norm.parse(norm).is_l1))


# --- knn list -----------------------------------------------------------------

class KnnList:
    """Best-k (distance, key) pairs; the largest pair is evicted on overflow.

    Pairs order by distance, then key, so eviction and ties are deterministic.
    """

    def __init__(self, k: int):
        if k < 1:
            raise ValueError("k must be at least 1")
        self.dist = np.empty(k, np.int64)
        self.keys = np.empty(k, np.int64)
        self.size = np.zeros(1, np.int64)

    @classmethod
    def _from_heap(cls, hd, hk, n):
        out = cls.__new__(cls)
        out.dist = hd
        out.keys = hk
        out.size = np.array([n], np.int64)
        return out

    @property
    def k(self) -> int:
        return self.dist.shape[0]

    def __len__(self) -> int:
        return int(self.size[0])

    def push(self, dist: int, key: int) -> bool:
        """Insert a pair; False if it did not make the list."""
        return bool(_k.heap_push(self.dist, self.keys, self.size, np.int64(dist), np.int64(key)))

    def kth_distance(self) -> float:
        """Largest kept distance once full, infinity before."""
        if len(self) < self.k:
            return float("inf")
        return float(self.dist[0])

    def sorted(self) -> tuple[np.ndarray, np.ndarray]:
        """Distances and keys ascending by (distance, key)."""
        return _k.sorted_heap(self.dist, self.keys, len(self))

    def items(self) -> list[tuple[int, int]]:
        d, key = self.sorted()
        return list(zip(d.tolist(), key.tolist()))


# --- the index ----------------------------------------------------------------

@dataclass
class ZCurveIndex:
    """Byte points sorted along the z-curve, with their integer keys.

    Build with :meth:`from_points`; instances are read-only afterwards and
    may be queried from several threads at once.
    """

    coords: np.ndarray
    keys: np.ndarray
    layout_id: int = 0
    zwords: np.ndarray = field(default=None, repr=False)
    coords_t: np.ndarray = field(default=None, repr=False)
    spread: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.coords = np.ascontiguousarray(self.coords, dtype=np.uint8)
        self.keys = np.ascontiguousarray(self.keys, dtype=np.int64)
        if self.coords.ndim != 2 or self.coords.shape[0] != self.keys.shape[0]:
            raise ValueError("coords must be (n, D) with one key per row")
        if self.coords.shape[1] < 1:
            raise ValueError("D must be at least 1")
        if self.spread is None:
            self.spread = _k.spread_table(self.D)
        if self.zwords is None:
            self.zwords = z_address(self.coords)
        if self.coords_t is None:
            self.coords_t = np.ascontiguousarray(self.coords.T)
        for a in (self.coords, self.keys, self.zwords, self.coords_t):
            a.setflags(write=False)

    @classmethod
    def from_points(cls, coords, keys, layout_id: int = 0) -> "ZCurveIndex":
        """Sort ``coords`` along the z-curve (ties by key) and seal the index."""
        coords = np.ascontiguousarray(coords, dtype=np.uint8)
        keys = np.asarray(keys, dtype=np.int64)
        if len(np.unique(keys)) != len(keys):
            raise ValueError("keys must be unique")
        order = z_order(coords, keys)
        words = z_address(coords)[order]
        return cls(coords[order], keys[order], layout_id, zwords=np.ascontiguousarray(words))

    def __len__(self) -> int:
        return self.coords.shape[0]

    @property
    def D(self) -> int:
        return self.coords.shape[1]

    def full_interval(self) -> Interval:
        return Interval(0, len(self) - 1)

    def knn(self, query, k: int, mu: int = 256, norm=Norm.L2, workers: int = 1,
            nu: int = 2048) -> tuple[np.ndarray, np.ndarray]:
        """k nearest entries as ``(distances, keys)`` sorted by (distance, key)."""
        knn = knn_search(self, query, k, mu, norm, workers=workers, nu=nu)
        return knn.sorted()

    def knn_many(self, queries, k: int, mu: int = 256, norm=Norm.L2, workers: int = 1,
                 nu: int = 2048):
        """Batch :meth:`knn`; returns ``(dist, keys, count)`` with rows padded by -1 keys."""
        queries = np.ascontiguousarray(queries, dtype=np.uint8)
        if queries.ndim != 2 or queries.shape[1] != self.D:
            raise ValueError(f"queries must be (m, {self.D})")
        _check_search_args(k, mu, nu)
        if len(self) == 0:
            m = queries.shape[0]
            return (np.full((m, k), _k.INF, np.int64), np.full((m, k), -1, np.int64),
                    np.zeros(m, np.int64))
        return _k.knn_many(self.coords, self.coords_t, self.zwords, self.spread, self.keys,
                           queries, k, mu, nu, Norm.parse(norm).is_l1, workers,
                           _threaded(workers))


def _check_search_args(k, mu, nu):
    if k < 1:
        raise ValueError("k must be at least 1")
    if mu < 1:
        raise ValueError("mu must be at least 1")
    if nu < mu:
        raise ValueError("nu must not be below mu")


def _threaded(workers: int) -> bool:
    # with a single numba thread the batch runs inline, which gives the same
    # result without the threading overhead
    return workers > 1 and numba.get_num_threads() > 1


def subinterval(index: ZCurveIndex, cube: HyperCube, parent: Interval,
                known_boundary: int = KNOW_NONE) -> Interval:
    """Entries of ``parent`` whose z-address lies between the cube corners.

    ``KNOW_LOWER`` keeps ``parent.first`` without searching (the cube shares
    the parent's lower corner), ``KNOW_UPPER`` likewise keeps ``parent.last``.
    """
    if parent.empty:
        return parent
    zf = np.empty(index.zwords.shape[1], np.uint64)
    zl = np.empty_like(zf)
    first = np.clip(cube.first, 0, 255)
    last = np.clip(cube.last, 0, 255)
    a, b = _k.subinterval(index.zwords, index.spread, zf, zl, first, last,
                          parent.first, parent.last, known_boundary)
    return Interval(int(a), int(b))


def leaf_scan(index: ZCurveIndex, interval: Interval, query, knn: KnnList,
              cube: HyperCube, norm=Norm.L2) -> bool:
    """Scan ``interval`` into ``knn``; crop ``cube`` around the query on improvement."""
    if interval.empty:
        return False
    q = np.asarray(query, dtype=np.uint8)
    return bool(_k.leaf_scan(index.coords, index.coords_t, index.keys, q, interval.first,
                             interval.last, Norm.parse(norm).is_l1, knn.dist, knn.keys,
                             knn.size, cube.first, cube.last, np.empty(_k._CHUNK, np.int32)))


def knn_search(index: ZCurveIndex, query, k: int, mu: int = 256, norm=Norm.L2,
               workers: int = 1, nu: int = 2048) -> KnnList:
    """Exact k nearest neighbours of ``query`` in ``index``.

    ``workers > 1`` switches to best-first job scheduling: regions holding
    at least ``nu`` entries are split into jobs ordered by their distance to
    the query and up to ``workers`` jobs run per round.  The result is
    identical for every worker count.
    """
    _check_search_args(k, mu, nu)
    q = np.ascontiguousarray(query, dtype=np.uint8).reshape(-1)
    if q.shape[0] != index.D:
        raise ValueError(f"query has {q.shape[0]} dimensions, index has {index.D}")
    if len(index) == 0:
        return KnnList(k)
    l1 = Norm.parse(norm).is_l1
    if workers <= 1:
        hd, hk, n = _k.knn_sequential(index.coords, index.coords_t, index.zwords, index.spread,
                                      index.keys, q, k, mu, l1)
    else:
        hd, hk, n = _k.knn_prioritized(index.coords, index.coords_t, index.zwords, index.spread,
                                       index.keys, q, k, mu, nu, l1, workers,
                                       _threaded(workers))
    return KnnList._from_heap(hd, hk, n)


def linear_knn(coords, keys, query, k: int, norm=Norm.L2) -> tuple[np.ndarray, np.ndarray]:
    """Reference knn by scanning every point, sorted by (distance, key)."""
    diff = np.asarray(coords, dtype=np.int64) - np.asarray(query, dtype=np.int64)
    dist = np.abs(diff).sum(axis=1) if Norm.parse(norm).is_l1 else (diff * diff).sum(axis=1)
    order = np.lexsort((np.asarray(keys), dist))[:k]
    return dist[order], np.asarray(keys)[order]
