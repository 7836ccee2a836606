"""Chemical distance, restricted distances, and intrinsic balls.

All edges have unit weight, so single-source distances come from
breadth-first search.  Nearest-neighbor moves are generated arithmetically
from the box indexing (never stored); long edges are kept in a compressed
adjacency built once per sample and cached on it.  The frontier is held as
flat index arrays, one generation at a time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import norm_value, derived_constants
from .sampler import Box, GraphSample


def _adjacency(sample: GraphSample):
    """Compressed long-edge adjacency (indptr, neighbors), cached on the sample."""
    if sample._adjacency is not None:
        return sample._adjacency
    n = sample.box.n_vertices
    e = sample.long_edges
    u = np.concatenate([e[:, 0], e[:, 1]])
    v = np.concatenate([e[:, 1], e[:, 0]])
    counts = np.bincount(u, minlength=n)
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    order = np.argsort(u, kind="stable")
    nbrs = v[order]
    sample._adjacency = (indptr, nbrs)
    return sample._adjacency


def _as_index(box: Box, vertex) -> int:
    """Vertex index of a coordinate vector; scalars are promoted to 1-vectors in d=1."""
    arr = np.atleast_1d(np.asarray(vertex, dtype=np.int64))
    if arr.shape != (box.d,):
        raise ValueError(f"vertex must be a {box.d}-vector of coordinates, got {vertex!r}")
    return int(box.index_of(arr))


def _nn_candidates(box: Box, frontier: np.ndarray) -> np.ndarray:
    """Nearest-neighbor moves of every frontier vertex, respecting box walls."""
    out = []
    side = box.side
    for stride in box.strides:
        digit = (frontier // stride) % side
        left = frontier[digit > 0] - stride
        right = frontier[digit < side - 1] + stride
        out.append(left)
        out.append(right)
    return np.concatenate(out) if out else np.empty(0, dtype=np.int64)


def _long_candidates(indptr: np.ndarray, nbrs: np.ndarray, frontier: np.ndarray) -> np.ndarray:
    starts = indptr[frontier]
    cnt = indptr[frontier + 1] - starts
    total = int(cnt.sum())
    if total == 0:
        return np.empty(0, dtype=np.int64)
    offsets = np.repeat(starts, cnt)
    within = np.arange(total, dtype=np.int64) - np.repeat(np.cumsum(cnt) - cnt, cnt)
    return nbrs[offsets + within]


def _bfs(sample: GraphSample, src_idx: int, *, until: int | None = None,
         max_level: int | None = None, allow=None) -> np.ndarray:
    """Level-synchronous BFS from src_idx; returns int32 distances, -1 = unreached.

    ``until``: stop once this vertex's level is fixed.  ``max_level``: do
    not expand past this level.  ``allow``: vectorized predicate over
    candidate index arrays, evaluated on the fly (used for restricted
    distances; never materialized as a vertex set).
    """
    box = sample.box
    indptr, nbrs = _adjacency(sample)
    dist = np.full(box.n_vertices, -1, dtype=np.int32)
    dist[src_idx] = 0
    frontier = np.array([src_idx], dtype=np.int64)
    level = 0
    while frontier.size:
        if until is not None and dist[until] >= 0:
            break
        if max_level is not None and level >= max_level:
            break
        level += 1
        cand = np.concatenate([
            _nn_candidates(box, frontier),
            _long_candidates(indptr, nbrs, frontier),
        ])
        cand = cand[dist[cand] < 0]
        if allow is not None and cand.size:
            cand = cand[allow(cand)]
        if cand.size == 0:
            break
        frontier = np.unique(cand)
        dist[frontier] = level
    return dist


@dataclass(frozen=True)
class DistanceField:
    """Distances from one source over all box vertices.

    dist[source] = 0, every edge (explicit or implicit) changes dist by at
    most 1, and dist[x] <= ell1(x - source) since the nearest-neighbor path
    is always available.
    """

    sample: GraphSample
    source: tuple
    dist: np.ndarray

    @property
    def source_index(self) -> int:
        return int(self.sample.box.index_of(np.asarray(self.source, dtype=np.int64)))


def distances_from(sample: GraphSample, source) -> DistanceField:
    """Single-source chemical distances over the whole box (O(V + E))."""
    src = _as_index(sample.box, source)
    dist = _bfs(sample, src)
    coords = tuple(int(c) for c in np.atleast_1d(np.asarray(source, dtype=np.int64)))
    return DistanceField(sample=sample, source=coords, dist=dist)


def distance_pair(sample: GraphSample, x, y) -> int:
    """Chemical distance between two vertices (early-exit BFS)."""
    xi = _as_index(sample.box, x)
    yi = _as_index(sample.box, y)
    if xi == yi:
        return 0
    dist = _bfs(sample, xi, until=yi)
    return int(dist[yi])


@dataclass(frozen=True)
class RestrictedDistanceResult:
    """Restricted distance value with its constraint radius and a box-honesty flag.

    value is an int, or math.inf if no admissible path exists;
    truncated_by_box is set when the constraint ball pokes out of the box,
    in which case the value only upper-bounds the infinite-volume one.
    """

    value: float
    constraint_radius: float
    truncated_by_box: bool


def _restricted_bfs(sample: GraphSample, x, y, radius: float, strict: bool) -> RestrictedDistanceResult:
    box = sample.box
    xi = _as_index(box, x)
    yi = _as_index(box, y)
    x_arr = np.atleast_1d(np.asarray(x, dtype=np.int64))
    kind = sample.params.norm

    def allow(cand):
        delta = box.coords_of(cand) - x_arr
        nn = norm_value(delta, kind)
        nn = np.atleast_1d(nn)
        return nn < radius if strict else nn <= radius

    # extreme admissible coordinate deviation along an axis (unit vectors have
    # norm 1 in every supported norm)
    delta_star = math.ceil(radius) - 1 if strict else math.floor(radius)
    truncated = bool(np.any(np.abs(x_arr) + delta_star > box.radius))

    if xi == yi:
        return RestrictedDistanceResult(value=0, constraint_radius=radius, truncated_by_box=truncated)
    target_norm = norm_value(np.asarray(y, dtype=np.int64) - x_arr, kind)
    reachable_target = target_norm < radius if strict else target_norm <= radius
    if not reachable_target:
        return RestrictedDistanceResult(value=math.inf, constraint_radius=radius, truncated_by_box=truncated)
    dist = _bfs(sample, xi, until=yi, allow=allow)
    value = int(dist[yi]) if dist[yi] >= 0 else math.inf
    return RestrictedDistanceResult(value=value, constraint_radius=radius, truncated_by_box=truncated)


def restricted_distance(sample: GraphSample, x, y, strict: bool = True,
                        reference_norm: str = "ell1") -> RestrictedDistanceResult:
    """Shortest path from x to y among paths confined near x.

    Every path vertex z must satisfy norm(z - x) < 2 * ell1(x - y), with
    the kernel norm on the left.  The definition is asymmetric in (x, y).
    The printed convention is strict inequality with an ell1 right-hand
    side; both are exposed as switches (``strict``, ``reference_norm``)
    since the k-indexed family below uses the other convention.
    """
    x_arr = np.asarray(x, dtype=np.int64)
    y_arr = np.asarray(y, dtype=np.int64)
    radius = 2.0 * norm_value(y_arr - x_arr, reference_norm)
    return _restricted_bfs(sample, x, y, radius, strict)


def restricted_k_distance(sample: GraphSample, x, y, k: int, gamma_bar: float) -> RestrictedDistanceResult:
    """Member k of the interpolating family of restricted distances.

    Confinement radius 2 * norm(x - y)**(gamma_bar**(-k)) with weak
    inequality, kernel norm on both sides; gamma_bar must lie strictly
    between gamma and 1.  Monotone non-increasing in k and stabilizes at
    the chemical distance once the radius swallows the whole box.
    """
    gamma, _ = derived_constants(sample.params)
    if not gamma < gamma_bar < 1.0:
        raise ValueError(f"gamma_bar must lie in (gamma, 1) = ({gamma}, 1), got {gamma_bar}")
    if k < 0:
        raise ValueError("k must be >= 0")
    x_arr = np.asarray(x, dtype=np.int64)
    y_arr = np.asarray(y, dtype=np.int64)
    base = norm_value(y_arr - x_arr, sample.params.norm)
    radius = 2.0 * base ** (gamma_bar ** (-float(k))) if base > 0 else 0.0
    return _restricted_bfs(sample, x, y, radius, strict=False)


def intrinsic_ball(sample: GraphSample, x, k: int) -> int:
    """Number of box vertices within chemical distance k of x (one BFS)."""
    if k < 0:
        raise ValueError("k must be >= 0")
    xi = _as_index(sample.box, x)
    dist = _bfs(sample, xi, max_level=k)
    return int(np.count_nonzero(dist >= 0))
