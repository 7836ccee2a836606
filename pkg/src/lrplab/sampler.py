"""Graph, Z, and W samplers.

Graph sampling is displacement-grouped: edges are generated per translation
class v (one binomial count for the number of edges at displacement v, then
a uniform without-replacement choice of which pairs), which costs
O(#classes + #edges) instead of O(#pairs).

Randomness layout (counter-based, splittable):

* generator: numpy Philox 4x64, keyed with two 64-bit words
  ``(seed, stream)``.
* stream ``2**63`` is reserved for the vectorized binomial count vector,
  drawn once over all displacement classes in canonical (lexicographic)
  order.
* every displacement class v gets stream ``class_code(v)`` < 2**63, a
  fixed-width packing of its components; the per-class streams are
  independent by key construction, so class-level work may run in any
  order or in parallel without changing the output.
* coupled sampling draws one uniform per admissible pair from the class
  stream as ``(raw_word >> 11) * 2**-53``; this uses raw Philox output
  only and is reproducible across numpy versions.  The plain sampler's
  binomial/choice draws ride numpy Generator methods, which numpy pins
  per version; within one environment both paths are bit-stable.

Pair indices within a class enumerate the admissible tail vertices (the
lexicographically smaller endpoints) in row-major order over the rectangle
of tails; edge lists are finally sorted by (tail, head) vertex index, so
the output is independent of construction order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import integrate

from .model import (
    ModelParams,
    connection_probabilities,
    derived_constants,
    norm_value,
    unit_ball_volume,
)

DEFAULT_MEMORY_CAP = 2 * 2**30
Z_REJECTION_CAP = 10**6

_COUNTS_STREAM = np.uint64(1) << np.uint64(63)


class MemoryCapExceeded(RuntimeError):
    """Raised before allocation when a sampling plan would exceed the memory cap."""

    def __init__(self, estimated_bytes: float, cap_bytes: int, stage: str):
        self.estimated_bytes = float(estimated_bytes)
        self.cap_bytes = int(cap_bytes)
        self.stage = stage
        super().__init__(
            f"{stage} needs an estimated {estimated_bytes / 2**30:.2f} GiB, "
            f"over the configured cap of {cap_bytes / 2**30:.2f} GiB"
        )


class RejectionCapExceeded(RuntimeError):
    """Raised when Z rejection sampling exhausts its iteration budget."""


@dataclass(frozen=True)
class Box:
    """Centered lattice box {x in Z^d: max_i |x_i| <= radius}.

    Vertices are indexed 0..(2*radius+1)**d - 1 in row-major coordinate
    order: index(x) = sum_i (x_i + radius) * (2*radius+1)**(d-1-i), so the
    index order is the lexicographic order on coordinates.
    """

    d: int
    radius: int

    def __post_init__(self):
        if not isinstance(self.d, (int, np.integer)) or self.d < 1:
            raise ValueError(f"box dimension must be an integer >= 1, got {self.d!r}")
        if not isinstance(self.radius, (int, np.integer)) or self.radius < 1:
            raise ValueError(f"box radius must be an integer >= 1, got {self.radius!r}")
        object.__setattr__(self, "d", int(self.d))
        object.__setattr__(self, "radius", int(self.radius))
        if self.side**self.d >= 2**62:
            raise ValueError("box too large: vertex indices must fit in 62 bits")

    @property
    def side(self) -> int:
        return 2 * self.radius + 1

    @property
    def n_vertices(self) -> int:
        return self.side**self.d

    @property
    def strides(self) -> np.ndarray:
        return self.side ** np.arange(self.d - 1, -1, -1, dtype=np.int64)

    def index_of(self, coords):
        """Vertex index of coordinate vector(s); validates containment."""
        arr = np.asarray(coords, dtype=np.int64)
        if arr.shape[-1] != self.d:
            raise ValueError(f"coordinates have {arr.shape[-1]} components, expected {self.d}")
        if np.any(np.abs(arr) > self.radius):
            raise ValueError("coordinates outside the box")
        idx = (arr + self.radius) @ self.strides
        if idx.ndim == 0:
            return int(idx)
        return idx

    def coords_of(self, index):
        """Coordinate vector(s) of vertex index (inverse of index_of)."""
        idx = np.asarray(index, dtype=np.int64)
        if np.any(idx < 0) or np.any(idx >= self.n_vertices):
            raise ValueError("vertex index out of range")
        out = np.empty(idx.shape + (self.d,), dtype=np.int64)
        rem = idx.copy()
        for i in range(self.d - 1, -1, -1):
            out[..., i] = rem % self.side - self.radius
            rem //= self.side
        return out

    def contains(self, coords):
        arr = np.asarray(coords, dtype=np.int64)
        return np.all(np.abs(arr) <= self.radius, axis=-1)


@dataclass(eq=False)
class GraphSample:
    """One sampled percolation graph on a box.

    ``long_edges`` holds the explicit non-nearest-neighbor edges as an
    (m, 2) int64 array of vertex index pairs (i, j) with i < j, sorted
    lexicographically; nearest-neighbor edges are implicit and always
    present.  Samples are immutable by convention; regeneration from
    (params, box, seed) through the op that produced them is bit-identical.
    """

    params: ModelParams
    box: Box
    seed: int | None
    long_edges: np.ndarray
    _adjacency: tuple | None = field(default=None, init=False, repr=False, compare=False)

    @property
    def n_long_edges(self) -> int:
        return int(self.long_edges.shape[0])


def _validate_seed(seed) -> int:
    if not isinstance(seed, (int, np.integer)) or isinstance(seed, bool):
        raise ValueError(f"seed must be an integer, got {seed!r}")
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise ValueError("seed must fit in an unsigned 64-bit word")
    return seed


def _check_memory(estimated_bytes: float, cap_bytes: int, stage: str):
    if estimated_bytes > cap_bytes:
        raise MemoryCapExceeded(estimated_bytes, cap_bytes, stage)


def _displacement_classes(box: Box, memory_cap_bytes: int) -> np.ndarray:
    """All canonical displacement class representatives present in the box.

    Canonical means the first nonzero component is positive (one
    representative per {v, -v} pair); zero and nearest-neighbor
    displacements are excluded.  Rows are sorted lexicographically.
    """
    L = box.radius
    if box.d == 1:
        return np.arange(2, 2 * L + 1, dtype=np.int64).reshape(-1, 1)
    raw_rows = (2 * L + 1) * (4 * L + 1) ** (box.d - 1)
    _check_memory(raw_rows * box.d * 8 * 3, memory_cap_bytes, "displacement class enumeration")
    axes = [np.arange(0, 2 * L + 1, dtype=np.int64)]
    axes += [np.arange(-2 * L, 2 * L + 1, dtype=np.int64)] * (box.d - 1)
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, box.d)
    nonzero = mesh != 0
    has_nz = nonzero.any(axis=1)
    lead = mesh[np.arange(len(mesh)), nonzero.argmax(axis=1)]
    keep = has_nz & (lead > 0) & (np.abs(mesh).sum(axis=1) >= 2)
    classes = mesh[keep]
    order = np.lexsort(tuple(classes[:, i] for i in range(box.d - 1, -1, -1)))
    return classes[order]


def _class_pair_counts(box: Box, classes: np.ndarray) -> np.ndarray:
    """Number of vertex pairs in the box at each displacement: prod(2L+1-|v_i|)."""
    return np.prod(box.side - np.abs(classes), axis=1, dtype=np.int64)


def _class_codes(box: Box, classes: np.ndarray) -> np.ndarray:
    """Pack each displacement into a < 2**63 stream id (fixed-width components)."""
    bits = 63 // box.d
    span = 4 * box.radius + 1
    if span > (1 << bits):
        raise ValueError(
            f"box radius {box.radius} too large to key displacement streams in "
            f"dimension {box.d} ({bits} bits per component)"
        )
    codes = np.zeros(len(classes), dtype=np.uint64)
    for i in range(box.d):
        offs = (classes[:, i] + 2 * box.radius).astype(np.uint64)
        codes = (codes << np.uint64(bits)) | offs
    return codes


def _select_without_replacement(n: int, k: int, gen: np.random.Generator) -> np.ndarray:
    """k distinct uniform indices from range(n), sorted ascending.

    Sparse case (k <= n/64): draw with replacement and deduplicate until k
    distinct values are collected — the resulting set is uniform over
    k-subsets by symmetry.  Dense case: partial-shuffle selection.
    """
    if k >= n:
        return np.arange(n, dtype=np.int64)
    if k == 0:
        return np.empty(0, dtype=np.int64)
    if k * 64 <= n:
        chosen = np.unique(gen.integers(0, n, size=k))
        while chosen.size < k:
            extra = gen.integers(0, n, size=k - chosen.size)
            chosen = np.union1d(chosen, extra)
        return chosen.astype(np.int64)
    return np.sort(gen.choice(n, size=k, replace=False)).astype(np.int64)


def _decode_pairs(box: Box, v: np.ndarray, sel: np.ndarray):
    """Map pair indices within class v to (tail, head) vertex index arrays.

    Pair index j enumerates tails row-major over the rectangle of
    admissible tail coordinates x_i in [-L + max(0, -v_i), L - max(0, v_i)].
    """
    L = box.radius
    counts = box.side - np.abs(v)
    los = -L + np.maximum(0, -v)
    tail = np.zeros(sel.size, dtype=np.int64)
    rem = sel.astype(np.int64, copy=True)
    strides = box.strides
    for i in range(box.d - 1, -1, -1):
        digit = rem % counts[i]
        rem //= counts[i]
        tail += (los[i] + digit + L) * strides[i]
    head = tail + int(v @ strides)
    return tail, head


def _edge_stage_memory(box: Box, n_classes: int, expected_edges: float, max_class_pairs: float) -> float:
    per_vertex = 32.0 * box.n_vertices
    per_class = 48.0 * n_classes
    # Edge columns plus sort workspace, plus the adjacency arrays any
    # consumer builds while the sample is still alive.
    per_edge = 96.0 * expected_edges
    return per_vertex + per_class + per_edge + 8.0 * max_class_pairs


def _finalize_edges(chunks: list) -> np.ndarray:
    if not chunks:
        return np.empty((0, 2), dtype=np.int64)
    edges = np.concatenate(chunks, axis=0)
    order = np.lexsort((edges[:, 1], edges[:, 0]))
    return edges[order]


def sample_graph(params: ModelParams, box: Box, seed: int,
                 memory_cap_bytes: int = DEFAULT_MEMORY_CAP) -> GraphSample:
    """Sample one percolation graph by displacement-grouped generation.

    Per displacement class v: the number of present edges is Binomial(N_v,
    p_v) with N_v the pair count and p_v the connection probability, and
    the chosen pairs are uniform without replacement.  The binomial count
    vector comes from the reserved counts stream; each class's selection
    uses its own keyed stream.  Raises MemoryCapExceeded before any large
    allocation if the plan exceeds ``memory_cap_bytes``.
    """
    seed = _validate_seed(seed)
    if params.d != box.d:
        raise ValueError(f"params dimension {params.d} does not match box dimension {box.d}")
    classes = _displacement_classes(box, memory_cap_bytes)
    p = connection_probabilities(params, classes)
    N = _class_pair_counts(box, classes)
    expected = float((N * p).sum())
    _check_memory(_edge_stage_memory(box, len(classes), expected, float(N.max(initial=0))),
                  memory_cap_bytes, "graph sampling")

    counts_gen = np.random.Generator(np.random.Philox(key=np.array([seed, _COUNTS_STREAM], dtype=np.uint64)))
    K = counts_gen.binomial(N, p)
    nz = np.flatnonzero(K)
    codes = _class_codes(box, classes)

    chunks = []
    for ci in nz:
        gen = np.random.Generator(np.random.Philox(key=np.array([seed, codes[ci]], dtype=np.uint64)))
        sel = _select_without_replacement(int(N[ci]), int(K[ci]), gen)
        tail, head = _decode_pairs(box, classes[ci], sel)
        chunks.append(np.stack([tail, head], axis=1))
    return GraphSample(params=params, box=box, seed=seed, long_edges=_finalize_edges(chunks))


def sample_graph_coupled(params_list, box: Box, seed: int,
                         memory_cap_bytes: int = DEFAULT_MEMORY_CAP) -> list:
    """Sample monotone-coupled graphs for an ascending beta ladder.

    All parameter sets must share (d, s, norm, kernel) and be sorted by
    beta.  Each admissible pair gets one uniform from its class stream
    (raw counter-based output, portable), and the edge at level beta is
    present iff that uniform is below the connection probability at beta;
    edge sets are therefore nested along the ladder by construction.

    Cost is O(#pairs), unlike sample_graph's O(#classes + #edges); intended
    for moderate boxes where coupled comparisons are wanted.
    """
    params_list = list(params_list)
    if not params_list:
        raise ValueError("params_list must be non-empty")
    seed = _validate_seed(seed)
    head_pm = params_list[0]
    if head_pm.d != box.d:
        raise ValueError(f"params dimension {head_pm.d} does not match box dimension {box.d}")
    for pm in params_list[1:]:
        if (pm.d, pm.s, pm.norm, pm.kernel) != (head_pm.d, head_pm.s, head_pm.norm, head_pm.kernel):
            raise ValueError("coupled sampling requires identical (d, s, norm, kernel) across the ladder")
    betas = [pm.beta for pm in params_list]
    if any(b2 < b1 for b1, b2 in zip(betas, betas[1:])):
        raise ValueError(f"betas must be sorted ascending, got {betas}")

    classes = _displacement_classes(box, memory_cap_bytes)
    N = _class_pair_counts(box, classes)
    P = np.stack([connection_probabilities(pm, classes) for pm in params_list], axis=1)
    expected = float((N * P[:, -1]).sum())
    _check_memory(_edge_stage_memory(box, len(classes), expected * len(params_list), float(N.max(initial=0))),
                  memory_cap_bytes, "coupled graph sampling")
    codes = _class_codes(box, classes)

    chunks = [[] for _ in params_list]
    for ci in range(len(classes)):
        n = int(N[ci])
        words = np.random.Philox(key=np.array([seed, codes[ci]], dtype=np.uint64)).random_raw(n)
        u = (words >> np.uint64(11)) * 2.0**-53
        for bi in range(len(params_list)):
            sel = np.flatnonzero(u < P[ci, bi])
            if sel.size:
                tail, head = _decode_pairs(box, classes[ci], sel)
                chunks[bi].append(np.stack([tail, head], axis=1))
    return [
        GraphSample(params=pm, box=box, seed=seed, long_edges=_finalize_edges(ch))
        for pm, ch in zip(params_list, chunks)
    ]


def graph_from_edges(params: ModelParams, box: Box, edges, seed: int | None = None) -> GraphSample:
    """Build a GraphSample from an explicit long-edge list (for tests and
    hand-constructed graphs).

    ``edges`` is (m, 2) vertex indices or (m, 2, d) coordinate pairs.
    Validates box membership, rejects self-loops, nearest-neighbor pairs
    (implicit edges), and duplicates; normalizes orientation and order.
    """
    e = np.asarray(edges, dtype=np.int64)
    if e.size == 0:
        e = np.empty((0, 2), dtype=np.int64)
    if e.ndim == 3:
        e = box.index_of(e)
    if e.ndim != 2 or e.shape[1] != 2:
        raise ValueError("edges must be (m, 2) vertex indices or (m, 2, d) coordinates")
    if np.any(e < 0) or np.any(e >= box.n_vertices):
        raise ValueError("edge endpoint outside the box")
    if np.any(e[:, 0] == e[:, 1]):
        raise ValueError("self-loops are not allowed")
    swap = e[:, 0] > e[:, 1]
    e[swap] = e[swap][:, ::-1]
    coords = box.coords_of(e)
    disp = coords[:, 1, :] - coords[:, 0, :]
    if np.any(np.abs(disp).sum(axis=1) == 1):
        raise ValueError("nearest-neighbor pairs are implicit and must not be listed")
    edges_sorted = _finalize_edges([e])
    if len(edges_sorted) > 1 and np.any(np.all(edges_sorted[1:] == edges_sorted[:-1], axis=1)):
        raise ValueError("duplicate edges")
    return GraphSample(params=params, box=box, seed=seed, long_edges=edges_sorted)


@dataclass(frozen=True)
class C0Estimate:
    value: float
    standard_error: float
    method: str
    budget: int


def compute_c0(params: ModelParams, method: str = "quadrature", budget: int = 10**6,
               seed: int = 0) -> C0Estimate:
    """The volume constant c0 = vol{(z, z') in R^d x R^d : |z|^{2d} + |z'|^{2d} <= 1}.

    quadrature: reduce both d-dimensional integrals radially
    (vol{|z| <= rho} = v_d rho^d for any norm), leaving
    c0 = v_d^2 * Int_0^1 sqrt(1 - u^2) du, evaluated numerically.
    monte_carlo: hit counting over the bounding cube [-1, 1]^{2d}.
    """
    if budget < 10**4:
        raise ValueError("budget must be at least 1e4 evaluations")
    d = params.d
    vd = unit_ball_volume(d, params.norm)
    if method == "quadrature":
        integral, abserr = integrate.quad(lambda u: math.sqrt(max(0.0, 1.0 - u * u)), 0.0, 1.0)
        return C0Estimate(value=vd * vd * integral, standard_error=vd * vd * abserr,
                          method=method, budget=budget)
    if method == "monte_carlo":
        rng = np.random.default_rng(seed)
        hits = 0
        done = 0
        while done < budget:
            m = min(budget - done, 10**6)
            pts = rng.random((m, 2 * d)) * 2.0 - 1.0
            za = norm_value(pts[:, :d], params.norm) ** (2 * d)
            zb = norm_value(pts[:, d:], params.norm) ** (2 * d)
            hits += int(np.count_nonzero(za + zb <= 1.0))
            done += m
        cube = 2.0 ** (2 * d)
        phat = hits / budget
        return C0Estimate(value=cube * phat,
                          standard_error=cube * math.sqrt(max(phat * (1 - phat), 1e-300) / budget),
                          method=method, budget=budget)
    raise ValueError(f"unknown method {method!r}; expected 'quadrature' or 'monte_carlo'")


@lru_cache(maxsize=None)
def _c0_cached(d: int, norm_kind: str) -> float:
    vd = unit_ball_volume(d, norm_kind)
    integral, _ = integrate.quad(lambda u: math.sqrt(max(0.0, 1.0 - u * u)), 0.0, 1.0)
    return vd * vd * integral


def _uniform_in_ball(rng: np.random.Generator, m: int, d: int, kind: str) -> np.ndarray:
    """m points uniform in the unit ball of the given norm in R^d."""
    if kind == "ellinf":
        return rng.uniform(-1.0, 1.0, size=(m, d))
    if kind == "ell2":
        g = rng.standard_normal((m, d))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        radii = rng.random(m) ** (1.0 / d)
        return g * radii[:, None]
    if kind == "ell1":
        # Dirichlet spacings give a uniform point of the probability simplex;
        # its first d coordinates are uniform over {sum |v_i| <= 1, v_i >= 0}
        spac = rng.standard_exponential((m, d + 1))
        mags = spac[:, :d] / spac.sum(axis=1, keepdims=True)
        signs = rng.integers(0, 2, size=(m, d)) * 2 - 1
        return mags * signs
    raise ValueError(f"unknown norm kind {kind!r}")


def sample_z(params: ModelParams, eta: float, rng: np.random.Generator, size: int | None = None):
    """Draw from the density sqrt(eta) * exp(-eta * c0 * |z|^{2d}) on R^d.

    Rejection sampling: the proposal is a * T * V with V uniform in the
    unit norm-ball, T Pareto(2d) on [1, inf), and scale
    a = (3 / (2 eta c0))^{1/(2d)} chosen so the acceptance probability is
    (2/3)^{3/2} sqrt(pi)/2 ~ 0.48, independent of d and eta (in particular
    above 0.1 for every d <= 3 and eta <= 10).  A draw failing to complete
    within 10**6 proposals raises RejectionCapExceeded.
    """
    if not eta > 0:
        raise ValueError(f"eta must be > 0, got {eta}")
    d = params.d
    c0 = _c0_cached(d, params.norm)
    alpha = 2 * d
    a = ((d + alpha) / (2 * d * eta * c0)) ** (1.0 / (2 * d))
    target = 1 if size is None else int(size)
    if target < 0:
        raise ValueError("size must be >= 0")

    out = np.empty((target, d))
    got = 0
    proposals = 0
    while got < target:
        m = max(64, int(1.1 * (target - got) / 0.48) + 1)
        t = (1.0 - rng.random(m)) ** (-1.0 / alpha)
        v = _uniform_in_ball(rng, m, d, params.norm)
        z = a * t[:, None] * v
        r = np.atleast_1d(norm_value(z, params.norm))
        accept_p = np.exp(-eta * c0 * r ** (2 * d)) * np.maximum(1.0, (r / a) ** (d + alpha))
        keep = rng.random(m) < accept_p
        take = min(int(keep.sum()), target - got)
        out[got : got + take] = z[keep][:take]
        got += take
        proposals += m
        if proposals > Z_REJECTION_CAP and got < target:
            raise RejectionCapExceeded(
                f"rejection sampling exhausted {proposals} proposals with {got}/{target} "
                f"accepted (rate {got / proposals:.4f}); d={d}, eta={eta}, norm={params.norm}"
            )
    if size is None:
        return out[0]
    return out


@dataclass(frozen=True)
class WSample:
    """One draw of W = Z_0 * prod_{k>=1} |Z_k|^{e_k}, truncated at recorded level."""

    value: np.ndarray
    eta: float
    gamma_sequence: str
    truncation_level: int
    residual_bound: float


def _gamma_entry(gamma_sequence, k: int) -> float:
    if isinstance(gamma_sequence, (int, float)):
        return float(gamma_sequence)
    return float(gamma_sequence[k - 1]) if k - 1 < len(gamma_sequence) else 0.0


def sample_w(params: ModelParams, eta: float, gamma_sequence, tolerance: float = 1e-9,
             rng: np.random.Generator | None = None) -> WSample:
    """Draw W = Z_0 * prod_{k>=1} |Z_k|^{e_k} with e_k = gamma_1 ... gamma_k.

    ``gamma_sequence`` is a constant (float) or a finite sequence (treated
    as zero beyond its end); every entry must lie in [0, 2*gamma/(1+gamma)].
    The product is truncated at the first level n whose residual exponent
    mass bound e_n * g/(1 - g) (g = sup of the sequence) drops to
    ``tolerance`` or below; level and bound are recorded.  A constant
    sequence of 0 returns W = Z_0 exactly, consuming no extra draws.

    For coupling two tolerances, pass generators seeded per sample index:
    the Z prefix is then shared and only the truncation level differs.
    """
    if rng is None:
        raise ValueError("an explicitly seeded numpy Generator is required")
    if not tolerance > 0:
        raise ValueError("tolerance must be > 0")
    gamma, _ = derived_constants(params)
    cap = 2 * gamma / (1 + gamma)
    if isinstance(gamma_sequence, (int, float)):
        entries = [float(gamma_sequence)]
        desc = f"constant {float(gamma_sequence)!r}"
    else:
        entries = [float(g) for g in gamma_sequence]
        desc = f"sequence of length {len(entries)}, sup {max(entries, default=0.0)!r}"
    for g in entries:
        if not 0.0 <= g <= cap + 1e-12:
            raise ValueError(f"gamma sequence entry {g} outside [0, 2*gamma/(1+gamma)] = [0, {cap}]")
    bound = max(entries, default=0.0)

    value = sample_z(params, eta, rng)
    if bound == 0.0:
        return WSample(value=value, eta=eta, gamma_sequence=desc, truncation_level=0, residual_bound=0.0)

    scale = 1.0
    e = 1.0
    level = 0
    while e * bound / (1.0 - bound) > tolerance:
        e_next = e * _gamma_entry(gamma_sequence, level + 1)
        if e_next == 0.0:
            e = 0.0
            break
        level += 1
        e = e_next
        z = sample_z(params, eta, rng)
        scale *= norm_value(z, params.norm) ** e
    return WSample(value=value * scale, eta=eta, gamma_sequence=desc,
                   truncation_level=level, residual_bound=e * bound / (1.0 - bound))
