"""Monte Carlo estimation of the distance scaling function.

phi_hat(r) is the median chemical distance from the origin over the
annulus {delta * r <= |x| < r} (kernel norm, delta = 0.1 by default),
divided by (log r)**delta_exponent with the natural logarithm.  The median
is robust against the few vertices sitting right next to a long-edge
endpoint; the inner cutoff excises the neighborhood of the origin.

Replicas are independent jobs with seeds seed0, seed0 + 1, ...; every
estimator here is a deterministic function of (params, radii, n_replicas,
seed0).  Confidence intervals are seeded percentile bootstraps with 1000
resamples by default.

Finite-volume caveat: the graph is sampled on the box of radius ceil(r),
so shortest paths cannot leave the box and distances near the annulus
boundary carry a small upward bias; this is inherent to any finite window.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .model import ModelParams, derived_constants, norm_value
from .sampler import (
    DEFAULT_MEMORY_CAP,
    Box,
    MemoryCapExceeded,
    sample_graph,
    sample_graph_coupled,
)
from .metric import DistanceField, distances_from
from .limits import beta_phase, collapse_radius, psi_limit, tail_envelope

_BOOTSTRAP_TAG = 0xB007
_GAP_TAG = 0x6A7
_COLLAPSE_TAG = 0xC077


@dataclass(frozen=True)
class ExperimentRecord:
    """One replica's phi estimate."""

    params: ModelParams
    r: float
    seed: int
    phi_hat: float
    n_points: int
    annulus_fraction: float
    wall_time: float


@dataclass(frozen=True)
class PhiEstimate:
    """Replica-aggregated phi estimate with a bootstrap confidence interval."""

    params: ModelParams
    r: float
    n_replicas: int
    seed0: int
    phi_hat: float
    ci_low: float
    ci_high: float
    records: tuple


def _annulus_mask(box: Box, norm_kind: str, r: float, delta: float) -> np.ndarray:
    coords = box.coords_of(np.arange(box.n_vertices))
    nrm = norm_value(coords, norm_kind)
    return (nrm >= delta * r) & (nrm < r)


def _log_r_power(params: ModelParams, r: float) -> float:
    _, delta_exp = derived_constants(params)
    return math.log(r) ** delta_exp


def _phi_single(params: ModelParams, r: float, seed: int, delta: float,
                memory_cap_bytes: int) -> ExperimentRecord:
    t0 = time.perf_counter()
    box = Box(params.d, int(math.ceil(r)))
    mask = _annulus_mask(box, params.norm, r, delta)
    n_points = int(np.count_nonzero(mask))
    if n_points < 100:
        raise ValueError(
            f"annulus {{{delta}*r <= |x| < r}} holds only {n_points} vertices at r={r}; "
            "need at least 100"
        )
    sample = sample_graph(params, box, seed, memory_cap_bytes=memory_cap_bytes)
    field = distances_from(sample, np.zeros(params.d, dtype=np.int64))
    med = float(np.median(field.dist[mask]))
    return ExperimentRecord(
        params=params,
        r=float(r),
        seed=int(seed),
        phi_hat=med / _log_r_power(params, r),
        n_points=n_points,
        annulus_fraction=n_points / box.n_vertices,
        wall_time=time.perf_counter() - t0,
    )


def _phi_record(args) -> ExperimentRecord:
    return _phi_single(*args)


def _bootstrap_ci(values: np.ndarray, rng: np.random.Generator,
                  n_bootstrap: int) -> tuple:
    if values.size == 1:
        v = float(values[0])
        return v, v
    idx = rng.integers(0, values.size, size=(n_bootstrap, values.size))
    means = values[idx].mean(axis=1)
    return float(np.percentile(means, 2.5)), float(np.percentile(means, 97.5))


def estimate_phi(params: ModelParams, r: float, n_replicas: int, seed0: int,
                 delta: float = 0.1, n_bootstrap: int = 1000, executor=None,
                 memory_cap_bytes: int = DEFAULT_MEMORY_CAP) -> PhiEstimate:
    """Estimate phi(r) over independent replicas seeded seed0 + i.

    Each replica samples its own graph on the box of radius ceil(r) and
    takes the median distance over the annulus.  ``executor`` may be a
    concurrent.futures executor; replica order (and hence output) is
    deterministic either way.
    """
    if not r > 1:
        raise ValueError(f"r must be > 1, got {r}")
    if n_replicas < 1:
        raise ValueError("n_replicas must be >= 1")
    args = [(params, r, seed0 + i, delta, memory_cap_bytes) for i in range(n_replicas)]
    mapper = map if executor is None else executor.map
    records = tuple(mapper(_phi_record, args))
    phis = np.array([rec.phi_hat for rec in records])
    ci_low, ci_high = _bootstrap_ci(phis, np.random.default_rng([seed0, _BOOTSTRAP_TAG]), n_bootstrap)
    return PhiEstimate(params=params, r=float(r), n_replicas=n_replicas, seed0=int(seed0),
                       phi_hat=float(phis.mean()), ci_low=ci_low, ci_high=ci_high,
                       records=records)


def _ladder_replica(args) -> list:
    params_list, r, seed, delta, memory_cap_bytes = args
    box = Box(params_list[0].d, int(math.ceil(r)))
    mask = _annulus_mask(box, params_list[0].norm, r, delta)
    n_points = int(np.count_nonzero(mask))
    if n_points < 100:
        raise ValueError(
            f"annulus {{{delta}*r <= |x| < r}} holds only {n_points} vertices at r={r}; "
            "need at least 100"
        )
    samples = sample_graph_coupled(params_list, box, seed, memory_cap_bytes=memory_cap_bytes)
    records = []
    for pm, sample in zip(params_list, samples):
        t0 = time.perf_counter()
        field = distances_from(sample, np.zeros(pm.d, dtype=np.int64))
        med = float(np.median(field.dist[mask]))
        records.append(ExperimentRecord(
            params=pm, r=float(r), seed=int(seed),
            phi_hat=med / _log_r_power(pm, r),
            n_points=n_points,
            annulus_fraction=n_points / box.n_vertices,
            wall_time=time.perf_counter() - t0,
        ))
    return records


def estimate_phi_ladder(params_list, r: float, n_replicas: int, seed0: int,
                        delta: float = 0.1, n_bootstrap: int = 1000, executor=None,
                        memory_cap_bytes: int = DEFAULT_MEMORY_CAP) -> list:
    """estimate_phi along an ascending beta ladder with monotone coupling.

    Replica i samples the whole ladder once with shared per-pair
    randomness (seed0 + i), so phi_hat is non-increasing in beta exactly,
    replica by replica.  Returns one PhiEstimate per beta.
    """
    params_list = list(params_list)
    if not r > 1:
        raise ValueError(f"r must be > 1, got {r}")
    if n_replicas < 1:
        raise ValueError("n_replicas must be >= 1")
    args = [(params_list, r, seed0 + i, delta, memory_cap_bytes) for i in range(n_replicas)]
    mapper = map if executor is None else executor.map
    per_replica = list(mapper(_ladder_replica, args))
    out = []
    for bi, pm in enumerate(params_list):
        records = tuple(rep[bi] for rep in per_replica)
        phis = np.array([rec.phi_hat for rec in records])
        ci_low, ci_high = _bootstrap_ci(phis, np.random.default_rng([seed0, _BOOTSTRAP_TAG, bi]),
                                        n_bootstrap)
        out.append(PhiEstimate(params=pm, r=float(r), n_replicas=n_replicas, seed0=int(seed0),
                               phi_hat=float(phis.mean()), ci_low=ci_low, ci_high=ci_high,
                               records=records))
    return out


def theorem1_fraction(field: DistanceField, r: float, scale: float, epsilon: float) -> float:
    """Fraction of ball vertices whose distance deviates from ``scale``.

    Counts x in B(source, r) (kernel norm, weak inequality) with
    |D(source, x)/scale - 1| > epsilon, normalized by the lattice-point
    count |B(source, r)|.
    """
    if not scale > 0:
        raise ValueError("scale must be > 0")
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    box = field.sample.box
    if r > box.radius:
        raise ValueError(f"r={r} exceeds the box radius {box.radius}")
    coords = box.coords_of(np.arange(box.n_vertices))
    center = np.asarray(field.source, dtype=np.int64)
    nrm = norm_value(coords - center, field.sample.params.norm)
    mask = nrm <= r
    ratios = field.dist[mask].astype(np.float64) / scale
    return float(np.count_nonzero(np.abs(ratios - 1.0) > epsilon) / np.count_nonzero(mask))


@dataclass(frozen=True)
class PeriodicityDiagnostic:
    """phi_hat at r and at r**(1/gamma), with the relative gap between them.

    A finite-size diagnostic: log-log-periodicity is an asymptotic
    property, so the gap is reported with a CI rather than pass/fail.
    """

    r: float
    r_next: float
    estimate_r: PhiEstimate
    estimate_r_next: PhiEstimate
    relative_gap: float
    gap_ci_low: float
    gap_ci_high: float


def periodicity_diagnostic(params: ModelParams, r: float, n_replicas: int, seed0: int,
                           delta: float = 0.1, n_bootstrap: int = 1000, executor=None,
                           memory_cap_bytes: int = DEFAULT_MEMORY_CAP) -> PeriodicityDiagnostic:
    """Compare phi_hat at radii one log-log period apart (r and r**(1/gamma))."""
    gamma, _ = derived_constants(params)
    r_next = r ** (1.0 / gamma)
    est1 = estimate_phi(params, r, n_replicas, seed0, delta=delta, n_bootstrap=n_bootstrap,
                        executor=executor, memory_cap_bytes=memory_cap_bytes)
    est2 = estimate_phi(params, r_next, n_replicas, seed0, delta=delta, n_bootstrap=n_bootstrap,
                        executor=executor, memory_cap_bytes=memory_cap_bytes)
    phis1 = np.array([rec.phi_hat for rec in est1.records])
    phis2 = np.array([rec.phi_hat for rec in est2.records])
    gap = (est2.phi_hat - est1.phi_hat) / est1.phi_hat
    rng = np.random.default_rng([seed0, _GAP_TAG])
    if n_replicas == 1:
        lo = hi = gap
    else:
        idx1 = rng.integers(0, n_replicas, size=(n_bootstrap, n_replicas))
        idx2 = rng.integers(0, n_replicas, size=(n_bootstrap, n_replicas))
        m1 = phis1[idx1].mean(axis=1)
        m2 = phis2[idx2].mean(axis=1)
        gaps = (m2 - m1) / m1
        lo, hi = float(np.percentile(gaps, 2.5)), float(np.percentile(gaps, 97.5))
    return PeriodicityDiagnostic(r=float(r), r_next=float(r_next), estimate_r=est1,
                                 estimate_r_next=est2, relative_gap=float(gap),
                                 gap_ci_low=lo, gap_ci_high=hi)


@dataclass(frozen=True)
class CollapseCell:
    """One (beta, t) cell of a collapse experiment."""

    beta: float
    t: float
    r: float
    phi_hat: float
    ci_low: float
    ci_high: float
    value: float  # (log beta)**delta * phi_hat
    limit: float  # psi_limit(t)
    missing: bool
    reason: str
    replica_phis: tuple


@dataclass(frozen=True)
class CollapseSummary:
    beta: float
    n_cells: int
    n_missing: int
    max_abs_discrepancy: float
    mean_abs_discrepancy: float
    mean_abs_ci_low: float
    mean_abs_ci_high: float
    rank_correlation: float


@dataclass(frozen=True)
class CollapseReport:
    """Scaling-collapse table: empirical (log beta)**delta * psi_hat vs the limit curve."""

    t_grid: tuple
    m_offset: int
    cells: tuple
    summaries: tuple


def collapse_report(params_list, t_grid, n_replicas: int, seed0: int, m_offset: int = 4,
                    delta: float = 0.1, box_radius_cap: int = 10**7, n_bootstrap: int = 1000,
                    executor=None, memory_cap_bytes: int = DEFAULT_MEMORY_CAP) -> CollapseReport:
    """Tabulate empirical psi against psi_limit over a beta ladder and t grid.

    For each beta and t the probe radius is
    r = exp(gamma**(-t) * u(beta)/(2d-s) * gamma**(-m_offset)); the dyadic
    offset keeps r simulable and is exact to the log-log period.  Cells
    whose box would exceed ``box_radius_cap`` or the memory cap, or whose
    annulus is too thin, are marked missing with a reason, never fabricated.
    One shared seed list (seed0 + i) is used across the whole ladder.
    """
    params_list = list(params_list)
    betas = [pm.beta for pm in params_list]
    if any(b2 <= b1 for b1, b2 in zip(betas, betas[1:])):
        raise ValueError(f"collapse expects strictly increasing betas, got {betas}")
    for pm in params_list:
        if beta_phase(pm, pm.beta).m < 0:
            raise ValueError(f"collapse requires beta > e, got beta={pm.beta}")
    t_vals = [float(t) for t in t_grid]
    if any(not 0.0 <= t <= 1.0 for t in t_vals):
        raise ValueError("t grid must lie in [0, 1]")

    cells = []
    for pm in params_list:
        _, delta_exp = derived_constants(pm)
        lb_pow = math.log(pm.beta) ** delta_exp
        for t in t_vals:
            r = collapse_radius(pm, pm.beta, t, m_offset)
            limit = float(psi_limit(pm, t))
            if math.ceil(r) > box_radius_cap:
                cells.append(CollapseCell(beta=pm.beta, t=t, r=r, phi_hat=math.nan,
                                          ci_low=math.nan, ci_high=math.nan, value=math.nan,
                                          limit=limit, missing=True,
                                          reason=f"box radius {math.ceil(r)} over cap {box_radius_cap}",
                                          replica_phis=()))
                continue
            try:
                est = estimate_phi(pm, r, n_replicas, seed0, delta=delta,
                                   n_bootstrap=n_bootstrap, executor=executor,
                                   memory_cap_bytes=memory_cap_bytes)
            except (MemoryCapExceeded, ValueError) as exc:
                cells.append(CollapseCell(beta=pm.beta, t=t, r=r, phi_hat=math.nan,
                                          ci_low=math.nan, ci_high=math.nan, value=math.nan,
                                          limit=limit, missing=True, reason=str(exc),
                                          replica_phis=()))
                continue
            cells.append(CollapseCell(
                beta=pm.beta, t=t, r=r, phi_hat=est.phi_hat,
                ci_low=est.ci_low, ci_high=est.ci_high,
                value=lb_pow * est.phi_hat, limit=limit, missing=False, reason="",
                replica_phis=tuple(rec.phi_hat for rec in est.records),
            ))

    summaries = []
    rng = np.random.default_rng([seed0, _COLLAPSE_TAG])
    for pm in params_list:
        _, delta_exp = derived_constants(pm)
        lb_pow = math.log(pm.beta) ** delta_exp
        mine = [c for c in cells if c.beta == pm.beta]
        live = [c for c in mine if not c.missing]
        if live:
            discrepancies = np.array([abs(c.value - c.limit) for c in live])
            values = np.array([c.value for c in live])
            limits = np.array([c.limit for c in live])
            rank = float(stats.spearmanr(values, limits)[0]) if len(live) > 1 else math.nan
            phi_mat = np.array([c.replica_phis for c in live])  # (cells, replicas)
            n_rep = phi_mat.shape[1]
            if n_rep > 1:
                idx = rng.integers(0, n_rep, size=(n_bootstrap, n_rep))
                boot = np.empty(n_bootstrap)
                for b in range(n_bootstrap):
                    vals_b = phi_mat[:, idx[b]].mean(axis=1) * lb_pow
                    boot[b] = np.abs(vals_b - limits).mean()
                ci_lo, ci_hi = float(np.percentile(boot, 2.5)), float(np.percentile(boot, 97.5))
            else:
                ci_lo = ci_hi = float(discrepancies.mean())
            summaries.append(CollapseSummary(
                beta=pm.beta, n_cells=len(mine), n_missing=len(mine) - len(live),
                max_abs_discrepancy=float(discrepancies.max()),
                mean_abs_discrepancy=float(discrepancies.mean()),
                mean_abs_ci_low=ci_lo, mean_abs_ci_high=ci_hi,
                rank_correlation=rank,
            ))
        else:
            summaries.append(CollapseSummary(beta=pm.beta, n_cells=len(mine), n_missing=len(mine),
                                             max_abs_discrepancy=math.nan,
                                             mean_abs_discrepancy=math.nan,
                                             mean_abs_ci_low=math.nan, mean_abs_ci_high=math.nan,
                                             rank_correlation=math.nan))
    return CollapseReport(t_grid=tuple(t_vals), m_offset=int(m_offset),
                          cells=tuple(cells), summaries=tuple(summaries))


@dataclass(frozen=True)
class TailRow:
    radius: float
    n_points: int
    empirical: float
    envelope: float
    envelope_fitted: float


@dataclass(frozen=True)
class TailComparison:
    """Empirical P(D(0, x) <= n) per annulus shell vs the analytic envelope.

    ``c_fitted`` is the smallest constant making the envelope dominate every
    empirical point (a fitted quantity; the theory only asserts existence).
    """

    n: int
    rows: tuple
    c: float
    c_tilde: float
    p: float
    c_fitted: float
    precondition_ok: bool


def tail_comparison(params: ModelParams, n: int, radii_list, n_replicas: int, seed0: int,
                    c: float, c_tilde: float, p: float, shell_halfwidth: float = 0.1,
                    memory_cap_bytes: int = DEFAULT_MEMORY_CAP) -> TailComparison:
    """Compare the shell-averaged frequency of {D(0, x) <= n} with its envelope.

    Each radius rho gets the shell {|norm(x) - rho| <= shell_halfwidth * rho};
    frequencies aggregate over replicas with seeds seed0 + i.
    """
    radii = [float(rho) for rho in radii_list]
    if not radii or any(rho <= 0 for rho in radii):
        raise ValueError("radii must be positive")
    if not 0 < shell_halfwidth < 1:
        raise ValueError("shell_halfwidth must be in (0, 1)")
    box = Box(params.d, int(math.ceil(max(radii) * (1 + shell_halfwidth))))
    coords = box.coords_of(np.arange(box.n_vertices))
    nrm = norm_value(coords, params.norm)

    hits = np.zeros(len(radii), dtype=np.int64)
    points = np.zeros(len(radii), dtype=np.int64)
    masks = [np.abs(nrm - rho) <= shell_halfwidth * rho for rho in radii]
    for i in range(n_replicas):
        sample = sample_graph(params, box, seed0 + i, memory_cap_bytes=memory_cap_bytes)
        field = distances_from(sample, np.zeros(params.d, dtype=np.int64))
        for j, mask in enumerate(masks):
            points[j] += int(np.count_nonzero(mask))
            hits[j] += int(np.count_nonzero(field.dist[mask] <= n))

    rows = []
    envs = []
    precondition_ok = True
    for j, rho in enumerate(radii):
        env = tail_envelope(params, n, rho, c, c_tilde, p)
        precondition_ok = precondition_ok and env.precondition_ok
        empirical = hits[j] / points[j] if points[j] else math.nan
        envs.append(env.value)
        rows.append((rho, int(points[j]), float(empirical), env.value))

    ratios = [emp / (env / c) for (_, np_, emp, env) in rows if np_ > 0 and env > 0 and not math.isnan(emp)]
    c_fitted = max(ratios) if ratios else 0.0
    final_rows = tuple(
        TailRow(radius=rho, n_points=np_, empirical=emp, envelope=env,
                envelope_fitted=c_fitted * (env / c))
        for (rho, np_, emp, env) in rows
    )
    return TailComparison(n=int(n), rows=final_rows, c=float(c), c_tilde=float(c_tilde),
                          p=float(p), c_fitted=float(c_fitted), precondition_ok=precondition_ok)
