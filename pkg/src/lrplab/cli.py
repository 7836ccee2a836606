"""Command-line interface for the long-range percolation laboratory.

Commands: exponents, limit-curve, sample, distances, figure1, estimate-phi,
collapse, selfcheck.  Options come from defaults, then a flat key=value
config file (--config FILE), then CLI flags, in increasing precedence.
All validation happens before any computation.

Outputs are CSV ('.' decimal, LF line endings, fixed column order,
round-trip float formatting) and JSON.  Every output file carries the
hash of the resolved config that produced it; a manifest.json with the
config echo, library versions, wall time, and timestamp is written last,
so its presence marks a completed run.  Partial outputs are removed on
error.  Exit codes: 0 ok, 2 config error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
import time
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .model import NORMS, ModelParams, derived_constants, norm_value
from .exponents import (
    block_index,
    ratio_report,
    theta_closed_form,
    theta_fast,
    theta_recursive,
    vartheta,
)
from .limits import lambda_of_t, lower_curve, psi_limit
from .sampler import Box, compute_c0, graph_from_edges, sample_graph, sample_graph_coupled, sample_z
from .metric import distance_pair, distances_from, restricted_distance, restricted_k_distance
from .estimator import collapse_report, estimate_phi, theorem1_fraction

_Z_STREAM_TAG = 0x5A17


class ConfigError(Exception):
    """Invalid or inconsistent run configuration."""


def _one_line(msg: str) -> str:
    return " ".join(str(msg).split())


def _fmt(value) -> str:
    """Round-trip text for one CSV cell."""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        f = float(value)
        if math.isnan(f):
            return "nan"
        if math.isinf(f):
            return "inf" if f > 0 else "-inf"
        return repr(f)
    return str(value)


def _write_csv(path: Path, columns_doc: str, config_hash: str, header, rows, created: list) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"# columns: {columns_doc}\n")
        fh.write(f"# config_hash={config_hash}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
    created.append(path)


def _write_json(path: Path, payload: dict, created: list) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(json.dumps(payload, indent=2, sort_keys=True))
        fh.write("\n")
    created.append(path)


# ---------------------------------------------------------------------------
# Option declaration and resolution


def _pint(raw: str) -> int:
    value = int(raw)
    if value < 1:
        raise ValueError(f"must be >= 1, got {value}")
    return value


def _nnint(raw: str) -> int:
    value = int(raw)
    if value < 0:
        raise ValueError(f"must be >= 0, got {value}")
    return value


def _pfloat(raw: str) -> float:
    value = float(raw)
    if not value > 0 or not math.isfinite(value):
        raise ValueError(f"must be a positive finite real, got {raw}")
    return value


def _norm(raw: str) -> str:
    if raw not in NORMS:
        raise ValueError(f"must be one of {', '.join(NORMS)}; got {raw!r}")
    return raw


def _seed(raw: str) -> int:
    value = int(raw)
    if not 0 <= value < 2**64:
        raise ValueError("must be in [0, 2**64)")
    return value


def _int_vector(raw: str) -> tuple:
    return tuple(int(part) for part in raw.split(","))


def _float_vector(raw: str) -> tuple:
    return tuple(float(part) for part in raw.split(","))


def _optional(parse):
    def wrapped(raw: str):
        return None if raw == "" else parse(raw)

    return wrapped


class _Opt:
    def __init__(self, name: str, parse, default: str, help: str):
        self.name = name
        self.parse = parse
        self.default = default
        self.help = help


_MODEL_OPTS = [
    _Opt("d", _pint, "1", "lattice dimension"),
    _Opt("s", _pfloat, "1.5", "kernel decay exponent, d < s < 2d"),
]
_BETA_OPT = _Opt("beta", _pfloat, "1.0", "inverse temperature (edge intensity)")
_NORM_OPT = _Opt("norm", _norm, "ell2", "kernel norm: ell1, ell2, or ellinf")
_SEED_OPT = _Opt("seed", _seed, "0", "base seed; replica i uses seed + i")
_JOBS_OPT = _Opt("jobs", _pint, "1", "max parallel replica processes")

_OPTIONS = {
    "exponents": _MODEL_OPTS + [
        _Opt("n_max", _pint, "64", "largest index n tabulated (>= 2)"),
    ],
    "limit-curve": _MODEL_OPTS + [
        _Opt("n_points", _pint, "1001", "grid points on [0, 1] (>= 2)"),
    ],
    "sample": _MODEL_OPTS + [
        _BETA_OPT, _NORM_OPT,
        _Opt("L", _pint, "50", "box radius (box is [-L, L]^d)"),
        _SEED_OPT,
        _Opt("z_draws", _nnint, "0", "also draw this many Z variables"),
        _Opt("eta", _pfloat, "1.0", "Z density parameter eta"),
    ],
    "distances": _MODEL_OPTS + [
        _BETA_OPT, _NORM_OPT,
        _Opt("L", _pint, "100", "box radius"),
        _SEED_OPT,
        _Opt("beta2", _optional(_pfloat), "", "if set (> beta), add a coupled distance column at this beta"),
        _Opt("source", _optional(_int_vector), "", "BFS source (comma ints; default origin)"),
        _Opt("target", _optional(_int_vector), "", "if set, also report the restricted-distance chain to this vertex"),
        _Opt("gamma_bar", _optional(_pfloat), "", "confinement exponent base in (gamma, 1); default (1+gamma)/2"),
        _Opt("k_max", _nnint, "3", "largest k in the restricted-distance chain"),
        _Opt("epsilon", _optional(_pfloat), "", "if set, report the deviation fraction at this tolerance"),
        _Opt("scale", _optional(_pfloat), "", "distance scale for the deviation fraction; default median over the ball"),
    ],
    "figure1": [_SEED_OPT],
    "estimate-phi": _MODEL_OPTS + [
        _BETA_OPT, _NORM_OPT,
        _Opt("r", _pfloat, "2000", "outer annulus radius (> 1)"),
        _Opt("n_replicas", _pint, "8", "independent replicas"),
        _SEED_OPT,
        _Opt("delta", _pfloat, "0.1", "inner annulus cutoff fraction"),
        _JOBS_OPT,
    ],
    "collapse": _MODEL_OPTS + [
        _NORM_OPT,
        _Opt("log_betas", _float_vector, "3,4", "comma list of log(beta) values, each > 1, increasing"),
        _Opt("t_points", _pint, "21", "grid points on [0, 1] (>= 2)"),
        _Opt("n_replicas", _pint, "4", "replicas per cell"),
        _SEED_OPT,
        _Opt("m_offset", _nnint, "4", "dyadic radius offset (log-log periods subtracted)"),
        _Opt("box_radius_cap", _pint, "10000000", "cells needing a larger box are marked missing"),
        _Opt("delta", _pfloat, "0.1", "inner annulus cutoff fraction"),
        _JOBS_OPT,
    ],
    "selfcheck": [],
}

_OUTDIR_HELP = "output directory (default: $LRPLAB_OUTDIR or ./lrplab_out)"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lrplab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, metavar="command")
    sub.required = True
    for command, opts in _OPTIONS.items():
        p = sub.add_parser(command)
        p.add_argument("--config", default=None, help="flat key=value config file")
        p.add_argument("--outdir", default=None, help=_OUTDIR_HELP)
        for opt in opts:
            p.add_argument(f"--{opt.name.replace('_', '-')}", dest=opt.name,
                           default=None, help=f"{opt.help} (default {opt.default!r})")
    return parser


def _read_config_file(path: str) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    entries = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {stripped!r}")
        key, _, value = stripped.partition("=")
        entries[key.strip()] = value.strip()
    return entries


def _resolve(argv):
    """Parse argv into (command, validated config dict, raw string echo, outdir)."""
    ns = _build_parser().parse_args(argv)
    command = ns.command
    opts = _OPTIONS[command]
    known = {opt.name for opt in opts}

    raw = {opt.name: opt.default for opt in opts}
    raw["outdir"] = os.environ.get("LRPLAB_OUTDIR", "lrplab_out")
    if ns.config is not None:
        for key, value in _read_config_file(ns.config).items():
            if key != "outdir" and key not in known:
                raise ConfigError(f"unknown config key {key!r} for command {command}")
            raw[key] = value
    for opt in opts:
        flag = getattr(ns, opt.name)
        if flag is not None:
            raw[opt.name] = flag
    if ns.outdir is not None:
        raw["outdir"] = ns.outdir

    cfg = {}
    for opt in opts:
        try:
            cfg[opt.name] = opt.parse(raw[opt.name])
        except ValueError as exc:
            raise ConfigError(f"{opt.name}: {exc}") from exc
    _FINALIZERS[command](cfg)
    return command, cfg, raw, Path(raw["outdir"])


def _make_params(cfg: dict, beta: float = 1.0, norm: str = "ell2") -> ModelParams:
    try:
        return ModelParams(d=cfg["d"], s=cfg["s"], beta=beta, norm=norm)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _finalize_exponents(cfg: dict) -> None:
    cfg["params"] = _make_params(cfg)
    if cfg["n_max"] < 2:
        raise ConfigError("n_max: must be >= 2")


def _finalize_limit_curve(cfg: dict) -> None:
    cfg["params"] = _make_params(cfg)
    if cfg["n_points"] < 2:
        raise ConfigError("n_points: must be >= 2")


def _finalize_sample(cfg: dict) -> None:
    cfg["params"] = _make_params(cfg, beta=cfg["beta"], norm=cfg["norm"])


def _finalize_distances(cfg: dict) -> None:
    params = _make_params(cfg, beta=cfg["beta"], norm=cfg["norm"])
    cfg["params"] = params
    if cfg["beta2"] is not None and cfg["beta2"] <= cfg["beta"]:
        raise ConfigError(f"beta2: must exceed beta={cfg['beta']} for a coupled ladder")
    gamma, _ = derived_constants(params)
    if cfg["gamma_bar"] is None:
        cfg["gamma_bar"] = (1.0 + gamma) / 2.0
    elif not gamma < cfg["gamma_bar"] < 1.0:
        raise ConfigError(f"gamma_bar: must lie in (gamma, 1) = ({gamma}, 1)")
    if cfg["source"] is None:
        cfg["source"] = (0,) * params.d
    for name in ("source", "target"):
        vec = cfg[name]
        if vec is None:
            continue
        if len(vec) != params.d:
            raise ConfigError(f"{name}: expected {params.d} coordinates, got {len(vec)}")
        if any(abs(c) > cfg["L"] for c in vec):
            raise ConfigError(f"{name}: {vec} lies outside the box of radius {cfg['L']}")


def _finalize_figure1(cfg: dict) -> None:
    pass


def _finalize_estimate_phi(cfg: dict) -> None:
    cfg["params"] = _make_params(cfg, beta=cfg["beta"], norm=cfg["norm"])
    if not cfg["r"] > 1:
        raise ConfigError("r: must be > 1")


def _finalize_collapse(cfg: dict) -> None:
    log_betas = cfg["log_betas"]
    if not log_betas or any(lb <= 1.0 for lb in log_betas):
        raise ConfigError("log_betas: every value must be > 1 (beta > e)")
    if any(a >= b for a, b in zip(log_betas, log_betas[1:])):
        raise ConfigError("log_betas: values must be strictly increasing")
    if cfg["t_points"] < 2:
        raise ConfigError("t_points: must be >= 2")
    base = _make_params(cfg)
    cfg["params_list"] = [
        ModelParams(d=base.d, s=base.s, beta=math.exp(lb), norm=cfg["norm"])
        for lb in log_betas
    ]


def _finalize_selfcheck(cfg: dict) -> None:
    pass


_FINALIZERS = {
    "exponents": _finalize_exponents,
    "limit-curve": _finalize_limit_curve,
    "sample": _finalize_sample,
    "distances": _finalize_distances,
    "figure1": _finalize_figure1,
    "estimate-phi": _finalize_estimate_phi,
    "collapse": _finalize_collapse,
    "selfcheck": _finalize_selfcheck,
}


def _config_hash(command: str, raw: dict) -> str:
    """Hash of the options that determine output content.

    outdir and jobs are execution plumbing: they never change the data, so
    runs differing only in them produce byte-identical files.
    """
    lines = [f"command={command}"] + sorted(
        f"{k}={v}" for k, v in raw.items() if k not in ("outdir", "jobs")
    )
    return hashlib.sha256("\n".join(lines).encode("utf-8")).hexdigest()[:16]


# ---------------------------------------------------------------------------
# Commands


def _cmd_exponents(cfg, config_hash, outdir, created):
    params, n_max = cfg["params"], cfg["n_max"]
    theta = theta_recursive(params, n_max)
    vth = vartheta(params, n_max)
    rows = [
        (n, theta[n], theta_closed_form(params, n), vth[n], block_index(n))
        for n in range(n_max + 1)
    ]
    _write_csv(outdir / "exponents.csv",
               "n (index), theta (hop exponent), theta_closed_form (block formula), "
               "vartheta (shrink exponent), block (dyadic block index of n)",
               config_hash, ["n", "theta", "theta_closed_form", "vartheta", "block_index"],
               rows, created)
    report = ratio_report(params, n_max)
    _write_json(outdir / "ratios.json", {
        "config_hash": config_hash,
        "n_max": report.n_max,
        "vartheta_halving_sup": report.vartheta_halving_sup,
        "vartheta_halving_argmax": report.vartheta_halving_argmax,
        "theta_halving_sup": report.theta_halving_sup,
        "theta_halving_scan_max": report.theta_halving_scan_max,
        "theta_halving_scan_argmax": report.theta_halving_scan_argmax,
        "vartheta_over_theta_sup": report.vartheta_over_theta_sup,
        "vartheta_over_theta_argmax": report.vartheta_over_theta_argmax,
    }, created)


def _cmd_limit_curve(cfg, config_hash, outdir, created):
    params, n_points = cfg["params"], cfg["n_points"]
    t = np.linspace(0.0, 1.0, n_points)
    psi = psi_limit(params, t)
    lam = lambda_of_t(params, t)
    low = lower_curve(params, t)
    rows = list(zip(t.tolist(), psi.tolist(), lam.tolist(), low.tolist()))
    _write_csv(outdir / "limit_curve.csv",
               "t (log-log phase in [0,1]), psi (limit curve), "
               "lambda_t (split weight), lower (psi * 2**t)",
               config_hash, ["t", "psi", "lambda_t", "lower"], rows, created)


def _coord_header(prefix: str, d: int) -> list:
    return [f"{prefix}_{i + 1}" for i in range(d)]


def _cmd_sample(cfg, config_hash, outdir, created):
    params = cfg["params"]
    box = Box(params.d, cfg["L"])
    sample = sample_graph(params, box, cfg["seed"])
    heads = box.coords_of(sample.long_edges[:, 0])
    tails = box.coords_of(sample.long_edges[:, 1])
    rows = ((*heads[k].tolist(), *tails[k].tolist()) for k in range(sample.n_long_edges))
    path = outdir / "edges.csv"
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("# columns: x_1..x_d, y_1..y_d (endpoints of one long edge; "
                 "nearest-neighbor edges are implicit)\n")
        fh.write(f"# params: d={params.d} s={_fmt(params.s)} beta={_fmt(params.beta)} "
                 f"norm={params.norm} kernel={params.kernel.kind}; "
                 f"box_radius={box.radius}; seed={cfg['seed']}; generator=philox4x64-v1\n")
        fh.write(f"# config_hash={config_hash}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(_coord_header("x", params.d) + _coord_header("y", params.d))
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
    created.append(path)
    if cfg["z_draws"] > 0:
        rng = np.random.default_rng([cfg["seed"], _Z_STREAM_TAG])
        draws = sample_z(params, cfg["eta"], rng, size=cfg["z_draws"])
        rows = [(k, *draws[k].tolist(), float(norm_value(draws[k], params.norm)))
                for k in range(cfg["z_draws"])]
        _write_csv(outdir / "z_samples.csv",
                   "draw (index); z_* (coordinates); radius (kernel norm of the draw)",
                   config_hash, ["draw"] + _coord_header("z", params.d) + ["radius"],
                   rows, created)


def _cmd_distances(cfg, config_hash, outdir, created):
    params, L = cfg["params"], cfg["L"]
    box = Box(params.d, L)
    source = np.asarray(cfg["source"], dtype=np.int64)
    if cfg["beta2"] is None:
        sample = sample_graph(params, box, cfg["seed"])
        extra_fields = []
    else:
        params2 = ModelParams(d=params.d, s=params.s, beta=cfg["beta2"], norm=params.norm,
                              kernel=params.kernel)
        sample, sample2 = sample_graph_coupled([params, params2], box, cfg["seed"])
        extra_fields = [distances_from(sample2, source)]
    field = distances_from(sample, source)
    coords = box.coords_of(np.arange(box.n_vertices))
    dist_cols = [field.dist] + [f.dist for f in extra_fields]
    rows = ((i, *coords[i].tolist(), *(int(col[i]) for col in dist_cols))
            for i in range(box.n_vertices))
    doc = "index (vertex index); x_* (lattice coordinates); dist (chemical distance from the source)"
    header = ["index"] + _coord_header("x", params.d) + ["dist"]
    if extra_fields:
        doc += "; dist_beta2 (coupled sample at beta2, pointwise <= dist)"
        header.append("dist_beta2")
    _write_csv(outdir / "distances.csv", doc, config_hash, header, rows, created)

    nrm = norm_value(coords - source, params.norm)
    ball = nrm <= L
    ball_dists = field.dist[ball].astype(np.float64)
    median = float(np.median(ball_dists))
    summary = {
        "config_hash": config_hash,
        "source": list(cfg["source"]),
        "n_vertices": box.n_vertices,
        "n_long_edges": sample.n_long_edges,
        "median_distance_in_ball": median,
        "max_distance": int(field.dist.max()),
    }
    if cfg["epsilon"] is not None:
        scale = cfg["scale"] if cfg["scale"] is not None else median
        summary["deviation_scale"] = scale
        summary["deviation_epsilon"] = cfg["epsilon"]
        summary["deviation_fraction"] = theorem1_fraction(field, L, scale, cfg["epsilon"])
    _write_json(outdir / "summary.json", summary, created)

    if cfg["target"] is not None:
        target = np.asarray(cfg["target"], dtype=np.int64)
        chain = [("ell1", int(norm_value(target - source, "ell1")))]
        chain.append(("D", int(distance_pair(sample, source, target))))
        forward = restricted_distance(sample, source, target)
        backward = restricted_distance(sample, target, source)
        chain.append(("D_restricted_forward", forward.value))
        chain.append(("D_restricted_backward", backward.value))
        for k in range(cfg["k_max"] + 1):
            res = restricted_k_distance(sample, source, target, k, cfg["gamma_bar"])
            chain.append((f"D_restricted_k{k}", res.value))
        _write_csv(outdir / "chain.csv",
                   "name (distance variant); value (hops; inf if unreachable under the constraint)",
                   config_hash, ["name", "value"],
                   [(name, float(v) if v == math.inf else int(v)) for name, v in chain],
                   created)


def _cmd_figure1(cfg, config_hash, outdir, created):
    d, s, L = 1, 1.5, 2000
    params_list = [ModelParams(d=d, s=s, beta=1.0), ModelParams(d=d, s=s, beta=5.0)]
    box = Box(d, L)
    samples = sample_graph_coupled(params_list, box, cfg["seed"])
    origin = np.zeros(d, dtype=np.int64)
    fields = [distances_from(sm, origin) for sm in samples]
    xs = box.coords_of(np.arange(box.n_vertices))[:, 0]
    rows = zip(xs.tolist(), fields[0].dist.tolist(), fields[1].dist.tolist())
    _write_csv(outdir / "figure1.csv",
               "x (lattice coordinate); dist_beta1, dist_beta5 (chemical distance from 0; "
               "coupled seeds, so dist_beta5 <= dist_beta1)",
               config_hash, ["x", "dist_beta1", "dist_beta5"], rows, created)
    edge_rows = []
    for pm, sm in zip(params_list, samples):
        coords = box.coords_of(sm.long_edges.reshape(-1)).reshape(-1, 2)
        for k in range(sm.n_long_edges):
            edge_rows.append((pm.beta, int(coords[k, 0]), int(coords[k, 1])))
    _write_csv(outdir / "long_edges.csv",
               "beta; u, v (endpoints of one long edge, the arcs of the distance profile)",
               config_hash, ["beta", "u", "v"], edge_rows, created)


def _cmd_estimate_phi(cfg, config_hash, outdir, created):
    params = cfg["params"]
    executor = ProcessPoolExecutor(max_workers=cfg["jobs"]) if cfg["jobs"] > 1 else None
    try:
        est = estimate_phi(params, cfg["r"], cfg["n_replicas"], cfg["seed"],
                           delta=cfg["delta"], executor=executor)
    finally:
        if executor is not None:
            executor.shutdown()
    rows = [
        (params.beta, est.r, i, rec.seed, rec.phi_hat, rec.n_points, rec.annulus_fraction)
        for i, rec in enumerate(est.records)
    ]
    _write_csv(outdir / "phi_records.csv",
               "beta; r (outer radius); replica (index); seed; phi_hat (median distance "
               "over the annulus / (log r)**Delta); n_points (annulus size); "
               "annulus_fraction (share of box vertices in the annulus)",
               config_hash,
               ["beta", "r", "replica", "seed", "phi_hat", "n_points", "annulus_fraction"],
               rows, created)
    _write_csv(outdir / "phi_summary.csv",
               "beta; r; n_replicas; seed0; phi_hat (replica mean); ci_low, ci_high "
               "(percentile bootstrap, 95%)",
               config_hash,
               ["beta", "r", "n_replicas", "seed0", "phi_hat", "ci_low", "ci_high"],
               [(params.beta, est.r, est.n_replicas, est.seed0, est.phi_hat, est.ci_low, est.ci_high)],
               created)


def _cmd_collapse(cfg, config_hash, outdir, created):
    executor = ProcessPoolExecutor(max_workers=cfg["jobs"]) if cfg["jobs"] > 1 else None
    t_grid = np.linspace(0.0, 1.0, cfg["t_points"]).tolist()
    try:
        report = collapse_report(cfg["params_list"], t_grid, cfg["n_replicas"], cfg["seed"],
                                 m_offset=cfg["m_offset"], delta=cfg["delta"],
                                 box_radius_cap=cfg["box_radius_cap"], executor=executor)
    finally:
        if executor is not None:
            executor.shutdown()
    record_rows = []
    for cell in report.cells:
        for i, phi in enumerate(cell.replica_phis):
            record_rows.append((cell.beta, cell.t, i, cfg["seed"] + i, phi))
    _write_csv(outdir / "collapse_records.csv",
               "beta; t (log-log phase); replica (index); seed; phi_hat (single-replica estimate)",
               config_hash, ["beta", "t", "replica", "seed", "phi_hat"], record_rows, created)
    cell_rows = [
        (c.beta, c.t, c.r, c.phi_hat, c.ci_low, c.ci_high, c.value, c.limit, c.missing, c.reason)
        for c in report.cells
    ]
    _write_csv(outdir / "collapse_cells.csv",
               "beta; t; r (probe radius); phi_hat (replica mean); ci_low, ci_high; "
               "value ((log beta)**Delta * phi_hat); limit (explicit limit curve at t); "
               "missing (1 if the cell was infeasible); reason",
               config_hash,
               ["beta", "t", "r", "phi_hat", "ci_low", "ci_high", "value", "limit", "missing", "reason"],
               cell_rows, created)
    summary_rows = [
        (sm.beta, sm.n_cells, sm.n_missing, sm.max_abs_discrepancy, sm.mean_abs_discrepancy,
         sm.mean_abs_ci_low, sm.mean_abs_ci_high, sm.rank_correlation)
        for sm in report.summaries
    ]
    _write_csv(outdir / "collapse_summary.csv",
               "beta; n_cells; n_missing; max_abs_discrepancy, mean_abs_discrepancy "
               "(|value - limit| over non-missing cells); mean_abs_ci_low, mean_abs_ci_high "
               "(bootstrap over replicas); rank_correlation (Spearman of value vs limit)",
               config_hash,
               ["beta", "n_cells", "n_missing", "max_abs_discrepancy", "mean_abs_discrepancy",
                "mean_abs_ci_low", "mean_abs_ci_high", "rank_correlation"],
               summary_rows, created)


# ---------------------------------------------------------------------------
# selfcheck


def _reference_distances(sample) -> np.ndarray:
    """Plain dict-and-deque BFS from the origin, as an independent reference."""
    box = sample.box
    n = box.n_vertices
    coords = box.coords_of(np.arange(n))
    adj = [[] for _ in range(n)]
    for i in range(n):
        for axis in range(box.d):
            for step in (-1, 1):
                y = coords[i].copy()
                y[axis] += step
                if box.contains(y):
                    adj[i].append(int(box.index_of(y)))
    for u, v in sample.long_edges:
        adj[u].append(int(v))
        adj[v].append(int(u))
    dist = np.full(n, -1, dtype=np.int64)
    start = int(box.index_of(np.zeros(box.d, dtype=np.int64)))
    dist[start] = 0
    queue = deque([start])
    while queue:
        u = queue.popleft()
        for w in adj[u]:
            if dist[w] < 0:
                dist[w] = dist[u] + 1
                queue.append(w)
    return dist


def _selfcheck_checks():
    checks = []

    def run(name, fn):
        try:
            fn()
            checks.append((name, True, ""))
        except AssertionError as exc:
            checks.append((name, False, _one_line(str(exc))))

    def exponent_identities():
        for d, s in ((1, 1.5), (2, 3.0)):
            pm = ModelParams(d=d, s=s, beta=1.0)
            n_max = 511
            rec = theta_recursive(pm, n_max)
            fast = theta_fast(pm, n_max)
            closed = np.array([theta_closed_form(pm, n) for n in range(n_max + 1)])
            scale = np.maximum(rec, 1.0)
            assert np.max(np.abs(rec - fast) / scale) <= 1e-12, f"recursive vs fast at d={d}"
            assert np.max(np.abs(rec - closed) / scale) <= 1e-12, f"recursive vs closed form at d={d}"
            n = np.arange(1, (n_max - 1) // 2 + 1)
            resid = rec[2 * n + 1] + rec[2 * n - 1] - 2 * rec[2 * n]
            assert np.max(np.abs(resid)) <= 1e-12, f"three-term identity at d={d}"

    def limit_endpoints():
        for d, s in ((1, 1.5), (2, 3.0)):
            pm = ModelParams(d=d, s=s, beta=1.0)
            _, delta_exp = derived_constants(pm)
            edge = (2 * d - s) ** delta_exp
            assert abs(float(psi_limit(pm, 0.0)) - edge) <= 1e-12, "psi(0) endpoint"
            assert abs(float(psi_limit(pm, 1.0)) - edge) <= 1e-12, "psi(1) endpoint"
            t = np.linspace(0.0, 1.0, 101)
            lhs = (2.0 - lambda_of_t(pm, t)) * 2.0**-t * (2 * d - s) ** delta_exp
            assert np.max(np.abs(lhs - psi_limit(pm, t))) <= 1e-10, "composite-map identity"

    def ratio_lemmas():
        pm = ModelParams(d=1, s=1.5, beta=1.0)
        gamma, _ = derived_constants(pm)
        report = ratio_report(pm, 200)
        assert abs(report.vartheta_halving_sup - 2 * gamma / (1 + gamma)) <= 1e-10, "vartheta ratio sup"
        assert report.theta_halving_scan_max < gamma, "theta ratio strictly below gamma"
        assert abs(report.theta_halving_sup - gamma) <= 1e-10, "theta ratio sup"
        assert report.vartheta_over_theta_argmax in (1, 2), "cross ratio argmax"

    def c0_normalization():
        pm1 = ModelParams(d=1, s=1.5, beta=1.0)
        est = compute_c0(pm1, method="quadrature", budget=10**4)
        assert abs(est.value - math.pi) / math.pi <= 1e-9, f"c0 d=1: {est.value}"
        pm2 = ModelParams(d=2, s=3.0, beta=1.0)
        est2 = compute_c0(pm2, method="quadrature", budget=10**4)
        assert abs(est2.value - math.pi**3 / 4) / est2.value <= 1e-9, f"c0 d=2: {est2.value}"

    def bfs_reference():
        for k in range(25):
            d, L = (1, 25) if k % 2 == 0 else (2, 3)
            pm = ModelParams(d=d, s=1.5 * d, beta=1.0 + 0.2 * k)
            sm = sample_graph(pm, Box(d, L), seed=1000 + k)
            field = distances_from(sm, np.zeros(d, dtype=np.int64))
            ref = _reference_distances(sm)
            assert np.array_equal(field.dist, ref), f"graph {k} mismatch"

    def restricted_witnesses():
        pm = ModelParams(d=1, s=1.5, beta=1.0)
        box = Box(1, 12)
        sm = graph_from_edges(pm, box, np.array([[[0], [12]], [[12], [5]]]))
        assert distance_pair(sm, np.array([0]), np.array([5])) == 2, "D witness"
        assert restricted_distance(sm, np.array([0]), np.array([5])).value == 5, "forward witness"
        assert restricted_distance(sm, np.array([5]), np.array([0])).value == 2, "backward witness"

    run("exponent identities", exponent_identities)
    run("limit-curve endpoints and composite identity", limit_endpoints)
    run("ratio lemmas", ratio_lemmas)
    run("c0 normalization", c0_normalization)
    run("BFS matches reference implementation", bfs_reference)
    run("restricted-distance witnesses", restricted_witnesses)
    return checks


def _cmd_selfcheck(cfg, config_hash, outdir, created):
    checks = _selfcheck_checks()
    for name, passed, detail in checks:
        print(f"{'ok' if passed else 'FAIL'}: {name}" + (f" ({detail})" if detail else ""))
    failed = [name for name, passed, _ in checks if not passed]
    if failed:
        raise RuntimeError(f"selfcheck failed: {', '.join(failed)}")
    _write_json(outdir / "selfcheck.json", {
        "config_hash": config_hash,
        "checks": [{"name": name, "passed": passed} for name, passed, _ in checks],
        "all_passed": True,
    }, created)


_COMMANDS = {
    "exponents": _cmd_exponents,
    "limit-curve": _cmd_limit_curve,
    "sample": _cmd_sample,
    "distances": _cmd_distances,
    "figure1": _cmd_figure1,
    "estimate-phi": _cmd_estimate_phi,
    "collapse": _cmd_collapse,
    "selfcheck": _cmd_selfcheck,
}


def _write_manifest(command, raw, config_hash, outdir, created, wall_time):
    _write_json(outdir / "manifest.json", {
        "command": command,
        "config": dict(sorted(raw.items())),
        "config_hash": config_hash,
        "outputs": [p.name for p in created],
        "versions": {
            "python": sys.version.split()[0],
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "lrplab": __version__,
        },
        "wall_time_s": wall_time,
        "timestamp_utc": datetime.now(timezone.utc).isoformat(),
    }, created)


def main(argv=None) -> int:
    t0 = time.perf_counter()
    try:
        command, cfg, raw, outdir = _resolve(argv)
    except ConfigError as exc:
        print(f"error: config: {_one_line(str(exc))}", file=sys.stderr)
        return 2
    created = []
    try:
        outdir.mkdir(parents=True, exist_ok=True)
        config_hash = _config_hash(command, raw)
        _COMMANDS[command](cfg, config_hash, outdir, created)
        _write_manifest(command, raw, config_hash, outdir, created, time.perf_counter() - t0)
    except Exception as exc:  # deliberate catch-all: the CLI contract is exit codes
        for path in created:
            path.unlink(missing_ok=True)
        print(f"error: runtime: {_one_line(str(exc))}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
