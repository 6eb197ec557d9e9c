"""Experiment runners behind the command-line interface.

Each ``run_*`` function takes a validated :class:`ExperimentConfig` and
returns a :class:`RunResult` holding a JSON-ready summary and zero or more
tables; :func:`write_outputs` puts them on disk.  Nothing here depends on the
thread count except wall-clock time.
"""
from __future__ import annotations

import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.linalg

from . import __version__
from .channel import coefficients, long_time_coefficients
from .config import ExperimentConfig, build_observable, build_state
from .efficiency import (
    EstimationBudget,
    build_form_factor_table,
    characteristic_times,
    f5_grid_maximum,
    f5_peak_value,
    form_factors,
    leg_weights,
    sample_complexity,
    scrambling_beat_times,
    variance_bound_linear,
    variance_bound_nonlinear,
)
from .errors import ConfigError, FitError
from .io import ensure_dir, load_snapshots, persist_snapshots, write_csv, write_json
from .rmt import r_factor
from .shadows import (
    ShadowCollection,
    estimate_linear,
    estimate_quadratic,
    sample_shadows,
    scan_single_shot_values,
    shadows_from_snapshots,
    swap_operator,
    variance_std_error,
)

log = logging.getLogger("hamshadow")

MAX_FIT_CONDITION = 1e10


@dataclass(frozen=True)
class FitResult:
    c1: float
    c2: float
    c3: float
    mean_squared_error: float
    grid_size: int


def fit_variance_ansatz(times, variances, dim) -> FitResult:
    """Least-squares fit of c1 f4(t) + c2 f5(t) + c3 to measured variances.

    Solves the normal equations after scaling every design column to unit
    norm; a singular or badly conditioned design raises :class:`FitError`.
    """
    t = np.asarray(times, dtype=float)
    y = np.asarray(variances, dtype=float)
    if t.ndim != 1 or t.shape != y.shape:
        raise FitError("times and variances must be 1-d arrays of equal length")
    if len(t) < 4:
        raise FitError(f"need at least 4 grid points, got {len(t)}")
    if not np.all(np.isfinite(y)):
        raise FitError("variances must be finite")
    ff = form_factors(t, dim)
    x = np.column_stack([ff["f4"], ff["f5"], np.ones_like(t)])
    scale = np.linalg.norm(x, axis=0)
    if np.any(scale == 0):
        raise FitError("design matrix has an all-zero column")
    xs = x / scale
    gram = xs.T @ xs
    if not np.all(np.isfinite(gram)) or np.linalg.cond(gram) > MAX_FIT_CONDITION:
        raise FitError("design matrix is rank-deficient on this time grid")
    coef = scipy.linalg.solve(gram, xs.T @ y, assume_a="pos") / scale
    resid = y - x @ coef
    return FitResult(float(coef[0]), float(coef[1]), float(coef[2]),
                     float(np.mean(resid ** 2)), len(t))


def loglog_slope(x, y, base=math.e):
    """Least-squares slope of log(y) against log(x)."""
    lx = np.log(np.asarray(x, dtype=float)) / math.log(base)
    ly = np.log(np.asarray(y, dtype=float)) / math.log(base)
    return float(np.polyfit(lx, ly, 1)[0])


def _log2_slope_vs_n(ns, y):
    return float(np.polyfit(np.asarray(ns, dtype=float), np.log2(np.asarray(y, dtype=float)), 1)[0])


@dataclass
class RunResult:
    experiment: str
    summary: dict
    tables: dict = field(default_factory=dict)  # name -> (columns, rows)
    snapshots: list | None = None
    arrays: dict = field(default_factory=dict)


def _header(cfg: ExperimentConfig):
    return {
        "experiment": cfg.experiment,
        "config": cfg.to_dict(semantic_only=True),
        "config_hash": cfg.config_hash(),
        "version": __version__,
    }


# --------------------------------------------------------------------------
# Reconstruction
# --------------------------------------------------------------------------

def _matrix_rows(m, target):
    dim = m.shape[0]
    for i in range(dim):
        for j in range(dim):
            yield {"row": i, "col": j, "re": float(m[i, j].real), "im": float(m[i, j].imag),
                   "target_re": float(target[i, j].real), "target_im": float(target[i, j].imag)}


def run_reconstruct(cfg: ExperimentConfig) -> RunResult:
    n = cfg.num_qubits
    dim = 1 << n
    rho = build_state(cfg.state, n)
    obs = build_observable(cfg.observable, n)
    start = time.perf_counter()
    if cfg.replay:
        if not os.path.exists(cfg.replay):
            raise ConfigError(f"snapshot file {cfg.replay} does not exist")
        snaps = load_snapshots(cfg.replay)
        if any(s.num_qubits != n for s in snaps):
            raise ConfigError(f"snapshot file does not match num_qubits={n}")
        col = shadows_from_snapshots(snaps, cfg.threads)
        t = snaps[0].t
    else:
        t = cfg.t
        col = sample_shadows(rho, t, cfg.snapshots, cfg.seed, cfg.threads)
    log.info("simulated %d snapshots in %.1fs", len(col), time.perf_counter() - start)

    unbiased = col.mean_matrix()
    ltc = long_time_coefficients(t, dim)
    m = len(col)
    two_design = ShadowCollection(col.snapshots, col.vectors, np.full(m, ltc.alpha),
                                  np.full(m, ltc.beta), {t: ltc}).mean_matrix()
    target = rho.matrix
    est = estimate_linear(col, obs)
    c = coefficients(t, dim)
    summary = _header(cfg) | {
        "t": t,
        "num_snapshots": m,
        "observable": obs.label,
        "estimate": est.estimate,
        "stdError": est.std_error,
        "alpha": c.alpha,
        "beta": c.beta,
        "max_error_unbiased": float(np.max(np.abs(unbiased - target))),
        "max_error_two_design": float(np.max(np.abs(two_design - target))),
        "corner_unbiased": float(unbiased[0, dim - 1].real),
        "corner_two_design": float(two_design[0, dim - 1].real),
        # derived, not measured: bias factor (D+1)/alpha applied to the target corner
        "corner_two_design_expected": float(target[0, dim - 1].real * (dim + 1) / c.alpha),
        "trace_unbiased": float(np.trace(unbiased).real),
    }
    cols = ("row", "col", "re", "im", "target_re", "target_im")
    tables = {
        "reconstruct_unbiased": (cols, list(_matrix_rows(unbiased, target))),
        "reconstruct_two_design": (cols, list(_matrix_rows(two_design, target))),
    }
    return RunResult(cfg.experiment, summary, tables, col.snapshots,
                     {"unbiased": unbiased, "two_design": two_design})


# --------------------------------------------------------------------------
# Variance scans
# --------------------------------------------------------------------------

_SCAN_COLUMNS = ("N", "D", "t", "estimate", "estimate_se", "variance", "variance_se", "bound", "M")


def _scan_rows(rho, obs, n, times, cfg):
    vals = scan_single_shot_values(rho, obs, times, cfg.snapshots, cfg.seed, cfg.threads)
    rows = []
    for t, v in zip(times, vals):
        m = len(v)
        mean = math.fsum(v) / m
        var = math.fsum((v - mean) ** 2) / (m - 1)
        rows.append({
            "N": n, "D": 1 << n, "t": float(t),
            "estimate": mean, "estimate_se": math.sqrt(var / m),
            "variance": var, "variance_se": variance_std_error(v),
            "bound": variance_bound_linear(obs, rho, t), "M": m,
        })
    return rows


def run_variance_scan_time(cfg: ExperimentConfig) -> RunResult:
    n = cfg.num_qubits
    rho = build_state(cfg.state, n)
    obs = build_observable(cfg.observable, n)
    start = time.perf_counter()
    rows = _scan_rows(rho, obs, n, cfg.times, cfg)
    log.info("time scan over %d points in %.1fs", len(rows), time.perf_counter() - start)
    ts = [r["t"] for r in rows]
    vs = [r["variance"] for r in rows]
    summary = _header(cfg) | {"points": len(rows)}
    summary["loglog_slope"] = loglog_slope(ts, vs) if len(rows) >= 2 else math.nan
    if cfg.fit:
        summary["fit"] = asdict(fit_variance_ansatz(ts, vs, 1 << n))
    return RunResult(cfg.experiment, summary, {"variance_scan_time": (_SCAN_COLUMNS, rows)})


def run_variance_scan_dim(cfg: ExperimentConfig) -> RunResult:
    rows = []
    for n in cfg.qubits:
        start = time.perf_counter()
        rho = build_state(cfg.state, n)
        obs = build_observable(cfg.observable, n)
        rows.extend(_scan_rows(rho, obs, n, [cfg.t], cfg))
        log.info("N=%d done in %.1fs", n, time.perf_counter() - start)
    summary = _header(cfg) | {"points": len(rows)}
    summary["log2_slope_vs_N"] = (
        _log2_slope_vs_n([r["N"] for r in rows], [r["variance"] for r in rows])
        if len(rows) >= 2 else math.nan
    )
    return RunResult(cfg.experiment, summary, {"variance_scan_dim": (_SCAN_COLUMNS, rows)})


# --------------------------------------------------------------------------
# Analytic tables
# --------------------------------------------------------------------------

def run_form_factors(cfg: ExperimentConfig) -> RunResult:
    dims = cfg.dims or (1 << cfg.num_qubits,)
    rows = []
    for d in dims:
        table = build_form_factor_table(d, cfg.times, cfg.threads)
        rows.extend(table.rows())
    columns = ("D", "t") + tuple(c for c in rows[0] if c not in ("D", "t"))
    summary = _header(cfg) | {"rows": len(rows)}
    return RunResult(cfg.experiment, summary, {"form_factors": (columns, rows)})


def run_beats(cfg: ExperimentConfig) -> RunResult:
    dims = cfg.dims or (1 << cfg.num_qubits,)
    tk = scrambling_beat_times(cfg.beats)
    rows = []
    for d in dims:
        ff = form_factors(tk, d)
        for k, t in enumerate(tk, start=1):
            rows.append({"D": d, "k": k, "t_k": float(t), "r": float(r_factor(t)),
                         "f4": float(ff["f4"][k - 1]), "f5": float(ff["f5"][k - 1]),
                         "F_d": float(ff["f4"][k - 1])})
    peaks = {}
    for d in dims:
        p = f5_peak_value(d)
        t_star, f_star = f5_grid_maximum(d)
        ct = characteristic_times(d)
        peaks[str(d)] = {
            "f5_peak_formula": p.peak, "offset_scale": p.offset_scale,
            "asymptotic_only": p.asymptotic_only, "f5_grid_max": f_star, "f5_grid_argmax": t_star,
            "t_scramble": ct.t_scramble, "t_beat_decay": ct.t_beat_decay,
            "t_f5_stage1": ct.t_f5_stage1, "t_f5_stage2": ct.t_f5_stage2,
        }
    summary = _header(cfg) | {"beat_times": [float(x) for x in tk], "per_dim": peaks}
    return RunResult(cfg.experiment, summary,
                     {"beats": (("D", "k", "t_k", "r", "f4", "f5", "F_d"), rows)})


def two_design_variance(obs, rho):
    """Leading Haar/Clifford variance Tr(O0^2) + 2 Tr(O0^2 rho) of the traceless part O0."""
    o = np.asarray(getattr(obs, "matrix", obs), dtype=complex)
    dim = o.shape[0]
    o0 = o - np.trace(o) / dim * np.eye(dim)
    o2 = o0 @ o0
    r = np.asarray(getattr(rho, "matrix", rho), dtype=complex)
    return float(np.real(np.trace(o2) + 2.0 * np.trace(o2 @ r)))


def run_complexity(cfg: ExperimentConfig) -> RunResult:
    n = cfg.num_qubits
    rho = build_state(cfg.state, n)
    obs = build_observable(cfg.observable, n)
    budget = EstimationBudget(cfg.epsilon, cfg.delta)
    haar = two_design_variance(obs, rho)
    haar_count = sample_complexity(haar, budget)
    rows = []
    for t in cfg.times:
        bound = variance_bound_linear(obs, rho, t)
        count = sample_complexity(bound, budget) if bound > 0 else 0
        rows.append({"t": float(t), "variance_bound": bound, "samples": count,
                     "two_design_samples": haar_count, "ratio": count / haar_count})
    summary = _header(cfg) | {"two_design_variance": haar, "two_design_samples": haar_count}
    return RunResult(cfg.experiment, summary,
                     {"complexity": (("t", "variance_bound", "samples", "two_design_samples", "ratio"), rows)})


def kernel_variance_disjoint(shadows, obs2):
    """Variance of the two-copy kernel over disjoint pairs (2i, 2i+1), with its standard error.

    Disjoint pairs are independent, so the usual fourth-moment standard error applies.
    """
    m = len(shadows) // 2
    if m < 4:
        raise ConfigError("need at least 8 shadows for the kernel variance")
    left = shadows[0:2 * m:2]
    right = shadows[1:2 * m:2]
    o2 = np.asarray(getattr(obs2, "matrix", obs2), dtype=complex)
    dim = shadows.dim
    t4 = o2.reshape(dim, dim, dim, dim)
    a = np.array([s.matrix for s in left])
    b = np.array([s.matrix for s in right])
    w = np.einsum("bdac,mab->mcd", t4, a)
    h = np.real(np.einsum("mcd,mcd->m", w, b))
    c = h - h.mean()
    return float(np.dot(c, c) / (m - 1)), variance_std_error(h), h


def run_nonlinear_demo(cfg: ExperimentConfig) -> RunResult:
    n = cfg.num_qubits
    dim = 1 << n
    rho = build_state(cfg.state, n)
    swap = swap_operator(n)
    rows = []
    for t in cfg.times:
        col = sample_shadows(rho, t, cfg.snapshots, cfg.seed, cfg.threads)
        q = estimate_quadratic(col, swap, cfg.pair_budget, cfg.seed)
        kvar, kvar_se, _ = kernel_variance_disjoint(col, swap)
        bound = variance_bound_nonlinear(swap, t, 2, dim)
        rows.append({"t": float(t), "purity": q.estimate, "purity_se": q.std_error,
                     "purity_exact": float(np.real(np.trace(rho.matrix @ rho.matrix))),
                     "kernel_variance": kvar, "kernel_variance_se": kvar_se,
                     "bound": bound, "pairs": q.n_pairs})
    summary = _header(cfg) | {"weights_t0": {f"{a}{b}": v for (a, b), v in leg_weights(cfg.t, dim).items()}}
    cols = ("t", "purity", "purity_se", "purity_exact", "kernel_variance", "kernel_variance_se",
            "bound", "pairs")
    return RunResult(cfg.experiment, summary, {"nonlinear_demo": (cols, rows)})


RUNNERS = {
    "reconstruct": run_reconstruct,
    "variance-scan-time": run_variance_scan_time,
    "variance-scan-dim": run_variance_scan_dim,
    "form-factors": run_form_factors,
    "beats": run_beats,
    "complexity": run_complexity,
    "nonlinear-demo": run_nonlinear_demo,
}


def run_experiment(cfg: ExperimentConfig) -> RunResult:
    return RUNNERS[cfg.experiment](cfg)


def write_outputs(result: RunResult, cfg: ExperimentConfig, save_snapshots=None):
    """Write ``<name>.csv`` per table, ``summary.json`` and optionally ``snapshots.ndjson``."""
    out = ensure_dir(cfg.out)
    comment = f"config_hash={cfg.config_hash()} version={__version__}"
    paths = {}
    for name, (columns, rows) in result.tables.items():
        p = os.path.join(out, f"{name}.csv")
        write_csv(p, columns, rows, comment)
        paths[name] = p
    p = os.path.join(out, "summary.json")
    write_json(p, result.summary)
    paths["summary"] = p
    save = cfg.save_snapshots if save_snapshots is None else save_snapshots
    if save and result.snapshots is not None:
        p = os.path.join(out, "snapshots.ndjson")
        persist_snapshots(result.snapshots, p)
        paths["snapshots"] = p
    return paths

