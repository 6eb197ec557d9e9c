"""Variance form factors, variance bounds and sample-complexity estimates.

The eight form factors are rational functions of u = r(t)^2.  They are
evaluated in factored form: the common (1 - u)^2 in f1 cancels exactly, f6
reduces to u / D, and the genuinely divergent f3 and f8 use 1 - u computed
from the series of 1 - r(t), so they keep full relative accuracy down to
t ~ 1e-8 and return ``inf`` only at t = 0.
"""
from __future__ import annotations

import functools
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from ._parallel import ordered_map
from .channel import decompose, min_invertible_time
from .errors import DomainError
from .qmath import bessel_j1_zeros
from .rmt import one_minus_r, r_factor

FORM_FACTOR_NAMES = tuple(f"f{i}" for i in range(1, 9))
MAX_NONLINEAR_DIM = 4096
SLOPE_STEP = 1e-5
# r at the f5 peak is (3/D)^(1/4); above this the local linearisation of r is poor.
F5_LINEAR_REGIME_R = 0.1


def _check_time(t):
    arr = np.asarray(t, dtype=float)
    if np.any(~(arr >= 0)):
        raise DomainError("time must be non-negative")
    return arr


def _one_minus_u(t):
    """1 - r(t)^2 = (1 - r)(1 + r), accurate near t = 0."""
    if np.ndim(t) == 0:
        omr = one_minus_r(float(t))
        return omr * (2.0 - omr)
    omr = np.array([one_minus_r(x) for x in np.ravel(t)]).reshape(np.shape(t))
    return omr * (2.0 - omr)


def form_factors(t, dim):
    """All eight form factors at time(s) ``t`` for Hilbert-space dimension ``dim``."""
    t = _check_time(t)
    d = float(dim)
    r = np.asarray(r_factor(t), dtype=float)
    u = r * r
    omu = np.asarray(_one_minus_u(t), dtype=float)
    du2 = d * u * u
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        f1 = (1.0 + 2.0 * u) / (1.0 + u) ** 2
        f3 = np.where(omu > 0, 2.0 * du2 / (omu * (1.0 + u) ** 2), np.inf)
        f4 = 1.0 / (1.0 + du2)
        f5 = (2.0 + d * d * u ** 3 + 6.0 * du2) / (1.0 + du2) ** 2
        f6 = u / d
        f7 = u ** 3 / (1.0 + du2)
        f8 = np.where(omu > 0, (2.0 * du2 * omu + 2.0) / ((1.0 + du2) * omu * (1.0 + u)), np.inf)
    vals = (f1, 2.0 * f1, f3, f4, f5, f6, f7, f8)
    if t.ndim == 0:
        return {name: float(v) for name, v in zip(FORM_FACTOR_NAMES, vals)}
    return dict(zip(FORM_FACTOR_NAMES, vals))


def form_factor(index, t, dim):
    if isinstance(index, bool) or int(index) != index or not 1 <= index <= 8:
        raise DomainError(f"form factor index must be in 1..8, got {index!r}")
    return form_factors(t, dim)[f"f{int(index)}"]


@functools.lru_cache(maxsize=64)
def _min_time(dim):
    return min_invertible_time(dim)


def sample_form_factor_pauli(kind, t, dim):
    """Leading-order sample form factor of a Pauli observable.

    ``kind`` is ``"diagonal"`` (1 / (1 + D r^4)) or ``"offDiagonal"`` (1 / (1 - r^4)).
    """
    t = float(_check_time(t))
    r4 = r_factor(t) ** 4
    if kind in ("diagonal", "d"):
        return 1.0 / (1.0 + dim * r4)
    if kind in ("offDiagonal", "off_diagonal", "o"):
        if t == 0.0 or t < _min_time(int(dim)):
            raise DomainError(f"off-diagonal sample form factor diverges at t={t!r}")
        omu = _one_minus_u(t)
        return 1.0 / (omu * (2.0 - omu))
    raise DomainError(f"unknown observable kind {kind!r}")


@dataclass
class FormFactorTable:
    dim: int
    times: np.ndarray
    values: dict = field(default_factory=dict)

    columns = ("r",) + FORM_FACTOR_NAMES + ("F_o", "F_d", "F_o_full", "F_d_full")

    def rows(self):
        for k, t in enumerate(self.times):
            yield {"D": self.dim, "t": float(t), **{c: float(self.values[c][k]) for c in self.columns}}


def _table_point(t, dim):
    ff = form_factors(t, dim)
    r = r_factor(t)
    omu = _one_minus_u(t)
    r4 = r ** 4
    with np.errstate(divide="ignore"):
        f_o = math.inf if omu == 0 else 1.0 / (omu * (2.0 - omu))
    return {
        "r": r,
        **ff,
        "F_o": f_o,
        "F_d": 1.0 / (1.0 + dim * r4),
        "F_o_full": (ff["f1"] * dim + ff["f2"] + ff["f3"]) / dim,
        "F_d_full": (ff["f4"] * dim + ff["f5"]) / dim,
    }


def build_form_factor_table(dim, times, threads=1) -> FormFactorTable:
    """Evaluate f1..f8 and the Pauli sample form factors on a time grid.

    ``F_o``/``F_d`` are the leading-order Pauli forms; ``*_full`` keep the
    subleading f2 and f5 contributions.
    """
    times = np.asarray(_check_time(times), dtype=float).ravel()
    points = ordered_map(lambda t: _table_point(float(t), dim), times, threads)
    values = {c: np.array([p[c] for p in points]) for c in FormFactorTable.columns}
    return FormFactorTable(int(dim), times, values)


# --------------------------------------------------------------------------
# Variance bounds
# --------------------------------------------------------------------------

def _weighted(f, trace):
    # keeps inf * 0 (t = 0, absent component) out of the sum
    return 0.0 if trace == 0 else f * trace


def linear_variance_terms(obs, rho, t):
    """The five contributions to E[o_hat^2] for a single-copy observable.

    O is split into its off-diagonal part O_o and traceless diagonal part O_d;
    keys are ``oo``, ``dd``, ``od`` (both orderings summed), ``Io`` and ``Id``.
    """
    o = np.asarray(getattr(obs, "matrix", obs), dtype=complex)
    rho_m = np.asarray(getattr(rho, "matrix", rho), dtype=complex)
    dim = o.shape[0]
    if rho_m.shape != o.shape:
        raise DomainError("observable and state dimensions differ")
    op = decompose(o)
    oo, od = op.off_diagonal, op.diagonal
    # the f3 trace takes the dephased state diag(rho) (unit trace): this is what
    # reproduces F_o = 1/(1 - r^4) for Pauli strings and the small-t limit
    dephased = np.diag(np.diagonal(rho_m))
    tr_o = float(np.real(np.trace(o)))
    ff = form_factors(t, dim)

    def tr(a):
        return float(np.real(np.trace(a)))

    oo2 = oo @ oo
    od2 = od @ od
    v_oo = (_weighted(ff["f1"], tr(oo2)) + _weighted(ff["f2"], tr(oo2 @ rho_m))
            + _weighted(ff["f3"], tr(oo2 @ dephased)))
    v_dd = _weighted(ff["f4"], tr(od2)) + _weighted(ff["f5"], tr(od2 @ rho_m))
    v_od = _weighted(ff["f8"], tr(od @ oo @ rho_m) + tr(oo @ od @ rho_m))
    v_io = _weighted(ff["f6"], tr(oo @ rho_m) * tr_o)
    v_id = _weighted(ff["f7"], tr(od @ rho_m) * tr_o)
    return {"oo": v_oo, "dd": v_dd, "od": v_od, "Io": v_io, "Id": v_id}


def variance_bound_linear(obs, rho, t):
    """Upper bound E[Tr(O rho_hat)^2] on the single-shot variance."""
    v = linear_variance_terms(obs, rho, t)
    return v["oo"] + v["dd"] + v["od"] + 2.0 * v["Io"] + 2.0 * v["Id"]


def _leg_projections(op, dim, k):
    """All 3^k leg-wise projections of a D^k x D^k operator, keyed by label tuple."""
    tensor = op.reshape((dim,) * (2 * k))
    eye = np.eye(dim)

    def project(x, leg, label):
        # move (out_leg, in_leg) to the front
        x = np.moveaxis(x, (leg, k + leg), (0, 1))
        diag = np.einsum("ii...->i...", x)
        if label == "I":
            y = np.einsum("i...,ij->ij...", np.broadcast_to(diag.sum(0) / dim, diag.shape), eye)
        elif label == "d":
            y = np.einsum("i...,ij->ij...", diag - diag.sum(0) / dim, eye)
        else:
            y = x.copy()
            ii = np.arange(dim)
            y[ii, ii] = 0.0
        return np.moveaxis(y, (0, 1), (leg, k + leg))

    out = {}
    for labels in itertools.product("Ido", repeat=k):
        x = tensor
        for leg, lab in enumerate(labels):
            x = project(x, leg, lab)
        out[labels] = x.reshape(dim ** k, dim ** k)
    return out


def leg_weights(t, dim):
    """Per-leg weights F_(L,R) with state-dependent traces majorised away.

    The (I, I) pair carries the deterministic identity component of a shadow
    (Tr rho_hat = 1) and gets weight 1/D.
    """
    ff = form_factors(t, dim)
    return {
        ("o", "o"): ff["f1"] + ff["f2"] + ff["f3"],
        ("d", "d"): ff["f4"] + ff["f5"],
        ("I", "o"): ff["f6"],
        ("o", "I"): ff["f6"],
        ("I", "d"): ff["f7"],
        ("d", "I"): ff["f7"],
        ("o", "d"): ff["f8"],
        ("d", "o"): ff["f8"],
        ("I", "I"): 1.0 / dim,
    }


def variance_bound_nonlinear(obs, t, k, dim):
    """Bound on Var Tr(O rho_hat^{(x)k}) from the leg-label expansion (k = 2 or 3)."""
    if k not in (2, 3):
        raise DomainError(f"only k = 2 or 3 copies are supported, got {k!r}")
    if int(dim) != dim or dim < 2 or dim ** k > MAX_NONLINEAR_DIM:
        raise DomainError(f"need 2 <= D and D^k <= {MAX_NONLINEAR_DIM}, got D={dim}, k={k}")
    o = np.asarray(getattr(obs, "matrix", obs), dtype=complex)
    if o.shape != (dim ** k, dim ** k):
        raise DomainError(f"observable must be {dim ** k}x{dim ** k}, got {o.shape}")
    proj = _leg_projections(o, dim, k)
    weights = leg_weights(t, dim)
    pairs = list(weights)
    # Tr(A B) for every label pair, computed once
    traces = {}
    total = 0.0
    for combo in itertools.product(pairs, repeat=k):
        w = math.prod(weights[p] for p in combo)
        left = tuple(p[0] for p in combo)
        right = tuple(p[1] for p in combo)
        key = (left, right)
        if key not in traces:
            traces[key] = float(np.real(np.sum(proj[left] * proj[right].T)))
        tr = traces[key]
        if tr != 0.0:
            total += w * tr
    return total


# --------------------------------------------------------------------------
# Sample complexity and time scales
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class EstimationBudget:
    epsilon: float
    delta: float

    def __post_init__(self):
        if not 0 < self.epsilon < 1:
            raise DomainError(f"epsilon must lie in (0, 1), got {self.epsilon!r}")
        if not self.delta > 0:
            raise DomainError(f"delta must be positive, got {self.delta!r}")


def sample_complexity(variance_bound, budget: EstimationBudget):
    """Chebyshev count ceil(Var / (epsilon delta^2))."""
    if not variance_bound > 0:
        raise DomainError("variance bound must be positive")
    x = variance_bound / (budget.epsilon * budget.delta ** 2)
    # strip representation noise such as 1000.0000000000001
    return int(math.ceil(float(f"{x:.12g}")))


def scrambling_beat_times(k):
    """Times t_k = x_k / 2 at which r(t) vanishes and F_d peaks."""
    return bessel_j1_zeros(k) / 2.0


@dataclass(frozen=True)
class F5Peak:
    peak: float
    offset_scale: float
    slope: float
    asymptotic_only: bool


def f5_peak_value(dim, k=1):
    """Large-D peak of f5 near the k-th beat and its offset from t_k."""
    if dim < 2:
        raise DomainError("dimension must be at least 2")
    tk = scrambling_beat_times(k)[-1]
    slope = (r_factor(tk + SLOPE_STEP) - r_factor(tk - SLOPE_STEP)) / (2.0 * SLOPE_STEP)
    peak = 1.25 + 3.0 * math.sqrt(3.0) * math.sqrt(dim) / 16.0
    offset = 3.0 ** 0.25 / (abs(slope) * dim ** 0.25)
    return F5Peak(peak, offset, slope, (3.0 / dim) ** 0.25 > F5_LINEAR_REGIME_R)


def f5_grid_maximum(dim, k=1, half_width=0.5, points=200001):
    """Grid maximisation of f5 on [t_k - half_width, t_k + half_width]."""
    tk = scrambling_beat_times(k)[-1]
    grid = np.linspace(tk - half_width, tk + half_width, points)
    vals = form_factors(grid, dim)["f5"]
    i = int(np.argmax(vals))
    return float(grid[i]), float(vals[i])


@dataclass(frozen=True)
class CharacteristicTimes:
    t_scramble: float
    t_beat_decay: float
    t_f5_stage1: float
    t_f5_stage2: float


def characteristic_times(dim):
    """Order-of-magnitude time scales with unit prefactors."""
    if dim < 2:
        raise DomainError("dimension must be at least 2")
    return CharacteristicTimes(1.0, dim ** (1.0 / 6.0), dim ** (1.0 / 6.0), dim ** (2.0 / 9.0))
