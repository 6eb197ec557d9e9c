"""Protocol simulation: states, observables, snapshots, shadows and estimators.

A snapshot stores only ``(seed, t, outcome, num_qubits)``; the evolution
operator is regenerated from the seed whenever it is needed.  A classical
shadow keeps the snapshot vector ``U^dagger |b>`` (length D) instead of the
D x D matrix, which is formed lazily.
"""
from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from ._parallel import chunk_ranges, ordered_map
from .channel import (
    ChannelCoefficients,
    ChannelNotInvertibleError,
    OperatorDecomposition,
    coefficients,
    decompose,
    min_invertible_time,
)
from .errors import ContractError, DomainError, NumericalHealthError
from .qmath import HERMITIAN_RTOL, is_hermitian
from .rmt import MAX_QUBITS, STREAM_MEASUREMENT, derive_seed, eigensystem, generator

STATE_ATOL = 1e-12
PSD_ATOL = 1e-10
CLIP_SILENT = 1e-10
CLIP_FATAL = 1e-8
DEFAULT_PAIR_BUDGET = 10**6

_PAULI = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}


def _num_qubits_of(dim):
    n = int(dim).bit_length() - 1
    if 1 << n != dim:
        raise DomainError(f"dimension {dim} is not a power of two")
    return n


def _check_n(num_qubits):
    if isinstance(num_qubits, bool) or int(num_qubits) != num_qubits or not 1 <= num_qubits <= MAX_QUBITS:
        raise DomainError(f"number of qubits must be an integer in [1, {MAX_QUBITS}], got {num_qubits!r}")
    return int(num_qubits)


# --------------------------------------------------------------------------
# States and observables
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """Hermitian, unit-trace, PSD state.  ``vector`` is set for pure states."""

    matrix: np.ndarray
    vector: np.ndarray | None = None

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ContractError(f"density matrix must be square, got shape {m.shape}")
        _num_qubits_of(m.shape[0])
        if np.max(np.abs(m - m.conj().T)) > STATE_ATOL:
            raise ContractError("density matrix is not Hermitian")
        if abs(np.trace(m) - 1.0) > STATE_ATOL:
            raise ContractError(f"density matrix trace is {np.trace(m).real!r}, expected 1")
        if np.linalg.eigvalsh(m)[0] < -PSD_ATOL:
            raise ContractError("density matrix has a negative eigenvalue")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self):
        return self.matrix.shape[0]

    @property
    def num_qubits(self):
        return _num_qubits_of(self.dim)

    @classmethod
    def from_vector(cls, psi):
        psi = np.asarray(psi, dtype=complex)
        psi = psi / np.linalg.norm(psi)
        psi.setflags(write=False)
        return cls(np.outer(psi, psi.conj()), psi)


def make_ghz_state(num_qubits):
    """(|0...0> + |1...1>) / sqrt(2)."""
    n = _check_n(num_qubits)
    psi = np.zeros(1 << n, dtype=complex)
    psi[0] = psi[-1] = 1.0 / math.sqrt(2.0)
    return DensityMatrix.from_vector(psi)


def make_basis_state(bits):
    n = _check_n(len(bits))
    if any(c not in "01" for c in bits):
        raise DomainError(f"basis state must be a bitstring, got {bits!r}")
    psi = np.zeros(1 << n, dtype=complex)
    psi[int(bits, 2)] = 1.0
    return DensityMatrix.from_vector(psi)


def make_maximally_mixed(num_qubits):
    n = _check_n(num_qubits)
    dim = 1 << n
    return DensityMatrix(np.eye(dim, dtype=complex) / dim)


@dataclass(frozen=True, eq=False)
class Observable:
    matrix: np.ndarray
    label: str = ""

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        if not is_hermitian(m, HERMITIAN_RTOL):
            raise ContractError("observable must be Hermitian")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self):
        return self.matrix.shape[0]

    @cached_property
    def decomposition(self) -> OperatorDecomposition:
        return decompose(self.matrix)

    @property
    def trace(self):
        return float(np.trace(self.matrix).real)


def make_pauli_observable(label):
    """Tensor product of single-qubit Paulis; ``label[0]`` acts on the most significant bit."""
    label = label.upper()
    _check_n(len(label))
    bad = [c for c in label if c not in _PAULI]
    if bad:
        raise DomainError(f"invalid Pauli letter(s) {''.join(bad)!r} in {label!r}")
    m = np.ones((1, 1), dtype=complex)
    for c in label:
        m = np.kron(m, _PAULI[c])
    return Observable(m, label)


def make_off_diagonal_fidelity(num_qubits):
    """0.5 |0...0><1...1| + 0.5 |1...1><0...0|."""
    n = _check_n(num_qubits)
    dim = 1 << n
    m = np.zeros((dim, dim), dtype=complex)
    m[0, -1] = m[-1, 0] = 0.5
    return Observable(m, "offdiag-fidelity")


def make_projector_observable(bits, traceless=True):
    """|b><b|, optionally shifted by -1/D so that it is traceless."""
    n = _check_n(len(bits))
    dim = 1 << n
    m = np.zeros((dim, dim), dtype=complex)
    m[int(bits, 2), int(bits, 2)] = 1.0
    if traceless:
        m -= np.eye(dim) / dim
    return Observable(m, f"projector:{bits}")


def swap_operator(num_qubits):
    """SWAP on two copies of an ``num_qubits``-qubit register (D^2 x D^2)."""
    dim = 1 << _check_n(num_qubits)
    s = np.zeros((dim * dim, dim * dim), dtype=complex)
    i, j = np.meshgrid(np.arange(dim), np.arange(dim), indexing="ij")
    s[(i * dim + j).ravel(), (j * dim + i).ravel()] = 1.0
    return s


# --------------------------------------------------------------------------
# Snapshots and shadows
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Snapshot:
    seed: int
    t: float
    outcome: str
    num_qubits: int

    def __post_init__(self):
        if len(self.outcome) != self.num_qubits or any(c not in "01" for c in self.outcome):
            raise DomainError(
                f"outcome {self.outcome!r} is not a bitstring of length {self.num_qubits}"
            )

    @property
    def index(self):
        return int(self.outcome, 2)


@dataclass(frozen=True, eq=False)
class ClassicalShadow:
    """rho_hat = M^{-1}(|v><v|) with v = U^dagger |b>."""

    snapshot: Snapshot
    vector: np.ndarray
    coeffs: ChannelCoefficients

    @property
    def matrix(self):
        v = self.vector
        dim = v.shape[0]
        sigma = np.outer(v, v.conj())
        p = np.abs(v) ** 2
        out = self.coeffs.alpha * sigma
        out[np.diag_indices(dim)] = self.coeffs.beta * (p - 1.0 / dim) + 1.0 / dim
        return out


class ShadowCollection(Sequence):
    """Array-backed sequence of classical shadows."""

    def __init__(self, snapshots, vectors, alphas, betas, coeffs_by_time):
        self.snapshots = list(snapshots)
        self.vectors = vectors
        self.alphas = alphas
        self.betas = betas
        self._coeffs = coeffs_by_time

    def __len__(self):
        return len(self.snapshots)

    def __getitem__(self, i):
        if isinstance(i, slice):
            idx = range(len(self))[i]
            sel = np.fromiter(idx, dtype=int, count=len(idx))
            return ShadowCollection([self.snapshots[k] for k in idx], self.vectors[sel],
                                    self.alphas[sel], self.betas[sel], self._coeffs)
        s = self.snapshots[i]
        return ClassicalShadow(s, self.vectors[i], self._coeffs[s.t])

    @property
    def dim(self):
        return self.vectors.shape[1]

    def mean_matrix(self):
        """Average of the shadow matrices, accumulated in fixed-size chunks."""
        dim = self.dim
        acc_o = np.zeros((dim, dim), dtype=complex)
        acc_d = np.zeros(dim)
        for lo, hi in chunk_ranges(len(self)):
            v = self.vectors[lo:hi]
            acc_o += (self.alphas[lo:hi, None] * v).T @ v.conj()
            acc_d += self.betas[lo:hi] @ (np.abs(v) ** 2)
        m = len(self)
        out = acc_o / m
        diag_beta = acc_d / m - self.betas.mean() / dim
        out[np.diag_indices(dim)] = diag_beta + 1.0 / dim
        return out


def _coefficients_or_raise(t, dim):
    c = coefficients(t, dim)
    if not c.invertible:
        raise ChannelNotInvertibleError(t, dim, min_invertible_time(dim))
    return c


def outcome_distribution(rho, u):
    """Born probabilities diag(U rho U^dagger), clipped and renormalised."""
    if isinstance(rho, DensityMatrix) and rho.vector is not None:
        p = np.abs(u @ rho.vector) ** 2
    else:
        m = rho.matrix if isinstance(rho, DensityMatrix) else np.asarray(rho)
        p = np.real(np.sum((u @ m) * u.conj(), axis=1))
    return _clean_distribution(p)


def _clean_distribution(p):
    low = p.min()
    if low < -CLIP_FATAL:
        raise NumericalHealthError(f"outcome probability {low:.3e} is negative beyond roundoff")
    total = p.sum()
    if abs(total - 1.0) > CLIP_FATAL:
        raise NumericalHealthError(f"outcome probabilities sum to {total!r}")
    if low < 0:
        p = np.clip(p, 0.0, None)
    return p / p.sum()


def _simulate_block(rho, times, num_qubits, seeds, outcomes=None):
    """Outcome indices and snapshot vectors U^dagger|b> for a block of seeds.

    Each seed's Hamiltonian is diagonalised once and reused for every entry of
    ``times``; the measurement draw is shared across times as well.  Returns
    arrays of shape (T, k) and (T, k, D).  If ``outcomes`` is given (single
    time only), the recorded outcomes are replayed instead of sampled.
    """
    dim = 1 << num_qubits
    times = [float(t) for t in times]
    idx = np.empty((len(times), len(seeds)), dtype=np.int64)
    vecs = np.empty((len(times), len(seeds), dim), dtype=complex)
    for k, seed in enumerate(seeds):
        es = eigensystem(num_qubits, seed)
        draw = None
        for j, t in enumerate(times):
            phase = np.exp(-1j * es.energies * t)
            if outcomes is None:
                if rho.vector is not None:
                    amp = es.basis @ (phase * (es.basis.conj().T @ rho.vector))
                    p = _clean_distribution(np.abs(amp) ** 2)
                else:
                    u = (es.basis * phase) @ es.basis.conj().T
                    p = outcome_distribution(rho, u)
                if draw is None:
                    draw = generator(seed, STREAM_MEASUREMENT).random()
                b = min(int(np.searchsorted(np.cumsum(p), draw, side="right")), dim - 1)
            else:
                b = outcomes[k]
            idx[j, k] = b
            vecs[j, k] = es.basis @ (phase.conj() * es.basis[b].conj())
    return idx, vecs


def _bits(index, num_qubits):
    return format(int(index), f"0{num_qubits}b")


def _run_blocks(rho, t, num_qubits, seeds, outcomes, threads):
    def work(rng):
        lo, hi = rng
        idx, vecs = _simulate_block(rho, [t], num_qubits, seeds[lo:hi],
                                    None if outcomes is None else outcomes[lo:hi])
        return idx[0], vecs[0]

    blocks = ordered_map(work, chunk_ranges(len(seeds)), threads)
    idx = np.concatenate([b[0] for b in blocks])
    vecs = np.concatenate([b[1] for b in blocks])
    return idx, vecs


def sample_shadows(rho: DensityMatrix, t, count, master_seed, threads=1) -> ShadowCollection:
    """Simulate ``count`` experiments and return their classical shadows.

    Snapshot i uses a GUE Hamiltonian and a uniform draw both derived from
    ``(master_seed, i)``; the outcome is taken by inverse CDF.
    """
    if count < 1:
        raise DomainError("need at least one snapshot")
    t = float(t)
    n = rho.num_qubits
    coeffs = _coefficients_or_raise(t, rho.dim)
    seeds = [derive_seed(master_seed, i) for i in range(count)]
    idx, vecs = _run_blocks(rho, t, n, seeds, None, threads)
    snaps = [Snapshot(s, t, _bits(b, n), n) for s, b in zip(seeds, idx)]
    return ShadowCollection(snaps, vecs, np.full(count, coeffs.alpha), np.full(count, coeffs.beta), {t: coeffs})


def sample_snapshots(rho: DensityMatrix, t, count, master_seed, threads=1):
    return sample_shadows(rho, t, count, master_seed, threads).snapshots


def shadows_from_snapshots(snapshots, threads=1) -> ShadowCollection:
    """Rebuild shadows from recorded snapshots (regenerating every U)."""
    snapshots = list(snapshots)
    if not snapshots:
        raise DomainError("no snapshots given")
    n = snapshots[0].num_qubits
    if any(s.num_qubits != n for s in snapshots):
        raise DomainError("snapshots mix different qubit counts")
    dim = 1 << n
    coeffs = {}
    for s in snapshots:
        if s.t not in coeffs:
            coeffs[s.t] = _coefficients_or_raise(s.t, dim)
    vecs = np.empty((len(snapshots), dim), dtype=complex)
    by_time = {}
    for k, s in enumerate(snapshots):
        by_time.setdefault(s.t, []).append(k)
    for t, ks in by_time.items():
        seeds = [snapshots[k].seed for k in ks]
        outs = [snapshots[k].index for k in ks]
        _, v = _run_blocks(None, t, n, seeds, outs, threads)
        vecs[ks] = v
    alphas = np.array([coeffs[s.t].alpha for s in snapshots])
    betas = np.array([coeffs[s.t].beta for s in snapshots])
    return ShadowCollection(snapshots, vecs, alphas, betas, coeffs)


def shadow_from_snapshot(s: Snapshot) -> ClassicalShadow:
    return shadows_from_snapshots([s])[0]


# --------------------------------------------------------------------------
# Estimators
# --------------------------------------------------------------------------

def _as_collection(shadows):
    if isinstance(shadows, ShadowCollection):
        return shadows
    shadows = list(shadows)
    if not shadows:
        raise DomainError("no shadows given")
    coeffs = {s.snapshot.t: s.coeffs for s in shadows}
    return ShadowCollection(
        [s.snapshot for s in shadows],
        np.array([s.vector for s in shadows]),
        np.array([s.coeffs.alpha for s in shadows]),
        np.array([s.coeffs.beta for s in shadows]),
        coeffs,
    )


def _as_observable(obs):
    return obs if isinstance(obs, Observable) else Observable(obs)


def _values(vectors, alphas, betas, parts: OperatorDecomposition):
    d_diag = np.real(np.diagonal(parts.diagonal))
    has_off = bool(np.any(parts.off_diagonal))
    out = np.empty(len(vectors))
    for lo, hi in chunk_ranges(len(vectors), 4096):
        v = vectors[lo:hi]
        vals = betas[lo:hi] * ((np.abs(v) ** 2) @ d_diag)
        if has_off:
            q = np.real(np.sum((v.conj() @ parts.off_diagonal) * v, axis=1))
            vals = vals + alphas[lo:hi] * q
        out[lo:hi] = vals
    return out + float(np.real(parts.trace_part))


def single_shot_values(shadows, obs) -> np.ndarray:
    """o_i = Tr(O rho_hat_i) for every shadow."""
    col = _as_collection(shadows)
    obs = _as_observable(obs)
    if obs.dim != col.dim:
        raise DomainError(f"observable dimension {obs.dim} does not match shadows (D={col.dim})")
    return _values(col.vectors, col.alphas, col.betas, obs.decomposition)


def scan_single_shot_values(rho: DensityMatrix, obs, times, count, master_seed, threads=1):
    """Single-shot values Tr(O rho_hat) on a time grid, shape (len(times), count).

    Row j equals ``single_shot_values(sample_shadows(rho, times[j], count,
    master_seed), obs)``: the same Hamiltonians and uniform draws are used at
    every time, but each Hamiltonian is diagonalised only once.
    """
    if count < 1:
        raise DomainError("need at least one snapshot")
    obs = _as_observable(obs)
    if obs.dim != rho.dim:
        raise DomainError("observable and state dimensions differ")
    times = [float(t) for t in times]
    coeffs = [_coefficients_or_raise(t, rho.dim) for t in times]
    seeds = [derive_seed(master_seed, i) for i in range(count)]
    parts = obs.decomposition

    def work(rng):
        lo, hi = rng
        _, vecs = _simulate_block(rho, times, rho.num_qubits, seeds[lo:hi])
        k = hi - lo
        return np.array([
            _values(vecs[j], np.full(k, c.alpha), np.full(k, c.beta), parts)
            for j, c in enumerate(coeffs)
        ])

    blocks = ordered_map(work, chunk_ranges(count), threads)
    return np.concatenate(blocks, axis=1)


@dataclass(frozen=True)
class Estimate:
    estimate: float
    std_error: float
    count: int = 0

    def __iter__(self):
        return iter((self.estimate, self.std_error))


def estimate_linear(shadows, obs) -> Estimate:
    """Sample mean of Tr(O rho_hat_i) with its standard error."""
    vals = single_shot_values(shadows, obs)
    m = len(vals)
    if m < 2:
        raise DomainError("need at least two shadows")
    mean = math.fsum(vals) / m
    var = math.fsum((vals - mean) ** 2) / (m - 1)
    return Estimate(mean, math.sqrt(var / m), m)


def empirical_variance(shadows, obs):
    """Unbiased sample variance of Tr(O rho_hat_i)."""
    vals = single_shot_values(shadows, obs)
    m = len(vals)
    if m < 2:
        raise DomainError("need at least two shadows")
    mean = math.fsum(vals) / m
    return math.fsum((vals - mean) ** 2) / (m - 1)


def variance_std_error(values):
    """Standard error of the unbiased sample variance (fourth-moment formula)."""
    x = np.asarray(values, dtype=float)
    m = len(x)
    if m < 4:
        return math.nan
    c = x - x.mean()
    s2 = np.dot(c, c) / (m - 1)
    m4 = np.mean(c ** 4)
    var_s2 = (m4 - s2 * s2 * (m - 3) / (m - 1)) / m
    return math.sqrt(max(var_s2, 0.0))


def _shadow_matrices(col):
    dim = col.dim
    v = col.vectors
    mats = col.alphas[:, None, None] * (v[:, :, None] * v[:, None, :].conj())
    p = np.abs(v) ** 2
    diag = col.betas[:, None] * (p - 1.0 / dim) + 1.0 / dim
    ii = np.arange(dim)
    mats[:, ii, ii] = diag
    return mats


@dataclass(frozen=True)
class QuadraticEstimate:
    estimate: float
    std_error: float
    n_pairs: int
    kernel_variance: float

    def __iter__(self):
        return iter((self.estimate, self.std_error))


def estimate_quadratic(shadows, obs2, pair_budget=DEFAULT_PAIR_BUDGET, seed=0) -> QuadraticEstimate:
    """U-statistic estimate of Tr(O2 rho (x) rho) over ordered pairs i != j.

    All M(M-1) ordered pairs are used when that fits in ``pair_budget``;
    otherwise ``pair_budget`` pairs are drawn uniformly (with replacement)
    and the standard error includes the subsampling term.
    """
    col = _as_collection(shadows)
    m = len(col)
    if m < 2:
        raise DomainError("need at least two shadows")
    o2 = np.asarray(getattr(obs2, "matrix", obs2), dtype=complex)
    dim = col.dim
    if o2.shape != (dim * dim, dim * dim):
        raise DomainError(f"two-copy observable must be {dim * dim}x{dim * dim}, got {o2.shape}")
    if not is_hermitian(o2):
        raise ContractError("two-copy observable must be Hermitian")

    mats = _shadow_matrices(col)
    # Tr(O2 (A (x) B)) = sum_{abcd} O2[(b d), (a c)] A[a, b] B[c, d]
    t4 = o2.reshape(dim, dim, dim, dim)
    w = np.einsum("bdac,mab->mcd", t4, mats).reshape(m, dim * dim)
    b = mats.reshape(m, dim * dim)

    total_pairs = m * (m - 1)
    if total_pairs <= pair_budget:
        gram = np.real(w @ b.T)
        np.fill_diagonal(gram, 0.0)
        n_pairs = total_pairs
        est = math.fsum(gram.ravel()) / n_pairs
        row = gram.sum(axis=1) / (m - 1)
        col_means = gram.sum(axis=0) / (m - 1)
        off = ~np.eye(m, dtype=bool)
        kvar = float(np.var(gram[off], ddof=1)) if n_pairs > 1 else math.nan
        sub_var = 0.0
    else:
        rng = generator(seed, 2)
        n_pairs = int(pair_budget)
        i = rng.integers(0, m, n_pairs)
        j = rng.integers(0, m - 1, n_pairs)
        j += j >= i
        h = np.empty(n_pairs)
        for lo, hi in chunk_ranges(n_pairs, 65536):
            h[lo:hi] = np.real(np.sum(w[i[lo:hi]] * b[j[lo:hi]], axis=1))
        est = math.fsum(h) / n_pairs
        cnt_i = np.bincount(i, minlength=m)
        cnt_j = np.bincount(j, minlength=m)
        row = np.bincount(i, h, minlength=m) / np.maximum(cnt_i, 1)
        col_means = np.bincount(j, h, minlength=m) / np.maximum(cnt_j, 1)
        kvar = float(np.var(h, ddof=1))
        sub_var = kvar / n_pairs
    if m >= 3:
        # first-order Hoeffding term of an (asymmetric) degree-2 U-statistic
        s = row + col_means
        se = math.sqrt(np.var(s, ddof=1) / m + sub_var)
    else:
        se = math.nan
    return QuadraticEstimate(est, se, n_pairs, kvar)
