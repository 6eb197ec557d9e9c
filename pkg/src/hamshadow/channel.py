"""Measure-and-prepare channel of GUE-driven evolution and its inverse.

For a Haar-distributed eigenbasis the channel commutes with basis
permutations and diagonal phases, so it always acts as

    M(X) = Tr(X)/D + X_o / alpha + X_d / beta

on the identity, off-diagonal and traceless-diagonal components of X.  The
coefficients below are the large-D expressions built from r(t); the
Monte-Carlo oracle :func:`empirical_channel` measures the exact finite-D rates.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from ._parallel import chunk_ranges, ordered_map
from .errors import ChannelNotInvertibleError, DomainError
from .qmath import hermitian_eig
from .rmt import derive_seed, gue_matrix, r_factor

INVERTIBILITY_EPS = 1e-9
MIN_CLI_TIME = 0.01
MAX_ORACLE_QUBITS = 6
MIN_ORACLE_SAMPLES = 100


@dataclass(frozen=True)
class OperatorDecomposition:
    """X = trace_part * 1 + diagonal + off_diagonal."""

    trace_part: complex
    diagonal: np.ndarray
    off_diagonal: np.ndarray

    @property
    def dim(self):
        return self.diagonal.shape[0]

    def reconstruct(self):
        return self.trace_part * np.eye(self.dim) + self.diagonal + self.off_diagonal


def decompose(x) -> OperatorDecomposition:
    x = np.asarray(x, dtype=complex)
    if x.ndim != 2 or x.shape[0] != x.shape[1]:
        raise DomainError(f"expected a square matrix, got shape {x.shape}")
    dim = x.shape[0]
    diag = np.diagonal(x)
    trace_part = diag.sum() / dim
    if abs(trace_part.imag) <= 1e-15 * max(1.0, abs(trace_part.real)):
        trace_part = trace_part.real
    diagonal = np.diag(diag - trace_part)
    off = x.copy()
    np.fill_diagonal(off, 0.0)
    return OperatorDecomposition(trace_part, diagonal, off)


@dataclass(frozen=True)
class ChannelCoefficients:
    t: float
    dim: int
    lam: float
    alpha: float
    beta: float
    invertible: bool

    @property
    def off_diagonal_rate(self):
        return 0.0 if not self.invertible else 1.0 / self.alpha

    @property
    def diagonal_rate(self):
        return 1.0 / self.beta


def _lambda(t, dim):
    r = r_factor(t)
    r2t = r_factor(2.0 * t)
    return ((dim * r * r + r2t) ** 2 - 4.0 * r * r) / ((dim + 3.0) * (dim * dim - 1.0))


def coefficients(t, dim) -> ChannelCoefficients:
    """Channel coefficients at time ``t`` in dimension ``dim``.

    Near t = 0 the off-diagonal rate vanishes; ``alpha`` is then ``inf`` and
    the bundle is flagged non-invertible instead of raising.
    """
    t = float(t)
    if not t >= 0:
        raise DomainError(f"time must be non-negative, got {t!r}")
    if int(dim) != dim or dim < 2:
        raise DomainError(f"dimension must be an integer >= 2, got {dim!r}")
    dim = int(dim)
    lam = _lambda(t, dim)
    off_rate = 1.0 / (dim + 1.0) - lam
    beta = 1.0 / (1.0 / (dim + 1.0) + dim * lam)
    if off_rate < INVERTIBILITY_EPS:
        return ChannelCoefficients(t, dim, lam, math.inf, beta, False)
    return ChannelCoefficients(t, dim, lam, 1.0 / off_rate, beta, True)


def long_time_coefficients(t, dim) -> ChannelCoefficients:
    """Unitary 2-design coefficients alpha = beta = D + 1, labelled with time ``t``."""
    return ChannelCoefficients(float(t), int(dim), 0.0, dim + 1.0, dim + 1.0, True)


def min_invertible_time(dim):
    """Smallest t at which the off-diagonal rate reaches INVERTIBILITY_EPS."""
    def gap(t):
        return 1.0 / (dim + 1.0) - _lambda(t, dim) - INVERTIBILITY_EPS

    return brentq(gap, 0.0, 0.5, xtol=1e-15)


def forward_channel(rho, coeffs: ChannelCoefficients):
    parts = decompose(rho)
    _check_dim(parts.dim, coeffs)
    out = parts.trace_part * np.eye(parts.dim) + parts.diagonal / coeffs.beta
    if coeffs.invertible:
        out = out + parts.off_diagonal / coeffs.alpha
    return out


def inverse_channel(sigma, coeffs: ChannelCoefficients):
    if not coeffs.invertible:
        raise ChannelNotInvertibleError(coeffs.t, coeffs.dim, min_invertible_time(coeffs.dim))
    parts = decompose(sigma)
    _check_dim(parts.dim, coeffs)
    return (
        parts.trace_part * np.eye(parts.dim)
        + coeffs.alpha * parts.off_diagonal
        + coeffs.beta * parts.diagonal
    )


def _check_dim(dim, coeffs):
    if dim != coeffs.dim:
        raise DomainError(f"operator dimension {dim} does not match coefficients for D={coeffs.dim}")


@dataclass(frozen=True)
class EmpiricalRates:
    diag_rate: float
    diag_stderr: float
    off_diag_rate: float
    off_diag_stderr: float
    n_samples: int


def _probe_rates(num_qubits, t, seeds):
    dim = 1 << num_qubits
    top = 1 << (num_qubits - 1)
    idx = np.arange(dim)
    z1 = np.where(idx & top, -1.0, 1.0)
    flip = idx ^ top
    out = np.empty((len(seeds), 2))
    for k, seed in enumerate(seeds):
        es = hermitian_eig(gue_matrix(num_qubits, seed))
        u = (es.basis * np.exp(-1j * es.energies * t)) @ es.basis.conj().T
        # <b| U X U^dag |b> for X = Z_1 and X = X_1
        c_diag = (np.abs(u) ** 2) @ z1
        c_off = np.real(np.sum(u * u[:, flip].conj(), axis=1))
        out[k, 0] = np.dot(c_diag, c_diag) / dim
        out[k, 1] = np.dot(c_off, c_off) / dim
    return out


def empirical_channel(t, num_qubits, n_samples, seed, threads=1) -> EmpiricalRates:
    """Monte-Carlo transmission rates of the exact channel.

    Averages the Hilbert-Schmidt overlap <X, M(X)> / <X, X> for the probes
    X = Z_1 (traceless diagonal) and X = X_1 (off-diagonal) over
    ``n_samples`` GUE draws, summing over all outcomes b exactly.
    """
    t = float(t)
    if not t >= 0:
        raise DomainError(f"time must be non-negative, got {t!r}")
    if not 1 <= num_qubits <= MAX_ORACLE_QUBITS:
        raise DomainError(f"empirical channel supports 1..{MAX_ORACLE_QUBITS} qubits, got {num_qubits}")
    if n_samples < MIN_ORACLE_SAMPLES:
        raise DomainError(f"need at least {MIN_ORACLE_SAMPLES} samples, got {n_samples}")
    seeds = [derive_seed(seed, i) for i in range(n_samples)]
    blocks = ordered_map(
        lambda rng: _probe_rates(num_qubits, t, seeds[rng[0]:rng[1]]),
        chunk_ranges(n_samples),
        threads,
    )
    vals = np.concatenate(blocks)
    mean = vals.mean(axis=0)
    se = vals.std(axis=0, ddof=1) / math.sqrt(n_samples)
    return EmpiricalRates(float(mean[0]), float(se[0]), float(mean[1]), float(se[1]), n_samples)
