"""Numeric foundation: Bessel J1 and its zeros, Hermitian eigensolver, semicircle.

Matrices are plain ``numpy`` complex arrays.  The eigensolver is LAPACK (via
scipy) behind the :class:`EigenSystem` contract; everything else here is
self-contained.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.optimize import brentq

from .errors import ContractError, DomainError

# Contract tolerances shared by every module.
HERMITIAN_RTOL = 1e-12
EIG_ATOL = 1e-10
UNITARY_ATOL = 1e-9
MAX_EIG_DIM = 4096

# J1 evaluation scheme: ascending series below SERIES_LIMIT, Miller backward
# recurrence up to ASYMPTOTIC_LIMIT, Hankel expansion beyond.
SERIES_LIMIT = 12.0
ASYMPTOTIC_LIMIT = 60.0
_SERIES_MAX_TERMS = 80
_SERIES_RTOL = 1e-18
_ASYMPTOTIC_MAX_TERMS = 60

MAX_ZERO_INDEX = 100


def _j1_series(x):
    half = 0.5 * x
    q = -half * half
    term = half
    total = half
    for k in range(1, _SERIES_MAX_TERMS):
        term *= q / (k * (k + 1))
        total += term
        if abs(term) < _SERIES_RTOL * abs(total):
            break
    return total


def _j1_miller(x):
    # Backward recurrence J_{n-1} = (2n/x) J_n - J_{n+1}, normalised with
    # J_0 + 2 * sum_k J_{2k} = 1.  Valid for x > 0.
    start = 2 * ((int(x) + 30 + int(10.0 * math.sqrt(x))) // 2)
    j_next, j_cur = 0.0, 1e-300
    norm = 0.0
    j1 = 0.0
    for n in range(start, 0, -1):
        j_prev = (2.0 * n / x) * j_cur - j_next
        j_next, j_cur = j_cur, j_prev
        if n - 1 == 1:
            j1 = j_cur
        if (n - 1) % 2 == 0 and n - 1 > 0:
            norm += 2.0 * j_cur
        if abs(j_cur) > 1e250:
            j_cur *= 1e-250
            j_next *= 1e-250
            j1 *= 1e-250
            norm *= 1e-250
    norm += j_cur  # J_0
    return j1 / norm


def _j1_asymptotic(x):
    mu = 4.0
    p, q = 1.0, 0.0
    a = 1.0
    prev = math.inf
    for k in range(1, _ASYMPTOTIC_MAX_TERMS):
        a *= (mu - (2 * k - 1) ** 2) / (k * 8.0 * x)
        if abs(a) > prev:
            break
        prev = abs(a)
        sign = -1.0 if (k // 2) % 2 else 1.0
        if k % 2:
            q += sign * a
        else:
            p += sign * a
        if abs(a) < 1e-17:
            break
    chi = x - 0.75 * math.pi
    return math.sqrt(2.0 / (math.pi * x)) * (p * math.cos(chi) - q * math.sin(chi))


def _j1_scalar(x):
    x = float(x)
    if not math.isfinite(x):
        raise DomainError(f"besselJ1 requires a finite argument, got {x!r}")
    ax = abs(x)
    if ax < SERIES_LIMIT:
        return _j1_series(x)
    val = _j1_miller(ax) if ax < ASYMPTOTIC_LIMIT else _j1_asymptotic(ax)
    return val if x > 0 else -val


def bessel_j1(x):
    """Bessel function of the first kind, order one.

    Accepts a scalar or an array.  Relative accuracy is about 1e-12 away
    from the zeros for |x| <= 200.
    """
    if np.ndim(x) == 0:
        return _j1_scalar(x)
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DomainError("besselJ1 requires finite arguments")
    out = np.empty_like(arr)
    flat_in, flat_out = arr.ravel(), out.ravel()
    small = np.abs(flat_in) < SERIES_LIMIT
    if small.any():
        xs = flat_in[small]
        half = 0.5 * xs
        q = -half * half
        term = half.copy()
        total = half.copy()
        for k in range(1, _SERIES_MAX_TERMS):
            term *= q / (k * (k + 1))
            total += term
            if np.all(np.abs(term) <= _SERIES_RTOL * np.abs(total)):
                break
        flat_out[small] = total
    for i in np.flatnonzero(~small):
        flat_out[i] = _j1_scalar(flat_in[i])
    return out


def bessel_j1_zeros(k):
    """First ``k`` positive zeros of J1 in ascending order."""
    if isinstance(k, bool) or int(k) != k or not 1 <= k <= MAX_ZERO_INDEX:
        raise DomainError(f"zero count must be an integer in [1, {MAX_ZERO_INDEX}], got {k!r}")
    zeros = []
    for n in range(1, int(k) + 1):
        guess = (n + 0.25) * math.pi
        root = brentq(_j1_scalar, guess - 0.6, guess + 0.4, xtol=1e-14, rtol=4 * np.finfo(float).eps)
        zeros.append(root)
    return np.array(zeros)


@dataclass(frozen=True)
class EigenSystem:
    """Spectral decomposition ``A = V diag(energies) V^dagger``."""

    energies: np.ndarray
    basis: np.ndarray

    @property
    def dim(self):
        return self.energies.shape[0]

    def reconstruct(self):
        return (self.basis * self.energies) @ self.basis.conj().T


def is_hermitian(a, rtol=HERMITIAN_RTOL):
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        return False
    scale = np.max(np.abs(a)) if a.size else 0.0
    return bool(np.max(np.abs(a - a.conj().T), initial=0.0) <= rtol * max(scale, np.finfo(float).tiny))


def hermitian_eig(a):
    """Diagonalise a Hermitian matrix; energies are returned ascending."""
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ContractError(f"expected a square matrix, got shape {a.shape}")
    if a.shape[0] > MAX_EIG_DIM:
        raise ContractError(f"dimension {a.shape[0]} exceeds the dense limit {MAX_EIG_DIM}")
    if not is_hermitian(a):
        raise ContractError("matrix is not Hermitian within tolerance")
    energies, basis = scipy.linalg.eigh(a, driver="evr", check_finite=False)
    energies.setflags(write=False)
    basis.setflags(write=False)
    return EigenSystem(energies, basis)


def semicircle_density(e):
    """Wigner semicircle density of radius 2, ``sqrt(4 - E^2) / (2 pi)``."""
    e = np.asarray(e, dtype=float)
    out = np.sqrt(np.clip(4.0 - e * e, 0.0, None)) / (2.0 * np.pi)
    return float(out) if out.ndim == 0 else out
