"""GUE Hamiltonians, the spectral factor r(t) and time-evolution operators.

Every random object is a pure function of a 64-bit seed.  Seeds for the
i-th member of a run are derived from the run's master seed by hashing
``(master, i)`` through :class:`numpy.random.SeedSequence`, and the bits are
drawn from the counter-based Philox generator.  This keeps runs reproducible
regardless of how work is split across threads.

``r_factor`` is the leading-order (large-D) one-point spectral average of the
normalised GUE; finite-D corrections are not modelled here and are measured
instead by :func:`hamshadow.channel.empirical_channel`.
"""
from __future__ import annotations

import math
import threading
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .qmath import EigenSystem, bessel_j1, hermitian_eig

MAX_QUBITS = 12
DEFAULT_EIGEN_CACHE_BYTES = 256 * 2**20

_MASK64 = (1 << 64) - 1

# Independent Philox streams hanging off one snapshot seed.
STREAM_HAMILTONIAN = 0
STREAM_MEASUREMENT = 1


def derive_seed(master_seed, index):
    """Hash ``(master_seed, index)`` into a 64-bit child seed."""
    ss = np.random.SeedSequence(int(master_seed) & _MASK64, spawn_key=(int(index),))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def generator(seed, stream):
    """Philox generator for a given seed and stream id."""
    ss = np.random.SeedSequence(int(seed) & _MASK64, spawn_key=(int(stream),))
    return np.random.Generator(np.random.Philox(ss))


def _check_qubits(num_qubits):
    if isinstance(num_qubits, bool) or int(num_qubits) != num_qubits or not 1 <= num_qubits <= MAX_QUBITS:
        raise DomainError(f"number of qubits must be an integer in [1, {MAX_QUBITS}], got {num_qubits!r}")
    return int(num_qubits)


def gue_matrix(num_qubits, seed):
    """Draw H with density proportional to exp(-(D/2) Tr H^2), D = 2**num_qubits.

    Diagonal entries have variance 1/D; real and imaginary parts of the
    off-diagonal entries each have variance 1/(2D).
    """
    n = _check_qubits(num_qubits)
    dim = 1 << n
    rng = generator(seed, STREAM_HAMILTONIAN)
    a = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    h = (a + a.conj().T) / (2.0 * math.sqrt(dim))
    h.setflags(write=False)
    return h


class EigenCache:
    """Thread-safe LRU cache of eigensystems keyed by ``(num_qubits, seed)``.

    Bounded by total bytes of the stored arrays rather than entry count, since
    one N=12 eigensystem is as large as a million N=3 ones.
    """

    def __init__(self, capacity_bytes=DEFAULT_EIGEN_CACHE_BYTES):
        self.capacity_bytes = int(capacity_bytes)
        self._entries = OrderedDict()
        self._bytes = 0
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def get(self, num_qubits, seed):
        key = (num_qubits, seed)
        with self._lock:
            es = self._entries.get(key)
            if es is not None:
                self._entries.move_to_end(key)
                self.hits += 1
                return es
            self.misses += 1
        # Diagonalise outside the lock; a concurrent duplicate computes the
        # same deterministic result.
        es = hermitian_eig(gue_matrix(num_qubits, seed))
        size = es.energies.nbytes + es.basis.nbytes
        with self._lock:
            if key not in self._entries and size <= self.capacity_bytes:
                self._entries[key] = es
                self._bytes += size
                while self._bytes > self.capacity_bytes:
                    _, old = self._entries.popitem(last=False)
                    self._bytes -= old.energies.nbytes + old.basis.nbytes
        return es

    def clear(self):
        with self._lock:
            self._entries.clear()
            self._bytes = 0
            self.hits = self.misses = 0

    def __len__(self):
        return len(self._entries)


_cache = EigenCache()


def eigen_cache():
    return _cache


def set_eigen_cache_capacity(capacity_bytes):
    """Replace the shared cache with an empty one of the given byte budget."""
    global _cache
    _cache = EigenCache(capacity_bytes)


def eigensystem(num_qubits, seed) -> EigenSystem:
    """Eigendecomposition of ``gue_matrix(num_qubits, seed)``, via the shared cache."""
    return _cache.get(_check_qubits(num_qubits), int(seed) & _MASK64)


@dataclass(frozen=True)
class GueSample:
    num_qubits: int
    seed: int
    hamiltonian: np.ndarray

    @property
    def dim(self):
        return 1 << self.num_qubits

    @property
    def eigs(self) -> EigenSystem:
        return eigensystem(self.num_qubits, self.seed)


def sample_gue(num_qubits, seed):
    n = _check_qubits(num_qubits)
    seed = int(seed) & _MASK64
    return GueSample(n, seed, gue_matrix(n, seed))


def r_factor(t):
    """Spectral factor J1(2t)/t, with r(0) = 1."""
    if np.ndim(t) == 0:
        t = float(t)
        if not t >= 0:
            raise DomainError(f"time must be non-negative, got {t!r}")
        if t == 0.0:
            return 1.0
        return bessel_j1(2.0 * t) / t
    t = np.asarray(t, dtype=float)
    if np.any(~(t >= 0)):
        raise DomainError("times must be non-negative")
    out = np.ones_like(t)
    nz = t > 0
    out[nz] = bessel_j1(2.0 * t[nz]) / t[nz]
    return out


def one_minus_r(t):
    """1 - r(t) without cancellation near t = 0."""
    t = float(t)
    if t < 0:
        raise DomainError(f"time must be non-negative, got {t!r}")
    if t >= 1.0:
        return 1.0 - r_factor(t)
    # r(t) = sum_k (-1)^k t^{2k} / (k! (k+1)!)
    q = t * t
    term = 1.0
    total = 0.0
    for k in range(1, 40):
        term *= -q / (k * (k + 1))
        total -= term
        if abs(term) < 1e-18 * abs(total):
            break
    return total


def evolution_operator(sample: GueSample, t):
    """U(t) = V diag(exp(-i E t)) V^dagger for the sample's Hamiltonian."""
    t = float(t)
    if not t >= 0:
        raise DomainError(f"time must be non-negative, got {t!r}")
    es = sample.eigs
    return (es.basis * np.exp(-1j * es.energies * t)) @ es.basis.conj().T
