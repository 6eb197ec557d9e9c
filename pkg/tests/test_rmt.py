import math

import mpmath
import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings, strategies as st

from hamshadow.errors import DomainError
from hamshadow.qmath import hermitian_eig
from hamshadow.rmt import (
    EigenCache,
    derive_seed,
    eigensystem,
    evolution_operator,
    generator,
    gue_matrix,
    one_minus_r,
    r_factor,
    sample_gue,
)


def test_gue_entry_variances():
    n, dim = 6, 64
    diag, off_re, off_im = [], [], []
    for i in range(40):
        h = gue_matrix(n, derive_seed(9, i))
        diag.append(np.real(np.diag(h)))
        iu = np.triu_indices(dim, 1)
        off_re.append(h[iu].real)
        off_im.append(h[iu].imag)
    assert np.var(np.concatenate(diag)) * dim == pytest.approx(1.0, rel=0.05)
    assert np.var(np.concatenate(off_re)) * 2 * dim == pytest.approx(1.0, rel=0.02)
    assert np.var(np.concatenate(off_im)) * 2 * dim == pytest.approx(1.0, rel=0.02)


def test_gue_hermitian_and_read_only():
    h = gue_matrix(3, 5)
    assert np.array_equal(h, h.conj().T)
    with pytest.raises(ValueError):
        h[0, 0] = 1.0


def test_semicircle_spectrum():
    e = np.sort(hermitian_eig(gue_matrix(10, 1)).energies)
    assert e[0] == pytest.approx(-2.0, abs=0.08)
    assert e[-1] == pytest.approx(2.0, abs=0.08)

    # compare with the semicircle CDF
    def cdf(x):
        x = np.clip(x, -2, 2)
        return 0.5 + (x * np.sqrt(4 - x * x) / 4 + np.arcsin(x / 2)) / math.pi

    emp = np.arange(1, len(e) + 1) / len(e)
    assert np.max(np.abs(emp - cdf(e))) < 0.01


def test_seeding_is_deterministic_and_distinct():
    assert np.array_equal(gue_matrix(4, 123), gue_matrix(4, 123))
    assert not np.array_equal(gue_matrix(4, 123), gue_matrix(4, 124))
    seeds = {derive_seed(7, i) for i in range(1000)}
    assert len(seeds) == 1000
    assert derive_seed(7, 3) == derive_seed(7, 3)
    a = generator(5, 0).random(4)
    b = generator(5, 1).random(4)
    assert not np.array_equal(a, b)


def test_qubit_range():
    with pytest.raises(DomainError):
        gue_matrix(0, 1)
    with pytest.raises(DomainError):
        gue_matrix(13, 1)


@pytest.mark.parametrize("t", [1e-6, 0.01, 0.5, 1.0, 1.9158, 3.3, 10.0, 77.7])
def test_r_factor_against_mpmath(t):
    ref = float(mpmath.besselj(1, 2 * t) / t)
    assert abs(r_factor(t) - ref) < 1e-12


def test_r_factor_limits():
    assert r_factor(0.0) == 1.0
    assert np.array_equal(r_factor(np.array([0.0, 0.0])), [1.0, 1.0])
    with pytest.raises(DomainError):
        r_factor(-0.1)
    assert abs(r_factor(200.0)) < 1e-3


@given(st.floats(min_value=1e-12, max_value=5.0))
@settings(max_examples=80, deadline=None)
def test_one_minus_r_accurate(t):
    with mpmath.workdps(80):
        tm = mpmath.mpf(t)
        ref = float(1 - mpmath.besselj(1, 2 * tm) / tm)
    got = one_minus_r(t)
    # relative accuracy matters below t = 1 where 1 - r cancels
    tol = 1e-14 * abs(ref) if t < 1 else 1e-12
    assert abs(got - ref) <= tol + 1e-300


def test_one_minus_r_tiny_times():
    assert one_minus_r(0.0) == 0.0
    assert one_minus_r(1e-20) == pytest.approx(0.5e-40, rel=1e-15)


def test_trace_average_follows_r():
    # E[Tr U(t)] / D -> r(t) at large D
    n, samples = 8, 30
    for t in (0.5, 1.0, 2.5):
        vals = []
        for i in range(samples):
            es = eigensystem(n, derive_seed(17, i))
            vals.append(np.mean(np.exp(-1j * es.energies * t)))
        assert np.mean(vals).real == pytest.approx(r_factor(t), abs=0.02)


def test_evolution_operator_matches_expm():
    s = sample_gue(3, 42)
    u = evolution_operator(s, 0.7)
    ref = scipy.linalg.expm(-1j * 0.7 * s.hamiltonian)
    assert np.max(np.abs(u - ref)) < 1e-10
    assert np.max(np.abs(u @ u.conj().T - np.eye(8))) < 1e-10
    assert np.max(np.abs(evolution_operator(s, 0.0) - np.eye(8))) < 1e-12


def test_eigen_cache_is_byte_bounded():
    one = 2**4 * 8 + 2**8 * 16  # energies + basis for N=4
    cache = EigenCache(capacity_bytes=3 * one)
    for seed in range(5):
        cache.get(4, seed)
    assert len(cache) == 3
    assert cache.misses == 5
    cache.get(4, 4)
    assert cache.hits == 1
    cache.get(4, 0)
    assert cache.misses == 6
    es = cache.get(4, 2)
    assert np.array_equal(es.energies, hermitian_eig(gue_matrix(4, 2)).energies)
