import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hamshadow.channel import decompose
from hamshadow.efficiency import (
    EstimationBudget,
    build_form_factor_table,
    characteristic_times,
    f5_grid_maximum,
    f5_peak_value,
    form_factor,
    form_factors,
    leg_weights,
    linear_variance_terms,
    sample_complexity,
    sample_form_factor_pauli,
    scrambling_beat_times,
    variance_bound_linear,
    variance_bound_nonlinear,
)
from hamshadow.errors import DomainError
from hamshadow.rmt import r_factor
from hamshadow.shadows import (
    make_basis_state,
    make_ghz_state,
    make_maximally_mixed,
    make_off_diagonal_fidelity,
    make_pauli_observable,
    make_projector_observable,
    sample_shadows,
    single_shot_values,
    variance_std_error,
)


def naive_form_factors(t, dim):
    """Unsimplified closed forms at 50 digits."""
    with mpmath.workdps(50):
        t = mpmath.mpf(t)
        r = mpmath.besselj(1, 2 * t) / t
        d = dim
        q = 1 - r**4
        return [float(x) for x in (
            (1 - 3 * r**4 + 2 * r**6) / q**2,
            2 * (1 - 3 * r**4 + 2 * r**6) / q**2,
            2 * d * (r**4 - r**6) / q**2,
            1 / (1 + d * r**4),
            (2 + d * d * r**6 + 6 * d * r**4) / (1 + d * r**4) ** 2,
            (r**2 - r**6) / (d * q),
            r**6 / (1 + d * r**4),
            (2 * d * (r**4 - r**6) + 2) / ((1 + d * r**4) * q),
        )]


@pytest.mark.parametrize("t", [1e-4, 3e-3, 0.05, 0.3, 1.0, 1.9, 2.7, 6.0, 40.0])
@pytest.mark.parametrize("dim", [2, 64, 1024])
def test_form_factors_against_high_precision(t, dim):
    got = form_factors(t, dim)
    ref = naive_form_factors(t, dim)
    for i, r in enumerate(ref, start=1):
        assert got[f"f{i}"] == pytest.approx(r, rel=1e-9, abs=1e-300)


def test_time_zero_limits():
    ff = form_factors(0.0, 32)
    assert abs(ff["f1"] - 0.75) < 1e-6
    assert abs(ff["f2"] - 1.5) < 1e-6
    assert ff["f3"] == math.inf and ff["f8"] == math.inf
    assert ff["f4"] == pytest.approx(1 / 33)
    # (r^2 - r^6) / (D (1 - r^4)) = r^2 / D exactly, so the limit is 1/D
    assert ff["f6"] == pytest.approx(1 / 32)


def test_f3_small_time_asymptote():
    for dim in (4, 512):
        t = 1e-3
        assert form_factor(3, t, dim) * t * t / (dim / 2) == pytest.approx(1.0, abs=1e-3)


def test_factored_forms_continuous_at_small_times():
    # no jump between t = 0 and the first nonzero times
    for dim in (8, 1024):
        f1 = [form_factor(1, t, dim) for t in (0.0, 1e-9, 1e-6)]
        assert max(f1) - min(f1) < 1e-11


@given(st.floats(0.0, 30.0), st.sampled_from([2, 16, 256, 4096]))
@settings(max_examples=100, deadline=None)
def test_form_factor_ranges(t, dim):
    ff = form_factors(t, dim)
    assert 0 < ff["f4"] <= 1
    assert 0.75 <= ff["f1"] <= 1 + 1e-15
    assert ff["f2"] == 2 * ff["f1"]
    assert ff["f6"] >= 0 and ff["f7"] >= 0


def test_form_factor_index_errors():
    with pytest.raises(DomainError):
        form_factor(0, 1.0, 4)
    with pytest.raises(DomainError):
        form_factor(9, 1.0, 4)
    with pytest.raises(DomainError):
        form_factors(-0.1, 4)


def test_beat_times():
    tk = scrambling_beat_times(5)
    assert tk[0] == pytest.approx(3.8317059702075123 / 2, abs=1e-12)
    assert tk[0] == pytest.approx(1.9159, abs=1e-4)
    for t in tk:
        assert abs(form_factor(4, t, 1024) - 1) < 1e-10


def test_diagonal_sample_form_factor_peaks_at_beats():
    tk = scrambling_beat_times(3)
    h = 1e-3
    for t in tk:
        left, mid, right = (sample_form_factor_pauli("diagonal", x, 1024) for x in (t - h, t, t + h))
        assert mid > left and mid > right
        assert left - 2 * mid + right < 0


def test_pauli_sample_form_factors():
    dim = 1024
    assert sample_form_factor_pauli("diagonal", 0.0, dim) == pytest.approx(1 / (1 + dim))
    assert sample_form_factor_pauli("diagonal", 100.0, dim) == pytest.approx(1.0, abs=1e-4)
    assert sample_form_factor_pauli("offDiagonal", 100.0, dim) == pytest.approx(1.0, abs=1e-4)
    ff = form_factors(0.5, dim)
    full = (ff["f1"] * dim + ff["f2"] + ff["f3"]) / dim
    assert sample_form_factor_pauli("offDiagonal", 0.5, dim) == pytest.approx(full, rel=0.01)
    with pytest.raises(DomainError):
        sample_form_factor_pauli("offDiagonal", 0.0, dim)
    with pytest.raises(DomainError):
        sample_form_factor_pauli("sideways", 1.0, dim)


@pytest.mark.parametrize("dim", [2**6, 2**8, 2**10])
@pytest.mark.parametrize("t", [0.3, 0.5, 1.0, 2.0])
def test_offdiagonal_leading_order_within_c_over_d(dim, t):
    ff = form_factors(t, dim)
    exact = (ff["f1"] * dim + ff["f2"] + ff["f3"]) / dim
    approx = sample_form_factor_pauli("offDiagonal", t, dim)
    assert abs(approx - exact) / exact <= 10 / dim


@pytest.mark.xfail(strict=True, reason="f5/D is O(D^-1/2) relative to 1/(1+D r^4) before the first beat")
def test_diagonal_leading_order_within_c_over_d():
    for dim in (2**6, 2**8, 2**10):
        for t in (0.3, 0.5, 1.0, 2.0):
            ff = form_factors(t, dim)
            exact = (ff["f4"] * dim + ff["f5"]) / dim
            approx = sample_form_factor_pauli("diagonal", t, dim)
            assert abs(approx - exact) / exact <= 10 / dim


def test_long_time_decay_rates():
    t, dim = 50.0, 1024
    ff = form_factors(t, dim)
    assert abs(ff["f4"] - 1) <= 2 * dim * t**-6
    assert sample_form_factor_pauli("offDiagonal", t, dim) - 1 <= 2 * t**-6


def test_table_columns_consistent():
    times = np.linspace(0.05, 6, 40)
    table = build_form_factor_table(256, times)
    v = table.values
    # 1/(1 - r^4) = f1 + f3 / D and 1/(1 + D r^4) = f4, identically
    assert np.allclose(v["F_o"], v["f1"] + v["f3"] / 256, rtol=1e-12)
    assert np.allclose(v["F_d"], v["f4"], rtol=1e-12)
    assert np.allclose(v["F_d_full"], (256 * v["f4"] + v["f5"]) / 256, rtol=1e-12)
    threaded = build_form_factor_table(256, times, threads=3)
    assert all(np.array_equal(v[c], threaded.values[c]) for c in v)
    rows = list(table.rows())
    assert len(rows) == 40 and rows[0]["D"] == 256


def test_linear_bound_diagonal_pauli_mixed_state():
    obs = make_pauli_observable("IZZ")
    dim = 8
    for t in (0.3, 1.0, 2.5):
        ff = form_factors(t, dim)
        expected = (ff["f4"] + ff["f5"] / dim) * np.trace(obs.matrix @ obs.matrix).real
        assert variance_bound_linear(obs, make_maximally_mixed(3), t) == pytest.approx(expected)


def test_linear_bound_long_time_limit():
    rho = make_ghz_state(3)
    for label in ("XZY", "ZZI", "XXX"):
        o = make_pauli_observable(label).matrix
        o2 = np.trace(o @ o).real
        target = o2 + 2 * np.trace(o @ o @ rho.matrix).real
        assert variance_bound_linear(o, rho, 100.0) == pytest.approx(target, rel=1e-4)
        assert target <= 3 * o2


def test_linear_bound_identity_terms():
    # O with a trace switches on the f6 / f7 cross terms
    rho = make_ghz_state(2)
    o = make_pauli_observable("XX").matrix + make_pauli_observable("ZI").matrix + 2 * np.eye(4)
    terms = linear_variance_terms(o, rho, 0.7)
    ff = form_factors(0.7, 4)
    assert terms["Io"] == pytest.approx(ff["f6"] * 1.0 * 8)
    assert terms["Id"] == pytest.approx(0.0, abs=1e-14)


# (state, observable) pairs used for the bound-vs-simulation property
BOUND_CASES = [
    ("ghz", "pauli:XXZ"),
    ("ghz", "offdiag"),
    ("ghz", "pauli:ZII"),
    ("basis", "projector"),
    ("mixed", "pauli:XYZ"),
]


def _case(n, state, obs):
    rho = {"ghz": make_ghz_state, "mixed": make_maximally_mixed}.get(state)
    rho = rho(n) if rho else make_basis_state("0" * n)
    if obs == "offdiag":
        o = make_off_diagonal_fidelity(n)
    elif obs == "projector":
        o = make_projector_observable("0" * n)
    else:
        p = obs.split(":")[1]
        o = make_pauli_observable(p + "I" * (n - len(p)))
    return rho, o


@pytest.mark.parametrize("n", [3, 5])
@pytest.mark.parametrize("t", [0.5, 1.0, 2.0])
@pytest.mark.parametrize("state,obs", BOUND_CASES)
def test_linear_bound_dominates_simulation(n, t, state, obs):
    rho, o = _case(n, state, obs)
    vals = single_shot_values(sample_shadows(rho, t, 1500, master_seed=n * 100 + int(10 * t)), o)
    var = np.var(vals, ddof=1)
    assert variance_bound_linear(o, rho, t) >= var - 3 * variance_std_error(vals)


@pytest.mark.parametrize("n", [2, 3, 4])
def test_small_time_variance_against_expansion(n):
    # GHZ off-diagonal fidelity at small t: E[o^2] -> (D^2-1)^2 / (8 D^3 t^2), just under
    # the bound's D / (8 t^2) from f3 Tr(O_o^2 diag(rho))
    dim, t = 1 << n, 0.1
    rho, o = make_ghz_state(n), make_off_diagonal_fidelity(n)
    vals = single_shot_values(sample_shadows(rho, t, 4000, master_seed=77), o)
    var, se = np.var(vals, ddof=1), variance_std_error(vals)
    small_t = (dim * dim - 1) ** 2 / (8 * dim**3 * t * t)
    assert abs(var - small_t) < 4 * se + 0.05 * small_t
    bound = variance_bound_linear(o, rho, t)
    assert bound == pytest.approx(dim / (8 * t * t), rel=0.05)
    assert bound >= var - 3 * se


def test_pauli_bound_reproduces_sample_form_factor():
    # for a Pauli string, E[o^2] / Tr(O^2) is (f1 D + f2 + f3) / D = 1/(1 - r^4) + f2/D
    dim = 16
    o = make_pauli_observable("XIZY")
    rho = make_ghz_state(4)
    for t in (0.3, 0.8, 1.5):
        ff = form_factors(t, dim)
        expected = ff["f1"] * dim + ff["f2"] * np.trace(o.matrix @ o.matrix @ rho.matrix).real + ff["f3"]
        assert variance_bound_linear(o, rho, t) == pytest.approx(expected, rel=1e-12)


def test_nonlinear_identity_operator():
    for dim, k in ((2, 2), (4, 2), (2, 3)):
        o = np.eye(dim**k)
        assert variance_bound_nonlinear(o, 0.8, k, dim) == pytest.approx(1.0)


def _single_leg_sum(a, t, dim):
    p = decompose(a)
    parts = {"I": p.trace_part * np.eye(dim), "d": p.diagonal, "o": p.off_diagonal}
    w = leg_weights(t, dim)
    return sum(w[(x, y)] * np.trace(parts[x] @ parts[y]).real for (x, y) in w)


@pytest.mark.parametrize("t", [0.4, 1.3, 3.0])
def test_nonlinear_factorises_over_identity_leg(t):
    rng = np.random.default_rng(5)
    a = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
    a = a + a.conj().T
    o = np.kron(np.eye(4), a)
    assert variance_bound_nonlinear(o, t, 2, 4) == pytest.approx(_single_leg_sum(a, t, 4), rel=1e-10)
    o3 = np.kron(np.kron(np.eye(2), np.eye(2)), a[:2, :2])
    assert variance_bound_nonlinear(o3, t, 3, 2) == pytest.approx(_single_leg_sum(a[:2, :2], t, 2), rel=1e-10)


def test_nonlinear_product_operator_factorises():
    # label sums factorise for product operators
    a = make_pauli_observable("X").matrix + 0.3 * make_pauli_observable("Z").matrix
    b = make_pauli_observable("Y").matrix + np.eye(2)
    t = 0.9
    got = variance_bound_nonlinear(np.kron(a, b), t, 2, 2)
    assert got == pytest.approx(_single_leg_sum(a, t, 2) * _single_leg_sum(b, t, 2), rel=1e-10)


def test_nonlinear_errors():
    with pytest.raises(DomainError):
        variance_bound_nonlinear(np.eye(16), 1.0, 4, 2)
    with pytest.raises(DomainError):
        variance_bound_nonlinear(np.eye(4), 1.0, 3, 32)
    with pytest.raises(DomainError):
        variance_bound_nonlinear(np.eye(8), 1.0, 2, 4)


def test_sample_complexity():
    assert sample_complexity(1.0, EstimationBudget(0.1, 0.1)) == 1000
    assert sample_complexity(0.3, EstimationBudget(0.1, 0.1)) == 300
    assert sample_complexity(1.0001, EstimationBudget(0.1, 0.1)) == 1001
    with pytest.raises(DomainError):
        EstimationBudget(1.0, 0.1)
    with pytest.raises(DomainError):
        EstimationBudget(0.1, 0.0)
    with pytest.raises(DomainError):
        sample_complexity(0.0, EstimationBudget(0.1, 0.1))


def test_sample_complexity_beat_advantage():
    # diagonal Pauli at the first beat: F_d = 1 against the 2-design's ~D
    dim = 2**10
    budget = EstimationBudget(0.1, 0.1)
    t1 = scrambling_beat_times(1)[0]
    z = np.diag(np.where(np.arange(dim) < dim // 2, 1.0, -1.0))
    rho = np.eye(dim) / dim
    bound = (form_factor(4, t1, dim) + form_factor(5, t1, dim) / dim) * dim
    haar = 3 * dim
    assert sample_complexity(bound, budget) < sample_complexity(haar, budget)
    assert bound == pytest.approx(np.trace(z @ z) * (1 + 2 / dim))
    assert variance_bound_linear(z, rho, t1) == pytest.approx(bound)


def test_f5_peak_law():
    dim = 2**20
    p = f5_peak_value(dim)
    assert p.peak == pytest.approx(1.25 + 3 * math.sqrt(3) * math.sqrt(dim) / 16)
    t_star, f_star = f5_grid_maximum(dim)
    assert f_star == pytest.approx(p.peak, rel=0.02)
    t1 = scrambling_beat_times(1)[0]
    assert abs(t_star - t1) <= 3 * p.offset_scale
    assert not p.asymptotic_only
    assert f5_peak_value(2).asymptotic_only
    slope = (r_factor(t1 + 1e-5) - r_factor(t1 - 1e-5)) / 2e-5
    assert p.slope == pytest.approx(slope)


def test_characteristic_times():
    assert characteristic_times(2**6).t_beat_decay == pytest.approx(2.0)
    assert characteristic_times(2**9).t_f5_stage2 == pytest.approx(4.0)
    assert characteristic_times(2**3).t_scramble == characteristic_times(2**12).t_scramble == 1.0
    with pytest.raises(DomainError):
        characteristic_times(1)
