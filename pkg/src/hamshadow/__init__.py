"""Classical shadow tomography driven by random GUE Hamiltonian evolution."""

__version__ = "0.1.0"

from .channel import (
    ChannelCoefficients,
    coefficients,
    empirical_channel,
    forward_channel,
    inverse_channel,
    long_time_coefficients,
    min_invertible_time,
)
from .efficiency import (
    EstimationBudget,
    FormFactorTable,
    build_form_factor_table,
    characteristic_times,
    f5_peak_value,
    form_factor,
    form_factors,
    sample_complexity,
    sample_form_factor_pauli,
    scrambling_beat_times,
    variance_bound_linear,
    variance_bound_nonlinear,
)
from .errors import (
    ChannelNotInvertibleError,
    ConfigError,
    ContractError,
    DomainError,
    FitError,
    HamShadowError,
    NumericalHealthError,
    SnapshotParseError,
)
from .qmath import bessel_j1, bessel_j1_zeros, hermitian_eig, semicircle_density
from .rmt import GueSample, derive_seed, evolution_operator, r_factor, sample_gue
from .shadows import (
    ClassicalShadow,
    DensityMatrix,
    Observable,
    Snapshot,
    empirical_variance,
    estimate_linear,
    estimate_quadratic,
    make_basis_state,
    make_ghz_state,
    make_maximally_mixed,
    make_off_diagonal_fidelity,
    make_pauli_observable,
    make_projector_observable,
    sample_shadows,
    sample_snapshots,
    shadow_from_snapshot,
    shadows_from_snapshots,
    single_shot_values,
    swap_operator,
)
