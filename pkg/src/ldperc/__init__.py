"""Liouville dynamical percolation laboratory.

Dynamical site percolation on the triangular lattice whose per-site
Poisson clock rates are driven by a Gaussian multiplicative chaos
measure, together with exact Fourier-Walsh spectral oracles for small
instances, four-arm/pivotal machinery, and statistical experiments.
"""

__version__ = "0.1.0"

from .dynamics import (
    ClockRates,
    Trajectory,
    coupled_cutoff_run,
    event_log_to_csv,
    make_rates,
    near_critical,
    run_dp,
    run_ldp,
    switch_count_check,
    trajectory_to_csv,
)
from .experiments import (
    ANNEALED,
    QUENCHED,
    MixingCurve,
    RegimeReport,
    fit_power_law,
    frozen_check,
    frozen_to_csv,
    laplace_decay_check,
    mixing_curve,
    mixing_to_csv,
    regime_classify,
    theta,
)
from .field import Field, Kernel, load_field, sample_field, save_field
from .spectral import (
    SpectralDistribution,
    TruthTable,
    covariance_bruteforce,
    covariance_spectral,
    cross_covariance_bruteforce,
    intensity_check,
    sample_mask,
    spectral_distribution,
    spectral_measure,
    spectrum_to_csv,
    truth_table_from_quads,
    walsh_transform,
)
from .gmc import (
    ModerateSet,
    SiteMeasure,
    ball_masses,
    d_energy,
    default_rho,
    gmc_measure,
    lebesgue_measure,
    measure_to_csv,
    moderate_set,
    truncate_measure,
)
from .lattice import Lattice, Rect, RectQuad, build_lattice, sites_in_region
from .perc import (
    Alpha4Calibration,
    Configuration,
    calibrate_alpha4,
    crosses,
    d_mod,
    epsilon_important,
    four_arm,
    pivotal_for,
    pivotal_measure,
    sample_configuration,
    sites_connected,
    sites_to_csv,
)

__all__ = [
    "Lattice",
    "Rect",
    "RectQuad",
    "build_lattice",
    "sites_in_region",
    "Field",
    "Kernel",
    "sample_field",
    "save_field",
    "load_field",
    "SiteMeasure",
    "ModerateSet",
    "lebesgue_measure",
    "gmc_measure",
    "d_energy",
    "ball_masses",
    "default_rho",
    "moderate_set",
    "truncate_measure",
    "measure_to_csv",
    "Configuration",
    "Alpha4Calibration",
    "sample_configuration",
    "crosses",
    "sites_connected",
    "pivotal_for",
    "four_arm",
    "epsilon_important",
    "pivotal_measure",
    "sites_to_csv",
    "d_mod",
    "calibrate_alpha4",
    "ClockRates",
    "Trajectory",
    "make_rates",
    "run_dp",
    "run_ldp",
    "coupled_cutoff_run",
    "near_critical",
    "switch_count_check",
    "trajectory_to_csv",
    "event_log_to_csv",
    "TruthTable",
    "SpectralDistribution",
    "walsh_transform",
    "spectral_distribution",
    "truth_table_from_quads",
    "spectral_measure",
    "sample_mask",
    "covariance_spectral",
    "covariance_bruteforce",
    "cross_covariance_bruteforce",
    "intensity_check",
    "spectrum_to_csv",
    "ANNEALED",
    "QUENCHED",
    "MixingCurve",
    "RegimeReport",
    "theta",
    "regime_classify",
    "mixing_curve",
    "fit_power_law",
    "frozen_check",
    "laplace_decay_check",
    "mixing_to_csv",
    "frozen_to_csv",
    "__version__",
]
