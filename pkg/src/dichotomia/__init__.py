"""Dichotomy spectra and smooth linearization of nonautonomous difference equations."""
from .cocycle import (
    CallableNonlinearity,
    LinearSystem,
    NonautonomousSystem,
    SaturatingNonlinearity,
    ZeroNonlinearity,
    make_example,
    nonlinear_orbit,
    propagator,
    tangent_orbit,
)
from .dichotomy import (
    AdaptedNormFamily,
    DichotomyCertificate,
    estimate_projections,
    test_scaled_dichotomy,
    verify_norm_family,
)
from .linearize import (
    ConjugacyEvaluator,
    ConjugacyOptions,
    FoliationSolveResult,
    ResidualReport,
    extend_by_fundamental_domains,
    solve_foliation_point,
    verify_conjugacy,
)
from .spectrum import (
    GapReport,
    SpectralInterval,
    SpectrumOptions,
    SpectrumResult,
    check_gap_condition,
    dichotomy_spectrum,
    dim_growth_subspace,
)

__version__ = "0.1.0"
