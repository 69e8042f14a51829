"""Entropy solutions of scalar conservation laws with almost-periodic data."""
from .apfunc import (
    AccuracyWarning,
    CapabilityError,
    Frequency,
    FreqModule,
    InvalidIntervalError,
    InvalidPolynomialError,
    IrrationalBasis,
    TrigPolynomial,
    cutoff,
    eval_trig,
    mean_and_coefficients,
    module_basis,
    n1_seminorm,
)
from .flux import (
    AffineInterval,
    PiecewiseFlux,
    PiecewisePolynomial,
    eval_flux,
    lift_flux,
    lipschitz_bound,
    maximal_affine_interval,
    nondegeneracy_check,
)
from .solver import (
    GridState,
    SchemeConfig,
    TorusGrid,
    advance,
    cfl_dt,
    godunov_flux,
    l1_distance,
    llf_flux,
    mean_mass,
)
from ._kernels import BACKEND

__version__ = "0.1.0"
