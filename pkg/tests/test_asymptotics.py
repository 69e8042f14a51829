import math

import numpy as np
import pytest

from apwave.apfunc import Frequency, IrrationalBasis, TrigPolynomial
from apwave.asymptotics import (
    ProfileConfig,
    decay_series,
    estimate_speed,
    exact_affine_wave,
    nonexpansiveness_check,
    profile_operator_T,
    shift_field,
    spectrum_leakage,
)
from apwave.flux import burgers, linear, plateau
from apwave.lifting import build_torus_problem
from apwave.solver import SchemeConfig, Stepper, TorusGrid, cfl_dt

Q = IrrationalBasis.rationals()
SQ2 = IrrationalBasis.sqrt2()


def sine(amp=1.0, k=1, const=0.0, kind="sin"):
    return TrigPolynomial.from_real_terms(Q, [(kind, Frequency.scalar(k), amp)], constant=const)


# --- decay --------------------------------------------------------------


def test_decay_of_constant_is_zero():
    prob = build_torus_problem(TrigPolynomial.constant(0.4), burgers(), 64)
    series = decay_series(prob, [0.5, 1.0])
    assert series.values == (0.0, 0.0, 0.0)


def test_burgers_sine_decays():
    prob = build_torus_problem(sine(), burgers(), 1024)
    times = [0.2, 0.5, 1.0, 2.0, 5.0, 10.0]
    s = decay_series(prob, times)
    v = np.array(s.values)
    after = v[1:]  # t >= 0.2
    assert np.all(np.diff(after) < 0)
    assert v[-1] <= 0.05
    assert s.max_increase() <= 1e-12
    assert s.invariants["mean_ok"] and s.invariants["range_ok"]


def test_affine_flux_does_not_decay():
    prob = build_torus_problem(sine(), plateau(1.5, 2.0), 512)
    s = decay_series(prob, [1.0, 5.0, 20.0])
    assert max(abs(x - s.values[0]) for x in s.values) <= 1e-3
    assert s.frame_speed == 2.0


def test_decay_csv_format():
    prob = build_torus_problem(sine(), burgers(), 64)
    csv = decay_series(prob, [0.1]).to_csv().splitlines()
    assert csv[0] == "t,value"
    assert len(csv) == 3


# --- exact waves and speeds ---------------------------------------------


def test_exact_affine_wave_examples():
    assert abs(exact_affine_wave(0.0, 1.0, 1.0, 2.0, 0.25, 0.0)) <= 1e-15
    x = np.linspace(0, 1, 11)
    assert np.allclose(exact_affine_wave(0.3, 0.5, 2.0, 1.0, 0.0, x), 0.3 + 0.5 * np.sin(4 * np.pi * x))
    # translating along characteristics with speed tau / xi leaves the value unchanged
    t, tau, xi = 0.37, 3.0, 2.0
    assert np.allclose(exact_affine_wave(0, 1, xi, tau, t, x + tau * t / xi), exact_affine_wave(0, 1, xi, tau, 0, x))


def test_shift_field_integer_and_fractional():
    v = np.arange(8.0)
    assert np.array_equal(shift_field(v, [2]), np.roll(v, -2))
    assert shift_field(v, [0.5])[0] == 0.5


def test_speed_of_constructed_shift():
    n = 512
    x = (np.arange(n) + 0.5) / n
    u1 = np.sin(2 * np.pi * x) + 0.3 * np.cos(6 * np.pi * x)
    dt = 0.05
    u2 = np.sin(2 * np.pi * (x - dt)) + 0.3 * np.cos(6 * np.pi * (x - dt))
    est = estimate_speed(u1, u2, dt)
    assert not est.degenerate
    assert abs(est.speed - 1.0) <= est.quantum


def test_speed_of_constant_field():
    est = estimate_speed(np.full(64, 0.2), np.full(64, 0.2), 0.1)
    assert est.degenerate and est.speed == 0.0


def test_speed_of_exact_affine_wave():
    n = 1024
    x = (np.arange(n) + 0.5) / n
    u1 = exact_affine_wave(0.0, 1.0, 1.0, 2.0, 0.3, x)
    u2 = exact_affine_wave(0.0, 1.0, 1.0, 2.0, 0.35, x)
    est = estimate_speed(u1, u2, 0.05, search=(-3.0, 3.0))
    assert abs(est.speed - 2.0) <= 2 * est.quantum


def test_spectrum_leakage():
    n = 64
    x = (np.arange(n) + 0.5) / n
    assert spectrum_leakage(np.sin(2 * np.pi * x)) == 0.0
    assert spectrum_leakage(np.sin(6 * np.pi * x), step=3) <= 1e-12
    assert spectrum_leakage(np.sin(2 * np.pi * x), step=3) > 0.9


# --- profiles -----------------------------------------------------------

CFG = ProfileConfig(cells=512, t_schedule=(1.0, 2.0, 4.0, 8.0, 16.0))


def test_profile_of_fully_affine_flux_is_the_data():
    u0 = sine(0.8, const=0.1)
    rep = profile_operator_T(u0, plateau(1.5, 2.0), CFG)
    prob = build_torus_problem(u0, plateau(1.5, 2.0), CFG.cells)
    assert rep.speed == 2.0 and rep.speed_source == "affine_slope"
    assert np.max(np.abs(rep.profile.values - prob.v0.values)) <= 1e-12
    assert rep.all_pass, rep.verdicts


def test_profile_of_burgers_is_the_mean():
    rep = profile_operator_T(sine(0.5), burgers(), CFG)
    assert np.all(rep.profile.values == 0.0)
    assert rep.segment == (0.0, 0.0)
    assert rep.speed_degenerate and rep.speed == 0.0


@pytest.mark.parametrize("f", [burgers(), plateau(0.5, 1.0), linear(-1.0)], ids=["burgers", "plateau", "affine"])
def test_profile_of_constant_is_constant(f):
    rep = profile_operator_T(TrigPolynomial.constant(0.25), f, CFG)
    assert np.all(rep.profile.values == 0.25)


def test_plateau_profile_squeezed_into_segment():
    # range [-1, 1] data on a flux affine only on [-1/2, 1/2]
    u0 = TrigPolynomial.from_real_terms(
        Q, [("sin", Frequency.scalar(1), 0.6907500362696838), ("sin", Frequency.scalar(2), 0.46050002417978925)]
    )
    cfg = ProfileConfig(cells=1024, t_schedule=(1.0, 2.0, 4.0, 8.0, 16.0, 32.0))
    rep = profile_operator_T(u0, plateau(0.5, 1.0), cfg)
    assert rep.speed == 1.0
    assert rep.segment[0] >= -0.52 and rep.segment[1] <= 0.52
    assert rep.affine_residual <= 1e-10
    assert rep.converging
    assert rep.mean_residual <= 1e-3
    assert rep.speed_spread <= 3 * rep.speed_quantum


def test_two_frequency_profile_in_lifted_module():
    u0 = TrigPolynomial.from_real_terms(
        SQ2, [("sin", Frequency.scalar(1, 0), 0.5), ("cos", Frequency.scalar(0, 1), 0.4)]
    )
    rep = profile_operator_T(u0, plateau(0.5, 1.0), ProfileConfig(cells=128, t_schedule=(1.0, 2.0, 4.0, 8.0)))
    assert rep.spectrum_leakage == 0.0
    assert rep.affine_residual <= 1e-10
    assert rep.invariants["mean_ok"] and rep.invariants["range_ok"]


# --- comparison, contraction, non-expansiveness --------------------------


def test_order_preserved_with_shared_steps():
    lo = sine(0.5, const=-0.1)
    hi = TrigPolynomial.from_real_terms(Q, [("sin", Frequency.scalar(1), 0.5), ("cos", Frequency.scalar(2), 0.05)],
                                        constant=0.2)
    p1 = build_torus_problem(lo, burgers(), 256)
    p2 = build_torus_problem(hi, burgers(), 256)
    u, v = p1.v0.values, p2.v0.values
    assert np.all(v >= u)
    cfg = SchemeConfig()
    stp = Stepper(p1.v0.grid, p1.flux, cfg)
    dt = cfl_dt(p1.v0, p1.flux, cfg, (-0.6, 0.75))
    al = stp.alphas(-0.6, 0.75)
    for _ in range(300):
        u, v = stp.step(u, dt, al), stp.step(v, dt, al)
        assert np.min(v - u) >= -1e-14


def test_torus_distance_non_increasing_with_shared_steps():
    g = TorusGrid((64, 64))
    p1 = build_torus_problem(TrigPolynomial.from_real_terms(
        SQ2, [("sin", Frequency.scalar(1, 0), 0.5), ("sin", Frequency.scalar(0, 1), 0.5)]), burgers(), g)
    p2 = build_torus_problem(TrigPolynomial.from_real_terms(
        SQ2, [("cos", Frequency.scalar(1, 0), 0.6), ("sin", Frequency.scalar(1, 1), 0.3)]), burgers(), g)
    cfg = SchemeConfig(cfl=0.4)
    stp = Stepper(g, p1.flux, cfg)
    dt = cfl_dt(p1.v0, p1.flux, cfg, (-1.0, 1.0))
    al = stp.alphas(-1.0, 1.0)
    u, v = p1.v0.values, p2.v0.values
    d = float(np.mean(np.abs(u - v)))
    for _ in range(100):
        u, v = stp.step(u, dt, al), stp.step(v, dt, al)
        dn = float(np.mean(np.abs(u - v)))
        assert dn <= d + 1e-12
        d = dn


def test_nonexpansive_identical_data():
    res = nonexpansiveness_check(sine(0.5), sine(0.5), burgers(), CFG)
    assert res.d_profiles == 0.0 and res.holds


def test_nonexpansive_constants_equality():
    a, b = TrigPolynomial.constant(0.3), TrigPolynomial.constant(-0.45)
    res = nonexpansiveness_check(a, b, plateau(0.5, 1.0), CFG)
    assert abs(res.d_profiles - 0.75) <= 1e-10
    assert abs(res.d_initial - 0.75) <= 1e-10


def test_nonexpansive_burgers_two_sines():
    res = nonexpansiveness_check(sine(0.5), sine(0.3, k=2, kind="cos"), burgers(), CFG)
    assert res.d_profiles == 0.0
    assert res.d_initial > 0
    assert math.isclose(res.d_initial, res.d_initial_grid, abs_tol=1e-3)
