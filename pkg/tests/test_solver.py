import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from apwave.flux import PiecewiseFlux, burgers, lift_flux, linear, plateau
from apwave.solver import (
    GridState,
    MonotonicityError,
    SchemeConfig,
    Stepper,
    TorusGrid,
    advance,
    cfl_dt,
    check_invariants,
    entropy_residual,
    godunov_flux,
    l1_deviation,
    l1_distance,
    llf_flux,
    load_snapshot,
    mean_mass,
    save_snapshot,
    step,
)

CUBIC = PiecewiseFlux.scalar([-2.0, 2.0], [[0.0, -1.0, 0.0, 1.0]])
GODUNOV = SchemeConfig()


def sine_state(n, amp=1.0):
    x = (np.arange(n) + 0.5) / n
    return GridState(TorusGrid((n,)), amp * np.sin(2 * np.pi * x))


def sine_cell_averages(n, shift=0.0):
    # exact averages of sin(2 pi (x - shift)) over each cell
    e = np.arange(n + 1) / n - shift
    return -(np.cos(2 * np.pi * e[1:]) - np.cos(2 * np.pi * e[:-1])) / (2 * np.pi) * n


# --- numerical fluxes ---------------------------------------------------


def test_godunov_examples():
    f = burgers()[0]
    assert godunov_flux(f, -1.0, 1.0) == 0.0
    for u in (-1.3, 0.0, 0.7):
        assert godunov_flux(f, u, u) == f(u)
    g = CUBIC[0]
    us = np.linspace(-1.5, 1.5, 100001)
    assert abs(godunov_flux(g, -1.5, 1.5) - np.min(g(us))) <= 1e-9
    assert abs(godunov_flux(g, 1.5, -1.5) - np.max(g(us))) <= 1e-9


def test_llf_examples():
    zero = PiecewiseFlux.scalar([-2.0, 2.0], [[0.0]])[0]
    assert llf_flux(zero, 0.3, -0.4, 1.0) == pytest.approx((0.3 + 0.4) / 2)
    assert llf_flux(burgers()[0], 0.0, 1.0, 1.0) == pytest.approx(-0.25)
    assert llf_flux(burgers()[0], 0.4, 0.4, 2.0) == burgers()[0](0.4)
    with pytest.raises(MonotonicityError):
        llf_flux(burgers()[0], 0.0, 1.0, 0.5)


@pytest.mark.parametrize("f", [burgers(), CUBIC, plateau(0.5, 1.0)], ids=["burgers", "cubic", "plateau"])
def test_godunov_monotone_on_lattice(f):
    from apwave._kernels import FluxTable, godunov_values

    t = FluxTable.from_component(f[0])
    u = np.linspace(-1.9, 1.9, 100)
    UL, UR = np.meshgrid(u, u, indexing="ij")
    G = godunov_values(UL, UR, t)
    assert np.all(np.diff(G, axis=0) >= -1e-14)  # nondecreasing in ul
    assert np.all(np.diff(G, axis=1) <= 1e-14)   # nonincreasing in ur


# --- time step ----------------------------------------------------------


def test_cfl_dt_formula():
    s = GridState(TorusGrid((100,)), np.linspace(-1, 1, 100))
    assert cfl_dt(s, burgers(), GODUNOV) == pytest.approx(0.0045, rel=1e-15)
    const = PiecewiseFlux.scalar([-2.0, 2.0], [[0.7]])
    assert cfl_dt(s, const, GODUNOV) == GODUNOV.dt_max


def test_cfl_dt_lifted_two_dimensional():
    from apwave.flux import lipschitz_bound

    f = lift_flux(burgers(), [[1.0], [math.sqrt(2)]])
    s = GridState(TorusGrid((64, 32)), np.random.default_rng(0).uniform(-1, 1, (64, 32)))
    cfg = SchemeConfig(cfl=0.4)
    L = lipschitz_bound(f, s.range)
    assert cfl_dt(s, f, cfg) == pytest.approx(0.4 * (1 / 64) / (2 * L), rel=1e-15)
    assert L == pytest.approx(math.sqrt(2) * max(abs(v) for v in s.range), rel=1e-15)


def test_splitting_rejects_large_cfl():
    with pytest.raises(ValueError):
        SchemeConfig(cfl=0.9).check(2)


# --- advance ------------------------------------------------------------


def test_linear_transport_matches_exact_shift():
    n = 1024
    out = advance(sine_state(n), linear(1.0), GODUNOV, 0.5)
    err = np.mean(np.abs(out.values - sine_cell_averages(n, 0.5)))
    assert err <= 0.02
    assert out.time == 0.5


def test_constant_state_is_steady():
    s = GridState.constant(TorusGrid((32, 16)), 0.3)
    f = lift_flux(burgers(), [[1.0], [math.sqrt(2)]])
    out = advance(s, f, SchemeConfig(cfl=0.4), 1.0)
    assert np.array_equal(out.values, s.values)


def _restrict(u, factor):
    return u.reshape(-1, factor).mean(axis=1)


def test_burgers_two_grid_convergence():
    sols = {n: advance(sine_state(n), burgers(), GODUNOV, 0.3).values for n in (512, 1024, 2048)}
    d1 = np.mean(np.abs(sols[512] - _restrict(sols[1024], 2)))
    d2 = np.mean(np.abs(sols[1024] - _restrict(sols[2048], 2)))
    assert d1 / d2 >= 1.5


@pytest.mark.parametrize("rule", ["godunov", "llf"])
def test_backends_agree(rule):
    cfg = SchemeConfig(flux_rule=rule)
    s = sine_state(256, 0.8)
    a = advance(s, CUBIC, cfg, 0.2, backend="numba")
    b = advance(s, CUBIC, cfg, 0.2, backend="numpy")
    assert np.max(np.abs(a.values - b.values)) <= 1e-13

    rng = np.random.default_rng(5)
    f2 = lift_flux(burgers(), [[1.0], [math.sqrt(2)]])
    s2 = GridState(TorusGrid((32, 48)), rng.uniform(-1, 1, (32, 48)))
    cfg2 = SchemeConfig(flux_rule=rule, cfl=0.4)
    a = advance(s2, f2, cfg2, 0.1, backend="numba")
    b = advance(s2, f2, cfg2, 0.1, backend="numpy")
    assert np.max(np.abs(a.values - b.values)) <= 1e-13


def test_advance_is_deterministic():
    s = sine_state(300)
    a = advance(s, burgers(), GODUNOV, 0.7)
    b = advance(s, burgers(), GODUNOV, 0.7)
    assert a.values.tobytes() == b.values.tobytes()


def test_translation_equivariance_linear_flux():
    rng = np.random.default_rng(11)
    g = TorusGrid((128,))
    u = rng.uniform(-1, 1, 128)
    a = advance(GridState(g, u), linear(-1.3), GODUNOV, 0.4)
    b = advance(GridState(g, np.roll(u, 17)), linear(-1.3), GODUNOV, 0.4)
    assert np.array_equal(np.roll(a.values, 17), b.values)


# --- monotone-scheme properties ------------------------------------------


states = st.integers(0, 2**32 - 1)


@settings(max_examples=15, deadline=None)
@given(states, st.sampled_from(["burgers", "cubic"]), st.sampled_from(["godunov", "llf"]))
def test_discrete_l1_contraction(seed, which, rule):
    f = burgers() if which == "burgers" else CUBIC
    cfg = SchemeConfig(flux_rule=rule)
    rng = np.random.default_rng(seed)
    g = TorusGrid((64,))
    a = GridState(g, rng.uniform(-1, 1, 64))
    b = GridState(g, rng.uniform(-1, 1, 64))
    stp = Stepper(g, f, cfg)
    dt = cfl_dt(a, f, cfg, (-1.0, 1.0))
    al = stp.alphas(-1.0, 1.0)
    ua, ub = a.values, b.values
    d = l1_distance(a, b)
    for _ in range(60):
        ua, ub = stp.step(ua, dt, al), stp.step(ub, dt, al)
        dn = float(np.mean(np.abs(ua - ub)))
        assert dn <= d + 1e-12
        d = dn


@settings(max_examples=15, deadline=None)
@given(states)
def test_order_preservation(seed):
    rng = np.random.default_rng(seed)
    g = TorusGrid((24, 20))
    f = lift_flux(CUBIC, [[1.0], [math.sqrt(2)]])
    lo = rng.uniform(-1, 0.5, g.shape)
    hi = lo + rng.uniform(0, 0.5, g.shape)
    cfg = SchemeConfig(cfl=0.4)
    a = advance(GridState(g, lo, bounds=(-1.0, 1.0)), f, cfg, 0.05)
    b = advance(GridState(g, hi, bounds=(-1.0, 1.0)), f, cfg, 0.05)
    assert np.all(b.values >= a.values)


@settings(max_examples=15, deadline=None)
@given(states, st.sampled_from([1, 2, 3]))
def test_conservation_and_maximum_principle(seed, dim):
    rng = np.random.default_rng(seed)
    shape = {1: (50,), 2: (20, 16), 3: (8, 6, 10)}[dim]
    g = TorusGrid(shape)
    rows = rng.normal(size=(dim, 1))
    f = lift_flux(CUBIC, rows)
    s0 = GridState(g, rng.uniform(-1, 1, shape))
    cfg = SchemeConfig(cfl=0.45 if dim == 1 else 0.4)
    states = [advance(s0, f, cfg, t) for t in (0.01, 0.05)]
    inv = check_invariants(s0, states)
    assert inv["mean_ok"] and inv["range_ok"]
    assert abs(mean_mass(states[-1]) - mean_mass(s0)) <= 1e-12 * max(1.0, np.max(np.abs(s0.values)))


def test_entropy_inequality_on_ladder():
    f = burgers()
    s = sine_state(200)
    stp = Stepper(s.grid, f, GODUNOV)
    dt = cfl_dt(s, f, GODUNOV)
    lam = dt / s.grid.h[0]
    ladder = np.linspace(-1.2, 1.2, 16)
    u = s.values
    worst = -np.inf
    for _ in range(100):
        un = stp.step(u, dt, [0.0])
        for k in ladder:
            worst = max(worst, float(np.max(entropy_residual(u, un, f[0], lam, k))))
        u = un
    assert worst <= 1e-12


# --- diagnostics and snapshots -------------------------------------------


def test_l1_distance_examples():
    rng = np.random.default_rng(2)
    g = TorusGrid((37, 11))
    a = GridState(g, rng.normal(size=g.shape))
    assert l1_distance(a, a) == 0.0
    b = GridState(g, a.values + 0.25)
    assert l1_distance(a, b) == pytest.approx(0.25, abs=1e-15)
    c = GridState(g, rng.normal(size=g.shape))
    oracle = math.fsum(abs(x - y) for x, y in zip(a.values.ravel(), c.values.ravel())) / g.ncells
    assert abs(l1_distance(a, c) - oracle) <= 1e-14


def test_mean_mass_examples():
    assert mean_mass(GridState.constant(TorusGrid((9,)), 1.5)) == 1.5
    assert abs(mean_mass(sine_state(256))) <= 1e-14
    s = sine_state(256)
    assert l1_deviation(s, 0.0) == pytest.approx(2 / math.pi, abs=1e-4)


@pytest.mark.parametrize("fmt", ["bin", "csv"])
def test_snapshot_round_trip(tmp_path, fmt):
    rng = np.random.default_rng(0)
    s = GridState(TorusGrid((6, 5)), rng.normal(size=(6, 5)), time=1.25)
    save_snapshot(s, tmp_path / "snap", fmt)
    back = load_snapshot(tmp_path / "snap")
    assert back.values.tobytes() == s.values.tobytes()
    assert back.time == s.time and back.grid == s.grid


def test_single_step_and_time_bookkeeping():
    s = sine_state(64)
    out = step(s, burgers(), GODUNOV, 0.001)
    assert out.time == pytest.approx(0.001)
    with pytest.raises(ValueError):
        advance(out, burgers(), GODUNOV, 0.0)


def test_memory_cap(monkeypatch):
    monkeypatch.setenv("APWAVE_MEM_CAP_MB", "1")
    with pytest.raises(MemoryError):
        TorusGrid((256, 256))


def test_grid_validation():
    with pytest.raises(ValueError):
        TorusGrid((3,))
    with pytest.raises(ValueError):
        TorusGrid((4, 4, 4, 4))
