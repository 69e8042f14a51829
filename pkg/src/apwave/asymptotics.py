"""Long-time diagnostics: decay to the mean, traveling-wave profiles, operator T.

Runs can be carried out in a frame moving with a speed c (flux phi - c u).
The deviation integral and all profile quantities are translation
invariant, and when phi is affine with slope c on the data range the
comoving flux is constant there, so the scheme introduces no transport
error at all.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .apfunc import TrigPolynomial, cutoff, mean_and_coefficients, n1_seminorm
from .flux import (
    AffineInterval,
    PiecewiseFlux,
    comoving_flux,
    lift_flux,
    maximal_affine_interval,
)
from .lifting import LiftedProblem, build_torus_problem, common_module
from .solver import (
    GridState,
    SchemeConfig,
    Stepper,
    TorusGrid,
    advance,
    check_invariants,
    l1_deviation,
)


# ---------------------------------------------------------------------------
# running a lifted problem
# ---------------------------------------------------------------------------


def wave_frame_speed(f: PiecewiseFlux, I: float) -> float:
    """Slope of the maximal affine interval at I, or 0 when that interval is a point."""
    if f.dim != 1:
        return 0.0
    iv = maximal_affine_interval(f[0], I)
    return 0.0 if iv.degenerate else iv.slope


def frame_flux(problem: LiftedProblem, speed: float) -> PiecewiseFlux:
    """Lifted flux seen from a frame moving with physical ``speed``."""
    if speed == 0.0:
        return problem.flux
    vel = np.full(problem.physical_flux.dim, speed) if problem.physical_flux.dim == 1 else speed
    return lift_flux(comoving_flux(problem.physical_flux, vel), problem.map.rows)


def run_schedule(problem: LiftedProblem, times: Sequence[float], cfg: SchemeConfig | None = None,
                 frame_speed: float = 0.0) -> list[GridState]:
    """States at the requested (increasing) times, in the frame moving with ``frame_speed``."""
    cfg = cfg or SchemeConfig()
    times = list(times)
    if any(b <= a for a, b in zip(times, times[1:])) or (times and times[0] < 0):
        raise ValueError("times must be nonnegative and strictly increasing")
    f = frame_flux(problem, frame_speed)
    stepper = Stepper(problem.v0.grid, f, cfg)
    out = []
    state = problem.v0
    for t in times:
        state = advance(state, f, cfg, t, stepper=stepper)
        out.append(state)
    return out


# ---------------------------------------------------------------------------
# decay
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DecaySeries:
    times: tuple[float, ...]
    values: tuple[float, ...]
    level: float
    frame_speed: float = 0.0
    invariants: dict = field(default_factory=dict)

    def __post_init__(self):
        if any(v < 0 for v in self.values):
            raise ValueError("deviations are nonnegative")
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise ValueError("times must be strictly increasing")

    def max_increase(self) -> float:
        v = np.asarray(self.values)
        return float(np.max(np.diff(v), initial=0.0))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "value"])
        for t, v in zip(self.times, self.values):
            w.writerow([repr(float(t)), repr(float(v))])
        return buf.getvalue()


def decay_series(problem: LiftedProblem, times: Sequence[float], cfg: SchemeConfig | None = None,
                 frame_speed: float | None = None) -> DecaySeries:
    """Torus L1 deviation from the mean I at each requested time.

    By default the run is done in the frame of the affine slope at I (see
    ``wave_frame_speed``); the deviation integral does not depend on the frame.
    """
    I = problem.mean
    if frame_speed is None:
        frame_speed = wave_frame_speed(problem.physical_flux, I)
    times = sorted(set(float(t) for t in times))
    if times[0] > 0.0:
        states = [problem.v0] + run_schedule(problem, times, cfg, frame_speed)
        times = [0.0] + times
    else:
        states = [problem.v0] + run_schedule(problem, times[1:], cfg, frame_speed)
    values = tuple(l1_deviation(s, I) for s in states)
    inv = check_invariants(problem.v0, states)
    return DecaySeries(tuple(times), values, I, frame_speed, inv)


def exact_affine_wave(I: float, delta: float, xi: float, tau: float, t, x):
    return I + delta * np.sin(2 * np.pi * (xi * np.asarray(x) - tau * t))


# ---------------------------------------------------------------------------
# shifts and speeds
# ---------------------------------------------------------------------------


def shift_field(values: np.ndarray, disp_cells: Sequence[float]) -> np.ndarray:
    """Periodic multilinear resampling g(y) = values(y + disp), disp in cells per axis."""
    out = np.asarray(values, dtype=float)
    for axis, d in enumerate(disp_cells):
        if d == 0:
            continue
        k = math.floor(d)
        a = d - k
        base = np.roll(out, -k, axis=axis)
        if a == 0:
            out = base
        else:
            out = (1 - a) * base + a * np.roll(base, -1, axis=axis)
    return out


@dataclass(frozen=True)
class SpeedEstimate:
    speed: float
    degenerate: bool
    quantum: float
    objective: float


def estimate_speed(u1, u2, dt: float, search: tuple[float, float] = (-2.0, 2.0),
                   direction: Sequence[float] = (1.0,), max_grid: int = 4001,
                   tol: float = 1e-10) -> SpeedEstimate:
    """Speed s minimizing the L1 mismatch between u2(. + s dt * direction) and u1.

    ``u1``, ``u2`` are arrays (or GridStates) on the unit torus; ``direction``
    maps a unit physical displacement to torus coordinates (the embedding rows).
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    a1 = np.asarray(getattr(u1, "values", u1), dtype=float)
    a2 = np.asarray(getattr(u2, "values", u2), dtype=float)
    if a1.shape != a2.shape:
        raise ValueError("fields must share the grid")
    direction = np.asarray(direction, dtype=float).reshape(-1)
    shape = np.asarray(a1.shape, dtype=float)
    cells_per_speed = dt * direction * shape  # cell displacement per unit speed
    quantum = 1.0 / float(np.max(np.abs(cells_per_speed)))
    if np.ptp(a1) < 1e-12 and np.ptp(a2) < 1e-12:
        return SpeedEstimate(0.0, True, quantum, 0.0)

    def J(s):
        return float(np.mean(np.abs(shift_field(a2, s * cells_per_speed) - a1)))

    lo, hi = search
    n = int(min(max_grid, math.ceil((hi - lo) / quantum) + 1))
    grid = np.linspace(lo, hi, max(n, 3))
    vals = np.array([J(s) for s in grid])
    if vals.max() - vals.min() < tol:
        return SpeedEstimate(0.0, True, quantum, float(vals.min()))
    i = int(np.argmin(vals))
    step = grid[1] - grid[0]
    a, b = max(lo, grid[i] - step), min(hi, grid[i] + step)
    g = (math.sqrt(5) - 1) / 2
    c, d = b - g * (b - a), a + g * (b - a)
    fc, fd = J(c), J(d)
    for _ in range(60):
        if b - a < 1e-6 * quantum:
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - g * (b - a)
            fc = J(c)
        else:
            a, c, fc = c, d, fd
            d = a + g * (b - a)
            fd = J(d)
    best = min((vals[i], grid[i]), (fc, c), (fd, d))
    return SpeedEstimate(float(best[1]), False, quantum, float(best[0]))


def spectrum_leakage(values: np.ndarray, step: int = 1) -> float:
    """Relative L1 mass of DFT modes whose indices are not all multiples of ``step``.

    On a lifted torus every grid mode k corresponds to the frequency
    k . lambda in the module, so ``step=1`` gives exactly zero; for a 1-D
    super-cell of m near-periods the module's images are the multiples of m.
    """
    F = np.fft.fftn(values - np.mean(values))
    total = float(np.sum(np.abs(F)))
    if total == 0.0 or step == 1:
        return 0.0
    masks = np.ix_(*[(np.fft.fftfreq(n) * n).astype(int) % step == 0 for n in values.shape])
    on = np.zeros(values.shape, dtype=bool)
    on[masks] = True
    return float(np.sum(np.abs(F[~on])) / total)


# ---------------------------------------------------------------------------
# traveling-wave profiles
# ---------------------------------------------------------------------------


@dataclass
class WaveReport:
    speed: float
    speed_source: str
    speed_degenerate: bool
    profile: GridState
    segment: tuple[float, float]
    interval: AffineInterval
    mean: float
    I: float
    times: tuple[float, ...]
    cauchy_increments: tuple[float, ...]
    converging: bool
    squeeze_residual: float
    affine_residual: float
    mean_residual: float
    spectrum_leakage: float
    speed_estimates: tuple[float, ...]
    speed_spread: float
    speed_quantum: float
    invariants: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=lambda: {"affine": 1e-10, "mean": 1e-3, "leakage": 1e-6})

    @property
    def verdicts(self) -> dict:
        tol = self.tolerances
        out = {
            "affine_on_range": {"pass": self.affine_residual <= tol["affine"], "residual": self.affine_residual},
            "mean_matches_I": {"pass": self.mean_residual <= tol["mean"], "residual": self.mean_residual},
            "spectrum_in_M0": {"pass": self.spectrum_leakage <= tol["leakage"], "leakage": self.spectrum_leakage},
            "speed_consistency": {
                "pass": self.speed_degenerate or not self.speed_estimates
                or self.speed_spread <= 3 * self.speed_quantum,
                "spread": self.speed_spread,
                "quantum": self.speed_quantum,
            },
            "cauchy_converging": {"pass": self.converging, "increments": list(self.cauchy_increments)},
        }
        return out

    @property
    def all_pass(self) -> bool:
        return all(v["pass"] for v in self.verdicts.values())

    def to_json(self) -> dict:
        iv = self.interval
        return {
            "speed": self.speed,
            "speed_source": self.speed_source,
            "speed_degenerate": self.speed_degenerate,
            "segment": list(self.segment),
            "affine_interval": {"a": iv.a, "b": iv.b, "slope": iv.slope, "offset": iv.offset},
            "profile_mean": self.mean,
            "I": self.I,
            "times": list(self.times),
            "cauchy_increments": list(self.cauchy_increments),
            "squeeze_residual": self.squeeze_residual,
            "speed_estimates": list(self.speed_estimates),
            "profile_shape": list(self.profile.grid.shape),
            "verdicts": self.verdicts,
            "invariants": self.invariants,
        }


def _decreasing(inc: Sequence[float], floor: float = 1e-12) -> bool:
    return all(b < a or b <= floor for a, b in zip(inc, inc[1:]))


def extract_profile(states: Sequence[GridState], times: Sequence[float], c: float,
                    interval: AffineInterval, flux: PiecewiseFlux, direction: Sequence[float],
                    I: float, frame_speed: float = 0.0,
                    speed_pairs: Sequence[tuple[GridState, GridState, float]] = (),
                    speed_search: float = 2.0, leakage_step: int = 1,
                    quantile: float = 1e-3) -> WaveReport:
    """Cut-off and re-centred iterates w_k = s_ab(u(t_k, . + c t_k)) and their limit.

    ``states`` are solutions at ``times`` computed in a frame moving with
    ``frame_speed``; ``direction`` is the embedding row(s) mapping physical
    displacement to torus displacement.
    """
    if len(states) < 3 or len(states) != len(times):
        raise ValueError("need at least three states, one per time")
    direction = np.asarray(direction, dtype=float).reshape(-1)
    shape = np.asarray(states[0].grid.shape, dtype=float)
    a, b = interval.a, interval.b
    ws = []
    for s, t in zip(states, times):
        disp = (c - frame_speed) * t * direction * shape
        ws.append(cutoff(shift_field(s.values, disp), a, b))
    inc = tuple(float(np.mean(np.abs(w2 - w1))) for w1, w2 in zip(ws, ws[1:]))
    w = ws[-1]
    last = shift_field(states[-1].values, (c - frame_speed) * times[-1] * direction * shape)
    squeeze = float(np.mean(np.abs(last - w)))
    profile = GridState(states[0].grid, w, float(times[-1]))
    flat = np.sort(w.reshape(-1))
    av = float(np.quantile(flat, quantile))
    bv = float(np.quantile(flat, 1 - quantile))
    mean = float(np.mean(w))
    av, bv = min(av, mean), max(bv, mean)
    affine_res = 0.0 if bv <= av else interval.residual(flux[0], av, bv)

    estimates = []
    quantum = 0.0
    degenerate = bv - av < 1e-12
    if not degenerate:
        for s1, s2, dt in speed_pairs:
            est = estimate_speed(s1, s2, dt, (-speed_search, speed_search), direction)
            quantum = est.quantum
            if not est.degenerate:
                estimates.append(frame_speed + est.speed)
    spread = float(np.ptp(estimates)) if estimates else 0.0

    if interval.degenerate:
        if degenerate or not estimates:
            speed, source, sdeg = 0.0, "degenerate", True
        else:
            speed, source, sdeg = float(np.median(estimates)), "estimate", False
    else:
        speed, source, sdeg = interval.slope, "affine_slope", degenerate

    return WaveReport(
        speed=speed, speed_source=source, speed_degenerate=sdeg, profile=profile,
        segment=(av, bv), interval=interval, mean=mean, I=I, times=tuple(times),
        cauchy_increments=inc, converging=_decreasing(inc), squeeze_residual=squeeze,
        affine_residual=affine_res, mean_residual=abs(mean - I),
        spectrum_leakage=spectrum_leakage(w, leakage_step),
        speed_estimates=tuple(estimates), speed_spread=spread, speed_quantum=quantum,
    )


@dataclass(frozen=True)
class ProfileConfig:
    cells: int = 1024
    t_schedule: tuple[float, ...] = (1.0, 2.0, 4.0, 8.0, 16.0, 32.0)
    scheme: SchemeConfig = field(default_factory=SchemeConfig)
    speed_pair_dt: float = 0.05
    speed_pairs: int = 3

    @classmethod
    def geometric(cls, t0: float = 1.0, ratio: float = 2.0, count: int = 6, **kw) -> "ProfileConfig":
        return cls(t_schedule=tuple(t0 * ratio**k for k in range(count)), **kw)


def profile_operator_T(u0: TrigPolynomial, f: PiecewiseFlux, cfg: ProfileConfig | None = None,
                       module=None) -> WaveReport:
    """Traveling-wave profile of the entropy solution with data ``u0`` (1-D)."""
    cfg = cfg or ProfileConfig()
    if u0.dim != 1 or f.dim != 1:
        raise ValueError("the profile operator is one-dimensional")
    module = module or common_module(u0)
    if module.rank > 2:
        raise ValueError("profile operator supports spectra of rank <= 2")
    I = mean_and_coefficients(u0)[0]
    interval = maximal_affine_interval(f[0], I)
    frame = 0.0 if interval.degenerate else interval.slope
    problem = build_torus_problem(u0, f, cfg.cells, module)

    sched = sorted(cfg.t_schedule)
    pair_starts = sched[-cfg.speed_pairs:] if cfg.speed_pairs else []
    extra = [t + cfg.speed_pair_dt for t in pair_starts]
    all_times = sorted(set(sched) | set(extra))
    states = dict(zip(all_times, run_schedule(problem, all_times, cfg.scheme, frame)))
    pairs = [(states[t], states[t + cfg.speed_pair_dt], cfg.speed_pair_dt) for t in pair_starts]
    direction = problem.map.rows[:, 0]
    lo, hi = f.interval
    search = max(1e-3, float(np.max(np.abs([f[0].derivative(lo), f[0].derivative(hi)]))))
    rep = extract_profile([states[t] for t in sched], sched, frame, interval, f, direction, I,
                          frame_speed=frame, speed_pairs=pairs, speed_search=search)
    rep.invariants = check_invariants(problem.v0, list(states.values()))
    return rep


@dataclass(frozen=True)
class NonexpansivenessResult:
    d_profiles: float
    d_initial: float
    d_initial_grid: float
    slack: float
    allowance: float
    speeds: tuple[float, float]
    invariants: dict = field(default_factory=dict)

    @property
    def holds(self) -> bool:
        return self.d_profiles <= self.d_initial + self.allowance


def nonexpansiveness_check(u01: TrigPolynomial, u02: TrigPolynomial, f: PiecewiseFlux,
                           cfg: ProfileConfig | None = None, allowance: float = 0.02) -> NonexpansivenessResult:
    cfg = cfg or ProfileConfig()
    module = common_module(u01, u02)
    if module.rank > 2:
        raise ValueError("both spectra must lie in one module of rank <= 2")
    r1 = profile_operator_T(u01, f, cfg, module)
    r2 = profile_operator_T(u02, f, cfg, module)
    d_prof = float(np.mean(np.abs(r1.profile.values - r2.profile.values)))
    diff = u01 - u02
    # far below the allowance; tighter targets stall on the kinks of |diff|
    d_init = float(n1_seminorm(diff, "lifted", module=module, tol=1e-7))
    g1 = build_torus_problem(u01, f, cfg.cells, module).v0
    g2 = build_torus_problem(u02, f, cfg.cells, module).v0
    d_grid = float(np.mean(np.abs(g1.values - g2.values)))
    inv = {
        "mean_drift": max(r1.invariants["mean_drift"], r2.invariants["mean_drift"]),
        "mean_ok": r1.invariants["mean_ok"] and r2.invariants["mean_ok"],
        "range_excess": max(r1.invariants["range_excess"], r2.invariants["range_excess"]),
        "range_ok": r1.invariants["range_ok"] and r2.invariants["range_ok"],
    }
    return NonexpansivenessResult(d_prof, d_init, d_grid, d_init - d_prof + allowance, allowance,
                                  (r1.speed, r2.speed), inv)


__all__ = [
    "DecaySeries", "decay_series", "exact_affine_wave", "estimate_speed", "shift_field",
    "SpeedEstimate", "spectrum_leakage", "WaveReport", "extract_profile", "ProfileConfig",
    "profile_operator_T", "nonexpansiveness_check", "NonexpansivenessResult", "run_schedule",
    "wave_frame_speed", "frame_flux", "TorusGrid",
]
