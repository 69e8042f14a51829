"""Monotone finite-volume solver on periodic unit-torus grids (dim 1..3)."""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels as K
from .flux import FluxDomainError, PiecewiseFlux, PiecewisePolynomial, lipschitz_bound


class NumericalFailure(RuntimeError):
    pass


class MonotonicityError(ValueError):
    pass


# rounding allowance when checking the discrete maximum principle
BOUNDS_SLACK = 1e-13


def memory_cap_bytes() -> int:
    return int(float(os.environ.get("APWAVE_MEM_CAP_MB", "2048")) * 2**20)


@dataclass(frozen=True)
class TorusGrid:
    shape: tuple[int, ...]

    def __post_init__(self):
        shape = tuple(int(n) for n in self.shape)
        object.__setattr__(self, "shape", shape)
        if not 1 <= len(shape) <= 3:
            raise ValueError("grid dimension must be 1, 2 or 3")
        if min(shape) < 4:
            raise ValueError("need at least 4 cells per axis")
        # a state plus work buffers: budget four float64 copies
        if 4 * 8 * self.ncells > memory_cap_bytes():
            raise MemoryError(
                f"grid {shape} exceeds the memory cap (APWAVE_MEM_CAP_MB={memory_cap_bytes() / 2**20:g})"
            )

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def h(self) -> tuple[float, ...]:
        return tuple(1.0 / n for n in self.shape)

    @property
    def ncells(self) -> int:
        return int(np.prod(self.shape))

    @property
    def cell_volume(self) -> float:
        return 1.0 / self.ncells

    def centers(self, axis: int) -> np.ndarray:
        n = self.shape[axis]
        return (np.arange(n) + 0.5) / n


def _mean(values: np.ndarray) -> float:
    # fixed-order pairwise summation (numpy's), independent of thread count
    return float(np.sum(values, dtype=np.float64) / values.size)


@dataclass(frozen=True, eq=False)
class GridState:
    grid: TorusGrid
    values: np.ndarray
    time: float = 0.0
    bounds: tuple[float, float] | None = None
    initial_mean: float = field(default=math.nan)

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64, copy=True).reshape(self.grid.shape)
        if not np.all(np.isfinite(v)):
            raise NumericalFailure("state contains non-finite values")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        if self.bounds is None:
            object.__setattr__(self, "bounds", (float(v.min()), float(v.max())))
        lo, hi = self.bounds
        slack = BOUNDS_SLACK * max(1.0, abs(lo), abs(hi))
        if v.min() < lo - slack or v.max() > hi + slack:
            raise ValueError(f"values leave the invariant interval [{lo}, {hi}]")
        if math.isnan(self.initial_mean):
            object.__setattr__(self, "initial_mean", _mean(v))

    @classmethod
    def constant(cls, grid: TorusGrid, k: float) -> "GridState":
        return cls(grid, np.full(grid.shape, float(k)))

    def with_values(self, values: np.ndarray, time: float) -> "GridState":
        return GridState(self.grid, values, time, self.bounds, self.initial_mean)

    @property
    def range(self) -> tuple[float, float]:
        return float(self.values.min()), float(self.values.max())


@dataclass(frozen=True)
class SchemeConfig:
    flux_rule: str = "godunov"
    cfl: float = 0.45
    dt_max: float = 0.5
    # steps between recomputations of dt from the (shrinking) data range
    chunk: int = 64

    def __post_init__(self):
        if self.flux_rule not in ("godunov", "llf"):
            raise ValueError("flux_rule must be 'godunov' or 'llf'")
        if not 0 < self.cfl <= 1.0:
            raise ValueError("cfl must lie in (0, 1]")
        if self.dt_max <= 0 or self.chunk < 1:
            raise ValueError("dt_max and chunk must be positive")

    def check(self, dim: int) -> None:
        if dim >= 2 and self.cfl > 0.5:
            raise ValueError("cfl must be <= 0.5 with dimensional splitting")

    @property
    def rule_id(self) -> int:
        return K.GODUNOV if self.flux_rule == "godunov" else K.LLF


# ---------------------------------------------------------------------------
# numerical fluxes
# ---------------------------------------------------------------------------


def godunov_flux(f: PiecewisePolynomial, ul: float, ur: float) -> float:
    if ul <= ur:
        return f.extremes(ul, ur)[0]
    return f.extremes(ur, ul)[1]


def llf_flux(f: PiecewisePolynomial, ul: float, ur: float, alpha: float) -> float:
    lo, hi = min(ul, ur), max(ul, ur)
    need = f.max_abs_slope(lo, hi)
    if alpha < need * (1 - 1e-14):
        raise MonotonicityError(f"alpha={alpha} below the Lipschitz bound {need} on [{lo}, {hi}]")
    return 0.5 * (f(ul) + f(ur)) - 0.5 * alpha * (ur - ul)


# ---------------------------------------------------------------------------
# time stepping
# ---------------------------------------------------------------------------


def _check_flux(state: GridState, f: PiecewiseFlux) -> None:
    if f.dim != state.grid.dim:
        raise ValueError(f"flux has {f.dim} components, grid has dimension {state.grid.dim}")
    lo, hi = state.range
    wlo, whi = f.interval
    if lo < wlo or hi > whi:
        raise FluxDomainError(f"state range [{lo}, {hi}] not inside working interval [{wlo}, {whi}]")


def cfl_dt(state: GridState, f: PiecewiseFlux, cfg: SchemeConfig,
           interval: tuple[float, float] | None = None) -> float:
    """Stable step for the split scheme over the data range (or ``interval``)."""
    cfg.check(state.grid.dim)
    lo, hi = interval if interval is not None else state.range
    L = lipschitz_bound(f, (lo, hi))
    if L == 0.0:
        return cfg.dt_max
    return min(cfg.dt_max, cfg.cfl * min(state.grid.h) / (state.grid.dim * L))


class Stepper:
    """Reusable buffers and flux tables for repeated steps of one flux on one grid."""

    def __init__(self, grid: TorusGrid, f: PiecewiseFlux, cfg: SchemeConfig, backend: str | None = None):
        if f.dim != grid.dim:
            raise ValueError(f"flux has {f.dim} components, grid has dimension {grid.dim}")
        cfg.check(grid.dim)
        self.grid, self.flux, self.cfg = grid, f, cfg
        self.backend = backend or K.BACKEND
        self.tables = [K.FluxTable.from_component(c) for c in f.components]
        self._buf = np.empty(grid.shape)

    def alphas(self, lo: float, hi: float) -> list[float]:
        if self.cfg.flux_rule != "llf":
            return [0.0] * self.grid.dim
        return [c.max_abs_slope(lo, hi) for c in self.flux.components]

    def step(self, u: np.ndarray, dt: float, alphas) -> np.ndarray:
        """One split step; returns a new array (``u`` is left untouched)."""
        cur = np.array(u, dtype=np.float64, copy=True)
        for axis in range(self.grid.dim):
            lam = dt / self.grid.h[axis]
            K.sweep(cur, self._buf, axis, self.tables[axis], lam, self.cfg.rule_id,
                    alphas[axis], self.backend)
            cur, self._buf = self._buf, cur
        return cur

    def steps(self, u: np.ndarray, dt: float, nsteps: int, alphas) -> np.ndarray:
        if nsteps <= 0:
            return u
        if self.grid.dim == 1:
            a = np.array(u, dtype=np.float64, copy=True)
            b = np.empty_like(a)
            return K.steps_1d(a, b, nsteps, self.tables[0], dt / self.grid.h[0],
                              self.cfg.rule_id, alphas[0], self.backend)
        for _ in range(nsteps):
            u = self.step(u, dt, alphas)
        return u


def step(state: GridState, f: PiecewiseFlux, cfg: SchemeConfig, dt: float,
         backend: str | None = None) -> GridState:
    """A single split step of size ``dt`` (caller guarantees the CFL condition)."""
    _check_flux(state, f)
    st = Stepper(state.grid, f, cfg, backend)
    lo, hi = state.range
    return state.with_values(st.step(state.values, dt, st.alphas(lo, hi)), state.time + dt)


def advance(state: GridState, f: PiecewiseFlux, cfg: SchemeConfig, t_target: float,
            backend: str | None = None, stepper: Stepper | None = None) -> GridState:
    """Evolve to ``t_target``; the final step is shortened to land on it exactly."""
    if t_target < state.time:
        raise ValueError("t_target precedes the state's time")
    _check_flux(state, f)
    st = stepper or Stepper(state.grid, f, cfg, backend)
    u = np.array(state.values, copy=True)
    t = state.time
    nstep = 0
    while t_target - t > 1e-14 * max(1.0, abs(t_target)):
        lo, hi = float(u.min()), float(u.max())
        dt = cfl_dt(state, f, cfg, (lo, hi))
        alphas = st.alphas(lo, hi)
        remaining = t_target - t
        n_full = int(min(cfg.chunk, math.floor(remaining / dt)))
        if n_full >= 1 and n_full * dt < remaining:
            u = st.steps(u, dt, n_full, alphas)
            t += n_full * dt
            nstep += n_full
        else:
            u = st.steps(u, min(dt, remaining), 1, alphas)
            t = t_target if dt >= remaining else t + dt
            nstep += 1
        if not np.all(np.isfinite(u)):
            raise NumericalFailure(f"non-finite values after step {nstep} at t={t:.6g} (dt={dt:.3g})")
    return state.with_values(u, t_target)


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------


def l1_distance(s1: GridState, s2: GridState) -> float:
    if s1.grid.shape != s2.grid.shape:
        raise ValueError(f"grid mismatch {s1.grid.shape} vs {s2.grid.shape}")
    return _mean(np.abs(s1.values - s2.values))


def l1_deviation(state: GridState, level: float) -> float:
    """Torus-normalized integral of |v - level|."""
    return _mean(np.abs(state.values - level))


def mean_mass(state: GridState) -> float:
    return _mean(state.values)


def entropy_residual(u_old: np.ndarray, u_new: np.ndarray, f: PiecewisePolynomial,
                     lam: float, k: float) -> np.ndarray:
    """Cell residual of the discrete Kruzhkov inequality for |u - k| (1-D, Godunov).

    Non-positive values mean the inequality holds; the numerical entropy
    flux is G(ul v k, ur v k) - G(ul ^ k, ur ^ k) with G the Godunov flux.
    """
    t = K.FluxTable.from_component(f)
    ul = u_old
    ur = np.roll(u_old, -1)
    Q = (K.godunov_values(np.maximum(ul, k), np.maximum(ur, k), t)
         - K.godunov_values(np.minimum(ul, k), np.minimum(ur, k), t))
    return np.abs(u_new - k) - (np.abs(u_old - k) - lam * (Q - np.roll(Q, 1)))


def check_invariants(initial: GridState, states, rel: float = 1e-12) -> dict:
    """Mean drift and range excursion over a sequence of states."""
    lo, hi = initial.range
    m0 = mean_mass(initial)
    scale = max(1.0, float(np.max(np.abs(initial.values))))
    drift = max((abs(mean_mass(s) - m0) for s in states), default=0.0)
    over = max((max(lo - s.values.min(), s.values.max() - hi, 0.0) for s in states), default=0.0)
    return {
        "mean_drift": float(drift),
        "mean_ok": bool(drift <= rel * scale),
        "range_excess": float(over),
        "range_ok": bool(over <= BOUNDS_SLACK * scale),
    }


# ---------------------------------------------------------------------------
# snapshots
# ---------------------------------------------------------------------------


def save_snapshot(state: GridState, path: str | Path, fmt: str = "bin") -> Path:
    """Write values (C order, last axis fastest) plus a JSON sidecar."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "bin":
        data = path.with_suffix(".bin")
        state.values.astype("<f8").tofile(data)
    elif fmt == "csv":
        data = path.with_suffix(".csv")
        np.savetxt(data, state.values.reshape(-1), fmt="%.17g")
    else:
        raise ValueError("fmt must be 'bin' or 'csv'")
    meta = {
        "format": fmt,
        "dtype": "<f8",
        "order": "C",
        "shape": list(state.grid.shape),
        "time": state.time,
        "bounds": list(state.bounds),
        "mean": mean_mass(state),
        "data": data.name,
    }
    path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    return data


def load_snapshot(path: str | Path) -> GridState:
    path = Path(path).with_suffix(".json")
    meta = json.loads(path.read_text())
    data = path.parent / meta["data"]
    if meta["format"] == "bin":
        values = np.fromfile(data, dtype="<f8")
    else:
        values = np.loadtxt(data, ndmin=1)
    grid = TorusGrid(tuple(meta["shape"]))
    return GridState(grid, values.reshape(grid.shape), meta["time"], tuple(meta["bounds"]))


__all__ = [
    "TorusGrid", "GridState", "SchemeConfig", "Stepper", "godunov_flux", "llf_flux",
    "cfl_dt", "step", "advance", "l1_distance", "l1_deviation", "mean_mass",
    "entropy_residual", "check_invariants", "save_snapshot", "load_snapshot",
    "NumericalFailure", "MonotonicityError",
]
