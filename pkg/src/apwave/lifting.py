"""Quasi-periodic problems on R^n as periodic problems on the torus T^m.

u0(x) = v0(y(x)) with y_j = lambda_j . x, and the lifted flux
phi~_j = lambda_j . phi.  Solutions on R^n are read off the torus solution
along the (shifted) line z + y(x).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .apfunc import (
    CapabilityError,
    FreqModule,
    Frequency,
    TrigPolynomial,
    eval_trig,
    lifted_coefficients,
    mean_and_coefficients,
    module_basis,
    torus_values,
)
from .flux import PiecewiseFlux, lift_flux, lipschitz_bound, scale_flux
from .solver import GridState, SchemeConfig, TorusGrid, advance


@dataclass(frozen=True, eq=False)
class EmbeddingMap:
    module: FreqModule
    rows: np.ndarray                  # m x n real matrix, row j = lambda_j
    offset: np.ndarray = field(default=None)

    def __post_init__(self):
        rows = np.atleast_2d(np.asarray(self.rows, dtype=float))
        m = rows.shape[0]
        off = np.zeros(m) if self.offset is None else np.mod(np.asarray(self.offset, dtype=float), 1.0)
        if off.shape != (m,):
            raise ValueError("offset needs one coordinate per torus axis")
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "offset", off)

    @property
    def rank(self) -> int:
        return self.rows.shape[0]

    def with_offset(self, z) -> "EmbeddingMap":
        return EmbeddingMap(self.module, self.rows, z)

    def __call__(self, xs) -> np.ndarray:
        """Torus points (z + y(x)) mod 1 for 1-D ``xs`` (shape (len(xs), m))."""
        xs = np.asarray(xs, dtype=float)
        if self.rows.shape[1] == 1:
            y = np.multiply.outer(xs.reshape(-1), self.rows[:, 0])
        else:
            y = xs.reshape(-1, self.rows.shape[1]) @ self.rows.T
        return np.mod(y + self.offset, 1.0)


@dataclass(frozen=True, eq=False)
class LiftedProblem:
    v0: GridState
    flux: PiecewiseFlux
    map: EmbeddingMap
    u0: TrigPolynomial
    physical_flux: PiecewiseFlux

    @property
    def mean(self) -> float:
        return mean_and_coefficients(self.u0)[0]


def common_module(*polys: TrigPolynomial) -> FreqModule:
    gens: list[Frequency] = []
    for p in polys:
        gens += [f for f in p.terms if p.terms[f] != 0]
    gens = sorted(set(gens), key=lambda f: f.flat())
    mod = module_basis(gens)
    if mod.rank == 0:
        # constant data: any frequency gives a valid (trivial) lift
        p0 = polys[0]
        unit = [[Fraction(0)] * p0.basis.size for _ in range(p0.dim)]
        unit[0][0] = Fraction(1)
        mod = module_basis([Frequency(tuple(tuple(r) for r in unit))])
    return mod


def build_torus_problem(u0: TrigPolynomial, f: PiecewiseFlux, grid: TorusGrid | int,
                        module: FreqModule | None = None,
                        bounds: tuple[float, float] | None = None) -> LiftedProblem:
    """Lift ``u0`` and ``f`` to the torus of the spectrum's frequency module.

    ``grid`` may be an int N, meaning N cells along every torus axis.
    """
    module = module or common_module(u0)
    m = module.rank
    if m > 3:
        raise CapabilityError(f"spectrum generates a rank-{m} module; at most 3 is supported")
    if isinstance(grid, int):
        grid = TorusGrid((grid,) * m)
    if grid.dim != m:
        raise ValueError(f"grid dimension {grid.dim} does not match module rank {m}")
    if f.dim != u0.dim:
        raise ValueError("flux and data have different spatial dimension")
    rows = module.real_rows(u0.basis)
    coeffs = lifted_coefficients(u0, module)
    kmax = max((max(abs(x) for x in k) for k in coeffs), default=0)
    if kmax * 2 >= min(grid.shape):
        raise ValueError("grid too coarse for the spectrum of u0")
    values = torus_values(coeffs, grid.shape)
    v0 = GridState(grid, values, 0.0, bounds)
    lifted = lift_flux(f, rows)
    return LiftedProblem(v0, lifted, EmbeddingMap(module, rows), u0, f)


def _multilinear(values: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Periodic multilinear interpolation of cell-centred values at torus points.

    Nested lerps a + f (b - a), one axis at a time, so constants come back exactly.
    """
    shape = values.shape
    m = len(shape)
    base, frac = [], []
    for j in range(m):
        s = pts[:, j] * shape[j] - 0.5
        i0 = np.floor(s)
        frac.append(s - i0)
        base.append(np.mod(i0.astype(np.int64), shape[j]))
    # corners[c] holds values at corner bit pattern c over the remaining axes
    corners = []
    for corner in range(1 << m):
        idx = tuple(np.mod(base[j] + ((corner >> j) & 1), shape[j]) for j in range(m))
        corners.append(values[idx])
    for j in range(m):
        half = len(corners) // 2
        # bit j is the lowest remaining bit: pair corners 2i (bit 0) and 2i+1 (bit 1)
        corners = [corners[2 * i] + frac[j] * (corners[2 * i + 1] - corners[2 * i]) for i in range(half)]
    return corners[0]


def sample_along_line(state: GridState, map: EmbeddingMap, xs) -> np.ndarray:
    if state.grid.dim != map.rank:
        raise ValueError("state and embedding have different rank")
    return _multilinear(state.values, map(xs))


def line_grid(window: float, map: EmbeddingMap, grid: TorusGrid, start: float = 0.0) -> np.ndarray:
    """Uniform midpoints on [start, start + window], several per torus cell crossed."""
    speed = float(np.max(np.abs(map.rows)))
    n = int(math.ceil(window * speed * max(grid.shape) * 2)) + 1
    return start + (np.arange(n) + 0.5) * (window / n)


@dataclass(frozen=True)
class ErgodicCheck:
    line_mean: float
    torus_mean: float
    gap: float
    envelope: float     # max |gap(R')| over R' in [R, 2R]


def ergodic_mean_check(w: GridState, map: EmbeddingMap, window: float) -> ErgodicCheck:
    """Line average over [0, window] against the torus mean.

    A single window length gives a gap that oscillates in R, so the envelope
    over [R, 2R] is reported as well; it is the quantity that decays like 1/R.
    """
    half = len(line_grid(window, map, w.grid))
    dx = window / half
    xs = (np.arange(2 * half) + 0.5) * dx
    vals = sample_along_line(w, map, xs)
    torus = float(np.mean(w.values))
    running = np.cumsum(vals - torus) * dx
    ends = xs + 0.5 * dx
    line = float(np.mean(vals[:half]))
    tail = np.abs(running[half - 1:] / ends[half - 1:])
    return ErgodicCheck(line, torus, abs(line - torus), float(np.max(tail)))


# ---------------------------------------------------------------------------
# direct vs lifted
# ---------------------------------------------------------------------------


def convergents(x: float, count: int = 12) -> list[tuple[int, int]]:
    """Continued-fraction convergents p/q of x."""
    out = []
    h0, h1 = 0, 1
    k0, k1 = 1, 0
    y = x
    for _ in range(count):
        a = math.floor(y)
        h0, h1 = h1, a * h1 + h0
        k0, k1 = k1, a * k1 + k0
        out.append((h1, k1))
        frac = y - a
        if frac < 1e-12:
            break
        y = 1.0 / frac
    return out


@dataclass(frozen=True)
class SuperCell:
    length: float
    near_period: float
    convergent: tuple[int, int]
    defect: float


def near_period(u0: TrigPolynomial, module: FreqModule, target_length: float,
                min_denominator: int = 1, convergent: tuple[int, int] | None = None,
                samples: int = 4096) -> SuperCell:
    """Super-cell length for a 1-D polynomial of rank <= 2.

    For rank 2 the near-period comes from a convergent p/q of lambda_2 /
    lambda_1 (the first with q >= ``min_denominator`` unless ``convergent`` is
    given); the super-cell is the smallest multiple of it that is at least
    ``target_length``.
    """
    if u0.dim != 1:
        raise CapabilityError("direct runs are one-dimensional")
    lam = module.real_rows(u0.basis)[:, 0]
    if module.rank == 1:
        base = 1.0 / abs(lam[0])
        conv = (1, 1)
    elif module.rank == 2:
        ratio = lam[1] / lam[0]
        if convergent is None:
            convergent = next((p, q) for p, q in convergents(abs(ratio), 40) if q >= min_denominator)
        conv = convergent
        base = conv[1] / abs(lam[0])
    else:
        raise CapabilityError("direct runs support rank <= 2")
    L = base * max(1, math.ceil(target_length / base - 1e-12))
    xs = np.linspace(0.0, L, samples, endpoint=False)
    defect = float(np.max(np.abs(eval_trig(u0, xs + L) - eval_trig(u0, xs))))
    return SuperCell(L, base, conv, defect)


@dataclass(frozen=True)
class DiscrepancyReport:
    L: float
    near_period_defect: float
    trusted_window: tuple[float, float]
    t: float
    l1_discrepancy: float
    grid_resolutions: dict

    def to_json(self) -> dict:
        return {
            "L": self.L,
            "near_period_defect": self.near_period_defect,
            "trusted_window": list(self.trusted_window),
            "t": self.t,
            "l1_discrepancy": self.l1_discrepancy,
            "grid_resolutions": self.grid_resolutions,
        }


class PreconditionError(ValueError):
    def __init__(self, msg: str, t_max: float):
        super().__init__(msg)
        self.t_max = t_max


def direct_problem(u0: TrigPolynomial, f: PiecewiseFlux, cell: SuperCell, h: float,
                   bounds=None) -> tuple[GridState, PiecewiseFlux]:
    """Periodic super-cell [0, L) rescaled to the unit torus: flux becomes phi / L."""
    n = int(round(cell.length / h))
    grid = TorusGrid((n,))
    xs = (np.arange(n) + 0.5) * (cell.length / n)
    state = GridState(grid, eval_trig(u0, xs), 0.0, bounds)
    return state, scale_flux(f, 1.0 / cell.length)


def compare_direct_vs_lifted(u0: TrigPolynomial, f: PiecewiseFlux, t: float, *,
                             torus_cells: int = 512, target_length: float = 100.0,
                             convergent: tuple[int, int] | None = None,
                             direct_cells_per_unit: int | None = None,
                             cfg: SchemeConfig | None = None) -> DiscrepancyReport:
    cfg = cfg or SchemeConfig()
    if u0.dim != 1:
        raise CapabilityError("direct-vs-lifted comparison is one-dimensional")
    module = common_module(u0)
    if module.rank > 2:
        raise CapabilityError("direct-vs-lifted comparison supports rank <= 2")
    cell = near_period(u0, module, target_length, convergent=convergent)
    L = cell.length
    sup = u0.sup_bound()
    speed = lipschitz_bound(f, (max(-sup, f.interval[0]), min(sup, f.interval[1])))
    margin = L / 4
    if 2 * t * speed >= margin:
        t_max = margin / (2 * speed) if speed > 0 else math.inf
        raise PreconditionError(f"t={t} too large for the trusted window; need t < {t_max:.6g}", t_max)

    lifted = build_torus_problem(u0, f, torus_cells, module)
    v = advance(lifted.v0, lifted.flux, cfg, t)

    lam1 = abs(lifted.map.rows[0, 0])
    per_unit = direct_cells_per_unit or int(round(torus_cells * lam1))
    direct0, dflux = direct_problem(u0, f, cell, 1.0 / per_unit)
    u = advance(direct0, dflux, cfg, t)

    n = direct0.grid.shape[0]
    xs = (np.arange(n) + 0.5) * (L / n)
    inner = (xs >= L / 4) & (xs <= 3 * L / 4)
    line = sample_along_line(v, lifted.map, xs[inner])
    disc = float(np.mean(np.abs(u.values[inner] - line)))
    return DiscrepancyReport(
        L, cell.defect, (L / 4, 3 * L / 4), t, disc,
        {"torus": list(v.grid.shape), "direct": n, "convergent": list(cell.convergent)},
    )
