"""Continuous piecewise-polynomial flux functions.

Each component is a list of pieces on a shared working interval
[u_min, u_max]; piece coefficients are stored low-to-high in powers of u
(degree <= 4).  Affinity questions are answered at the coefficient level:
a piece is affine iff its u^2, u^3, u^4 coefficients are exactly zero.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property
from typing import Sequence

import numpy as np

from .apfunc import FreqModule, Frequency, IrrationalBasis

MAX_DEGREE = 4
NCOEF = MAX_DEGREE + 1


class FluxDomainError(ValueError):
    pass


def _horner(c: np.ndarray, u):
    acc = c[..., MAX_DEGREE] * 1.0
    for d in range(MAX_DEGREE - 1, -1, -1):
        acc = acc * u + c[..., d]
    return acc


def _deriv(c: np.ndarray) -> np.ndarray:
    """Coefficients of the derivative, padded back to NCOEF."""
    out = np.zeros_like(c)
    out[..., :-1] = c[..., 1:] * np.arange(1, NCOEF)
    return out


def _real_roots(c: np.ndarray, lo: float, hi: float) -> list[float]:
    """Real roots of the polynomial with coefficients c (low-to-high) in (lo, hi)."""
    c = np.trim_zeros(np.asarray(c, dtype=float), "b")
    if c.size <= 1:
        return []
    r = np.roots(c[::-1])
    out = []
    for z in r:
        if abs(z.imag) <= 1e-10 * max(1.0, abs(z.real)) and lo < z.real < hi:
            out.append(float(z.real))
    return out


@dataclass(frozen=True, eq=False)
class PiecewisePolynomial:
    """One scalar flux component: ``breakpoints`` b_0 < ... < b_P, P pieces."""

    breakpoints: np.ndarray
    coeffs: np.ndarray

    def __post_init__(self):
        bp = np.asarray(self.breakpoints, dtype=float)
        cf = self.coeffs
        if not isinstance(cf, np.ndarray) and cf and isinstance(cf[0], (list, tuple)):
            width = max(len(r) for r in cf)
            cf = [list(r) + [0.0] * (width - len(r)) for r in cf]
        cf = np.asarray(cf, dtype=float)
        if cf.ndim == 1:
            cf = cf[None, :]
        if cf.shape[1] > NCOEF:
            if np.any(cf[:, NCOEF:] != 0):
                raise ValueError(f"pieces must have degree <= {MAX_DEGREE}")
            cf = cf[:, :NCOEF]
        cf = np.pad(cf, ((0, 0), (0, NCOEF - cf.shape[1])))
        if bp.ndim != 1 or bp.size != cf.shape[0] + 1:
            raise ValueError("need exactly one more breakpoint than pieces")
        if not np.all(np.isfinite(bp)) or np.any(np.diff(bp) <= 0):
            raise ValueError("breakpoints must be finite and strictly increasing")
        if not np.all(np.isfinite(cf)):
            raise ValueError("coefficients must be finite")
        for k in range(1, bp.size - 1):
            left, right = _horner(cf[k - 1], bp[k]), _horner(cf[k], bp[k])
            if abs(left - right) >= 1e-12 * max(1.0, abs(left)):
                raise ValueError(
                    f"flux discontinuous at u={bp[k]}: {left!r} vs {right!r}"
                )
        bp.setflags(write=False)
        cf.setflags(write=False)
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "coeffs", cf)

    @classmethod
    def polynomial(cls, coeffs: Sequence[float], lo: float, hi: float) -> "PiecewisePolynomial":
        return cls(np.array([lo, hi]), np.array([coeffs], dtype=float))

    @property
    def npieces(self) -> int:
        return self.coeffs.shape[0]

    @property
    def interval(self) -> tuple[float, float]:
        return float(self.breakpoints[0]), float(self.breakpoints[-1])

    def piece_index(self, u) -> np.ndarray:
        """Left-closed pieces; the last piece is also right-closed."""
        idx = np.searchsorted(self.breakpoints, u, side="right") - 1
        return np.clip(idx, 0, self.npieces - 1)

    def _check_domain(self, u) -> None:
        lo, hi = self.interval
        u = np.asarray(u)
        if np.any(u < lo) or np.any(u > hi) or np.any(np.isnan(u)):
            raise FluxDomainError(f"u outside working interval [{lo}, {hi}]")

    def __call__(self, u):
        self._check_domain(u)
        u = np.asarray(u, dtype=float)
        c = self.coeffs[self.piece_index(u)]
        out = _horner(c, u)
        return float(out) if out.ndim == 0 else out

    def derivative(self, u):
        u = np.asarray(u, dtype=float)
        c = _deriv(self.coeffs)[self.piece_index(u)]
        out = _horner(c, u)
        return float(out) if out.ndim == 0 else out

    def refined(self, breakpoints: np.ndarray) -> "PiecewisePolynomial":
        """Same function on a finer breakpoint set that contains ours."""
        bp = np.asarray(breakpoints, dtype=float)
        mids = 0.5 * (bp[:-1] + bp[1:])
        return PiecewisePolynomial(bp, self.coeffs[self.piece_index(mids)])

    def is_affine_piece(self, k: int) -> bool:
        return bool(np.all(self.coeffs[k, 2:] == 0))

    @cached_property
    def critical_points(self) -> np.ndarray:
        """Breakpoints and interior stationary points: candidates for extrema."""
        pts = list(self.breakpoints)
        d = _deriv(self.coeffs)
        for k in range(self.npieces):
            pts += _real_roots(d[k], self.breakpoints[k], self.breakpoints[k + 1])
        return np.unique(np.asarray(pts, dtype=float))

    @cached_property
    def slope_critical_points(self) -> np.ndarray:
        """Candidates for extrema of the derivative."""
        pts = list(self.breakpoints)
        d2 = _deriv(_deriv(self.coeffs))
        for k in range(self.npieces):
            pts += _real_roots(d2[k], self.breakpoints[k], self.breakpoints[k + 1])
        return np.unique(np.asarray(pts, dtype=float))

    def extremes(self, lo: float, hi: float) -> tuple[float, float]:
        """Exact (min, max) of the component over [lo, hi]."""
        c = self.critical_points
        pts = np.concatenate(([lo, hi], c[(c > lo) & (c < hi)]))
        v = self(pts)
        return float(np.min(v)), float(np.max(v))

    def max_abs_slope(self, lo: float, hi: float) -> float:
        c = self.slope_critical_points
        pts = np.concatenate(([lo, hi], c[(c > lo) & (c < hi)]))
        # one-sided derivatives at breakpoints
        d = _deriv(self.coeffs)
        idx = self.piece_index(pts)
        vals = [np.abs(_horner(d[idx], pts))]
        # only where pts opens a piece; the right end of the last piece does not
        at_bp = (pts == self.breakpoints[idx]) & (idx > 0) & (pts > lo)
        if np.any(at_bp):
            vals.append(np.abs(_horner(d[idx[at_bp] - 1], pts[at_bp])))
        return float(max(np.max(v) for v in vals))

    def to_json(self) -> dict:
        return {"breakpoints": [float(b) for b in self.breakpoints],
                "coefficients": [[float(x) for x in row] for row in self.coeffs]}


def _union_breakpoints(comps: Sequence[PiecewisePolynomial]) -> np.ndarray:
    return np.unique(np.concatenate([c.breakpoints for c in comps]))


@dataclass(frozen=True, eq=False)
class PiecewiseFlux:
    """Flux vector (phi_1, ..., phi_n) on a common working interval."""

    components: tuple[PiecewisePolynomial, ...]

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps:
            raise ValueError("flux needs at least one component")
        ivs = {c.interval for c in comps}
        if len(ivs) != 1:
            raise ValueError("all components must share the working interval")
        object.__setattr__(self, "components", comps)

    @classmethod
    def scalar(cls, breakpoints, coeffs) -> "PiecewiseFlux":
        return cls((PiecewisePolynomial(np.asarray(breakpoints), coeffs),))

    @property
    def dim(self) -> int:
        return len(self.components)

    @property
    def interval(self) -> tuple[float, float]:
        return self.components[0].interval

    def __getitem__(self, i: int) -> PiecewisePolynomial:
        return self.components[i]

    def to_json(self) -> dict:
        lo, hi = self.interval
        return {"working_interval": [lo, hi], "components": [c.to_json() for c in self.components]}

    @classmethod
    def from_json(cls, doc: dict | str) -> "PiecewiseFlux":
        if isinstance(doc, str):
            doc = json.loads(doc)
        comps = tuple(
            PiecewisePolynomial(np.asarray(c["breakpoints"], float), c["coefficients"])
            for c in doc["components"]
        )
        flux = cls(comps)
        if "working_interval" in doc and tuple(doc["working_interval"]) != flux.interval:
            raise ValueError("working_interval does not match the breakpoints")
        return flux


def eval_flux(f: PiecewiseFlux, u: float) -> np.ndarray:
    return np.array([c(u) for c in f.components])


def lipschitz_bound(f: PiecewiseFlux, interval: tuple[float, float] | None = None) -> float:
    lo, hi = interval if interval is not None else f.interval
    wlo, whi = f.interval
    if lo > hi or lo < wlo or hi > whi:
        raise FluxDomainError(f"[{lo}, {hi}] is not inside the working interval [{wlo}, {whi}]")
    return max(c.max_abs_slope(lo, hi) for c in f.components)


# ---------------------------------------------------------------------------
# affine structure
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AffineInterval:
    a: float
    b: float
    slope: float
    offset: float

    @property
    def degenerate(self) -> bool:
        return self.a == self.b

    def residual(self, f: PiecewisePolynomial, lo: float | None = None, hi: float | None = None) -> float:
        """Coefficient-level deviation of ``f`` from the line on [lo, hi] (defaults to [a, b])."""
        lo = self.a if lo is None else lo
        hi = self.b if hi is None else hi
        if hi <= lo:
            return 0.0
        line = np.zeros(NCOEF)
        line[0], line[1] = self.offset, self.slope
        worst = 0.0
        for k in range(f.npieces):
            if f.breakpoints[k + 1] <= lo or f.breakpoints[k] >= hi:
                continue
            worst = max(worst, float(np.max(np.abs(f.coeffs[k] - line))))
        return worst


def maximal_affine_interval(f: PiecewisePolynomial, I: float) -> AffineInterval:
    lo, hi = f.interval
    if not lo <= I <= hi:
        raise FluxDomainError(f"I={I} outside working interval [{lo}, {hi}]")
    bp, cf = f.breakpoints, f.coeffs
    P = f.npieces

    def same_line(j, k):
        return np.array_equal(cf[j, :2], cf[k, :2])

    # pieces touching I: its own piece and, at a breakpoint, the left neighbour
    k = int(f.piece_index(I))
    cands = [k]
    if I == bp[k] and k > 0:
        cands = [k - 1, k]
    affine = [j for j in cands if f.is_affine_piece(j)]
    if len(cands) == 2 and len(affine) == 2 and not same_line(*cands):
        affine = []
    if len(affine) != len(cands):
        slope = float(f.derivative(I))
        return AffineInterval(float(I), float(I), slope, float(f(I)) - slope * I)
    j0 = j1 = affine[0]
    while j0 > 0 and f.is_affine_piece(j0 - 1) and same_line(j0 - 1, j0):
        j0 -= 1
    while j1 < P - 1 and f.is_affine_piece(j1 + 1) and same_line(j1 + 1, j1):
        j1 += 1
    if len(affine) == 2:
        j1 = max(j1, affine[1])
        while j1 < P - 1 and f.is_affine_piece(j1 + 1) and same_line(j1 + 1, j1):
            j1 += 1
    return AffineInterval(float(bp[j0]), float(bp[j1 + 1]), float(cf[j0, 1]), float(cf[j0, 0]))


def lift_flux(f: PiecewiseFlux, rows: np.ndarray) -> PiecewiseFlux:
    """Components sum_i rows[j, i] * phi_i for each row j (the lifted flux)."""
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    if rows.shape[1] != f.dim:
        raise ValueError(f"rows have {rows.shape[1]} columns, flux has {f.dim} components")
    bp = _union_breakpoints(f.components)
    refined = np.stack([c.refined(bp).coeffs for c in f.components])  # (n, P, NCOEF)
    comps = tuple(
        PiecewisePolynomial(bp, np.tensordot(row, refined, axes=(0, 0))) for row in rows
    )
    return PiecewiseFlux(comps)


def lift_flux_module(f: PiecewiseFlux, module: FreqModule, basis: IrrationalBasis) -> PiecewiseFlux:
    if module.rank < 1:
        raise ValueError("lifting needs a module of rank >= 1")
    return lift_flux(f, module.real_rows(basis))


def comoving_flux(f: PiecewiseFlux, velocity) -> PiecewiseFlux:
    """Flux seen in a frame moving with ``velocity``: phi_i(u) - velocity_i * u."""
    vel = np.atleast_1d(np.asarray(velocity, dtype=float))
    if vel.size != f.dim:
        raise ValueError("velocity must have one entry per flux component")
    comps = []
    for c, v in zip(f.components, vel):
        cf = c.coeffs.copy()
        cf[:, 1] -= v
        comps.append(PiecewisePolynomial(c.breakpoints, cf))
    return PiecewiseFlux(tuple(comps))


def scale_flux(f: PiecewiseFlux, s: float) -> PiecewiseFlux:
    return PiecewiseFlux(tuple(PiecewisePolynomial(c.breakpoints, c.coeffs * s) for c in f.components))


def add_fluxes(f: PiecewiseFlux, g: PiecewiseFlux) -> PiecewiseFlux:
    if f.dim != g.dim or f.interval != g.interval:
        raise ValueError("fluxes must share dimension and working interval")
    comps = []
    for a, b in zip(f.components, g.components):
        bp = _union_breakpoints([a, b])
        comps.append(PiecewisePolynomial(bp, a.refined(bp).coeffs + b.refined(bp).coeffs))
    return PiecewiseFlux(tuple(comps))


# ---------------------------------------------------------------------------
# non-degeneracy
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NondegeneracyVerdict:
    passed: bool
    witness: Frequency | None = None
    witness_coords: tuple[int, ...] | None = None

    def to_json(self, basis: IrrationalBasis | None = None) -> dict:
        doc = {"verdict": "pass" if self.passed else "fail"}
        if self.witness is not None:
            doc["witness_coords"] = list(self.witness_coords)
            doc["witness"] = [[f"{c.numerator}/{c.denominator}" for c in row] for row in self.witness.coords]
            if basis is not None:
                doc["witness_value"] = [float(x) for x in self.witness.value(basis)]
        return doc


def _exact_slope(coef: np.ndarray, u: float) -> Fraction:
    x = Fraction(float(u))
    return sum((d * Fraction(float(coef[d])) * x ** (d - 1) for d in range(1, NCOEF)), Fraction(0))


def affinity_constraints(f: PiecewiseFlux, I: float) -> list[list[Fraction]]:
    """Linear forms in xi whose common kernel is {xi : xi.phi affine near I}.

    Rows: nonlinear coefficients of xi.phi on the piece left of I and on the
    piece right of I, plus the jump of the one-sided slopes at I.
    """
    lo, hi = f.interval
    if not lo < I < hi:
        raise FluxDomainError(f"I={I} needs a neighbourhood inside [{lo}, {hi}]")
    rows: list[list[Fraction]] = []
    left, right, slope_jump = [], [], []
    for c in f.components:
        kr = int(c.piece_index(I))
        kl = kr - 1 if I == c.breakpoints[kr] else kr
        left.append(c.coeffs[kl])
        right.append(c.coeffs[kr])
        slope_jump.append(_exact_slope(c.coeffs[kr], I) - _exact_slope(c.coeffs[kl], I))
    for side in (left, right):
        for deg in range(2, NCOEF):
            rows.append([Fraction(float(coef[deg])) for coef in side])
    rows.append(slope_jump)
    return rows


def rational_nullspace(A: list[list[Fraction]], ncols: int) -> list[list[Fraction]]:
    """Basis of the rational kernel of A via exact reduced row echelon form."""
    M = [list(r) for r in A if any(r)]
    pivots = []
    r = 0
    for c in range(ncols):
        p = next((i for i in range(r, len(M)) if M[i][c] != 0), None)
        if p is None:
            continue
        M[r], M[p] = M[p], M[r]
        pv = M[r][c]
        M[r] = [x / pv for x in M[r]]
        for i in range(len(M)):
            if i != r and M[i][c] != 0:
                fac = M[i][c]
                M[i] = [x - fac * y for x, y in zip(M[i], M[r])]
        pivots.append(c)
        r += 1
        if r == len(M):
            break
    free = [c for c in range(ncols) if c not in pivots]
    kernel = []
    for fc in free:
        v = [Fraction(0)] * ncols
        v[fc] = Fraction(1)
        for i, pc in enumerate(pivots):
            v[pc] = -M[i][fc]
        kernel.append(v)
    return kernel


def _integerize(v: Sequence[Fraction]) -> list[int]:
    den = 1
    for x in v:
        den = den * x.denominator // math.gcd(den, x.denominator)
    ints = [int(x * den) for x in v]
    g = 0
    for x in ints:
        g = math.gcd(g, x)
    return [x // g for x in ints] if g else ints


def nondegeneracy_check(f: PiecewiseFlux, module: FreqModule, I: float) -> NondegeneracyVerdict:
    """Decide whether some nonzero xi in the module makes xi.phi affine near I.

    With xi = sum_j k_j lambda_j and lambda_j = sum_p beta_p Q_p[:, j], every
    constraint row r gives r.xi = sum_p beta_p (r Q_p) k.  Flux coefficients
    are rational, so by independence of the beta_p the condition splits into
    the rational system (r Q_p) k = 0 for all p, solved exactly.
    """
    m = module.rank
    if m == 0:
        return NondegeneracyVerdict(True)
    if module.dim != f.dim:
        raise ValueError("module and flux dimensions differ")
    A = affinity_constraints(f, I)
    nb = module.nbasis
    system = []
    for row in A:
        for p in range(nb):
            system.append([
                sum((row[i] * b.coords[i][p] for i in range(f.dim)), Fraction(0))
                for b in module.basis
            ])
    kernel = rational_nullspace(system, m)
    if not kernel:
        return NondegeneracyVerdict(True)
    k = _integerize(kernel[0])
    return NondegeneracyVerdict(False, module.element(k), tuple(k))


# ---------------------------------------------------------------------------
# presets
# ---------------------------------------------------------------------------


def burgers(lo: float = -2.0, hi: float = 2.0) -> PiecewiseFlux:
    return PiecewiseFlux.scalar([lo, hi], [[0.0, 0.0, 0.5]])


def linear(speed: float, lo: float = -2.0, hi: float = 2.0) -> PiecewiseFlux:
    return PiecewiseFlux.scalar([lo, hi], [[0.0, speed]])


def plateau(half_width: float = 0.5, slope: float = 1.0, lo: float = -2.0, hi: float = 2.0) -> PiecewiseFlux:
    """Affine with ``slope`` on [-w, w], strictly convex quadratic continuation outside."""
    w = half_width
    # u<-w: slope*u + (u+w)^2 ; u>w: slope*u + (u-w)^2
    left = [w * w, slope + 2 * w, 1.0]
    right = [w * w, slope - 2 * w, 1.0]
    return PiecewiseFlux.scalar([lo, -w, w, hi], [left, [0.0, slope], right])
