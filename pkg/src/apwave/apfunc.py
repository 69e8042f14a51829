"""Exact trigonometric polynomials over a declared irrational basis.

Frequencies are stored as rational coordinate vectors over a user-declared,
rationally independent basis of reals (1, beta_2, ..., beta_p).  Everything
that depends on the group structure of the spectrum (module bases, integer
coordinates, resonance tests) is done in exact rational arithmetic; only
evaluation touches floating point.
"""
from __future__ import annotations

import itertools
import json
import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

import numpy as np


class InvalidPolynomialError(ValueError):
    """Raised for polynomials that are not real-valued or are malformed."""


class CapabilityError(RuntimeError):
    """Raised when a request exceeds what the implementation supports."""


class InvalidIntervalError(ValueError):
    pass


class AccuracyWarning(UserWarning):
    """Quadrature or window refinement did not reach the requested tolerance."""


class ResonanceWarning(UserWarning):
    """The declared irrational basis looks close to rationally dependent."""


def _frac(value) -> Fraction:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, str):
        return Fraction(value.strip())
    if isinstance(value, float):
        return Fraction(repr(value))
    return Fraction(value)


# ---------------------------------------------------------------------------
# basis and frequencies
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class IrrationalBasis:
    """Reals beta_1 = 1, beta_2, ... declared independent over the rationals."""

    labels: tuple[str, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        labels = tuple(str(s) for s in self.labels)
        values = tuple(float(v) for v in self.values)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "values", values)
        if len(values) < 1 or len(labels) != len(values):
            raise ValueError("basis needs at least one value and one label per value")
        if values[0] != 1.0:
            raise ValueError("the first basis element must be exactly 1")
        if not all(math.isfinite(v) and v != 0.0 for v in values):
            raise ValueError("basis values must be finite and nonzero")
        if len(set(values)) != len(values):
            raise ValueError("basis values must be pairwise distinct")
        self._check_resonance()

    @property
    def size(self) -> int:
        return len(self.values)

    def _check_resonance(self, qmax: int = 6) -> None:
        # Independence cannot be verified numerically; only flag blatant near-resonances.
        p = len(self.values)
        if p == 1:
            return
        beta = np.asarray(self.values)
        for q in itertools.product(range(-qmax, qmax + 1), repeat=p):
            if any(q) and abs(float(np.dot(q, beta))) < 1e-9:
                warnings.warn(
                    f"basis {self.labels} nearly resonant: integer combination {q} ~ 0",
                    ResonanceWarning,
                    stacklevel=3,
                )
                return

    @classmethod
    def rationals(cls) -> "IrrationalBasis":
        return cls(("1",), (1.0,))

    @classmethod
    def sqrt2(cls) -> "IrrationalBasis":
        return cls(("1", "sqrt2"), (1.0, math.sqrt(2.0)))


@dataclass(frozen=True)
class Frequency:
    """A frequency vector in R^n with exact rational coordinates.

    ``coords[i][j]`` is the coefficient of basis element j in spatial
    component i, so the real value of component i is sum_j coords[i][j]*beta_j.
    """

    coords: tuple[tuple[Fraction, ...], ...]

    def __post_init__(self):
        rows = tuple(tuple(_frac(c) for c in row) for row in self.coords)
        if not rows or len({len(r) for r in rows}) != 1:
            raise ValueError("frequency coordinates must be a nonempty rectangular table")
        object.__setattr__(self, "coords", rows)

    @classmethod
    def scalar(cls, *coeffs) -> "Frequency":
        """1-D frequency from coefficients over the basis, e.g. ``scalar(0, 1)`` for sqrt2."""
        return cls((tuple(coeffs),))

    @classmethod
    def zero(cls, dim: int, p: int) -> "Frequency":
        return cls(tuple((Fraction(0),) * p for _ in range(dim)))

    @property
    def dim(self) -> int:
        return len(self.coords)

    @property
    def nbasis(self) -> int:
        return len(self.coords[0])

    def is_zero(self) -> bool:
        return all(c == 0 for row in self.coords for c in row)

    def __neg__(self) -> "Frequency":
        return Frequency(tuple(tuple(-c for c in row) for row in self.coords))

    def __add__(self, other: "Frequency") -> "Frequency":
        return Frequency(
            tuple(tuple(a + b for a, b in zip(r1, r2)) for r1, r2 in zip(self.coords, other.coords))
        )

    def scale(self, k) -> "Frequency":
        k = _frac(k)
        return Frequency(tuple(tuple(k * c for c in row) for row in self.coords))

    def flat(self) -> tuple[Fraction, ...]:
        return tuple(c for row in self.coords for c in row)

    @classmethod
    def from_flat(cls, flat: Sequence[Fraction], dim: int) -> "Frequency":
        p = len(flat) // dim
        return cls(tuple(tuple(flat[i * p:(i + 1) * p]) for i in range(dim)))

    def value(self, basis: IrrationalBasis) -> np.ndarray:
        """Real frequency vector (length n)."""
        if self.nbasis != basis.size:
            raise ValueError("frequency and basis sizes differ")
        beta = basis.values
        return np.array([math.fsum(float(c) * b for c, b in zip(row, beta)) for row in self.coords])


# ---------------------------------------------------------------------------
# trigonometric polynomials
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrigPolynomial:
    """Real trigonometric polynomial sum_l a_l exp(2 pi i l.x) with finite spectrum."""

    basis: IrrationalBasis
    terms: Mapping[Frequency, complex]
    dim: int = 1

    def __post_init__(self):
        terms: dict[Frequency, complex] = {}
        for freq, coef in dict(self.terms).items():
            if freq.dim != self.dim or freq.nbasis != self.basis.size:
                raise InvalidPolynomialError(f"frequency {freq} does not match dim/basis")
            terms[freq] = terms.get(freq, 0j) + complex(coef)
        object.__setattr__(self, "terms", terms)
        scale = sum(abs(a) for a in terms.values())
        tol = 1e-12 * max(scale, 1.0)
        for freq, coef in terms.items():
            partner = terms.get(-freq, 0j)
            if abs(partner - coef.conjugate()) > tol:
                raise InvalidPolynomialError(
                    f"coefficient at {-freq} must be the conjugate of the one at {freq}"
                )

    # -- construction helpers ------------------------------------------------

    @classmethod
    def constant(cls, value: float, basis: IrrationalBasis | None = None, dim: int = 1):
        basis = basis or IrrationalBasis.rationals()
        return cls(basis, {Frequency.zero(dim, basis.size): complex(value)}, dim)

    @classmethod
    def from_real_terms(
        cls,
        basis: IrrationalBasis,
        terms: Iterable[tuple[str, Frequency, float]],
        constant: float = 0.0,
        dim: int = 1,
    ) -> "TrigPolynomial":
        """Build from ("sin"|"cos", frequency, amplitude) triples plus a constant."""
        out: dict[Frequency, complex] = {}

        def add(freq, coef):
            out[freq] = out.get(freq, 0j) + coef

        if constant:
            add(Frequency.zero(dim, basis.size), complex(constant))
        for kind, freq, amp in terms:
            if freq.is_zero():
                if kind == "cos":
                    add(freq, complex(amp))
                continue
            if kind == "sin":
                add(freq, -0.5j * amp)
                add(-freq, 0.5j * amp)
            elif kind == "cos":
                add(freq, 0.5 * amp)
                add(-freq, 0.5 * amp)
            else:
                raise InvalidPolynomialError(f"unknown term kind {kind!r}")
        return cls(basis, out, dim)

    # -- algebra -------------------------------------------------------------

    def _combine(self, other: "TrigPolynomial", sign: float) -> "TrigPolynomial":
        if other.basis != self.basis or other.dim != self.dim:
            raise InvalidPolynomialError("polynomials live over different bases")
        out = dict(self.terms)
        for f, a in other.terms.items():
            out[f] = out.get(f, 0j) + sign * a
        return TrigPolynomial(self.basis, out, self.dim)

    def __add__(self, other: "TrigPolynomial") -> "TrigPolynomial":
        return self._combine(other, 1.0)

    def __sub__(self, other: "TrigPolynomial") -> "TrigPolynomial":
        return self._combine(other, -1.0)

    def scale(self, alpha: float) -> "TrigPolynomial":
        return TrigPolynomial(self.basis, {f: alpha * a for f, a in self.terms.items()}, self.dim)

    def shift(self, h) -> "TrigPolynomial":
        """The polynomial x -> p(x + h)."""
        h = np.atleast_1d(np.asarray(h, dtype=float))
        out = {}
        for f, a in self.terms.items():
            out[f] = a * np.exp(2j * np.pi * float(np.dot(f.value(self.basis), h)))
        return TrigPolynomial(self.basis, out, self.dim)

    def add_constant(self, c: float) -> "TrigPolynomial":
        return self + TrigPolynomial.constant(c, self.basis, self.dim)

    def sup_bound(self) -> float:
        """Crude bound sum |a_l| on the sup norm."""
        return float(sum(abs(a) for a in self.terms.values()))

    def frequencies(self) -> list[Frequency]:
        return sorted(self.terms, key=lambda f: f.flat())

    # -- serialization -------------------------------------------------------

    def to_json(self) -> dict:
        terms = []
        for f in self.frequencies():
            a = self.terms[f]
            coords = [[_fmt_frac(c) for c in row] for row in f.coords]
            terms.append({
                "coords": coords[0] if self.dim == 1 else coords,
                "re": a.real,
                "im": a.imag,
            })
        return {
            "dim": self.dim,
            "irrational_basis": {
                "labels": list(self.basis.labels),
                "values": [repr(v) for v in self.basis.values],
            },
            "terms": terms,
        }

    @classmethod
    def from_json(cls, doc: dict | str) -> "TrigPolynomial":
        if isinstance(doc, str):
            doc = json.loads(doc)
        ib = doc["irrational_basis"]
        basis = IrrationalBasis(tuple(ib["labels"]), tuple(float(v) for v in ib["values"]))
        dim = int(doc.get("dim", 1))
        terms = {}
        for t in doc["terms"]:
            coords = t["coords"]
            if dim == 1 and coords and not isinstance(coords[0], list):
                coords = [coords]
            freq = Frequency(tuple(tuple(Fraction(c) for c in row) for row in coords))
            terms[freq] = terms.get(freq, 0j) + complex(float(t.get("re", 0.0)), float(t.get("im", 0.0)))
        return cls(basis, terms, dim)


def _fmt_frac(q: Fraction) -> str:
    return f"{q.numerator}/{q.denominator}"


def eval_trig(p: TrigPolynomial, x) -> np.ndarray | float:
    """Evaluate p at a point or at an array of points.

    For ``p.dim == 1`` ``x`` may be a scalar or any array of points; for
    ``dim > 1`` the last axis of ``x`` holds the coordinates.
    """
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0 or (p.dim > 1 and x.ndim == 1)
    pts = x.reshape(-1, p.dim) if p.dim > 1 else x.reshape(-1, 1)
    acc = np.zeros(pts.shape[0], dtype=complex)
    for f in p.frequencies():
        lam = f.value(p.basis)
        acc += p.terms[f] * np.exp(2j * np.pi * (pts @ lam))
    # Hermitian symmetry is enforced at construction, so acc.imag is rounding only.
    out = acc.real
    if scalar:
        return float(out[0])
    return out.reshape(x.shape if p.dim == 1 else x.shape[:-1])


def mean_and_coefficients(p: TrigPolynomial) -> tuple[float, set[Frequency]]:
    mean = 0.0
    spectrum = set()
    for f, a in p.terms.items():
        if f.is_zero():
            mean = a.real
        elif a != 0:
            spectrum.add(f)
    return mean, spectrum


def cutoff(u, a=-math.inf, b=math.inf):
    """Clamp ``u`` into [a, b]; works elementwise on arrays."""
    if a > b:
        raise InvalidIntervalError(f"cut-off levels must satisfy a <= b, got {a} > {b}")
    if np.ndim(u) == 0:
        return min(b, max(a, u))
    return np.minimum(b, np.maximum(a, u))


# ---------------------------------------------------------------------------
# frequency modules
# ---------------------------------------------------------------------------


def hermite_normal_form(rows: Sequence[Sequence[int]]) -> list[list[int]]:
    """Row-style Hermite normal form of an integer matrix, zero rows dropped.

    Pivots are positive, strictly moving right, and entries above each pivot
    are reduced into [0, pivot).
    """
    A = [list(map(int, r)) for r in rows]
    if not A:
        return []
    ncols = len(A[0])
    r = 0
    for c in range(ncols):
        if r == len(A):
            break
        # Euclid on column c among rows r..end
        while True:
            nz = [i for i in range(r, len(A)) if A[i][c] != 0]
            if not nz:
                break
            piv = min(nz, key=lambda i: abs(A[i][c]))
            A[r], A[piv] = A[piv], A[r]
            done = True
            for i in range(r + 1, len(A)):
                if A[i][c]:
                    q = A[i][c] // A[r][c]
                    A[i] = [x - q * y for x, y in zip(A[i], A[r])]
                    if A[i][c]:
                        done = False
            if done:
                break
        if A[r][c] == 0:
            continue
        if A[r][c] < 0:
            A[r] = [-x for x in A[r]]
        for i in range(r):
            q = A[i][c] // A[r][c]
            if q:
                A[i] = [x - q * y for x, y in zip(A[i], A[r])]
        r += 1
    return [row for row in A[:r] if any(row)]


@dataclass(frozen=True)
class FreqModule:
    """Z-module basis (canonical Hermite normal form) of a set of frequencies."""

    basis: tuple[Frequency, ...]
    generators: tuple[Frequency, ...] = field(default=(), compare=False)
    dim: int = 1
    nbasis: int = 1

    @property
    def rank(self) -> int:
        return len(self.basis)

    def matrix(self) -> list[list[Fraction]]:
        return [list(b.flat()) for b in self.basis]

    def real_rows(self, ib: IrrationalBasis) -> np.ndarray:
        """The m x n real matrix whose rows are the basis frequencies."""
        if not self.basis:
            return np.zeros((0, self.dim))
        return np.array([b.value(ib) for b in self.basis])

    def integer_coords(self, freq: Frequency) -> tuple[int, ...]:
        """Exact integer coordinates of ``freq`` in this basis."""
        target = list(freq.flat())
        rows = self.matrix()
        k = []
        for row in rows:
            piv = next(j for j, v in enumerate(row) if v != 0)
            q = target[piv] / row[piv]
            if q.denominator != 1:
                raise ValueError(f"{freq} is not in the module")
            k.append(int(q))
            target = [t - q * v for t, v in zip(target, row)]
        if any(target):
            raise ValueError(f"{freq} is not in the module")
        return tuple(k)

    def element(self, k: Sequence[int]) -> Frequency:
        flat = [Fraction(0)] * (self.dim * self.nbasis)
        for kj, b in zip(k, self.basis):
            flat = [x + kj * y for x, y in zip(flat, b.flat())]
        return Frequency.from_flat(flat, self.dim)


def module_basis(generators: Iterable[Frequency]) -> FreqModule:
    gens = tuple(generators)
    if not gens:
        raise ValueError("need at least one generator")
    dim, nb = gens[0].dim, gens[0].nbasis
    flats = [g.flat() for g in gens if not g.is_zero()]
    if not flats:
        return FreqModule((), gens, dim, nb)
    den = 1
    for v in flats:
        for c in v:
            den = den * c.denominator // math.gcd(den, c.denominator)
    ints = [[int(c * den) for c in v] for v in flats]
    hnf = hermite_normal_form(ints)
    basis = tuple(Frequency.from_flat([Fraction(x, den) for x in row], dim) for row in hnf)
    return FreqModule(basis, gens, dim, nb)


def spectrum_module(p: TrigPolynomial) -> FreqModule:
    _, spectrum = mean_and_coefficients(p)
    gens = spectrum or {Frequency.zero(p.dim, p.basis.size)}
    return module_basis(sorted(gens, key=lambda f: f.flat()))


# ---------------------------------------------------------------------------
# Besicovitch seminorm
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SeminormEstimate:
    value: float
    increment: float
    converged: bool
    method: str
    resolution: int

    def __float__(self) -> float:
        return self.value


def lifted_coefficients(p: TrigPolynomial, module: FreqModule) -> dict[tuple[int, ...], complex]:
    """Coefficients of the periodic lift v0(y) = sum a_k exp(2 pi i k.y)."""
    out: dict[tuple[int, ...], complex] = {}
    for f, a in p.terms.items():
        if a == 0:
            continue
        k = module.integer_coords(f) if module.rank else ()
        out[k] = out.get(k, 0j) + a
    return out


def torus_values(coeffs: Mapping[tuple[int, ...], complex], shape: Sequence[int]) -> np.ndarray:
    """Evaluate a torus polynomial at the cell midpoints of a tensor grid."""
    m = len(shape)
    axes = [(np.arange(n) + 0.5) / n for n in shape]
    out = np.zeros(tuple(shape), dtype=complex)
    for k, a in coeffs.items():
        if m == 0:
            out = out + a
            continue
        term = np.asarray(a, dtype=complex)
        for j, kj in enumerate(k):
            e = np.exp(2j * np.pi * kj * axes[j])
            term = np.multiply.outer(term, e) if term.ndim else term * e
        out += term
    return out.real


def n1_seminorm(
    p: TrigPolynomial,
    method: str = "lifted",
    *,
    module: FreqModule | None = None,
    tol: float = 1e-8,
    start: int = 64,
    max_points: int = 1 << 24,
    windows: Sequence[float] = (125.0, 250.0, 500.0, 1000.0),
    samples_per_unit: float = 32.0,
) -> SeminormEstimate:
    """Besicovitch seminorm N1(p), either on the lifted torus or by windowed averages."""
    if method == "lifted":
        return _n1_lifted(p, module, tol, start, max_points)
    if method == "windowed":
        return _n1_windowed(p, windows, samples_per_unit)
    raise ValueError(f"unknown method {method!r}")


def _n1_lifted(p, module, tol, start, max_points) -> SeminormEstimate:
    module = module or spectrum_module(p)
    m = module.rank
    if m > 3:
        raise CapabilityError(f"lifted seminorm supports rank <= 3, got {m}")
    coeffs = lifted_coefficients(p, module)
    if m == 0:
        v = abs(sum(coeffs.values(), 0j).real)
        return SeminormEstimate(v, 0.0, True, "lifted", 1)
    kmax = max((max(abs(x) for x in k) for k in coeffs), default=1)
    n = max(start, 4 * kmax)
    prev = float(np.mean(np.abs(torus_values(coeffs, (n,) * m))))
    inc = last = math.inf
    while (2 * n) ** m <= max_points:
        n *= 2
        cur = float(np.mean(np.abs(torus_values(coeffs, (n,) * m))))
        inc, last = abs(cur - prev), inc
        prev = cur
        # the midpoint error of |.| oscillates with n, so one small increment can be a fluke
        if max(inc, last) < tol:
            return SeminormEstimate(cur, max(inc, last), True, "lifted", n)
    warnings.warn(
        f"lifted seminorm: last two refinements changed value by up to {max(inc, last):.3g} > tol {tol:.3g}",
        AccuracyWarning,
        stacklevel=3,
    )
    return SeminormEstimate(prev, max(inc, last), False, "lifted", n)


def window_average(func, p_dim: int, R: float, samples_per_unit: float) -> float:
    """Mean of ``func`` over the cube [-R/2, R/2]^n by the midpoint rule."""
    npts = max(16, int(math.ceil(R * samples_per_unit)))
    x = -R / 2 + (np.arange(npts) + 0.5) * (R / npts)
    if p_dim == 1:
        return float(np.mean(func(x)))
    if p_dim == 2:
        X, Y = np.meshgrid(x, x, indexing="ij")
        return float(np.mean(func(np.stack([X, Y], axis=-1))))
    raise CapabilityError("windowed averages support n <= 2")


def _n1_windowed(p, windows, samples_per_unit) -> SeminormEstimate:
    windows = sorted(windows)
    if len(windows) < 2:
        raise ValueError("windowed seminorm needs at least two windows")
    fmax = max((float(np.max(np.abs(f.value(p.basis)))) for f in p.terms), default=0.0)
    spu = max(samples_per_unit, 16.0 * fmax)
    vals = [window_average(lambda x: np.abs(eval_trig(p, x)), p.dim, R, spu) for R in windows]
    return SeminormEstimate(vals[-1], abs(vals[-1] - vals[-2]), True, "windowed", int(windows[-1]))


def windowed_mean(p: TrigPolynomial, R: float, samples_per_unit: float = 32.0) -> float:
    fmax = max((float(np.max(np.abs(f.value(p.basis)))) for f in p.terms), default=0.0)
    spu = max(samples_per_unit, 16.0 * fmax)
    return window_average(lambda x: eval_trig(p, x), p.dim, R, spu)
