"""Hot loops of the finite-volume solver.

Two interchangeable implementations: numba-compiled loops and a
vectorized numpy path.  ``APWAVE_BACKEND=numpy`` forces the latter;
otherwise numba is used when it imports.
"""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .flux import MAX_DEGREE, PiecewisePolynomial

GODUNOV = 0
LLF = 1

_requested = os.environ.get("APWAVE_BACKEND", "numba").strip().lower()
if _requested not in ("numba", "numpy"):
    raise ImportError(f"APWAVE_BACKEND must be 'numba' or 'numpy', got {_requested!r}")

HAVE_NUMBA = False
if _requested == "numba":
    try:
        from numba import njit

        HAVE_NUMBA = True
    except ImportError:  # pragma: no cover - numba is a declared dependency
        pass

BACKEND = "numba" if HAVE_NUMBA else "numpy"


@dataclass(frozen=True, eq=False)
class FluxTable:
    """Flat arrays describing one scalar flux component for the kernels."""

    bp: np.ndarray     # breakpoints, P+1
    coef: np.ndarray   # P x (MAX_DEGREE+1)
    crit: np.ndarray   # sorted extremum candidates
    fcrit: np.ndarray  # flux values at crit

    @classmethod
    def from_component(cls, c: PiecewisePolynomial) -> "FluxTable":
        crit = np.ascontiguousarray(c.critical_points, dtype=np.float64)
        return cls(
            np.ascontiguousarray(c.breakpoints, dtype=np.float64),
            np.ascontiguousarray(c.coeffs, dtype=np.float64),
            crit,
            np.ascontiguousarray(c(crit), dtype=np.float64),
        )


# ---------------------------------------------------------------------------
# numpy path
# ---------------------------------------------------------------------------


def _np_flux(u: np.ndarray, t: FluxTable) -> np.ndarray:
    idx = np.clip(np.searchsorted(t.bp, u, side="right") - 1, 0, t.coef.shape[0] - 1)
    c = t.coef[idx]
    acc = c[..., MAX_DEGREE].copy()
    for d in range(MAX_DEGREE - 1, -1, -1):
        acc = acc * u + c[..., d]
    return acc


def _np_godunov(ul, ur, fl, fr, t: FluxTable) -> np.ndarray:
    lo = np.minimum(ul, ur)
    hi = np.maximum(ul, ur)
    rising = ul <= ur
    gmin = np.minimum(fl, fr)
    gmax = np.maximum(fl, fr)
    for c, fc in zip(t.crit, t.fcrit):
        inside = (lo < c) & (c < hi)
        if np.any(inside):
            gmin = np.where(inside, np.minimum(gmin, fc), gmin)
            gmax = np.where(inside, np.maximum(gmax, fc), gmax)
    return np.where(rising, gmin, gmax)


def _np_interface_flux(u, axis, t: FluxTable, rule: int, alpha: float):
    """F[j] = numerical flux at the interface between cell j and cell j+1 (periodic)."""
    ur = np.roll(u, -1, axis=axis)
    fu = _np_flux(u, t)
    fr = np.roll(fu, -1, axis=axis)
    if rule == GODUNOV:
        return _np_godunov(u, ur, fu, fr, t)
    return 0.5 * (fu + fr) - 0.5 * alpha * (ur - u)


def _np_sweep(u, out, axis, t: FluxTable, lam: float, rule: int, alpha: float):
    F = _np_interface_flux(u, axis, t, rule, alpha)
    out[...] = u - lam * (F - np.roll(F, 1, axis=axis))


def _np_steps_1d(u, out, nsteps, t: FluxTable, lam, rule, alpha):
    for _ in range(nsteps):
        _np_sweep(u, out, 0, t, lam, rule, alpha)
        u, out = out, u
    return u


# ---------------------------------------------------------------------------
# numba path
# ---------------------------------------------------------------------------

if HAVE_NUMBA:

    @njit(cache=True, nogil=True)
    def _nb_flux1(x, bp, coef):
        P = coef.shape[0]
        k = 0
        while k < P - 1 and x >= bp[k + 1]:
            k += 1
        acc = coef[k, MAX_DEGREE]
        for d in range(MAX_DEGREE - 1, -1, -1):
            acc = acc * x + coef[k, d]
        return acc

    @njit(cache=True, nogil=True)
    def _nb_num_flux(ul, ur, fl, fr, crit, fcrit, rule, alpha):
        if rule == 1:
            return 0.5 * (fl + fr) - 0.5 * alpha * (ur - ul)
        if ul <= ur:
            g = min(fl, fr)
            for c in range(crit.shape[0]):
                x = crit[c]
                if x >= ur:
                    break
                if x > ul and fcrit[c] < g:
                    g = fcrit[c]
        else:
            g = max(fl, fr)
            for c in range(crit.shape[0]):
                x = crit[c]
                if x >= ul:
                    break
                if x > ur and fcrit[c] > g:
                    g = fcrit[c]
        return g

    @njit(cache=True, nogil=True)
    def _nb_sweep3(u, out, bp, coef, crit, fcrit, lam, rule, alpha):
        # u, out: (pre, n, post) views; update along the middle axis
        pre, n, post = u.shape
        Fl = np.empty(post)
        Fr = np.empty(post)
        f0 = np.empty(post)
        fj = np.empty(post)
        for i in range(pre):
            for k in range(post):
                f0[k] = _nb_flux1(u[i, 0, k], bp, coef)
                flast = _nb_flux1(u[i, n - 1, k], bp, coef)
                Fl[k] = _nb_num_flux(u[i, n - 1, k], u[i, 0, k], flast, f0[k], crit, fcrit, rule, alpha)
                fj[k] = f0[k]
            for j in range(n):
                jn = j + 1
                if jn == n:
                    jn = 0
                for k in range(post):
                    ul = u[i, j, k]
                    ur = u[i, jn, k]
                    if jn == 0:
                        fr = f0[k]
                    else:
                        fr = _nb_flux1(ur, bp, coef)
                    Fr[k] = _nb_num_flux(ul, ur, fj[k], fr, crit, fcrit, rule, alpha)
                    out[i, j, k] = ul - lam * (Fr[k] - Fl[k])
                    Fl[k] = Fr[k]
                    fj[k] = fr

    @njit(cache=True, nogil=True)
    def _nb_steps_1d(u, out, nsteps, bp, coef, crit, fcrit, lam, rule, alpha):
        n = u.shape[0]
        for _ in range(nsteps):
            f0 = _nb_flux1(u[0], bp, coef)
            Fl = _nb_num_flux(u[n - 1], u[0], _nb_flux1(u[n - 1], bp, coef), f0, crit, fcrit, rule, alpha)
            fj = f0
            for j in range(n):
                jn = j + 1 if j + 1 < n else 0
                ur = u[jn]
                fr = f0 if jn == 0 else _nb_flux1(ur, bp, coef)
                Fr = _nb_num_flux(u[j], ur, fj, fr, crit, fcrit, rule, alpha)
                out[j] = u[j] - lam * (Fr - Fl)
                Fl = Fr
                fj = fr
            tmp = u
            u = out
            out = tmp
        return u


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------


def sweep(u: np.ndarray, out: np.ndarray, axis: int, t: FluxTable, lam: float,
          rule: int = GODUNOV, alpha: float = 0.0, backend: str | None = None) -> None:
    """One conservative update of ``u`` along ``axis``, written into ``out``."""
    backend = backend or BACKEND
    if backend == "numba":
        pre = int(np.prod(u.shape[:axis], dtype=np.int64))
        post = int(np.prod(u.shape[axis + 1:], dtype=np.int64))
        shape3 = (pre, u.shape[axis], post)
        _nb_sweep3(u.reshape(shape3), out.reshape(shape3), t.bp, t.coef, t.crit, t.fcrit,
                   float(lam), int(rule), float(alpha))
    else:
        _np_sweep(u, out, axis, t, lam, rule, alpha)


def steps_1d(u: np.ndarray, out: np.ndarray, nsteps: int, t: FluxTable, lam: float,
             rule: int = GODUNOV, alpha: float = 0.0, backend: str | None = None) -> np.ndarray:
    """``nsteps`` fixed-size 1-D steps ping-ponging between two buffers; returns the result buffer."""
    backend = backend or BACKEND
    if backend == "numba":
        return _nb_steps_1d(u, out, int(nsteps), t.bp, t.coef, t.crit, t.fcrit,
                            float(lam), int(rule), float(alpha))
    return _np_steps_1d(u, out, nsteps, t, lam, rule, alpha)


def flux_values(u: np.ndarray, t: FluxTable) -> np.ndarray:
    return _np_flux(u, t)


def godunov_values(ul, ur, t: FluxTable) -> np.ndarray:
    """Vectorized Godunov flux (numpy path; used by diagnostics)."""
    ul = np.asarray(ul, dtype=float)
    ur = np.asarray(ur, dtype=float)
    return _np_godunov(ul, ur, _np_flux(ul, t), _np_flux(ur, t), t)
