"""Modal models and inertance pseudomodal energies.

A pseudomodal energy is the integral of an inertance FRF over a frequency
band. Three routes are provided:

* :func:`ime_quadrature` -- trapezoidal integration of a sampled FRF (the
  production path used on measured or synthetic data);
* :func:`ime_closed_form` -- the low-damping arctangent expression;
* :func:`ime_exact` -- adaptive Simpson quadrature of the modal-summation
  integrand, used as a reference.

Bands are given in Hz. All integrals are taken over angular frequency, so a
band ``[lo, hi]`` Hz integrates ``omega`` from ``2*pi*lo`` to ``2*pi*hi``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError, NumericalError
from .signals import FRF, INERTANCE, _frozen, check_uniform_grid

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class ModalModel:
    """Natural frequencies (Hz), damping ratios and an ``N x L`` mode-shape matrix."""

    natural_freqs_hz: np.ndarray
    damping_ratios: np.ndarray
    mode_shapes: np.ndarray

    def __post_init__(self):
        f = _frozen(self.natural_freqs_hz, float)
        z = _frozen(self.damping_ratios, float)
        phi = _frozen(np.atleast_2d(self.mode_shapes), float)
        if f.ndim != 1 or f.size < 1:
            raise DataError("need at least one natural frequency")
        if z.shape != f.shape:
            raise DataError("damping_ratios must match natural_freqs_hz in length")
        if phi.ndim != 2 or phi.shape[0] != f.size or phi.shape[1] < 1:
            raise DataError(f"mode_shapes must be {f.size} x L, got {phi.shape}")
        for name, a in (("natural_freqs_hz", f), ("damping_ratios", z), ("mode_shapes", phi)):
            if not np.all(np.isfinite(a)):
                raise DataError(f"{name} contains non-finite values")
        if np.any(f <= 0) or np.any(np.diff(f) <= 0):
            raise DataError("natural frequencies must be positive and strictly increasing")
        if np.any(z <= 0) or np.any(z >= 1):
            raise DataError("damping ratios must lie in (0, 1)")
        object.__setattr__(self, "natural_freqs_hz", f)
        object.__setattr__(self, "damping_ratios", z)
        object.__setattr__(self, "mode_shapes", phi)

    @property
    def n_modes(self):
        return self.natural_freqs_hz.size

    @property
    def n_locations(self):
        return self.mode_shapes.shape[1]

    @property
    def omegas(self):
        return TWO_PI * self.natural_freqs_hz

    def shape_products(self, k, l):
        """``phi_k^i * phi_l^i`` for every mode ``i``."""
        L = self.n_locations
        for name, idx in (("k", k), ("l", l)):
            if not 0 <= idx < L:
                raise DataError(f"location index {name}={idx} out of range [0, {L})")
        return self.mode_shapes[:, k] * self.mode_shapes[:, l]

    def to_dict(self):
        return {
            "natural_freqs_hz": self.natural_freqs_hz.tolist(),
            "damping_ratios": self.damping_ratios.tolist(),
            "mode_shapes": self.mode_shapes.ravel().tolist(),
            "n_locations": self.n_locations,
        }

    @classmethod
    def from_dict(cls, d):
        try:
            f = np.asarray(d["natural_freqs_hz"], float)
            L = int(d["n_locations"])
            phi = np.asarray(d["mode_shapes"], float)
            if phi.ndim == 1:
                phi = phi.reshape(f.size, L)
            return cls(f, d["damping_ratios"], phi)
        except KeyError as exc:
            raise DataError(f"modal model missing field {exc}") from exc
        except ValueError as exc:
            raise DataError(f"malformed modal model: {exc}") from exc


@dataclass(frozen=True)
class Band:
    lo_hz: float
    hi_hz: float

    def __post_init__(self):
        lo, hi = float(self.lo_hz), float(self.hi_hz)
        if not (np.isfinite(lo) and np.isfinite(hi)) or not 0 < lo <= hi:
            raise DataError(f"invalid band [{lo}, {hi}] Hz: need 0 < lo <= hi")
        object.__setattr__(self, "lo_hz", lo)
        object.__setattr__(self, "hi_hz", hi)

    @property
    def width_hz(self):
        return self.hi_hz - self.lo_hz

    def to_dict(self):
        return {"lo_hz": self.lo_hz, "hi_hz": self.hi_hz}

    @classmethod
    def from_dict(cls, d):
        if isinstance(d, (list, tuple)):
            return cls(*d)
        return cls(d["lo_hz"], d["hi_hz"])

    def __str__(self):
        return f"{self.lo_hz:g}-{self.hi_hz:g} Hz"


@dataclass(frozen=True)
class PseudomodalEnergy:
    value: complex
    excitation: int
    sensor: int
    band_index: int


def _integrand(omega, omega_n, zeta, prod):
    """Inertance modal sum at angular frequencies ``omega`` (1-D)."""
    w = np.asarray(omega, float)[:, None]
    num = -(w ** 2) * prod
    den = -(w ** 2) + 2j * zeta * omega_n * w + omega_n ** 2
    return (num / den).sum(axis=1)


def modal_frf(model: ModalModel, k, l, grid) -> FRF:
    """Inertance FRF of ``model`` for excitation ``k`` and sensor ``l`` on ``grid`` (Hz)."""
    prod = model.shape_products(k, l)
    grid = np.asarray(grid, float)
    check_uniform_grid(grid)
    values = _integrand(TWO_PI * grid, model.omegas, model.damping_ratios, prod)
    return FRF(k, l, grid, values, INERTANCE)


def band_indices(grid, band: Band):
    """Indices of grid points inside ``band``; raises if the band leaves the grid."""
    grid = np.asarray(grid, float)
    eps = 1e-9 * (grid[1] - grid[0])
    if band.lo_hz < grid[0] - eps or band.hi_hz > grid[-1] + eps:
        raise DataError(f"band {band} outside grid [{grid[0]:g}, {grid[-1]:g}] Hz")
    return np.flatnonzero((grid >= band.lo_hz - eps) & (grid <= band.hi_hz + eps))


def clamp_band(grid, band: Band) -> Band:
    """The band actually integrated by :func:`ime_quadrature`: its outermost inner grid points."""
    idx = band_indices(grid, band)
    if idx.size == 0:
        raise DataError(f"band {band} contains no grid points")
    return Band(float(grid[idx[0]]), float(grid[idx[-1]]))


def ime_quadrature(frf: FRF, band: Band) -> complex:
    """Trapezoidal pseudomodal energy of a sampled FRF over ``band``.

    The band is clamped to the grid points it contains; invalid bins are
    skipped (the trapezoid then spans the gap).
    """
    idx = band_indices(frf.grid, band)
    idx = idx[frf.valid[idx]]
    if idx.size < 2:
        raise DataError(f"fewer than 2 valid samples in band {band}")
    return complex(np.trapezoid(frf.values[idx], TWO_PI * frf.grid[idx]))


def _check_branch(arg):
    # principal-branch arctan is singular at +-j
    if np.any(np.abs(arg - 1j) < 1e-12) or np.any(np.abs(arg + 1j) < 1e-12):
        raise NumericalError("arctan argument at branch point +-j: degenerate modal configuration")


def ime_closed_form(model: ModalModel, k, l, band: Band) -> complex:
    """Low-damping closed-form pseudomodal energy.

    Per mode: ``p*(b - a) - w_n*p*j*[atan((-z*w_n - j*b)/w_n) - atan((-z*w_n - j*a)/w_n)]``
    with ``p = phi_k*phi_l`` and ``a, b`` the band edges in rad/s. Terms are
    summed in ascending mode order with exactly rounded accumulation.
    """
    prod = model.shape_products(k, l)
    wn, z = model.omegas, model.damping_ratios
    a, b = TWO_PI * band.lo_hz, TWO_PI * band.hi_hz
    arg_b = (-z * wn - 1j * b) / wn
    arg_a = (-z * wn - 1j * a) / wn
    _check_branch(arg_b)
    _check_branch(arg_a)
    terms = prod * (b - a) - wn * prod * 1j * (np.arctan(arg_b) - np.arctan(arg_a))
    return complex(math.fsum(terms.real), math.fsum(terms.imag))


def _csum(values):
    return complex(math.fsum(v.real for v in values), math.fsum(v.imag for v in values))


def ime_exact(model: ModalModel, k, l, band: Band, rel_tol=1e-8, max_level=60) -> complex:
    """Reference pseudomodal energy by adaptive Simpson quadrature.

    Intervals are bisected until the Simpson estimates on one and two panels
    agree to a width-proportional share of ``rel_tol * |I|``; accepted panels
    carry the Richardson correction ``(S2 - S1)/15``. Natural frequencies
    inside the band seed the initial partition so no resonance is stepped over.
    """
    if not 0 < rel_tol <= 1e-2:
        raise DataError(f"rel_tol must lie in (0, 1e-2], got {rel_tol}")
    prod = model.shape_products(k, l)
    wn, z = model.omegas, model.damping_ratios
    a, b = TWO_PI * band.lo_hz, TWO_PI * band.hi_hz
    if b == a:
        return 0j

    def f(w):
        return _integrand(w, wn, z, prod)

    inner = wn[(wn > a) & (wn < b)]
    edges = np.unique(np.concatenate([np.linspace(a, b, 17), inner]))
    lo, hi = edges[:-1], edges[1:]
    total_width = b - a
    accepted = []
    accepted_abs = 0.0
    estimate = None
    for _ in range(max_level):
        mid = 0.5 * (lo + hi)
        q1, q3 = 0.5 * (lo + mid), 0.5 * (mid + hi)
        n = lo.size
        fv = f(np.concatenate([lo, q1, mid, q3, hi])).reshape(5, n)
        h = hi - lo
        s1 = h / 6.0 * (fv[0] + 4 * fv[2] + fv[4])
        s2 = h / 12.0 * (fv[0] + 4 * fv[1] + 2 * fv[2] + 4 * fv[3] + fv[4])
        err = (s2 - s1) / 15.0
        estimate = _csum(accepted) + complex(s2.sum())
        # floor guards integrals that cancel to ~0 against a non-zero integrand
        scale = max(abs(estimate), 1e-12 * (accepted_abs + float(np.abs(s2).sum())))
        ok = np.abs(err) <= rel_tol * scale * h / total_width
        accepted.extend((s2[ok] + err[ok]).tolist())
        accepted_abs += float(np.abs(s2[ok]).sum())
        if ok.all():
            return _csum(accepted)
        lo, hi = lo[~ok], hi[~ok]
        mid = 0.5 * (lo + hi)
        lo, hi = np.concatenate([lo, mid]), np.concatenate([mid, hi])
        order = np.argsort(lo, kind="stable")
        lo, hi = lo[order], hi[order]
    raise NumericalError(
        f"ime_exact did not converge to rel_tol={rel_tol} within {max_level} bisection levels "
        f"(last estimate {estimate})")
