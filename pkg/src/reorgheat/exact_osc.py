"""Exact stationary oracle for a harmonic oscillator between two baths.

With the dissipation-kernel transform ``chi(s) = sum_i lam_i L_i^2/(s + L_i)``
and ``g(s) = 1/(s^2 + w_R^2 - chi(s))``, the Landauer-type current from bath
``i`` into the oscillator is::

    Q_i = (1/pi) int_0^inf dw w J_1 J_2 |g(iw)|^2 [coth(w/2T_i) - coth(w/2T_j)].

It reduces to ``lam1 lam2/(lam1 + lam2) (T_i - T_j)`` in the classical limit,
which pins the prefactor.  The printed alternative ``4/pi`` can be selected
through ``prefactor`` for comparison.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import integrate

from . import bath as bath_mod
from .errors import QuadratureError, ValidationError

PREFACTORS = {"1/pi": 1.0 / np.pi, "4/pi": 4.0 / np.pi}
QUAD_RTOL = 1e-9


@dataclass(frozen=True)
class OscillatorSpec:
    """Oscillator of unit mass with bare frequency ``omega0`` and two baths."""

    omega0: float
    baths: tuple
    counter_term: bool = True

    def __post_init__(self):
        if self.omega0 <= 0:
            raise ValidationError("omega0 must be positive")
        if len(self.baths) != 2:
            raise ValidationError("the exact oracle needs exactly two baths")
        if self.omega_r2 <= 0 or self.omega0 ** 2 - (0 if self.counter_term else self.shift) <= 0:
            raise ValidationError("oscillator is unstable for these couplings")

    @property
    def shift(self):
        return sum(b.lam * b.cutoff for b in self.baths)

    @property
    def omega_r2(self):
        """Squared frequency of ``H_S`` (includes the counter term if present)."""
        return self.omega0 ** 2 + (self.shift if self.counter_term else 0.0)


def chi_hat(spec: OscillatorSpec, s):
    """Laplace transform of the dissipation kernel."""
    s = np.asarray(s, dtype=complex)
    out = np.zeros_like(s)
    for b in spec.baths:
        den = s + b.cutoff
        if np.any(np.abs(den) < 1e-300):
            raise ValidationError("chi_hat evaluated at a pole")
        out = out + b.lam * b.cutoff ** 2 / den
    return complex(out) if out.ndim == 0 else out


def g_hat(spec: OscillatorSpec, s):
    """Resolvent ``1/(s^2 + w_R^2 - chi(s))``."""
    s = np.asarray(s, dtype=complex)
    den = s ** 2 + spec.omega_r2 - chi_hat(spec, s)
    if np.any(np.abs(den) < 1e-14):
        raise ValidationError("resolvent is at a resonance")
    out = 1.0 / den
    return complex(out) if np.ndim(out) == 0 else out


def g_hat_abs2(spec, omega):
    """``|g(i w)|^2`` for real ``w``."""
    return np.abs(g_hat(spec, 1j * np.asarray(omega, dtype=float))) ** 2


def _coth_half(w, T):
    return 1.0 / np.tanh(w / (2 * T))


def _coth_difference(w, ti, tj):
    """``coth(w/2T_i) - coth(w/2T_j)`` without cancellation at large ``w``."""
    with np.errstate(over="ignore"):
        return 2.0 / np.expm1(w / ti) - 2.0 / np.expm1(w / tj)


def _theta_quad(func, scale, rtol, points_w=()):
    """``int_0^inf func(w) dw`` via ``w = scale * tan(theta)``."""
    def integrand(theta):
        c = np.cos(theta)
        if c <= 0:
            return 0.0
        w = scale * np.tan(theta)
        return func(w) * scale / (c * c)

    pts = sorted(np.arctan(np.asarray([p for p in points_w if p > 0]) / scale))
    val, err = integrate.quad(integrand, 0.0, 0.5 * np.pi, points=pts or None, epsabs=0.0,
                              epsrel=rtol, limit=1000)
    if not np.isfinite(val) or err > 10 * rtol * max(abs(val), 1e-300):
        raise QuadratureError(f"quadrature error {err:.3e} for value {val:.3e}", err)
    return val, err


def _spectral_points(spec):
    temps = [b.temperature for b in spec.baths]
    w_s = np.sqrt(spec.omega_r2)
    return (0.5 * spec.omega0, spec.omega0, w_s, 2 * spec.omega0, *temps, 10 * max(temps))


def exact_current(spec: OscillatorSpec, bath_index: int, prefactor="1/pi", rtol=QUAD_RTOL,
                  return_error=False):
    """Stationary heat current from bath ``bath_index`` into the oscillator."""
    if bath_index not in (0, 1):
        raise ValidationError("bath_index must be 0 or 1")
    pref = PREFACTORS[prefactor] if isinstance(prefactor, str) else float(prefactor)
    bi, bj = spec.baths[bath_index], spec.baths[1 - bath_index]
    if bi.temperature == bj.temperature:
        return (0.0, 0.0) if return_error else 0.0
    b1, b2 = spec.baths

    def f(w):
        if w == 0.0:
            # limit: w J1 J2 |g|^2 (2T_i/w - 2T_j/w) -> 0 because J ~ w
            return 0.0
        jj = bath_mod.j_omega(b1, w) * bath_mod.j_omega(b2, w)
        return w * jj * g_hat_abs2(spec, w) * _coth_difference(w, bi.temperature, bj.temperature)

    scale = max(b.cutoff for b in spec.baths)
    val, err = _theta_quad(f, scale, rtol, _spectral_points(spec))
    return (pref * val, pref * err) if return_error else pref * val


def exact_position_variance(spec: OscillatorSpec, rtol=QUAD_RTOL):
    """``<x^2> = (1/pi) int_0^inf |g(iw)|^2 [J_1 coth(w/2T_1) + J_2 coth(w/2T_2)] dw``."""
    def f(w):
        if w == 0.0:
            return float(sum(2 * b.lam * b.temperature for b in spec.baths) * g_hat_abs2(spec, 0.0))
        return g_hat_abs2(spec, w) * sum(bath_mod.j_omega(b, w) * _coth_half(w, b.temperature)
                                         for b in spec.baths)

    scale = max(b.cutoff for b in spec.baths)
    val, _ = _theta_quad(f, scale, rtol, _spectral_points(spec))
    return val / np.pi


def tail_fraction(spec: OscillatorSpec, bath_index=0, factor=20.0):
    """Share of the current integral carried by ``w > factor * max(cutoff, T)``."""
    b1, b2 = spec.baths
    bi, bj = spec.baths[bath_index], spec.baths[1 - bath_index]
    if bi.temperature == bj.temperature:
        return 0.0
    w_cut = factor * max([b.cutoff for b in spec.baths] + [b.temperature for b in spec.baths])

    def f(w):
        jj = bath_mod.j_omega(b1, w) * bath_mod.j_omega(b2, w)
        return w * jj * g_hat_abs2(spec, w) * _coth_difference(w, bi.temperature, bj.temperature)

    tail = integrate.quad(f, w_cut, np.inf, epsabs=0.0, epsrel=1e-8, limit=200)[0]
    total = exact_current(spec, bath_index, prefactor=1.0)
    return abs(tail / total) if total else 0.0


def classical_current(spec: OscillatorSpec, bath_index=0):
    """High-temperature limit ``lam_i lam_j/(lam_i + lam_j) (T_i - T_j)``."""
    bi, bj = spec.baths[bath_index], spec.baths[1 - bath_index]
    return bi.lam * bj.lam / (bi.lam + bj.lam) * (bi.temperature - bj.temperature)
