"""Ohmic baths with algebraic cutoff.

The spectral density is ``J(w) = lam * w / (1 + (w/cutoff)**2)``, which is
the Drude-Lorentz form ``2 Q cutoff w / (w**2 + cutoff**2)`` with
reorganisation energy ``Q = lam * cutoff / 2``.  Units have hbar = k_B = 1.

Correlation function convention::

    C(t) = (1/pi) int_0^inf dw J(w) [coth(w/2T) cos(wt) - i sin(wt)]
         = sum_k c_k exp(-nu_k t),

with the one-sided transform ``Gamma(w) = int_0^inf e^{iwt} C(t) dt``
equal to ``rate(w)/2 + i lamb_coefficient(w)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import integrate
from scipy.special import psi

from .errors import QuadratureError, ValidationError

PV_TOL = 1e-8
TAIL_FACTOR = 50.0


@dataclass(frozen=True)
class SpectralDensity:
    """Ohmic spectral density with algebraic (Lorentzian) cutoff.

    Parameters
    ----------
    lam : float
        Dimensionless dissipation strength (slope of J at the origin).
    cutoff : float
        Cutoff frequency.
    """

    lam: float
    cutoff: float

    def __post_init__(self):
        if not np.isfinite(self.lam) or self.lam < 0:
            raise ValidationError(f"lambda must be non-negative, got {self.lam}")
        if not np.isfinite(self.cutoff) or self.cutoff <= 0:
            raise ValidationError(f"cutoff must be positive, got {self.cutoff}")


@dataclass(frozen=True)
class BathSpec:
    """Thermal bath coupled through one system operator.

    The coupling constant in front of ``S ⊗ B`` is folded into the spectral
    density, so the effective strength is ``coupling_scale**2 * sd.lam``.
    The default ``coupling_scale = 1`` carries all strength in ``lam``.
    """

    sd: SpectralDensity
    temperature: float
    coupling_scale: float = 1.0
    label: str = ""

    def __post_init__(self):
        if not np.isfinite(self.temperature) or self.temperature <= 0:
            raise ValidationError(f"temperature must be positive, got {self.temperature}")
        if not np.isfinite(self.coupling_scale):
            raise ValidationError("coupling_scale must be finite")

    @property
    def effective_sd(self) -> SpectralDensity:
        if self.coupling_scale == 1.0:
            return self.sd
        return SpectralDensity(self.coupling_scale ** 2 * self.sd.lam, self.sd.cutoff)

    @property
    def lam(self) -> float:
        return self.effective_sd.lam

    @property
    def cutoff(self) -> float:
        return self.sd.cutoff


def make_bath(lam, cutoff, temperature, label=""):
    """Shorthand for ``BathSpec(SpectralDensity(lam, cutoff), temperature)``."""
    return BathSpec(SpectralDensity(lam, cutoff), temperature, label=label)


def _sd(obj) -> SpectralDensity:
    return obj.effective_sd if isinstance(obj, BathSpec) else obj


def j_omega(sd, omega):
    """Spectral density, odd-extended to negative frequencies."""
    sd = _sd(sd)
    w = np.asarray(omega, dtype=float)
    out = sd.lam * w / (1.0 + (w / sd.cutoff) ** 2)
    return float(out) if out.ndim == 0 else out


def reorganisation_energy(sd) -> float:
    """``Q = (1/pi) int_0^inf J(w)/w dw = lam * cutoff / 2``."""
    sd = _sd(sd)
    return 0.5 * sd.lam * sd.cutoff


def reorganisation_energy_quadrature(sd) -> float:
    """Direct quadrature of ``(1/pi) int_0^inf J(w)/w dw``."""
    sd = _sd(sd)
    val, _ = integrate.quad(lambda w: sd.lam / (1.0 + (w / sd.cutoff) ** 2), 0.0, np.inf,
                            epsabs=0.0, epsrel=1e-12, limit=200)
    return val / np.pi


def occupation(temperature, omega):
    """Bose-Einstein occupation ``1/(exp(w/T) - 1)``.

    Raises
    ------
    ValidationError
        At ``w == 0``, where callers must use the analytic limit instead.
    """
    w = np.asarray(omega, dtype=float)
    if np.any(w == 0.0):
        raise ValidationError("occupation diverges at omega = 0; use the zero-frequency limit")
    if temperature <= 0:
        raise ValidationError("temperature must be positive")
    with np.errstate(over="ignore"):
        out = 1.0 / np.expm1(w / temperature)
    return float(out) if out.ndim == 0 else out


def rate(bath: BathSpec, omega):
    """Golden-rule rate ``gamma(w)`` obeying detailed balance exactly.

    ``2 J(w) (n(w) + 1)`` for ``w > 0``, ``2 J(|w|) n(|w|)`` for ``w < 0`` and
    the limit ``2 lam T`` at ``w = 0``.
    """
    sd = bath.effective_sd
    T = bath.temperature
    w = np.asarray(omega, dtype=float)
    a = np.abs(w)
    x = a / T
    safe = np.where(a > 0, a, 1.0)
    jabs = j_omega(sd, safe)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        up = 2.0 * jabs / (-np.expm1(-x))          # 2J(n+1)
        down = 2.0 * jabs / np.expm1(x)            # 2Jn
    out = np.where(w > 0, up, np.where(w < 0, down, 2.0 * sd.lam * T))
    out = np.where(np.isfinite(out), out, 0.0)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# principal-value Hilbert transform

def hilbert_pv(func, omega, scales=(), window=None, tail_start=None, tol=PV_TOL):
    """``(1/pi) PV int_{-inf}^{inf} f(x) / (x - omega) dx`` for smooth ``f``.

    The pole is handled by singularity subtraction on a symmetric window
    ``[omega - W, omega + W]``: there the integrand is ``(f(x) - f(omega))/(x - omega)``
    and the analytic remainder ``f(omega) * log(W/W) = 0`` vanishes.  Outside
    the window the integral is split at ``scales`` and at ``+-tail_start``,
    beyond which the tails are integrated to infinity.

    Raises
    ------
    QuadratureError
        If the accumulated error estimate exceeds ``tol`` (absolute, relative
        to the larger of the result and the integrand scale).
    """
    w0 = float(omega)
    f0 = float(func(w0))
    scale_list = sorted({abs(float(s)) for s in scales if s})
    if window is None:
        window = 0.5 * max([abs(w0)] + scale_list[:1] + [1e-3])
    if tail_start is None:
        tail_start = TAIL_FACTOR * max(scale_list + [abs(w0), 1.0])
    tail_start = max(tail_start, abs(w0) + 2 * window)
    lo, hi = w0 - window, w0 + window

    def inner(x):
        dx = x - w0
        if dx == 0.0:
            h = 1e-6 * max(window, 1e-12)
            return (func(w0 + h) - func(w0 - h)) / (2 * h)
        return (func(x) - f0) / dx

    def outer(x):
        return func(x) / (x - w0)

    total, err = integrate.quad(inner, lo, hi, epsabs=1e-14, epsrel=1e-11, limit=400)[:2]
    pts = sorted({-tail_start, tail_start, 0.0, *scale_list, *[-s for s in scale_list],
                  *[10 * s for s in scale_list], *[-10 * s for s in scale_list]})
    pts = [p for p in pts if -tail_start <= p <= tail_start]
    edges = sorted(set([-tail_start] + pts + [tail_start]))
    for a, b in zip(edges[:-1], edges[1:]):
        for seg in ((a, min(b, lo)), (max(a, hi), b)):
            if seg[1] > seg[0]:
                v, e = integrate.quad(outer, seg[0], seg[1], epsabs=1e-14, epsrel=1e-11, limit=400)[:2]
                total += v
                err += e
    for a, b in ((tail_start, np.inf), (-np.inf, -tail_start)):
        v, e = integrate.quad(outer, a, b, epsabs=1e-15, epsrel=1e-11, limit=400)[:2]
        total += v
        err += e
    size = max(abs(total), abs(f0), 1e-300)
    if err > tol * size:
        raise QuadratureError(f"principal-value quadrature error {err:.3e} exceeds tolerance", err)
    return total / np.pi


def _half_rate(bath):
    def f(x):
        return 0.5 * rate(bath, x)
    return f


def lamb_coefficient(bath: BathSpec, omega, method="quadrature"):
    """Lamb-shift coefficient ``S(w) = -H[J (n + 1)](w)``.

    Parameters
    ----------
    bath : BathSpec
    omega : float or array_like
    method : {"quadrature", "series"}
        ``"quadrature"`` evaluates the principal-value integral numerically;
        ``"series"`` uses the closed-form one-sided transform of the
        correlation function (see :func:`one_sided_transform`).
    """
    w = np.asarray(omega, dtype=float)
    if bath.lam == 0.0:
        return 0.0 if w.ndim == 0 else np.zeros_like(w)
    if method == "series":
        out = one_sided_transform(bath, w).imag
        return float(out) if np.ndim(out) == 0 else out
    if method != "quadrature":
        raise ValidationError(f"unknown method {method!r}")
    f = _half_rate(bath)
    scales = (bath.temperature, bath.cutoff)
    vals = [-hilbert_pv(f, x, scales=scales) for x in np.atleast_1d(w)]
    return float(vals[0]) if w.ndim == 0 else np.asarray(vals).reshape(w.shape)


# ---------------------------------------------------------------------------
# exponential decomposition

@dataclass(frozen=True)
class ExponentialSeries:
    """``C(t) = sum_k amplitudes[k] * exp(-decays[k] * t)``.

    Entry 0 is the cutoff pole (decay = cutoff); entries ``1..n_matsubara``
    are Matsubara terms with decay ``2 pi k T``.
    """

    amplitudes: np.ndarray
    decays: np.ndarray
    n_matsubara: int
    bath: BathSpec = field(repr=False)

    def __len__(self):
        return len(self.amplitudes)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return np.sum(self.amplitudes[:, None] * np.exp(-np.outer(self.decays, t.ravel())),
                      axis=0).reshape(t.shape)


def _series_terms(lam, cutoff, T, n_matsubara):
    q = 0.5 * lam * cutoff
    half = cutoff / (2 * T)
    if abs(np.sin(half)) < 1e-12:
        raise ValidationError("cutoff coincides with a Matsubara frequency; amplitudes diverge")
    nu = 2 * np.pi * T * np.arange(1, n_matsubara + 1)
    c0 = q * cutoff * (1.0 / np.tan(half) - 1j)
    ck = 4 * q * cutoff * T * nu / (nu ** 2 - cutoff ** 2)
    amps = np.concatenate([[c0], ck.astype(complex)])
    decays = np.concatenate([[cutoff], nu])
    return amps, decays


def correlation_series(bath: BathSpec, n_matsubara: int, check_tol=None) -> ExponentialSeries:
    """Residue expansion of the bath correlation function.

    Parameters
    ----------
    bath : BathSpec
    n_matsubara : int
        Number ``N_k >= 0`` of Matsubara terms retained.
    check_tol : float, optional
        If given, compare against direct quadrature at ``t = 1/cutoff`` and
        ``t = 1/T`` and raise when the absolute error is larger.
    """
    if n_matsubara < 0 or int(n_matsubara) != n_matsubara:
        raise ValidationError("n_matsubara must be a non-negative integer")
    n_matsubara = int(n_matsubara)
    amps, decays = _series_terms(bath.lam, bath.cutoff, bath.temperature, n_matsubara)
    series = ExponentialSeries(amps, decays, n_matsubara, bath)
    if check_tol is not None:
        err = series_error(series, (1.0 / bath.cutoff, 1.0 / bath.temperature))
        if err > check_tol:
            raise ValidationError(
                f"N_k = {n_matsubara} reproduces C(t) only to {err:.3e} (> {check_tol:.1e})")
    return series


def correlation_quadrature(bath: BathSpec, t):
    """Direct Fourier quadrature of ``C(t)`` for ``t > 0``."""
    t = float(t)
    if t <= 0:
        raise ValidationError("direct quadrature needs t > 0 (the real part diverges at t = 0)")
    sd = bath.effective_sd
    T = bath.temperature

    def jcoth(w):
        if w == 0.0:
            return 2.0 * sd.lam * T
        return j_omega(sd, w) / np.tanh(w / (2 * T))

    re = integrate.quad(jcoth, 0.0, np.inf, weight="cos", wvar=t, limlst=200)[0]
    im = integrate.quad(lambda w: j_omega(sd, w), 0.0, np.inf, weight="sin", wvar=t, limlst=200)[0]
    return (re - 1j * im) / np.pi


def series_error(series: ExponentialSeries, times) -> float:
    """Largest absolute deviation between the series and direct quadrature."""
    return float(max(abs(series(t) - correlation_quadrature(series.bath, t)) for t in times))


def _trigamma(z):
    """Trigamma function for complex arguments with ``Re z > 0``.

    Upward recurrence to ``|z| >= 12`` followed by the asymptotic series.
    """
    z = np.asarray(z, dtype=complex)
    acc = np.zeros_like(z)
    w = z.copy()
    for _ in range(64):
        small = np.abs(w) < 12.0
        if not np.any(small):
            break
        acc = acc + np.where(small, 1.0 / np.where(small, w, 1.0) ** 2, 0.0)
        w = np.where(small, w + 1.0, w)
    iw = 1.0 / w
    iw2 = iw * iw
    series = iw + 0.5 * iw2 + iw * iw2 * (1 / 6 - iw2 * (1 / 30 - iw2 * (1 / 42 - iw2 / 30)))
    return acc + series


def matsubara_tail(bath: BathSpec, n_matsubara: int, z):
    """Closed form of ``sum_{k > N_k} c_k / (nu_k - z)`` for ``Re z <= 0``.

    With ``a = cutoff/(2 pi T)``, ``c = z/(2 pi T)`` and ``m = N_k + 1``,
    partial fractions give::

        (2 Q cutoff / pi) * ( [psi(m - c) - psi(m - a)] / (2 (cutoff - z))
                              + D / (4 pi T) ),
        D = sum_{k >= m} 1/((k + a)(k - c)) = [psi(m + a) - psi(m - c)] / (a + c).

    The divided difference ``D`` is removable at ``z = -cutoff`` and is
    replaced by the trigamma function at the midpoint when ``|a + c|`` is small.
    """
    lam, L, T = bath.lam, bath.cutoff, bath.temperature
    q = 0.5 * lam * L
    twopiT = 2 * np.pi * T
    z = np.asarray(z, dtype=complex)
    a = L / twopiT
    c = z / twopiT
    m = n_matsubara + 1
    x, y = m + a, m - c
    delta = x - y
    near = np.abs(delta) < 1e-3
    safe = np.where(near, 1.0, delta)
    dd = np.where(near, _trigamma(0.5 * (x + y)), (psi(x) - psi(y)) / safe)
    total = (psi(y) - psi(m - a)) / (2 * (L - z)) + dd / (2 * twopiT)
    out = (2 * q * L / np.pi) * total
    return complex(out) if out.ndim == 0 else out


def one_sided_transform(bath: BathSpec, omega):
    """``Gamma(w) = int_0^inf e^{iwt} C(t) dt`` summed over all poles."""
    w = np.asarray(omega, dtype=float)
    amps, decays = _series_terms(bath.lam, bath.cutoff, bath.temperature, 0)
    z = 1j * w
    out = amps[0] / (decays[0] - z) + matsubara_tail(bath, 0, z)
    return complex(out) if np.ndim(out) == 0 else out
