"""Stationary and travelling 2*pi-periodic cnoidal waves of KdV.

A profile f(x - ct) solves q_t + q_xxx + q q_x = 0 iff, after one
integration, f'' + W'(f) = 0 with W(f) = f^3/6 - c f^2/2 - a f.
Orbits of this oscillator between the centre f_+ and the separatrix
give the periodic waves; the one with period 2*pi is located by shooting.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.integrate import solve_ivp
from scipy.integrate._ivp import dop853_coefficients as _dop853

from .elliptic import ellipk, jacobi_sncndn
from .fourier_core import FourierField, grid_inverse, grid_points, grid_transform

TWO_PI = 2 * np.pi
DEFAULT_SAMPLES = 256
SHOOT_STEPS = 4096


class NoOscillation(ValueError):
    """c^2 + 2a <= 0: the potential has no well."""


class NoPeriodicWave(ValueError):
    """No orbit of the requested family has period 2*pi."""


class DivergentOrbit(ValueError):
    """Initial value lies outside the potential well."""


class PotentialData(NamedTuple):
    f_minus: float
    f_plus: float
    T0: float
    separatrix: float


def potential(f, a: float, c: float):
    return f**3 / 6 - c * f**2 / 2 - a * f


def potential_slope(f, a: float, c: float):
    return f**2 / 2 - c * f - a


def potential_data(a: float, c: float) -> PotentialData:
    """Equilibria, small-oscillation period and separatrix crest level."""
    disc = c * c + 2 * a
    if disc <= 0:
        raise NoOscillation(f"c^2 + 2a = {disc} <= 0: no oscillatory regime")
    r = np.sqrt(disc)
    return PotentialData(c - r, c + r, TWO_PI / disc**0.25, c + 2 * r)


def turning_roots(a: float, c: float, f0: float) -> tuple[float, float, float]:
    """Roots b1 < b2 < b3 of W(f) = W(f0); the orbit oscillates on [b2, b3].

    f0 is a root, so W(f) - W(f0) = (f - f0)(f^2 + p f + q)/6 and the other
    two roots come from the quadratic, which stays accurate near the well.
    """
    p = f0 - 3 * c
    q = f0 * f0 - 3 * c * f0 - 6 * a
    disc = p * p - 4 * q
    if disc < 0:
        raise DivergentOrbit(f"f0={f0} does not lie on a bounded orbit")
    sq = np.sqrt(disc)
    # avoid cancellation: larger-magnitude root first, the other from the product
    r1 = -(p + np.copysign(sq, p)) / 2
    r2 = q / r1 if r1 != 0 else -p - r1
    b1, b2, b3 = sorted([f0, r1, r2])
    if not (b1 < b2 <= b3) or f0 == b1:
        raise DivergentOrbit(f"f0={f0} does not lie on a bounded orbit")
    return float(b1), float(b2), float(b3)


def _check_in_well(a: float, c: float, f0: float) -> PotentialData:
    pd = potential_data(a, c)
    if not (pd.f_plus < f0 < pd.separatrix):
        raise DivergentOrbit(
            f"f0={f0} outside the well ({pd.f_plus}, {pd.separatrix}) for a={a}, c={c}")
    return pd


def _period_elliptic(a: float, c: float, f0: float) -> float:
    b1, b2, b3 = turning_roots(a, c, f0)
    k = np.sqrt((b3 - b2) / (b3 - b1))
    return 4 * np.sqrt(3) * ellipk(k) / np.sqrt(b3 - b1)


def _rhs(a, c):
    def f(_, y):
        return [y[1], a + c * y[0] - y[0] ** 2 / 2]
    return f


def integrate_fixed(a: float, c: float, f0: float, t_end: float, steps: int) -> np.ndarray:
    """Fixed-step 8th-order Dormand-Prince integration from the crest.

    Returns the (steps+1, 2) array of (f, f') at the step boundaries.
    """
    A = _dop853.A[:_dop853.N_STAGES, :_dop853.N_STAGES]
    B = _dop853.B
    C = _dop853.C[:_dop853.N_STAGES]
    h = t_end / steps
    y = np.array([f0, 0.0])
    out = np.empty((steps + 1, 2))
    out[0] = y
    K = np.empty((_dop853.N_STAGES, 2))
    for n in range(steps):
        for s in range(_dop853.N_STAGES):
            ys = y + h * (A[s, :s] @ K[:s])
            K[s, 0] = ys[1]
            K[s, 1] = a + c * ys[0] - ys[0] ** 2 / 2
        y = y + h * (B @ K)
        out[n + 1] = y
    return out


def _period_ode(a: float, c: float, f0: float, rtol: float = 1e-13) -> float:
    # start at the crest (f' = 0, f'' < 0); half period is the next f' = 0 crossing
    def trough(_, y):
        return y[1]
    trough.direction = 1.0
    trough.terminal = True
    T0 = potential_data(a, c).T0
    sol = solve_ivp(_rhs(a, c), (0, 1e3 * T0), [f0, 0.0], method="DOP853",
                    rtol=rtol, atol=1e-14, events=trough)
    if sol.t_events[0].size == 0:
        raise DivergentOrbit(f"orbit through f0={f0} did not return")
    return 2 * float(sol.t_events[0][0])


def orbit_period(a: float, c: float, f0: float, method: str = "elliptic") -> float:
    """Period of the orbit of f'' + W'(f) = 0 through (f0, 0).

    ``method="elliptic"`` reduces the energy integral to K(k) and evaluates it
    by the AGM; ``method="ode"`` integrates the oscillator with event detection.
    """
    _check_in_well(a, c, f0)
    if method == "elliptic":
        return _period_elliptic(a, c, f0)
    if method == "ode":
        return _period_ode(a, c, f0)
    raise ValueError(f"unknown method {method!r}")


def find_turning_point(a: float, c: float, tol: float = 1e-12, period: float = TWO_PI) -> float:
    """Crest value f0 whose orbit has the given period.

    Bisection on the monotone period map down to a 1e-3 bracket, then
    Newton with a centred-difference derivative.
    """
    pd = potential_data(a, c)
    if pd.T0 >= period:
        raise NoPeriodicWave(
            f"small-oscillation period T0={pd.T0:.6g} >= {period:.6g}; no wave in this family")
    width = pd.separatrix - pd.f_plus
    lo = pd.f_plus + 1e-9 * width
    hi = pd.separatrix - 1e-12 * width
    p_lo, p_hi = _period_elliptic(a, c, lo), _period_elliptic(a, c, hi)
    if not (p_lo < period < p_hi):
        raise NoPeriodicWave(f"period {period} not bracketed by scanned range [{p_lo}, {p_hi}]")
    while hi - lo > 1e-3:
        mid = 0.5 * (lo + hi)
        if _period_elliptic(a, c, mid) < period:
            lo = mid
        else:
            hi = mid
    f0 = 0.5 * (lo + hi)
    for _ in range(50):
        h = 1e-6 * width
        h = min(h, 0.5 * (f0 - pd.f_plus), 0.5 * (pd.separatrix - f0))
        dp = (_period_elliptic(a, c, f0 + h) - _period_elliptic(a, c, f0 - h)) / (2 * h)
        err = _period_elliptic(a, c, f0) - period
        if abs(err) < tol:
            break
        f0 = float(np.clip(f0 - err / dp, lo, hi))
    else:
        raise NoPeriodicWave(f"Newton iteration did not reach |dT| < {tol}")
    return f0


@dataclass(frozen=True, eq=False)
class CnoidalWave:
    a: float
    c: float
    mean: float
    Phi: FourierField
    f0: float
    roots: tuple[float, float, float] | None = None
    residual: float = 0.0
    period: float = TWO_PI
    meta: dict = field(default_factory=dict)

    def samples(self, M: int | None = None) -> np.ndarray:
        """phi(x_j) = mean + Phi(x_j) on the uniform grid of size M."""
        M = M or 2 * self.Phi.N + 2
        return self.mean + grid_transform(self.Phi, M)

    def field(self, N: int) -> FourierField:
        """The full profile phi (mean included) truncated to N modes."""
        c = self.Phi.resize(N).coeffs.copy()
        c[N] = self.mean
        return FourierField(c, False)

    def decay_fit(self, floor: float = 1e-13) -> tuple[float, float]:
        """(A, sigma) with |Phi_k| <= A exp(-sigma |k|) over all stored modes."""
        k = np.arange(1, self.Phi.N + 1)
        mag = np.abs(self.Phi.coeffs[self.Phi.N + 1:])
        keep = mag > floor * mag.max()
        slope, _ = np.polyfit(k[keep], np.log(mag[keep]), 1)
        sigma = -slope
        A = float(np.max(mag * np.exp(sigma * k)))
        return A, float(sigma)

    def to_json(self) -> dict:
        return {
            "a": self.a, "c": self.c, "mean": self.mean, "f0": self.f0,
            "roots": list(self.roots) if self.roots else None,
            "residual": self.residual, "period": self.period,
            "Phi": self.Phi.to_json(), "meta": self.meta,
        }

    @classmethod
    def from_json(cls, data: dict | str) -> "CnoidalWave":
        if isinstance(data, str):
            data = json.loads(data)
        roots = tuple(data["roots"]) if data.get("roots") else None
        return cls(data["a"], data["c"], data["mean"], FourierField.from_json(data["Phi"]),
                   data["f0"], roots, data["residual"], data.get("period", TWO_PI),
                   data.get("meta", {}))


def stationary_residual(phi: FourierField, a: float, c: float, M: int | None = None) -> np.ndarray:
    """a + c phi - phi^2/2 - phi'' on the grid, with phi'' taken spectrally."""
    M = M or 2 * phi.N + 2
    k = phi.modes
    f = grid_transform(phi, M)
    fxx = grid_transform(phi.with_coeffs(-(k**2) * phi.coeffs), M)
    return a + c * f - f**2 / 2 - fxx


def travelling_residual(phi: FourierField, c: float, M: int | None = None) -> np.ndarray:
    """f''' + f f' - c f' on the grid (the un-integrated profile equation)."""
    M = M or 2 * phi.N + 2
    k = phi.modes
    f = grid_transform(phi, M)
    fx = grid_transform(phi.with_coeffs(1j * k * phi.coeffs), M)
    fxxx = grid_transform(phi.with_coeffs(-1j * k**3 * phi.coeffs), M)
    return fxxx + f * fx - c * fx


def _denoise(phi: FourierField) -> tuple[FourierField, int]:
    """Zero the modes past the first one that sinks into the sampling noise.

    The noise level is taken from the last quarter of the spectrum; without
    this cut k^2 and k^3 amplify ~1e-14 sample noise in derivative checks.
    """
    N = phi.N
    mag = np.abs(phi.coeffs[N + 1:])
    floor = 10 * np.median(mag[-max(N // 4, 1):])
    below = np.nonzero(mag < floor)[0]
    k_cut = int(below[0]) + 1 if below.size else N + 1
    c = phi.coeffs.copy()
    c[N + k_cut:] = 0
    c[:N - k_cut + 1] = 0
    return FourierField(c, phi.mean_zero), k_cut - 1


def build_cnoidal(a: float, c: float = 0.0, tol: float = 1e-12,
                  samples: int = DEFAULT_SAMPLES) -> CnoidalWave:
    """Shoot for the 2*pi-periodic orbit and sample it from the crest.

    Starting at the crest makes the profile even, so Phi_k is real.
    """
    f0 = find_turning_point(a, c, tol)
    if SHOOT_STEPS % samples:
        raise ValueError(f"samples must divide {SHOOT_STEPS}")
    orbit = integrate_fixed(a, c, f0, TWO_PI, SHOOT_STEPS)
    f = orbit[:-1:SHOOT_STEPS // samples, 0]
    halved = integrate_fixed(a, c, f0, TWO_PI, 2 * SHOOT_STEPS)
    step_error = float(np.max(np.abs(halved[::2] - orbit)))
    N = samples // 2 - 1
    phi, k_cut = _denoise(grid_inverse(f, N))
    mean = phi.mean
    Phi = phi.mean_free()
    res = float(np.max(np.abs(stationary_residual(phi, a, c))))
    period_ode = _period_ode(a, c, f0)
    meta = {"method": "shooting", "samples": samples, "tol": tol, "k_cut": k_cut, "step_halving_error": step_error,
            "return_mismatch": float(np.max(np.abs(orbit[-1] - orbit[0]))),
            "period_elliptic": _period_elliptic(a, c, f0), "period_ode": period_ode}
    return CnoidalWave(a, c, mean, Phi, f0, turning_roots(a, c, f0), res, TWO_PI, meta)


def cnoidal_profile(z, b1: float, b2: float, b3: float):
    """phi(z), phi'(z), phi''(z) for phi = b2 + (b3-b2) cn^2(lam z; k)."""
    lam = np.sqrt((b3 - b1) / 12)
    k = np.sqrt((b3 - b2) / (b3 - b1))
    amp = b3 - b2
    sn, cn, dn = jacobi_sncndn(lam * np.asarray(z, dtype=float), k)
    phi = b2 + amp * cn**2
    dphi = -2 * amp * lam * cn * sn * dn
    ddphi = -2 * amp * lam**2 * (cn**2 * dn**2 - sn**2 * dn**2 - k**2 * sn**2 * cn**2)
    return phi, dphi, ddphi


def cnoidal_from_roots(b1: float, b2: float, b3: float,
                       samples: int = DEFAULT_SAMPLES) -> CnoidalWave:
    """Closed-form cnoidal wave from the three turning roots.

    The speed is c = (b1+b2+b3)/3 and the integration constant is recovered
    from the profile; the period 2K(k)/sqrt((b3-b1)/12) is not forced to 2*pi.
    """
    if not (b1 < b2 < b3):
        raise ValueError("roots must satisfy b1 < b2 < b3")
    c = (b1 + b2 + b3) / 3
    k = np.sqrt((b3 - b2) / (b3 - b1))
    period = 2 * ellipk(k) / np.sqrt((b3 - b1) / 12)
    z = np.linspace(0, period, 1024, endpoint=False)
    phi, _, ddphi = cnoidal_profile(z, b1, b2, b3)
    r = ddphi + phi**2 / 2 - c * phi
    a = float(np.mean(r))
    residual = float(np.max(np.abs(r - a)))
    # sampled on [0, 2*pi); meaningful as a Fourier series only when period == 2*pi
    x = grid_points(samples)
    f = cnoidal_profile(x, b1, b2, b3)[0]
    phi_field = grid_inverse(f, samples // 2 - 1)
    meta = {"method": "jacobi_cn", "samples": samples, "a_closed_form": -(b1 * b2 + b1 * b3 + b2 * b3) / 6}
    return CnoidalWave(a, c, phi_field.mean, phi_field.mean_free(), b3, (b1, b2, b3),
                       residual, float(period), meta)
