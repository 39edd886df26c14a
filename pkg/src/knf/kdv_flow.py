"""KdV evolution and the linear semigroups e^{tL}, e^{tL1}.

All time stepping is classical RK4 on integrating-factor variables
v_k = u_k exp(-i psi(k) t), psi(k) = k^3 - a k, where a is the spatial mean.
"""

from __future__ import annotations

import csv
import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.fft as sfft
import scipy.linalg

from .fourier_core import FourierField, antiderivative, grid_inverse, grid_transform

log = logging.getLogger(__name__)

# P u = L0_COEFF * sum (Phi_k1 / k1) Phi_k2 u_k3, shared with the normal form
L0_COEFF = 1j / 3
# G = G_COEFF * Phi * antiderivative(Phi), so that P u = G u - mean(G u)
G_COEFF = (1j * L0_COEFF).real

STABILITY_BUDGET = 250.0
BLOWUP_FACTOR = 10.0


class SolverBlowUp(RuntimeError):
    """The l2 norm grew past the guard; dt is too large for this resolution."""


@dataclass(frozen=True)
class SolverConfig:
    N: int
    dt: float
    T: float
    dealias: str = "pad-3/2"
    monitor_every: int = 100

    def __post_init__(self):
        if self.N < 8:
            raise ValueError("N must be at least 8")
        if self.dealias not in ("pad-3/2", "truncate-2/3"):
            raise ValueError(f"unknown dealias policy {self.dealias!r}")
        if self.dt <= 0 or self.T < 0:
            raise ValueError("dt must be positive and T nonnegative")
        if self.dt > STABILITY_BUDGET / self.N**3:
            warnings.warn(f"dt={self.dt:g} exceeds the accuracy budget "
                          f"{STABILITY_BUDGET}/N^3={STABILITY_BUDGET / self.N**3:.3g}",
                          stacklevel=3)

    @property
    def steps(self) -> int:
        return int(round(self.T / self.dt))

    def with_(self, **kw) -> "SolverConfig":
        d = dict(N=self.N, dt=self.dt, T=self.T, dealias=self.dealias,
                 monitor_every=self.monitor_every)
        d.update(kw)
        return SolverConfig(**d)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Sampled states of a real solution; rows of ``coeffs`` are k = -N..N."""

    times: np.ndarray
    coeffs: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def N(self) -> int:
        return self.coeffs.shape[1] // 2

    def __len__(self) -> int:
        return self.times.size

    def state(self, i: int) -> FourierField:
        return FourierField(self.coeffs[i])

    @property
    def states(self) -> list[FourierField]:
        return [self.state(i) for i in range(len(self))]

    def index_of(self, t: float, atol: float = 1e-12) -> int:
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > atol * max(1.0, abs(t)):
            raise KeyError(f"time {t} not sampled")
        return i

    @property
    def momentum(self) -> np.ndarray:
        return self.coeffs[:, self.N].real.copy()

    @property
    def energy(self) -> np.ndarray:
        return np.sum(np.abs(self.coeffs) ** 2, axis=1)

    @property
    def energy_drift(self) -> np.ndarray:
        e = self.energy
        return np.abs(e - e[0]) / e[0] if e[0] > 0 else np.abs(e - e[0])

    def save(self, path: str | Path) -> None:
        """JSON index, one field file per sample and a conservation CSV."""
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        files = []
        for i in range(len(self)):
            name = f"state_{i:05d}.json"
            (path / name).write_text(json.dumps(self.state(i).to_json()))
            files.append(name)
        index = {"N": self.N, "times": self.times.tolist(), "files": files, "meta": self.meta}
        (path / "index.json").write_text(json.dumps(index, indent=1))
        with open(path / "conservation.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "momentum", "energy_drift"])
            for t, p, e in zip(self.times, self.momentum, self.energy_drift):
                w.writerow([repr(float(t)), repr(float(p)), repr(float(e))])

    @classmethod
    def load(cls, path: str | Path) -> "Trajectory":
        path = Path(path)
        index = json.loads((path / "index.json").read_text())
        rows = [FourierField.from_json((path / f).read_text()).coeffs for f in index["files"]]
        return cls(np.array(index["times"]), np.array(rows), index.get("meta", {}))


def dispersion(N: int, mean: float) -> np.ndarray:
    """psi(k) = k^3 - mean * k for k = 0..N."""
    k = np.arange(N + 1, dtype=float)
    return k**3 - mean * k


class QuadraticTerm:
    """-(ik/2)(w^2)_k on the nonnegative half-spectrum, dealiased."""

    def __init__(self, N: int, dealias: str = "pad-3/2"):
        self.N = N
        self.ik2 = -0.5j * np.arange(N + 1)
        if dealias == "pad-3/2":
            self.M = sfft.next_fast_len(3 * N + 2, real=True)
            self.kmax = N
        else:
            self.M = 2 * N + 2
            self.kmax = (2 * N + 2) // 3
        self._spec = np.zeros(self.M // 2 + 1, dtype=complex)
        self._scale = self.ik2 * self.M
        self._x = np.empty(self.M)
        self._prod = np.empty(self.M // 2 + 1, dtype=complex)

    def __call__(self, w: np.ndarray) -> np.ndarray:
        kmax = self.kmax
        spec, x, prod = self._spec, self._x, self._prod
        spec[:kmax + 1] = w[:kmax + 1]
        np.fft.irfft(spec, n=self.M, out=x)
        np.multiply(x, x, out=x)
        np.fft.rfft(x, out=prod)
        out = np.zeros(self.N + 1, dtype=complex)
        np.multiply(prod[:kmax + 1], self._scale[:kmax + 1], out=out[:kmax + 1])
        return out


def _lawson_rk4(rhs, w0, psi, dt, steps, monitor_every, norm_guard=None):
    """RK4 on v = e^{-i psi t} w, written in w; returns sampled steps and states."""
    E = np.exp(0.5j * psi * dt)
    w = w0.copy()
    samples = [(0, w.copy())]
    limit = None if norm_guard is None else BLOWUP_FACTOR * max(norm_guard(w0), 1e-300)
    half = 0.5 * dt
    for n in range(1, steps + 1):
        k1 = rhs(w)
        Ew = E * w
        k2 = rhs(E * (w + half * k1))
        k3 = rhs(Ew + half * k2)
        k4 = rhs(E * (Ew + dt * k3))
        w = E * (E * (w + (dt / 6) * k1) + (dt / 3) * (k2 + k3)) + (dt / 6) * k4
        if n % monitor_every == 0 or n == steps:
            if limit is not None and norm_guard(w) > limit:
                raise SolverBlowUp(f"l2 norm exceeded {BLOWUP_FACTOR}x its initial value "
                                   f"at step {n} (t={n * dt:.6g}); reduce dt")
            samples.append((n, w.copy()))
    return samples


def _full(pos: np.ndarray) -> np.ndarray:
    return np.concatenate([np.conj(pos[:0:-1]), pos])


def _half_norm(w):
    return np.sqrt(2 * np.sum(np.abs(w[1:]) ** 2))


def evolve_kdv(q0: FourierField, cfg: SolverConfig) -> Trajectory:
    """Solve q_t + q_xxx + q q_x = 0 from q0 with N = cfg.N modes.

    The mean is conserved exactly and folded into the dispersion relation.
    """
    q0 = q0.resize(cfg.N)
    N = cfg.N
    mean = q0.mean
    w0 = q0.positive
    w0[0] = 0
    psi = dispersion(N, mean)
    quad = QuadraticTerm(N, cfg.dealias)
    dt = cfg.T / cfg.steps if cfg.steps else cfg.dt
    samples = _lawson_rk4(quad, w0, psi, dt, cfg.steps, cfg.monitor_every, _half_norm)
    times = np.array([n * dt for n, _ in samples])
    rows = []
    for _, w in samples:
        w = w.copy()
        w[0] = mean
        rows.append(_full(w))
    traj = Trajectory(times, np.array(rows), {"kind": "kdv", "N": N, "dt": dt, "T": cfg.T,
                                              "dealias": cfg.dealias, "mean": mean})
    drift = float(traj.energy_drift[-1])
    traj.meta["energy_drift"] = drift
    log.debug("evolve_kdv N=%d dt=%g T=%g drift=%.3e", N, dt, cfg.T, drift)
    return traj


def galilean_shift(traj: Trajectory, c: float) -> Trajectory:
    """Map q(x, t) to q(x - ct, t) + c, the KdV Galilean symmetry."""
    N = traj.N
    k = np.arange(-N, N + 1)
    phase = np.exp(-1j * c * np.outer(traj.times, k))
    coeffs = traj.coeffs * phase
    coeffs[:, N] += c
    meta = dict(traj.meta, galilean_shift=traj.meta.get("galilean_shift", 0.0) + c)
    if "mean" in meta:
        meta["mean"] = meta["mean"] + c
    return Trajectory(traj.times.copy(), coeffs, meta)


def airy_flow(g: FourierField, t: float, a: float) -> FourierField:
    """e^{tL} g with L = -d^3/dx^3 - a d/dx: multiply mode k by e^{i psi(k) t}."""
    k = g.modes.astype(float)
    return g.with_coeffs(g.coeffs * np.exp(1j * (k**3 - a * k) * t))


def _require_mean_zero(*fields: FourierField) -> None:
    for f in fields:
        if f[0] != 0:
            raise ValueError("input must be mean-zero")


def _p_kernel(Phi: FourierField) -> np.ndarray:
    """Full convolution (Phi_k / k) * Phi, indices -2N..2N."""
    k = Phi.modes
    over_k = np.zeros_like(Phi.coeffs)
    nz = k != 0
    over_k[nz] = Phi.coeffs[nz] / k[nz]
    return np.convolve(over_k, Phi.coeffs)


def apply_P(u: FourierField, Phi: FourierField) -> FourierField:
    """(P u)_k = L0_COEFF * sum_{k1+k2+k3=k} (Phi_k1/k1) Phi_k2 u_k3, (P u)_0 = 0."""
    _require_mean_zero(u, Phi)
    N = u.N
    Phi = Phi.resize(N)
    full = np.convolve(_p_kernel(Phi), u.coeffs)  # indices -3N..3N
    out = L0_COEFF * full[2 * N:4 * N + 1]
    out[N] = 0
    return FourierField(out, True)


def p_matrix(Phi: FourierField, N: int) -> np.ndarray:
    """Dense matrix of P on coefficient vectors k = -N..N."""
    Phi = Phi.resize(N)
    h = _p_kernel(Phi)  # index j -> j - 2N
    k = np.arange(-N, N + 1)
    diff = k[:, None] - k[None, :]
    P = L0_COEFF * h[diff + 2 * N]
    P[N, :] = 0
    P[:, N] = 0
    return P


def build_G(Phi: FourierField) -> FourierField:
    """G = G_COEFF * Phi * antiderivative(Phi), kept with all 2N modes (mean retained)."""
    _require_mean_zero(Phi)
    N2 = 2 * Phi.N
    big = Phi.resize(N2)
    M = 2 * (2 * N2 + 1)
    prod = grid_transform(big, M) * grid_transform(antiderivative(big), M)
    G = grid_inverse(G_COEFF * prod, N2)
    return G


def _l1_rhs_fourier(Phi: FourierField, N: int):
    P = p_matrix(Phi, N)

    def rhs(w):
        return P @ w
    return rhs


def _l1_rhs_grid(Phi: FourierField, N: int):
    G = build_G(Phi.resize(N))
    M = sfft.next_fast_len(2 * (G.N + N) + 2, real=True)
    g_grid = grid_transform(G, M)

    def rhs(w):
        spec = np.zeros(M // 2 + 1, dtype=complex)
        spec[:N + 1] = w[N:]
        prod = sfft.irfft(spec, n=M) * M * g_grid
        pos = sfft.rfft(prod)[:N + 1] / M
        pos[0] = 0
        return _full(pos)
    return rhs


def l1_generator(Phi: FourierField, a: float, N: int) -> np.ndarray:
    """Dense matrix of L1 = L + P on k = -N..N."""
    k = np.arange(-N, N + 1, dtype=float)
    return np.diag(1j * (k**3 - a * k)) + p_matrix(Phi, N)


def modified_flow(g: FourierField, T: float, wave, cfg: SolverConfig,
                  method: str = "fourier") -> Trajectory:
    """Evolve u_t = L1 u from g, sampling every cfg.monitor_every steps.

    ``method``: "fourier" steps the integrating-factor form with P applied as a
    coefficient convolution; "grid" applies P as multiplication by G on the
    grid minus the mean; "expm" uses the exact exponential of the truncated
    generator at the same sample times.
    """
    _require_mean_zero(g)
    N = cfg.N
    g = g.resize(N)
    Phi = wave.Phi.resize(N)
    a = wave.mean
    n_steps = int(round(T / cfg.dt))
    dt = T / n_steps if n_steps else cfg.dt
    k = np.arange(-N, N + 1, dtype=float)
    psi = k**3 - a * k
    if method == "expm":
        A = l1_generator(Phi, a, N)
        stride = min(cfg.monitor_every, max(n_steps, 1))
        step = scipy.linalg.expm(stride * dt * A)
        samples = [(0, g.coeffs.astype(complex))]
        w = samples[0][1]
        for n in range(stride, n_steps + 1, stride):
            w = step @ w
            samples.append((n, w))
        if samples[-1][0] != n_steps:
            samples.append((n_steps, scipy.linalg.expm(n_steps * dt * A) @ g.coeffs))
    else:
        if method == "fourier":
            rhs = _l1_rhs_fourier(Phi, N)
        elif method == "grid":
            rhs = _l1_rhs_grid(Phi, N)
        else:
            raise ValueError(f"unknown method {method!r}")
        samples = _lawson_rk4(rhs, g.coeffs.astype(complex), psi, dt, n_steps,
                              cfg.monitor_every, lambda w: np.linalg.norm(w))
    times = np.array([n * dt for n, _ in samples])
    coeffs = np.array([0.5 * (w + np.conj(w[::-1])) for _, w in samples])
    return Trajectory(times, coeffs, {"kind": "modified", "N": N, "dt": dt, "T": T,
                                      "method": method, "mean": a})


def growth_rate_bound(Phi: FourierField) -> float:
    """||G||_inf + ||G||_2, the exponential rate bounding ||e^{tL1}||_{L2->L2}."""
    G = build_G(Phi)
    M = 4 * (2 * G.N + 1)
    sup = float(np.max(np.abs(grid_transform(G, M))))
    return sup + float(np.sqrt(np.sum(np.abs(G.coeffs) ** 2)))
