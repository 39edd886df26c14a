"""Truncated Fourier representation of real 2*pi-periodic functions.

A field stores coefficients u_k for k = -N..N so that
u(x) = sum_k u_k exp(i k x). Norms use the coefficient convention
||u||_2 = (sum_k |u_k|^2)^(1/2), i.e. the L^2 integral divided by 2*pi.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

HERMITIAN_RTOL = 1e-10


@dataclass(frozen=True, eq=False)
class FourierField:
    """Hermitian-symmetric coefficient vector indexed symmetrically -N..N."""

    coeffs: np.ndarray
    mean_zero: bool = False

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=complex)
        if c.ndim != 1 or c.size % 2 != 1 or c.size < 3:
            raise ValueError("coeffs must be a 1-d array of odd length 2N+1 with N >= 1")
        scale = max(float(np.max(np.abs(c))), 1.0)
        if np.max(np.abs(c - np.conj(c[::-1]))) > HERMITIAN_RTOL * scale:
            raise ValueError("coefficients are not Hermitian-symmetric (field is not real)")
        if self.mean_zero and c[c.size // 2] != 0:
            raise ValueError("field flagged mean-zero has a nonzero k=0 coefficient")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @property
    def N(self) -> int:
        return self.coeffs.size // 2

    @property
    def modes(self) -> np.ndarray:
        return np.arange(-self.N, self.N + 1)

    def __getitem__(self, k: int) -> complex:
        if abs(k) > self.N:
            return 0j
        return self.coeffs[k + self.N]

    @property
    def mean(self) -> float:
        return float(self.coeffs[self.N].real)

    @classmethod
    def zeros(cls, N: int, mean_zero: bool = True) -> "FourierField":
        return cls(np.zeros(2 * N + 1, dtype=complex), mean_zero)

    @classmethod
    def from_modes(cls, N: int, values: dict, mean_zero: bool | None = None) -> "FourierField":
        """Build from {k: u_k} for k >= 0; negative modes are filled by symmetry."""
        c = np.zeros(2 * N + 1, dtype=complex)
        for k, val in values.items():
            if k < 0 or k > N:
                raise ValueError(f"mode {k} outside 0..{N}")
            c[N + k] = val
            c[N - k] = np.conj(val)
        if 0 in values:
            c[N] = complex(values[0]).real
        if mean_zero is None:
            mean_zero = c[N] == 0
        return cls(c, mean_zero)

    @classmethod
    def from_positive(cls, pos: np.ndarray, mean_zero: bool | None = None) -> "FourierField":
        """Build from the k = 0..N half (rfft layout)."""
        pos = np.asarray(pos, dtype=complex)
        c = np.concatenate([np.conj(pos[:0:-1]), [pos[0].real], pos[1:]])
        if mean_zero is None:
            mean_zero = c[pos.size - 1] == 0
        return cls(c, mean_zero)

    @property
    def positive(self) -> np.ndarray:
        return self.coeffs[self.N:].copy()

    def with_coeffs(self, coeffs: np.ndarray) -> "FourierField":
        return FourierField(coeffs, self.mean_zero)

    def resize(self, N: int) -> "FourierField":
        """Zero-pad or truncate to a new truncation level."""
        c = np.zeros(2 * N + 1, dtype=complex)
        m = min(N, self.N)
        c[N - m:N + m + 1] = self.coeffs[self.N - m:self.N + m + 1]
        return FourierField(c, self.mean_zero)

    def mean_free(self) -> "FourierField":
        c = self.coeffs.copy()
        c[self.N] = 0
        return FourierField(c, True)

    def __add__(self, other: "FourierField") -> "FourierField":
        _check_same_n(self, other)
        return FourierField(self.coeffs + other.coeffs, self.mean_zero and other.mean_zero)

    def __sub__(self, other: "FourierField") -> "FourierField":
        _check_same_n(self, other)
        return FourierField(self.coeffs - other.coeffs, self.mean_zero and other.mean_zero)

    def __mul__(self, scalar: float) -> "FourierField":
        return FourierField(self.coeffs * float(scalar), self.mean_zero)

    __rmul__ = __mul__

    def is_hermitian(self, rtol: float = HERMITIAN_RTOL) -> bool:
        c = self.coeffs
        scale = max(float(np.max(np.abs(c))), 1.0)
        return bool(np.max(np.abs(c - np.conj(c[::-1]))) <= rtol * scale)

    def to_json(self) -> dict:
        rows = [[k, float(self[k].real), float(self[k].imag)] for k in range(self.N + 1)]
        return {"N": self.N, "mean_zero": self.mean_zero, "coeffs": rows}

    @classmethod
    def from_json(cls, data: dict | str) -> "FourierField":
        if isinstance(data, str):
            data = json.loads(data)
        N = int(data["N"])
        pos = np.zeros(N + 1, dtype=complex)
        for k, re, im in data["coeffs"]:
            pos[int(k)] = complex(re, im)
        return cls.from_positive(pos, bool(data["mean_zero"]))


def _check_same_n(u: FourierField, w: FourierField) -> None:
    if u.N != w.N:
        raise ValueError(f"truncation mismatch: N={u.N} vs N={w.N}")


def l2_norm(u: FourierField) -> float:
    return float(np.sqrt(np.sum(np.abs(u.coeffs) ** 2)))


def sobolev_norm(u: FourierField, s: float, variant: str = "inhomogeneous") -> float:
    """Negative-order norm ||u_k w_k||_2 with w_k = (1+k^2)^(-s/2) or |k|^(-s)."""
    k = u.modes.astype(float)
    if variant == "inhomogeneous":
        weight = (1.0 + k**2) ** (-s / 2)
        return float(np.sqrt(np.sum(np.abs(u.coeffs * weight) ** 2)))
    if variant == "homogeneous":
        if not u.mean_zero and u[0] != 0:
            raise ValueError("homogeneous norm requires a mean-zero field")
        nz = k != 0
        return float(np.sqrt(np.sum(np.abs(u.coeffs[nz] * np.abs(k[nz]) ** (-s)) ** 2)))
    raise ValueError(f"unknown variant {variant!r}")


def convolve(u: FourierField, w: FourierField) -> FourierField:
    """Truncated product: (uw)_k = sum_{m+n=k} u_n w_m for |k| <= N, higher modes dropped."""
    _check_same_n(u, w)
    N = u.N
    full = np.convolve(u.coeffs, w.coeffs)
    return FourierField(full[N:3 * N + 1], False)


def derivative(u: FourierField) -> FourierField:
    return FourierField(1j * u.modes * u.coeffs, True)


def antiderivative(u: FourierField) -> FourierField:
    """Mean-zero antiderivative: u_k / (ik) for k != 0, zero mean."""
    if u[0] != 0:
        raise ValueError("antiderivative requires a mean-zero input")
    k = u.modes
    out = np.zeros_like(u.coeffs)
    nz = k != 0
    out[nz] = u.coeffs[nz] / (1j * k[nz])
    return FourierField(out, True)


def grid_transform(u: FourierField, M: int) -> np.ndarray:
    """Samples u(x_j) at x_j = 2*pi*j/M."""
    if M < 2 * u.N + 2:
        raise ValueError(f"grid size M={M} too small for N={u.N} (need M >= 2N+2)")
    spec = np.zeros(M // 2 + 1, dtype=complex)
    spec[:u.N + 1] = u.coeffs[u.N:]
    return np.fft.irfft(spec, n=M) * M


def grid_inverse(samples: np.ndarray, N: int, mean_zero: bool | None = None) -> FourierField:
    """Coefficients for |k| <= N from real samples on a uniform grid."""
    samples = np.asarray(samples, dtype=float)
    M = samples.size
    if M < 2 * N + 2:
        raise ValueError(f"grid size M={M} too small for N={N} (need M >= 2N+2)")
    pos = np.fft.rfft(samples)[:N + 1] / M
    if mean_zero:
        pos[0] = 0
    return FourierField.from_positive(pos, mean_zero)


def grid_points(M: int) -> np.ndarray:
    return 2 * np.pi * np.arange(M) / M


def padded_product(u: FourierField, w: FourierField) -> FourierField:
    """Pointwise product on a zero-padded grid, projected back to |k| <= N."""
    _check_same_n(u, w)
    M = 2 * (2 * u.N + 1)
    return grid_inverse(grid_transform(u, M) * grid_transform(w, M), u.N)
