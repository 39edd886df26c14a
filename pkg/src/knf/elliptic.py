"""Jacobi elliptic functions and the complete elliptic integral via the AGM.

Functions take the modulus k (not the parameter m = k^2).
"""

import numpy as np

_AGM_TOL = 1e-16
_AGM_MAXITER = 64


def _check_modulus(k):
    if not 0.0 <= k < 1.0:
        raise ValueError(f"elliptic modulus must lie in [0, 1), got {k}")


def ellipk(k: float) -> float:
    """Complete elliptic integral of the first kind K(k) = pi / (2 AGM(1, k'))."""
    _check_modulus(k)
    a, b = 1.0, np.sqrt(1.0 - k * k)
    for _ in range(_AGM_MAXITER):
        if abs(a - b) <= _AGM_TOL * a:
            break
        a, b = 0.5 * (a + b), np.sqrt(a * b)
    return np.pi / (2.0 * a)


def jacobi_sncndn(z, k: float):
    """(sn, cn, dn)(z; k) by descending AGM and backward amplitude recursion."""
    _check_modulus(k)
    z = np.asarray(z, dtype=float)
    if k == 0.0:
        return np.sin(z), np.cos(z), np.ones_like(z)
    a = [1.0]
    c = [k]
    b = np.sqrt(1.0 - k * k)
    while abs(c[-1]) > _AGM_TOL and len(a) < _AGM_MAXITER:
        a_prev = a[-1]
        c.append(0.5 * (a_prev - b))
        a.append(0.5 * (a_prev + b))
        b = np.sqrt(a_prev * b)
    n = len(a) - 1
    phi = (2.0 ** n) * a[n] * z
    for j in range(n, 0, -1):
        phi = 0.5 * (phi + np.arcsin(c[j] / a[j] * np.sin(phi)))
    sn = np.sin(phi)
    cn = np.cos(phi)
    dn = np.sqrt(1.0 - (k * sn) ** 2)
    return sn, cn, dn


def jacobi_cn(z, k: float):
    return jacobi_sncndn(z, k)[1]
