"""Sine kernel and the correlation functions of the sine-2 point process.

With parameter ``rho`` the kernel is ``K(x, y) = sin(rho (x - y)) / (pi (x - y))``
and the point density is ``K(x, x) = rho / pi``.  Choosing ``rho = pi`` gives
unit density, i.e. unit mean spacing.
"""
from __future__ import annotations

from dataclasses import dataclass

import mpmath
import numpy as np
from scipy import integrate

__all__ = [
    "KernelSpec", "sine_kernel", "kernel_matrix", "correlation_m",
    "pair_correlation", "pair_correlation_small_u", "count_variance",
]

NEGATIVE_CLAMP = 1e-12
COINCIDENCE_TOL = 1e-10
# above this condition number small determinants are redone in 40 digits
EXTENDED_COND = 1e5
EXTENDED_MAX_ORDER = 8


@dataclass(frozen=True)
class KernelSpec:
    rho: float = np.pi

    def __post_init__(self):
        if not (np.isfinite(self.rho) and self.rho > 0):
            raise ValueError(f"rho must be positive and finite, got {self.rho!r}")

    @property
    def intensity(self) -> float:
        return self.rho / np.pi

    @property
    def mean_spacing(self) -> float:
        return np.pi / self.rho

    @classmethod
    def from_intensity(cls, intensity: float) -> "KernelSpec":
        return cls(rho=np.pi * intensity)


def sine_kernel(x, y, spec: KernelSpec):
    """Evaluate ``K(x, y)``; broadcasts over array arguments.

    The diagonal is the continuous limit ``rho / pi``.
    """
    d = np.subtract(x, y, dtype=float)
    # np.sinc(t) = sin(pi t) / (pi t), exact 1 at t = 0
    out = spec.intensity * np.sinc(d * (spec.rho / np.pi))
    return out if out.ndim else float(out)


def kernel_matrix(points, spec: KernelSpec) -> np.ndarray:
    p = np.asarray(points, dtype=float)
    return sine_kernel(p[:, None], p[None, :], spec)


def correlation_m(points, spec: KernelSpec, full_output: bool = False):
    """m-point correlation ``det[K(x_i, x_j)]`` for ``m = len(points)``.

    Parameters
    ----------
    points : array_like
        Positions, in any order.
    spec : KernelSpec
    full_output : bool
        Also return the degenerate-input flag.

    Returns
    -------
    value : float
        Nonnegative up to rounding; round-off in ``[-1e-12, 0)`` is clamped to 0.
        Ill-conditioned small matrices (order <= 8) are evaluated in extended
        precision, so the relative error stays near machine precision.
    degenerate : bool
        Only if ``full_output``.  True when two points are closer than 1e-10,
        in which case ``value`` is exactly 0.
    """
    # canonical order: the determinant is symmetric, and sorting makes the
    # LU rounding, hence the result, bit-identical under permutations
    p = np.sort(np.asarray(points, dtype=float).ravel())
    if p.size == 0:
        raise ValueError("correlation order must be at least 1")
    degenerate = False
    if p.size >= 2:
        gaps = np.diff(p)
        degenerate = bool(np.min(gaps) < COINCIDENCE_TOL)
    if degenerate:
        value = 0.0
    else:
        K = kernel_matrix(p, spec)
        if 1 < p.size <= EXTENDED_MAX_ORDER and np.linalg.cond(K) > EXTENDED_COND:
            value = _det_extended(p, spec.rho)
        else:
            value = float(np.linalg.det(K))
        if -NEGATIVE_CLAMP <= value < 0.0:
            value = 0.0
    return (value, degenerate) if full_output else value


def _det_extended(p, rho, dps: int = 40) -> float:
    """``det[K]`` in ``dps``-digit arithmetic from the exact float inputs.

    Near-coincident points make ``K`` ill conditioned, and any float64 method
    then loses about ``log10(cond)`` digits.
    """
    with mpmath.workdps(dps):
        x = [mpmath.mpf(float(v)) for v in p]
        r = mpmath.mpf(float(rho))
        M = mpmath.matrix(len(x), len(x))
        for i, a in enumerate(x):
            for j, b in enumerate(x):
                M[i, j] = r / mpmath.pi if i == j else mpmath.sin(r * (a - b)) / (mpmath.pi * (a - b))
        return float(mpmath.det(M))


def pair_correlation(u, spec: KernelSpec):
    """Closed form of the 2-point function at separation ``u``."""
    k = sine_kernel(u, 0.0, spec)
    return spec.intensity**2 - np.square(k)


def pair_correlation_small_u(u, spec: KernelSpec):
    """Leading small-separation term ``(rho/pi)^2 (rho u)^2 / 3``.

    A reference curve for the repulsion tests, valid for ``|rho u| < 1``.
    """
    z = spec.rho * np.asarray(u, dtype=float)
    if np.any(np.abs(z) >= 1):
        raise ValueError("pair_correlation_small_u needs |rho u| < 1")
    out = spec.intensity**2 * z**2 / 3.0
    return out if out.ndim else float(out)


def count_variance(length: float, spec: KernelSpec) -> float:
    """Variance of the number of points in an interval of the given length.

    ``Var = L rho/pi - 2 int_0^L (L - u) K(u)^2 du``.
    """
    if length <= 0:
        return 0.0
    f = lambda u: (length - u) * sine_kernel(u, 0.0, spec) ** 2
    lim = max(50, int(4 * length * spec.intensity))
    val, _ = integrate.quad(f, 0.0, length, limit=lim)
    return length * spec.intensity - 2.0 * val
