"""Independent reference computations (slow, simple, no LU) for checking the fast paths."""
import itertools
import math

import mpmath
import numpy as np
from scipy import integrate


def cofactor_det(M):
    """Determinant by Laplace expansion along the first row (no LU)."""
    M = [list(map(float, row)) for row in M]
    n = len(M)
    if n == 1:
        return M[0][0]
    if n == 2:
        return M[0][0] * M[1][1] - M[0][1] * M[1][0]
    total = 0.0
    for j in range(n):
        minor = [row[:j] + row[j + 1:] for row in M[1:]]
        total += (-1) ** j * M[0][j] * cofactor_det(minor)
    return total


def cofactor_det_mp(points, rho, dps: int = 50):
    """Sine-kernel determinant by Laplace expansion in ``dps``-digit arithmetic."""
    with mpmath.workdps(dps):
        x = [mpmath.mpf(float(v)) for v in points]
        r = mpmath.mpf(float(rho))
        M = [[r / mpmath.pi if i == j else mpmath.sin(r * (a - b)) / (mpmath.pi * (a - b))
              for j, b in enumerate(x)] for i, a in enumerate(x)]
        return _laplace(M)


def _laplace(M):
    n = len(M)
    if n == 1:
        return M[0][0]
    total = 0
    for j in range(n):
        minor = [row[:j] + row[j + 1:] for row in M[1:]]
        total += (-1) ** j * M[0][j] * _laplace(minor)
    return total


def sine_kernel_direct(x, y, rho):
    if x == y:
        return rho / np.pi
    return np.sin(rho * (x - y)) / (np.pi * (x - y))


def leibniz_det(M):
    """Determinant as a signed sum over permutations."""
    n = len(M)
    total = 0.0
    for perm in itertools.permutations(range(n)):
        inv = sum(1 for i in range(n) for j in range(i + 1, n) if perm[i] > perm[j])
        prod = 1.0
        for i in range(n):
            prod *= M[i][perm[i]]
        total += (-1) ** inv * prod
    return total


def chamber_normaliser(m, radius):
    """Integral of prod_{i<j} (x_i - x_j)^2 over the ordered chamber, by nested quadrature."""
    if m == 1:
        return 2.0 * radius
    f = lambda *x: np.prod([(x[i] - x[j]) ** 2 for i in range(m) for j in range(i + 1, m)])
    val, _ = integrate.nquad(f, [[-radius, radius]] * m)
    return val / math.factorial(m)
