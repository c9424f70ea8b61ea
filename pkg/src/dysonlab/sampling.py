"""Samplers for the sine-2 point process and for control processes.

Two independent routes produce sine-2 configurations on a window:

* :func:`sample_gue_bulk` -- the bulk of a GUE spectrum drawn from the
  tridiagonal (Dumitriu--Edelman) model at ``beta = 2`` and rescaled so the
  density at the spectral centre equals the kernel intensity;
* :func:`sample_dpp_window` -- the sine kernel restricted to the window,
  discretised by Gauss--Legendre quadrature and sampled with the spectral
  (Hough--Krishnapur--Peres--Virag) algorithm, using Nystrom-extended
  eigenfunctions so that points are continuous.

:func:`sample_poisson` is the uncorrelated control and
:func:`sample_vandermonde_chamber` draws from the density proportional to
``prod_{i<j} |x_i - x_j|^2`` on the ordered chamber of ``[-R, R]^m``.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import linalg, special

from .errors import (EigensolverFailure, InsufficientBulk, MeshTooCoarse,
                     NumericalBreakdown, OverflowGuard)
from .kernel import KernelSpec, sine_kernel
from .rng import SamplerSeed, as_generator

__all__ = [
    "PointConfiguration", "gue_tridiagonal_eigenvalues", "semicircle_cdf",
    "sample_gue_bulk", "SineWindowDPP", "sample_dpp_window", "sample_poisson",
    "sample_ensemble", "sample_vandermonde_chamber", "vandermonde_weight",
    "write_jsonl", "read_jsonl",
]

EIG_TOL = 1e-6
POINTS_PER_SPACING = 16


@dataclass(frozen=True, eq=False)
class PointConfiguration:
    """Finite configuration on a closed window, labelled by increasing position."""

    points: np.ndarray
    window: tuple = field(default=(0.0, 0.0))

    def __post_init__(self):
        pts = np.ascontiguousarray(self.points, dtype=float).ravel()
        a, b = (float(v) for v in self.window)
        if not a <= b:
            raise ValueError(f"window must satisfy a <= b, got {self.window}")
        if pts.size:
            if np.any(np.diff(pts) <= 0):
                raise ValueError("points must be strictly increasing")
            if pts[0] < a or pts[-1] > b:
                raise ValueError("points must lie inside the window")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "window", (a, b))

    def __len__(self):
        return self.points.size

    def __eq__(self, other):
        if not isinstance(other, PointConfiguration):
            return NotImplemented
        return self.window == other.window and np.array_equal(self.points, other.points)

    @property
    def length(self) -> float:
        return self.window[1] - self.window[0]

    def count(self, lo: float, hi: float) -> int:
        """Number of points in the closed interval ``[lo, hi]``."""
        return int(np.searchsorted(self.points, hi, "right") - np.searchsorted(self.points, lo, "left"))

    def restrict(self, lo: float, hi: float) -> "PointConfiguration":
        i, j = np.searchsorted(self.points, lo, "left"), np.searchsorted(self.points, hi, "right")
        return PointConfiguration(self.points[i:j], (lo, hi))

    def to_json(self) -> str:
        return json.dumps({"window": list(self.window), "points": self.points.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "PointConfiguration":
        d = json.loads(text)
        return cls(np.array(d["points"], dtype=float), tuple(d["window"]))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x"])
            for x in self.points:
                w.writerow([repr(float(x))])

    @classmethod
    def from_csv(cls, path, window) -> "PointConfiguration":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        vals = [float(r[0]) for r in rows[1:] if r]
        return cls(np.array(vals), tuple(window))


def write_jsonl(configs, path):
    with open(path, "w") as fh:
        for c in configs:
            fh.write(c.to_json() + "\n")


def read_jsonl(path) -> list:
    with open(path) as fh:
        return [PointConfiguration.from_json(line) for line in fh if line.strip()]


# ---------------------------------------------------------------- GUE bulk

def gue_tridiagonal_eigenvalues(n: int, seed, select_range=None) -> np.ndarray:
    """Eigenvalues of an ``n x n`` GUE matrix via the tridiagonal model.

    Diagonal entries are standard Gaussians and the ``k``-th off-diagonal
    entry is ``chi_{2(n-k)} / sqrt(2)``, so the spectrum follows the
    semicircle on ``[-2 sqrt(n), 2 sqrt(n)]``.  ``select_range=(lo, hi)``
    returns only eigenvalues in ``(lo, hi]`` (bisection).
    """
    if n < 1:
        raise ValueError("n must be positive")
    rng = as_generator(seed)
    d = rng.standard_normal(n)
    if n == 1:
        vals = d.copy()
        if select_range is not None:
            lo, hi = select_range
            vals = vals[(vals > lo) & (vals <= hi)]
        return vals
    # chi^2_{2k} / 2 ~ Gamma(k, 1)
    e = np.sqrt(rng.standard_gamma(np.arange(n - 1, 0, -1, dtype=float)))
    narrow = False
    if select_range is not None:
        lo, hi = select_range
        narrow = n * (semicircle_cdf(hi, n) - semicircle_cdf(lo, n)) < 0.05 * n
    try:
        if narrow:
            vals = linalg.eigvalsh_tridiagonal(d, e, select="v", select_range=select_range,
                                               check_finite=False)
        else:
            # bisection only pays off for a small slice of the spectrum
            vals = linalg.eigvalsh_tridiagonal(d, e, check_finite=False, lapack_driver="sterf")
    except linalg.LinAlgError as exc:
        raise EigensolverFailure(str(exc)) from exc
    vals = np.sort(vals)
    if select_range is not None and not narrow:
        vals = vals[(vals > lo) & (vals <= hi)]
    return vals


def semicircle_cdf(x, n: int):
    """CDF of the semicircle law on ``[-2 sqrt(n), 2 sqrt(n)]``."""
    t = np.clip(np.asarray(x, dtype=float) / (2.0 * np.sqrt(n)), -1.0, 1.0)
    return 0.5 + (t * np.sqrt(1.0 - t * t) + np.arcsin(t)) / np.pi


def gue_bulk_scale(n: int, spec: KernelSpec) -> float:
    """Factor mapping raw eigenvalues to positions of density ``spec.intensity`` at 0."""
    # semicircle density at the centre is sqrt(n) / pi
    return np.sqrt(n) / (np.pi * spec.intensity)


def sample_gue_bulk(n: int, window, spec: KernelSpec, seed) -> PointConfiguration:
    """Sine-2 approximation from the centre of an ``n``-point GUE spectrum.

    The window must sit inside the central quarter of the rescaled spectrum,
    ``|y| <= n / (2 pi rho/pi)``.
    """
    a, b = (float(v) for v in window)
    if n < 8:
        raise InsufficientBulk(f"need n >= 8 for bulk extraction, got {n}")
    c = gue_bulk_scale(n, spec)
    quarter = n / (2.0 * np.pi * spec.intensity)
    if a < -quarter or b > quarter:
        raise InsufficientBulk(
            f"window {window} leaves the central quarter [-{quarter:.4g}, {quarter:.4g}] for n={n}")
    expected = n * (semicircle_cdf(b / c, n) - semicircle_cdf(a / c, n))
    if expected < 1.0:
        raise InsufficientBulk(f"only {expected:.3g} points expected in {window} for n={n}")
    vals = gue_tridiagonal_eigenvalues(n, seed, select_range=(a / c, b / c)) * c
    vals = vals[(vals >= a) & (vals <= b)]
    return PointConfiguration(np.unique(vals), (a, b))


# ----------------------------------------------------------- windowed DPP

class SineWindowDPP:
    """Sine kernel restricted to a window, discretised once and sampled many times.

    Parameters
    ----------
    spec : KernelSpec
    window : (float, float)
    mesh : int, optional
        Number of Gauss--Legendre nodes; defaults to 16 per mean spacing.
    """

    def __init__(self, spec: KernelSpec, window, mesh: int | None = None):
        a, b = (float(v) for v in window)
        if b < a:
            raise ValueError("window must satisfy a <= b")
        self.spec = spec
        self.window = (a, b)
        length = b - a
        if mesh is None:
            mesh = max(16, int(np.ceil(POINTS_PER_SPACING * length * spec.intensity)))
        self.mesh = int(mesh)
        if length == 0:
            self.eigenvalues = np.zeros(0)
            return
        t, w = special.roots_legendre(self.mesh)
        self.nodes = a + 0.5 * length * (t + 1.0)
        self.weights = 0.5 * length * w
        sw = np.sqrt(self.weights)
        A = sw[:, None] * sine_kernel(self.nodes[:, None], self.nodes[None, :], spec) * sw[None, :]
        lam, U = linalg.eigh(A)
        if lam[-1] > 1.0 + EIG_TOL or lam[0] < -EIG_TOL:
            raise MeshTooCoarse(
                f"discretised kernel eigenvalues span [{lam[0]:.3g}, {lam[-1]:.3g}]; increase mesh")
        lam = np.clip(lam, 0.0, 1.0)
        keep = lam > 1e-12
        self.eigenvalues = lam[keep]
        # phi_k(x) = K(x, nodes) @ coef[:, k]; orthonormal in L^2(window)
        self.coef = (sw[:, None] * U[:, keep]) / self.eigenvalues[None, :]
        n_grid = max(64, int(np.ceil(4 * self.mesh)))
        self._grid_phi = self.eigenfunctions(np.linspace(a, b, n_grid))

    def eigenfunctions(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return sine_kernel(x[:, None], self.nodes[None, :], self.spec) @ self.coef

    @property
    def expected_count(self) -> float:
        return float(np.sum(self.eigenvalues))

    @property
    def count_variance(self) -> float:
        lam = self.eigenvalues
        return float(np.sum(lam * (1.0 - lam)))

    def sample(self, seed, batch: int = 32) -> PointConfiguration:
        rng = as_generator(seed)
        a, b = self.window
        if b == a:
            return PointConfiguration(np.zeros(0), self.window)
        sel = rng.random(self.eigenvalues.size) < self.eigenvalues
        k = int(sel.sum())
        if k == 0:
            return PointConfiguration(np.zeros(0), self.window)
        coef = self.coef[:, sel]
        bound = 1.1 * float(np.max(np.sum(self._grid_phi[:, sel] ** 2, axis=1)))
        basis = np.zeros((k, k))
        pts = np.empty(k)
        for i in range(k):
            E = basis[:, :i]
            while True:
                x = a + (b - a) * rng.random(batch)
                u = rng.random(batch)
                V = sine_kernel(x[:, None], self.nodes[None, :], self.spec) @ coef
                q = np.sum(V * V, axis=1) - np.sum((V @ E) ** 2, axis=1)
                if np.any(q < -1e-8 * bound):
                    raise NumericalBreakdown("conditional density went negative")
                if np.any(q > bound):
                    raise NumericalBreakdown("rejection envelope violated; increase mesh")
                hit = np.flatnonzero(u * bound < q)
                if hit.size:
                    j = hit[0]
                    break
            v = V[j] - E @ (E.T @ V[j])
            v -= E @ (E.T @ v)
            basis[:, i] = v / np.linalg.norm(v)
            pts[i] = x[j]
        return PointConfiguration(np.sort(pts), self.window)


@lru_cache(maxsize=16)
def _cached_dpp(rho, a, b, mesh):
    return SineWindowDPP(KernelSpec(rho), (a, b), mesh)


def sample_dpp_window(spec: KernelSpec, window, mesh: int | None = None, seed=0) -> PointConfiguration:
    """One exact (up to quadrature) sine-2 sample on ``window``."""
    a, b = (float(v) for v in window)
    return _cached_dpp(spec.rho, a, b, mesh).sample(seed)


# ---------------------------------------------------------------- Poisson

def sample_poisson(intensity: float, window, seed) -> PointConfiguration:
    a, b = (float(v) for v in window)
    if intensity < 0:
        raise ValueError("intensity must be nonnegative")
    mean = intensity * (b - a)
    if mean >= 1e9:
        raise OverflowGuard(f"expected count {mean:.3g} exceeds 1e9")
    rng = as_generator(seed)
    n = rng.poisson(mean)
    pts = np.sort(a + (b - a) * rng.random(n))
    return PointConfiguration(np.unique(pts), (a, b))


def sample_ensemble(kind: str, n_replicas: int, window, seed: SamplerSeed, spec: KernelSpec | None = None,
                    n: int = 512, mesh: int | None = None, intensity: float | None = None) -> list:
    """``n_replicas`` independent configurations, replica ``k`` seeded by ``seed.replica(k)``.

    ``kind`` is one of ``"dpp"``, ``"gue"``, ``"poisson"``.
    """
    spec = spec or KernelSpec()
    seeds = [seed.replica(k) for k in range(n_replicas)]
    if kind == "dpp":
        a, b = (float(v) for v in window)
        sampler = _cached_dpp(spec.rho, a, b, mesh)
        return [sampler.sample(s) for s in seeds]
    if kind == "gue":
        return [sample_gue_bulk(n, window, spec, s) for s in seeds]
    if kind == "poisson":
        lam = spec.intensity if intensity is None else intensity
        return [sample_poisson(lam, window, s) for s in seeds]
    raise ValueError(f"unknown sampler kind {kind!r}")


# ----------------------------------------------- Vandermonde chamber oracle

def vandermonde_weight(x) -> np.ndarray:
    """``prod_{i<j} |x_i - x_j|^2`` along the last axis (1 for a single particle)."""
    x = np.asarray(x, dtype=float)
    m = x.shape[-1]
    out = np.ones(x.shape[:-1])
    for i in range(m):
        for j in range(i + 1, m):
            out = out * (x[..., i] - x[..., j]) ** 2
    return out


def _max_vandermonde(m: int, radius: float) -> float:
    if m == 1:
        return 1.0
    # maximiser: Fekete points on [-1, 1], i.e. +-1 and the roots of P'_{m-1}
    inner = np.polynomial.legendre.Legendre.basis(m - 1).deriv().roots() if m > 2 else np.zeros(0)
    pts = np.concatenate([[-1.0], np.real(inner), [1.0]]) * radius
    return float(vandermonde_weight(pts))


def sample_vandermonde_chamber(m: int, radius: float, n_samples: int, seed) -> np.ndarray:
    """Rejection sampler of the normalised density ``Delta_m(x) dx`` on the chamber.

    Returns an ``(n_samples, m)`` array of ordered rows in ``[-radius, radius]``.
    """
    rng = as_generator(seed)
    bound = _max_vandermonde(m, radius) * (1 + 1e-9)
    out = np.empty((0, m))
    while out.shape[0] < n_samples:
        need = n_samples - out.shape[0]
        x = np.sort(rng.uniform(-radius, radius, size=(max(4 * need, 256), m)), axis=1)
        acc = rng.random(x.shape[0]) * bound < vandermonde_weight(x)
        out = np.vstack([out, x[acc]])
    return out[:n_samples]
