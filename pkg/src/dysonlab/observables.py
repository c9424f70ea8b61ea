"""Estimators turning configurations and trajectories into checkable statistics.

Every estimator returns an :class:`EstimateWithCI`.  Standard errors are iid
across replicas unless stated otherwise; time averages along a single
trajectory use batch means.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .dynamics import DriftSpec, TrajectoryRecord
from .errors import (CutoffTooSmall, InsufficientMixing, TooManyEscapes,
                     WindowMismatch)
from .sampling import PointConfiguration

__all__ = [
    "EstimateWithCI", "ObservableSpec", "ProductTestFunction", "smooth_step", "bump",
    "taper", "estimate_one_point", "estimate_two_point", "counting_variance_curve",
    "counting_variance_increments", "rigidity_statistic", "tagged_msd", "ibp_residual",
    "time_average", "ergodicity_gap", "autocorrelation", "batch_means", "chamber_cells",
    "cells_visited",
]


@dataclass
class EstimateWithCI:
    """Scalar or curve estimate with standard errors.

    For curves ``abscissa`` holds the grid and ``value``/``stderr`` are arrays.
    """

    value: float | np.ndarray
    stderr: float | np.ndarray
    n_samples: int
    method: str = "iid"
    abscissa: np.ndarray | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.method not in ("iid", "batch-means"):
            raise ValueError(f"unknown method {self.method!r}")
        if not np.all(np.isfinite(self.stderr)):
            raise ValueError("stderr must be finite")
        if self.n_samples < 2 and np.any(np.asarray(self.stderr) != 0):
            raise ValueError("a standard error needs at least two samples")

    @property
    def is_curve(self):
        return self.abscissa is not None

    def within(self, target, k: float = 3.0):
        """Whether ``|value - target| <= k * stderr`` (elementwise for curves)."""
        return np.abs(np.asarray(self.value) - np.asarray(target)) <= k * np.asarray(self.stderr)

    def to_rows(self):
        if self.is_curve:
            return [(float(a), float(v), float(s), int(self.n_samples))
                    for a, v, s in zip(self.abscissa, self.value, self.stderr)]
        return [(math.nan, float(self.value), float(self.stderr), int(self.n_samples))]

    def to_csv(self, provenance: dict | None = None) -> str:
        buf = io.StringIO()
        if provenance:
            buf.write("# " + json.dumps(provenance, sort_keys=True) + "\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["abscissa", "value", "stderr", "n"])
        for a, v, s, n in self.to_rows():
            w.writerow([repr(a), repr(v), repr(s), n])
        return buf.getvalue()

    def to_json(self, provenance: dict | None = None) -> str:
        d = {"value": _tolist(self.value), "stderr": _tolist(self.stderr),
             "n_samples": int(self.n_samples), "method": self.method,
             "abscissa": _tolist(self.abscissa), "extra": _tolist(self.extra)}
        if provenance:
            d["provenance"] = provenance
        return json.dumps(d, sort_keys=True)


def _tolist(v):
    if isinstance(v, dict):
        return {k: _tolist(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_tolist(x) for x in v]
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, np.generic):
        return v.item()
    return v


def config_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:16]


# --------------------------------------------------------- test functions

def smooth_step(t):
    """C-infinity step: 0 for ``t <= 0``, 1 for ``t >= 1``."""
    t = np.asarray(t, dtype=float)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        f0 = np.where(t > 0, np.exp(-1.0 / np.where(t > 0, t, 1.0)), 0.0)
        f1 = np.where(t < 1, np.exp(-1.0 / np.where(t < 1, 1.0 - t, 1.0)), 0.0)
    return f0 / (f0 + f1)


def bump(x, center: float = 0.0, halfwidth: float = 1.0):
    """Standard bump ``exp(-1/(1-r^2))`` scaled to peak 1, supported on ``|x-center| < halfwidth``."""
    r = (np.asarray(x, dtype=float) - center) / halfwidth
    inside = np.abs(r) < 1
    rr = np.where(inside, r, 0.0)
    return np.where(inside, np.exp(1.0 - 1.0 / (1.0 - rr * rr)), 0.0)


def bump_prime(x, center: float = 0.0, halfwidth: float = 1.0):
    r = (np.asarray(x, dtype=float) - center) / halfwidth
    inside = np.abs(r) < 1
    rr = np.where(inside, r, 0.0)
    val = np.exp(1.0 - 1.0 / (1.0 - rr * rr))
    return np.where(inside, val * (-2.0 * rr / (1.0 - rr * rr) ** 2) / halfwidth, 0.0)


def taper(x, interior, width: float):
    """1 on ``interior``, smoothly decaying to 0 at distance ``width`` outside it."""
    lo, hi = interior
    x = np.asarray(x, dtype=float)
    dist = np.maximum(lo - x, x - hi)
    if width <= 0:
        return (dist <= 0).astype(float)
    return 1.0 - smooth_step(dist / width)


@dataclass(frozen=True)
class ObservableSpec:
    """Local bounded observable of a configuration.

    kinds
        ``count-in-window``     number of points in ``[a, b]``;
        ``linear-statistic``    sum of a bump of ``halfwidth`` at ``center``;
        ``indicator-of-gap``    1 when ``[a, b]`` is empty;
        ``polynomial-local``    sum of ``x**power`` over points in ``[a, b]``;
        ``constant``            the constant ``c``.
    """

    kind: str
    a: float = -1.0
    b: float = 1.0
    center: float = 0.0
    halfwidth: float = 1.0
    power: int = 1
    c: float = 0.0

    KINDS = ("count-in-window", "linear-statistic", "indicator-of-gap", "polynomial-local", "constant")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown observable kind {self.kind!r}")
        if self.b < self.a:
            raise ValueError("observable window must satisfy a <= b")

    @property
    def support(self):
        if self.kind == "linear-statistic":
            return (self.center - self.halfwidth, self.center + self.halfwidth)
        return (self.a, self.b)

    def __call__(self, points) -> float:
        x = points.points if isinstance(points, PointConfiguration) else np.asarray(points, dtype=float)
        if self.kind == "constant":
            return float(self.c)
        if self.kind == "linear-statistic":
            return float(np.sum(bump(x, self.center, self.halfwidth)))
        inside = (x >= self.a) & (x <= self.b)
        if self.kind == "count-in-window":
            return float(np.count_nonzero(inside))
        if self.kind == "indicator-of-gap":
            return float(not np.any(inside))
        return float(np.sum(x[inside] ** self.power))

    def to_dict(self):
        return {k: getattr(self, k) for k in ("kind", "a", "b", "center", "halfwidth", "power", "c")}


@dataclass(frozen=True)
class ProductTestFunction:
    """Test function ``phi(s, config) = a(s) b(config)`` for the integration-by-parts check.

    ``a`` is smooth with compact support in ``a_support``; ``b`` is bounded and
    local.  ``b`` receives the configuration with the point ``s`` removed.
    """

    a: Callable
    a_prime: Callable
    a_support: tuple
    b: Callable = staticmethod(lambda pts: 1.0)
    b_support: tuple | None = None


# -------------------------------------------------------------- helpers

def _common_window(configs):
    if len(configs) == 0:
        raise ValueError("no configurations")
    w = configs[0].window
    for c in configs:
        if c.window != w:
            raise WindowMismatch(f"window {c.window} differs from {w}")
    return w


def _mean_se(samples, axis=0):
    samples = np.asarray(samples, dtype=float)
    n = samples.shape[axis]
    mean = _exact_mean(samples, axis)
    se = samples.std(axis=axis, ddof=1) / np.sqrt(n) if n > 1 else np.zeros_like(mean)
    return mean, se


def _exact_mean(samples, axis=0):
    """Mean that returns the common value exactly when all samples agree."""
    mean = samples.mean(axis=axis)
    first = np.take(samples, 0, axis=axis)
    same = np.all(samples == np.expand_dims(first, axis), axis=axis)
    return np.where(same, first, mean) if np.ndim(mean) else (float(first) if same else float(mean))


def _counts(configs, lo, hi):
    return np.array([c.count(lo, hi) for c in configs], dtype=float)


# ------------------------------------------------------- static estimators

def estimate_one_point(configs, bins: int) -> EstimateWithCI:
    """Histogram estimate of the intensity on the common window."""
    a, b = _common_window(configs)
    edges = np.linspace(a, b, bins + 1)
    width = (b - a) / bins
    h = np.array([np.histogram(c.points, edges)[0] for c in configs], dtype=float) / width
    mean, se = _mean_se(h)
    return EstimateWithCI(mean, se, len(configs), abscissa=0.5 * (edges[1:] + edges[:-1]),
                          extra={"edges": edges})


def estimate_two_point(configs, separations) -> EstimateWithCI:
    """Pair-counting estimate of the 2-point function on a uniform separation grid.

    Each grid value ``u`` is the centre of a bin of the grid spacing.  Pairs
    are counted from points in the inner window (the common window shrunk by
    the largest bin edge) to any point at distance within the bin, on either
    side, so no boundary correction is needed.
    """
    u = np.asarray(separations, dtype=float)
    if u.size < 2:
        raise ValueError("need at least two separations")
    h = float(np.diff(u).mean())
    if not np.allclose(np.diff(u), h):
        raise ValueError("separation grid must be uniform")
    edges = np.concatenate([u - h / 2, [u[-1] + h / 2]])
    if edges[0] < 0:
        raise ValueError("separation bins must be nonnegative")
    a, b = _common_window(configs)
    umax = edges[-1]
    lo, hi = a + umax, b - umax
    if hi <= lo:
        raise ValueError("window too short for the separation grid")
    inner = hi - lo
    per = np.empty((len(configs), u.size))
    for r, c in enumerate(configs):
        x = c.points
        centres = x[(x >= lo) & (x <= hi)]
        if centres.size == 0:
            per[r] = 0.0
            continue
        right = np.searchsorted(x, centres[:, None] + edges[None, :], "left")
        left = np.searchsorted(x, centres[:, None] - edges[None, :], "right")
        cnt = np.diff(right, axis=1) - np.diff(left, axis=1)
        if edges[0] == 0:
            # the centre itself sits at separation 0
            cnt[:, 0] -= 2
        per[r] = cnt.sum(axis=0)
    per /= 2.0 * h * inner
    mean, se = _mean_se(per)
    return EstimateWithCI(mean, se, len(configs), abscissa=u, extra={"edges": edges})


def _variance_influence(counts):
    n = counts.size
    m = counts.mean()
    psi = (counts - m) ** 2
    return psi.mean() * n / (n - 1), psi


def counting_variance_curve(configs, radii, center: float = 0.0) -> EstimateWithCI:
    """``Var(#points in [center-R, center+R])`` for each radius ``R``.

    Standard errors come from the influence function of the sample variance.
    """
    a, b = _common_window(configs)
    radii = np.asarray(radii, dtype=float)
    if np.any(center - radii < a) or np.any(center + radii > b):
        raise ValueError("radii must stay inside the common window")
    n = len(configs)
    vals, ses, means = [], [], []
    for R in radii:
        c = _counts(configs, center - R, center + R)
        v, psi = _variance_influence(c)
        vals.append(v)
        ses.append(psi.std(ddof=1) / np.sqrt(n))
        means.append(c.mean())
    return EstimateWithCI(np.array(vals), np.array(ses), n, abscissa=radii,
                          extra={"mean_count": np.array(means)})


def counting_variance_increments(configs, radii, center: float = 0.0) -> EstimateWithCI:
    """``Var(N(2R)) - Var(N(R))`` for each radius, with paired standard errors."""
    _common_window(configs)
    radii = np.asarray(radii, dtype=float)
    n = len(configs)
    vals, ses = [], []
    for R in radii:
        v1, p1 = _variance_influence(_counts(configs, center - R, center + R))
        v2, p2 = _variance_influence(_counts(configs, center - 2 * R, center + 2 * R))
        vals.append(v2 - v1)
        ses.append((p2 - p1).std(ddof=1) / np.sqrt(n))
    return EstimateWithCI(np.array(vals), np.array(ses), n, abscissa=radii)


def rigidity_statistic(configs, interior, taper_widths) -> EstimateWithCI:
    """Unexplained variance of the interior count after regressing on the exterior.

    For each taper width ``w`` the interior count is regressed (with
    intercept) on ``sum_{x outside interior} f_w(x)``, where ``f_w`` is 1 on
    the interior and vanishes smoothly at distance ``w``.  ``extra`` holds
    the raw count variance and the ratio.
    """
    a, b = _common_window(configs)
    lo, hi = (float(v) for v in interior)
    widths = np.asarray(taper_widths, dtype=float)
    if not a < lo <= hi < b:
        raise ValueError("interior must lie strictly inside the common window")
    n = len(configs)
    N = _counts(configs, lo, hi)
    raw = N.var(ddof=1) if n > 1 else 0.0
    vals, ses = [], []
    for w in widths:
        S = np.array([np.sum(taper(np.concatenate([c.points[c.points < lo], c.points[c.points > hi]]),
                                   (lo, hi), w)) for c in configs])
        if np.ptp(S) == 0 or np.ptp(N) == 0:
            resid = N - N.mean()
        else:
            A = np.column_stack([np.ones(n), S])
            coef, *_ = np.linalg.lstsq(A, N, rcond=None)
            resid = N - A @ coef
        r2 = resid**2
        dof = max(n - (2 if np.ptp(S) else 1), 1)
        vals.append(r2.sum() / dof)
        ses.append(r2.std(ddof=1) / np.sqrt(n) if n > 1 else 0.0)
    vals = np.array(vals)
    return EstimateWithCI(vals, np.array(ses), n, abscissa=widths,
                          extra={"raw_variance": raw,
                                 "ratio": vals / raw if raw > 0 else np.zeros_like(vals)})


# ---------------------------------------------------------- trajectories

def tagged_msd(trajectories, tag: int, times, max_escape_fraction: float = 0.2) -> EstimateWithCI:
    """Mean squared displacement of particle ``tag`` on a time grid.

    Escaped trajectories are excluded and counted.  ``extra`` carries the
    least-squares slope of MSD against ``log t`` over the final decade of the
    grid, its standard error and the fit's R^2.
    """
    times = np.asarray(times, dtype=float)
    kept = [t for t in trajectories if not t.escaped]
    n_esc = len(trajectories) - len(kept)
    if len(trajectories) and n_esc > max_escape_fraction * len(trajectories):
        raise TooManyEscapes(f"{n_esc} of {len(trajectories)} trajectories escaped")
    disp = np.empty((len(kept), times.size))
    for r, tr in enumerate(kept):
        ts = np.asarray(tr.times)
        t0 = ts[0]
        idx = np.searchsorted(ts, t0 + times - 1e-9 * np.maximum(1.0, np.abs(times)))
        if np.any(idx >= ts.size) or not np.allclose(ts[idx] - t0, times, rtol=1e-9, atol=1e-12):
            raise ValueError("requested times are not snapshot times")
        x = np.asarray(tr.positions)[:, tag]
        disp[r] = (x[idx] - x[0]) ** 2
    mean, se = _mean_se(disp)
    extra = {"n_escaped": n_esc}
    pos = times > 0
    if np.count_nonzero(pos) >= 3:
        tmax = times[pos].max()
        sel = pos & (times >= tmax / 10 * (1 - 1e-9))
        if np.count_nonzero(sel) >= 3:
            extra.update(_log_fit(times[sel], mean[sel], disp[:, sel]))
    return EstimateWithCI(mean, se, len(kept), abscissa=times, extra=extra)


def _log_fit(t, y, per_traj):
    L = np.log(t)
    A = np.column_stack([np.ones_like(L), L])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    pred = A @ coef
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    # slope error from the spread of per-trajectory slopes
    slopes = np.linalg.lstsq(A, per_traj.T, rcond=None)[0][1]
    return {"slope": float(coef[1]), "intercept": float(coef[0]),
            "slope_stderr": float(slopes.std(ddof=1) / np.sqrt(slopes.size)) if slopes.size > 1 else 0.0,
            "r2": 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0}


def ibp_residual(configs, test_fn: ProductTestFunction, spec: DriftSpec = DriftSpec(),
                 check_cutoff: bool = True) -> EstimateWithCI:
    """Monte Carlo residual of the integration-by-parts identity.

    Per configuration the summand is
    ``sum_s [ d(s) a(s) b(X - s) + a'(s) b(X - s) ]`` over points ``s``,
    with the logarithmic derivative ``d(s) = beta sum_{0<|s-x|<cutoff} 1/(s-x)``
    (twice the SDE drift).  Under the sine-2 law the mean is zero.  With
    ``check_cutoff`` the residual is also computed at half the cutoff and
    :class:`CutoffTooSmall` is raised if the two differ significantly.
    """
    w = _common_window(configs)
    lo, hi = test_fn.a_support
    R = spec.cutoff
    if not math.isfinite(R):
        raise ValueError("the integration-by-parts check needs a finite cutoff")
    if lo - R < w[0] or hi + R > w[1]:
        raise ValueError("window must contain the support of a widened by the cutoff")
    cutoffs = (R, R / 2) if check_cutoff else (R,)
    per = np.zeros((len(cutoffs), len(configs)))
    for r, c in enumerate(configs):
        x = c.points
        idx = np.flatnonzero((x > lo) & (x < hi))
        for i in idx:
            s = x[i]
            rest = np.delete(x, i)
            bval = test_fn.b(rest)
            if bval == 0:
                continue
            d = s - rest
            aval = float(test_fn.a(s))
            ap = float(test_fn.a_prime(s))
            for k, cut in enumerate(cutoffs):
                near = d[np.abs(d) < cut]
                logder = spec.beta * float(np.sum(1.0 / near))
                per[k, r] += (logder * aval + ap) * bval
    mean, se = _mean_se(per[0])
    extra = {"cutoff": R}
    if check_cutoff:
        diff = per[0] - per[1]
        dm, ds = _mean_se(diff)
        extra.update({"half_cutoff_value": float(per[1].mean()), "cutoff_shift": float(dm),
                      "cutoff_shift_stderr": float(ds)})
        if abs(dm) > 3 * ds + 1e-12:
            raise CutoffTooSmall(f"residual moved by {dm:.3g} (+- {ds:.3g}) when halving the cutoff")
    return EstimateWithCI(float(mean), float(se), len(configs), extra=extra)


def batch_means(series, min_batches: int = 20):
    """Batch-means standard error with automatic batch-length doubling.

    The batch length doubles while the estimate still grows by more than 10%
    between doublings and at least ``min_batches`` batches remain.  Raises
    :class:`InsufficientMixing` if the estimate has not stabilised by then.
    """
    y = np.asarray(series, dtype=float)
    n = y.size
    mean = _exact_mean(y)
    if n < 2 * min_batches:
        raise InsufficientMixing(f"series of length {n} is too short for {min_batches} batches")
    if np.ptp(y) == 0:
        return mean, 0.0, 1
    prev = None
    blen = 1
    while n // blen >= min_batches:
        nb = n // blen
        bm = y[: nb * blen].reshape(nb, blen).mean(axis=1)
        se = bm.std(ddof=1) / np.sqrt(nb)
        if prev is not None and se <= 1.1 * prev:
            return mean, float(max(se, prev)), blen
        prev = se
        blen *= 2
    raise InsufficientMixing("batch-means variance did not stabilise with >= %d batches" % min_batches)


def time_average(trajectory: TrajectoryRecord, obs: ObservableSpec, burn_in: float = 0.0):
    """Observable along the (uniformly spaced) snapshots after ``burn_in``."""
    ts = np.asarray(trajectory.times)
    keep = np.flatnonzero(ts >= ts[0] + burn_in)
    return np.array([obs(trajectory.unlabeled(k)) for k in keep])


def ergodicity_gap(trajectory: TrajectoryRecord, ensemble, obs: ObservableSpec,
                   burn_in: float = 0.0, min_batches: int = 20) -> EstimateWithCI:
    """Time average of ``obs`` minus its ensemble average, with a combined error.

    The time average uses batch means; the ensemble average is iid.
    """
    series = time_average(trajectory, obs, burn_in)
    tmean, tse, blen = batch_means(series, min_batches)
    ens = np.array([obs(c) for c in ensemble], dtype=float)
    emean, ese = _mean_se(ens)
    if np.ptp(series) == 0 and np.ptp(ens) == 0 and series[0] == ens[0]:
        gap = 0.0
    else:
        gap = float(tmean) - float(emean)
    return EstimateWithCI(gap, float(np.hypot(tse, ese)), int(series.size), method="batch-means",
                          extra={"time_average": float(tmean), "time_stderr": float(tse),
                                 "ensemble_average": float(emean), "ensemble_stderr": float(ese),
                                 "batch_length": int(blen), "n_ensemble": len(ensemble)})


def autocorrelation(series, lags) -> EstimateWithCI:
    """Normalised autocovariance at integer lags, Bartlett standard errors."""
    y = np.asarray(series, dtype=float)
    lags = np.asarray(lags, dtype=int)
    n = y.size
    if n < 3 or np.any(lags < 0) or np.any(lags >= n):
        raise ValueError("lags must lie in [0, len(series))")
    yc = y - y.mean()
    c0 = float(np.dot(yc, yc)) / n
    if c0 == 0:
        raise ValueError("series is constant")
    kmax = int(lags.max())
    r = np.array([np.dot(yc[: n - k], yc[k:]) / n / c0 for k in range(kmax + 1)])
    r[0] = 1.0
    cum = np.concatenate([[0.0], np.cumsum(r[1:] ** 2)])
    # Bartlett: var r_k = (1 + 2 sum_{j<k} r_j^2) / n
    se = np.where(lags > 0, np.sqrt((1.0 + 2.0 * cum[np.maximum(lags - 1, 0)]) / n), 0.0)
    return EstimateWithCI(r[lags], se, n, abscissa=lags.astype(float))


def chamber_cells(positions, radius: float = 1.0, bins: int = 10) -> np.ndarray:
    """Cell index in the equal-mass ``bins x bins`` partition of the 2-particle chamber.

    The chamber ``-R <= x1 < x2 <= R`` is mapped onto the unit square by the
    conditional quantile transform of the stationary density ``(x2 - x1)^2``:
    ``u = 1 - (1 - y1)^4 / 16`` and ``v = ((y2 - y1) / (1 - y1))^3`` with
    ``y = x / R``.  Every cell then carries stationary mass ``1 / bins^2``.
    Returns ``bins * i + j`` for the cell ``(i, j)`` of ``(u, v)``.
    """
    y = np.atleast_2d(np.asarray(positions, dtype=float)) / radius
    if y.shape[1] != 2:
        raise ValueError("the cell map is defined for two particles")
    one = np.maximum(1.0 - y[:, 0], np.finfo(float).tiny)
    u = 1.0 - one**4 / 16.0
    v = np.clip((y[:, 1] - y[:, 0]) / one, 0.0, 1.0) ** 3
    i = np.clip((u * bins).astype(int), 0, bins - 1)
    j = np.clip((v * bins).astype(int), 0, bins - 1)
    return bins * i + j


def cells_visited(trajectory: TrajectoryRecord, radius: float = 1.0, bins: int = 10) -> int:
    """Number of distinct equal-mass chamber cells hit by the snapshots."""
    return int(np.unique(chamber_cells(trajectory.array(), radius, bins)).size)
