"""Compiled Euler--Maruyama kernels shared by every dynamics model.

Rows of ``X`` are independent trajectories.  Each row consumes rows of its own
noise block ``noise[b]`` and stops when it reaches ``t_stop``, exhausts its
block, fails to restore ordering, or escapes its window.  Status codes:

0 running/done, 1 noise block exhausted, 2 minimum step reached, 3 escape.
"""
import numpy as np
from numba import njit

OK, REFILL, MINSTEP, ESCAPE = 0, 1, 2, 3


@njit(cache=True)
def drift_row(x, left, nleft, right, nright, half_beta, cutoff, confine, out):
    # pushes to the right and to the left are summed separately so that
    # mirror-symmetric neighbourhoods cancel exactly
    n = x.shape[0]
    neg = np.zeros(n)
    for i in range(n):
        out[i] = 0.0
    for i in range(n):
        xi = x[i]
        k = nleft - 1
        while k >= 0:
            d = xi - left[k]
            if d >= cutoff:
                break
            out[i] += 1.0 / d
            k -= 1
        for j in range(i + 1, n):
            d = x[j] - xi
            if d >= cutoff:
                break
            f = 1.0 / d
            neg[i] += f
            out[j] += f
        k = 0
        while k < nright:
            d = right[k] - xi
            if d >= cutoff:
                break
            neg[i] += 1.0 / d
            k += 1
    for i in range(n):
        out[i] = half_beta * (out[i] - neg[i])
        if confine != 0.0:
            out[i] -= confine / x[i]


@njit(cache=True)
def _fold(v, radius):
    while v < -radius or v > radius:
        if v < -radius:
            v = -2.0 * radius - v
        else:
            v = 2.0 * radius - v
    return v


@njit(cache=True)
def _valid(p, left, nleft, right, nright):
    n = p.shape[0]
    for i in range(n - 1):
        if not p[i] < p[i + 1]:
            return False
    if nleft > 0 and not p[0] > left[nleft - 1]:
        return False
    if nright > 0 and not p[n - 1] < right[0]:
        return False
    return True


@njit(cache=True, nogil=True)
def advance(X, T, t_stop, noise, pos, left, nleft, right, nright, lo, hi,
            half_beta, cutoff, confine, radius, dt, dt_min, max_halvings,
            noise_scale, status):
    B, N = X.shape
    K = noise.shape[1]
    drift = np.empty(N)
    prop = np.empty(N)
    for b in range(B):
        if status[b] != OK:
            continue
        x = X[b]
        while T[b] < t_stop:
            if pos[b] >= K:
                status[b] = REFILL
                break
            z = noise[b, pos[b]]
            drift_row(x, left[b], nleft[b], right[b], nright[b], half_beta, cutoff, confine, drift)
            h = dt
            capped = False
            if t_stop - T[b] <= dt:
                h = t_stop - T[b]
                capped = True
            accepted = False
            for attempt in range(max_halvings + 1):
                if attempt > 0:
                    h = 0.5 * h
                    capped = False
                    if h < dt_min:
                        break
                s = noise_scale * np.sqrt(h)
                for i in range(N):
                    v = x[i] + drift[i] * h + s * z[i]
                    if radius > 0.0:
                        v = _fold(v, radius)
                    prop[i] = v
                if _valid(prop, left[b], nleft[b], right[b], nright[b]):
                    accepted = True
                    break
            if not accepted:
                status[b] = MINSTEP
                break
            pos[b] += 1
            for i in range(N):
                x[i] = prop[i]
            if capped:
                T[b] = t_stop
            else:
                T[b] = T[b] + h
            if prop[0] < lo[b] or prop[N - 1] > hi[b]:
                status[b] = ESCAPE
                break
    return status


def drift_batch(X, left, nleft, right, nright, half_beta, cutoff, confine):
    out = np.empty_like(X)
    for b in range(X.shape[0]):
        drift_row(X[b], left[b], nleft[b], right[b], nright[b], half_beta, cutoff, confine, out[b])
    return out
