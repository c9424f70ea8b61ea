"""Acceptance checks, runnable from the test suite or a ``verify`` experiment.

Each check is a desk-scale statistical analogue of an infinite-volume
statement and returns a :class:`CriterionResult`.  Checks draw from their own
seed stream, so any subset can be rerun in isolation with identical numbers.
Only the tagged-particle check differs between the ``smoke`` and ``full``
levels.
"""
from __future__ import annotations

import math
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import integrate, stats

from .dynamics import (ChamberSpec, DriftSpec, LabeledConfiguration, StepPolicy, TrajectoryRecord, evolve,
                       evolve_ensemble, gue_truncated_start, resume)
from .kernel import KernelSpec, correlation_m, pair_correlation
from .observables import (ObservableSpec, ProductTestFunction, autocorrelation, bump, bump_prime,
                          cells_visited, counting_variance_curve, ergodicity_gap,
                          estimate_two_point, ibp_residual, rigidity_statistic, tagged_msd, time_average,
                          _variance_influence, _counts)
from .oracles import cofactor_det_mp
from .rng import SamplerSeed
from .sampling import (PointConfiguration, gue_bulk_scale, gue_tridiagonal_eigenvalues, sample_ensemble,
                       sample_vandermonde_chamber)

DEFAULT_SEED = 20240917
LEVELS = ("smoke", "full")
SPEC = KernelSpec()


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    summary: str
    details: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        return f"criterion {self.number:2d} {'PASS' if self.passed else 'FAIL'}  {self.name}: {self.summary}"

    def to_dict(self):
        return {"number": self.number, "name": self.name, "passed": bool(self.passed),
                "summary": self.summary, "seconds": round(self.seconds, 3), "details": _plain(self.details)}


def _plain(v):
    if isinstance(v, dict):
        return {str(k): _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, np.ndarray):
        return _plain(v.tolist())
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, (np.floating, float)):
        return float(v)
    return v


# ------------------------------------------------------------------ helpers

def _bin_average(f, edges):
    return np.array([integrate.quad(f, a, b)[0] / (b - a) for a, b in zip(edges[:-1], edges[1:])])


# ------------------------------------------------------------- criteria

def c1_kernel(level, seed):
    rng = seed.generator()
    worst, n_sets = 0.0, 0
    for m in range(1, 7):
        for _ in range(300):
            pts = rng.uniform(-m / 2, m / 2, m)
            v, degenerate = correlation_m(pts, SPEC, full_output=True)
            if degenerate:
                continue
            ref = float(cofactor_det_mp(pts, SPEC.rho))
            worst = max(worst, abs(v - ref) / abs(ref))
            n_sets += 1
    perm_ok = trans_ok = True
    for _ in range(300):
        m = int(rng.integers(1, 7))
        # dyadic points with integer shifts: every difference is exact
        pts = rng.choice(np.arange(-320, 321), m, replace=False) / 64.0
        v = correlation_m(pts, SPEC)
        perm_ok &= correlation_m(rng.permutation(pts), SPEC) == v
        trans_ok &= correlation_m(pts + float(rng.integers(-1000, 1001)), SPEC) == v
    passed = worst <= 1e-9 and perm_ok and trans_ok
    return passed, (f"max rel err {worst:.2e} over {n_sets} sets (tol 1e-9); permutation exact={perm_ok}, "
                    f"translation exact={trans_ok}"), {"max_rel_err": worst, "n_sets": n_sets}


def c2_samplers(level, seed):
    n_rep = 10_000
    win = (-10.0, 10.0)
    u = np.round(np.arange(1, 21) * 0.1, 12)
    edges = np.concatenate([u - 0.05, [u[-1] + 0.05]])
    oracle = _bin_average(lambda v: pair_correlation(v, SPEC), edges)
    r2 = SPEC.intensity**2 * SPEC.rho**2
    taylor0 = r2 * (edges[1] ** 3 - edges[0] ** 3) / (3 * 3 * (edges[1] - edges[0]))
    details, ok = {}, True
    parts = []
    for kind, s in (("dpp", seed.replica(0)), ("gue", seed.replica(1))):
        cs = sample_ensemble(kind, n_rep, win, s, SPEC, n=512)
        counts = np.array([len(c) for c in cs], dtype=float)
        lam = counts / (win[1] - win[0])
        m, se = lam.mean(), lam.std(ddof=1) / math.sqrt(n_rep)
        z_int = (m - SPEC.intensity) / se
        e = estimate_two_point(cs, u)
        z = (e.value - oracle) / e.stderr
        z_small = (e.value[0] - taylor0) / e.stderr[0]
        good = abs(z_int) <= 3 and np.all(np.abs(z) <= 3) and abs(z_small) <= 3
        ok &= bool(good)
        details[kind] = {"intensity": m, "intensity_z": z_int, "two_point_z": z, "max_abs_z": np.abs(z).max(),
                         "small_u_z": z_small}
        parts.append(f"{kind}: intensity z={z_int:+.2f}, max|z| 2-pt={np.abs(z).max():.2f}, "
                     f"small-u z={z_small:+.2f}")
    return ok, "; ".join(parts) + f" ({n_rep} replicas each)", details


def c3_counting_variance(level, seed):
    radii = np.array([5.0, 10.0, 20.0, 40.0])
    n_rep = 2000
    cs = sample_ensemble("gue", n_rep, (-82.0, 82.0), seed.replica(0), SPEC, n=2048)
    d, psi_d = [], []
    for R in radii:
        v1, p1 = _variance_influence(_counts(cs, -R, R))
        v2, p2 = _variance_influence(_counts(cs, -2 * R, 2 * R))
        d.append(v2 - v1)
        psi_d.append(p2 - p1)
    d = np.array(d)
    steps = np.diff(d)
    se_steps = np.array([(psi_d[k + 1] - psi_d[k]).std(ddof=1) / math.sqrt(n_rep) for k in range(3)])
    mono = bool(np.all(steps <= 3 * se_steps))
    lam = 1.0
    pr = np.concatenate([radii, 2 * radii])
    pc = sample_ensemble("poisson", 20_000, (-82.0, 82.0), seed.replica(1), intensity=lam)
    pv = counting_variance_curve(pc, pr)
    w = 1.0 / pv.stderr**2
    slope = float(np.sum(w * pr * pv.value) / np.sum(w * pr * pr))
    slope_ok = abs(slope / (2 * lam) - 1) < 0.05
    return mono and slope_ok, (f"sine Var(2R)-Var(R) = {np.round(d, 3).tolist()} (log2/pi^2 = "
                               f"{math.log(2) / math.pi**2:.3f}), non-increasing within CI={mono}; Poisson slope "
                               f"{slope:.4f} vs {2 * lam} (5%)"), {"increments": d, "steps": steps,
                                                                   "steps_stderr": se_steps, "poisson_slope": slope}


def c4_rigidity(level, seed):
    n_rep = 1000
    win, interior, widths = (-15.0, 15.0), (-3.0, 3.0), [1.0, 2.0, 4.0, 8.0, 12.0]
    s = rigidity_statistic(sample_ensemble("dpp", n_rep, win, seed.replica(0), SPEC), interior, widths)
    p = rigidity_statistic(sample_ensemble("poisson", n_rep, win, seed.replica(1), intensity=1.0),
                           interior, widths)
    rs, rp = s.extra["ratio"], p.extra["ratio"]
    ok = bool(rs[-1] < 0.5 and np.all(rp > 0.9))
    return ok, (f"sine unexplained/raw at w={widths[-1]:g}: {rs[-1]:.3f} (<0.5); Poisson min ratio "
                f"{rp.min():.3f} (>0.9)"), {"sine_ratio": rs, "poisson_ratio": rp, "widths": widths}


def _chamber_occupation(m, seed, n_traj=100, horizon=1000.0):
    init = [LabeledConfiguration(x) for x in sample_vandermonde_chamber(m, 1.0, n_traj, seed.replica(10_000))]
    recs = evolve_ensemble("chamber", init, ChamberSpec(1.0, m), StepPolicy(dt=1e-3), horizon, 1.0,
                           [seed.replica(k) for k in range(n_traj)], noise_block=4096)
    return np.concatenate([r.array()[1:] for r in recs])


def c5_chamber_stationarity(level, seed):
    details, ok, parts = {}, True, []
    x = _chamber_occupation(1, seed.replica(1))
    ks = stats.kstest(x[:, 0], "uniform", args=(-1.0, 2.0)).statistic
    ok &= bool(ks < 0.02)
    parts.append(f"m=1 KS {ks:.4f} (<0.02, n={x.shape[0]})")
    details["m1_ks"] = ks
    for m in (2, 3):
        x = _chamber_occupation(m, seed.replica(m))
        ref = sample_vandermonde_chamber(m, 1.0, x.shape[0], seed.replica(100 + m))
        feats = [(f"x{i + 1}", x[:, i], ref[:, i]) for i in range(m)]
        feats += [(f"gap{i + 1}", np.diff(x)[:, i], np.diff(ref)[:, i]) for i in range(m - 1)]
        ps = {name: stats.ks_2samp(a, b).pvalue for name, a, b in feats}
        # Bonferroni over the family of marginal tests at 1%
        pmin = min(ps.values())
        good = pmin > 0.01 / len(ps)
        ok &= bool(good)
        details[f"m{m}_pvalues"] = ps
        parts.append(f"m={m} min p {pmin:.3f} (> {0.01 / len(ps):.4f})")
    return ok, "; ".join(parts), details


def c6_irreducibility(level, seed):
    n_runs = 200
    starts = sample_vandermonde_chamber(2, 1.0, n_runs, seed.replica(10_000))
    recs = evolve_ensemble("chamber", [LabeledConfiguration(x) for x in starts], ChamberSpec(1.0, 2),
                           StepPolicy(dt=1e-3), 50.0, 0.01, [seed.replica(k) for k in range(n_runs)],
                           noise_block=4096)
    visited = np.array([cells_visited(r, 1.0, 10) for r in recs])
    frac = float(np.mean(visited == 100))
    return frac >= 0.99, (f"{frac:.1%} of {n_runs} runs hit all 100 equal-mass cells by T=50 (>=99%); "
                          f"min cells {visited.min()}"), {"fraction": frac, "min_cells": visited.min()}


def c7_ergodicity(level, seed):
    details, ok, parts = {}, True, []
    # chamber, m = 3
    obs_c = [ObservableSpec("count-in-window", a=-0.5, b=0.5),
             ObservableSpec("linear-statistic", center=0.0, halfwidth=0.5)]
    ens = [PointConfiguration(x, (-1.0, 1.0)) for x in sample_vandermonde_chamber(3, 1.0, 20_000, seed.replica(0))]
    rec = evolve("chamber", LabeledConfiguration([-0.5, 0.0, 0.5]), ChamberSpec(1.0, 3), StepPolicy(dt=1e-3),
                 2000.0, 0.1, seed.replica(1), noise_block=4096)
    for obs in obs_c:
        e = ergodicity_gap(rec, ens, obs, burn_in=10.0)
        z = e.value / e.stderr
        ok &= bool(abs(z) <= 3)
        details[f"chamber_{obs.kind}"] = {"gap": e.value, "stderr": e.stderr, "z": z}
        parts.append(f"chamber {obs.kind} z={z:+.2f}")
    lags = np.array([0, 1, 2, 5, 10, 20, 50, 100, 200])
    ac = autocorrelation(time_average(rec, obs_c[0], 10.0), lags)
    dec = bool(np.any(ac.value[1:] < 0.1))
    ok &= dec
    details["chamber_acf"] = ac.value
    parts.append(f"chamber count acf min {ac.value.min():.3f} at lags<= {lags[-1] * 0.1:g}")
    # truncated ISDE, 1024 interior particles
    init, ext = gue_truncated_start(1024, 40.0, 16384, seed.replica(2), SPEC)
    rec = evolve("truncated", init, DriftSpec(cutoff=40.0), StepPolicy(dt=0.02), 2000.0, 0.5, seed.replica(3),
                 exterior=ext)
    ens = sample_ensemble("dpp", 10_000, (-4.0, 4.0), seed.replica(4), SPEC)
    obs_t = [ObservableSpec("count-in-window", a=-2.0, b=2.0),
             ObservableSpec("linear-statistic", center=0.0, halfwidth=2.0)]
    for obs in obs_t:
        e = ergodicity_gap(rec, ens, obs, burn_in=10.0)
        z = e.value / e.stderr
        ok &= bool(abs(z) <= 3)
        details[f"isde_{obs.kind}"] = {"gap": e.value, "stderr": e.stderr, "z": z}
        parts.append(f"ISDE {obs.kind} z={z:+.2f}")
    ac = autocorrelation(time_average(rec, obs_t[0], 10.0), lags)
    dec = bool(np.any(ac.value[1:] < 0.1))
    ok &= dec
    details["isde_acf"] = ac.value
    parts.append(f"ISDE count acf min {ac.value.min():.3f} at lags<= {lags[-1] * 0.5:g}")
    return ok, "; ".join(parts), details


def msd_experiment(n_interior, horizon, n_traj, seed, cutoff=None, dt=0.02, n_gue=None, workers=1):
    """Tagged central-particle MSD of the truncated ISDE on a log time grid."""
    cutoff = float(n_interior // 2) if cutoff is None else cutoff
    n_gue = n_gue or max(1024, 16 * n_interior)
    grid = np.unique(np.concatenate([np.arange(1, 10) * 10.0**k for k in range(int(math.log10(horizon)) + 1)]))
    grid = grid[grid <= horizon]
    inits, exts = zip(*[gue_truncated_start(n_interior, cutoff, n_gue, seed.replica(k), SPEC) for k in range(n_traj)])
    recs = evolve_ensemble("truncated", list(inits), DriftSpec(cutoff=cutoff), StepPolicy(dt=dt), horizon, 1.0,
                           [seed.replica(k).replica(1) for k in range(n_traj)], exteriors=list(exts),
                           snapshot_times=grid, workers=workers)
    intensity = float(np.mean([(n_interior - 1) / (i.positions[-1] - i.positions[0]) for i in inits]))
    return tagged_msd(recs, n_interior // 2, grid), intensity


def c8_tagged_msd(level, seed):
    if level == "smoke":
        e, lam = msd_experiment(64, 100.0, 200, seed)
        t, msd = e.abscissa, e.value
        ratio = (msd[-1] / t[-1]) / (msd[0] / t[0])
        ok = bool(ratio < 0.1)
        return ok, f"smoke (N=64, t<=100): MSD(100)/100 / MSD(1) = {ratio:.4f} (<0.1)", {
            "times": t, "msd": msd, "stderr": e.stderr, "ratio": ratio}
    e, lam = msd_experiment(256, 1000.0, 200, seed)
    t, msd = e.abscissa, e.value
    ratio = (msd[-1] / t[-1]) / (msd[0] / t[0])
    target = (math.pi * lam) ** -2
    slope, r2 = e.extra["slope"], e.extra["r2"]
    sub, lin, close = ratio < 0.1, r2 > 0.9, abs(slope / target - 1) <= 0.4
    return bool(sub and lin and close), (
        f"full (N=256, t<=1000): sublinear ratio {ratio:.4f} (<0.1)={sub}; final-decade R^2 {r2:.3f} (>0.9)={lin}; "
        f"slope {slope:.4f} vs (pi*lambda)^-2 {target:.4f} (40%)={close}"), {
        "times": t, "msd": msd, "stderr": e.stderr, "ratio": ratio, "slope": slope,
        "slope_stderr": e.extra["slope_stderr"], "r2": r2, "target": target, "intensity": lam}


def ibp_test_functions():
    """Two product test functions with non-constant ``b``."""
    f1 = ProductTestFunction(lambda s: bump(s, 0.0, 1.5), lambda s: bump_prime(s, 0.0, 1.5), (-1.5, 1.5),
                             lambda pts: float(np.exp(-np.sum(bump(pts, 1.0, 1.0)))), (0.0, 2.0))
    f2 = ProductTestFunction(lambda s: bump(s, 0.5, 1.0), lambda s: bump_prime(s, 0.5, 1.0), (-0.5, 1.5),
                             lambda pts: 1.0 / (1.0 + float(np.sum(bump(pts, -1.0, 1.5)))), (-2.5, 0.5))
    return f1, f2


def c9_ibp(level, seed):
    n_rep, win, cutoff = 2000, (-18.0, 18.0), 16.0
    sine = sample_ensemble("dpp", n_rep, win, seed.replica(0), SPEC)
    pois = sample_ensemble("poisson", n_rep, win, seed.replica(1), intensity=1.0)
    ok, parts, details = True, [], {}
    for k, f in enumerate(ibp_test_functions(), 1):
        e = ibp_residual(sine, f, DriftSpec(cutoff=cutoff))
        p = ibp_residual(pois, f, DriftSpec(cutoff=cutoff), check_cutoff=False)
        zs, zp = e.value / e.stderr, p.value / p.stderr
        ok &= bool(abs(zs) <= 3 and abs(zp) > 3)
        details[f"phi{k}"] = {"sine": e.value, "sine_stderr": e.stderr, "poisson": p.value,
                              "poisson_stderr": p.stderr}
        parts.append(f"phi{k}: sine z={zs:+.2f}, Poisson z={zp:+.2f}")
    return ok, "; ".join(parts) + " (|sine z|<=3, |Poisson z|>3)", details


def c10_drift_cauchy(level, seed):
    n_rep = 1000
    cut = np.array([25.0, 50.0, 100.0, 200.0])
    diffs = np.empty((n_rep, 3))
    for r in range(n_rep):
        x = np.sort(gue_tridiagonal_eigenvalues(2048, seed.replica(r))) * gue_bulk_scale(2048, SPEC)
        i = int(np.argmin(np.abs(x)))
        d = x[i] - np.delete(x, i)
        inv = 1.0 / d
        drift = np.array([np.sum(inv[np.abs(d) < R]) for R in cut])
        diffs[r] = np.abs(np.diff(drift))
    mean = diffs.mean(axis=0)
    se = diffs.std(axis=0, ddof=1) / math.sqrt(n_rep)
    ok = bool(np.all(np.diff(mean) < 0))
    return ok, (f"mean |drift(2R)-drift(R)| for R={cut[:3].tolist()}: {np.round(mean, 4).tolist()} "
                f"(+- {np.round(se, 4).tolist()}), strictly decreasing={ok}"), {"mean": mean, "stderr": se}


def c11_determinism(level, seed):
    from . import cli
    ok, parts = True, []
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        cfg = tmp / "evolve.toml"
        cfg.write_text(cli.EXAMPLE_EVOLVE)
        outs = []
        for k in range(2):
            code = cli.main(["--config", str(cfg), "--out", str(tmp / f"run{k}"), "--seed", str(seed.stream)])
            ok &= code == 0
            outs.append(tmp / f"run{k}")
        same = cli.compare_outputs(outs[0], outs[1])
        ok &= same
        parts.append(f"two identical evolve runs byte-identical={same}")
        # resume T then T more against one run of 2T
        init = LabeledConfiguration(np.linspace(-3.0, 3.0, 9))
        pol = StepPolicy(dt=1e-3)
        full = evolve("finite", init, DriftSpec(), pol, 2.0, 0.25, seed, noise_block=64)
        half = evolve("finite", init, DriftSpec(), pol, 1.0, 0.25, seed, noise_block=64)
        half.save(tmp / "half")
        cont = resume(TrajectoryRecord.load(tmp / "half"), 1.0)
        exact = cont.n_snapshots == full.n_snapshots and all(
            a.tobytes() == b.tobytes() for a, b in zip(cont.positions, full.positions)) and cont.times == full.times
        ok &= exact
        parts.append(f"resume snapshot-for-snapshot identical={exact}")
    return bool(ok), "; ".join(parts), {}


CRITERIA = {
    1: ("kernel correctness", c1_kernel),
    2: ("sampler validity", c2_samplers),
    3: ("counting variance", c3_counting_variance),
    4: ("rigidity contrast", c4_rigidity),
    5: ("chamber stationarity", c5_chamber_stationarity),
    6: ("irreducibility witness", c6_irreducibility),
    7: ("ergodicity gap", c7_ergodicity),
    8: ("tagged-particle log-diffusion", c8_tagged_msd),
    9: ("integration-by-parts residual", c9_ibp),
    10: ("drift conditional convergence", c10_drift_cauchy),
    11: ("engineering determinism", c11_determinism),
}


def run_criterion(number: int, level: str = "smoke", seed: int = DEFAULT_SEED) -> CriterionResult:
    if level not in LEVELS:
        raise ValueError(f"level must be one of {LEVELS}, got {level!r}")
    name, fn = CRITERIA[number]
    t0 = time.perf_counter()
    passed, summary, details = fn(level, SamplerSeed(int(seed), number))
    return CriterionResult(number, name, bool(passed), summary, details, time.perf_counter() - t0)


def run_all(level: str = "smoke", seed: int = DEFAULT_SEED, only=None, progress=None) -> list:
    out = []
    for k in sorted(only or CRITERIA):
        r = run_criterion(k, level, seed)
        if progress:
            progress(r)
        out.append(r)
    return out


def format_table(results) -> str:
    return "\n".join(r.line() for r in results)
