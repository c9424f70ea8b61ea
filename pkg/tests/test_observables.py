import json

import numpy as np
import pytest

from dysonlab.dynamics import ChamberSpec, DriftSpec, LabeledConfiguration, StepPolicy, evolve, evolve_ensemble
from dysonlab.errors import CutoffTooSmall, InsufficientMixing, TooManyEscapes, WindowMismatch
from dysonlab.kernel import KernelSpec, pair_correlation
from dysonlab.observables import (EstimateWithCI, ObservableSpec, ProductTestFunction, autocorrelation,
                                  batch_means, bump, bump_prime, counting_variance_curve,
                                  counting_variance_increments, ergodicity_gap, estimate_one_point,
                                  estimate_two_point, ibp_residual, rigidity_statistic, smooth_step,
                                  tagged_msd)
from dysonlab.rng import SamplerSeed
from dysonlab.sampling import PointConfiguration, sample_ensemble, sample_vandermonde_chamber

SPEC = KernelSpec()
SEED = SamplerSeed(314)


@pytest.fixture(scope="module")
def sine_configs():
    return sample_ensemble("dpp", 1500, (-10.0, 10.0), SEED, SPEC)


@pytest.fixture(scope="module")
def poisson_configs():
    return sample_ensemble("poisson", 1500, (-10.0, 10.0), SEED, intensity=1.0)


def test_estimate_validation():
    with pytest.raises(ValueError):
        EstimateWithCI(1.0, np.inf, 10)
    with pytest.raises(ValueError):
        EstimateWithCI(1.0, 0.1, 1)
    with pytest.raises(ValueError):
        EstimateWithCI(1.0, 0.1, 5, method="bootstrap")


def test_emission_formats():
    e = EstimateWithCI(np.array([1.0, 2.0]), np.array([0.1, 0.2]), 10, abscissa=np.array([0.5, 1.5]))
    text = e.to_csv({"config_hash": "abc", "seed": 1})
    lines = text.splitlines()
    assert json.loads(lines[0][2:]) == {"config_hash": "abc", "seed": 1}
    assert lines[1] == "abscissa,value,stderr,n"
    assert lines[2] == "0.5,1.0,0.1,10"
    d = json.loads(e.to_json({"seed": 1}))
    assert d["value"] == [1.0, 2.0] and d["provenance"] == {"seed": 1}


def test_window_mismatch():
    cs = [PointConfiguration([0.1], (0, 1)), PointConfiguration([0.1], (0, 2))]
    with pytest.raises(WindowMismatch):
        estimate_one_point(cs, 4)


def test_smooth_helpers():
    assert smooth_step(0.0) == 0.0 and smooth_step(1.0) == 1.0
    assert smooth_step(0.5) == pytest.approx(0.5)
    x = np.linspace(-0.99, 0.99, 2001)
    num = np.gradient(bump(x, 0.0, 1.0), x)
    np.testing.assert_allclose(bump_prime(x)[5:-5], num[5:-5], atol=2e-3)


def test_one_point(sine_configs, poisson_configs):
    e = estimate_one_point(sine_configs, 10)
    assert np.all(e.within(SPEC.intensity))
    e = estimate_one_point(poisson_configs, 10)
    assert np.all(e.within(1.0))
    empty = [PointConfiguration([], (0, 1))] * 100
    e = estimate_one_point(empty, 5)
    assert np.all(e.value == 0) and np.all(e.stderr == 0)


def test_two_point(sine_configs, poisson_configs):
    u = np.arange(1, 11) * 0.2
    e = estimate_two_point(sine_configs, u)
    assert np.mean(e.within(pair_correlation(u, SPEC))) >= 0.9
    assert e.value[0] < 0.25 * SPEC.intensity**2
    p = estimate_two_point(poisson_configs, u)
    assert np.mean(p.within(1.0)) >= 0.9


def test_counting_variance(sine_configs, poisson_configs):
    radii = np.array([1.0, 2.0, 4.0, 8.0])
    p = counting_variance_curve(poisson_configs, radii)
    slope = np.polyfit(radii, p.value, 1)[0]
    assert slope == pytest.approx(2.0, rel=0.1)
    s = counting_variance_curve(sine_configs, radii)
    assert s.value[-1] / s.value[-2] < 1.5
    assert counting_variance_curve(sine_configs, [0.0]).value[0] == 0.0
    inc = counting_variance_increments(sine_configs, [2.0, 4.0])
    assert np.all(np.abs(inc.value - np.log(2) / np.pi**2) < 4 * inc.stderr + 0.02)


def test_rigidity(sine_configs, poisson_configs):
    s = rigidity_statistic(sine_configs, (-2.0, 2.0), [1.0, 4.0, 7.0])
    assert s.extra["ratio"][-1] < 0.5
    assert s.value[-1] < s.value[0]
    p = rigidity_statistic(poisson_configs, (-2.0, 2.0), [1.0, 4.0, 7.0])
    assert np.all(p.extra["ratio"] > 0.9)
    z = rigidity_statistic(sine_configs, (0.5, 0.5), [2.0])
    assert z.value[0] == 0.0 and z.extra["raw_variance"] == 0.0


def test_stderr_scaling(poisson_configs):
    a = estimate_one_point(poisson_configs[:700], 4).stderr
    b = estimate_one_point(poisson_configs[:1400], 4).stderr
    r = b / a
    assert np.all((r > 2**-0.5 - 0.15) & (r < 2**-0.5 + 0.15))


def test_tagged_msd_brownian_control():
    seeds = [SEED.replica(k) for k in range(300)]
    recs = evolve_ensemble("finite", [LabeledConfiguration([0.0])] * 300, DriftSpec(), StepPolicy(dt=0.01),
                           4.0, 0.5, seeds)
    times = np.arange(0, 9) * 0.5
    e = tagged_msd(recs, 0, times)
    assert e.value[0] == 0.0
    assert np.all(e.within(times, 3.5))


def test_tagged_msd_escapes():
    recs = evolve_ensemble("finite", [LabeledConfiguration([0.0])] * 5, DriftSpec(), StepPolicy(dt=0.1),
                           1.0, 0.5, [SEED.replica(k) for k in range(5)])
    for r in recs[:2]:
        r.escaped = True
    with pytest.raises(TooManyEscapes):
        tagged_msd(recs, 0, [0.5, 1.0])


def _ibp_fns():
    a = lambda s: bump(s, 0.0, 1.5)
    ap = lambda s: bump_prime(s, 0.0, 1.5)
    b = lambda pts: float(np.exp(-np.sum(bump(pts, 1.0, 1.0))))
    return ProductTestFunction(a, ap, (-1.5, 1.5)), ProductTestFunction(a, ap, (-1.5, 1.5), b, (0.0, 2.0))


def test_ibp_zero_a(sine_configs):
    f = ProductTestFunction(lambda s: 0.0, lambda s: 0.0, (-1, 1))
    e = ibp_residual(sine_configs[:50], f, DriftSpec(cutoff=8.0))
    assert e.value == 0.0


def test_ibp_residual():
    flat, prod = _ibp_fns()
    big = sample_ensemble("dpp", 500, (-18.0, 18.0), SEED.replica(7), SPEC)
    for f in (flat, prod):
        e = ibp_residual(big, f, DriftSpec(cutoff=16.0))
        assert abs(e.value) < 3 * e.stderr
    pois = sample_ensemble("poisson", 500, (-18.0, 18.0), SEED.replica(8), intensity=1.0)
    e = ibp_residual(pois, prod, DriftSpec(cutoff=16.0), check_cutoff=False)
    assert abs(e.value) > 3 * e.stderr


def test_ibp_cutoff_too_small():
    # regular lattice plus a one-sided excess makes the tail sum depend on the cutoff
    pts = np.concatenate([np.arange(-30, 31) + 0.5, np.arange(5.25, 30, 1.0)])
    cs = [PointConfiguration(np.sort(pts + 0.01 * k), (-31, 31)) for k in range(10)]
    flat, _ = _ibp_fns()
    with pytest.raises(CutoffTooSmall):
        ibp_residual(cs, flat, DriftSpec(cutoff=20.0))


def test_batch_means_and_autocorrelation():
    rng = np.random.default_rng(0)
    y = rng.standard_normal(4000)
    m, se, blen = batch_means(y)
    assert abs(m) < 3 * se and se == pytest.approx(1 / np.sqrt(4000), rel=0.3)
    with pytest.raises(InsufficientMixing):
        batch_means(y[:30])
    ac = autocorrelation(y, [0, 1, 2, 5, 10])
    assert ac.value[0] == 1.0 and ac.stderr[0] == 0.0
    assert np.all(np.abs(ac.value[1:]) < 3 * ac.stderr[1:])


def test_ergodicity_gap_chamber():
    ens = [PointConfiguration(x, (-1, 1)) for x in sample_vandermonde_chamber(3, 1.0, 4000, SEED)]
    rec = evolve("chamber", LabeledConfiguration([-0.5, 0.0, 0.5]), ChamberSpec(1.0, 3), StepPolicy(dt=1e-3),
                 400.0, 0.05, SEED)
    const = ergodicity_gap(rec, ens, ObservableSpec("constant", c=2.5), burn_in=5.0)
    assert const.value == 0.0
    e = ergodicity_gap(rec, ens, ObservableSpec("count-in-window", a=-0.5, b=0.5), burn_in=5.0)
    assert abs(e.value) < 3 * e.stderr
