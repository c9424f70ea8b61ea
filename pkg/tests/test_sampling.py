import json

import numpy as np
import pytest
from scipy import stats

from dysonlab.errors import InsufficientBulk, MeshTooCoarse, OverflowGuard
from dysonlab.kernel import KernelSpec, count_variance
from dysonlab.rng import SamplerSeed
from dysonlab.sampling import (PointConfiguration, SineWindowDPP, gue_tridiagonal_eigenvalues,
                               read_jsonl, sample_dpp_window, sample_ensemble, sample_gue_bulk,
                               sample_poisson, sample_vandermonde_chamber, semicircle_cdf,
                               vandermonde_weight, write_jsonl)
from dysonlab.oracles import chamber_normaliser

SPEC = KernelSpec(np.pi)
SEED = SamplerSeed(20240601)


def test_point_configuration_invariants():
    with pytest.raises(ValueError):
        PointConfiguration([0.0, 0.0], (-1, 1))
    with pytest.raises(ValueError):
        PointConfiguration([0.5, 2.0], (-1, 1))
    c = PointConfiguration([-0.5, 0.25], (-1, 1))
    assert c.count(-1, 0) == 1 and len(c) == 2


def test_json_and_csv_round_trip(tmp_path):
    c = sample_dpp_window(SPEC, (-3, 4), seed=SEED)
    line = c.to_json()
    assert "\n" not in line
    assert set(json.loads(line)) == {"window", "points"}
    assert PointConfiguration.from_json(line) == c
    c.to_csv(tmp_path / "c.csv")
    assert PointConfiguration.from_csv(tmp_path / "c.csv", c.window) == c
    write_jsonl([c, c], tmp_path / "e.jsonl")
    assert read_jsonl(tmp_path / "e.jsonl") == [c, c]


@pytest.mark.parametrize("kind", ["dpp", "gue", "poisson"])
def test_identical_seeds_bit_identical(kind):
    a = sample_ensemble(kind, 3, (-5, 5), SEED, SPEC, n=64)
    b = sample_ensemble(kind, 3, (-5, 5), SEED, SPEC, n=64)
    assert all(x.points.tobytes() == y.points.tobytes() for x, y in zip(a, b))
    assert a[0] != a[1]


def test_replica_streams_independent_of_order():
    seeds = [SEED.replica(k) for k in range(4)]
    fwd = [sample_poisson(1.0, (0, 10), s) for s in seeds]
    rev = [sample_poisson(1.0, (0, 10), s) for s in reversed(seeds)][::-1]
    assert fwd == rev


def test_gue_single_eigenvalue_is_standard_gaussian():
    x = np.concatenate([gue_tridiagonal_eigenvalues(1, SEED.replica(k)) for k in range(4000)])
    assert stats.kstest(x, "norm").pvalue > 0.01
    g = np.random.Generator(np.random.PCG64(SEED.replica(0).sequence()))
    assert gue_tridiagonal_eigenvalues(1, SEED.replica(0))[0] == g.standard_normal()


def test_gue_semicircle_ks():
    n = 512
    vals = np.concatenate([gue_tridiagonal_eigenvalues(n, SEED.replica(k)) for k in range(200)])
    ks = stats.kstest(vals, lambda x: semicircle_cdf(x, n)).statistic
    assert ks < 0.02


def test_gue_bulk_preconditions():
    with pytest.raises(InsufficientBulk):
        sample_gue_bulk(4, (-1, 1), SPEC, SEED)
    with pytest.raises(InsufficientBulk):
        sample_gue_bulk(64, (-50, 50), SPEC, SEED)
    with pytest.raises(InsufficientBulk):
        sample_gue_bulk(64, (0, 0.5), SPEC, SEED)


def test_gue_bulk_intensity():
    win = (-8.0, 8.0)
    cs = sample_ensemble("gue", 2000, win, SEED, SPEC, n=512)
    counts = np.array([len(c) for c in cs])
    se = counts.std(ddof=1) / np.sqrt(counts.size)
    assert abs(counts.mean() - 16 * SPEC.intensity) < 3 * se


def test_dpp_trace_and_variance_oracles():
    d = SineWindowDPP(SPEC, (-4, 6))
    assert d.expected_count == pytest.approx(10 * SPEC.intensity, rel=1e-9)
    assert d.count_variance == pytest.approx(count_variance(10, SPEC), rel=1e-8)
    counts = np.array([len(d.sample(SEED.replica(k))) for k in range(3000)])
    se = counts.std(ddof=1) / np.sqrt(counts.size)
    assert abs(counts.mean() - d.expected_count) < 3 * se
    assert counts.var(ddof=1) < counts.mean()
    # sample variance vs sum lambda (1 - lambda); crude 4-sigma band
    v_se = np.sqrt(np.var((counts - counts.mean()) ** 2) / counts.size)
    assert abs(counts.var(ddof=1) - d.count_variance) < 4 * v_se


def test_dpp_empty_window_and_mesh_check():
    assert len(sample_dpp_window(SPEC, (2.0, 2.0), seed=SEED)) == 0
    with pytest.raises(MeshTooCoarse):
        SineWindowDPP(SPEC, (0, 40), mesh=12)


def test_dpp_points_inside_window_and_sorted():
    for k in range(20):
        c = sample_dpp_window(SPEC, (-2.5, 3.5), seed=SEED.replica(k))
        assert np.all(np.diff(c.points) > 0)
        assert c.points.size == 0 or (c.points[0] >= -2.5 and c.points[-1] <= 3.5)


def test_poisson_moments():
    cs = sample_ensemble("poisson", 4000, (0, 5), SEED, intensity=2.0)
    counts = np.array([len(c) for c in cs])
    se = counts.std(ddof=1) / np.sqrt(counts.size)
    assert abs(counts.mean() - 10) < 3 * se
    v_se = np.sqrt(np.var((counts - counts.mean()) ** 2) / counts.size)
    assert abs(counts.var(ddof=1) - counts.mean()) < 3 * v_se
    assert len(sample_poisson(3.0, (1, 1), SEED)) == 0
    with pytest.raises(OverflowGuard):
        sample_poisson(1e6, (0, 1e4), SEED)


def test_vandermonde_sampler_matches_quadrature():
    # P(x1 < 0 < x2) under Delta_2 on [-1,1]: integral over [-1,0]x[0,1] of (x2-x1)^2 / Z
    Z = chamber_normaliser(2, 1.0)
    assert Z == pytest.approx(4.0 / 3.0, rel=1e-8)
    p = (7.0 / 6.0) / Z
    x = sample_vandermonde_chamber(2, 1.0, 40000, SEED)
    frac = np.mean((x[:, 0] < 0) & (x[:, 1] > 0))
    assert abs(frac - p) < 3 * np.sqrt(p * (1 - p) / x.shape[0])
    assert np.all(np.diff(x, axis=1) > 0) and np.all(np.abs(x) <= 1)


def test_vandermonde_weight():
    assert vandermonde_weight(np.array([0.3])) == 1.0
    assert vandermonde_weight(np.array([-1.0, 0.0, 1.0])) == pytest.approx(4.0)
