import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dysonlab import cli
from dysonlab.dynamics import TrajectoryRecord
from dysonlab.sampling import read_jsonl


@pytest.fixture
def evolve_cfg(tmp_path):
    p = tmp_path / "evolve.toml"
    p.write_text(cli.EXAMPLE_EVOLVE)
    return p


def _write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_defaults_fill_in():
    cfg = cli.parse_config('experiment = "sample"\nseed = 1\n')
    assert cfg["drift"]["beta"] == 2.0
    assert cfg["kernel"]["rho"] == pytest.approx(np.pi)


def test_config_round_trip():
    cfg = cli.parse_config(cli.EXAMPLE_EVOLVE)
    again = cli.parse_config(cli.dump_config(cfg))
    assert again == cfg


@given(beta=st.floats(0.1, 8), seed=st.integers(0, 2**64 - 1), dt=st.floats(1e-5, 0.1))
@settings(max_examples=30, deadline=None)
def test_config_round_trip_property(beta, seed, dt):
    text = f'experiment = "evolve"\nseed = {seed}\n[drift]\nbeta = {beta!r}\n[step]\ndt = {dt!r}\n'
    cfg = cli.parse_config(text)
    assert cli.parse_config(cli.dump_config(cfg)) == cfg


@pytest.mark.parametrize("text, field", [
    ('experiment = "evolve"\nseed = 1\n[drift]\nbeta = -1.0\n', "drift.beta"),
    ('experiment = "evolve"\nseed = -4\n', "seed"),
    ('experiment = "walk"\nseed = 1\n', "experiment"),
    ('experiment = "evolve"\nseed = 1\n[step]\ndt = 0.0\n', "step.dt"),
    ('experiment = "evolve"\nseed = 1\n[drift]\nbogus = 1\n', "drift"),
    ('experiment = "evolve"\nseed = 1\n[model]\nkind = "truncated"\n', "drift.cutoff"),
    ('experiment = "sample"\nseed = 1\n[sampler]\nwindow = [3.0, 1.0]\n', "sampler.window"),
])
def test_invalid_config_names_field(text, field):
    with pytest.raises(cli.ConfigError, match=rf"^{field}\b"):
        cli.parse_config(text)


def test_invalid_config_exit_2(tmp_path, capsys):
    p = _write(tmp_path, "bad.toml", 'experiment = "evolve"\nseed = 1\n[drift]\nbeta = -1.0\n')
    assert cli.main(["--config", str(p), "--out", str(tmp_path / "o")]) == 2
    assert "drift.beta" in capsys.readouterr().err
    assert cli.main(["--config", str(tmp_path / "missing.toml")]) == 2
    assert cli.main([]) == 2


def test_evolve_byte_identical(evolve_cfg, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["--config", str(evolve_cfg), "--out", str(a)]) == 0
    assert cli.main(["--config", str(evolve_cfg), "--out", str(b)]) == 0
    assert cli.compare_outputs(a, b)
    man = json.loads((a / "manifest.json").read_text())
    assert man["exit_status"] == 0 and man["schema_version"] == cli.SCHEMA_VERSION
    assert man["seed"] == {"seed": 7, "stream": 0}
    assert "trajectories/0002/snapshots.bin" in man["outputs"]


def test_seed_override_changes_output(evolve_cfg, tmp_path):
    cli.main(["--config", str(evolve_cfg), "--out", str(tmp_path / "a")])
    cli.main(["--config", str(evolve_cfg), "--out", str(tmp_path / "b"), "--seed", "8"])
    assert not cli.compare_outputs(tmp_path / "a", tmp_path / "b")


def test_outputs_append_only(evolve_cfg, tmp_path):
    out = tmp_path / "o"
    cli.main(["--config", str(evolve_cfg), "--out", str(out)])
    before = (out / "trajectories" / "0000" / "snapshots.bin").read_bytes()
    cli.main(["--config", str(evolve_cfg), "--out", str(out), "--seed", "9"])
    assert (out / "run-001" / "manifest.json").exists()
    assert (out / "trajectories" / "0000" / "snapshots.bin").read_bytes() == before


def test_resume_matches_uninterrupted(evolve_cfg, tmp_path):
    a, c = tmp_path / "a", tmp_path / "c"
    cli.main(["--config", str(evolve_cfg), "--out", str(a)])
    cli.main(["--config", str(evolve_cfg), "--out", str(c), "--horizon", "3"])
    assert cli.main(["--resume", str(a), "--horizon", "1"]) == 0
    for k in range(3):
        ra = TrajectoryRecord.load(a / "trajectories" / f"{k:04d}")
        rc = TrajectoryRecord.load(c / "trajectories" / f"{k:04d}")
        assert ra.times == rc.times
        assert all(np.array_equal(x, y) for x, y in zip(ra.positions, rc.positions))


def test_resume_zero_horizon_adds_nothing(evolve_cfg, tmp_path):
    a = tmp_path / "a"
    cli.main(["--config", str(evolve_cfg), "--out", str(a)])
    blob = (a / "trajectories" / "0001" / "snapshots.bin").read_bytes()
    assert cli.main(["--resume", str(a)]) == 0
    assert (a / "trajectories" / "0001" / "snapshots.bin").read_bytes() == blob


def test_resume_corrupt_snapshot_exit_1(evolve_cfg, tmp_path, capsys):
    a = tmp_path / "a"
    cli.main(["--config", str(evolve_cfg), "--out", str(a)])
    good = (a / "trajectories" / "0000" / "snapshots.bin").read_bytes()
    bad = a / "trajectories" / "0001" / "snapshots.bin"
    bad.write_bytes(bad.read_bytes()[:-5])
    assert cli.main(["--resume", str(a), "--horizon", "1"]) == 1
    assert "corrupt snapshot" in capsys.readouterr().err
    # nothing was extended
    assert (a / "trajectories" / "0000" / "snapshots.bin").read_bytes() == good


def test_resume_rejects_config(tmp_path, evolve_cfg):
    assert cli.main(["--resume", str(tmp_path), "--config", str(evolve_cfg)]) == 2
    assert cli.main(["--resume", str(tmp_path)]) == 1


def test_sample_then_analyze(tmp_path):
    s = _write(tmp_path, "s.toml", 'experiment = "sample"\nseed = 3\nreplicas = 40\n'
                                   '[sampler]\nwindow = [-5.0, 5.0]\n')
    assert cli.main(["--config", str(s), "--out", str(tmp_path / "s")]) == 0
    configs = read_jsonl(tmp_path / "s" / "results" / "configurations.jsonl")
    assert len(configs) == 40
    an = _write(tmp_path, "an.toml", f'experiment = "analyze"\nseed = 3\n[analyze]\n'
                                     f'input = "{(tmp_path / "s").as_posix()}"\n'
                                     'estimators = ["one_point", "two_point", "rigidity"]\n'
                                     'separations = [0.5, 1.0, 1.5]\ninterior = [-1.0, 1.0]\n'
                                     'taper_widths = [1.0, 2.0]\n')
    assert cli.main(["--config", str(an), "--out", str(tmp_path / "an")]) == 0
    res = tmp_path / "an" / "results"
    for name in ("one_point", "two_point", "rigidity"):
        payload = json.loads((res / f"{name}.json").read_text())
        assert payload["provenance"]["seed"] == 3
        assert (res / f"{name}.csv").read_text().startswith("# {")


def test_analyze_bad_estimator_args_exit_2(tmp_path, capsys):
    an = _write(tmp_path, "an.toml", 'experiment = "analyze"\nseed = 3\nreplicas = 5\n'
                                     '[analyze]\nestimators = ["two_point"]\nseparations = [0.0, 0.5]\n')
    assert cli.main(["--config", str(an), "--out", str(tmp_path / "an")]) == 2
    assert "analyze.two_point" in capsys.readouterr().err


def test_analyze_trajectories(evolve_cfg, tmp_path):
    cli.main(["--config", str(evolve_cfg), "--out", str(tmp_path / "a")])
    an = _write(tmp_path, "an.toml", f'experiment = "analyze"\nseed = 3\n[analyze]\n'
                                     f'input = "{(tmp_path / "a").as_posix()}"\n'
                                     'estimators = ["tagged_msd", "autocorrelation"]\n'
                                     'times = [0.5, 1.0]\nlags = [0, 1]\n')
    assert cli.main(["--config", str(an), "--out", str(tmp_path / "an")]) == 0
    assert (tmp_path / "an" / "results" / "tagged_msd.csv").exists()


def test_verify_writes_results(tmp_path, capsys):
    v = _write(tmp_path, "v.toml", 'experiment = "verify"\nseed = 5\n[verify]\ncriteria = [1, 11]\n')
    assert cli.main(["--config", str(v), "--out", str(tmp_path / "v")]) == 0
    out = capsys.readouterr().out
    assert "criterion  1 PASS" in out and "criterion 11 PASS" in out
    payload = json.loads((tmp_path / "v" / "results" / "acceptance.json").read_text())
    assert [c["number"] for c in payload["criteria"]] == [1, 11]
    assert (tmp_path / "v" / "timings.json").exists()


def test_threads_env(monkeypatch):
    monkeypatch.setenv("DYSONLAB_THREADS", "1")
    assert cli._workers() == 1
    monkeypatch.setenv("DYSONLAB_THREADS", "x")
    with pytest.raises(cli.ConfigError):
        cli._workers()
