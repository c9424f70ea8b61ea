"""Command-line experiment runner.

::

    dysonlab --config run.toml [--seed N] [--out DIR] [--horizon T] [--verify-level smoke|full]
    dysonlab --resume DIR [--horizon T]

Exit status is 0 on success, 2 when the configuration does not validate and
1 on runtime failures (including corrupt snapshots and failed acceptance
checks).  ``DYSONLAB_THREADS`` caps the number of integration threads.
"""
from __future__ import annotations

import argparse
import copy
import json
import math
import os
import platform
import sys
import time
import traceback
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
import tomli_w

from . import __version__
from .dynamics import (ChamberSpec, DriftSpec, Exterior, LabeledConfiguration, StepPolicy, TrajectoryRecord,
                       evolve_ensemble, gue_truncated_start, resume)
from .errors import BoundaryEscape, CorruptSnapshot, DysonlabError, MinStepReached
from .kernel import KernelSpec
from .observables import (ObservableSpec, autocorrelation, config_hash, counting_variance_curve,
                          counting_variance_increments, ergodicity_gap, estimate_one_point, estimate_two_point,
                          rigidity_statistic, tagged_msd, time_average)
from .rng import SamplerSeed
from .sampling import (PointConfiguration, gue_bulk_scale, gue_tridiagonal_eigenvalues, read_jsonl,
                       sample_ensemble, sample_vandermonde_chamber, write_jsonl)

SCHEMA_VERSION = 1

DEFAULTS = {
    "stream": 0,
    "output_dir": "dysonlab-out",
    "replicas": 1,
    "kernel": {"rho": math.pi},
    "sampler": {"kind": "dpp", "window": [-10.0, 10.0], "n": 512, "intensity": 1.0},
    "model": {"kind": "finite", "particles": 8, "initial": "lattice", "horizon": 1.0,
              "snapshot_every": 0.25, "noise_block": 256},
    "drift": {"beta": 2.0, "cutoff": math.inf, "confinement": "none"},
    "chamber": {"radius": 1.0, "m": 2},
    "step": {"dt": 1e-3, "dt_min": 1e-12, "max_halvings": 40},
    "observable": {"kind": "count-in-window", "a": -1.0, "b": 1.0},
    "analyze": {"estimators": ["one_point"], "bins": 10, "burn_in": 0.0},
    "verify": {"level": "smoke"},
}

EXAMPLE_EVOLVE = """\
experiment = "evolve"
seed = 7
replicas = 3

[model]
kind = "truncated"
particles = 16
initial = "gue"
horizon = 2.0
snapshot_every = 0.5

[sampler]
n = 256

[drift]
cutoff = 12.0

[step]
dt = 0.005
"""


class ConfigError(Exception):
    """Validation failure; the message names the offending field."""


# ------------------------------------------------------------------ config

def _schema():
    return json.loads(resources.files(__package__).joinpath("config_schema.json").read_text())


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def parse_config(text: str) -> dict:
    """Parse and validate TOML text; returns the config with defaults filled in."""
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"TOML syntax: {exc}") from exc
    return validate_config(raw)


def validate_config(raw: dict) -> dict:
    validator = jsonschema.Draft202012Validator(_schema())
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        where = ".".join(str(p) for p in e.absolute_path) or "<top level>"
        raise ConfigError(f"{where}: {e.message}")
    cfg = _merge(DEFAULTS, raw)
    _check_semantics(cfg)
    return cfg


def _check_semantics(cfg):
    def guard(section, fn):
        try:
            return fn()
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{section}: {exc}") from exc

    guard("kernel", lambda: KernelSpec(cfg["kernel"]["rho"]))
    guard("drift", lambda: DriftSpec.from_dict(cfg["drift"]))
    guard("chamber", lambda: ChamberSpec(**cfg["chamber"]))
    guard("step", lambda: StepPolicy(**cfg["step"]))
    guard("observable", lambda: ObservableSpec(**cfg["observable"]))
    guard("seed", lambda: SamplerSeed(cfg["seed"], cfg["stream"]))
    w = cfg["sampler"]["window"]
    if w[1] < w[0]:
        raise ConfigError("sampler.window: lower end exceeds upper end")
    m = cfg["model"]
    if cfg["experiment"] == "evolve":
        if m["kind"] == "truncated" and not math.isfinite(cfg["drift"]["cutoff"]):
            raise ConfigError("drift.cutoff: the truncated model needs a finite cutoff")
        if m["kind"] == "finite" and math.isfinite(cfg["drift"]["cutoff"]):
            raise ConfigError("drift.cutoff: the finite model sums all pairs (leave cutoff infinite)")
        if m["kind"] == "chamber" and m["initial"] not in ("stationary", "spread"):
            raise ConfigError("model.initial: chamber runs start 'stationary' or 'spread'")
        if m["kind"] != "chamber" and m["initial"] in ("stationary", "spread"):
            raise ConfigError(f"model.initial: {m['initial']!r} applies to chamber runs only")
        if m["initial"] == "dpp" and "interior_window" not in m:
            raise ConfigError("model.interior_window: required when initial = 'dpp'")


def dump_config(cfg: dict) -> str:
    return tomli_w.dumps(cfg)


def _workers():
    cap = os.environ.get("DYSONLAB_THREADS")
    n = os.cpu_count() or 1
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            raise ConfigError(f"DYSONLAB_THREADS: expected a positive integer, got {cap!r}")
    return n


# ---------------------------------------------------------------- outputs

def _fresh_dir(path: Path) -> Path:
    """``path`` if unused, else the first free ``path/run-NNN``: earlier artifacts are never touched."""
    if not path.exists() or not any(path.iterdir()):
        path.mkdir(parents=True, exist_ok=True)
        return path
    k = 1
    while (path / f"run-{k:03d}").exists():
        k += 1
    out = path / f"run-{k:03d}"
    out.mkdir(parents=True)
    return out


def _write_estimate(out: Path, name: str, est, prov: dict):
    res = out / "results"
    res.mkdir(exist_ok=True)
    (res / f"{name}.csv").write_text(est.to_csv(prov))
    (res / f"{name}.json").write_text(est.to_json(prov) + "\n")


def _versions():
    import numba
    import scipy
    return {"dysonlab": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "numba": numba.__version__}


def compare_outputs(a, b) -> bool:
    """Whether two run directories hold byte-identical artifacts (manifest excluded)."""
    a, b = Path(a), Path(b)
    fa = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file() and p.name != "manifest.json")
    fb = sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file() and p.name != "manifest.json")
    return fa == fb and all((a / p).read_bytes() == (b / p).read_bytes() for p in fa)


# ------------------------------------------------------------- experiments

def _kernel(cfg):
    return KernelSpec(cfg["kernel"]["rho"])


def _base_seed(cfg):
    return SamplerSeed(cfg["seed"], cfg["stream"])


def _sample(cfg, out: Path, prov):
    s = cfg["sampler"]
    cs = sample_ensemble(s["kind"], cfg["replicas"], tuple(s["window"]), _base_seed(cfg), _kernel(cfg),
                         n=s["n"], mesh=s.get("mesh"), intensity=s["intensity"])
    res = out / "results"
    res.mkdir(exist_ok=True)
    write_jsonl(cs, res / "configurations.jsonl")
    _write_estimate(out, "one_point", estimate_one_point(cs, cfg["analyze"]["bins"]), prov)
    return {"configurations": len(cs), "mean_count": float(np.mean([len(c) for c in cs]))}


def _initial(cfg, k):
    """Initial configuration (and exterior) of replica ``k``."""
    m, spec = cfg["model"], _kernel(cfg)
    seed = _base_seed(cfg).replica(k)
    n = m["particles"]
    if m["kind"] == "chamber":
        ch = cfg["chamber"]
        if m["initial"] == "spread":
            x = np.linspace(-ch["radius"], ch["radius"], ch["m"] + 2)[1:-1]
        else:
            x = sample_vandermonde_chamber(ch["m"], ch["radius"], 1, seed)[0]
        return LabeledConfiguration(x), None
    if m["initial"] == "lattice":
        x = (np.arange(n) - (n - 1) / 2) / spec.intensity
        if m["kind"] == "truncated":
            raise ConfigError("model.initial: the truncated model starts from 'gue' or 'dpp'")
        return LabeledConfiguration(x), None
    if m["initial"] == "gue" and m["kind"] == "finite":
        if cfg["sampler"]["n"] != n:
            raise ConfigError("sampler.n: must equal model.particles for a GUE start of the finite model")
        x = np.sort(gue_tridiagonal_eigenvalues(n, seed)) * gue_bulk_scale(n, spec)
        return LabeledConfiguration(x), None
    if m["initial"] == "gue":
        try:
            return gue_truncated_start(n, cfg["drift"]["cutoff"], cfg["sampler"]["n"], seed, spec)
        except ValueError as exc:
            raise ConfigError(f"sampler.n: {exc}") from exc
    # dpp start: interior window points move, the rest of the sample is frozen
    lo, hi = m["interior_window"]
    c = sample_ensemble("dpp", 1, tuple(cfg["sampler"]["window"]), seed, spec, mesh=cfg["sampler"].get("mesh"))[0]
    inner = c.points[(c.points > lo) & (c.points < hi)]
    if inner.size == 0:
        raise ConfigError("model.interior_window: no sampled points fall inside it")
    ext = PointConfiguration(c.points[(c.points <= lo) | (c.points >= hi)], c.window)
    if m["kind"] == "finite":
        return LabeledConfiguration(inner), None
    return LabeledConfiguration(inner), Exterior.from_configuration(ext, (lo, hi))


def _evolve(cfg, out: Path, prov):
    m = cfg["model"]
    starts = [_initial(cfg, k) for k in range(cfg["replicas"])]
    inits = [s[0] for s in starts]
    exts = [s[1] for s in starts] if m["kind"] == "truncated" else None
    if m["kind"] != "chamber" and len({len(c) for c in inits}) > 1:
        raise ConfigError("model.interior_window: replicas start with different particle counts; use initial = 'gue'")
    spec = ChamberSpec(**cfg["chamber"]) if m["kind"] == "chamber" else DriftSpec.from_dict(cfg["drift"])
    seeds = [_base_seed(cfg).replica(k).replica(1) for k in range(cfg["replicas"])]
    recs = evolve_ensemble(m["kind"], inits, spec, StepPolicy(**cfg["step"]), m["horizon"], m["snapshot_every"],
                           seeds, exteriors=exts, snapshot_times=m.get("snapshot_times"),
                           noise_block=m["noise_block"], workers=_workers())
    rows = ["trajectory,particles,snapshots,final_time,escaped"]
    for k, r in enumerate(recs):
        r.meta["config_hash"] = prov["config_hash"]
        r.save(out / "trajectories" / f"{k:04d}")
        rows.append(f"{k:04d},{len(r.positions[0])},{r.n_snapshots},{r.times[-1]!r},{str(r.escaped).lower()}")
    res = out / "results"
    res.mkdir(exist_ok=True)
    (res / "trajectories.csv").write_text("# " + json.dumps(prov, sort_keys=True) + "\n" + "\n".join(rows) + "\n")
    return {"trajectories": len(recs), "escaped": sum(r.escaped for r in recs)}


def _analyze(cfg, out: Path, prov):
    a = cfg["analyze"]
    src = Path(a["input"]) if a.get("input") else None
    configs, trajs = None, None
    if src is not None:
        jl = src / "results" / "configurations.jsonl"
        if jl.exists():
            configs = read_jsonl(jl)
        tdir = src / "trajectories"
        if tdir.is_dir():
            trajs = [TrajectoryRecord.load(p) for p in sorted(tdir.iterdir()) if p.is_dir()]
        if configs is None and trajs is None:
            raise ConfigError(f"analyze.input: no configurations or trajectories under {src}")
    need_configs = {"one_point", "two_point", "counting_variance", "variance_increments", "rigidity",
                    "ergodicity_gap"}
    if configs is None and need_configs & set(a["estimators"]):
        s = cfg["sampler"]
        configs = sample_ensemble(s["kind"], cfg["replicas"], tuple(s["window"]), _base_seed(cfg), _kernel(cfg),
                                  n=s["n"], mesh=s.get("mesh"), intensity=s["intensity"])
    obs = ObservableSpec(**cfg["observable"])
    summary = {}
    for name in a["estimators"]:
        if name in ("tagged_msd", "ergodicity_gap", "autocorrelation") and not trajs:
            raise ConfigError(f"analyze.estimators: {name} needs trajectories in analyze.input")
        try:
            est = _estimate(name, a, configs, trajs, obs)
        except ValueError as exc:
            raise ConfigError(f"analyze.{name}: {exc}") from exc
        _write_estimate(out, name, est, prov)
        summary[name] = "ok"
    return summary


def _estimate(name, a, configs, trajs, obs):
    if name == "one_point":
        return estimate_one_point(configs, a["bins"])
    elif name == "two_point":
        return estimate_two_point(configs, _required(a, "separations"))
    elif name == "counting_variance":
        return counting_variance_curve(configs, _required(a, "radii"))
    elif name == "variance_increments":
        return counting_variance_increments(configs, _required(a, "radii"))
    elif name == "rigidity":
        return rigidity_statistic(configs, _required(a, "interior"), _required(a, "taper_widths"))
    elif name == "tagged_msd":
        tag = a.get("tag", len(trajs[0].positions[0]) // 2)
        return tagged_msd(trajs, tag, _required(a, "times"))
    elif name == "ergodicity_gap":
        return ergodicity_gap(trajs[0], configs, obs, a["burn_in"])
    else:
        return autocorrelation(time_average(trajs[0], obs, a["burn_in"]), _required(a, "lags"))


def _required(section, key):
    if key not in section:
        raise ConfigError(f"analyze.{key}: required by the selected estimators")
    return section[key]


def _verify(cfg, out: Path, prov):
    from .acceptance import run_all
    v = cfg["verify"]

    def report(r):
        print(r.line(), f"[{r.seconds:.1f}s]", flush=True)

    results = run_all(v["level"], cfg["seed"], only=v.get("criteria"), progress=report)
    res = out / "results"
    res.mkdir(exist_ok=True)
    lines = ["# " + json.dumps(prov, sort_keys=True), "criterion,name,passed,summary"]
    lines += [f"{r.number},{r.name},{str(r.passed).lower()},\"{r.summary.replace(chr(34), chr(39))}\""
              for r in results]
    (res / "acceptance.csv").write_text("\n".join(lines) + "\n")
    payload = {"provenance": prov, "level": v["level"],
               "criteria": [{k: x for k, x in r.to_dict().items() if k != "seconds"} for r in results]}
    (res / "acceptance.json").write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n")
    (out / "timings.json").write_text(json.dumps({str(r.number): round(r.seconds, 2) for r in results}) + "\n")
    failed = [r.number for r in results if not r.passed]
    if failed:
        raise _ChecksFailed(f"acceptance criteria failed: {failed}")
    return {"passed": len(results)}


class _ChecksFailed(Exception):
    pass


EXPERIMENTS = {"sample": _sample, "evolve": _evolve, "analyze": _analyze, "verify": _verify}


# -------------------------------------------------------------------- main

def _origin(exc) -> str:
    frames = [f for f in traceback.extract_tb(exc.__traceback__) if f"{os.sep}dysonlab{os.sep}" in f.filename]
    return Path(frames[-1].filename).stem if frames else "cli"


def _runtime_message(exc) -> str:
    where = _origin(exc)
    t = getattr(exc, "time", None)
    at = f" at t={t:.6g}" if isinstance(t, float) else ""
    return f"runtime error in {where}{at}: {type(exc).__name__}: {exc}"


def run(config_path, seed=None, out=None, horizon=None, verify_level=None) -> int:
    try:
        text = Path(config_path).read_text()
    except OSError as exc:
        print(f"config error: cannot read {config_path}: {exc}", file=sys.stderr)
        return 2
    try:
        raw = tomllib.loads(text)
        if seed is not None:
            raw["seed"] = seed
        if out is not None:
            raw["output_dir"] = str(out)
        if horizon is not None:
            raw.setdefault("model", {})["horizon"] = horizon
        if verify_level is not None:
            raw.setdefault("verify", {})["level"] = verify_level
        cfg = validate_config(raw)
    except tomllib.TOMLDecodeError as exc:
        print(f"config error: TOML syntax: {exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    # where results land is not part of the experiment
    outdir = _fresh_dir(Path(cfg.pop("output_dir")))
    chash = config_hash(cfg)
    prov = {"config_hash": chash, "seed": cfg["seed"], "stream": cfg["stream"]}
    (outdir / "config.toml").write_text(dump_config(cfg))
    t0 = time.perf_counter()
    status, summary, error = 0, {}, None
    try:
        summary = EXPERIMENTS[cfg["experiment"]](cfg, outdir, prov)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        status, error = 2, str(exc)
    except _ChecksFailed as exc:
        print(str(exc), file=sys.stderr)
        status, error = 1, str(exc)
    except (DysonlabError, ValueError, RuntimeError, OSError, FloatingPointError) as exc:
        error = _runtime_message(exc)
        print(error, file=sys.stderr)
        status = 1
    manifest = {
        "schema_version": SCHEMA_VERSION, "experiment": cfg["experiment"], "config_hash": chash,
        "seed": {"seed": cfg["seed"], "stream": cfg["stream"]}, "versions": _versions(),
        "wall_time_s": round(time.perf_counter() - t0, 3), "exit_status": status, "summary": summary,
        "error": error, "outputs": sorted(str(p.relative_to(outdir)) for p in outdir.rglob("*") if p.is_file()),
    }
    (outdir / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n")
    print(f"{cfg['experiment']}: wrote {outdir} (exit {status})")
    return status


def resume_dir(directory, additional_horizon: float = 0.0) -> int:
    """Continue every trajectory under ``directory``, appending new snapshots in place."""
    d = Path(directory)
    dirs = [d] if (d / "metadata.json").exists() else sorted(p for p in (d / "trajectories").glob("*") if p.is_dir())
    if not dirs:
        print(f"runtime error in cli: no trajectory found under {d}", file=sys.stderr)
        return 1
    if not additional_horizon >= 0:
        print("config error: --horizon: must be nonnegative when resuming", file=sys.stderr)
        return 2
    try:
        # load (and checksum) everything first so a bad record leaves all others untouched
        recs = [TrajectoryRecord.load(p) for p in dirs]
        for p, rec in zip(dirs, recs):
            n0 = rec.n_snapshots
            cont = resume(rec, additional_horizon)
            cont._append(p, range(n0, cont.n_snapshots))
            print(f"{p}: {cont.n_snapshots - n0} new snapshots, t={cont.times[-1]:.6g}")
    except CorruptSnapshot as exc:
        print(f"runtime error in dynamics: corrupt snapshot: {exc}", file=sys.stderr)
        return 1
    except (MinStepReached, BoundaryEscape, DysonlabError, ValueError, OSError) as exc:
        print(_runtime_message(exc), file=sys.stderr)
        return 1
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="dysonlab", description=__doc__.split("\n\n")[0])
    p.add_argument("--config", type=Path, help="TOML experiment configuration")
    p.add_argument("--seed", type=int, help="unsigned 64-bit seed (overrides the file)")
    p.add_argument("--out", type=Path, help="output directory (overrides the file)")
    p.add_argument("--resume", type=Path, metavar="DIR", help="continue the trajectories in DIR")
    p.add_argument("--horizon", type=float, help="run length, or extra length with --resume")
    p.add_argument("--verify-level", choices=("smoke", "full"), help="acceptance level for verify runs")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.resume is not None:
        if args.config is not None:
            print("config error: --resume and --config are exclusive", file=sys.stderr)
            return 2
        return resume_dir(args.resume, args.horizon or 0.0)
    if args.config is None:
        print("config error: --config is required (or --resume DIR)", file=sys.stderr)
        return 2
    return run(args.config, args.seed, args.out, args.horizon, args.verify_level)


if __name__ == "__main__":
    sys.exit(main())
