"""Integrators for the three particle systems.

``finite``
    N-particle Dyson Brownian motion,
    ``dX_i = dB_i + (beta/2) sum_{j != i} dt / (X_i - X_j) [- (beta/2N) dt / X_i]``.
``truncated``
    Interior particles of an infinite system with the drift sum cut off at
    distance ``cutoff`` and the particles outside an interior window frozen.
``chamber``
    ``m`` particles in ``[-R, R]`` with drift ``sum_{j != i} 1 / (x_i - x_j)``
    and normal reflection at ``-R`` and ``R``; its stationary law is the
    normalised squared Vandermonde density on the ordered chamber.

All three use explicit Euler--Maruyama.  A proposal that breaks strict
ordering is retried with the step halved and the *same* Gaussian draw
rescaled by ``sqrt(h'/h)``; accepted time advances by the accepted step.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import _integrator as _k
from . import __version__
from .errors import BoundaryEscape, CollisionError, CorruptSnapshot, MinStepReached
from .rng import NoiseStream, SamplerSeed
from .sampling import PointConfiguration

__all__ = [
    "LabeledConfiguration", "DriftSpec", "StepPolicy", "ChamberSpec",
    "pairwise_drift", "drift_vector", "step_dyson_finite", "step_truncated_isde",
    "step_reflected_chamber", "fold", "evolve", "evolve_ensemble",
    "TrajectoryRecord", "Exterior", "gue_truncated_start", "resume",
]

MODELS = ("finite", "truncated", "chamber")


@dataclass(frozen=True, eq=False)
class LabeledConfiguration:
    positions: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        p = np.array(self.positions, dtype=float).ravel()
        if p.size > 1 and np.any(np.diff(p) <= 0):
            raise ValueError("positions must be strictly increasing")
        if self.time < 0:
            raise ValueError("time must be nonnegative")
        p.setflags(write=False)
        object.__setattr__(self, "positions", p)
        object.__setattr__(self, "time", float(self.time))

    def __len__(self):
        return self.positions.size

    def __eq__(self, other):
        if not isinstance(other, LabeledConfiguration):
            return NotImplemented
        return self.time == other.time and np.array_equal(self.positions, other.positions)


@dataclass(frozen=True)
class DriftSpec:
    beta: float = 2.0
    cutoff: float = math.inf
    confinement: str = "none"

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError(f"beta must be positive, got {self.beta!r}")
        if not self.cutoff > 0:
            raise ValueError(f"cutoff must be positive, got {self.cutoff!r}")
        if self.confinement not in ("none", "as-written"):
            raise ValueError(f"confinement must be 'none' or 'as-written', got {self.confinement!r}")

    def to_dict(self):
        return {"beta": self.beta, "cutoff": "inf" if math.isinf(self.cutoff) else self.cutoff,
                "confinement": self.confinement}

    @classmethod
    def from_dict(cls, d):
        c = d.get("cutoff", math.inf)
        return cls(float(d.get("beta", 2.0)), math.inf if c == "inf" else float(c),
                   d.get("confinement", "none"))


@dataclass(frozen=True)
class StepPolicy:
    dt: float = 1e-3
    dt_min: float = 1e-12
    max_halvings: int = 40

    def __post_init__(self):
        if not (self.dt > 0 and self.dt_min > 0):
            raise ValueError("dt and dt_min must be positive")
        if self.dt_min > self.dt:
            raise ValueError("dt_min must not exceed dt")
        if self.max_halvings < 1:
            raise ValueError("max_halvings must be at least 1")

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class ChamberSpec:
    radius: float = 1.0
    m: int = 2

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"radius must be positive, got {self.radius!r}")
        if self.m < 1:
            raise ValueError(f"m must be at least 1, got {self.m!r}")

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True, eq=False)
class Exterior:
    """Frozen particles of the truncated model and the interior window they enclose."""

    left: np.ndarray
    right: np.ndarray
    window: tuple

    @classmethod
    def from_configuration(cls, exterior: PointConfiguration, interior_window=None, interior=None):
        pts = exterior.points
        if interior_window is None:
            if interior is None or len(interior) == 0:
                raise ValueError("need interior positions or an interior window")
            i = np.searchsorted(pts, interior[0])
            j = np.searchsorted(pts, interior[-1], "right")
            if i != j:
                raise ValueError("exterior points interleave the interior")
            lo = pts[i - 1] if i > 0 else -math.inf
            hi = pts[j] if j < pts.size else math.inf
        else:
            lo, hi = (float(v) for v in interior_window)
        inside = (pts > lo) & (pts < hi)
        if np.any(inside):
            raise ValueError("exterior points lie inside the interior window")
        return cls(pts[pts <= lo].copy(), pts[pts >= hi].copy(), (float(lo), float(hi)))


def gue_truncated_start(n_interior: int, margin: float, n_gue: int, seed, spec=None):
    """Central ``n_interior`` points of a bulk-rescaled GUE spectrum plus their frozen exterior.

    The exterior keeps the points within ``margin`` of the interior span;
    farther points never enter a drift cut off at ``margin`` or less.
    Returns ``(LabeledConfiguration, Exterior)``.
    """
    from .kernel import KernelSpec
    from .sampling import gue_bulk_scale, gue_tridiagonal_eigenvalues
    spec = spec or KernelSpec()
    x = np.sort(gue_tridiagonal_eigenvalues(n_gue, seed)) * gue_bulk_scale(n_gue, spec)
    i0 = int(np.searchsorted(x, 0.0)) - n_interior // 2
    if i0 < 1 or i0 + n_interior >= x.size:
        raise ValueError(f"a spectrum of {n_gue} points cannot host {n_interior} interior points")
    inner = x[i0: i0 + n_interior]
    left = x[(x < inner[0]) & (x >= inner[0] - margin)]
    right = x[(x > inner[-1]) & (x <= inner[-1] + margin)]
    return LabeledConfiguration(inner), Exterior(left, right, (float(left[-1]), float(right[0])))


# ------------------------------------------------------------------ drift

def pairwise_drift(i: int, config, spec: DriftSpec, exterior=None) -> float:
    """Drift ``(beta/2) sum_{j != i, |x_i - x_j| < cutoff} 1/(x_i - x_j)`` on particle ``i``.

    Exact summation over the other particles (and the frozen ``exterior``
    points, if given), plus the confinement term when requested.
    """
    x = _positions(config)
    if not 0 <= i < x.size:
        raise IndexError(f"particle index {i} out of range")
    others = np.delete(x, i)
    if exterior is not None:
        others = np.concatenate([others, _positions(exterior)])
    d = x[i] - others
    if np.any(d == 0):
        raise CollisionError(f"particle {i} collides with another particle")
    d = d[np.abs(d) < spec.cutoff]
    # separate sums in magnitude order: mirror images cancel exactly
    push = np.sort(1.0 / d[d > 0])[::-1].sum() - np.sort(-1.0 / d[d < 0])[::-1].sum()
    out = 0.5 * spec.beta * float(push)
    if spec.confinement == "as-written":
        out -= spec.beta / (2 * x.size) / x[i]
    return out


def drift_vector(config, spec: DriftSpec, exterior=None) -> np.ndarray:
    """Drift on every particle, vectorised over pairs."""
    x = _positions(config)
    others = x if exterior is None else np.concatenate([x, _positions(exterior)])
    d = x[:, None] - others[None, :]
    np.fill_diagonal(d[:, : x.size], np.inf)
    if np.any(d == 0):
        raise CollisionError("two particles coincide")
    inv = np.where(np.abs(d) < spec.cutoff, 1.0 / d, 0.0)
    out = 0.5 * spec.beta * inv.sum(axis=1)
    if spec.confinement == "as-written":
        out -= spec.beta / (2 * x.size) / x
    return out


def fold(x, radius: float):
    """Reflect positions into ``[-radius, radius]`` by repeated folding."""
    x = np.array(x, dtype=float)
    period = 4.0 * radius
    y = np.mod(x + radius, period)
    y = np.where(y > 2 * radius, period - y, y) - radius
    return y if y.ndim else float(y)


def _positions(config) -> np.ndarray:
    if isinstance(config, LabeledConfiguration):
        return config.positions
    if isinstance(config, PointConfiguration):
        return config.points
    return np.asarray(config, dtype=float)


# ---------------------------------------------------------- batch engine

class _Batch:
    """State of ``B`` trajectories advanced together by the compiled kernel."""

    def __init__(self, model, X, T, spec, policy, streams, exteriors=None, noise_scale=1.0, workers=1):
        if model not in MODELS:
            raise ValueError(f"unknown model {model!r}")
        self.model = model
        self.X = np.ascontiguousarray(X, dtype=float)
        B, N = self.X.shape
        self.T = np.asarray(T, dtype=float).copy()
        self.policy = policy
        self.streams = streams
        self.noise_scale = float(noise_scale)
        self.workers = max(1, int(workers))
        K = streams[0].block
        self.noise = np.empty((B, K, N))
        self.pos = np.empty(B, dtype=np.int64)
        for b, s in enumerate(streams):
            self.noise[b] = s.buf
            self.pos[b] = s.pos
        self.status = np.zeros(B, dtype=np.int64)
        if model == "chamber":
            self.half_beta, self.cutoff, self.confine, self.radius = 1.0, math.inf, 0.0, float(spec.radius)
        else:
            self.half_beta = 0.5 * spec.beta
            self.cutoff = float(spec.cutoff)
            self.confine = spec.beta / (2 * N) if spec.confinement == "as-written" else 0.0
            self.radius = 0.0
        self.lo = np.full(B, -math.inf)
        self.hi = np.full(B, math.inf)
        ml = max([e.left.size for e in exteriors] + [1]) if exteriors else 1
        mr = max([e.right.size for e in exteriors] + [1]) if exteriors else 1
        self.left = np.zeros((B, ml))
        self.right = np.zeros((B, mr))
        self.nleft = np.zeros(B, dtype=np.int64)
        self.nright = np.zeros(B, dtype=np.int64)
        if exteriors:
            for b, e in enumerate(exteriors):
                self.left[b, : e.left.size] = e.left
                self.right[b, : e.right.size] = e.right
                self.nleft[b], self.nright[b] = e.left.size, e.right.size
                self.lo[b], self.hi[b] = e.window

    def _advance(self, t_stop, rows):
        _k.advance(self.X[rows], self.T[rows], t_stop, self.noise[rows], self.pos[rows], self.left[rows],
                   self.nleft[rows], self.right[rows], self.nright[rows], self.lo[rows], self.hi[rows],
                   self.half_beta, self.cutoff, self.confine, self.radius, self.policy.dt,
                   self.policy.dt_min, int(self.policy.max_halvings), self.noise_scale, self.status[rows])

    def run_to(self, t_stop: float, refill: bool = True):
        B = self.X.shape[0]
        # rows are independent, so any split gives bit-identical results
        chunks = [slice(a, b) for a, b in _split(B, min(self.workers, B))]
        while True:
            if len(chunks) == 1:
                self._advance(float(t_stop), chunks[0])
            else:
                with ThreadPoolExecutor(len(chunks)) as pool:
                    list(pool.map(lambda c: self._advance(float(t_stop), c), chunks))
            empty = np.flatnonzero(self.status == _k.REFILL)
            if empty.size == 0:
                break
            if not refill:
                self.status[empty] = _k.OK
                break
            for b in empty:
                self.streams[b].refill()
                self.noise[b] = self.streams[b].buf
                self.pos[b] = 0
                self.status[b] = _k.OK

    def rng_state(self, b: int) -> dict:
        s = self.streams[b]
        s.pos = int(self.pos[b])
        return s.state()


def _split(n, k):
    edges = np.linspace(0, n, k + 1).astype(int)
    return zip(edges[:-1], edges[1:])


def _raise_status(batch: _Batch, rows=None):
    rows = range(batch.X.shape[0]) if rows is None else rows
    for b in rows:
        if batch.status[b] == _k.MINSTEP:
            raise MinStepReached(f"ordering not restored at dt_min (trajectory {b}, t={batch.T[b]:.6g})",
                                 state=batch.X[b].copy(), time=float(batch.T[b]), rows=[b])
        if batch.status[b] == _k.ESCAPE:
            raise BoundaryEscape(f"particle left the interior window (trajectory {b}, t={batch.T[b]:.6g})",
                                 state=batch.X[b].copy(), time=float(batch.T[b]), rows=[b])


def _single_step(model, config, spec, policy, seed, exterior=None, noise=None):
    x = _positions(config)
    t0 = config.time if isinstance(config, LabeledConfiguration) else 0.0
    if noise is None:
        stream = NoiseStream(seed, x.size, block=1)
    else:
        stream = NoiseStream(0, x.size, block=1)
        stream.buf[0] = np.asarray(noise, dtype=float)
    batch = _Batch(model, x[None, :].copy(), [t0], spec, policy, [stream],
                   exteriors=[exterior] if exterior is not None else None)
    # one noise row, no refill: exactly one accepted (possibly halved) step
    batch.run_to(t0 + policy.dt, refill=False)
    _raise_status(batch)
    return LabeledConfiguration(batch.X[0].copy(), batch.T[0])


def step_dyson_finite(config: LabeledConfiguration, spec: DriftSpec, policy: StepPolicy, seed,
                      noise=None) -> LabeledConfiguration:
    """One Euler--Maruyama step of finite Dyson Brownian motion.

    ``noise`` replaces the Gaussian draw (a vector of standard normals, or
    zeros for the deterministic test mode).
    """
    return _single_step("finite", config, spec, policy, seed, noise=noise)


def step_truncated_isde(config: LabeledConfiguration, exterior, spec: DriftSpec, policy: StepPolicy,
                        seed, interior_window=None, noise=None) -> LabeledConfiguration:
    """One step of the interior particles with the exterior frozen.

    ``exterior`` is a :class:`PointConfiguration` (or a prepared
    :class:`Exterior`).  Raises :class:`BoundaryEscape` if a particle leaves
    the interior window.
    """
    ext = _as_exterior(exterior, interior_window, config)
    return _single_step("truncated", config, spec, policy, seed, exterior=ext, noise=noise)


def step_reflected_chamber(config: LabeledConfiguration, chamber: ChamberSpec, policy: StepPolicy, seed,
                           noise=None) -> LabeledConfiguration:
    x = _positions(config)
    if x.size != chamber.m:
        raise ValueError(f"expected {chamber.m} particles, got {x.size}")
    if np.any(np.abs(x) > chamber.radius):
        raise ValueError("configuration lies outside the chamber")
    return _single_step("chamber", config, chamber, policy, seed, noise=noise)


def _as_exterior(exterior, interior_window, config):
    if exterior is None:
        return None
    if isinstance(exterior, Exterior):
        return exterior
    return Exterior.from_configuration(exterior, interior_window, _positions(config))


# ------------------------------------------------------------ trajectories

@dataclass(eq=False)
class TrajectoryRecord:
    """Snapshots of one trajectory plus what is needed to continue it."""

    model: str
    spec: dict
    policy: dict
    seed: dict
    times: list = field(default_factory=list)
    positions: list = field(default_factory=list)
    rng_states: list = field(default_factory=list)
    exterior: dict | None = None
    schedule: dict = field(default_factory=dict)
    escaped: bool = False
    meta: dict = field(default_factory=dict)

    @property
    def n_snapshots(self):
        return len(self.times)

    def array(self) -> np.ndarray:
        return np.asarray(self.positions)

    def configuration(self, k: int) -> LabeledConfiguration:
        return LabeledConfiguration(self.positions[k], self.times[k])

    def unlabeled(self, k: int) -> np.ndarray:
        """Snapshot ``k`` as an unlabeled point set (frozen exterior included)."""
        x = np.asarray(self.positions[k])
        if self.exterior:
            x = np.concatenate([self.exterior["left"], x, self.exterior["right"]])
        return x

    # persistence -------------------------------------------------------
    def save(self, directory):
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        meta = {
            "schema_version": 1, "code_version": __version__, "model": self.model,
            "spec": self.spec, "policy": self.policy, "seed": self.seed,
            "schedule": self.schedule, "escaped": self.escaped, "meta": self.meta,
            "exterior": self.exterior,
        }
        (d / "metadata.json").write_text(json.dumps(meta, sort_keys=True, indent=1) + "\n")
        for name in ("snapshots.bin", "rng_states.jsonl", "index.csv"):
            p = d / name
            if p.exists():
                p.unlink()
        self._append(d, range(self.n_snapshots))

    def _append(self, d: Path, ks):
        idx_path = d / "index.csv"
        new = not idx_path.exists()
        snap = d / "snapshots.bin"
        offset = snap.stat().st_size if snap.exists() else 0
        with open(snap, "ab") as fb, open(d / "rng_states.jsonl", "a") as fr, \
                open(idx_path, "a", newline="") as fi:
            w = csv.writer(fi)
            if new:
                w.writerow(["snapshot", "time", "offset", "nbytes", "checksum"])
            for k in ks:
                x = np.asarray(self.positions[k], dtype="<f8")
                rec = struct.pack("<Q", x.size) + struct.pack("<d", self.times[k]) + x.tobytes()
                rng_line = json.dumps(self.rng_states[k], sort_keys=True)
                fb.write(rec)
                fr.write(rng_line + "\n")
                w.writerow([k, repr(float(self.times[k])), offset, len(rec),
                            _hash64(rec + rng_line.encode())])
                offset += len(rec)

    @classmethod
    def load(cls, directory) -> "TrajectoryRecord":
        d = Path(directory)
        try:
            meta = json.loads((d / "metadata.json").read_text())
            with open(d / "index.csv", newline="") as fh:
                rows = list(csv.DictReader(fh))
            blob = (d / "snapshots.bin").read_bytes()
            rng_lines = (d / "rng_states.jsonl").read_text().splitlines()
        except (OSError, ValueError) as exc:
            raise CorruptSnapshot(f"cannot read trajectory at {d}: {exc}") from exc
        if len(rng_lines) < len(rows):
            raise CorruptSnapshot("rng state file is shorter than the index")
        rec = cls(meta["model"], meta["spec"], meta["policy"], meta["seed"],
                  exterior=meta.get("exterior"), schedule=meta.get("schedule", {}),
                  escaped=meta.get("escaped", False), meta=meta.get("meta", {}))
        for k, row in enumerate(rows):
            off, nb = int(row["offset"]), int(row["nbytes"])
            chunk = blob[off: off + nb]
            if len(chunk) != nb or _hash64(chunk + rng_lines[k].encode()) != row["checksum"]:
                raise CorruptSnapshot(f"checksum mismatch at snapshot {k} in {d}")
            n = struct.unpack_from("<Q", chunk, 0)[0]
            t = struct.unpack_from("<d", chunk, 8)[0]
            rec.times.append(t)
            rec.positions.append(np.frombuffer(chunk, dtype="<f8", count=n, offset=16).copy())
            rec.rng_states.append(json.loads(rng_lines[k]))
        return rec


def _hash64(data: bytes) -> str:
    return hashlib.blake2b(data, digest_size=8).hexdigest()


def _schedule_times(t0, horizon, snapshot_every, snapshot_times):
    """Snapshot targets strictly after ``t0`` up to ``t0 + horizon``."""
    end = t0 + horizon
    if snapshot_times is not None:
        ts = sorted(float(t) for t in snapshot_times if t0 < t <= end)
    else:
        k0 = int(math.floor(t0 / snapshot_every + 1e-9)) + 1
        ts = []
        k = k0
        while k * snapshot_every <= end * (1 + 1e-12):
            ts.append(min(k * snapshot_every, end))
            k += 1
    if not ts or ts[-1] < end:
        if horizon > 0:
            ts.append(end)
    return ts


def _spec_from_dict(model, d):
    if model == "chamber":
        return ChamberSpec(float(d["radius"]), int(d["m"]))
    return DriftSpec.from_dict(d)


def evolve(model: str, initial: LabeledConfiguration, spec, policy: StepPolicy, horizon: float,
           snapshot_every: float, seed, exterior=None, interior_window=None,
           snapshot_times=None, noise_block: int = 256) -> TrajectoryRecord:
    """Integrate one trajectory and record snapshots.

    Snapshots are taken at multiples of ``snapshot_every`` (or at the given
    ``snapshot_times``) and at the horizon.  Each snapshot stores the noise
    stream state so the run can be resumed bit-exactly with :func:`resume`.
    """
    return evolve_ensemble(model, [initial], spec, policy, horizon, snapshot_every, [seed],
                           exteriors=[exterior] if exterior is not None else None,
                           interior_windows=[interior_window] if interior_window is not None else None,
                           snapshot_times=snapshot_times, noise_block=noise_block,
                           on_escape="raise")[0]


def evolve_ensemble(model, initials, spec, policy, horizon, snapshot_every, seeds, exteriors=None,
                    interior_windows=None, snapshot_times=None, noise_block: int = 256,
                    on_escape: str = "flag", workers: int = 1) -> list:
    """Integrate independent trajectories together.

    With ``on_escape="flag"`` a trajectory that leaves its interior window is
    stopped and marked ``escaped``; the others continue.  Minimum-step
    failures always raise.  ``workers`` threads share the rows; results do
    not depend on it.
    """
    if not horizon >= 0:
        raise ValueError("horizon must be nonnegative")
    if snapshot_times is None and not snapshot_every > 0:
        raise ValueError("snapshot_every must be positive")
    if model not in MODELS:
        raise ValueError(f"unknown model {model!r}")
    initials = [c if isinstance(c, LabeledConfiguration) else LabeledConfiguration(c) for c in initials]
    X = np.array([c.positions for c in initials], dtype=float)
    t0 = initials[0].time
    if any(c.time != t0 for c in initials):
        raise ValueError("ensemble members must share a start time")
    if model == "chamber" and X.shape[1] != spec.m:
        raise ValueError(f"expected {spec.m} particles, got {X.shape[1]}")
    exts = None
    if model == "truncated":
        if exteriors is None:
            raise ValueError("the truncated model needs exterior configurations")
        wins = interior_windows or [None] * len(initials)
        exts = [_as_exterior(e, w, c) for e, w, c in zip(exteriors, wins, initials)]
    seeds = [s if isinstance(s, SamplerSeed) else SamplerSeed(int(s)) for s in seeds]
    streams = [NoiseStream(s, X.shape[1], block=noise_block) for s in seeds]
    records = []
    for b, c in enumerate(initials):
        records.append(TrajectoryRecord(
            model, spec.to_dict(), policy.to_dict(), seeds[b].to_dict(),
            exterior=None if exts is None else {"left": exts[b].left.tolist(),
                                                "right": exts[b].right.tolist(),
                                                "window": list(exts[b].window)},
            schedule={"snapshot_every": snapshot_every,
                      "snapshot_times": None if snapshot_times is None else list(map(float, snapshot_times))}))
    batch = _Batch(model, X, [t0] * len(initials), spec, policy, streams, exteriors=exts, workers=workers)
    for b, r in enumerate(records):
        r.times.append(t0)
        r.positions.append(batch.X[b].copy())
        r.rng_states.append(batch.rng_state(b))
    _run_schedule(batch, records, _schedule_times(t0, horizon, snapshot_every, snapshot_times), on_escape)
    return records


def _run_schedule(batch, records, targets, on_escape):
    for t in targets:
        batch.run_to(t)
        if np.any(batch.status == _k.MINSTEP):
            _raise_status(batch, np.flatnonzero(batch.status == _k.MINSTEP))
        esc = np.flatnonzero(batch.status == _k.ESCAPE)
        if esc.size and on_escape == "raise":
            _raise_status(batch, esc)
        for b, r in enumerate(records):
            if r.escaped:
                continue
            if batch.status[b] == _k.ESCAPE:
                r.escaped = True
                r.meta["escape_time"] = float(batch.T[b])
                continue
            r.times.append(float(batch.T[b]))
            r.positions.append(batch.X[b].copy())
            r.rng_states.append(batch.rng_state(b))


def resume(record: TrajectoryRecord, additional_horizon: float, from_snapshot: int = -1) -> TrajectoryRecord:
    """Continue ``record`` from one of its snapshots.

    Snapshots after ``from_snapshot`` are discarded and regenerated; the
    continuation is bit-identical to an uninterrupted run with the same
    schedule.
    """
    if additional_horizon < 0:
        raise ValueError("additional horizon must be nonnegative")
    if record.escaped:
        raise BoundaryEscape("cannot resume an escaped trajectory")
    k = from_snapshot % record.n_snapshots
    out = TrajectoryRecord(record.model, record.spec, record.policy, record.seed,
                           times=record.times[: k + 1], positions=record.positions[: k + 1],
                           rng_states=record.rng_states[: k + 1], exterior=record.exterior,
                           schedule=record.schedule, meta=dict(record.meta))
    t0 = out.times[-1]
    spec = _spec_from_dict(record.model, record.spec)
    policy = StepPolicy(**record.policy)
    exts = None
    if record.exterior:
        e = record.exterior
        exts = [Exterior(np.array(e["left"]), np.array(e["right"]), tuple(e["window"]))]
    stream = NoiseStream.from_state(out.rng_states[-1])
    batch = _Batch(record.model, np.array([out.positions[-1]]), [t0], spec, policy, [stream], exteriors=exts)
    sched = record.schedule
    end = record.times[-1] if k < record.n_snapshots - 1 else t0
    horizon = (end - t0) + additional_horizon
    targets = _schedule_times(t0, horizon, sched.get("snapshot_every") or 1.0, sched.get("snapshot_times"))
    _run_schedule(batch, [out], targets, "raise")
    return out
