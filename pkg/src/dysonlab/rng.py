"""Seeded random streams.

Every sampler and trajectory owns its own ``numpy.random.Generator`` built
from a ``(seed, stream)`` pair, so results never depend on execution order.
Replica ``k`` of an ensemble uses ``SeedSequence([seed, stream, k])``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_U64 = 2**64


@dataclass(frozen=True)
class SamplerSeed:
    seed: int
    stream: int = 0

    def __post_init__(self):
        for name in ("seed", "stream"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or not 0 <= int(v) < _U64:
                raise ValueError(f"{name} must be an unsigned 64-bit integer, got {v!r}")

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(self.sequence()))

    def sequence(self) -> np.random.SeedSequence:
        return np.random.SeedSequence([int(self.seed), int(self.stream)])

    def replica(self, k: int) -> "SamplerSeed":
        """Seed of replica ``k``; distinct replicas get statistically independent streams."""
        child = np.random.SeedSequence([int(self.seed), int(self.stream), int(k)])
        return SamplerSeed(int(self.seed), int(child.generate_state(2, np.uint64)[0]))

    def to_dict(self) -> dict:
        return {"seed": int(self.seed), "stream": int(self.stream)}


def as_generator(seed) -> np.random.Generator:
    """Accept a SamplerSeed, a Generator or a plain int."""
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, SamplerSeed):
        return seed.generator()
    if isinstance(seed, (int, np.integer)):
        return SamplerSeed(int(seed)).generator()
    raise TypeError(f"cannot build a generator from {type(seed).__name__}")


class NoiseStream:
    """Gaussian increments for one trajectory, drawn in blocks.

    The state is the bit-generator state at the last block draw plus the
    number of rows consumed from that block, which is enough to resume a run
    bit-exactly.
    """

    def __init__(self, seed, width: int, block: int = 512):
        self.gen = as_generator(seed)
        self.width = int(width)
        self.block = int(block)
        self._draw()

    def _draw(self):
        self._state = self.gen.bit_generator.state
        self.buf = self.gen.standard_normal((self.block, self.width))
        self.pos = 0

    def refill(self):
        self._draw()

    def take(self) -> np.ndarray:
        if self.pos >= self.block:
            self._draw()
        row = self.buf[self.pos]
        self.pos += 1
        return row

    def state(self) -> dict:
        return {"bit_generator": _jsonable(self._state), "block": self.block,
                "width": self.width, "pos": int(self.pos)}

    @classmethod
    def from_state(cls, state: dict) -> "NoiseStream":
        bg_state = state["bit_generator"]
        bg = getattr(np.random, bg_state["bit_generator"])()
        bg.state = bg_state
        self = cls.__new__(cls)
        self.gen = np.random.Generator(bg)
        self.width = int(state["width"])
        self.block = int(state["block"])
        self._draw()
        self.pos = int(state["pos"])
        return self


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.integer):
        return int(obj)
    return obj
