"""Counter-based random streams.

Every random draw in a run comes from a stream identified by a path of
integers below the root seed, e.g. ``(batch, purpose, step, particle)``.
Streams are built from ``SeedSequence(seed, spawn_key=path)`` feeding a
Philox generator, so the numbers a particle sees do not depend on the
order in which particles are processed or on the number of workers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# purpose tags used as the second path component
CUT_DRAWS = 0
INITIAL = 1
RESAMPLE = 2
MUTATE = 3
CHAIN = 4
START = 5
STUDY = 6

_SEED_MASK = (1 << 64) - 1


@dataclass(frozen=True)
class StreamKey:
    """Address of a reproducible random stream."""

    seed: int
    path: tuple = ()

    def __post_init__(self):
        if not isinstance(self.seed, (int, np.integer)) or isinstance(self.seed, bool):
            raise TypeError(f"seed must be an integer, got {type(self.seed).__name__}")
        object.__setattr__(self, "seed", int(self.seed) & _SEED_MASK)
        object.__setattr__(self, "path", tuple(int(p) for p in self.path))

    def child(self, *indices: int) -> "StreamKey":
        return StreamKey(self.seed, self.path + tuple(int(i) for i in indices))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=self.path)
        return np.random.Generator(np.random.Philox(ss))

    def describe(self) -> dict:
        return {"seed": self.seed, "path": list(self.path)}


def as_key(seed_or_key) -> StreamKey:
    if isinstance(seed_or_key, StreamKey):
        return seed_or_key
    if seed_or_key is None:
        raise TypeError("a seed or StreamKey is required")
    return StreamKey(int(seed_or_key))


def as_generator(rng) -> np.random.Generator:
    """Accept a Generator, a StreamKey or an integer seed."""
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, StreamKey):
        return rng.generator()
    if rng is None:
        raise TypeError("an explicit random stream is required")
    return StreamKey(int(rng)).generator()
