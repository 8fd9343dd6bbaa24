"""Named, counter-addressed random streams.

Every stochastic ingredient of a run (weight init, data shuffling, dropout
masks, gaussian input noise, label resampling, attack initialisation) draws
from its own named stream, so switching one noise source on or off never
shifts the values another source sees. Each draw derives a fresh generator
from (seed, stream, counter) and ticks the counter, which makes replay from
any point exact and keeps streams independent by construction.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

# Stream name -> spawn-key id. The first six carry all run stochasticity;
# data-gen and eval serve dataset construction and evaluation-time noise.
STREAMS = {
    "data-shuffle": 0,
    "dropout": 1,
    "gaussian-noise": 2,
    "mc-labels": 3,
    "pgd-init": 4,
    "weight-init": 5,
    "data-gen": 6,
    "eval": 7,
}


class Rng:
    """One named random stream with explicit counter state.

    Identical (seed, stream, counter) always reproduce the same values;
    distinct stream names never share state.
    """

    def __init__(self, seed: int, stream: str, counter: int = 0):
        if stream not in STREAMS:
            raise ValueError(f"unknown rng stream {stream!r}; expected one of {sorted(STREAMS)}")
        if seed < 0 or counter < 0:
            raise ValueError("seed and counter must be non-negative")
        self.seed = int(seed)
        self.stream = stream
        self.counter = int(counter)

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, stream={self.stream!r}, counter={self.counter})"

    def _generator(self, extra: Sequence[int] = ()) -> np.random.Generator:
        key = (STREAMS[self.stream], self.counter, *[int(e) for e in extra])
        seq = np.random.SeedSequence(self.seed, spawn_key=key)
        return np.random.Generator(np.random.PCG64(seq))

    def _tick(self) -> np.random.Generator:
        gen = self._generator()
        self.counter += 1
        return gen

    def uniform(self, size, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        return self._tick().uniform(low, high, size)

    def normal(self, size) -> np.ndarray:
        return self._tick().standard_normal(size)

    def integers(self, low: int, high: int, size) -> np.ndarray:
        """Uniform integers in [low, high)."""
        return self._tick().integers(low, high, size=size, dtype=np.int64)

    def permutation(self, n: int) -> np.ndarray:
        return self._tick().permutation(n)

    def per_index_uniform(self, indices, size_each, low: float, high: float) -> np.ndarray:
        """Per-index uniform blocks, independent of how indices are batched.

        Each index gets its own sub-generator keyed by (counter, index), so a
        caller that splits `indices` across workers sees exactly the values a
        sequential caller would.
        """
        counter = self.counter
        self.counter += 1
        out = np.empty((len(indices), *size_each), dtype=np.float64)
        for row, idx in enumerate(indices):
            key = (STREAMS[self.stream], counter, int(idx))
            seq = np.random.SeedSequence(self.seed, spawn_key=key)
            gen = np.random.Generator(np.random.PCG64(seq))
            out[row] = gen.uniform(low, high, size_each)
        return out
