"""Seeded random streams.

An :class:`Rng` is a value: the same (seed, stream_id) always yields the
same draws. Independent sub-streams are derived with :meth:`Rng.child`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class Rng:
    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed & _MASK64, spawn_key=(self.stream_id & _MASK64,))
        return np.random.Generator(np.random.PCG64(ss))

    def child(self, *keys: int) -> "Rng":
        """A new stream keyed by ``keys``; distinct keys give independent streams."""
        ss = np.random.SeedSequence(self.seed & _MASK64,
                                    spawn_key=(self.stream_id & _MASK64, *(k & _MASK64 for k in keys)))
        return Rng(self.seed, int(ss.generate_state(1, np.uint64)[0]))
