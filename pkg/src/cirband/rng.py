"""Reproducible uniform random streams.

A simulation run owns one root seed; each trajectory consumes its own
substream identified by an integer stream id.  Substreams are derived with
``numpy.random.SeedSequence(seed, spawn_key=(stream_id,))`` on top of the
PCG64 bit generator, which gives statistically independent streams and a
period far beyond anything a path can consume.

PCG64 produces identical doubles whether drawn one at a time or in blocks,
so a vectorised engine that pre-draws blocks per path sees exactly the same
sequence as a scalar engine calling :meth:`RngStream.uniform` repeatedly.
"""

from __future__ import annotations

import numpy as np

GENERATOR_ID = "pcg64-seedseq"


class RngStream:
    """Uniform(0, 1) source bound to a (seed, stream_id) pair."""

    __slots__ = ("seed", "stream_id", "_gen")

    def __init__(self, seed: int, stream_id: int = 0) -> None:
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,))
        self._gen = np.random.Generator(np.random.PCG64(ss))

    @property
    def generator_id(self) -> str:
        return GENERATOR_ID

    def uniform(self) -> float:
        """Next uniform draw in [0, 1)."""
        return float(self._gen.random())

    def uniforms(self, n: int) -> np.ndarray:
        """Next ``n`` uniform draws in [0, 1) as a float64 array."""
        return self._gen.random(int(n))

    def __repr__(self) -> str:  # pragma: no cover - debug aid
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"
