"""Counter-based random streams, one per trajectory.

Each stream is a Philox generator keyed by ``(master_seed, stream_index)``
through :class:`numpy.random.SeedSequence`, so trajectory ``k`` sees the same
draws no matter which worker runs it or in what order.
"""
from __future__ import annotations

import numpy as np

_U64 = 2**64


class RngStream:
    """Uniform draws on the open interval (0, 1) for one trajectory."""

    def __init__(self, master_seed: int, stream_index: int, substream: int = 0):
        if not 0 <= master_seed < _U64 or not 0 <= stream_index < _U64:
            raise ValueError("seed and stream index must be unsigned 64-bit integers")
        self.master_seed = int(master_seed)
        self.stream_index = int(stream_index)
        self.substream = int(substream)
        key = (self.stream_index,) if substream == 0 else (self.stream_index, self.substream)
        seq = np.random.SeedSequence(self.master_seed, spawn_key=key)
        self._gen = np.random.Generator(np.random.Philox(seq))

    def uniform(self) -> float:
        # random() is on [0, 1); reject the single excluded endpoint
        while True:
            u = self._gen.random()
            if u != 0.0:
                return u

    def uniforms(self, n: int) -> np.ndarray:
        out = self._gen.random(n)
        while True:
            zero = out == 0.0
            if not zero.any():
                return out
            out[zero] = self._gen.random(int(zero.sum()))

    def child(self, substream: int) -> "RngStream":
        """Independent stream for the same trajectory (e.g. a second draw purpose)."""
        return RngStream(self.master_seed, self.stream_index, substream)

    def __repr__(self) -> str:
        return f"RngStream(seed={self.master_seed}, index={self.stream_index}, sub={self.substream})"
