"""Counter-based random streams.

Every stream is a Philox-4x64 generator keyed by a hash of
``(master seed, stream index)``.  Philox output depends only on its key and
counter, so stream ``i`` yields the same variates no matter which worker
draws it or in which order streams are visited.
"""

import dataclasses

import numpy as np

__all__ = ["RngStream"]

_U64 = (1 << 64) - 1


@dataclasses.dataclass(frozen=True)
class RngStream:
    seed: int
    index: int = 0

    def __post_init__(self):
        for name in ("seed", "index"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or not (0 <= int(v) <= _U64):
                raise ValueError(f"{name} must be an unsigned 64-bit integer, got {v!r}")

    def generator(self):
        """A fresh :class:`numpy.random.Generator` positioned at the stream start."""
        seq = np.random.SeedSequence(int(self.seed), spawn_key=(int(self.index),))
        return np.random.Generator(np.random.Philox(seq))

    def child(self, index):
        """Stream ``index`` under the same master seed."""
        return RngStream(self.seed, index)
