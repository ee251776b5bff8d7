"""Reproducible random streams keyed by (root seed, stream path)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["RngStream", "sample_std_normal"]


@dataclass(frozen=True)
class RngStream:
    """A named, reproducible random stream.

    Identical ``(seed, path)`` pairs give identical draw sequences; distinct
    paths map to independent ``SeedSequence`` children.
    """

    seed: int
    path: tuple = field(default=())

    def child(self, *ids: int) -> "RngStream":
        return RngStream(self.seed, self.path + tuple(int(i) for i in ids))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=int(self.seed) & (2**64 - 1), spawn_key=self.path)
        return np.random.Generator(np.random.PCG64(ss))

    @property
    def stream_id(self) -> int:
        return self.path[-1] if self.path else 0


def sample_std_normal(rng: RngStream | np.random.Generator, n: int) -> np.ndarray:
    """Draw ``n`` i.i.d. standard normals."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    return gen.standard_normal(n)
