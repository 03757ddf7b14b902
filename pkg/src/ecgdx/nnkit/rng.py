"""Seeded random streams.

All randomness comes from numpy's PCG64 seeded through SeedSequence with an
entropy tuple ``(seed, tag, *keys)``. The tag names the purpose (``init``,
``shuffle``, ``augment``, ...) and the keys locate the draw, e.g.
``(epoch, sample_index)`` for augmentation. Because each (epoch, sample)
pair owns its stream, augmentation does not depend on batch order or on how
a batch is split across workers.
"""

from __future__ import annotations

import zlib

import numpy as np


def _tag(name: str) -> int:
    return zlib.crc32(name.encode("ascii"))


def stream(seed: int, tag: str, *keys: int) -> np.random.Generator:
    return np.random.default_rng([int(seed) & (2**64 - 1), _tag(tag), *(int(k) for k in keys)])
