"""Seed plumbing.

Every random draw in the package goes through ``numpy.random.default_rng``
seeded with an explicit entropy sequence built here.  A "seed" is an int or a
sequence of ints; call sites append fixed stream ids so that independent
consumers (init, shuffling, subsampling, noise) never share a stream even when
they share a base seed.
"""

from __future__ import annotations

from typing import Sequence

from .errors import InputError

Seed = int | Sequence[int]


def seed_seq(seed: Seed, *streams: int) -> list[int]:
    """Flatten ``seed`` and append ``streams``; entries must be ints >= 0."""
    if isinstance(seed, (int,)) and not isinstance(seed, bool):
        parts = [seed]
    else:
        try:
            parts = [int(s) for s in seed]  # type: ignore[union-attr]
        except TypeError as exc:
            raise InputError(f"seed must be an int or a sequence of ints, got {seed!r}") from exc
    parts.extend(int(s) for s in streams)
    for p in parts:
        if p < 0:
            raise InputError(f"seed entries must be non-negative, got {parts}")
    return parts
