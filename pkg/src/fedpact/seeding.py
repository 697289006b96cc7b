"""Deterministic random-stream plumbing.

Every stochastic routine in the package takes an explicit seed (or an
already-constructed generator) so that identical inputs always give
identical outputs.  Substreams are derived with ``SeedSequence`` from a
root seed plus integer path keys instead of ad-hoc arithmetic on seeds.
"""
from __future__ import annotations

import numpy as np


def as_generator(seed: int | np.random.Generator) -> np.random.Generator:
    """Return ``seed`` unchanged if it already is a generator, else seed one."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def child_rng(root_seed: int, *path: int) -> np.random.Generator:
    """Generator for the substream identified by (root_seed, *path)."""
    return np.random.default_rng(np.random.SeedSequence([int(root_seed), *map(int, path)]))
