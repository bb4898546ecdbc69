"""Seeded synthetic feature tables standing in for real face embeddings.

Randomness comes from numpy's ``Generator`` with the PCG64 bit generator
(``numpy.random.default_rng(seed)``). Draws happen in a fixed order: for
each identity (known, then known-unknown, then unknown-unknown) one
standard-normal direction of length D, then one D-vector of noise per
image. Outputs are therefore reproducible for a given numpy release.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Dataset, InvalidInputError, LabeledFeature

GENERATOR = "numpy.random.PCG64"


@dataclass(frozen=True)
class SyntheticSpec:
    dimension: int = 64
    known: int = 50
    known_unknown: int = 50
    unknown_unknown: int = 100
    images_per_known: int = 6
    images_per_known_unknown: int = 2
    sigma: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.dimension < 1:
            raise InvalidInputError("dimension must be >= 1")
        if self.known < 1:
            raise InvalidInputError("at least one known identity is required")
        if self.known_unknown < 0 or self.unknown_unknown < 0:
            raise InvalidInputError("identity counts must be non-negative")
        if self.images_per_known < 4:
            raise InvalidInputError("known identities need at least 4 images")
        if self.images_per_known_unknown not in (2, 3):
            raise InvalidInputError("known-unknown identities have 2 or 3 images")
        if not self.sigma > 0:
            raise InvalidInputError("sigma must be positive")

    @property
    def record_count(self) -> int:
        return (
            self.known * self.images_per_known
            + self.known_unknown * self.images_per_known_unknown
            + self.unknown_unknown
        )


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    """Unit-norm features clustered around one random direction per identity."""
    rng = np.random.default_rng(spec.seed)
    groups = [
        ("known", spec.known, spec.images_per_known),
        ("ku", spec.known_unknown, spec.images_per_known_unknown),
        ("uu", spec.unknown_unknown, 1),
    ]
    records = []
    for prefix, count, images in groups:
        for i in range(count):
            centre = rng.standard_normal(spec.dimension)
            centre /= np.linalg.norm(centre)
            for n in range(1, images + 1):
                x = centre + spec.sigma * rng.standard_normal(spec.dimension)
                x /= np.linalg.norm(x)
                x.flags.writeable = False
                records.append(LabeledFeature(f"{prefix}{i:04d}", n, x))
    return Dataset.from_records(records)
