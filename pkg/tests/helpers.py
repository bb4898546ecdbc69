"""Builders shared by the test modules."""

from __future__ import annotations

import numpy as np

from openset.core import ScoreMatrix, make_dataset
from openset.protocol import ProtocolPartition


def to_package(matrix, known, unknown_k, unknown_u):
    """Turn an oracle instance into a (ScoreMatrix, ProtocolPartition) pair."""
    keys, subjects, rows = matrix
    scores = ScoreMatrix(tuple(keys), tuple(subjects), np.array(rows, dtype=np.float64))
    partition = ProtocolPartition(
        training=frozenset((s, i) for s in subjects for i in (1, 2, 3)),
        gallery={s: (1, 2, 3) for s in subjects},
        probes_known=frozenset(known),
        probes_known_unknown=frozenset(unknown_k),
        probes_unknown_unknown=frozenset(unknown_u),
    )
    return scores, partition


MINI_COUNTS = {
    # Known
    "alice": 4,
    "bob": 5,
    "carol": 6,
    "dave": 7,
    # KnownUnknown
    "erin": 2,
    "frank": 2,
    "grace": 3,
    "heidi": 3,
    "ivan": 2,
    # UnknownUnknown
    "judy": 1,
    "mallory": 1,
    "oscar": 1,
}


def mini_manifest(seed=0, dim=4):
    """The 12-identity manifest with random (but valid) feature vectors."""
    rng = np.random.default_rng(seed)
    rows = [
        (ident, i, rng.standard_normal(dim))
        for ident, n in MINI_COUNTS.items()
        for i in range(1, n + 1)
    ]
    return make_dataset(rows)


def clustered(seed, n_ids, n_images, dim, sigma=0.05, prefix="id"):
    """Rows of (identity, image, feature) around random unit directions."""
    rng = np.random.default_rng(seed)
    rows = []
    for k in range(n_ids):
        c = rng.standard_normal(dim)
        c /= np.linalg.norm(c)
        for i in range(1, n_images + 1):
            rows.append((f"{prefix}{k}", i, c + sigma * rng.standard_normal(dim)))
    return rows
