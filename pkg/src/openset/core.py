"""Shared domain types, error classes and elementary vector operations.

Feature vectors are plain 1-D ``float64`` numpy arrays. Every cosine in the
package goes through :func:`rowdot`, an element-wise product followed by a
reduction along the last axis. Unlike a BLAS matrix product, that reduction
gives the same bits for a row no matter how many other rows are in the
batch, so batch scoring reproduces single-pair scoring exactly.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

Key = tuple[str, int]


class OpenSetError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(OpenSetError, ValueError):
    pass


class DegenerateDataError(OpenSetError, ValueError):
    """Data is well-formed but carries no usable spread (zero variance, ties)."""


class TrainingDataError(OpenSetError, ValueError):
    pass


class ProtocolError(OpenSetError, ValueError):
    pass


class ValidationError(OpenSetError, ValueError):
    pass


class NumericError(OpenSetError, ArithmeticError):
    """A solver failed to converge or hit a singular system."""


def as_feature(values, *, name: str = "feature") -> np.ndarray:
    """Return ``values`` as a read-only float64 vector, checking invariants."""
    x = np.array(values, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise InvalidInputError(f"{name} must be a non-empty 1-D vector, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError(f"{name} contains non-finite values")
    if not np.any(x):
        raise InvalidInputError(f"{name} is the zero vector")
    x.flags.writeable = False
    return x


@dataclass(frozen=True)
class LabeledFeature:
    identity: str
    image_index: int
    feature: np.ndarray = field(repr=False, compare=False)

    @property
    def key(self) -> Key:
        return (self.identity, self.image_index)


@dataclass(frozen=True)
class Dataset:
    records: tuple[LabeledFeature, ...]
    dimension: int

    @classmethod
    def from_records(cls, records: Iterable[LabeledFeature]) -> "Dataset":
        records = tuple(records)
        if not records:
            raise InvalidInputError("dataset is empty")
        return cls(records, int(np.asarray(records[0].feature).size))

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def lookup(self) -> dict[Key, LabeledFeature]:
        return {r.key: r for r in self.records}

    def images_by_identity(self) -> dict[str, list[int]]:
        out: dict[str, list[int]] = defaultdict(list)
        for r in self.records:
            out[r.identity].append(r.image_index)
        return {k: sorted(v) for k, v in out.items()}

    def select(self, keys: Iterable[Key]) -> "Dataset":
        """Sub-dataset holding ``keys`` in sorted (identity, image) order."""
        table = self.lookup()
        return Dataset.from_records(table[k] for k in sorted(keys))


@dataclass(frozen=True)
class GalleryTemplate:
    identity: str
    features: np.ndarray  # (n, D)
    mean: np.ndarray = field(init=False)

    def __post_init__(self):
        feats = np.atleast_2d(np.asarray(self.features, dtype=np.float64))
        feats.flags.writeable = False
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "mean", template_mean(feats))

    def __len__(self) -> int:
        return self.features.shape[0]


@dataclass(frozen=True)
class ScoreMatrix:
    probe_keys: tuple[Key, ...]
    gallery_subjects: tuple[str, ...]
    scores: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=np.float64)
        if s.shape != (len(self.probe_keys), len(self.gallery_subjects)):
            raise InvalidInputError(
                f"score shape {s.shape} does not match "
                f"{len(self.probe_keys)} probes x {len(self.gallery_subjects)} subjects"
            )
        if not np.all(np.isfinite(s)):
            raise InvalidInputError("score matrix contains non-finite entries")
        s.flags.writeable = False
        object.__setattr__(self, "probe_keys", tuple((str(i), int(n)) for i, n in self.probe_keys))
        object.__setattr__(self, "gallery_subjects", tuple(self.gallery_subjects))
        object.__setattr__(self, "scores", s)

    def row_index(self) -> dict[Key, int]:
        return {k: i for i, k in enumerate(self.probe_keys)}

    def column(self, subject: str) -> int:
        try:
            return self.gallery_subjects.index(subject)
        except ValueError:
            raise InvalidInputError(f"subject {subject!r} is not in the gallery") from None

    def rows(self, keys: Iterable[Key]) -> "ScoreMatrix":
        """Restrict to ``keys``, keeping this matrix's row order."""
        wanted = set(keys)
        missing = wanted.difference(self.probe_keys)
        if missing:
            raise InvalidInputError(f"{len(missing)} probe(s) have no score row, e.g. {min(missing)}")
        idx = [i for i, k in enumerate(self.probe_keys) if k in wanted]
        return ScoreMatrix(
            tuple(self.probe_keys[i] for i in idx), self.gallery_subjects, self.scores[idx]
        )


def rowdot(rows: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Dot product of every row of ``rows`` with ``v``; shape-independent bits."""
    return np.multiply(rows, v).sum(axis=-1)


def unit_rows(rows: np.ndarray) -> np.ndarray:
    """Scale each row to unit length. Zero rows raise."""
    rows = np.asarray(rows, dtype=np.float64)
    norms = np.sqrt(np.multiply(rows, rows).sum(axis=-1, keepdims=True))
    if np.any(norms == 0):
        raise InvalidInputError("cosine is undefined for the zero vector")
    return rows / norms


def _check_pair(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[-1] != b.shape[-1]:
        raise InvalidInputError(f"dimension mismatch: {a.shape[-1]} vs {b.shape[-1]}")
    return a, b


def cosine_unit(unit: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Cosine of each row of ``unit`` (already unit length) with raw vector ``v``.

    Lets callers normalize a fixed set of rows once and still get the same
    bits as :func:`cosine_rows`.
    """
    unit, v = _check_pair(unit, v)
    return np.clip(rowdot(unit, unit_rows(v)), -1.0, 1.0)


def cosine_rows(rows: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Cosine similarity between each row and ``v``, clipped to [-1, 1]."""
    rows, v = _check_pair(rows, v)
    return cosine_unit(unit_rows(rows), v)


def cosine_similarity(a, b) -> float:
    a, b = _check_pair(a, b)
    if a.ndim != 1 or b.ndim != 1:
        raise InvalidInputError("cosine_similarity expects two vectors")
    return float(cosine_rows(a[None, :], b)[0])


def cosine_distance(a, b) -> float:
    return 1.0 - cosine_similarity(a, b)


def template_mean(features) -> np.ndarray:
    """Component-wise average of a non-empty set of vectors (not re-normalized)."""
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim == 1:
        feats = feats[None, :]
    if feats.ndim != 2 or feats.shape[0] == 0:
        raise InvalidInputError("template_mean needs at least one vector")
    mean = feats.mean(axis=0)
    mean.flags.writeable = False
    return mean


def validate_dataset(records: Dataset | Sequence[LabeledFeature]) -> list[str]:
    """List every invariant violation in ``records``; empty means valid."""
    records = list(records)
    problems: list[str] = []
    if not records:
        return ["dataset is empty"]
    dim = None
    seen: set[Key] = set()
    for n, r in enumerate(records):
        where = f"record {n} ({r.identity!r}, {r.image_index})"
        if r.key in seen:
            problems.append(f"{where}: duplicate (identity, image) key")
        seen.add(r.key)
        if not isinstance(r.image_index, (int, np.integer)) or r.image_index < 1:
            problems.append(f"{where}: image index must be a positive integer")
        x = np.asarray(r.feature, dtype=np.float64)
        if x.ndim != 1 or x.size == 0:
            problems.append(f"{where}: feature must be a non-empty vector")
            continue
        if dim is None:
            dim = x.size
        elif x.size != dim:
            problems.append(f"{where}: dimension {x.size} differs from {dim}")
        if not np.all(np.isfinite(x)):
            problems.append(f"{where}: non-finite feature value")
        elif not np.any(x):
            problems.append(f"{where}: zero feature vector")
    return problems


def make_dataset(rows: Iterable[tuple[str, int, Sequence[float]]]) -> Dataset:
    """Build and validate a dataset from ``(identity, image, values)`` triples."""
    records = [
        LabeledFeature(str(i), int(n), np.asarray(v, dtype=np.float64)) for i, n, v in rows
    ]
    problems = validate_dataset(records)
    if problems:
        raise ValidationError(problems[0])
    for r in records:
        r.feature.flags.writeable = False
    return Dataset.from_records(records)

