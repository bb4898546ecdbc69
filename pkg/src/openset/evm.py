"""Extreme Value Machine gallery models with every extreme vector retained.

Each anchor (an enrolled feature, or a subject's mean feature) gets a
Weibull fit on the low tail of its alpha-scaled cosine distances to all
training features of *other* identities. A probe's inclusion probability
for the anchor is the Weibull survival function at its distance.
"""

from __future__ import annotations

import enum
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from .core import (
    Dataset,
    GalleryTemplate,
    InvalidInputError,
    OpenSetError,
    TrainingDataError,
    cosine_rows,
    cosine_unit,
    unit_rows,
)
from .evt import WeibullFit, fit_low_tail

DEFAULT_ALPHA = 0.7
DEFAULT_TAIL_SIZE = 500


class Fusion(str, enum.Enum):
    MAX = "max"
    AVG = "avg"


@dataclass(frozen=True)
class EvmConfig:
    alpha: float = DEFAULT_ALPHA
    tail_size: int = DEFAULT_TAIL_SIZE
    fusion: Fusion = Fusion.AVG
    # When False, probes are scored with the unscaled distance (alpha only
    # enters through training). Kept for fidelity experiments.
    scale_query: bool = True

    def __post_init__(self):
        object.__setattr__(self, "fusion", Fusion(self.fusion))
        if not self.alpha > 0:
            raise InvalidInputError(f"alpha must be positive, got {self.alpha}")
        if int(self.tail_size) != self.tail_size or self.tail_size < 2:
            raise InvalidInputError(f"tail size must be an integer >= 2, got {self.tail_size}")


@dataclass(frozen=True)
class SubjectModel:
    identity: str
    anchors: np.ndarray  # (n_fits, D)
    fits: tuple[WeibullFit, ...]

    def __post_init__(self):
        anchors = np.atleast_2d(np.asarray(self.anchors, dtype=np.float64))
        if anchors.shape[0] != len(self.fits) or not self.fits:
            raise InvalidInputError(f"subject {self.identity!r}: one fit per anchor required")
        anchors.flags.writeable = False
        object.__setattr__(self, "anchors", anchors)


@dataclass(frozen=True)
class EvmGalleryModel:
    config: EvmConfig
    subjects: tuple[SubjectModel, ...]

    @property
    def subject_ids(self) -> tuple[str, ...]:
        return tuple(s.identity for s in self.subjects)

    @property
    def fit_count(self) -> int:
        return sum(len(s.fits) for s in self.subjects)

    @property
    def dimension(self) -> int:
        return self.subjects[0].anchors.shape[1]

    @cached_property
    def _stacked(self):
        anchors = np.concatenate([s.anchors for s in self.subjects])
        shapes = np.array([f.shape for s in self.subjects for f in s.fits])
        scales = np.array([f.scale for s in self.subjects for f in s.fits])
        starts = np.cumsum([0] + [len(s.fits) for s in self.subjects[:-1]])
        return unit_rows(anchors), shapes, scales, starts

    def subject(self, identity: str) -> SubjectModel:
        for s in self.subjects:
            if s.identity == identity:
                return s
        raise InvalidInputError(f"subject {identity!r} is not in the model")


def negative_distances(anchor, anchor_identity: str, training: Dataset, alpha: float) -> np.ndarray:
    """alpha-scaled cosine distances from ``anchor`` to other-identity training features."""
    others = [r.feature for r in training if r.identity != anchor_identity]
    if not others:
        raise TrainingDataError(
            f"no training feature has an identity other than {anchor_identity!r}"
        )
    return alpha * (1.0 - cosine_rows(np.stack(others), np.asarray(anchor, dtype=np.float64)))


def worker_count() -> int:
    """Worker threads from ``OPENSET_WORKERS`` (default 1)."""
    raw = os.environ.get("OPENSET_WORKERS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise InvalidInputError(f"OPENSET_WORKERS must be an integer, got {raw!r}") from None
    return max(1, n)


def train(
    gallery: Sequence[GalleryTemplate],
    training: Dataset,
    cfg: EvmConfig = EvmConfig(),
    workers: int | None = None,
) -> EvmGalleryModel:
    if not gallery:
        raise InvalidInputError("cannot train an EVM without gallery subjects")
    T = np.stack([r.feature for r in training])
    ids = np.array([r.identity for r in training], dtype=object)

    jobs = []
    for g in gallery:
        anchors = g.features if cfg.fusion is Fusion.MAX else g.mean[None, :]
        jobs.extend((g.identity, i, a) for i, a in enumerate(anchors))

    def fit_one(job):
        identity, i, anchor = job
        mask = ids != identity
        if not mask.any():
            raise TrainingDataError(
                f"subject {identity!r}: no training feature of another identity"
            )
        dist = cfg.alpha * (1.0 - cosine_rows(T[mask], anchor))
        try:
            return fit_low_tail(dist, cfg.tail_size)
        except OpenSetError as exc:
            raise type(exc)(f"subject {identity!r}, anchor {i}: {exc}") from exc

    workers = worker_count() if workers is None else workers
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            fits = list(pool.map(fit_one, jobs))
    else:
        fits = [fit_one(j) for j in jobs]

    subjects = []
    pos = 0
    for g in gallery:
        n = len(g) if cfg.fusion is Fusion.MAX else 1
        anchors = g.features if cfg.fusion is Fusion.MAX else g.mean[None, :]
        subjects.append(SubjectModel(g.identity, anchors, tuple(fits[pos : pos + n])))
        pos += n
    return EvmGalleryModel(cfg, tuple(subjects))


def anchor_probabilities(model: EvmGalleryModel, probe) -> np.ndarray:
    """Inclusion probability of ``probe`` for every anchor, in model order."""
    unit, shapes, scales, _ = model._stacked
    d = 1.0 - cosine_unit(unit, probe)
    if model.config.scale_query:
        d = model.config.alpha * d
    return np.exp(-np.power(d / scales, shapes))


def _check_probe(model: EvmGalleryModel, probe, fusion: Fusion) -> np.ndarray:
    if model.config.fusion is not fusion:
        raise InvalidInputError(
            f"model was trained for {model.config.fusion.value} fusion, not {fusion.value}"
        )
    probe = np.asarray(probe, dtype=np.float64)
    if probe.ndim != 1 or probe.shape[0] != model.dimension:
        raise InvalidInputError(
            f"probe dimension {probe.shape} does not match model dimension {model.dimension}"
        )
    return probe


def score_max(model: EvmGalleryModel, probe) -> np.ndarray:
    """Per-subject maximum inclusion probability over the enrolled features."""
    probe = _check_probe(model, probe, Fusion.MAX)
    return np.maximum.reduceat(anchor_probabilities(model, probe), model._stacked[3])


def score_avg(model: EvmGalleryModel, probe) -> np.ndarray:
    """Per-subject inclusion probability of the template mean."""
    probe = _check_probe(model, probe, Fusion.AVG)
    return anchor_probabilities(model, probe)


def score(model: EvmGalleryModel, probe) -> np.ndarray:
    return (score_max if model.config.fusion is Fusion.MAX else score_avg)(model, probe)
