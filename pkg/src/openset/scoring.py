"""One interface for cosine, LDA-projected cosine and EVM scoring."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import evm
from .core import (
    GalleryTemplate,
    InvalidInputError,
    LabeledFeature,
    OpenSetError,
    ScoreMatrix,
    cosine_rows,
    cosine_unit,
    unit_rows,
)
from .evm import EvmGalleryModel, Fusion
from .subspace import SubspaceModel, project


class Method(str, enum.Enum):
    COS = "cos"
    LDA = "lda"
    EVM = "evm"


@dataclass(frozen=True)
class ScoringMethod:
    method: Method
    fusion: Fusion
    model: SubspaceModel | EvmGalleryModel | None = None

    def __post_init__(self):
        object.__setattr__(self, "method", Method(self.method))
        object.__setattr__(self, "fusion", Fusion(self.fusion))
        if self.method is Method.LDA and not isinstance(self.model, SubspaceModel):
            raise InvalidInputError("LDA scoring needs a SubspaceModel")
        if self.method is Method.EVM:
            if not isinstance(self.model, EvmGalleryModel):
                raise InvalidInputError("EVM scoring needs an EvmGalleryModel")
            if self.model.config.fusion is not self.fusion:
                raise InvalidInputError(
                    f"EVM model was trained for {self.model.config.fusion.value} fusion, "
                    f"cannot score with {self.fusion.value}"
                )

    @property
    def name(self) -> str:
        return f"{self.method.value}_{self.fusion.value}"


def score_cosine_max(g: GalleryTemplate, p) -> float:
    return float(cosine_rows(g.features, p).max())


def score_cosine_avg(g: GalleryTemplate, p) -> float:
    return float(cosine_rows(g.mean[None, :], p)[0])


def _projected(m: SubspaceModel, g: GalleryTemplate, fusion: Fusion) -> GalleryTemplate:
    # Avg mode projects the raw mean, not the mean of projections; by
    # linearity the two agree up to rounding.
    if fusion is Fusion.MAX:
        return GalleryTemplate(g.identity, project(m, g.features))
    return GalleryTemplate(g.identity, project(m, g.mean)[None, :])


def score_lda(m: SubspaceModel, g: GalleryTemplate, p, fusion: Fusion | str) -> float:
    fusion = Fusion(fusion)
    pg = _projected(m, g, fusion)
    return score_cosine_max(pg, project(m, p))


def score_pair(method: ScoringMethod, g: GalleryTemplate, p) -> float:
    """Score one probe against one gallery subject."""
    if method.method is Method.COS:
        fn = score_cosine_max if method.fusion is Fusion.MAX else score_cosine_avg
        return fn(g, p)
    if method.method is Method.LDA:
        return score_lda(method.model, g, p, method.fusion)
    return float(evm.score(method.model, p)[method.model.subject_ids.index(g.identity)])


def score_all(
    method: ScoringMethod,
    gallery: Sequence[GalleryTemplate],
    probes: Sequence[LabeledFeature],
) -> ScoreMatrix:
    """Dense probes x subjects matrix in input order.

    Every entry is bit-identical to :func:`score_pair` on the same inputs;
    the batch path only hoists per-subject work (projection, stacking) out
    of the probe loop.
    """
    probes = list(probes)
    if not probes:
        raise InvalidInputError("no probes to score")
    if not gallery:
        raise InvalidInputError("no gallery subjects to score against")
    subjects = tuple(g.identity for g in gallery)

    if method.method is Method.EVM:
        model: EvmGalleryModel = method.model
        if model.subject_ids != subjects:
            raise InvalidInputError("EVM model subjects do not match the gallery")
        row_fn = lambda p: evm.score(model, p)  # noqa: E731
    else:
        if method.method is Method.LDA:
            templates = [_projected(method.model, g, method.fusion) for g in gallery]
            prep = lambda p: project(method.model, p)  # noqa: E731
        else:
            templates = list(gallery)
            prep = lambda p: np.asarray(p, dtype=np.float64)  # noqa: E731
        if method.method is Method.COS and method.fusion is Fusion.AVG:
            stacked = np.stack([t.mean for t in templates])
            starts = np.arange(len(templates))
        else:
            stacked = np.concatenate([t.features for t in templates])
            starts = np.cumsum([0] + [len(t) for t in templates[:-1]])

        try:
            unit = unit_rows(stacked)
        except InvalidInputError:
            bad = np.flatnonzero(~np.any(stacked, axis=1))[0]
            owner = subjects[int(np.searchsorted(starts, bad, side="right")) - 1]
            raise InvalidInputError(f"subject {owner!r}: template vector is zero") from None

        def row_fn(p):
            return np.maximum.reduceat(cosine_unit(unit, prep(p)), starts)

    out = np.empty((len(probes), len(subjects)))
    for i, rec in enumerate(probes):
        try:
            out[i] = row_fn(rec.feature)
        except OpenSetError as exc:
            raise type(exc)(f"probe {rec.key}: {exc}") from exc
    return ScoreMatrix(tuple(r.key for r in probes), subjects, out)
