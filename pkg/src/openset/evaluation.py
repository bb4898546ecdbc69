"""Closed- and open-set identification metrics over a :class:`ScoreMatrix`.

Conventions:

* rank counts the subjects scoring at least as high as the correct one, so
  a tie at the top gives rank 2 for both;
* a known probe counts toward DIR when its rank is *at most* r and its
  genuine score reaches the threshold;
* a false alarm is an unknown probe whose best gallery score reaches the
  threshold;
* the threshold for a target false alarm rate is taken from the descending
  sort of *all* unknown max-scores, at 0-based index ``floor(far * n)``
  (clamped to ``n - 1``), then moved to the next strictly larger observed
  score so the achieved rate never exceeds the target.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .core import InvalidInputError, Key, ScoreMatrix
from .protocol import ProbeSetId, ProtocolPartition


class ThresholdPolicy(str, enum.Enum):
    # No threshold when the order statistic is already the maximum score.
    STRICT = "strict"
    # Fall back to the next float above the maximum (FAR = 0).
    ABOVE_MAX = "above_max"


DEFAULT_FAR_TARGETS = (0.001, 0.01, 0.1, 1.0)


@dataclass(frozen=True)
class EvalConfig:
    rank: int = 1
    far_targets: tuple[float, ...] = DEFAULT_FAR_TARGETS
    threshold_policy: ThresholdPolicy = ThresholdPolicy.STRICT

    def __post_init__(self):
        object.__setattr__(self, "threshold_policy", ThresholdPolicy(self.threshold_policy))
        targets = tuple(float(t) for t in self.far_targets)
        if list(targets) != sorted(targets) or any(not 0 < t <= 1 for t in targets):
            raise InvalidInputError("FAR targets must be ascending and lie in (0, 1]")
        object.__setattr__(self, "far_targets", targets)
        if int(self.rank) != self.rank or self.rank < 1:
            raise InvalidInputError(f"rank must be a positive integer, got {self.rank}")


@dataclass(frozen=True)
class CurvePoint:
    x: float
    y: float
    threshold: float | None = None


def rank_of(row: Sequence[float], subjects: Sequence[str], correct_subject: str) -> int:
    subjects = list(subjects)
    if correct_subject not in subjects:
        raise InvalidInputError(f"subject {correct_subject!r} is not in the gallery")
    row = np.asarray(row, dtype=np.float64)
    return int(np.count_nonzero(row >= row[subjects.index(correct_subject)]))


def _known_rows(scores: ScoreMatrix, known: Iterable[Key]) -> tuple[np.ndarray, np.ndarray]:
    """Ranks and genuine scores for every known probe, in matrix row order."""
    known = set(known)
    if not known:
        raise InvalidInputError("no known probes; closed-set metrics are undefined")
    sub = scores.rows(known)
    cols = np.array([scores.column(ident) for ident, _ in sub.probe_keys])
    genuine = sub.scores[np.arange(len(cols)), cols]
    ranks = np.count_nonzero(sub.scores >= genuine[:, None], axis=1)
    return ranks, genuine


def unknown_max_scores(scores: ScoreMatrix, unknown_keys: Iterable[Key]) -> np.ndarray:
    unknown_keys = set(unknown_keys)
    if not unknown_keys:
        raise InvalidInputError("no unknown probes; open-set metrics are undefined")
    return scores.rows(unknown_keys).scores.max(axis=1)


def cmc_curve(scores: ScoreMatrix, partition: ProtocolPartition) -> list[CurvePoint]:
    ranks, _ = _known_rows(scores, partition.probes_known)
    n = len(scores.gallery_subjects)
    hist = np.bincount(ranks, minlength=n + 1)[1:]
    cum = np.cumsum(hist) / len(ranks)
    return [CurvePoint(float(r), float(v)) for r, v in zip(range(1, n + 1), cum)]


def far_at(scores: ScoreMatrix, unknown_keys: Iterable[Key], theta: float) -> float:
    best = unknown_max_scores(scores, unknown_keys)
    return float(np.count_nonzero(best >= theta) / best.size)


def dir_at(scores: ScoreMatrix, partition: ProtocolPartition, theta: float, r: int = 1) -> float:
    if r < 1:
        raise InvalidInputError(f"rank must be >= 1, got {r}")
    ranks, genuine = _known_rows(scores, partition.probes_known)
    return float(np.count_nonzero((ranks <= r) & (genuine >= theta)) / ranks.size)


def select_threshold(
    best: np.ndarray, far: float, policy: ThresholdPolicy | str = ThresholdPolicy.STRICT
) -> float | None:
    """Threshold for target FAR ``far`` from an array of unknown max-scores."""
    policy = ThresholdPolicy(policy)
    if not (isinstance(far, (int, float)) and 0 < far <= 1):
        raise InvalidInputError(f"target FAR must lie in (0, 1], got {far}")
    best = np.asarray(best, dtype=np.float64)
    if best.size == 0:
        raise InvalidInputError("no unknown scores to derive a threshold from")
    desc = np.sort(best, kind="stable")[::-1]
    idx = min(math.floor(far * desc.size), desc.size - 1)
    theta_prime = desc[idx]
    above = best[best > theta_prime]
    if above.size:
        return float(above.min())
    if policy is ThresholdPolicy.ABOVE_MAX:
        return float(np.nextafter(desc[0], math.inf))
    return None


def threshold_for_far(
    scores: ScoreMatrix,
    unknown_keys: Iterable[Key],
    far: float,
    policy: ThresholdPolicy | str = ThresholdPolicy.STRICT,
) -> float | None:
    return select_threshold(unknown_max_scores(scores, unknown_keys), far, policy)


def dir_curve(
    scores: ScoreMatrix,
    partition: ProtocolPartition,
    probe_set: ProbeSetId | str,
    r: int = 1,
    policy: ThresholdPolicy | str = ThresholdPolicy.STRICT,
) -> list[CurvePoint]:
    """(FAR, DIR) at every distinct unknown max-score, ascending in FAR.

    The curve always ends with the vacuous threshold (-inf), where FAR = 1
    and DIR equals CMC(r). Under ``ABOVE_MAX`` it also starts at FAR = 0.
    Points sharing a FAR are ordered from strict to loose threshold.
    """
    probe_set = ProbeSetId(probe_set)
    unknown = partition.unknown_keys(probe_set)
    if not unknown:
        raise InvalidInputError(f"probe set {probe_set.value} has no unknown probes")
    if r < 1:
        raise InvalidInputError(f"rank must be >= 1, got {r}")
    best = unknown_max_scores(scores, unknown)
    ranks, genuine = _known_rows(scores, partition.probes_known)

    thresholds = np.unique(best)[::-1]
    if ThresholdPolicy(policy) is ThresholdPolicy.ABOVE_MAX:
        thresholds = np.concatenate([[np.nextafter(thresholds[0], math.inf)], thresholds])
    thresholds = np.append(thresholds, -math.inf)

    far = _count_at_least(best, thresholds) / best.size
    dir_ = _count_at_least(genuine[ranks <= r], thresholds) / ranks.size
    return [CurvePoint(float(f), float(d), float(t)) for f, d, t in zip(far, dir_, thresholds)]


def _count_at_least(values: np.ndarray, thresholds: np.ndarray) -> np.ndarray:
    """For each threshold, how many ``values`` are >= it."""
    ordered = np.sort(values)
    return ordered.size - np.searchsorted(ordered, thresholds, side="left")


def dir_at_far(curve: Sequence[CurvePoint], far: float) -> float:
    """Best DIR among curve points whose FAR does not exceed ``far``."""
    ys = [p.y for p in curve if p.x <= far]
    return max(ys) if ys else 0.0


def roc_curve(scores: ScoreMatrix, partition: ProtocolPartition) -> list[CurvePoint]:
    """Verification ROC on the known probes: (false match rate, true match rate).

    Genuine pairs are each known probe against its own subject; impostor
    pairs are the same probe against every other subject. One point per
    distinct score, preceded by a point just above the maximum where both
    rates are zero.
    """
    known = set(partition.probes_known)
    if not known:
        raise InvalidInputError("no known probes; ROC is undefined")
    sub = scores.rows(known)
    cols = np.array([scores.column(ident) for ident, _ in sub.probe_keys])
    mask = np.zeros(sub.scores.shape, dtype=bool)
    mask[np.arange(len(cols)), cols] = True
    genuine = sub.scores[mask]
    impostor = sub.scores[~mask]

    thresholds = np.unique(sub.scores)[::-1]
    thresholds = np.concatenate([[np.nextafter(thresholds[0], math.inf)], thresholds])
    fmr = _count_at_least(impostor, thresholds) / max(impostor.size, 1)
    tmr = _count_at_least(genuine, thresholds) / genuine.size
    return [CurvePoint(float(f), float(t), float(th)) for f, t, th in zip(fmr, tmr, thresholds)]
