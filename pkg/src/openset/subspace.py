"""PCA followed by LDA, composed into one affine map ``x -> W^T (x - mean)``."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np
import scipy.linalg

from .core import DegenerateDataError, InvalidInputError, NumericError, rowdot

DEFAULT_RETENTION = 0.99
SCATTER_REGULARIZATION = 1e-6


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    """Flip each column so its largest-magnitude entry is positive."""
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray
    components: np.ndarray  # (retained, D), orthonormal rows
    explained_variance: np.ndarray  # (retained,)
    total_variance: float
    retention: float

    @property
    def retained(self) -> int:
        return self.components.shape[0]

    def transform(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return _apply(self.components, self.mean, x)

    def inverse_transform(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=np.float64)
        return y @ self.components + self.mean


@dataclass(frozen=True)
class LdaModel:
    projection: np.ndarray  # (input_dim, output_dim), columns by descending eigenvalue
    eigenvalues: np.ndarray
    class_count: int

    @property
    def output_dim(self) -> int:
        return self.projection.shape[1]


@dataclass(frozen=True)
class SubspaceModel:
    mean: np.ndarray  # (D,)
    matrix: np.ndarray  # W, (D, m)
    retention: float
    pca: PcaModel | None = None
    lda: LdaModel | None = None

    @property
    def input_dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def output_dim(self) -> int:
        return self.matrix.shape[1]

    @cached_property
    def rows(self) -> np.ndarray:
        """W^T as a contiguous array, one output dimension per row."""
        return np.ascontiguousarray(self.matrix.T)

    @classmethod
    def identity(cls, dim: int) -> "SubspaceModel":
        return cls(np.zeros(dim), np.eye(dim), 1.0)


def _apply(rows_out: np.ndarray, mean: np.ndarray, x: np.ndarray) -> np.ndarray:
    """``rows_out @ (x - mean)`` for a vector or each row of a matrix.

    Uses the row-wise reduction so the projection of a vector does not
    depend on what else is projected alongside it.
    """
    if x.shape[-1] != mean.shape[0]:
        raise InvalidInputError(f"dimension mismatch: expected {mean.shape[0]}, got {x.shape[-1]}")
    centered = x - mean
    if centered.ndim == 1:
        return rowdot(rows_out, centered)
    out = np.empty((centered.shape[0], rows_out.shape[0]))
    for i, c in enumerate(centered):
        out[i] = rowdot(rows_out, c)
    return out


def fit_pca(training, retention: float = DEFAULT_RETENTION) -> PcaModel:
    X = np.asarray(training, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise InvalidInputError("PCA needs at least two training vectors")
    if not 0 < retention <= 1:
        raise InvalidInputError(f"retention must be in (0, 1], got {retention}")
    mean = X.mean(axis=0)
    centered = X - mean
    # SVD of the centered data gives the covariance eigenvectors directly.
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    variance = s**2 / (X.shape[0] - 1)
    total = float(variance.sum())
    if total <= 0 or not np.isfinite(total):
        raise DegenerateDataError("training data has zero total variance")
    cumulative = np.cumsum(variance) / total
    # Tolerance only absorbs the rounding in cumsum when retention == 1.
    k = int(np.searchsorted(cumulative, retention - 1e-12, side="left")) + 1
    k = min(k, int(np.count_nonzero(variance > 0)))
    components = _fix_signs(vt[:k].T).T
    return PcaModel(mean, np.ascontiguousarray(components), variance[:k], total, retention)


def scatter_matrices(labels: Sequence, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Within-class and between-class scatter of ``X`` grouped by ``labels``."""
    labels = np.asarray(labels)
    overall = X.mean(axis=0)
    d = X.shape[1]
    sw = np.zeros((d, d))
    sb = np.zeros((d, d))
    for c in sorted(set(labels.tolist())):
        members = X[labels == c]
        mu = members.mean(axis=0)
        dev = members - mu
        sw += dev.T @ dev
        diff = (mu - overall)[:, None]
        sb += len(members) * (diff @ diff.T)
    return sw, sb


def fit_lda(labels: Sequence, features) -> LdaModel:
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != len(labels):
        raise InvalidInputError("need one label per feature row")
    classes, counts = np.unique(np.asarray(labels), return_counts=True)
    if len(classes) < 2:
        raise InvalidInputError("LDA needs at least two classes")
    if counts.max() < 2:
        raise InvalidInputError("LDA needs at least one class with two or more samples")

    sw, sb = scatter_matrices(labels, X)
    d = X.shape[1]
    sw = sw + SCATTER_REGULARIZATION * np.trace(sw) / d * np.eye(d)
    try:
        evals, evecs = scipy.linalg.eigh(sb, sw)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericError(f"within-class scatter is singular: {exc}") from exc
    order = np.argsort(evals, kind="stable")[::-1]
    m = min(len(classes) - 1, d)
    keep = order[:m]
    projection = _fix_signs(evecs[:, keep])
    return LdaModel(projection, evals[keep], len(classes))


def fit_subspace(labels: Sequence, training, retention: float = DEFAULT_RETENTION) -> SubspaceModel:
    """Fit PCA on ``training`` and LDA in the PCA space; compose the two."""
    X = np.asarray(training, dtype=np.float64)
    pca = fit_pca(X, retention)
    lda = fit_lda(labels, pca.transform(X))
    W = pca.components.T @ lda.projection
    return SubspaceModel(pca.mean, W, retention, pca, lda)


def project(m: SubspaceModel, x) -> np.ndarray:
    """Project a vector (or the rows of a matrix) into the discriminant space."""
    x = np.asarray(x, dtype=np.float64)
    return _apply(m.rows, m.mean, x)
