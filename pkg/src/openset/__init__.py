"""Open-set face identification: protocol, scoring methods and metrics."""

from .core import (
    Dataset,
    DegenerateDataError,
    GalleryTemplate,
    InvalidInputError,
    LabeledFeature,
    NumericError,
    OpenSetError,
    ProtocolError,
    ScoreMatrix,
    TrainingDataError,
    ValidationError,
    cosine_distance,
    cosine_similarity,
    make_dataset,
    validate_dataset,
)
from .evaluation import (
    CurvePoint,
    ThresholdPolicy,
    cmc_curve,
    dir_at,
    dir_curve,
    far_at,
    roc_curve,
    select_threshold,
    threshold_for_far,
)
from .evm import EvmConfig, EvmGalleryModel, Fusion
from .evt import WeibullFit, fit_low_tail, fit_weibull_mle, psi
from .protocol import ProbeSetId, ProtocolPartition, build_partition
from .scoring import Method, ScoringMethod, score_all, score_pair
from .subspace import SubspaceModel, fit_subspace
from .synthetic import SyntheticSpec, generate_synthetic

__version__ = "0.1.0"
