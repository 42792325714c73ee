"""Pool-based active learning with Vendi information gain acquisition."""

from vigal.core import (
    CategoricalDistribution,
    Dataset,
    LabelVectorSet,
    PoolState,
    ProbabilitySampleSet,
    empirical_class_distribution,
    shannon_entropy,
)
from vigal.vendi import (
    KernelSpec,
    kernel_matrix,
    normalized_spectrum,
    vendi_entropy,
    vendi_info_gain,
    vendi_score,
)

__version__ = "0.1.0"

__all__ = [
    "CategoricalDistribution",
    "Dataset",
    "KernelSpec",
    "LabelVectorSet",
    "PoolState",
    "ProbabilitySampleSet",
    "empirical_class_distribution",
    "kernel_matrix",
    "normalized_spectrum",
    "shannon_entropy",
    "vendi_entropy",
    "vendi_info_gain",
    "vendi_score",
]
