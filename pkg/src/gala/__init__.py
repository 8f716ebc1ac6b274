"""Global-local active sample selection for multi-source domain adaptation."""

from .clustering import ClusterModel, KMeans, assign_to_clusters, kmeans
from .datagen import ScenarioConfig, generate
from .embedding import EmbeddingBatch, EmbeddingBundle, embed_all, forward, gradient_embedding
from .exceptions import ConfigError, GalaError, SchemaError, ValidationError
from .harness import ExperimentSpec, RoundReport, alpha_sweep, proxy_domain_discrepancy, run_experiment
from .selection import (
    GALASampler,
    SelectionResult,
    aggregate_distance,
    baseline_select,
    domain_statistics,
    global_step,
    local_step,
    pair_distance,
    select_round,
)
from .trainer import SoftmaxNetClassifier, TrainConfig, evaluate, train_epochs
from .types import UNLABELED, Dataset, LabeledPool, ModelState, SelectionConfig, validate_dataset

__version__ = "0.1.0"
