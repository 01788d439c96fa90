"""treekt: knowledge-tracing tutoring engine over hierarchical concept trees."""

from .engine import (
    Difficulty,
    EmConfig,
    EmResult,
    InteractionRecord,
    PosteriorState,
    StudentHistory,
    Tracer,
    TracerParams,
    append_observation,
    fit_em,
    infer_posteriors,
    log_likelihood,
    predict_correctness,
    prior_marginals,
)
from .errors import DataValidationError, GenerationError, TreektError
from .tree import KcNode, KcTree, load_tree, loads_tree, save_tree, validate_tree

__version__ = "0.1.0"
