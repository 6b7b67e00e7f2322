"""Modality-split ensemble knowledge-graph completion.

Separate structure/visual/text embedding spaces trained with a shared
temperature-scaled cross-entropy objective, fused at inference time by
averaging, relation-wise boosting, or a per-candidate meta-learner.
"""

from .config import TEMPERATURE_GRID, RunConfig, load_config, save_config
from .decoder import ScoreTensor, score, score_all, score_all_backward, score_triples
from .ensemble import (
    MetaLearnerParams,
    RelationWeights,
    combine_average,
    combine_boosted,
    combine_metalearner,
    combine_weighted,
    fit_metalearner,
    fit_rankboost,
)
from .errors import (
    ConfigError,
    FormatError,
    MoseError,
    NumericError,
    ParseError,
    StateError,
    ValidationError,
    VocabularyError,
)
from .evaluator import MetricsReport, evaluate, filtered_rank, temperature_sweep
from .kg import (
    FilterIndex,
    Triple,
    TripleStore,
    Vocabulary,
    augment_reciprocals,
    build_filter_index,
    load_store,
    parse_triples_file,
)
from .runs import RunBundle, ingest_dataset, load_run
from .store import (
    Checkpoint,
    ModalityParams,
    ModelParams,
    init_params,
    load_checkpoint,
    load_feature_file,
    save_checkpoint,
    write_feature_file,
)
from .synth import generate_complementary_kg, generate_random_kg
from .trainer import Adagrad, ce_loss, fit, softmax_with_temperature

__version__ = "0.1.0"

__all__ = [
    "TEMPERATURE_GRID",
    "RunConfig",
    "load_config",
    "save_config",
    "ScoreTensor",
    "score",
    "score_all",
    "score_all_backward",
    "score_triples",
    "MetaLearnerParams",
    "RelationWeights",
    "combine_average",
    "combine_boosted",
    "combine_metalearner",
    "combine_weighted",
    "fit_metalearner",
    "fit_rankboost",
    "MoseError",
    "ConfigError",
    "StateError",
    "ParseError",
    "VocabularyError",
    "FormatError",
    "ValidationError",
    "NumericError",
    "MetricsReport",
    "evaluate",
    "filtered_rank",
    "temperature_sweep",
    "FilterIndex",
    "Triple",
    "TripleStore",
    "Vocabulary",
    "augment_reciprocals",
    "build_filter_index",
    "load_store",
    "parse_triples_file",
    "RunBundle",
    "ingest_dataset",
    "load_run",
    "Checkpoint",
    "ModalityParams",
    "ModelParams",
    "init_params",
    "load_checkpoint",
    "load_feature_file",
    "save_checkpoint",
    "write_feature_file",
    "generate_complementary_kg",
    "generate_random_kg",
    "Adagrad",
    "ce_loss",
    "fit",
    "softmax_with_temperature",
    "__version__",
]
