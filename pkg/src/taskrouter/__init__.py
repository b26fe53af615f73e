"""Replay-free continual-learning task router.

Natural-language instructions are hashed and expanded into a fixed random
feature space, a closed-form ridge classifier maps them to task ids, and new
tasks are absorbed through exact recursive updates of two sufficient
statistics, so earlier tasks are never revisited and never forgotten. A
registry of per-task executors turns the chosen id into an action chunk.
"""

from .corpus import InstructionRecord, generate_synthetic_corpus, read_corpus, write_corpus
from .evaluation import (
    EvalReport,
    PhasePlan,
    average_accuracy,
    baseline_sequential,
    forgetting_rate,
    run_protocol,
)
from .features import (
    EmbeddingRecord,
    ExpansionParams,
    FeaturizerConfig,
    SequenceFeatures,
    embed_sequence,
    expand,
    featurize_batch,
    featurize_one,
    mean_pool,
    read_embedding_records,
    tokenize,
)
from .library import (
    ActionChunk,
    ExecutorRegistry,
    ExecutorSpec,
    Observation,
    execute,
    load_manifest,
    save_manifest,
)
from .scheduler import (
    NumericalError,
    SchedulerState,
    StateFormatError,
    expand_label_space,
    fit_base,
    init,
    load_state,
    one_hot,
    predict,
    predict_proba,
    save_state,
    update,
)
from .service import Router, RouteResult

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "ActionChunk",
    "EmbeddingRecord",
    "EvalReport",
    "ExecutorRegistry",
    "ExecutorSpec",
    "ExpansionParams",
    "FeaturizerConfig",
    "InstructionRecord",
    "NumericalError",
    "Observation",
    "PhasePlan",
    "RouteResult",
    "Router",
    "SchedulerState",
    "SequenceFeatures",
    "StateFormatError",
    "average_accuracy",
    "baseline_sequential",
    "embed_sequence",
    "execute",
    "expand",
    "expand_label_space",
    "featurize_batch",
    "featurize_one",
    "fit_base",
    "forgetting_rate",
    "generate_synthetic_corpus",
    "init",
    "load_manifest",
    "load_state",
    "mean_pool",
    "one_hot",
    "predict",
    "predict_proba",
    "read_corpus",
    "read_embedding_records",
    "run_protocol",
    "save_manifest",
    "save_state",
    "tokenize",
    "update",
    "write_corpus",
]
