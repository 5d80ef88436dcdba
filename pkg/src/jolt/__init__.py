"""Joint probabilistic prediction and imputation on heterogeneous tabular
data via in-context learning over token-level language models."""

from .backend import (
    BackendError,
    BackendInfo,
    GenRequest,
    HttpBackend,
    MockLm,
    ScoreRequest,
    ScoreResponse,
    enumerate_continuations,
    nucleus_filter,
)
from .experiment import ExperimentConfig, ExperimentReport, run_experiment
from .impute import ImputationError, ImputedTable, impute_baseline, impute_llm, imputation_mae
from .inference import (
    AcceptanceError,
    CategoricalDist,
    InferenceError,
    JointResult,
    NumericalLogPdf,
    RowPrediction,
    SampleSummary,
    SamplingConfig,
    categorical_logprobs,
    joint_logprob,
    numerical_logpdf,
    predict_point,
    predict_row,
    rejection_sample,
)
from .metrics import MetricSet, auc, compute_metrics, macro_ovr_auc
from .prompts import (
    Prompt,
    PromptError,
    PromptTemplate,
    continuation_for_target,
    permute_for_imputation,
    serialize,
)
from .table import (
    MISSING,
    Category,
    ColumnKind,
    ColumnSpec,
    Number,
    SchemaError,
    Table,
    Text,
    is_missing,
    load_csv,
    mask_mcar,
    render_cell,
    select_shots,
    select_test,
    write_csv,
)
from .tokenizer import (
    CharTokenizer,
    TokenizeError,
    TokenSeq,
    Vocab,
    char_vocab,
    numeric_token_mask,
    validate_single_digit,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
