"""Near-duplicate stack-trace retrieval with learned and classic LSH.

The package parses crash reports into stack traces, scores trace pairs
with twelve similarity measures, and answers near-duplicate queries
through an (L, K)-parameterized multi-table LSH index backed by MinHash,
SimHash, or a trained Siamese convolutional encoder whose collision
behavior tracks any chosen measure.
"""

from .encoder import (
    DeepLshFamily,
    EncoderConfig,
    EncoderParams,
    LossConfig,
    PairBatch,
    approx_generalized_hamming,
    as_hash_family,
    binarize,
    encode_onehot,
    forward,
    forward_batch,
    gradients,
    init_params,
    load_model,
    loss,
    save_model,
)
from .errors import (
    AllCombinationsExcluded,
    DomainError,
    DuplicateId,
    EmptyBatch,
    EmptyTokenSet,
    FamilyMismatch,
    InsufficientCorpus,
    LengthMismatch,
    MalformedFrame,
    MalformedReport,
    NoEligibleQueries,
    ParamMismatch,
    ShapeMismatch,
    StackLshError,
    ZeroVector,
)
from .evaluation import (
    BenchResult,
    EvalReport,
    QuerySet,
    SweepResult,
    bench,
    default_lk_grid,
    evaluate,
    guarantee_metrics,
    guarantee_scores,
    kendall_tau,
    knn_oracle,
    mean_reciprocal_rank,
    recall_rate_at_k,
    sweep_lk,
)
from .families import MinHashFamily, SimHashFamily
from .lsh import (
    HashCode,
    HashFamily,
    LshIndex,
    LshParams,
    build_index,
    delta,
    exact_block_hamming,
    implied_similarity_threshold,
    load_index,
    pack_bits,
    probability_similarity,
    query,
    query_ranked,
    save_index,
)
from .measures import (
    DEFAULT_MEASURE_PARAMS,
    MeasureId,
    MeasureParams,
    brodie,
    cosine,
    durfex,
    edit_sim,
    jaccard_ngram,
    lerch,
    moroo,
    pdm,
    similarity,
    tracesim,
)
from .synth import synthetic_reports
from .traces import (
    CorpusStats,
    CrashReport,
    FrameGranularity,
    StackFrame,
    StackTrace,
    build_corpus,
    load_reports,
    load_stats,
    normalize_frame,
    parse_report,
    save_reports,
    save_stats,
    trace_tokens,
)
from .training import Adam, DeepLshEncoder, TrainConfig, TrainResult, make_pair_targets, train

__version__ = "0.1.0"
