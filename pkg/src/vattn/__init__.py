"""Verified sparse attention: heavy-hitter selection plus adaptively sized
uniform sampling with an (eps, delta) relative-error target."""

from .attention import (
    AttentionOutput,
    ScoreProfile,
    attention_scores,
    denominator_rel_error,
    full_sdpa,
    logits,
    rel_error,
    sdpa_selected,
)
from .budget import (
    BudgetResult,
    SampleStats,
    budget_combined,
    budget_denominator,
    budget_numerator,
    clt_budget,
    compute_stats,
    hoeffding_budget,
    vattention,
)
from .kvcore import (
    BoundKind,
    GuaranteeParams,
    KVCache,
    QueryBatch,
    Relaxation,
    Selection,
    read_cache,
    validate_cache,
    write_cache,
)
from .selectors import (
    LshSampler,
    RngStream,
    SampledFragment,
    compose,
    local_indices,
    lsh_selection,
    oracle_topk,
    oracle_topp,
    sink_indices,
    uniform_residual,
)

__version__ = "0.1.0"
