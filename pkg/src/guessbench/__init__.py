"""Deterministic long-context agent benchmark engine.

Simulates closed-world guessing games against a deterministic oracle,
records the full [tool call, tool result, guess, feedback] interaction
logs, and turns them into token-bucketed QA datasets with brute-force
verifiable gold answers.
"""

ENGINE_VERSION = "0.1.0"

from guessbench.universe import (  # noqa: E402,F401
    AttributeSchema,
    Item,
    Section,
    Universe,
    UniverseError,
    generate_synthetic_universe,
    load_universe,
    validate_universe,
)
from guessbench.query import (  # noqa: E402,F401
    ConciseResult,
    NumericCondition,
    QueryError,
    ToolQuery,
    ValueCondition,
    VerboseResult,
    match_item,
    query_concise,
    query_verbose,
)
from guessbench.environment import (  # noqa: E402,F401
    Feedback,
    GameState,
    feedback_on_guess,
    new_game,
    render_feedback,
    respond_predicate,
)
from guessbench.rollout import RolloutConfig, RoundRecord, Trajectory, simulate  # noqa: E402,F401
from guessbench.masking import SymbolMap, build_symbol_map, leakage_check, mask  # noqa: E402,F401
from guessbench.postprocess import (  # noqa: E402,F401
    BucketSpec,
    TokenCounter,
    count_tokens,
    truncate_whole_rounds,
    verify_final_guess,
)
from guessbench.qa import QASample, QuotaConfig, WeightTable, build_dataset, compute_acl  # noqa: E402,F401
from guessbench.harness import (  # noqa: E402,F401
    ChatMessage,
    EvalResult,
    aggregate,
    extract_answer,
    run_eval,
    score,
    serialize_trajectory,
)
