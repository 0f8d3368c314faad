"""Reasoning-chain parsing, rule-based rewards, data splitting, metrics and a
GRPO toy for emotional-support dialogue models."""

from .core import (
    DEFAULT_VOCAB,
    ESCONV_STRATEGIES,
    DialogueHistory,
    NodeKind,
    ReasoningChain,
    RewardBreakdown,
    Speaker,
    Strategy,
    StrategyVocabulary,
    StructuredOutput,
    TrainingInstance,
    UnknownStrategy,
    Utterance,
    canonicalize_strategy,
)
from .parser import (
    DEFAULT_SCHEMA,
    DuplicateNode,
    FailureKind,
    NodeSchema,
    ParseFailure,
    extract_chain,
    parse_output,
    render_output,
)
from .reward import (
    FULL_CONFIG,
    NAMED_CONFIGS,
    RewardConfig,
    coherence_reward,
    format_reward,
    hierarchical_reward,
    load_config,
    strategy_reward,
)

__version__ = "0.1.0"
