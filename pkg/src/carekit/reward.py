"""Rule-based hierarchical reward.

Three indicator rewards (format, cognitive coherence, support strategy) and
their conjunction. All are integers in {0, 1}; there is no partial credit.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Tuple, Union

from .core import (
    DEFAULT_VOCAB,
    NodeKind,
    ReasoningChain,
    RewardBreakdown,
    Strategy,
    StrategyVocabulary,
    StructuredOutput,
    UnknownStrategy,
    canonical_form,
)
from .parser import DEFAULT_SCHEMA, DuplicateNode, NodeSchema, extract_chain, parse_output

_TRAILING_PUNCT = " \t.,;:!?。，；：！？"


@dataclass(frozen=True)
class RewardConfig:
    """Scoring configuration.

    ``required_nodes`` drives the node ablations: a config without EMOTION
    accepts chains that omit the emotion node. ``strict_plan`` switches the
    strategy match from label-prefix to whole-content equality.
    """

    schema: NodeSchema = DEFAULT_SCHEMA
    vocab: StrategyVocabulary = DEFAULT_VOCAB
    required_nodes: Tuple[NodeKind, ...] = tuple(NodeKind)
    strict_plan: bool = False
    name: str = field(default="full", compare=False)

    def __post_init__(self):
        object.__setattr__(self, "required_nodes", tuple(sorted({NodeKind(k) for k in self.required_nodes})))

    def without(self, *kinds: NodeKind) -> "RewardConfig":
        name = "no-" + "-".join(k.slug for k in kinds) if kinds else self.name
        return RewardConfig(
            schema=self.schema,
            vocab=self.vocab,
            required_nodes=tuple(k for k in self.required_nodes if k not in kinds),
            strict_plan=self.strict_plan,
            name=name,
        )

    @classmethod
    def from_dict(cls, data: dict, vocab: Optional[StrategyVocabulary] = None) -> "RewardConfig":
        """Build from a JSON-style mapping.

        Recognised keys: ``name``, ``required_nodes`` (list of node names),
        ``markers`` (node name -> label), ``vocab`` (list of labels),
        ``strict_plan``. An explicit ``vocab`` argument wins over the mapping.
        """
        markers = dict(DEFAULT_SCHEMA.markers)
        for key, label in (data.get("markers") or {}).items():
            markers[NodeKind.parse(key)] = label
        required = data.get("required_nodes")
        required = tuple(NodeKind.parse(k) for k in required) if required is not None else tuple(NodeKind)
        if vocab is None:
            vocab = StrategyVocabulary(tuple(data["vocab"])) if data.get("vocab") else DEFAULT_VOCAB
        return cls(
            schema=NodeSchema(markers, tuple(NodeKind)),
            vocab=vocab,
            required_nodes=required,
            strict_plan=bool(data.get("strict_plan", False)),
            name=data.get("name", "custom"),
        )


FULL_CONFIG = RewardConfig()
NAMED_CONFIGS = {
    "full": FULL_CONFIG,
    **{f"no-{k.slug}": FULL_CONFIG.without(k) for k in NodeKind},
}


def load_config(name_or_path: Optional[str], vocab: Optional[StrategyVocabulary] = None) -> RewardConfig:
    """Resolve a named config ("full", "no-emotion", ...) or a JSON file."""
    if not name_or_path:
        cfg = FULL_CONFIG
    elif name_or_path in NAMED_CONFIGS:
        cfg = NAMED_CONFIGS[name_or_path]
    else:
        path = Path(name_or_path)
        if not path.exists():
            raise ValueError(
                f"unknown config {name_or_path!r}; expected one of {sorted(NAMED_CONFIGS)} or a JSON file"
            )
        return RewardConfig.from_dict(json.loads(path.read_text(encoding="utf-8")), vocab)
    if vocab is not None:
        cfg = RewardConfig(cfg.schema, vocab, cfg.required_nodes, cfg.strict_plan, cfg.name)
    return cfg


def format_reward(text: str) -> int:
    """1 iff the text is exactly one non-empty think segment followed by one
    non-empty answer segment, with only whitespace around them."""
    return int(isinstance(parse_output(text), StructuredOutput))


def coherence_reward(chain: ReasoningChain, config: RewardConfig = FULL_CONFIG) -> int:
    kinds = chain.kinds
    positions = []
    for kind in config.required_nodes:
        if kind not in kinds:
            return 0
        positions.append(kinds.index(kind))
    return int(positions == sorted(positions))


def match_plan(content: str, vocab: StrategyVocabulary = DEFAULT_VOCAB, strict: bool = False) -> Optional[Strategy]:
    """Map a support-plan node's text to a vocabulary strategy.

    By default the longest label that the canonicalized content starts with
    wins, provided it ends on a word boundary; whatever follows (a gloss such
    as "- remind them of their worth") is ignored. In strict mode the whole
    content, minus trailing punctuation, has to be a label.
    """
    text = canonical_form(content).rstrip(_TRAILING_PUNCT)
    if strict:
        try:
            return vocab.canonicalize(text)
        except UnknownStrategy:
            return None
    best = None
    for label in vocab.labels:
        key = canonical_form(label)
        if text.startswith(key) and (len(text) == len(key) or not _is_word_char(text[len(key)])):
            if best is None or len(key) > len(canonical_form(best)):
                best = label
    return Strategy(best) if best is not None else None


def _is_word_char(ch: str) -> bool:
    return bool(re.match(r"\w", ch)) or ch == "-"


def strategy_reward(chain: ReasoningChain, gold: Union[Strategy, str], config: RewardConfig = FULL_CONFIG) -> int:
    gold = _as_gold(gold, config)
    plan = chain.get(NodeKind.SUPPORT_PLAN)
    if plan is None:
        return 0
    predicted = match_plan(plan, config.vocab, config.strict_plan)
    return int(predicted is not None and predicted == gold)


def _as_gold(gold, config: RewardConfig) -> Strategy:
    label = gold.label if isinstance(gold, Strategy) else gold
    return config.vocab.canonicalize(label)


def hierarchical_reward(text: str, gold: Union[Strategy, str], config: RewardConfig = FULL_CONFIG) -> RewardBreakdown:
    """Score one raw output against its gold strategy.

    A format failure short-circuits: coherence and strategy are recorded as 0.
    A think segment with a repeated marker is not a valid chain and also
    scores 0 on both.
    """
    gold = _as_gold(gold, config)
    parsed = parse_output(text)
    if not isinstance(parsed, StructuredOutput):
        return RewardBreakdown(0, 0, 0)
    try:
        chain = extract_chain(parsed.think, config.schema)
    except DuplicateNode:
        return RewardBreakdown(1, 0, 0)
    return RewardBreakdown(1, coherence_reward(chain, config), strategy_reward(chain, gold, config))


def predicted_strategy(text: str, config: RewardConfig = FULL_CONFIG) -> Optional[Strategy]:
    """The strategy named in an output's support-plan node, if any."""
    parsed = parse_output(text)
    if not isinstance(parsed, StructuredOutput):
        return None
    try:
        plan = extract_chain(parsed.think, config.schema).get(NodeKind.SUPPORT_PLAN)
    except DuplicateNode:
        return None
    return match_plan(plan, config.vocab, config.strict_plan) if plan else None
