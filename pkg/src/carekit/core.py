"""Domain types shared across the toolkit.

Everything here is an immutable value. Text is NFC-normalized on the way in
so that every downstream offset is over code points of one canonical form.
"""

from __future__ import annotations

import enum
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Tuple

ESCONV_STRATEGIES = (
    "Question",
    "Restatement or Paraphrasing",
    "Reflection of Feelings",
    "Self-disclosure",
    "Affirmation and Reassurance",
    "Providing Suggestions",
    "Information",
    "Others",
)


class UnknownStrategy(ValueError):
    def __init__(self, label: str, location: Optional[str] = None):
        self.label = label
        self.location = location
        msg = f"unknown strategy {label!r}"
        if location:
            msg += f" at {location}"
        super().__init__(msg)


def nfc(text: str) -> str:
    return unicodedata.normalize("NFC", text)


def canonical_form(text: str) -> str:
    """Lowercase, trim and collapse internal whitespace."""
    return " ".join(nfc(text).split()).lower()


class Speaker(str, enum.Enum):
    SEEKER = "seeker"
    SUPPORTER = "supporter"

    @classmethod
    def parse(cls, raw: str) -> "Speaker":
        return cls(raw.strip().lower())


class NodeKind(enum.IntEnum):
    """The four reasoning nodes; integer values give the canonical order."""

    CONTEXT = 0
    COGNITION = 1
    EMOTION = 2
    SUPPORT_PLAN = 3

    @property
    def slug(self) -> str:
        return self.name.lower().replace("_", "-")

    @classmethod
    def parse(cls, raw: str) -> "NodeKind":
        key = canonical_form(raw).replace("-", " ").replace("_", " ")
        for kind in cls:
            if kind.name.lower().replace("_", " ") == key:
                return kind
        raise ValueError(f"unknown node kind {raw!r}")


@dataclass(frozen=True, eq=False)
class Strategy:
    """A support-strategy label. Equality is on canonical form."""

    label: str

    @property
    def key(self) -> str:
        return canonical_form(self.label)

    def __eq__(self, other: object) -> bool:
        if isinstance(other, Strategy):
            return self.key == other.key
        return NotImplemented

    def __hash__(self) -> int:
        return hash(self.key)

    def __str__(self) -> str:
        return self.label


@dataclass(frozen=True)
class StrategyVocabulary:
    labels: Tuple[str, ...] = ESCONV_STRATEGIES

    def __post_init__(self):
        labels = tuple(nfc(label).strip() for label in self.labels)
        if not labels:
            raise ValueError("strategy vocabulary is empty")
        keys = [canonical_form(label) for label in labels]
        if len(set(keys)) != len(keys):
            raise ValueError("strategy labels are not unique under canonical form")
        if any(not k for k in keys):
            raise ValueError("strategy labels must be non-empty")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "_index", dict(zip(keys, labels)))

    def __len__(self) -> int:
        return len(self.labels)

    def __iter__(self):
        return (Strategy(label) for label in self.labels)

    def __contains__(self, item) -> bool:
        label = item.label if isinstance(item, Strategy) else item
        return canonical_form(label) in self._index

    def index(self, strategy: Strategy) -> int:
        return self.labels.index(self.canonicalize(strategy.label).label)

    def canonicalize(self, raw: str) -> Strategy:
        try:
            return Strategy(self._index[canonical_form(raw)])
        except KeyError:
            raise UnknownStrategy(raw) from None

    @classmethod
    def from_file(cls, path) -> "StrategyVocabulary":
        """Read one label per line (blank lines and ``#`` comments skipped),
        or a JSON array of labels if the file starts with ``[``."""
        text = Path(path).read_text(encoding="utf-8")
        if text.lstrip().startswith("["):
            import json

            return cls(tuple(json.loads(text)))
        lines = [ln.strip() for ln in text.splitlines()]
        return cls(tuple(ln for ln in lines if ln and not ln.startswith("#")))


DEFAULT_VOCAB = StrategyVocabulary()


def canonicalize_strategy(raw: str, vocab: StrategyVocabulary = DEFAULT_VOCAB) -> Strategy:
    """Map free text to the vocabulary label with the same canonical form.

    >>> canonicalize_strategy("  Providing   Suggestions ")
    Strategy(label='Providing Suggestions')
    """
    return vocab.canonicalize(raw)


@dataclass(frozen=True)
class Utterance:
    speaker: Speaker
    text: str
    strategy: Optional[Strategy] = None

    def __post_init__(self):
        object.__setattr__(self, "speaker", Speaker(self.speaker))
        object.__setattr__(self, "text", nfc(self.text))
        if not self.text.strip():
            raise ValueError("utterance text is empty")
        if self.speaker is Speaker.SEEKER and self.strategy is not None:
            raise ValueError("seeker utterances carry no strategy")


@dataclass(frozen=True)
class DialogueHistory:
    turns: Tuple[Utterance, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "turns", tuple(self.turns))

    def __len__(self) -> int:
        return len(self.turns)

    def __iter__(self):
        return iter(self.turns)

    def __getitem__(self, idx):
        return self.turns[idx]

    def last_seeker(self) -> Optional[Utterance]:
        for turn in reversed(self.turns):
            if turn.speaker is Speaker.SEEKER:
                return turn
        return None


@dataclass(frozen=True)
class ReasoningChain:
    """Ordered reasoning nodes, at most one per kind.

    Contents are stored trimmed; order is the order of appearance, which is
    not necessarily canonical (the coherence reward checks that).
    """

    nodes: Tuple[Tuple[NodeKind, str], ...] = ()

    def __post_init__(self):
        nodes = []
        seen = set()
        for kind, content in self.nodes:
            kind = NodeKind(kind)
            if kind in seen:
                raise ValueError(f"duplicate node {kind.name}")
            seen.add(kind)
            content = nfc(content).strip()
            if not content:
                raise ValueError(f"node {kind.name} has empty content")
            nodes.append((kind, content))
        object.__setattr__(self, "nodes", tuple(nodes))

    @classmethod
    def from_pairs(cls, pairs: Iterable[Tuple[NodeKind, str]]) -> "ReasoningChain":
        return cls(tuple(pairs))

    @property
    def kinds(self) -> Tuple[NodeKind, ...]:
        return tuple(kind for kind, _ in self.nodes)

    def get(self, kind: NodeKind) -> Optional[str]:
        for k, content in self.nodes:
            if k == kind:
                return content
        return None

    def __len__(self) -> int:
        return len(self.nodes)

    def __contains__(self, kind) -> bool:
        return kind in self.kinds


@dataclass(frozen=True)
class StructuredOutput:
    """A parsed ``<think>..</think><answer>..</answer>`` transcript.

    ``think`` is the raw inner text of the think segment; node extraction is a
    separate step (:func:`carekit.parser.extract_chain`).
    """

    think: str
    response: str

    def chain(self, schema=None) -> ReasoningChain:
        from .parser import DEFAULT_SCHEMA, extract_chain

        return extract_chain(self.think, schema or DEFAULT_SCHEMA)


@dataclass(frozen=True)
class TrainingInstance:
    instance_id: str
    history: DialogueHistory
    gold_response: str
    gold_strategy: Optional[Strategy] = None
    chain: Optional[ReasoningChain] = None

    def __post_init__(self):
        object.__setattr__(self, "gold_response", nfc(self.gold_response))
        if not self.gold_response.strip():
            raise ValueError(f"{self.instance_id}: gold response is empty")


@dataclass(frozen=True)
class RewardBreakdown:
    fmt: int
    cog: int
    strat: int
    final: int = field(init=False)

    def __post_init__(self):
        for name in ("fmt", "cog", "strat"):
            if getattr(self, name) not in (0, 1):
                raise ValueError(f"{name} must be 0 or 1")
        object.__setattr__(self, "final", self.fmt * self.cog * self.strat)

    def as_tuple(self) -> Tuple[int, int, int, int]:
        return (self.fmt, self.cog, self.strat, self.final)
