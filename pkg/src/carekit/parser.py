"""Parsing of ``<think>...</think><answer>...</answer>`` model outputs.

Two layers: :func:`parse_output` checks the tag envelope and splits the text
into the think segment and the response; :func:`extract_chain` reads the
labelled reasoning nodes out of the think segment. :func:`render_output` is
the inverse of both.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Tuple, Union

from .core import NodeKind, ReasoningChain, StructuredOutput, canonical_form

THINK_OPEN, THINK_CLOSE = "<think>", "</think>"
ANSWER_OPEN, ANSWER_CLOSE = "<answer>", "</answer>"
_EXPECTED = (THINK_OPEN, THINK_CLOSE, ANSWER_OPEN, ANSWER_CLOSE)
_TAG_RE = re.compile(r"</?(?:think|answer)>")

DEFAULT_MARKERS = {
    NodeKind.CONTEXT: "Context:",
    NodeKind.COGNITION: "Cognition:",
    NodeKind.EMOTION: "Emotion:",
    NodeKind.SUPPORT_PLAN: "Support Plan:",
}

_SENTENCE_END = ".!?。！？"


class FailureKind(str, enum.Enum):
    MISSING_THINK = "MissingThink"
    MISSING_ANSWER = "MissingAnswer"
    TAG_ORDER_VIOLATION = "TagOrderViolation"
    EMPTY_SEGMENT = "EmptySegment"
    # non-whitespace text before, between or after the two segments
    STRAY_TEXT = "StrayText"


@dataclass(frozen=True)
class ParseFailure:
    kind: FailureKind
    position: int

    def __bool__(self) -> bool:
        return False


ParseOutcome = Union[StructuredOutput, ParseFailure]


class DuplicateNode(ValueError):
    def __init__(self, kind: NodeKind, position: int = -1):
        self.kind = kind
        self.position = position
        super().__init__(f"node {kind.name} appears more than once")


class EmptyResponse(ValueError):
    pass


@dataclass(frozen=True)
class NodeSchema:
    """Marker labels for the reasoning nodes and the nodes a chain must carry.

    ``required`` is kept in canonical node order whatever order it is given
    in, so ablated schemas compare equal however they were built.
    """

    markers: Mapping[NodeKind, str] = field(default_factory=lambda: dict(DEFAULT_MARKERS))
    required: Tuple[NodeKind, ...] = tuple(NodeKind)

    def __post_init__(self):
        markers = {NodeKind(k): v.strip() for k, v in dict(self.markers).items()}
        if set(markers) != set(NodeKind):
            raise ValueError("a marker is needed for each of the four node kinds")
        keys = [canonical_form(m) for m in markers.values()]
        if len(set(keys)) != len(keys) or not all(keys):
            raise ValueError("marker labels must be non-empty and unique")
        required = tuple(sorted({NodeKind(k) for k in self.required}))
        object.__setattr__(self, "markers", markers)
        object.__setattr__(self, "required", required)
        object.__setattr__(self, "_pattern", _marker_pattern(markers))

    def without(self, *kinds: NodeKind) -> "NodeSchema":
        return NodeSchema(self.markers, tuple(k for k in self.required if k not in kinds))

    def __hash__(self):
        return hash((tuple(sorted(self.markers.items())), self.required))


def _marker_pattern(markers: Dict[NodeKind, str]) -> "re.Pattern[str]":
    # Longest marker first so that a marker which is a prefix of another
    # cannot shadow it.
    alts = []
    for kind, label in sorted(markers.items(), key=lambda kv: -len(kv[1])):
        body = r"\s+".join(re.escape(part) for part in label.split())
        alts.append(f"(?P<{kind.name}>{body})")
    return re.compile("|".join(alts), re.IGNORECASE)


DEFAULT_SCHEMA = NodeSchema()


def parse_output(text: str) -> ParseOutcome:
    """Split a raw model output into its think segment and response.

    Returns a :class:`StructuredOutput` or a :class:`ParseFailure`; never
    raises for string input.
    """
    tags = [(m.group(), m.start()) for m in _TAG_RE.finditer(text)]
    names = [t for t, _ in tags]

    if tuple(names) != _EXPECTED:
        return ParseFailure(_classify(names, tags, text), _failure_position(names, tags, text))

    (_, t0), (_, t1), (_, a0), (_, a1) = tags
    for start, end in ((0, t0), (t1 + len(THINK_CLOSE), a0), (a1 + len(ANSWER_CLOSE), len(text))):
        gap = text[start:end]
        if gap.strip():
            return ParseFailure(FailureKind.STRAY_TEXT, start + (len(gap) - len(gap.lstrip())))

    think = text[t0 + len(THINK_OPEN):t1]
    answer = text[a0 + len(ANSWER_OPEN):a1]
    if not think.strip():
        return ParseFailure(FailureKind.EMPTY_SEGMENT, t0)
    if not answer.strip():
        return ParseFailure(FailureKind.EMPTY_SEGMENT, a0)
    return StructuredOutput(think=think, response=answer.strip())


def _classify(names, tags, text) -> FailureKind:
    counts = {tag: names.count(tag) for tag in _EXPECTED}
    if any(c > 1 for c in counts.values()):
        return FailureKind.TAG_ORDER_VIOLATION
    has_think = counts[THINK_OPEN] or counts[THINK_CLOSE]
    has_answer = counts[ANSWER_OPEN] or counts[ANSWER_CLOSE]
    if counts[THINK_OPEN] != counts[THINK_CLOSE] or counts[ANSWER_OPEN] != counts[ANSWER_CLOSE]:
        return FailureKind.TAG_ORDER_VIOLATION
    if not has_think:
        return FailureKind.MISSING_THINK
    if not has_answer:
        return FailureKind.MISSING_ANSWER
    return FailureKind.TAG_ORDER_VIOLATION


def _failure_position(names, tags, text) -> int:
    for i, (name, pos) in enumerate(tags):
        if i >= len(_EXPECTED) or name != _EXPECTED[i]:
            return pos
    return len(text)


def _at_boundary(text: str, pos: int) -> bool:
    before = text[:pos]
    stripped = before.rstrip()
    if not stripped:
        return True
    gap = before[len(stripped):]
    return "\n" in gap or (bool(gap) and stripped[-1] in _SENTENCE_END)


def extract_chain(think_text: str, schema: NodeSchema = DEFAULT_SCHEMA) -> ReasoningChain:
    """Read labelled reasoning nodes from the inner text of a think segment.

    A marker counts only at the start of the text, after a newline, or after
    sentence-ending punctuation followed by whitespace. Each marker's content
    runs to the next marker. Text before the first marker is ignored, and a
    marker with nothing after it yields no node.

    Raises :class:`DuplicateNode` if a marker occurs twice.
    """
    hits = []
    for m in schema._pattern.finditer(think_text):
        if _at_boundary(think_text, m.start()):
            hits.append((NodeKind[m.lastgroup], m.start(), m.end()))

    seen = set()
    nodes = []
    for i, (kind, start, end) in enumerate(hits):
        if kind in seen:
            raise DuplicateNode(kind, start)
        seen.add(kind)
        stop = hits[i + 1][1] if i + 1 < len(hits) else len(think_text)
        content = think_text[end:stop].strip()
        if content:
            nodes.append((kind, content))
    return ReasoningChain(tuple(nodes))


def render_output(chain: ReasoningChain, response: str, schema: NodeSchema = DEFAULT_SCHEMA) -> str:
    """Inverse of :func:`parse_output` followed by :func:`extract_chain`.

    Nodes go one per line so every marker lands on a line start.
    """
    if not response.strip():
        raise EmptyResponse("response is empty")
    body = "\n".join(f"{schema.markers[kind]} {content}" for kind, content in chain.nodes)
    return f"{THINK_OPEN}{body}{THINK_CLOSE}{ANSWER_OPEN}{response}{ANSWER_CLOSE}"


def parse_chain(text: str, schema: NodeSchema = DEFAULT_SCHEMA) -> Optional[Tuple[ReasoningChain, str]]:
    """Parse a full output down to (chain, response); None on any failure."""
    out = parse_output(text)
    if not isinstance(out, StructuredOutput):
        return None
    try:
        return extract_chain(out.think, schema), out.response
    except DuplicateNode:
        return None
