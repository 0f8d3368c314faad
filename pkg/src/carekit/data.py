"""ESConv ingestion, turn-level instance extraction, and the SFT/RL split.

Instances whose supporter turn carries a strategy become training instances.
A chain provider (a file of distilled chains, or anything else callable)
attaches a reasoning chain to each one; instances whose chain survives the
coherence and strategy checks form the SFT set, all others the RL set.
"""

from __future__ import annotations

import io
import json
import logging
from collections import Counter
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import IO, Callable, Dict, Iterable, List, Optional, Protocol, Sequence, Union

from .core import (
    DEFAULT_VOCAB,
    DialogueHistory,
    NodeKind,
    ReasoningChain,
    Speaker,
    Strategy,
    StrategyVocabulary,
    StructuredOutput,
    TrainingInstance,
    UnknownStrategy,
    Utterance,
    nfc,
)
from .parser import DuplicateNode, NodeSchema, extract_chain, parse_output, render_output
from .reward import FULL_CONFIG, RewardConfig, coherence_reward, strategy_reward

log = logging.getLogger(__name__)

FAILURE_REASONS = ("no_chain", "missing_node", "misordered", "plan_mismatch")


class MalformedRecord(ValueError):
    def __init__(self, message: str, location: str):
        self.location = location
        super().__init__(f"{location}: {message}")


class ProviderFailure(RuntimeError):
    def __init__(self, instance_id: str, partial: "SplitResult", cause: BaseException):
        self.instance_id = instance_id
        self.partial = partial
        super().__init__(f"chain provider failed on {instance_id}: {cause!r}")


class IoFailure(OSError):
    pass


@dataclass(frozen=True)
class Conversation:
    conversation_id: str
    history: DialogueHistory
    situation: Optional[str] = None


@dataclass(frozen=True)
class Corpus:
    conversations: tuple = ()

    def __post_init__(self):
        ids = [c.conversation_id for c in self.conversations]
        if len(set(ids)) != len(ids):
            raise ValueError("conversation ids are not unique")

    def __len__(self) -> int:
        return len(self.conversations)

    def __iter__(self):
        return iter(self.conversations)


# ---------------------------------------------------------------- ingestion

def _read_bytes(source) -> bytes:
    if isinstance(source, (bytes, bytearray)):
        return bytes(source)
    if isinstance(source, (str, Path)):
        return Path(source).read_bytes()
    data = source.read()
    return data.encode("utf-8") if isinstance(data, str) else data


def ingest_corpus(
    source: Union[bytes, IO[bytes], str, Path],
    format_tag: str = "esconv-json",
    vocab: StrategyVocabulary = DEFAULT_VOCAB,
) -> Corpus:
    """Read an ESConv-style JSON corpus.

    Consecutive messages from the same speaker are merged into one utterance
    (newline-joined). A merged supporter turn keeps the first strategy
    annotation among its messages.
    """
    if format_tag != "esconv-json":
        raise ValueError(f"unsupported corpus format {format_tag!r} (instance files are read with read_instances)")
    raw = _read_bytes(source)
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise MalformedRecord("not valid UTF-8", f"byte {exc.start}") from None
    if not text.strip():
        log.warning("empty corpus")
        return Corpus(())
    try:
        records = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedRecord(exc.msg, f"line {exc.lineno} column {exc.colno}") from None
    if not isinstance(records, list):
        raise MalformedRecord("top level must be an array of conversations", "line 1")

    conversations = []
    for ci, record in enumerate(records):
        where = f"conversation {ci}"
        if not isinstance(record, dict) or not isinstance(record.get("dialog"), list):
            raise MalformedRecord("expected an object with a 'dialog' array", where)
        conv_id = str(record.get("conversation_id", record.get("id", ci)))
        turns = _merge_turns(record["dialog"], vocab, where)
        if not any(t.speaker is Speaker.SUPPORTER for t in turns):
            log.warning("%s (%s) has no supporter turn", where, conv_id)
        situation = record.get("situation")
        conversations.append(Conversation(conv_id, DialogueHistory(tuple(turns)), nfc(situation) if situation else None))
    return Corpus(tuple(conversations))


def _merge_turns(dialog: list, vocab: StrategyVocabulary, where: str) -> List[Utterance]:
    merged: List[list] = []  # [speaker, [texts], strategy]
    for mi, msg in enumerate(dialog):
        loc = f"{where}, message {mi}"
        if not isinstance(msg, dict):
            raise MalformedRecord("message is not an object", loc)
        try:
            speaker = Speaker.parse(msg["speaker"])
        except (KeyError, ValueError, AttributeError):
            raise MalformedRecord(f"bad speaker {msg.get('speaker')!r}", loc) from None
        content = msg.get("content")
        if not isinstance(content, str):
            raise MalformedRecord("content must be a string", loc)
        content = nfc(content).strip()
        strategy = None
        if speaker is Speaker.SUPPORTER:
            label = (msg.get("annotation") or {}).get("strategy")
            if label is not None:
                try:
                    strategy = vocab.canonicalize(label)
                except UnknownStrategy:
                    raise UnknownStrategy(label, loc) from None
        if not content:
            log.debug("%s: skipping empty message", loc)
            continue
        if merged and merged[-1][0] is speaker:
            merged[-1][1].append(content)
            if merged[-1][2] is None:
                merged[-1][2] = strategy
            elif strategy is not None and strategy != merged[-1][2]:
                log.debug("%s: merged turn keeps strategy %s over %s", loc, merged[-1][2], strategy)
        else:
            merged.append([speaker, [content], strategy])
    return [Utterance(sp, "\n".join(texts), strat) for sp, texts, strat in merged]


def extract_instances(corpus: Corpus, tally: Optional[Counter] = None) -> List[TrainingInstance]:
    """One instance per annotated supporter turn that follows a seeker turn.

    Skipped turns are counted into ``tally`` under ``no_strategy`` and
    ``no_prior_seeker`` when a counter is passed.
    """
    tally = tally if tally is not None else Counter()
    out = []
    for conv in corpus:
        seen_seeker = False
        for idx, turn in enumerate(conv.history):
            if turn.speaker is Speaker.SEEKER:
                seen_seeker = True
                continue
            if turn.strategy is None:
                tally["no_strategy"] += 1
                continue
            if not seen_seeker:
                tally["no_prior_seeker"] += 1
                continue
            tally["extracted"] += 1
            out.append(
                TrainingInstance(
                    instance_id=f"{conv.conversation_id}-{idx}",
                    history=DialogueHistory(conv.history.turns[:idx]),
                    gold_response=turn.text,
                    gold_strategy=turn.strategy,
                )
            )
    return out


# ---------------------------------------------------------------- providers

class ChainProvider(Protocol):
    def __call__(self, instance: TrainingInstance) -> Optional[ReasoningChain]: ...


class MappingProvider:
    """Chains looked up by instance id."""

    def __init__(self, chains: Dict[str, ReasoningChain]):
        self.chains = dict(chains)

    def __call__(self, instance: TrainingInstance) -> Optional[ReasoningChain]:
        return self.chains.get(instance.instance_id)


def attached_chain(instance: TrainingInstance) -> Optional[ReasoningChain]:
    """Provider that returns whatever chain the instance already carries."""
    return instance.chain


def load_chain_annotations(path, schema: NodeSchema = FULL_CONFIG.schema) -> MappingProvider:
    """Read distilled chains from a JSONL file.

    Each line has ``instance_id`` and one of: ``output`` (a full think/answer
    string), ``think`` (the inner think text), or ``chain`` (an object keyed by
    node name). Lines whose chain cannot be read are treated as no chain.
    """
    chains = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                iid = str(rec["instance_id"])
            except (json.JSONDecodeError, KeyError, TypeError):
                raise MalformedRecord("bad annotation record", f"{path}:{lineno}") from None
            chain = _chain_from_record(rec, schema)
            if chain is None:
                log.debug("%s:%d: no usable chain for %s", path, lineno, iid)
                continue
            chains[iid] = chain
    return MappingProvider(chains)


def _chain_from_record(rec: dict, schema: NodeSchema) -> Optional[ReasoningChain]:
    try:
        if "chain" in rec:
            return ReasoningChain(tuple((NodeKind.parse(k), v) for k, v in rec["chain"].items()))
        if "think" in rec:
            return extract_chain(nfc(rec["think"]), schema)
        if "output" in rec:
            parsed = parse_output(nfc(rec["output"]))
            if isinstance(parsed, StructuredOutput):
                return extract_chain(parsed.think, schema)
    except (DuplicateNode, ValueError, AttributeError):
        return None
    return None


# ---------------------------------------------------------------- splitting

@dataclass
class SplitReport:
    total: int = 0
    sft: int = 0
    rl: int = 0
    no_chain: int = 0
    missing_node: int = 0
    misordered: int = 0
    plan_mismatch: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SplitResult:
    sft: List[TrainingInstance] = field(default_factory=list)
    rl: List[TrainingInstance] = field(default_factory=list)
    report: SplitReport = field(default_factory=SplitReport)


def rejection_reason(chain: Optional[ReasoningChain], gold: Strategy, config: RewardConfig) -> Optional[str]:
    """Why a chain fails the alignment filter, or None if it passes."""
    if chain is None:
        return "no_chain"
    if not coherence_reward(chain, config):
        if any(k not in chain.kinds for k in config.required_nodes):
            return "missing_node"
        return "misordered"
    if not strategy_reward(chain, gold, config):
        return "plan_mismatch"
    return None


def attach_and_split(
    instances: Sequence[TrainingInstance],
    provider: Callable[[TrainingInstance], Optional[ReasoningChain]],
    config: RewardConfig = FULL_CONFIG,
) -> SplitResult:
    """Partition instances into SFT (aligned chain attached) and RL sets."""
    result = SplitResult()
    rep = result.report
    for inst in instances:
        if inst.gold_strategy is None:
            raise ValueError(f"{inst.instance_id}: instance has no gold strategy")
        try:
            chain = provider(inst)
        except Exception as exc:
            raise ProviderFailure(inst.instance_id, result, exc) from exc
        rep.total += 1
        reason = rejection_reason(chain, inst.gold_strategy, config)
        if reason is None:
            result.sft.append(replace(inst, chain=chain))
            rep.sft += 1
        else:
            result.rl.append(replace(inst, chain=None))
            rep.rl += 1
            setattr(rep, reason, getattr(rep, reason) + 1)
    return result


# ---------------------------------------------------------------- care-jsonl

def instance_record(inst: TrainingInstance, schema: Optional[NodeSchema] = None) -> dict:
    rec = {
        "instance_id": inst.instance_id,
        "history": [{"speaker": u.speaker.value, "text": u.text} for u in inst.history],
        "gold_strategy": inst.gold_strategy.label if inst.gold_strategy else None,
        "gold_response": inst.gold_response,
    }
    if schema is not None and inst.chain is not None:
        rec["target"] = render_output(inst.chain, inst.gold_response, schema)
    return rec


def dumps_record(rec: dict) -> str:
    return json.dumps(rec, ensure_ascii=False)


def write_instances(instances: Iterable[TrainingInstance], fh: IO[str], schema: Optional[NodeSchema] = None) -> int:
    n = 0
    for inst in instances:
        fh.write(dumps_record(instance_record(inst, schema)) + "\n")
        n += 1
    return n


def read_instances(
    source,
    vocab: StrategyVocabulary = DEFAULT_VOCAB,
    schema: NodeSchema = FULL_CONFIG.schema,
) -> List[TrainingInstance]:
    """Read a care-jsonl instance file. A ``target`` field, if present, is
    parsed and its chain attached to the instance."""
    if isinstance(source, (str, Path)):
        with open(source, encoding="utf-8") as fh:
            return read_instances(fh, vocab, schema)
    if isinstance(source, (bytes, bytearray)):
        source = io.StringIO(source.decode("utf-8"))
    name = getattr(source, "name", "<instances>")
    out = []
    for lineno, line in enumerate(source, 1):
        if not line.strip():
            continue
        loc = f"{name}:{lineno}"
        try:
            rec = json.loads(line)
            history = DialogueHistory(
                tuple(Utterance(Speaker.parse(t["speaker"]), t["text"]) for t in rec["history"])
            )
            gold = rec.get("gold_strategy")
            chain = None
            if rec.get("target"):
                parsed = parse_output(nfc(rec["target"]))
                if not isinstance(parsed, StructuredOutput):
                    raise ValueError(f"target fails format ({parsed.kind.value})")
                chain = extract_chain(parsed.think, schema)
            out.append(
                TrainingInstance(
                    instance_id=str(rec["instance_id"]),
                    history=history,
                    gold_response=rec["gold_response"],
                    gold_strategy=vocab.canonicalize(gold) if gold is not None else None,
                    chain=chain,
                )
            )
        except UnknownStrategy as exc:
            raise UnknownStrategy(exc.label, loc) from None
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise MalformedRecord(str(exc), loc) from None
    ids = [i.instance_id for i in out]
    if len(set(ids)) != len(ids):
        raise MalformedRecord("duplicate instance_id", name)
    return out


def emit_splits(result: SplitResult, sink, schema: NodeSchema = FULL_CONFIG.schema) -> Dict[str, Path]:
    """Write ``sft.jsonl``, ``rl.jsonl`` and ``report.json`` under ``sink``.

    SFT records carry a ``target``: the rendered think/answer string built
    from the attached chain and the gold response.
    """
    sink = Path(sink)
    paths = {"sft": sink / "sft.jsonl", "rl": sink / "rl.jsonl", "report": sink / "report.json"}
    try:
        sink.mkdir(parents=True, exist_ok=True)
        with open(paths["sft"], "w", encoding="utf-8", newline="\n") as fh:
            write_instances(result.sft, fh, schema)
        with open(paths["rl"], "w", encoding="utf-8", newline="\n") as fh:
            write_instances(result.rl, fh)
        with open(paths["report"], "w", encoding="utf-8", newline="\n") as fh:
            json.dump(result.report.to_dict(), fh, indent=2)
            fh.write("\n")
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    return paths
