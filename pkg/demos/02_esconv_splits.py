"""
From ESConv dialogues to SFT and RL splits
==========================================

Every supporter turn that has a strategy and follows a seeker turn becomes a
training instance. Instances whose distilled chain is complete, ordered and
plans the gold strategy go to SFT; the rest go to RL.
"""

import json
import tempfile
from pathlib import Path

from carekit import ReasoningChain
from carekit.core import NodeKind
from carekit.data import MappingProvider, attach_and_split, emit_splits, extract_instances, ingest_corpus

dialogs = [
    {"conversation_id": "c1", "dialog": [
        {"speaker": "seeker", "content": "I failed my driving test again."},
        {"speaker": "supporter", "content": "How many times have you tried?", "annotation": {"strategy": "Question"}},
        {"speaker": "seeker", "content": "Three."},
        {"speaker": "seeker", "content": "I'm starting to think I'll never pass."},
        {"speaker": "supporter", "content": "Lots of people need a few tries.", "annotation": {"strategy": "Information"}},
    ]},
]
corpus = ingest_corpus(json.dumps(dialogs).encode())
instances = extract_instances(corpus)
for inst in instances:
    print(inst.instance_id, inst.gold_strategy.label, "<-", inst.history.last_seeker().text.replace("\n", " / "))


def chain(plan):
    return ReasoningChain((
        (NodeKind.CONTEXT, "Repeated driving test failures."),
        (NodeKind.COGNITION, "Believes they will never pass."),
        (NodeKind.EMOTION, "Discouraged."),
        (NodeKind.SUPPORT_PLAN, plan),
    ))


# a stand-in for the teacher model; the second chain plans the wrong strategy
teacher = MappingProvider({"c1-1": chain("Question"), "c1-3": chain("Self-disclosure")})
result = attach_and_split(instances, teacher)
print(result.report.to_dict())

with tempfile.TemporaryDirectory() as tmp:
    paths = emit_splits(result, tmp)
    print(Path(paths["sft"]).read_text().strip())
