import random
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from carekit.core import DialogueHistory, NodeKind, ReasoningChain, Speaker, TrainingInstance, Utterance, DEFAULT_VOCAB

DATA = Path(__file__).parent / "data"

# small vocabulary with inflections so stem matches happen
WORDS = ["i", "you", "feel", "feels", "feeling", "run", "runs", "running", "help", "helped",
         "work", "the", "a", "sad", "job", "friend", ".", ","]


def random_corpus(rng, max_pairs=20, max_len=12):
    pairs = []
    for _ in range(rng.randint(1, max_pairs)):
        cand = tuple(rng.choice(WORDS) for _ in range(rng.randint(1, max_len)))
        ref = tuple(rng.choice(WORDS) for _ in range(rng.randint(1, max_len)))
        pairs.append((cand, ref))
    return pairs


def full_chain(plan="Affirmation and Reassurance"):
    return ReasoningChain((
        (NodeKind.CONTEXT, "Lost a job last week."),
        (NodeKind.COGNITION, "I am not needed anymore."),
        (NodeKind.EMOTION, "Sadness."),
        (NodeKind.SUPPORT_PLAN, plan),
    ))


def make_instance(iid, gold="Question", seeker="I failed my exam."):
    return TrainingInstance(
        instance_id=iid,
        history=DialogueHistory((Utterance(Speaker.SEEKER, seeker),)),
        gold_response="That sounds hard.",
        gold_strategy=DEFAULT_VOCAB.canonicalize(gold),
    )


@pytest.fixture
def rng():
    return random.Random(1234)
