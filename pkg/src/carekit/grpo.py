"""Group-relative policy optimisation on a tabular toy policy.

The numeric pieces (group advantages, clipped surrogate, reference penalty)
are plain functions. The toy policy picks a support strategy per feature
bucket of the last seeker utterance and renders a full think/answer output,
so every rollout is scored by the real reward pipeline.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .core import (
    DEFAULT_VOCAB,
    DialogueHistory,
    NodeKind,
    ReasoningChain,
    Speaker,
    StrategyVocabulary,
    TrainingInstance,
    Utterance,
)
from .metrics import tokenize
from .parser import render_output
from .reward import FULL_CONFIG, RewardConfig, hierarchical_reward


class NoGoldStrategy(ValueError):
    def __init__(self, instance_id: str):
        self.instance_id = instance_id
        super().__init__(f"{instance_id}: no gold strategy")


def group_advantages(rewards: Sequence[float], eps: float = 1e-4) -> np.ndarray:
    """Standardise rewards within one group: (r - mean) / (std + eps).

    Uses the population standard deviation. A group with no spread gets all
    zero advantages, whatever ``eps`` is.
    """
    r = np.asarray(rewards, dtype=float)
    if r.size < 2:
        raise ValueError("a group needs at least two rollouts")
    # test spread on the raw values: the mean of equal floats can be off by an ulp
    if np.all(r == r[0]):
        return np.zeros_like(r)
    return (r - r.mean()) / (r.std() + eps)


def clipped_surrogate(ratio, advantage, clip: float = 0.2):
    """min(ratio * A, clip(ratio, 1 - clip, 1 + clip) * A), to be maximised."""
    ratio = np.asarray(ratio, dtype=float)
    advantage = np.asarray(advantage, dtype=float)
    out = np.minimum(ratio * advantage, np.clip(ratio, 1 - clip, 1 + clip) * advantage)
    return float(out) if out.ndim == 0 else out


def reference_penalty(logp, ref_logp):
    """exp(d) - d - 1 with d = ref_logp - logp; zero only where they agree.

    A short series is used for small |d| so the result stays positive when
    the two log-probabilities differ by a few ulps; a value that would
    underflow to zero is rounded up to the smallest positive float.
    """
    d = np.asarray(ref_logp, dtype=float) - np.asarray(logp, dtype=float)
    small = np.abs(d) < 1e-3
    series = d * d * (0.5 + d * (1 / 6 + d * (1 / 24 + d / 120)))
    out = np.where(small, series, np.expm1(np.where(small, 0.0, d)) - d)
    out = np.where((out <= 0.0) & (d != 0.0), np.nextafter(0.0, 1.0), out)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------- config

@dataclass(frozen=True)
class TrainConfig:
    group_size: int = 6
    clip: float = 0.2
    beta: float = 0.01
    learning_rate: float = 0.05
    iterations: int = 500
    seed: int = 0
    adv_eps: float = 1e-4
    update_epochs: int = 2
    n_buckets: int = 16
    temperature: float = 1.0
    eval_interval: int = 50
    sabotage_rate: float = 0.0

    def __post_init__(self):
        if self.group_size < 2:
            raise ValueError("group_size must be at least 2")
        for name in ("clip", "learning_rate", "temperature", "adv_eps"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.beta < 0 or self.iterations < 0 or self.update_epochs < 1 or self.n_buckets < 1:
            raise ValueError("invalid training budget")
        if not 0.0 <= self.sabotage_rate <= 1.0:
            raise ValueError("sabotage_rate must lie in [0, 1]")

    @classmethod
    def from_file(cls, path, **overrides) -> "TrainConfig":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown training options: {sorted(unknown)}")
        data.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------- policy

def feature_bucket(text: str, n_buckets: int) -> int:
    """Hash the multiset of tokens in ``text`` into one of ``n_buckets``."""
    key = "\x1f".join(sorted(tokenize(text))).encode("utf-8")
    return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "big") % n_buckets


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max()
    return z - np.log(np.exp(z).sum())


@dataclass
class ToyPolicy:
    logits: np.ndarray
    temperature: float = 1.0
    vocab: StrategyVocabulary = DEFAULT_VOCAB

    @classmethod
    def uniform(cls, n_buckets: int, vocab: StrategyVocabulary = DEFAULT_VOCAB, temperature: float = 1.0):
        return cls(np.zeros((n_buckets, len(vocab))), temperature, vocab)

    @property
    def n_buckets(self) -> int:
        return self.logits.shape[0]

    def bucket(self, instance: TrainingInstance) -> int:
        seeker = instance.history.last_seeker()
        return feature_bucket(seeker.text if seeker else "", self.n_buckets)

    def log_probs(self, bucket: int) -> np.ndarray:
        return _log_softmax(self.logits[bucket] / self.temperature)

    def probs(self, bucket: int) -> np.ndarray:
        return np.exp(self.log_probs(bucket))

    def greedy(self, bucket: int) -> int:
        return int(np.argmax(self.logits[bucket]))

    def copy(self) -> "ToyPolicy":
        return replace(self, logits=self.logits.copy())


# ---------------------------------------------------------------- rollouts

_COGNITION_STUB = "The seeker reads the situation as a sign that things will not improve."
_EMOTION_STUB = "Distress and worry."
_RESPONSES = {
    "question": "Can you tell me more about what happened?",
    "restatement or paraphrasing": "So it sounds like this has been weighing on you for a while.",
    "reflection of feelings": "You seem really worn down by all of this.",
    "self-disclosure": "I went through something similar once, and it was hard.",
    "affirmation and reassurance": "You are handling more than most people could, and that matters.",
    "providing suggestions": "Maybe writing down what worries you most could help.",
    "information": "Many people find that stress like this eases with time and support.",
    "others": "I'm here with you.",
}


@dataclass(frozen=True)
class Rollout:
    text: str
    strategy: int
    logp: float
    sabotaged: bool = False


def _context_line(instance: TrainingInstance, config: RewardConfig) -> str:
    seeker = instance.history.last_seeker()
    text = " ".join(seeker.text.split()) if seeker else "The seeker has not said anything yet."
    # keep seeker text from being read as a marker
    for marker in config.schema.markers.values():
        label = marker.rstrip(":")
        text = _replace_ci(text, marker, label + " -")
    return text


def _replace_ci(text: str, old: str, new: str) -> str:
    return re.sub(re.escape(old), new.replace("\\", r"\\"), text, flags=re.IGNORECASE)


def render_rollout(instance: TrainingInstance, label: str, config: RewardConfig = FULL_CONFIG) -> str:
    chain = ReasoningChain(
        (
            (NodeKind.CONTEXT, _context_line(instance, config)),
            (NodeKind.COGNITION, _COGNITION_STUB),
            (NodeKind.EMOTION, _EMOTION_STUB),
            (NodeKind.SUPPORT_PLAN, label),
        )
    )
    response = _RESPONSES.get(label.lower(), "I hear you, and I'm here to listen.")
    return render_output(chain, response, config.schema)


def sabotage(text: str, rng: np.random.Generator, config: RewardConfig = FULL_CONFIG) -> str:
    """Break an output so it must score 0: drop the tags, add trailing text,
    or swap the first two reasoning nodes."""
    mode = int(rng.integers(3))
    if mode == 2 and len(config.required_nodes) < 2:
        mode = 0
    if mode == 0:
        return text.replace("<think>", "").replace("</think>", "")
    if mode == 1:
        return text + " Hope that helps!"
    markers = config.schema.markers
    a, b = markers[config.required_nodes[0]], markers[config.required_nodes[-1]]
    tmp = "\x00"
    return text.replace(a, tmp).replace(b, a).replace(tmp, b)


def rollout_group(
    policy: ToyPolicy,
    instance: TrainingInstance,
    config: TrainConfig,
    rng: np.random.Generator,
    reward_config: RewardConfig = FULL_CONFIG,
) -> List[Rollout]:
    if instance.gold_strategy is None:
        raise NoGoldStrategy(instance.instance_id)
    b = policy.bucket(instance)
    logp = policy.log_probs(b)
    choices = rng.choice(len(logp), size=config.group_size, p=np.exp(logp) / np.exp(logp).sum())
    out = []
    for s in choices:
        text = render_rollout(instance, policy.vocab.labels[s], reward_config)
        broken = config.sabotage_rate > 0 and rng.random() < config.sabotage_rate
        if broken:
            text = sabotage(text, rng, reward_config)
        out.append(Rollout(text, int(s), float(logp[s]), broken))
    return out


# ---------------------------------------------------------------- training

@dataclass(frozen=True)
class CurvePoint:
    iteration: int
    mean_reward: Optional[float]  # None for the iteration-0 baseline
    holdout_accuracy: float
    holdout_gold_prob: float

    def to_json(self) -> str:
        return json.dumps(asdict(self))


@dataclass
class TrainStats:
    curve: List[CurvePoint] = field(default_factory=list)
    rewards: List[float] = field(default_factory=list)  # mean group reward per iteration
    sabotaged: int = 0
    sabotaged_rewarded: int = 0


def holdout_scores(policy: ToyPolicy, instances: Sequence[TrainingInstance]) -> Tuple[float, float]:
    """(greedy strategy accuracy, mean probability on the gold strategy)."""
    if not instances:
        return float("nan"), float("nan")
    hits = 0
    mass = 0.0
    for inst in instances:
        b = policy.bucket(inst)
        gold = policy.vocab.index(inst.gold_strategy)
        hits += policy.greedy(b) == gold
        mass += float(policy.probs(b)[gold])
    return hits / len(instances), mass / len(instances)


def _policy_step(policy, bucket, rollouts, advantages, old_logp, ref_logp, config):
    """One ascent step on the bucket's logits."""
    logp = policy.log_probs(bucket)
    probs = np.exp(logp)
    grad = np.zeros_like(probs)
    for ro, adv in zip(rollouts, advantages):
        dlogp = -probs.copy()
        dlogp[ro.strategy] += 1.0
        dlogp /= policy.temperature
        ratio = math.exp(logp[ro.strategy] - old_logp[ro.strategy])
        clipped = min(max(ratio, 1 - config.clip), 1 + config.clip)
        # the min() picks the unclipped term unless clipping is strictly smaller
        if ratio * adv <= clipped * adv:
            grad += adv * ratio * dlogp
        d = ref_logp[ro.strategy] - logp[ro.strategy]
        grad -= config.beta * (1.0 - math.exp(d)) * dlogp
    policy.logits[bucket] += config.learning_rate * grad / len(rollouts)


def train_toy(
    instances: Sequence[TrainingInstance],
    config: TrainConfig = TrainConfig(),
    holdout: Optional[Sequence[TrainingInstance]] = None,
    reward_config: RewardConfig = FULL_CONFIG,
    policy: Optional[ToyPolicy] = None,
) -> Tuple[ToyPolicy, TrainStats]:
    """Train the toy policy with GRPO; returns the policy and its curve.

    The curve opens with an iteration-0 point scoring the untrained policy.
    ``holdout`` defaults to the training instances. The reference policy is
    the initial one. Fully determined by ``config.seed``.
    """
    if not instances:
        raise ValueError("no training instances")
    for inst in list(instances) + list(holdout or ()):
        if inst.gold_strategy is None:
            raise NoGoldStrategy(inst.instance_id)
    holdout = list(holdout) if holdout is not None else list(instances)
    rng = np.random.default_rng(config.seed)
    if policy is None:
        policy = ToyPolicy.uniform(config.n_buckets, reward_config.vocab, config.temperature)
    policy = policy.copy()
    reference = policy.copy()
    stats = TrainStats()

    acc, mass = holdout_scores(policy, holdout)
    stats.curve.append(CurvePoint(0, None, acc, mass))
    window: List[float] = []
    for it in range(1, config.iterations + 1):
        inst = instances[int(rng.integers(len(instances)))]
        b = policy.bucket(inst)
        rollouts = rollout_group(policy, inst, config, rng, reward_config)
        rewards = [hierarchical_reward(ro.text, inst.gold_strategy, reward_config).final for ro in rollouts]
        for ro, r in zip(rollouts, rewards):
            if ro.sabotaged:
                stats.sabotaged += 1
                stats.sabotaged_rewarded += r
        adv = group_advantages(rewards, config.adv_eps)
        old_logp = policy.log_probs(b)
        ref_logp = reference.log_probs(b)
        for _ in range(config.update_epochs):
            _policy_step(policy, b, rollouts, adv, old_logp, ref_logp, config)

        mean_r = float(np.mean(rewards))
        stats.rewards.append(mean_r)
        window.append(mean_r)
        if it % config.eval_interval == 0 or it == config.iterations:
            acc, mass = holdout_scores(policy, holdout)
            stats.curve.append(CurvePoint(it, float(np.mean(window)), acc, mass))
            window = []
    return policy, stats


# ---------------------------------------------------------------- toy task

_WORDS = (
    "work exam job friend family rent sleep tired alone sad angry boss school money "
    "partner move city lost lonely stress deadline sick worried future parents help"
).split()


def make_bucket_task(
    n_train: int = 400,
    n_holdout: int = 200,
    n_buckets: int = 16,
    vocab: StrategyVocabulary = DEFAULT_VOCAB,
    seed: int = 0,
) -> Tuple[List[TrainingInstance], List[TrainingInstance], np.ndarray]:
    """Synthetic task whose gold strategy is a fixed function of the bucket.

    Returns (train, holdout, mapping) where ``mapping[b]`` is the gold
    strategy index for bucket ``b``. Holdout utterances are fresh draws.
    """
    rng = np.random.default_rng(seed)
    mapping = rng.integers(len(vocab), size=n_buckets)
    mapping[: min(n_buckets, len(vocab))] = rng.permutation(len(vocab))[: min(n_buckets, len(vocab))]

    def make(prefix, count):
        out = []
        for i in range(count):
            words = rng.choice(_WORDS, size=int(rng.integers(4, 10)))
            text = "I feel " + " ".join(words) + "."
            b = feature_bucket(text, n_buckets)
            label = vocab.labels[mapping[b]]
            out.append(
                TrainingInstance(
                    instance_id=f"{prefix}-{i}",
                    history=DialogueHistory((Utterance(Speaker.SEEKER, text),)),
                    gold_response="I'm here for you.",
                    gold_strategy=vocab.canonicalize(label),
                )
            )
        return out

    return make("train", n_train), make("holdout", n_holdout), mapping
