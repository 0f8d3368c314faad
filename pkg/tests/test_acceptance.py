"""Acceptance suite: one check per release criterion, each with its time budget.

Every check prints a single ``PASS``/``FAIL`` line. Run with ``pytest -s`` to
see them, or directly with ``python tests/test_acceptance.py``.
"""

import io
import itertools
import json
import math
import random
import sys
import threading
import time
from contextlib import redirect_stdout
from fractions import Fraction
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).parent))

import oracles  # noqa: E402
from conftest import DATA, make_instance, random_corpus  # noqa: E402
from carekit.cli import main as cli_main  # noqa: E402
from carekit.core import NodeKind, ReasoningChain, ESCONV_STRATEGIES  # noqa: E402
from carekit.data import attach_and_split, instance_record  # noqa: E402
from carekit.grpo import (  # noqa: E402
    TrainConfig, clipped_surrogate, group_advantages, make_bucket_task, reference_penalty, train_toy,
)
from carekit.metrics import (  # noqa: E402
    EvalPair, bleu_n, distinct_n, fleiss_kappa, meteor_lite, meteor_pair, rouge_l,
)
from carekit.parser import extract_chain, parse_output, render_output  # noqa: E402
from carekit.reward import FULL_CONFIG, hierarchical_reward  # noqa: E402
from carekit.server import Scorer, ScoreRequest, ScoringServer, score_remote  # noqa: E402


def verdict(name, ok, elapsed, budget, detail=""):
    in_time = elapsed < budget
    passed = bool(ok) and in_time
    extra = f" {detail}" if detail else ""
    print(f"{'PASS' if passed else 'FAIL'} {name} ({elapsed:.2f}s / {budget:g}s){extra}")
    assert ok, f"{name}: {detail}"
    assert in_time, f"{name}: took {elapsed:.2f}s, budget {budget}s"


# ------------------------------------------------------------ reward

def _witness(fmt, cog, strat):
    kinds = list(NodeKind) if cog else [NodeKind.CONTEXT, NodeKind.EMOTION, NodeKind.COGNITION,
                                        NodeKind.SUPPORT_PLAN]
    plan = "Affirmation and Reassurance" if strat else "Question"
    chain = ReasoningChain(tuple((k, plan if k is NodeKind.SUPPORT_PLAN else f"about {k.slug}") for k in kinds))
    text = render_output(chain, "You matter.")
    return text if fmt else text + " trailing"


def test_reward_truth_table():
    t0 = time.perf_counter()
    bad = []
    for combo in itertools.product((0, 1), repeat=3):
        got = hierarchical_reward(_witness(*combo), "Affirmation and Reassurance")
        # a format failure zeroes everything; otherwise the components are the witness bits
        want = combo if combo[0] else (0, 0, 0)
        if (got.fmt, got.cog, got.strat) != want or got.final != int(combo == (1, 1, 1)):
            bad.append((combo, got.as_tuple()))
    verdict("reward truth table (8 combinations)", not bad, time.perf_counter() - t0, 1, str(bad or ""))


# ------------------------------------------------------------ parser

_FILLER = ["the", "day", "was", "long", "she", "feels", "alone", "work", "never", "stops", "café", "why", "ok"]


def _content(r):
    parts = []
    for _ in range(r.randint(1, 6)):
        parts.append(r.choice(_FILLER) + r.choice([" ", " ", ". ", "! ", "\n", ", "]))
    return "".join(parts).strip()


def test_parser_round_trip():
    t0 = time.perf_counter()
    r = random.Random(7)
    failures = 0
    for _ in range(1000):
        kinds = list(NodeKind)
        r.shuffle(kinds)
        kinds = kinds[:r.randint(1, 4)]
        chain = ReasoningChain(tuple((k, _content(r)) for k in kinds))
        response = _content(r)
        out = parse_output(render_output(chain, response))
        if getattr(out, "response", None) != response or extract_chain(out.think) != chain:
            failures += 1
    verdict("parser round-trip (1000 pairs)", failures == 0, time.perf_counter() - t0, 5,
            f"{failures} mismatches" if failures else "")


# ------------------------------------------------------------ split

def _provider(seed):
    r = random.Random(seed)
    labels = ["Question", "Information", "Others", "Providing Suggestions"]

    def provider(inst):
        roll = r.random()
        if roll < 0.2:
            return None
        kinds = list(NodeKind)
        if roll < 0.35:
            kinds.remove(r.choice(kinds))
        elif roll < 0.5:
            r.shuffle(kinds)
        plan = inst.gold_strategy.label if r.random() < 0.7 else r.choice(labels)
        return ReasoningChain(tuple((k, plan if k is NodeKind.SUPPORT_PLAN else f"{k.slug} note")
                                    for k in kinds))
    return provider


def test_split_partition():
    t0 = time.perf_counter()
    problems = []
    for seed in range(200):
        r = random.Random(seed)
        instances = [make_instance(f"s{seed}-{k}", r.choice(ESCONV_STRATEGIES)) for k in range(r.randint(0, 40))]
        result = attach_and_split(instances, _provider(seed))
        sft = [i.instance_id for i in result.sft]
        rl = [i.instance_id for i in result.rl]
        if len(sft) + len(rl) != len(instances) or set(sft) & set(rl) or \
                set(sft) | set(rl) != {i.instance_id for i in instances}:
            problems.append(f"seed {seed}: partition")
        for inst in result.sft:
            target = instance_record(inst, FULL_CONFIG.schema)["target"]
            if hierarchical_reward(target, inst.gold_strategy).final != 1:
                problems.append(f"seed {seed}: {inst.instance_id} target unrewarded")
    verdict("split partition (200 providers)", not problems, time.perf_counter() - t0, 10,
            "; ".join(problems[:3]))


# ------------------------------------------------------------ metrics

def test_metric_oracles():
    t0 = time.perf_counter()
    rng = random.Random(2024)
    worst = 0.0
    for _ in range(100):
        raw = random_corpus(rng, max_pairs=20, max_len=12)
        pairs = [EvalPair(c, r) for c, r in raw]
        cands = [c for c, _ in raw]
        checks = [
            (bleu_n(pairs, 1), oracles.bleu_oracle(raw, 1)),
            (bleu_n(pairs, 2), oracles.bleu_oracle(raw, 2)),
            (rouge_l(pairs), oracles.rouge_l_oracle(raw)),
            (meteor_lite(pairs), oracles.meteor_oracle(raw)),
            (distinct_n(cands, 1), oracles.distinct_oracle(cands, 1)),
            (distinct_n(cands, 2), oracles.distinct_oracle(cands, 2)),
        ]
        worst = max(worst, max(abs(a - b) for a, b in checks))

    identity_ok = True
    for _ in range(20):
        raw = random_corpus(rng, max_pairs=20, max_len=12)
        same = [EvalPair(r, r) for _, r in raw]
        identity_ok &= bleu_n(same, 1) == 1.0 and bleu_n(same, 2) == 1.0 and rouge_l(same) == 1.0
        # METEOR keeps its one-chunk fragmentation penalty on identical pairs
        identity_ok &= all(meteor_pair(r, r) == 1.0 - 0.5 * (1 / len(r)) ** 3 for _, r in raw)
    ok = worst <= 1e-9 and identity_ok
    verdict("metric oracles (100 corpora) + identity corpora", ok, time.perf_counter() - t0, 30,
            f"max |diff| = {worst:.1e}, identity={'ok' if identity_ok else 'BROKEN'}")


WIKI = [[0, 0, 0, 0, 14], [0, 2, 6, 4, 2], [0, 0, 3, 5, 6], [0, 3, 9, 2, 0], [2, 2, 8, 1, 1],
        [7, 7, 0, 0, 0], [3, 2, 6, 3, 0], [2, 5, 3, 2, 2], [6, 5, 2, 1, 0], [0, 2, 2, 3, 7]]


def test_fleiss_kappa():
    t0 = time.perf_counter()
    perfect = [
        [[3, 0], [0, 3]],
        [[0, 4, 0], [4, 0, 0], [0, 0, 4]],
        [[0, 0, 3], [3, 0, 0], [0, 3, 0], [0, 0, 3]],
    ]
    perfect_ok = all(fleiss_kappa(m) == 1.0 for m in perfect)
    # hand-computed values, cross-checked against the exact rational oracle
    fixtures = [
        # P_i = 1/3, 1/3, 1 -> P = 5/9; p = (2/3, 1/3) -> Pe = 5/9
        ([[2, 1], [1, 2], [3, 0]], Fraction(0)),
        # P = 1/2; Pe = 9/16 + 1/16 = 5/8
        ([[2, 0], [1, 1]], Fraction(-1, 3)),
        # every item split evenly: P = 0, Pe = 1/2
        ([[1, 1], [1, 1], [1, 1]], Fraction(-1)),
    ]
    hand_ok = all(oracles.fleiss_oracle(m) == want for m, want in fixtures)
    diffs = [abs(fleiss_kappa(m) - float(want)) for m, want in fixtures]
    # the textbook 10 x 5 example, published as 0.210
    wiki_ok = round(fleiss_kappa(WIKI), 3) == 0.210
    ok = perfect_ok and hand_ok and wiki_ok and max(diffs) <= 1e-9
    verdict("Fleiss kappa (perfect agreement + 3 fixtures)", ok, time.perf_counter() - t0, 5,
            f"max |diff| = {max(diffs):.1e}")


# ------------------------------------------------------------ GRPO math

def test_grpo_math():
    t0 = time.perf_counter()
    rng = np.random.default_rng(99)
    worst_sum = worst_shift = 0.0
    for _ in range(10_000):
        g = int(rng.integers(2, 17))
        rewards = rng.integers(0, 2, g).astype(float) if rng.random() < 0.5 else rng.random(g)
        shift = float(rng.uniform(-5, 5))
        adv = group_advantages(rewards)
        worst_sum = max(worst_sum, abs(float(adv.sum())))
        worst_shift = max(worst_shift, float(np.abs(group_advantages(rewards + shift) - adv).max()))
    fixture_ok = list(group_advantages([1, 0, 0, 1], eps=0.0)) == [1.0, -1.0, -1.0, 1.0]

    pessimism_ok = True
    for _ in range(10_000):
        ratio, a, clip = rng.uniform(1e-3, 10), rng.uniform(-10, 10), rng.uniform(0.01, 0.9)
        val = clipped_surrogate(ratio, a, clip)
        clipped = min(max(ratio, 1 - clip), 1 + clip) * a
        pessimism_ok &= val <= ratio * a + 1e-12 and val <= clipped + 1e-12
        pessimism_ok &= math.isclose(val, ratio * a) or math.isclose(val, clipped)

    penalty_ok = True
    for _ in range(10_000):
        logp, ref = rng.uniform(-20, 0), rng.uniform(-20, 0)
        if rng.random() < 0.2:
            ref = logp
        val = float(reference_penalty(logp, ref))
        penalty_ok &= val >= 0.0 and (val == 0.0) == (logp == ref)
    penalty_ok &= float(reference_penalty(-1.0, np.nextafter(-1.0, 0.0))) > 0.0

    ok = worst_sum <= 1e-9 and worst_shift <= 1e-9 and fixture_ok and pessimism_ok and penalty_ok
    verdict("GRPO math (10000 fuzzed groups)", ok, time.perf_counter() - t0, 10,
            f"sum={worst_sum:.1e} shift={worst_shift:.1e} fixture={fixture_ok} "
            f"pessimism={pessimism_ok} penalty={penalty_ok}")


# ------------------------------------------------------------ toy RL

def test_toy_convergence():
    t0 = time.perf_counter()
    train, holdout, _ = make_bucket_task(n_buckets=16, seed=0)
    cfg = TrainConfig(seed=0, group_size=6, iterations=500)
    _, stats = train_toy(train, cfg, holdout)
    start, end = stats.curve[0].holdout_accuracy, stats.curve[-1].holdout_accuracy
    _, sab = train_toy(train, TrainConfig(seed=0, iterations=500, sabotage_rate=0.5), holdout)
    ok = end >= 0.9 and sab.sabotaged > 0 and sab.sabotaged_rewarded == 0
    verdict("toy RL convergence (seed 0, G=6, 500 iterations)", ok, time.perf_counter() - t0, 60,
            f"holdout accuracy {start:.3f} -> {end:.3f}; sabotaged {sab.sabotaged}, "
            f"rewarded {sab.sabotaged_rewarded}")


# ------------------------------------------------------------ evaluate smoke test

def test_evaluate_smoke():
    t0 = time.perf_counter()
    golden = json.loads((DATA / "eval_golden.json").read_text(encoding="utf-8"))
    buf = io.StringIO()
    with redirect_stdout(buf):
        rc = cli_main(["evaluate", str(DATA / "eval_instances.jsonl"), str(DATA / "eval_predictions.jsonl")])
    report = json.loads(buf.getvalue())
    mismatched = [k for k in golden if report.get(k) != golden[k]]
    ok = rc == 0 and not mismatched and set(report) == set(golden)
    verdict("evaluate smoke test vs golden report", ok, time.perf_counter() - t0, 5,
            f"mismatched: {mismatched}" if mismatched else "")


# ------------------------------------------------------------ service

def _request_log(n, seed):
    rnd = random.Random(seed)
    good = render_output(ReasoningChain(tuple((k, "Question" if k is NodeKind.SUPPORT_PLAN else "x")
                                              for k in NodeKind)), "What happened?")
    texts = [good, good.replace("Emotion: x\n", ""), "plain text", good + " tail", "", "é" * 100]
    golds = list(ESCONV_STRATEGIES) + ["question ", "Hugs"]
    return [ScoreRequest(f"{seed}-{i}", rnd.choice(texts), rnd.choice(golds),
                         rnd.choice([None, None, "no-emotion", "no-context", "bogus"])) for i in range(n)]


def test_service_determinism():
    t0 = time.perf_counter()
    log = _request_log(2000, 5)
    lines = [q.to_json() for q in log]
    first = list(Scorer().handle_lines(lines))
    second = list(Scorer().handle_lines(lines))

    with ScoringServer(("127.0.0.1", 0), Scorer()) as server:
        server.start_background()
        remote = [r.to_json() for r in score_remote(server.address, log)]
        logs = [_request_log(1000, s) for s in (11, 12)]
        results = [None, None]

        def run(k):
            results[k] = score_remote(server.address, logs[k])

        threads = [threading.Thread(target=run, args=(k,)) for k in range(2)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        server.shutdown()
    interleave_ok = all([r.id for r in res] == [q.id for q in lg] for lg, res in zip(logs, results))
    ok = first == second == remote and interleave_ok
    verdict("service replay (2000 requests) + interleaving", ok, time.perf_counter() - t0, 10,
            f"byte-identical={first == second == remote} ordered={interleave_ok}")


if __name__ == "__main__":
    failed = 0
    for name, fn in list(globals().items()):
        if name.startswith("test_") and callable(fn):
            try:
                fn()
            except AssertionError:
                failed += 1
    sys.exit(1 if failed else 0)
