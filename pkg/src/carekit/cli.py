"""Command line entry point: ``carekit <subcommand> ...``."""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import sys
from collections import Counter
from pathlib import Path

from .core import DEFAULT_VOCAB, StrategyVocabulary, UnknownStrategy
from .data import (
    MalformedRecord,
    attach_and_split,
    emit_splits,
    extract_instances,
    ingest_corpus,
    load_chain_annotations,
    read_instances,
    write_instances,
)
from .grpo import TrainConfig, make_bucket_task, train_toy
from .parser import parse_output
from .metrics import EvalPair, evaluate_corpus, format_report, tokenize
from .reward import hierarchical_reward, load_config, predicted_strategy
from .server import DEFAULT_LIMIT_BYTES, Scorer, serve, serve_stdio

log = logging.getLogger("carekit")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--vocab", help="strategy vocabulary file (one label per line or a JSON list)")
    p.add_argument("--config", default="full", help="reward config name (full, no-context, no-cognition, "
                   "no-emotion, no-support-plan) or a JSON file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--limit-bytes", type=int, default=DEFAULT_LIMIT_BYTES)
    p.add_argument("--format", default=None, choices=("esconv-json", "care-jsonl"))
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="carekit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[common], help="ESConv corpus -> care-jsonl instances")
    p.add_argument("corpus")
    p.add_argument("-o", "--output", required=True)

    p = sub.add_parser("split", parents=[common], help="instances + chain annotations -> sft/rl files")
    p.add_argument("instances")
    p.add_argument("--chains", required=True, help="JSONL of distilled chains keyed by instance_id")
    p.add_argument("-o", "--output-dir", required=True)

    p = sub.add_parser("score", parents=[common], help="score model outputs against gold strategies")
    p.add_argument("instances")
    p.add_argument("outputs", help="JSONL with instance_id and output")
    p.add_argument("-o", "--output", help="write breakdowns here instead of stdout")

    p = sub.add_parser("evaluate", parents=[common], help="automatic metrics for predictions")
    p.add_argument("instances")
    p.add_argument("predictions", help="JSONL with instance_id, response and optional strategy")
    p.add_argument("-o", "--output")
    p.add_argument("--percent", action="store_true", help="report x100 values")

    p = sub.add_parser("train-toy", parents=[common], help="GRPO on the synthetic bucket task")
    p.add_argument("--train-config", help="JSON training config")
    p.add_argument("--iterations", type=int)
    p.add_argument("-o", "--output", help="write the curve log here instead of stdout")

    p = sub.add_parser("serve", parents=[common], help="batch reward-scoring service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8765)
    p.add_argument("--stdio", action="store_true", help="read requests from stdin, reply on stdout")
    return parser


def _vocab(args) -> StrategyVocabulary:
    return StrategyVocabulary.from_file(args.vocab) if args.vocab else DEFAULT_VOCAB


def _open_out(path):
    if path:
        return open(path, "w", encoding="utf-8", newline="\n")
    return contextlib.nullcontext(sys.stdout)


def _read_jsonl(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if line.strip():
                try:
                    yield lineno, json.loads(line)
                except json.JSONDecodeError as exc:
                    raise MalformedRecord(exc.msg, f"{path}:{lineno}") from None


def cmd_ingest(args) -> int:
    fmt = args.format or "esconv-json"
    vocab = _vocab(args)
    if fmt == "care-jsonl":
        instances = read_instances(args.corpus, vocab)
        tally = Counter(extracted=len(instances))
    else:
        corpus = ingest_corpus(args.corpus, fmt, vocab)
        tally = Counter()
        instances = extract_instances(corpus, tally)
    with _open_out(args.output) as fh:
        write_instances(instances, fh)
    print(json.dumps(dict(sorted(tally.items()))), file=sys.stderr)
    return 0


def cmd_split(args) -> int:
    config = load_config(args.config, _vocab(args) if args.vocab else None)
    instances = read_instances(args.instances, config.vocab, config.schema)
    provider = load_chain_annotations(args.chains, config.schema)
    result = attach_and_split(instances, provider, config)
    emit_splits(result, args.output_dir, config.schema)
    print(json.dumps(result.report.to_dict()))
    return 0


def cmd_score(args) -> int:
    config = load_config(args.config, _vocab(args) if args.vocab else None)
    gold = {i.instance_id: i.gold_strategy for i in read_instances(args.instances, config.vocab, config.schema)}
    with _open_out(args.output) as out:
        for lineno, rec in _read_jsonl(args.outputs):
            iid = str(rec.get("instance_id"))
            if iid not in gold or gold[iid] is None:
                raise MalformedRecord(f"no gold strategy for instance {iid!r}", f"{args.outputs}:{lineno}")
            text = rec.get("output")
            if not isinstance(text, str):
                raise MalformedRecord("field 'output' must be a string", f"{args.outputs}:{lineno}")
            b = hierarchical_reward(text, gold[iid], config)
            row = {"instance_id": iid, "fmt": b.fmt, "cog": b.cog, "strat": b.strat, "reward": b.final}
            out.write(json.dumps(row) + "\n")
    return 0


def load_eval_pairs(instances_path, predictions_path, config) -> list:
    """Pair predictions with gold instances, in instance-file order.

    A prediction's strategy comes from its ``strategy`` field, or failing
    that from the support-plan node of an ``output`` field.
    """
    instances = read_instances(instances_path, config.vocab, config.schema)
    preds = {}
    for lineno, rec in _read_jsonl(predictions_path):
        iid = str(rec.get("instance_id"))
        response = rec.get("response")
        strategy = None
        if rec.get("strategy") is not None:
            try:
                strategy = config.vocab.canonicalize(rec["strategy"])
            except UnknownStrategy as exc:
                raise UnknownStrategy(exc.label, f"{predictions_path}:{lineno}") from None
        if response is None and isinstance(rec.get("output"), str):
            parsed = parse_output(rec["output"])
            response = getattr(parsed, "response", "")
            strategy = strategy or predicted_strategy(rec["output"], config)
        if not isinstance(response, str):
            raise MalformedRecord("prediction needs a 'response' string", f"{predictions_path}:{lineno}")
        preds[iid] = (response, strategy)
    pairs = []
    for inst in instances:
        if inst.instance_id not in preds:
            raise MalformedRecord(f"no prediction for {inst.instance_id}", str(predictions_path))
        response, strategy = preds[inst.instance_id]
        pairs.append(EvalPair(tokenize(response), tokenize(inst.gold_response), strategy, inst.gold_strategy))
    return pairs


def cmd_evaluate(args) -> int:
    config = load_config(args.config, _vocab(args) if args.vocab else None)
    pairs = load_eval_pairs(args.instances, args.predictions, config)
    text = format_report(evaluate_corpus(pairs), percent=args.percent)
    with _open_out(args.output) as fh:
        fh.write(text + "\n")
    return 0


def cmd_train_toy(args) -> int:
    config = load_config(args.config, _vocab(args) if args.vocab else None)
    if args.train_config:
        tcfg = TrainConfig.from_file(args.train_config, seed=args.seed, iterations=args.iterations)
    else:
        overrides = {k: v for k, v in (("seed", args.seed), ("iterations", args.iterations)) if v is not None}
        tcfg = TrainConfig(**overrides)
    train, holdout, _ = make_bucket_task(n_buckets=tcfg.n_buckets, vocab=config.vocab, seed=tcfg.seed)
    _, stats = train_toy(train, tcfg, holdout, config)
    with _open_out(args.output) as out:
        for point in stats.curve:
            out.write(point.to_json() + "\n")
    return 0


def cmd_serve(args) -> int:
    config = load_config(args.config, _vocab(args) if args.vocab else None)
    scorer = Scorer(config, limit_bytes=args.limit_bytes)
    if args.stdio:
        serve_stdio(scorer, sys.stdin, sys.stdout)
    else:
        serve(args.host, args.port, scorer)
    return 0


COMMANDS = {
    "ingest": cmd_ingest,
    "split": cmd_split,
    "score": cmd_score,
    "evaluate": cmd_evaluate,
    "train-toy": cmd_train_toy,
    "serve": cmd_serve,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (MalformedRecord, UnknownStrategy, ValueError, OSError) as exc:
        print(f"carekit {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
