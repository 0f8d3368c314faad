"""Automatic response-quality metrics and inter-annotator agreement.

All text metrics work on token tuples from one shared tokenizer
(:func:`tokenize`). Scores are raw fractions; :func:`format_report` gives the
x100 display used in result tables.
"""

from __future__ import annotations

import json
import logging
import math
import re
from collections import Counter
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from nltk.stem.porter import PorterStemmer

from .core import Strategy, nfc

log = logging.getLogger(__name__)

Tokens = Tuple[str, ...]

_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)

# Classic METEOR parameters.
METEOR_ALPHA = 0.9
METEOR_GAMMA = 0.5
METEOR_BETA = 3.0
# Above this many DP states per pair the aligner falls back to greedy
# in-order matching.
MAX_ALIGN_STATES = 200_000

UNAVAILABLE = "unavailable"
REPORT_KEYS = ("B-1", "B-2", "R-L", "METEOR", "BERTScore", "D-1", "D-2", "ACC_Stra.")


class EmptyCorpus(ValueError):
    pass


class DegenerateLength(ValueError):
    pass


class MissingStrategy(ValueError):
    def __init__(self, index: int):
        self.index = index
        super().__init__(f"pair {index} lacks a predicted or gold strategy")


class DegenerateMatrix(ValueError):
    pass


def tokenize(text: str) -> Tokens:
    """Lowercased word tokens; each punctuation character is its own token."""
    return tuple(_TOKEN_RE.findall(nfc(text).lower()))


@dataclass(frozen=True)
class EvalPair:
    candidate: Tokens
    reference: Tokens
    predicted_strategy: Optional[Strategy] = None
    gold_strategy: Optional[Strategy] = None

    @classmethod
    def from_text(cls, candidate: str, reference: str, predicted=None, gold=None,
                  tokenizer: Callable[[str], Tokens] = tokenize) -> "EvalPair":
        return cls(tuple(tokenizer(candidate)), tuple(tokenizer(reference)), predicted, gold)


def _ngrams(tokens: Sequence[str], n: int) -> List[Tuple[str, ...]]:
    return [tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1)]


def _check(pairs) -> None:
    if not pairs:
        raise EmptyCorpus("no pairs to score")


def _fsum_mean(values: Iterable[float]) -> float:
    values = list(values)
    return math.fsum(values) / len(values)


# ---------------------------------------------------------------- BLEU

def bleu_n(pairs: Sequence[EvalPair], n: int = 2) -> float:
    """Corpus BLEU with uniform weights over orders 1..n and a brevity penalty."""
    _check(pairs)
    matched = [0] * n
    total = [0] * n
    cand_len = ref_len = 0
    for p in pairs:
        cand_len += len(p.candidate)
        ref_len += len(p.reference)
        for k in range(1, n + 1):
            cand = Counter(_ngrams(p.candidate, k))
            ref = Counter(_ngrams(p.reference, k))
            matched[k - 1] += sum((cand & ref).values())
            total[k - 1] += sum(cand.values())
    if cand_len == 0 or any(m == 0 for m in matched):
        return 0.0
    log_p = math.fsum(math.log(m / t) for m, t in zip(matched, total)) / n
    bp = 1.0 if cand_len > ref_len else math.exp(1 - ref_len / cand_len)
    return bp * math.exp(log_p)


def sentence_bleu(candidate: Tokens, reference: Tokens, n: int = 2) -> float:
    """Smoothed single-sentence BLEU for diagnostics.

    Orders above 1 get add-one smoothing so a short sentence without a
    bigram match does not collapse to zero.
    """
    if not candidate:
        return 0.0
    log_p = 0.0
    for k in range(1, n + 1):
        cand = Counter(_ngrams(candidate, k))
        ref = Counter(_ngrams(reference, k))
        m, t = sum((cand & ref).values()), sum(cand.values())
        if k > 1:
            m, t = m + 1, t + 1
        if m == 0:
            return 0.0
        log_p += math.log(m / t)
    bp = 1.0 if len(candidate) > len(reference) else math.exp(1 - len(reference) / len(candidate))
    return bp * math.exp(log_p / n)


# ---------------------------------------------------------------- ROUGE-L

def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l_pair(candidate: Tokens, reference: Tokens) -> float:
    if not candidate or not reference:
        return 0.0
    lcs = lcs_length(candidate, reference)
    if lcs == 0:
        return 0.0
    p, r = lcs / len(candidate), lcs / len(reference)
    return 2 * p * r / (p + r)


def rouge_l(pairs: Sequence[EvalPair]) -> float:
    """Mean per-pair LCS F1."""
    _check(pairs)
    return _fsum_mean(rouge_l_pair(p.candidate, p.reference) for p in pairs)


# ---------------------------------------------------------------- METEOR-lite

_stemmer = PorterStemmer()


@lru_cache(maxsize=65536)
def stem(token: str) -> str:
    return _stemmer.stem(token)


def meteor_alignment(candidate: Tokens, reference: Tokens) -> Tuple[int, int, int]:
    """Return (exact matches, stem matches, chunks) of the best alignment.

    Best means: most exact matches, then most stem matches among the tokens
    left over, then fewest chunks. Solved exactly by a forward DP over
    candidate positions whose state is the set of reference positions still
    contested plus the previous match (needed to extend a chunk).
    """
    m1, m2 = len(candidate), len(reference)
    stems_c = [stem(t) for t in candidate]
    stems_r = [stem(t) for t in reference]
    # compat[i]: list of (j, is_exact)
    compat = []
    for i, tok in enumerate(candidate):
        opts = []
        for j, rtok in enumerate(reference):
            if tok == rtok:
                opts.append((j, True))
            elif stems_c[i] == stems_r[j]:
                opts.append((j, False))
        compat.append(opts)
    # rel[i]: ref positions that some candidate at or after i could use
    rel = [0] * (m1 + 1)
    for i in range(m1 - 1, -1, -1):
        rel[i] = rel[i + 1]
        for j, _ in compat[i]:
            rel[i] |= 1 << j
    nxt_ok = [set(j for j, _ in opts) for opts in compat] + [set()]

    states: Dict[Tuple[int, int], Tuple[int, int, int]] = {(0, -1): (0, 0, 0)}
    explored = 0
    for i in range(m1):
        new: Dict[Tuple[int, int], Tuple[int, int, int]] = {}

        def push(used, prev, val):
            key = (used & rel[i + 1], prev if (prev + 1) in nxt_ok[i + 1] else -1)
            old = new.get(key)
            if old is None or val > old:
                new[key] = val

        for (used, prev), (ex, st, negch) in states.items():
            push(used, -1, (ex, st, negch))
            for j, is_exact in compat[i]:
                if used >> j & 1:
                    continue
                cont = prev >= 0 and prev == j - 1
                push(used | (1 << j), j, (ex + is_exact, st + (not is_exact), negch - (0 if cont else 1)))
        states = new
        explored += len(states)
        if explored > MAX_ALIGN_STATES:
            log.debug("meteor alignment state budget exceeded (%d x %d); using greedy", m1, m2)
            return _greedy_alignment(candidate, reference, stems_c, stems_r)
    ex, st, negch = max(states.values())
    return ex, st, -negch


def _greedy_alignment(candidate, reference, stems_c, stems_r) -> Tuple[int, int, int]:
    match: Dict[int, int] = {}
    used = set()
    for same in (lambda i, j: candidate[i] == reference[j], lambda i, j: stems_c[i] == stems_r[j]):
        for i in range(len(candidate)):
            if i in match:
                continue
            for j in range(len(reference)):
                if j not in used and same(i, j):
                    match[i] = j
                    used.add(j)
                    break
    exact = sum(candidate[i] == reference[j] for i, j in match.items())
    chunks = sum(1 for i, j in match.items() if match.get(i - 1) != j - 1)
    return exact, len(match) - exact, chunks


def meteor_from_counts(matches: int, chunks: int, cand_len: int, ref_len: int) -> float:
    if matches == 0:
        return 0.0
    p, r = matches / cand_len, matches / ref_len
    fmean = p * r / (METEOR_ALPHA * p + (1 - METEOR_ALPHA) * r)
    penalty = METEOR_GAMMA * (chunks / matches) ** METEOR_BETA
    return fmean * (1 - penalty)


def meteor_pair(candidate: Tokens, reference: Tokens) -> float:
    if not candidate or not reference:
        return 0.0
    ex, st, chunks = meteor_alignment(candidate, reference)
    return meteor_from_counts(ex + st, chunks, len(candidate), len(reference))


def meteor_lite(pairs: Sequence[EvalPair]) -> float:
    """METEOR without synonym or paraphrase tables: exact then Porter-stem
    matching, alpha 0.9, fragmentation penalty 0.5 * (chunks/matches)^3."""
    _check(pairs)
    return _fsum_mean(meteor_pair(p.candidate, p.reference) for p in pairs)


# ---------------------------------------------------------------- Distinct

def distinct_n(candidates: Sequence[Tokens], n: int = 1) -> float:
    if not candidates:
        raise EmptyCorpus("no candidates")
    total = 0
    unique = set()
    for tokens in candidates:
        grams = _ngrams(tokens, n)
        total += len(grams)
        unique.update(grams)
    if total == 0:
        raise DegenerateLength(f"every candidate is shorter than {n} tokens")
    return len(unique) / total


# ---------------------------------------------------------------- strategy

def strategy_accuracy(pairs: Sequence[EvalPair]) -> float:
    _check(pairs)
    hits = 0
    for i, p in enumerate(pairs):
        if p.predicted_strategy is None or p.gold_strategy is None:
            raise MissingStrategy(i)
        hits += p.predicted_strategy == p.gold_strategy
    return hits / len(pairs)


# ---------------------------------------------------------------- Fleiss

def fleiss_kappa(matrix) -> float:
    """Fleiss' kappa for an items x categories count matrix.

    Every row must sum to the same number of raters n >= 2.
    """
    counts = np.asarray(matrix, dtype=float)
    if counts.ndim != 2 or counts.shape[0] < 1 or counts.shape[1] < 2:
        raise DegenerateMatrix("need at least one item and two categories")
    if (counts < 0).any() or not np.all(counts == np.round(counts)):
        raise DegenerateMatrix("cells must be non-negative integers")
    row_sums = counts.sum(axis=1)
    n = row_sums[0]
    if not np.all(row_sums == n):
        raise DegenerateMatrix("every item needs the same number of ratings")
    if n < 2:
        raise DegenerateMatrix("need at least two raters per item")
    n_items = counts.shape[0]
    p_item = ((counts ** 2).sum(axis=1) - n) / (n * (n - 1))
    p_bar = math.fsum(p_item) / n_items
    p_cat = counts.sum(axis=0) / (n_items * n)
    p_e = math.fsum(p_cat ** 2)
    if p_e == 1.0:
        # all ratings in one category, so every item agrees perfectly
        return 1.0
    return (p_bar - p_e) / (1 - p_e)


# ---------------------------------------------------------------- report

def evaluate_corpus(pairs: Sequence[EvalPair]) -> Dict[str, Union[float, str]]:
    """Every metric in one mapping, keyed by result-table column label.

    BERTScore needs an embedding model and is always reported unavailable;
    strategy accuracy is unavailable when no pair has a gold strategy.
    """
    _check(pairs)
    candidates = [p.candidate for p in pairs]
    report: Dict[str, Union[float, str]] = {
        "B-1": bleu_n(pairs, 1),
        "B-2": bleu_n(pairs, 2),
        "R-L": rouge_l(pairs),
        "METEOR": meteor_lite(pairs),
        "BERTScore": UNAVAILABLE,
        "D-1": distinct_n(candidates, 1),
        "D-2": distinct_n(candidates, 2),
    }
    if any(p.gold_strategy is not None for p in pairs):
        report["ACC_Stra."] = strategy_accuracy(pairs)
    else:
        report["ACC_Stra."] = UNAVAILABLE
    return report


def format_report(report: Dict[str, Union[float, str]], percent: bool = False) -> str:
    shown = {}
    for key in REPORT_KEYS:
        value = report.get(key, UNAVAILABLE)
        if isinstance(value, float) and percent:
            value = round(100 * value, 2)
        shown[key] = value
    return json.dumps(shown, indent=2)
