"""
Automatic response metrics
==========================

Corpus BLEU-1/2, ROUGE-L, a stem-aware METEOR without synonym tables,
Distinct-1/2 and strategy accuracy. Fleiss' kappa covers annotator agreement.
"""

from carekit.core import DEFAULT_VOCAB
from carekit.metrics import EvalPair, evaluate_corpus, fleiss_kappa, format_report

rows = [
    ("That sounds hard. How long did you work there?", "That sounds really hard. How long were you there?",
     "Question", "Question"),
    ("You feel useless because you lost your job.", "It makes sense to feel useless after losing a job.",
     "Restatement or Paraphrasing", "Reflection of Feelings"),
    ("Running helped me when I felt stuck.", "I found that a run helps when I feel stuck.",
     "Self-disclosure", "Self-disclosure"),
]
pairs = [EvalPair.from_text(c, r, DEFAULT_VOCAB.canonicalize(p), DEFAULT_VOCAB.canonicalize(g))
         for c, r, p, g in rows]
print(format_report(evaluate_corpus(pairs), percent=True))

# three annotators rate five responses on a 1-3 scale; each row counts the votes per grade
ratings = [
    [0, 0, 3],
    [0, 1, 2],
    [3, 0, 0],
    [0, 3, 0],
    [1, 1, 1],
]
print("Fleiss' kappa:", round(fleiss_kappa(ratings), 4))
