"""Corpus BLEU with clipped n-gram counts and exponential brevity penalty.

Tokenization isolates Unicode punctuation as separate tokens and splits on
whitespace, case kept as-is. N-gram orders the hypothesis is too short to
produce (zero total) are skipped from the geometric mean; any remaining
zero precision gives score 0 unless add-one smoothing (orders >= 2) is
switched on. Every score carries a signature string so numbers are only
compared across identical settings.
"""

import math
import unicodedata
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .errors import DataError

MAX_NGRAM = 4


def tokenize(sentence):
    out = []
    for ch in sentence:
        if unicodedata.category(ch).startswith("P"):
            out.append(" ")
            out.append(ch)
            out.append(" ")
        else:
            out.append(ch)
    return "".join(out).split()


def signature(smoothing):
    return "ngram=4|tok=punct-split|smooth=%s|case=sensitive" % (
        "add1-n2plus" if smoothing else "none"
    )


@dataclass
class BleuScore:
    score: float
    precisions: tuple
    brevity_penalty: float
    hyp_len: int
    ref_len: int
    smoothing: bool

    @property
    def signature(self):
        return signature(self.smoothing)


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def sentence_stats(hyp_tokens, ref_tokens):
    """Sufficient statistics for one sentence pair: clipped matches and
    totals for n = 1..4, then hypothesis and reference lengths."""
    row = np.zeros(10, dtype=np.int64)
    for n in range(1, MAX_NGRAM + 1):
        hgrams = _ngrams(hyp_tokens, n)
        row[n - 1] = sum((hgrams & _ngrams(ref_tokens, n)).values())
        row[MAX_NGRAM + n - 1] = max(len(hyp_tokens) - n + 1, 0)
    row[8] = len(hyp_tokens)
    row[9] = len(ref_tokens)
    return row


def corpus_stats(hypotheses, references):
    if len(hypotheses) != len(references):
        raise DataError(
            f"{len(hypotheses)} hypotheses vs {len(references)} references"
        )
    if not hypotheses:
        raise DataError("empty corpus")
    return np.stack(
        [sentence_stats(tokenize(h), tokenize(r)) for h, r in zip(hypotheses, references)]
    )


def score_from_sums(sums, smoothing=False):
    """Corpus BLEU from summed sufficient statistics (length-10 vector)."""
    match = [float(x) for x in sums[0:4]]
    total = [float(x) for x in sums[4:8]]
    hyp_len = int(sums[8])
    ref_len = int(sums[9])
    if smoothing:
        for n in range(1, MAX_NGRAM):
            match[n] += 1.0
            total[n] += 1.0
    precisions = []
    log_sum = 0.0
    n_included = 0
    zero = False
    for n in range(MAX_NGRAM):
        if total[n] <= 0:
            precisions.append(0.0)
            continue
        p = match[n] / total[n]
        precisions.append(p)
        n_included += 1
        if p <= 0:
            zero = True
        else:
            log_sum += math.log(p)
    if hyp_len == 0:
        return BleuScore(0.0, tuple(precisions), 0.0, hyp_len, ref_len, smoothing)
    bp = 1.0 if hyp_len >= ref_len else math.exp(1.0 - ref_len / hyp_len)
    if zero or n_included == 0:
        score = 0.0
    else:
        score = 100.0 * bp * math.exp(log_sum / n_included)
    return BleuScore(score, tuple(precisions), bp, hyp_len, ref_len, smoothing)


def bleu(hypotheses, references, smoothing=False):
    """Case-sensitive corpus BLEU of detokenized hypothesis strings against
    single references."""
    stats = corpus_stats(hypotheses, references)
    return score_from_sums(stats.sum(axis=0), smoothing)
