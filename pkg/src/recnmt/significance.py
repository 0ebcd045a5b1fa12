"""Paired bootstrap resampling over corpus BLEU.

Resamples sentence indices with replacement from a fixed seed, scores both
systems on each resample from pre-computed per-sentence statistics, and
reports the fraction of resamples where system B fails to beat system A
(ties count as failures, the conservative choice). The index matrix is
drawn once up front, so results are independent of how the per-resample
scoring is parallelized or which kernel backend computes it.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .bleu import corpus_stats, score_from_sums
from .errors import DataError


@dataclass
class SignificanceResult:
    p_like: float
    significant: bool
    n_samples: int
    seed: int
    alpha: float
    bleu_a: float
    bleu_b: float


def paired_bootstrap(hyp_a, hyp_b, references, n_samples=1000, alpha=0.05,
                     seed=0, smoothing=False):
    """Is system B significantly better than system A?"""
    n = len(references)
    if len(hyp_a) != n or len(hyp_b) != n:
        raise DataError(
            f"length mismatch: {len(hyp_a)} / {len(hyp_b)} hypotheses for "
            f"{n} references"
        )
    if n < 2:
        raise DataError(f"need at least 2 sentences, got {n}")
    stats_a = corpus_stats(hyp_a, references)
    stats_b = corpus_stats(hyp_b, references)
    idx = np.random.default_rng(seed).integers(0, n, size=(n_samples, n))
    scores_a, scores_b = kernels.bootstrap_scores(stats_a, stats_b, idx, smoothing)
    p_like = float((scores_b <= scores_a).mean())
    return SignificanceResult(
        p_like=p_like,
        significant=p_like < alpha,
        n_samples=n_samples,
        seed=seed,
        alpha=alpha,
        bleu_a=score_from_sums(stats_a.sum(axis=0), smoothing).score,
        bleu_b=score_from_sums(stats_b.sum(axis=0), smoothing).score,
    )


def both_directions(hyp_a, hyp_b, references, n_samples=1000, alpha=0.05,
                    seed=0, smoothing=False):
    """Significance of B over A and of A over B, from one resample draw."""
    return {
        "b_over_a": paired_bootstrap(hyp_a, hyp_b, references, n_samples, alpha, seed, smoothing),
        "a_over_b": paired_bootstrap(hyp_b, hyp_a, references, n_samples, alpha, seed, smoothing),
    }
