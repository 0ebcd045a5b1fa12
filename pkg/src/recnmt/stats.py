"""Segmentation-mismatch statistics and sentence-length filtering."""

import json
from dataclasses import dataclass

from .errors import DataError
from .vocab import segment


@dataclass
class FragmentationReport:
    tokens_per_sentence: float
    tokens_per_word: float
    sentence_count: int
    word_count: int
    filtered_count: int


def fragmentation(corpus, vocab, length_limit=None):
    """Token statistics of a corpus under a vocabulary.

    ``filtered_count`` reports how many sentences exceed ``length_limit``
    in tokens; those sentences still enter the averages (filtering
    membership is information for the trainer, not an exclusion here).
    Counts accumulate as exact integers; the division happens once.
    """
    total_tokens = 0
    total_words = 0
    n_sentences = 0
    filtered = 0
    for sentence in corpus:
        seg = segment(sentence, vocab)
        total_tokens += seg.token_count
        total_words += seg.word_count
        n_sentences += 1
        if length_limit is not None and seg.token_count > length_limit:
            filtered += 1
    if n_sentences == 0:
        raise DataError("empty corpus")
    return FragmentationReport(
        tokens_per_sentence=total_tokens / n_sentences,
        tokens_per_word=total_tokens / total_words if total_words else 0.0,
        sentence_count=n_sentences,
        word_count=total_words,
        filtered_count=filtered,
    )


def filter_long(pairs, vocab, length_limit):
    """Keep only sentence pairs where BOTH sides segment to at most
    ``length_limit`` tokens."""
    if length_limit < 1:
        raise DataError(f"length_limit must be >= 1, got {length_limit}")
    kept = []
    for src, tgt in pairs:
        if segment(src, vocab).token_count > length_limit:
            continue
        if segment(tgt, vocab).token_count > length_limit:
            continue
        kept.append((src, tgt))
    return kept


_COLUMNS = (
    "vocab_name",
    "tokens_per_sentence",
    "tokens_per_word",
    "sentence_count",
    "filtered_count",
)


def report_rows(named_reports):
    rows = []
    for name, rep in named_reports:
        rows.append(
            {
                "vocab_name": name,
                "tokens_per_sentence": rep.tokens_per_sentence,
                "tokens_per_word": rep.tokens_per_word,
                "sentence_count": rep.sentence_count,
                "filtered_count": rep.filtered_count,
            }
        )
    return rows


def write_report_tsv(named_reports, path):
    rows = report_rows(named_reports)
    with open(path, "w", encoding="utf-8") as f:
        f.write("\t".join(_COLUMNS) + "\n")
        for row in rows:
            f.write(
                "%s\t%.6f\t%.6f\t%d\t%d\n"
                % (
                    row["vocab_name"],
                    row["tokens_per_sentence"],
                    row["tokens_per_word"],
                    row["sentence_count"],
                    row["filtered_count"],
                )
            )


def write_report_json(named_reports, path):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(report_rows(named_reports), f, indent=2, ensure_ascii=False)
        f.write("\n")
