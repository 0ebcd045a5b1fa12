"""Deterministic synthetic parallel corpora ("cipher languages").

A task shares one base source language (pseudo-words over Latin letters)
and pairs every source sentence with its word-by-word translation into a
cipher language. The cipher's script is configurable, so a parent task
(Latin-script target) and a child task (Cyrillic or private-use-area
target) emulate same-script and different-script transfer conditions; the
private-use block guarantees zero character overlap with anything else.
"""

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .vocab import write_corpus

SCRIPTS = {
    "latin": "abcdefghijklmnopqrstuvwxyz",
    "cyrillic": "абвгдежзийклмнопрстуфхцчшщыэюя",
    "private": "".join(chr(0xE000 + i) for i in range(32)),
}

MIN_WORDS, MAX_WORDS = 3, 12
SPLIT_TRAIN, SPLIT_DEV = 0.90, 0.05


@dataclass
class CipherLang:
    """A deterministic word-substitution language over one script."""

    name: str
    script: str
    seed: int
    alphabet: frozenset = field(default_factory=frozenset)
    word_map: dict = field(default_factory=dict)

    def translate(self, sentence):
        return " ".join(self.word_map[w] for w in sentence.split())


def cipher_lang(name, script, seed):
    if script not in SCRIPTS:
        raise ConfigError(f"unknown script {script!r}; expected one of {sorted(SCRIPTS)}")
    return CipherLang(name=name, script=script, seed=seed)


def _random_words(rng, alphabet, count, min_len=3, max_len=8):
    words = []
    seen = set()
    chars = list(alphabet)
    while len(words) < count:
        n = int(rng.integers(min_len, max_len + 1))
        w = "".join(chars[int(i)] for i in rng.integers(0, len(chars), n))
        if w in seen:
            continue
        seen.add(w)
        words.append(w)
    return words


def make_lexicon(size, seed):
    """Base-language lexicon: unique pseudo-words over Latin letters."""
    if size < 1:
        raise ConfigError(f"lexicon size must be >= 1, got {size}")
    return _random_words(np.random.default_rng([seed, 7]), SCRIPTS["latin"], size)


def _fill_cipher(lang, lexicon):
    rng = np.random.default_rng([lang.seed, 13])
    cipher_words = _random_words(rng, SCRIPTS[lang.script], len(lexicon))
    word_map = dict(zip(lexicon, cipher_words))
    alphabet = frozenset(ch for w in cipher_words for ch in w)
    return CipherLang(lang.name, lang.script, lang.seed, alphabet, word_map)


@dataclass
class SynthTask:
    train: list
    dev: list
    test: list
    target: CipherLang
    manifest: dict


def split_sizes(n_pairs):
    """Floor for train and dev, remainder to test."""
    n_train = int(n_pairs * SPLIT_TRAIN)
    n_dev = int(n_pairs * SPLIT_DEV)
    return n_train, n_dev, n_pairs - n_train - n_dev


def make_task(base_seed, n_pairs, source_lexicon_size, target, sentence_seed=None):
    """Generate a parallel corpus with a 90/5/5 split.

    Source sentences are 3-12 word sequences over the base lexicon; the
    target side is the word-by-word cipher translation. Fully
    deterministic from (base_seed, sentence_seed, target.seed); dev and
    test sentences are disjoint from train at the sentence level because
    all generated source sentences are distinct.
    """
    if n_pairs < 30:
        raise ConfigError(f"n_pairs must be >= 30, got {n_pairs}")
    if source_lexicon_size ** MIN_WORDS < 4 * n_pairs:
        raise ConfigError(
            f"lexicon of {source_lexicon_size} words is too small to generate "
            f"{n_pairs} distinct sentences"
        )
    lexicon = make_lexicon(source_lexicon_size, base_seed)
    lang = _fill_cipher(target, lexicon)
    if sentence_seed is None:
        sentence_seed = base_seed + 1
    rng = np.random.default_rng([sentence_seed, 23])
    sentences = []
    seen = set()
    while len(sentences) < n_pairs:
        n = int(rng.integers(MIN_WORDS, MAX_WORDS + 1))
        s = " ".join(lexicon[int(i)] for i in rng.integers(0, len(lexicon), n))
        if s in seen:
            continue
        seen.add(s)
        sentences.append(s)
    pairs = [(s, lang.translate(s)) for s in sentences]
    n_train, n_dev, n_test = split_sizes(n_pairs)
    manifest = {
        "base_seed": base_seed,
        "sentence_seed": sentence_seed,
        "n_pairs": n_pairs,
        "source_lexicon_size": source_lexicon_size,
        "target_name": lang.name,
        "target_script": lang.script,
        "target_seed": lang.seed,
        "split": {"train": n_train, "dev": n_dev, "test": n_test},
    }
    return SynthTask(
        train=pairs[:n_train],
        dev=pairs[n_train : n_train + n_dev],
        test=pairs[n_train + n_dev :],
        target=lang,
        manifest=manifest,
    )


def write_task(task, outdir):
    os.makedirs(outdir, exist_ok=True)
    for split in ("train", "dev", "test"):
        pairs = getattr(task, split)
        write_corpus([s for s, _ in pairs], os.path.join(outdir, f"{split}.src"))
        write_corpus([t for _, t in pairs], os.path.join(outdir, f"{split}.tgt"))
    with open(os.path.join(outdir, "manifest.json"), "w", encoding="utf-8") as f:
        json.dump(task.manifest, f, indent=2, ensure_ascii=False)
        f.write("\n")


def read_task_dir(path):
    """Load the three splits of a task directory as sentence-pair lists."""
    from .vocab import read_corpus

    out = {}
    for split in ("train", "dev", "test"):
        src = read_corpus(os.path.join(path, f"{split}.src"))
        tgt = read_corpus(os.path.join(path, f"{split}.tgt"))
        if len(src) != len(tgt):
            raise ConfigError(
                f"{split} sides of {path} have {len(src)} vs {len(tgt)} sentences"
            )
        out[split] = list(zip(src, tgt))
    return out
