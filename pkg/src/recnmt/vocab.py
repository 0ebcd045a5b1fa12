"""Subword vocabularies with deterministic greedy segmentation.

A vocabulary is an ordered list of entries; the index of an entry is its
embedding row. Entries live in "escaped space": words are escaped before
matching, one escaped stream per whitespace-delimited word, with ``_``
appended as the end-of-word marker. The escape scheme:

* literal ``\\``  -> ``\\\\``
* literal ``_``   -> ``\\u``
* any character without a single-character entry -> ``\\<decimal>;``

Every vocabulary carries a mandatory block: three reserved control entries
(``\\pad;``, ``\\bos;``, ``\\eos;`` - never producible by the escape
grammar, so they can never match real text) and the fourteen single
characters the escapes are built from (digits, ``;``, ``\\``, ``_``,
``u``). The marker and escape characters always having single-character
entries is what makes segmentation total: any Unicode string round-trips.

Decoding concatenates the matched entries back into one escaped stream,
splits on the end-of-word markers and unescapes, so the round trip is
exact regardless of how greedy matching aligned with escape boundaries.
"""

from collections import Counter
from dataclasses import dataclass

from .errors import ConfigError, DataError, ParseError

EOW = "_"
MAX_SUBWORD_LEN = 20

# control entries first so their ids are stable and small
PAD_TOKEN = "\\pad;"
BOS_TOKEN = "\\bos;"
EOS_TOKEN = "\\eos;"
RESERVED_TOKENS = (PAD_TOKEN, BOS_TOKEN, EOS_TOKEN)
ESCAPE_CHARS = tuple(sorted("0123456789;\\_u"))
MANDATORY_TOKENS = RESERVED_TOKENS + ESCAPE_CHARS


def escape_word(word, alphabet=None):
    """Escaped form of one word. ``alphabet=None`` keeps all characters
    literal (used while building, when the final alphabet is unknown)."""
    out = []
    for ch in word:
        if ch == "\\":
            out.append("\\\\")
        elif ch == "_":
            out.append("\\u")
        elif alphabet is None or ch in alphabet:
            out.append(ch)
        else:
            out.append("\\%d;" % ord(ch))
    return "".join(out)


def unescape(text):
    """Invert :func:`escape_word`. Lenient: malformed escape sequences
    (possible only for token streams not produced by ``segment``) are
    emitted literally."""
    out = []
    i = 0
    n = len(text)
    while i < n:
        c = text[i]
        if c != "\\":
            out.append(c)
            i += 1
            continue
        if i + 1 >= n:
            out.append(c)
            break
        nxt = text[i + 1]
        if nxt == "\\":
            out.append("\\")
            i += 2
        elif nxt == "u":
            out.append("_")
            i += 2
        elif "0" <= nxt <= "9":
            j = i + 1
            while j < n and "0" <= text[j] <= "9":
                j += 1
            if j < n and text[j] == ";":
                cp = int(text[i + 1 : j])
                if cp <= 0x10FFFF:
                    out.append(chr(cp))
                    i = j + 1
                else:
                    out.append(c)
                    i += 1
            else:
                out.append(c)
                i += 1
        else:
            out.append(c)
            i += 1
    return "".join(out)


def normalize_sentence(sentence):
    """Collapse whitespace runs to single spaces (ingestion normalization)."""
    return " ".join(sentence.split())


@dataclass(frozen=True)
class Subword:
    """One vocabulary entry in escaped form."""

    text: str

    @property
    def word_final(self):
        return self.text.endswith(EOW)


@dataclass
class SegmentedSentence:
    token_ids: list
    token_count: int
    word_count: int


class Vocabulary:
    """Immutable ordered list of escaped subword entries.

    ``frequencies`` optionally carries per-entry corpus counts (set by
    :func:`build_vocabulary`, not persisted in the vocabulary file).
    """

    def __init__(self, entries, frequencies=None):
        entries = list(entries)
        seen = {}
        for i, e in enumerate(entries):
            if not e:
                raise DataError(f"empty vocabulary entry at index {i}")
            if any(ch.isspace() for ch in e):
                raise DataError(f"entry at index {i} contains whitespace: {e!r}")
            if e in seen:
                raise DataError(f"duplicate entry {e!r} at indices {seen[e]} and {i}")
            seen[e] = i
        self.entries = entries
        self._index = seen
        self.frequencies = list(frequencies) if frequencies is not None else None
        self._alphabet = frozenset(e for e in entries if len(e) == 1)
        by_first = {}
        for e in entries:
            by_first.setdefault(e[0], set()).add(len(e))
        self._by_first = {c: tuple(sorted(ls, reverse=True)) for c, ls in by_first.items()}

    @property
    def size(self):
        return len(self.entries)

    def __len__(self):
        return len(self.entries)

    def __contains__(self, entry):
        return entry in self._index

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.entries == other.entries

    def index_of(self, entry):
        return self._index[entry]

    @property
    def alphabet(self):
        """Single-character entries; characters outside it get byte-escaped."""
        return self._alphabet

    @property
    def fallback_complete(self):
        return all(c in self._index for c in ESCAPE_CHARS)

    @property
    def has_control_tokens(self):
        return all(t in self._index for t in RESERVED_TOKENS)

    @property
    def pad_id(self):
        return self._control_id(PAD_TOKEN)

    @property
    def bos_id(self):
        return self._control_id(BOS_TOKEN)

    @property
    def eos_id(self):
        return self._control_id(EOS_TOKEN)

    def _control_id(self, token):
        try:
            return self._index[token]
        except KeyError:
            raise ConfigError(f"vocabulary lacks reserved control entry {token!r}")

    def longest_match(self, stream, pos):
        """Greedy longest entry matching ``stream`` at ``pos``; returns
        (id, length)."""
        lengths = self._by_first.get(stream[pos])
        if lengths is None:
            raise ConfigError(
                f"no entry can match {stream[pos]!r}; vocabulary is missing "
                "its fallback alphabet"
            )
        limit = len(stream) - pos
        for ln in lengths:
            if ln > limit:
                continue
            tid = self._index.get(stream[pos : pos + ln])
            if tid is not None:
                return tid, ln
        raise ConfigError(
            f"no entry matches at position {pos} of {stream!r}; vocabulary "
            "is missing its fallback alphabet"
        )


def segment(sentence, vocab):
    """Greedy longest-match segmentation of one sentence.

    Total for any Unicode string when the vocabulary carries its fallback
    alphabet; ``detokenize`` inverts it exactly.
    """
    ids = []
    words = sentence.split()
    for word in words:
        stream = escape_word(word, vocab.alphabet) + EOW
        pos = 0
        n = len(stream)
        while pos < n:
            tid, ln = vocab.longest_match(stream, pos)
            ids.append(tid)
            pos += ln
    return SegmentedSentence(ids, len(ids), len(words))


def detokenize(token_ids, vocab):
    """Concatenate entries, split on end-of-word markers, unescape."""
    size = vocab.size
    for t in token_ids:
        if not 0 <= t < size:
            raise DataError(f"token id {t} out of range for vocabulary of size {size}")
    escaped = "".join(vocab.entries[t] for t in token_ids)
    parts = escaped.split(EOW)
    if parts and parts[-1] == "":
        parts.pop()
    return " ".join(unescape(p) for p in parts)


def build_vocabulary(corpus, target_size):
    """Deterministic frequency-based vocabulary induction.

    Candidates are all substrings (up to ``MAX_SUBWORD_LEN`` characters) of
    the escaped words with the end-of-word marker appended, scored by
    count * length; the top ``target_size - len(MANDATORY_TOKENS)`` fill the
    slots after the mandatory block, ties broken lexicographically. Short
    corpora are padded with reserved ``<pad_k>`` entries so the size is
    exact.
    """
    if target_size < len(MANDATORY_TOKENS):
        raise ConfigError(
            f"target_size {target_size} is below the mandatory alphabet size "
            f"{len(MANDATORY_TOKENS)}"
        )
    word_counts = Counter()
    n_sentences = 0
    for sentence in corpus:
        n_sentences += 1
        word_counts.update(sentence.split())
    if n_sentences == 0:
        raise DataError("empty corpus")

    candidates = Counter()
    for word, count in word_counts.items():
        stream = escape_word(word, None) + EOW
        n = len(stream)
        for i in range(n):
            top = min(i + MAX_SUBWORD_LEN, n)
            for j in range(i + 1, top + 1):
                candidates[stream[i:j]] += count
    raw_counts = dict(candidates)
    for t in MANDATORY_TOKENS:
        candidates.pop(t, None)

    budget = target_size - len(MANDATORY_TOKENS)
    ranked = sorted(candidates.items(), key=lambda kv: (-kv[1] * len(kv[0]), kv[0]))
    entries = list(MANDATORY_TOKENS) + [s for s, _ in ranked[:budget]]

    pad_k = 0
    existing = set(entries)
    while len(entries) < target_size:
        pad = f"<pad_{pad_k}>"
        pad_k += 1
        if pad in existing:
            continue
        entries.append(pad)
        existing.add(pad)

    freqs = [raw_counts.get(e, 0) for e in entries]
    return Vocabulary(entries, frequencies=freqs)


def vocabulary_bytes(vocab):
    """The exact file serialization: one entry per line, LF endings."""
    return ("\n".join(vocab.entries) + "\n").encode("utf-8")


def save_vocabulary(vocab, path):
    with open(path, "wb") as f:
        f.write(vocabulary_bytes(vocab))


def load_vocabulary(path):
    with open(path, "rb") as f:
        raw = f.read()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as e:
        raise ParseError(f"not valid UTF-8: {e}")
    if text == "":
        raise ParseError("empty vocabulary file (fallback alphabet missing)")
    if not text.endswith("\n"):
        raise ParseError("missing final newline", line=text.count("\n"))
    lines = text[:-1].split("\n")
    seen = {}
    for i, line in enumerate(lines):
        if line == "":
            raise ParseError("empty entry", line=i)
        if any(ch.isspace() for ch in line):
            raise ParseError(f"entry contains whitespace: {line!r}", line=i)
        if line in seen:
            raise ParseError(f"duplicate entry {line!r} (first at line {seen[line]})", line=i)
        seen[line] = i
    return Vocabulary(lines)


def read_corpus(path, normalize=True):
    """One sentence per line; whitespace-normalized at ingestion."""
    with open(path, "rb") as f:
        text = f.read().decode("utf-8")
    if text.endswith("\n"):
        text = text[:-1]
    if text == "":
        return []
    lines = text.split("\n")
    if normalize:
        lines = [normalize_sentence(s) for s in lines]
    return lines


def write_corpus(sentences, path):
    with open(path, "wb") as f:
        for s in sentences:
            f.write(s.encode("utf-8"))
            f.write(b"\n")
