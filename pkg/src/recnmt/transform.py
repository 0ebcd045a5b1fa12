"""Vocabulary transformation: re-label parent embedding rows for a child.

Shared subwords keep their parent index; child-only subwords are assigned
to the slots freed by parent-only subwords. The assignment strategy only
controls the pairing between child-only subwords and free slots:

* ``ordered``     - child-vocabulary order onto ascending free slots
* ``frequency``   - child subwords by descending corpus frequency onto
                    ascending free slots (falls back to vocabulary order
                    when no frequencies are known, e.g. for vocabularies
                    loaded from plain files)
* ``random``      - seeded uniform permutation onto ascending free slots
* ``levenshtein`` - each child-only subword, in child order, takes the
                    free slot whose former parent subword is closest in
                    edit distance (ties -> lower slot index)

``random_all`` additionally shuffles the shared subwords; it exists only
to replicate that degraded variant and is never a default.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ConfigError, DataError
from .vocab import Vocabulary

STRATEGIES = ("ordered", "frequency", "random", "levenshtein", "random_all")
DEFAULT_STRATEGY = "frequency"


@dataclass
class VocabMapping:
    transformed: Vocabulary
    shared_indices: frozenset
    assignment: list = field(default_factory=list)
    strategy: str = DEFAULT_STRATEGY
    seed: int = 0

    @property
    def shared_fraction(self):
        return len(self.shared_indices) / len(self.transformed)


def _codes(s):
    return np.array([ord(c) for c in s], dtype=np.int32)


def _order_child_only(strategy, child_only, child, child_frequencies, seed):
    if strategy == "ordered":
        return list(child_only)
    if strategy == "frequency":
        freqs = child_frequencies
        if freqs is None and child.frequencies is not None:
            freqs = {e: f for e, f in zip(child.entries, child.frequencies)}
        if freqs is None:
            freqs = {}
        return sorted(child_only, key=lambda s: (-freqs.get(s, 0), child.index_of(s)))
    if strategy == "random":
        rng = np.random.default_rng(seed)
        perm = rng.permutation(len(child_only))
        return [child_only[i] for i in perm]
    raise ConfigError(f"unknown strategy {strategy!r}")


def transform_vocabulary(parent, child, strategy=DEFAULT_STRATEGY, seed=0,
                         child_frequencies=None):
    """Build the transformed vocabulary and its assignment record.

    Requires ``len(child) == len(parent)`` (the builder guarantees this by
    padding). The result has the parent's size, keeps every shared subword
    at its parent index, and contains every child subword exactly once.
    """
    if strategy not in STRATEGIES:
        raise ConfigError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
    if len(child) != len(parent):
        raise ConfigError(
            f"child vocabulary size {len(child)} != parent size {len(parent)}"
        )

    child_entries = child.entries
    shared_indices = frozenset(
        parent.index_of(s) for s in child_entries if s in parent
    )

    if strategy == "random_all":
        rng = np.random.default_rng(seed)
        perm = rng.permutation(len(parent))
        transformed_entries = [child_entries[i] for i in perm]
        assignment = [(e, i) for i, e in enumerate(transformed_entries)]
        coincidental = frozenset(
            i for i, e in enumerate(transformed_entries) if parent.entries[i] == e
        )
        return VocabMapping(
            Vocabulary(transformed_entries), coincidental, assignment, strategy, seed
        )

    child_only = [s for s in child_entries if s not in parent]
    free_slots = [i for i in range(len(parent)) if i not in shared_indices]

    if strategy == "levenshtein":
        assignment = _assign_levenshtein(parent, child_only, free_slots)
    else:
        ordered = _order_child_only(strategy, child_only, child, child_frequencies, seed)
        assignment = list(zip(ordered, free_slots))

    transformed_entries = list(parent.entries)
    for subword, slot in assignment:
        transformed_entries[slot] = subword
    transformed = Vocabulary(transformed_entries)
    return VocabMapping(transformed, shared_indices, assignment, strategy, seed)


def _assign_levenshtein(parent, child_only, free_slots):
    """Greedy: child-only subwords in child order each take the remaining
    slot with minimum edit distance to the slot's former parent subword."""
    slot_codes = [(slot, _codes(parent.entries[slot])) for slot in free_slots]
    remaining = list(range(len(slot_codes)))
    assignment = []
    for subword in child_only:
        codes = _codes(subword)
        best_pos = None
        best_dist = None
        for pos in remaining:
            slot, pcodes = slot_codes[pos]
            d = kernels.levenshtein(codes, pcodes)
            if best_dist is None or d < best_dist:
                best_dist = d
                best_pos = pos
        assignment.append((subword, slot_codes[best_pos][0]))
        remaining.remove(best_pos)
    return assignment


def mapping_stats(mapping):
    return {
        "shared_fraction": mapping.shared_fraction,
        "reassigned_count": len(mapping.assignment),
    }


def save_mapping_report(mapping, path):
    report = {
        "strategy": mapping.strategy,
        "seed": mapping.seed,
        "shared_fraction": mapping.shared_fraction,
        "reassigned_count": len(mapping.assignment),
        "assignment": [[s, i] for s, i in mapping.assignment],
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(report, f, indent=2, ensure_ascii=False)
        f.write("\n")


def load_mapping_report(path, parent, transformed):
    """Rebuild a VocabMapping from its sidecar report plus the two
    vocabulary files it was emitted with."""
    with open(path, "r", encoding="utf-8") as f:
        report = json.load(f)
    if len(transformed) != len(parent):
        raise DataError("transformed vocabulary size does not match parent")
    shared = frozenset(
        i for i in range(len(parent)) if parent.entries[i] == transformed.entries[i]
    )
    assignment = [(s, int(i)) for s, i in report.get("assignment", [])]
    return VocabMapping(
        transformed, shared, assignment, report.get("strategy", "?"),
        report.get("seed", 0),
    )
