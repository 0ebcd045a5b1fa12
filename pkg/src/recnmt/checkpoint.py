"""Named-tensor checkpoints and transfer initialization.

File layout (all integers little-endian):

    8 bytes   header length H (uint64)
    H bytes   JSON header: format_version, step, metadata,
              tensor directory [{name, shape, offset}],
              optimizer directory [{param, slot, shape, offset}]
    N bytes   payload: raw float32 tensors at the recorded byte offsets
    8 bytes   blake2b-64 digest of the payload

Offsets are byte offsets into the payload. The format is bit-exact over a
save/load round trip and trivially parseable from any language.
"""

import hashlib
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import CheckpointError, TransferError
from .vocab import vocabulary_bytes

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
_CHECKSUM_BYTES = 8


def _digest(payload):
    return hashlib.blake2b(payload, digest_size=_CHECKSUM_BYTES).digest()


def vocab_hash(vocab):
    """Identity of a vocabulary: sha256 of its exact file serialization."""
    return hashlib.sha256(vocabulary_bytes(vocab)).hexdigest()


@dataclass
class Checkpoint:
    tensors: dict
    step: int = 0
    optimizer_state: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def validate(self):
        if self.step < 0:
            raise CheckpointError(f"negative step counter {self.step}")
        for name, arr in self.tensors.items():
            if not np.isfinite(arr).all():
                raise CheckpointError(f"tensor {name!r} contains NaN/Inf")
        for pname, slots in self.optimizer_state.items():
            for slot, arr in slots.items():
                if not np.isfinite(arr).all():
                    raise CheckpointError(
                        f"optimizer slot {pname!r}/{slot} contains NaN/Inf"
                    )
        vs = self.metadata.get("model_config", {}).get("vocab_size")
        if vs is not None:
            emb = self.tensors.get("embedding")
            if emb is not None and emb.shape[0] != vs:
                raise CheckpointError(
                    f"embedding has {emb.shape[0]} rows but metadata records "
                    f"vocab_size {vs}"
                )

    def copy(self):
        return Checkpoint(
            tensors={k: v.copy() for k, v in self.tensors.items()},
            step=self.step,
            optimizer_state={
                p: {s: a.copy() for s, a in slots.items()}
                for p, slots in self.optimizer_state.items()
            },
            metadata=json.loads(json.dumps(self.metadata)),
        )


def save(ckpt, path):
    ckpt.validate()
    chunks = []
    offset = 0
    tensor_dir = []
    for name in sorted(ckpt.tensors):
        arr = np.ascontiguousarray(ckpt.tensors[name], dtype="<f4")
        raw = arr.tobytes()
        tensor_dir.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(raw)
        offset += len(raw)
    opt_dir = []
    for pname in sorted(ckpt.optimizer_state):
        for slot in sorted(ckpt.optimizer_state[pname]):
            arr = np.ascontiguousarray(ckpt.optimizer_state[pname][slot], dtype="<f4")
            raw = arr.tobytes()
            opt_dir.append(
                {"param": pname, "slot": slot, "shape": list(arr.shape), "offset": offset}
            )
            chunks.append(raw)
            offset += len(raw)
    payload = b"".join(chunks)
    header = json.dumps(
        {
            "format_version": FORMAT_VERSION,
            "step": int(ckpt.step),
            "metadata": ckpt.metadata,
            "tensors": tensor_dir,
            "optimizer_state": opt_dir,
        },
        ensure_ascii=False,
    ).encode("utf-8")
    with open(path, "wb") as f:
        f.write(len(header).to_bytes(8, "little"))
        f.write(header)
        f.write(payload)
        f.write(_digest(payload))


def _read_array(payload, entry):
    shape = tuple(entry["shape"])
    count = int(np.prod(shape)) if shape else 1
    start = entry["offset"]
    end = start + 4 * count
    if end > len(payload):
        raise CheckpointError(f"payload truncated reading {entry}")
    return np.frombuffer(payload[start:end], dtype="<f4").reshape(shape).copy()


def load(path):
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 8 + _CHECKSUM_BYTES:
        raise CheckpointError("file truncated: no header")
    hlen = int.from_bytes(raw[:8], "little")
    if 8 + hlen + _CHECKSUM_BYTES > len(raw):
        raise CheckpointError("file truncated: incomplete header")
    try:
        header = json.loads(raw[8 : 8 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"malformed header: {e}")
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"unknown format version {header.get('format_version')!r}"
        )
    payload = raw[8 + hlen : -_CHECKSUM_BYTES]
    if _digest(payload) != raw[-_CHECKSUM_BYTES:]:
        raise CheckpointError("checksum mismatch: payload corrupted or truncated")
    tensors = {e["name"]: _read_array(payload, e) for e in header["tensors"]}
    opt = {}
    for e in header["optimizer_state"]:
        opt.setdefault(e["param"], {})[e["slot"]] = _read_array(payload, e)
    ckpt = Checkpoint(
        tensors=tensors,
        step=int(header["step"]),
        optimizer_state=opt,
        metadata=header.get("metadata", {}),
    )
    ckpt.validate()
    return ckpt


@dataclass
class TransferPlan:
    mode: str  # "direct" or "transformed"
    mapping: object = None  # VocabMapping, required for "transformed"
    reset_step: bool = False
    reset_moments: bool = False

    def validate(self):
        if self.mode not in ("direct", "transformed"):
            raise TransferError(f"unknown transfer mode {self.mode!r}")
        if self.mode == "transformed" and self.mapping is None:
            raise TransferError("transformed mode requires a vocabulary mapping")


def transfer_init(parent, plan):
    """Initialize a child checkpoint from a parent.

    Never changes tensor values or shapes. Direct mode returns the parent
    verbatim; transformed mode carries the embedding matrix row-for-row
    (row i now denotes ``mapping.transformed[i]``, so shared subwords keep
    their trained embedding) and re-stamps the vocabulary metadata.
    """
    plan.validate()
    out = parent.copy()
    if plan.mode == "transformed":
        mapping = plan.mapping
        emb = out.tensors.get("embedding")
        if emb is None:
            raise TransferError("parent checkpoint has no 'embedding' tensor")
        if emb.shape[0] != len(mapping.transformed):
            raise TransferError(
                f"embedding has {emb.shape[0]} rows but the transformed "
                f"vocabulary has {len(mapping.transformed)} entries"
            )
        out.metadata["vocab_hash"] = vocab_hash(mapping.transformed)
        out.metadata["vocab_transform"] = {
            "strategy": mapping.strategy,
            "seed": mapping.seed,
            "shared_fraction": mapping.shared_fraction,
        }
    if plan.reset_step:
        out.step = 0
    if plan.reset_moments:
        for slots in out.optimizer_state.values():
            for arr in slots.values():
                arr[...] = 0.0
    return out


def moments_transferable(parent_meta, optimizer_config):
    """Moments carry over only between identical optimizer configurations."""
    parent_opt = parent_meta.get("optimizer")
    if parent_opt == optimizer_config:
        return True
    log.warning(
        "optimizer config changed (%s -> %s); resetting moments", parent_opt,
        optimizer_config,
    )
    return False
