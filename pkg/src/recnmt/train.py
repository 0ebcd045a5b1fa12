"""Training loop: schedule, Adam, batching, evaluation, early stopping."""

import logging
import math
from dataclasses import dataclass, asdict, field

import numpy as np

from . import kernels
from .bleu import bleu
from .checkpoint import Checkpoint, moments_transferable, vocab_hash
from .decode import translate_with_params
from .errors import ConfigError, TrainError
from .model import (
    ModelConfig,
    frozen_parameter_names,
    init_params,
    loss_and_grads,
)
from .vocab import segment

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    base_lr: float = 0.05
    warmup_steps: int = 400
    batch_tokens: int = 1024
    max_steps: int = 2000
    eval_every: int = 100
    length_limit: int = 100
    stop_rel_threshold: float = 0.005
    stop_window_frac: float = 0.5
    min_steps: int = 800
    dev_smoothing: bool = True

    def __post_init__(self):
        if not 0.0 < self.stop_rel_threshold < 1.0:
            raise ConfigError(
                f"stop_rel_threshold must be in (0, 1), got {self.stop_rel_threshold}"
            )
        if not 0.0 < self.stop_window_frac <= 1.0:
            raise ConfigError(
                f"stop_window_frac must be in (0, 1], got {self.stop_window_frac}"
            )
        if self.warmup_steps < 1:
            raise ConfigError("warmup_steps must be >= 1")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def lr_schedule(step, base_lr, warmup_steps):
    """Linear warmup into inverse-square-root decay."""
    if step < 1:
        raise ConfigError(f"step must be >= 1, got {step}")
    return base_lr * min(step / warmup_steps, 1.0) * max(step, warmup_steps) ** -0.5


def early_stop(trajectory, stop_rel_threshold, stop_window_frac, min_steps):
    """True when the recent evaluation window shows no real improvement.

    With n evaluations, the window is the last ceil(stop_window_frac * n);
    stop once the window's best BLEU exceeds the pre-window best by no
    more than stop_rel_threshold of the overall best, provided at least
    min_steps training steps have run and a pre-window exists.
    """
    if not trajectory:
        return False

    def _get(p, key, idx):
        return getattr(p, key) if hasattr(p, key) else p[idx]

    steps = [_get(p, "step", 0) for p in trajectory]
    bleus = [_get(p, "bleu", 1) for p in trajectory]
    if steps[-1] < min_steps:
        return False
    n = len(bleus)
    w = math.ceil(stop_window_frac * n)
    if w >= n:
        return False
    recent = bleus[n - w:]
    pre = bleus[: n - w]
    return max(recent) - max(pre) <= stop_rel_threshold * max(bleus)


@dataclass
class EvalPoint:
    step: int
    bleu: float
    loss: float
    lr: float
    accuracy: float


def write_trajectory(trajectory, path):
    with open(path, "w", encoding="utf-8") as f:
        f.write("step\tbleu\tloss\tlr\n")
        for p in trajectory:
            f.write(f"{p.step}\t{p.bleu:.4f}\t{p.loss:.6f}\t{p.lr:.8f}\n")


class Adam:
    """Plain Adam with fused update kernel and per-parameter freezing."""

    def __init__(self, params, beta1=0.9, beta2=0.98, eps=1e-9):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def config(self):
        return {"name": "adam", "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps}

    def load_state(self, optimizer_state):
        for name, slots in optimizer_state.items():
            if name not in self.m:
                raise ConfigError(f"optimizer state for unknown parameter {name!r}")
            self.m[name] = slots["m"].astype(self.m[name].dtype).reshape(self.m[name].shape)
            self.v[name] = slots["v"].astype(self.v[name].dtype).reshape(self.v[name].shape)

    def export_state(self):
        return {k: {"m": self.m[k].copy(), "v": self.v[k].copy()} for k in self.m}

    def step(self, params, grads, lr, t, frozen_names=frozenset()):
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for name, p in params.items():
            if name in frozen_names:
                continue
            kernels.adam_update(
                p.reshape(-1), grads[name].reshape(-1),
                self.m[name].reshape(-1), self.v[name].reshape(-1),
                lr, self.beta1, self.beta2, self.eps, bc1, bc2,
            )


# ---------------------------------------------------------------------------
# data preparation
# ---------------------------------------------------------------------------


def encode_pairs(pairs, vocab):
    """Segment sentence pairs into id lists; the source gets a trailing
    end-of-sequence marker, the target is stored without markers."""
    eos = vocab.eos_id
    out = []
    for src, tgt in pairs:
        out.append((segment(src, vocab).token_ids + [eos], segment(tgt, vocab).token_ids))
    return out


def _pack_batches(encoded, batch_tokens, rng, pool_size=256):
    """One epoch of batches: shuffle, sort within pools by length to cut
    padding waste, pack greedily, then shuffle batch order."""
    order = rng.permutation(len(encoded))
    batches = []
    for start in range(0, len(order), pool_size):
        pool = sorted(
            (order[k] for k in range(start, min(start + pool_size, len(order)))),
            key=lambda i: max(len(encoded[i][0]), len(encoded[i][1]) + 1),
        )
        cur = []
        cur_max = 0
        for i in pool:
            ln = max(len(encoded[i][0]), len(encoded[i][1]) + 1)
            if cur and (len(cur) + 1) * max(cur_max, ln) > batch_tokens:
                batches.append(cur)
                cur = []
                cur_max = 0
            cur.append(i)
            cur_max = max(cur_max, ln)
        if cur:
            batches.append(cur)
    order2 = rng.permutation(len(batches))
    return [batches[i] for i in order2]


def make_batch(items, pad_id, bos_id, eos_id):
    """Pad a list of (src_ids, tgt_ids) into dense teacher-forcing arrays."""
    b = len(items)
    s = max(len(src) for src, _ in items)
    t = max(len(tgt) for _, tgt in items) + 1
    src_ids = np.full((b, s), pad_id, dtype=np.int64)
    src_valid = np.zeros((b, s), dtype=bool)
    tgt_in = np.full((b, t), pad_id, dtype=np.int64)
    tgt_out = np.full((b, t), pad_id, dtype=np.int64)
    tgt_valid = np.zeros((b, t), dtype=bool)
    for i, (src, tgt) in enumerate(items):
        src_ids[i, : len(src)] = src
        src_valid[i, : len(src)] = True
        row_in = [bos_id] + tgt
        row_out = tgt + [eos_id]
        tgt_in[i, : len(row_in)] = row_in
        tgt_out[i, : len(row_out)] = row_out
        tgt_valid[i, : len(row_out)] = True
    return {
        "src_ids": src_ids,
        "src_valid": src_valid,
        "tgt_in": tgt_in,
        "tgt_out": tgt_out,
        "tgt_valid": tgt_valid,
    }


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


def _snapshot(params, step, optimizer, vocab, model_cfg):
    return Checkpoint(
        tensors={k: v.copy() for k, v in params.items()},
        step=step,
        optimizer_state=optimizer.export_state(),
        metadata={
            "vocab_hash": vocab_hash(vocab),
            "model_config": model_cfg.to_dict(),
            "optimizer": optimizer.config(),
        },
    )


def _dev_loss(params, cfg, dev_batches):
    total = 0.0
    tokens = 0
    acc = 0.0
    for batch in dev_batches:
        loss, metrics, _ = loss_and_grads(params, cfg, batch, rng=None, compute_grads=False)
        n = metrics["n_tokens"]
        total += loss * n
        acc += metrics["accuracy"] * n
        tokens += n
    return total / max(tokens, 1), acc / max(tokens, 1)


def train(model_init, train_pairs, dev_pairs, vocab, model_cfg, train_cfg,
          freeze=frozenset(), log_fn=None):
    """Train from scratch or from a transfer-initialized checkpoint.

    ``train_pairs`` is expected to be pre-filtered with ``filter_long``.
    Returns (best_dev_checkpoint, trajectory). The trajectory includes an
    evaluation of the initial model, so a warm start shows up at its
    carried step.
    """
    if vocab.size != model_cfg.vocab_size:
        raise ConfigError(
            f"vocabulary size {vocab.size} != model vocab_size {model_cfg.vocab_size}"
        )
    if not train_pairs:
        raise ConfigError("no training pairs (did length filtering drop everything?)")
    frozen_names_cache = None

    if isinstance(model_init, Checkpoint):
        params = {k: v.astype(np.float32) for k, v in model_init.tensors.items()}
        reference = init_params(model_cfg)
        if set(params) != set(reference):
            raise ConfigError("checkpoint tensors do not match the model configuration")
        for k in params:
            if params[k].shape != reference[k].shape:
                raise ConfigError(
                    f"tensor {k!r} has shape {params[k].shape}, expected "
                    f"{reference[k].shape}"
                )
        step0 = model_init.step
        optimizer = Adam(params)
        if model_init.optimizer_state and moments_transferable(
            model_init.metadata, optimizer.config()
        ):
            optimizer.load_state(model_init.optimizer_state)
    else:
        params = init_params(model_cfg)
        step0 = 0
        optimizer = Adam(params)

    frozen_names_cache = frozen_parameter_names(params, freeze)

    pad_id, bos_id, eos_id = vocab.pad_id, vocab.bos_id, vocab.eos_id
    encoded = encode_pairs(train_pairs, vocab)
    dev_encoded = encode_pairs(dev_pairs, vocab)
    dev_batches = []
    cur = []
    for item in dev_encoded:
        cur.append(item)
        if len(cur) * max(max(len(s), len(t) + 1) for s, t in cur) >= train_cfg.batch_tokens:
            dev_batches.append(make_batch(cur, pad_id, bos_id, eos_id))
            cur = []
    if cur:
        dev_batches.append(make_batch(cur, pad_id, bos_id, eos_id))
    dev_src = [s for s, _ in dev_pairs]
    dev_ref = [t for _, t in dev_pairs]
    max_ref_tokens = max((len(t) for _, t in dev_encoded), default=8)
    dev_cap = min(model_cfg.max_len, int(1.5 * max_ref_tokens) + 8)

    batch_rng = np.random.default_rng([model_cfg.seed, 101])
    drop_rng = np.random.default_rng([model_cfg.seed, 202])

    def evaluate(step, lr):
        loss, acc = _dev_loss(params, model_cfg, dev_batches)
        hyps = translate_with_params(
            params, model_cfg, vocab, dev_src, beam=1, max_decode_len=dev_cap
        )
        score = bleu(hyps, dev_ref, smoothing=train_cfg.dev_smoothing).score
        return EvalPoint(step=step, bleu=score, loss=loss, lr=lr, accuracy=acc)

    trajectory = [evaluate(step0, 0.0)]
    best_point = trajectory[0]
    best_ckpt = _snapshot(params, step0, optimizer, vocab, model_cfg)
    if log_fn:
        log_fn(trajectory[0])

    epoch_batches = []
    pos = 0
    rel = 0
    while rel < train_cfg.max_steps:
        if pos >= len(epoch_batches):
            epoch_batches = _pack_batches(encoded, train_cfg.batch_tokens, batch_rng)
            pos = 0
        batch = make_batch(
            [encoded[i] for i in epoch_batches[pos]], pad_id, bos_id, eos_id
        )
        pos += 1
        rel += 1
        step = step0 + rel
        lr = lr_schedule(step, train_cfg.base_lr, train_cfg.warmup_steps)
        loss, _, grads = loss_and_grads(params, model_cfg, batch, rng=drop_rng)
        if not math.isfinite(loss):
            raise TrainError(
                f"non-finite loss at step {step}",
                checkpoint=_snapshot(params, step, optimizer, vocab, model_cfg),
            )
        optimizer.step(params, grads, lr, step, frozen_names_cache)

        if rel % train_cfg.eval_every == 0:
            point = evaluate(step, lr)
            trajectory.append(point)
            if log_fn:
                log_fn(point)
            if point.bleu > best_point.bleu:
                best_point = point
                best_ckpt = _snapshot(params, step, optimizer, vocab, model_cfg)
            rel_view = [(p.step - step0, p.bleu) for p in trajectory]
            if early_stop(
                rel_view,
                train_cfg.stop_rel_threshold,
                train_cfg.stop_window_frac,
                train_cfg.min_steps,
            ):
                log.info("early stop at step %d", step)
                break

    return best_ckpt, trajectory
