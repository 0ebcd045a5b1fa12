"""Greedy and beam-search decoding with incremental per-layer KV caches."""

import math

import numpy as np

from . import kernels
from .errors import ConfigError
from .model import (
    LN_EPS,
    ModelConfig,
    NEG_INF,
    encoder_fwd,
    output_embedding_name,
    sinusoidal_positions,
)
from .vocab import detokenize, segment


def _ln1d(params, prefix, x):
    y, _, _ = kernels.layer_norm_fwd(
        np.ascontiguousarray(x), params[f"{prefix}.g"], params[f"{prefix}.b"], LN_EPS
    )
    return y


def _proj_heads(params, prefix, name, x, h):
    b, d = x.shape
    y = x @ params[f"{prefix}.w{name}"] + params[f"{prefix}.b{name}"]
    return y.reshape(b, h, d // h)


class _DecodeState:
    """Incremental decoder state for a batch of source sentences."""

    def __init__(self, params, cfg, src_ids, src_valid, max_steps):
        self.params = params
        self.cfg = cfg
        self.t = 0
        self.max_steps = max_steps
        enc_out, _ = encoder_fwd(params, cfg, src_ids, src_valid, rng=None)
        self.enc_out = enc_out
        b, s, d = enc_out.shape
        h = cfg.n_heads
        dk = d // h
        dtype = enc_out.dtype
        self.src_neg = np.where(src_valid, 0.0, NEG_INF).astype(dtype)[:, None, :]
        enc2 = enc_out.reshape(b * s, d)
        self.k_cross = []
        self.v_cross = []
        self.k_self = []
        self.v_self = []
        for i in range(cfg.n_layers):
            pre = f"dec.{i}.cross_attn"
            k = (enc2 @ params[f"{pre}.wk"] + params[f"{pre}.bk"]).reshape(b, s, h, dk)
            v = (enc2 @ params[f"{pre}.wv"] + params[f"{pre}.bv"]).reshape(b, s, h, dk)
            self.k_cross.append(np.ascontiguousarray(k.transpose(0, 2, 1, 3)))
            self.v_cross.append(np.ascontiguousarray(v.transpose(0, 2, 1, 3)))
            self.k_self.append(np.zeros((b, h, max_steps, dk), dtype=dtype))
            self.v_self.append(np.zeros((b, h, max_steps, dk), dtype=dtype))
        self.pos = sinusoidal_positions(max_steps, d, dtype)
        self.scale = 1.0 / math.sqrt(dk)

    def reorder(self, idx):
        """Gather batch rows (beam-search parent selection)."""
        self.enc_out = self.enc_out[idx]
        self.src_neg = self.src_neg[idx]
        self.k_cross = [k[idx] for k in self.k_cross]
        self.v_cross = [v[idx] for v in self.v_cross]
        self.k_self = [k[idx] for k in self.k_self]
        self.v_self = [v[idx] for v in self.v_self]

    def step(self, last_ids):
        """Advance one position; returns next-token logits (batch, vocab)."""
        params, cfg = self.params, self.cfg
        d = cfg.d_model
        h = cfg.n_heads
        t = self.t
        emb = params["embedding"]
        x = emb[last_ids] * np.asarray(math.sqrt(d), dtype=emb.dtype) + self.pos[t]
        for i in range(cfg.n_layers):
            hn = _ln1d(params, f"dec.{i}.ln1", x)
            pre = f"dec.{i}.self_attn"
            q = _proj_heads(params, pre, "q", hn, h)
            self.k_self[i][:, :, t] = _proj_heads(params, pre, "k", hn, h)
            self.v_self[i][:, :, t] = _proj_heads(params, pre, "v", hn, h)
            k = self.k_self[i][:, :, : t + 1]
            v = self.v_self[i][:, :, : t + 1]
            scores = np.einsum("bhd,bhtd->bht", q, k) * self.scale
            scores -= scores.max(axis=-1, keepdims=True)
            ez = np.exp(scores)
            attn = ez / ez.sum(axis=-1, keepdims=True)
            ctx = np.einsum("bht,bhtd->bhd", attn, v).reshape(-1, d)
            x = x + ctx @ params[f"{pre}.wo"] + params[f"{pre}.bo"]

            hn = _ln1d(params, f"dec.{i}.ln2", x)
            pre = f"dec.{i}.cross_attn"
            q = _proj_heads(params, pre, "q", hn, h)
            scores = np.einsum("bhd,bhsd->bhs", q, self.k_cross[i]) * self.scale
            scores = scores + self.src_neg
            scores -= scores.max(axis=-1, keepdims=True)
            ez = np.exp(scores)
            attn = ez / ez.sum(axis=-1, keepdims=True)
            ctx = np.einsum("bhs,bhsd->bhd", attn, self.v_cross[i]).reshape(-1, d)
            x = x + ctx @ params[f"{pre}.wo"] + params[f"{pre}.bo"]

            hn = _ln1d(params, f"dec.{i}.ln3", x)
            pre = f"dec.{i}.ffn"
            a = np.maximum(hn @ params[f"{pre}.w1"] + params[f"{pre}.b1"], 0.0)
            x = x + a @ params[f"{pre}.w2"] + params[f"{pre}.b2"]
        x = _ln1d(params, "dec.final_ln", x)
        self.t += 1
        return x @ params[output_embedding_name(cfg)].T


def _source_batch(id_lists, pad_id):
    b = len(id_lists)
    s = max(len(ids) for ids in id_lists)
    src = np.full((b, s), pad_id, dtype=np.int64)
    valid = np.zeros((b, s), dtype=bool)
    for i, ids in enumerate(id_lists):
        src[i, : len(ids)] = ids
        valid[i, : len(ids)] = True
    return src, valid


def greedy_decode(params, cfg, vocab, id_lists, max_decode_len, batch_size=32):
    pad_id, bos_id, eos_id = vocab.pad_id, vocab.bos_id, vocab.eos_id
    outputs = []
    for start in range(0, len(id_lists), batch_size):
        chunk = id_lists[start : start + batch_size]
        src, valid = _source_batch(chunk, pad_id)
        state = _DecodeState(params, cfg, src, valid, max_decode_len)
        b = len(chunk)
        last = np.full(b, bos_id, dtype=np.int64)
        finished = np.zeros(b, dtype=bool)
        rows = [[] for _ in range(b)]
        for _ in range(max_decode_len):
            logits = state.step(last)
            logits[:, pad_id] = NEG_INF
            logits[:, bos_id] = NEG_INF
            nxt = logits.argmax(axis=1)
            nxt = np.where(finished, eos_id, nxt)
            for i in range(b):
                if not finished[i] and nxt[i] != eos_id:
                    rows[i].append(int(nxt[i]))
            finished |= nxt == eos_id
            if finished.all():
                break
            last = nxt
        outputs.extend(rows)
    return outputs


def _log_softmax(logits):
    m = logits.max(axis=-1, keepdims=True)
    z = logits - m
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def beam_decode_one(params, cfg, vocab, src_ids, beam, max_decode_len):
    """Deterministic beam search for one sentence (no length penalty;
    ties break toward the lower flat candidate index)."""
    pad_id, bos_id, eos_id = vocab.pad_id, vocab.bos_id, vocab.eos_id
    src, valid = _source_batch([src_ids] * beam, pad_id)
    state = _DecodeState(params, cfg, src, valid, max_decode_len)
    v_size = cfg.vocab_size
    scores = np.full(beam, NEG_INF, dtype=np.float64)
    scores[0] = 0.0
    tokens = [[] for _ in range(beam)]
    finished = [False] * beam
    last = np.full(beam, bos_id, dtype=np.int64)
    for _ in range(max_decode_len):
        logits = state.step(last)
        logits[:, pad_id] = NEG_INF
        logits[:, bos_id] = NEG_INF
        logp = _log_softmax(logits.astype(np.float64))
        total = scores[:, None] + logp
        for i in range(beam):
            if finished[i]:
                total[i, :] = NEG_INF
                total[i, eos_id] = scores[i]
        flat = total.ravel()
        top = np.argsort(-flat, kind="stable")[:beam]
        parents = top // v_size
        toks = top % v_size
        state.reorder(parents)
        new_tokens = []
        new_finished = []
        for p, tk in zip(parents, toks):
            if finished[p]:
                new_tokens.append(tokens[p])
                new_finished.append(True)
            else:
                new_tokens.append(tokens[p] + ([] if tk == eos_id else [int(tk)]))
                new_finished.append(tk == eos_id)
        tokens = new_tokens
        finished = new_finished
        scores = flat[top]
        if all(finished):
            break
        last = np.where(finished, eos_id, toks).astype(np.int64)
    best = int(np.argmax(scores))
    return tokens[best]


def translate_with_params(params, cfg, vocab, sentences, beam=1, max_decode_len=None):
    """Translate raw sentences with in-memory parameters."""
    if beam < 1:
        raise ConfigError(f"beam must be >= 1, got {beam}")
    cap = max_decode_len if max_decode_len is not None else cfg.max_len
    cap = max(cap, 2)
    eos = vocab.eos_id
    segmented = []
    keep = []
    outputs = [""] * len(sentences)
    for i, s in enumerate(sentences):
        if not s.split():
            continue  # empty input decodes to empty output, no model call
        segmented.append(segment(s, vocab).token_ids + [eos])
        keep.append(i)
    if segmented:
        if beam == 1:
            rows = greedy_decode(params, cfg, vocab, segmented, cap)
        else:
            rows = [
                beam_decode_one(params, cfg, vocab, ids, beam, cap)
                for ids in segmented
            ]
        for i, row in zip(keep, rows):
            outputs[i] = detokenize(row, vocab)
    return outputs


def translate(ckpt, vocab, sentences, beam=1, max_decode_len=None):
    """Translate with a checkpoint. Deterministic given (checkpoint,
    vocabulary, inputs, beam)."""
    cfg = ModelConfig.from_dict(ckpt.metadata["model_config"])
    params = {k: v.astype(np.float32) for k, v in ckpt.tensors.items()}
    return translate_with_params(params, cfg, vocab, sentences, beam, max_decode_len)
