"""Small transformer encoder-decoder in numpy with hand-written backprop.

Pre-norm residual layout, sinusoidal positions, shared embeddings tied to
the output projection, label smoothing 0.1. Parameters live in a flat
``{name: ndarray}`` dict; every parameter belongs to exactly one of the
four components used by the freezing analysis:

* ``embeddings`` - the (shared) embedding matrix / matrices
* ``attention``  - all multi-head attention projections, encoder and
                   decoder (self and cross)
* ``encoder``    - encoder feed-forward sublayers and layer norms
* ``decoder``    - decoder feed-forward sublayers and layer norms

The code is dtype-generic: float32 in production, float64 under the
gradient-check tests. Reductions route through :mod:`recnmt.kernels`.
"""

import math
from dataclasses import dataclass, asdict

import numpy as np

from . import kernels
from .errors import ConfigError

LABEL_SMOOTHING = 0.1
LN_EPS = 1e-5
NEG_INF = -1e9

COMPONENTS = ("embeddings", "encoder", "decoder", "attention")


@dataclass
class ModelConfig:
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 2
    ffn_dim: int = 256
    vocab_size: int = 512
    max_len: int = 512
    dropout: float = 0.1
    share_embeddings: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ConfigError(
                f"d_model {self.d_model} not divisible by n_heads {self.n_heads}"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def component_of(name):
    if name.startswith("embedding"):
        return "embeddings"
    if ".attn." in name or ".self_attn." in name or ".cross_attn." in name:
        return "attention"
    if name.startswith("enc."):
        return "encoder"
    if name.startswith("dec."):
        return "decoder"
    raise ConfigError(f"parameter {name!r} belongs to no component")


def validate_freeze(frozen):
    frozen = frozenset(frozen)
    unknown = frozen - set(COMPONENTS)
    if unknown:
        raise ConfigError(f"unknown freeze components: {sorted(unknown)}")
    return frozen


def frozen_parameter_names(params, frozen):
    frozen = validate_freeze(frozen)
    return {n for n in params if component_of(n) in frozen}


# ---------------------------------------------------------------------------
# initialization
# ---------------------------------------------------------------------------


def _xavier(rng, fan_in, fan_out, dtype):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype)


def _attn_block(rng, prefix, d, dtype, out):
    for w in ("wq", "wk", "wv", "wo"):
        out[f"{prefix}.{w}"] = _xavier(rng, d, d, dtype)
    for b in ("bq", "bk", "bv", "bo"):
        out[f"{prefix}.{b}"] = np.zeros(d, dtype=dtype)


def _ln_block(prefix, d, dtype, out):
    out[f"{prefix}.g"] = np.ones(d, dtype=dtype)
    out[f"{prefix}.b"] = np.zeros(d, dtype=dtype)


def _ffn_block(rng, prefix, d, f, dtype, out):
    out[f"{prefix}.w1"] = _xavier(rng, d, f, dtype)
    out[f"{prefix}.b1"] = np.zeros(f, dtype=dtype)
    out[f"{prefix}.w2"] = _xavier(rng, f, d, dtype)
    out[f"{prefix}.b2"] = np.zeros(d, dtype=dtype)


def init_params(cfg, dtype=np.float32):
    rng = np.random.default_rng(cfg.seed)
    d = cfg.d_model
    params = {}
    params["embedding"] = (rng.standard_normal((cfg.vocab_size, d)) * d ** -0.5).astype(dtype)
    if not cfg.share_embeddings:
        params["embedding_dec"] = (
            rng.standard_normal((cfg.vocab_size, d)) * d ** -0.5
        ).astype(dtype)
    for i in range(cfg.n_layers):
        _ln_block(f"enc.{i}.ln1", d, dtype, params)
        _attn_block(rng, f"enc.{i}.attn", d, dtype, params)
        _ln_block(f"enc.{i}.ln2", d, dtype, params)
        _ffn_block(rng, f"enc.{i}.ffn", d, cfg.ffn_dim, dtype, params)
    _ln_block("enc.final_ln", d, dtype, params)
    for i in range(cfg.n_layers):
        _ln_block(f"dec.{i}.ln1", d, dtype, params)
        _attn_block(rng, f"dec.{i}.self_attn", d, dtype, params)
        _ln_block(f"dec.{i}.ln2", d, dtype, params)
        _attn_block(rng, f"dec.{i}.cross_attn", d, dtype, params)
        _ln_block(f"dec.{i}.ln3", d, dtype, params)
        _ffn_block(rng, f"dec.{i}.ffn", d, cfg.ffn_dim, dtype, params)
    _ln_block("dec.final_ln", d, dtype, params)
    return params


# ---------------------------------------------------------------------------
# building blocks (each *_fwd returns (output, cache) for the matching *_bwd)
# ---------------------------------------------------------------------------


def sinusoidal_positions(n, d, dtype):
    pos = np.arange(n, dtype=np.float64)[:, None]
    i = np.arange(d, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * np.floor(i / 2.0) / d)
    pe = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    return pe.astype(dtype)


def _dropout_fwd(x, rate, rng):
    if rate <= 0.0 or rng is None:
        return x, None
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return x * keep, keep


def _dropout_bwd(d, keep):
    return d if keep is None else d * keep


def _ln_fwd(params, prefix, x):
    b, t, d = x.shape
    y, xhat, rstd = kernels.layer_norm_fwd(
        np.ascontiguousarray(x.reshape(b * t, d)),
        params[f"{prefix}.g"], params[f"{prefix}.b"], LN_EPS,
    )
    return y.reshape(b, t, d), (xhat, rstd, x.shape)


def _ln_bwd(params, grads, prefix, dy, cache):
    xhat, rstd, shape = cache
    b, t, d = shape
    dx, dg, db = kernels.layer_norm_bwd(
        np.ascontiguousarray(dy.reshape(b * t, d)), xhat, rstd, params[f"{prefix}.g"]
    )
    grads[f"{prefix}.g"] += dg
    grads[f"{prefix}.b"] += db
    return dx.reshape(shape)


def _linear_fwd(params, w, b, x2):
    return x2 @ params[w] + params[b]


def _linear_bwd(params, grads, w, b, x2, dy2):
    grads[w] += x2.T @ dy2
    grads[b] += dy2.sum(axis=0)
    return dy2 @ params[w].T


def _split_heads(x, h):
    b, t, d = x.shape
    return x.reshape(b, t, h, d // h).transpose(0, 2, 1, 3)


def _merge_heads(x):
    b, h, t, dk = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, t, h * dk)


def mha_fwd(params, prefix, q_in, kv_in, add_mask, n_heads, drop_rate, rng):
    """Multi-head attention. add_mask is additive (0 / NEG_INF), broadcast
    against scores of shape (batch, heads, Tq, Tk)."""
    b, tq, d = q_in.shape
    tk = kv_in.shape[1]
    q2 = q_in.reshape(b * tq, d)
    kv2 = kv_in.reshape(b * tk, d)
    q = _split_heads(_linear_fwd(params, f"{prefix}.wq", f"{prefix}.bq", q2).reshape(b, tq, d), n_heads)
    k = _split_heads(_linear_fwd(params, f"{prefix}.wk", f"{prefix}.bk", kv2).reshape(b, tk, d), n_heads)
    v = _split_heads(_linear_fwd(params, f"{prefix}.wv", f"{prefix}.bv", kv2).reshape(b, tk, d), n_heads)
    scale = 1.0 / math.sqrt(d // n_heads)
    scores = np.matmul(q, k.swapaxes(-1, -2)) * scale
    if add_mask is not None:
        scores = scores + add_mask
    scores -= scores.max(axis=-1, keepdims=True)
    ez = np.exp(scores)
    attn = ez / ez.sum(axis=-1, keepdims=True)
    dropped, keep = _dropout_fwd(attn, drop_rate, rng)
    ctx = np.matmul(dropped, v)
    merged = _merge_heads(ctx)
    out = _linear_fwd(params, f"{prefix}.wo", f"{prefix}.bo", merged.reshape(b * tq, d))
    cache = (q_in, kv_in, q, k, v, attn, keep, merged, scale)
    return out.reshape(b, tq, d), cache


def mha_bwd(params, grads, prefix, dout, cache, n_heads):
    q_in, kv_in, q, k, v, attn, keep, merged, scale = cache
    b, tq, d = q_in.shape
    tk = kv_in.shape[1]
    dmerged = _linear_bwd(
        params, grads, f"{prefix}.wo", f"{prefix}.bo",
        merged.reshape(b * tq, d), dout.reshape(b * tq, d),
    )
    dctx = _split_heads(dmerged.reshape(b, tq, d), n_heads)
    ddropped = np.matmul(dctx, v.swapaxes(-1, -2))
    dropped = attn if keep is None else attn * keep
    dv = np.matmul(dropped.swapaxes(-1, -2), dctx)
    dattn = _dropout_bwd(ddropped, keep)
    ds = attn * (dattn - (dattn * attn).sum(axis=-1, keepdims=True))
    ds *= scale
    dq = np.matmul(ds, k)
    dk = np.matmul(ds.swapaxes(-1, -2), q)
    dq_in = _linear_bwd(
        params, grads, f"{prefix}.wq", f"{prefix}.bq",
        q_in.reshape(b * tq, d), _merge_heads(dq).reshape(b * tq, d),
    ).reshape(b, tq, d)
    dkv2 = _linear_bwd(
        params, grads, f"{prefix}.wk", f"{prefix}.bk",
        kv_in.reshape(b * tk, d), _merge_heads(dk).reshape(b * tk, d),
    )
    dkv2 += _linear_bwd(
        params, grads, f"{prefix}.wv", f"{prefix}.bv",
        kv_in.reshape(b * tk, d), _merge_heads(dv).reshape(b * tk, d),
    )
    return dq_in, dkv2.reshape(b, tk, d)


def ffn_fwd(params, prefix, x):
    b, t, d = x.shape
    x2 = x.reshape(b * t, d)
    h1 = _linear_fwd(params, f"{prefix}.w1", f"{prefix}.b1", x2)
    a = np.maximum(h1, 0.0)
    out = _linear_fwd(params, f"{prefix}.w2", f"{prefix}.b2", a)
    return out.reshape(b, t, d), (x2, h1, a, x.shape)


def ffn_bwd(params, grads, prefix, dout, cache):
    x2, h1, a, shape = cache
    b, t, d = shape
    da = _linear_bwd(params, grads, f"{prefix}.w2", f"{prefix}.b2", a, dout.reshape(b * t, -1))
    dh1 = da * (h1 > 0)
    dx2 = _linear_bwd(params, grads, f"{prefix}.w1", f"{prefix}.b1", x2, dh1)
    return dx2.reshape(shape)


def _embed_fwd(params, cfg, ids, which, rng):
    emb_name = "embedding"
    if which == "dec" and not cfg.share_embeddings:
        emb_name = "embedding_dec"
    emb = params[emb_name]
    scale = math.sqrt(cfg.d_model)
    x = emb[ids] * np.asarray(scale, dtype=emb.dtype)
    x = x + sinusoidal_positions(ids.shape[1], cfg.d_model, emb.dtype)[None, :, :]
    x, keep = _dropout_fwd(x, cfg.dropout, rng)
    return x, (emb_name, ids, keep, scale)


def _embed_bwd(grads, dx, cache):
    emb_name, ids, keep, scale = cache
    dx = _dropout_bwd(dx, keep)
    flat = (dx * scale).reshape(-1, dx.shape[-1])
    np.add.at(grads[emb_name], ids.ravel(), flat)


def _key_mask(valid, dtype):
    """(B, Tk) boolean validity -> additive (B, 1, 1, Tk) mask."""
    m = np.zeros(valid.shape, dtype=dtype)
    m[~valid] = NEG_INF
    return m[:, None, None, :]


def causal_mask(t, dtype):
    m = np.triu(np.full((t, t), NEG_INF, dtype=dtype), k=1)
    return m[None, None, :, :]


# ---------------------------------------------------------------------------
# full forward/backward for teacher-forced training
# ---------------------------------------------------------------------------


def encoder_fwd(params, cfg, src_ids, src_valid, rng):
    x, emb_cache = _embed_fwd(params, cfg, src_ids, "enc", rng)
    mask = _key_mask(src_valid, x.dtype)
    caches = []
    for i in range(cfg.n_layers):
        hn, c_ln1 = _ln_fwd(params, f"enc.{i}.ln1", x)
        a, c_attn = mha_fwd(params, f"enc.{i}.attn", hn, hn, mask, cfg.n_heads, cfg.dropout, rng)
        a, k1 = _dropout_fwd(a, cfg.dropout, rng)
        x = x + a
        hn, c_ln2 = _ln_fwd(params, f"enc.{i}.ln2", x)
        f, c_ffn = ffn_fwd(params, f"enc.{i}.ffn", hn)
        f, k2 = _dropout_fwd(f, cfg.dropout, rng)
        x = x + f
        caches.append((c_ln1, c_attn, k1, c_ln2, c_ffn, k2))
    out, c_final = _ln_fwd(params, "enc.final_ln", x)
    return out, (emb_cache, mask, caches, c_final)


def encoder_bwd(params, grads, cfg, dout, cache):
    emb_cache, mask, caches, c_final = cache
    dx = _ln_bwd(params, grads, "enc.final_ln", dout, c_final)
    for i in reversed(range(cfg.n_layers)):
        c_ln1, c_attn, k1, c_ln2, c_ffn, k2 = caches[i]
        df = _dropout_bwd(dx, k2)
        dhn = ffn_bwd(params, grads, f"enc.{i}.ffn", df, c_ffn)
        dx = dx + _ln_bwd(params, grads, f"enc.{i}.ln2", dhn, c_ln2)
        da = _dropout_bwd(dx, k1)
        dq, dkv = mha_bwd(params, grads, f"enc.{i}.attn", da, c_attn, cfg.n_heads)
        dx = dx + _ln_bwd(params, grads, f"enc.{i}.ln1", dq + dkv, c_ln1)
    _embed_bwd(grads, dx, emb_cache)


def decoder_fwd(params, cfg, tgt_in, tgt_valid, enc_out, src_valid, rng):
    y, emb_cache = _embed_fwd(params, cfg, tgt_in, "dec", rng)
    t = tgt_in.shape[1]
    self_mask = causal_mask(t, y.dtype) + _key_mask(tgt_valid, y.dtype)
    cross_mask = _key_mask(src_valid, y.dtype)
    caches = []
    for i in range(cfg.n_layers):
        hn, c_ln1 = _ln_fwd(params, f"dec.{i}.ln1", y)
        a, c_self = mha_fwd(params, f"dec.{i}.self_attn", hn, hn, self_mask, cfg.n_heads, cfg.dropout, rng)
        a, k1 = _dropout_fwd(a, cfg.dropout, rng)
        y = y + a
        hn, c_ln2 = _ln_fwd(params, f"dec.{i}.ln2", y)
        a, c_cross = mha_fwd(params, f"dec.{i}.cross_attn", hn, enc_out, cross_mask, cfg.n_heads, cfg.dropout, rng)
        a, k2 = _dropout_fwd(a, cfg.dropout, rng)
        y = y + a
        hn, c_ln3 = _ln_fwd(params, f"dec.{i}.ln3", y)
        f, c_ffn = ffn_fwd(params, f"dec.{i}.ffn", hn)
        f, k3 = _dropout_fwd(f, cfg.dropout, rng)
        y = y + f
        caches.append((c_ln1, c_self, k1, c_ln2, c_cross, k2, c_ln3, c_ffn, k3))
    out, c_final = _ln_fwd(params, "dec.final_ln", y)
    return out, (emb_cache, caches, c_final)


def decoder_bwd(params, grads, cfg, dout, cache):
    """Returns the gradient w.r.t. enc_out accumulated over cross-attention."""
    emb_cache, caches, c_final = cache
    dy = _ln_bwd(params, grads, "dec.final_ln", dout, c_final)
    denc = None
    for i in reversed(range(cfg.n_layers)):
        c_ln1, c_self, k1, c_ln2, c_cross, k2, c_ln3, c_ffn, k3 = caches[i]
        df = _dropout_bwd(dy, k3)
        dhn = ffn_bwd(params, grads, f"dec.{i}.ffn", df, c_ffn)
        dy = dy + _ln_bwd(params, grads, f"dec.{i}.ln3", dhn, c_ln3)
        da = _dropout_bwd(dy, k2)
        dq, dkv = mha_bwd(params, grads, f"dec.{i}.cross_attn", da, c_cross, cfg.n_heads)
        denc = dkv if denc is None else denc + dkv
        dy = dy + _ln_bwd(params, grads, f"dec.{i}.ln2", dq, c_ln2)
        da = _dropout_bwd(dy, k1)
        dq, dkv = mha_bwd(params, grads, f"dec.{i}.self_attn", da, c_self, cfg.n_heads)
        dy = dy + _ln_bwd(params, grads, f"dec.{i}.ln1", dq + dkv, c_ln1)
    _embed_bwd(grads, dy, emb_cache)
    return denc


def output_embedding_name(cfg):
    return "embedding" if cfg.share_embeddings else "embedding_dec"


def loss_and_grads(params, cfg, batch, rng=None, compute_grads=True,
                   smoothing=LABEL_SMOOTHING):
    """Teacher-forced label-smoothed cross entropy over one batch.

    ``batch`` carries src_ids, src_valid, tgt_in, tgt_out, tgt_valid.
    Returns (loss, metrics, grads); grads is None when compute_grads is
    False. Loss is the mean over non-padding target tokens.
    """
    src_ids, src_valid = batch["src_ids"], batch["src_valid"]
    tgt_in, tgt_out, tgt_valid = batch["tgt_in"], batch["tgt_out"], batch["tgt_valid"]
    emb = params["embedding"]
    if emb.shape[0] != cfg.vocab_size:
        raise ConfigError(
            f"embedding rows {emb.shape[0]} != configured vocab_size {cfg.vocab_size}"
        )

    enc_out, enc_cache = encoder_fwd(params, cfg, src_ids, src_valid, rng)
    dec_out, dec_cache = decoder_fwd(params, cfg, tgt_in, tgt_valid, enc_out, src_valid, rng)

    b, t, d = dec_out.shape
    dec2 = np.ascontiguousarray(dec_out.reshape(b * t, d))
    out_emb = params[output_embedding_name(cfg)]
    logits = dec2 @ out_emb.T
    targets = np.ascontiguousarray(tgt_out.reshape(-1).astype(np.int64))
    mask = np.ascontiguousarray(tgt_valid.reshape(-1).astype(dec2.dtype))
    n_tokens = float(mask.sum())
    if n_tokens == 0:
        raise ConfigError("batch contains no target tokens")

    loss_sum, dlogits = kernels.softmax_xent(
        np.ascontiguousarray(logits), targets, mask, smoothing
    )
    loss = loss_sum / n_tokens

    pred = logits.argmax(axis=1)
    accuracy = float(((pred == targets) * mask).sum() / n_tokens)
    metrics = {"accuracy": accuracy, "n_tokens": int(n_tokens)}

    if not compute_grads:
        return loss, metrics, None

    grads = {k: np.zeros_like(v) for k, v in params.items()}
    dlogits /= n_tokens
    ddec2 = dlogits @ out_emb
    grads[output_embedding_name(cfg)] += dlogits.T @ dec2
    denc = decoder_bwd(params, grads, cfg, ddec2.reshape(b, t, d), dec_cache)
    encoder_bwd(params, grads, cfg, denc, enc_cache)
    return loss, metrics, grads
