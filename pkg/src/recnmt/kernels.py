"""Hot numeric kernels, each with a numba ``@njit`` and a pure-numpy twin.

The active implementation is picked at import time from
``RECNMT_BACKEND`` (see :mod:`recnmt._backend`). Both twins of a kernel
compute the same quantity; ``benchmarks/bench_kernels.py`` compares their
speed and ``tests/test_kernels.py`` pins their numerical agreement.

Matrix-multiply heavy work (attention, projections) stays in numpy/BLAS,
where numba has nothing to add; the kernels here are the fusable
elementwise/reduction loops that otherwise burn time in temporaries.
"""

import math

import numpy as np

from ._backend import HAVE_NUMBA, NUMBA_ENABLED

# ---------------------------------------------------------------------------
# pure-numpy implementations
# ---------------------------------------------------------------------------


def layer_norm_fwd_np(x, gain, bias, eps):
    """Normalize rows of (n, d) x. Returns y plus (xhat, rstd) for backward."""
    mean = x.mean(axis=1, keepdims=True)
    xc = x - mean
    var = np.mean(xc * xc, axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    return xhat * gain + bias, xhat, rstd[:, 0]


def layer_norm_bwd_np(dy, xhat, rstd, gain):
    dgain = (dy * xhat).sum(axis=0)
    dbias = dy.sum(axis=0)
    dxhat = dy * gain
    m1 = dxhat.mean(axis=1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=1, keepdims=True)
    dx = (dxhat - m1 - xhat * m2) * rstd[:, None]
    return dx, dgain, dbias


def softmax_xent_np(logits, targets, mask, smoothing):
    """Label-smoothed cross entropy, fused with its gradient.

    Returns (loss_sum, dlogits) where loss_sum is summed over rows with
    mask == 1 and dlogits is the gradient of that sum.
    """
    n, v = logits.shape
    m = logits.max(axis=1, keepdims=True)
    z = logits - m
    ez = np.exp(z)
    se = ez.sum(axis=1, keepdims=True)
    logp = z - np.log(se)
    conf = 1.0 - smoothing
    off = smoothing / (v - 1)
    rows = np.arange(n)
    lp_t = logp[rows, targets]
    loss_rows = -(conf * lp_t + off * (logp.sum(axis=1) - lp_t))
    grad = ez / se
    grad -= off
    grad[rows, targets] -= conf - off
    grad *= mask[:, None]
    return float((loss_rows * mask).sum()), grad


def adam_update_np(p, g, m, v, lr, beta1, beta2, eps, bc1, bc2):
    """One fused Adam step, in place on 1-d views p/m/v."""
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * (g * g)
    p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


def levenshtein_np(a, b):
    """Edit distance between int code arrays, vectorized row updates."""
    nb = b.size
    if nb == 0:
        return int(a.size)
    prev = np.arange(nb + 1, dtype=np.int64)
    idx = np.arange(nb + 1, dtype=np.int64)
    for i in range(a.size):
        row = np.empty(nb + 1, dtype=np.int64)
        row[0] = i + 1
        np.minimum(prev[:-1] + (b != a[i]), prev[1:] + 1, out=row[1:])
        # solve row[j] = min_k<=j (row[k] + j - k) via a prefix minimum
        tmp = row - idx
        np.minimum.accumulate(tmp, out=tmp)
        row = tmp + idx
        prev = row
    return int(prev[nb])


def _bleu_vec(sums, smoothing):
    """Corpus BLEU for each row of an (s, 10) sufficient-statistics matrix.

    Columns: clipped matches for n=1..4, totals for n=1..4, hyp_len, ref_len.
    Orders with zero total are skipped (only possible for very short
    hypotheses); with smoothing, add-one is applied to orders n >= 2.
    """
    sums = sums.astype(np.float64)
    match = sums[:, 0:4]
    total = sums[:, 4:8]
    hyp_len = sums[:, 8]
    ref_len = sums[:, 9]
    if smoothing:
        match = match.copy()
        total = total.copy()
        match[:, 1:] += 1.0
        total[:, 1:] += 1.0
    included = total > 0
    n_inc = included.sum(axis=1)
    zero = (~included.any(axis=1)) | ((match == 0) & included).any(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        logp = np.where(included & (match > 0), np.log(match / np.maximum(total, 1e-300)), 0.0)
    gm = np.exp(logp.sum(axis=1) / np.maximum(n_inc, 1))
    bp = np.where(
        hyp_len >= ref_len, 1.0, np.exp(1.0 - ref_len / np.maximum(hyp_len, 1e-300))
    )
    score = 100.0 * bp * gm
    score[zero] = 0.0
    score[hyp_len == 0] = 0.0
    return score


def bootstrap_scores_np(stats_a, stats_b, idx, smoothing):
    """Per-resample corpus BLEU of two systems over shared index draws."""
    sa = stats_a[idx].sum(axis=1)
    sb = stats_b[idx].sum(axis=1)
    return _bleu_vec(sa, smoothing), _bleu_vec(sb, smoothing)


NUMPY_KERNELS = {
    "layer_norm_fwd": layer_norm_fwd_np,
    "layer_norm_bwd": layer_norm_bwd_np,
    "softmax_xent": softmax_xent_np,
    "adam_update": adam_update_np,
    "levenshtein": levenshtein_np,
    "bootstrap_scores": bootstrap_scores_np,
}

# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

NUMBA_KERNELS = {}

if HAVE_NUMBA:
    from numba import njit

    @njit(cache=True)
    def layer_norm_fwd_nb(x, gain, bias, eps):
        n, d = x.shape
        y = np.empty_like(x)
        xhat = np.empty_like(x)
        rstd = np.empty(n, dtype=x.dtype)
        for i in range(n):
            mean = 0.0
            for j in range(d):
                mean += x[i, j]
            mean /= d
            var = 0.0
            for j in range(d):
                c = x[i, j] - mean
                var += c * c
            var /= d
            r = 1.0 / math.sqrt(var + eps)
            rstd[i] = r
            for j in range(d):
                h = (x[i, j] - mean) * r
                xhat[i, j] = h
                y[i, j] = h * gain[j] + bias[j]
        return y, xhat, rstd

    @njit(cache=True)
    def layer_norm_bwd_nb(dy, xhat, rstd, gain):
        n, d = dy.shape
        dx = np.empty_like(dy)
        dgain = np.zeros(d, dtype=dy.dtype)
        dbias = np.zeros(d, dtype=dy.dtype)
        for i in range(n):
            m1 = 0.0
            m2 = 0.0
            for j in range(d):
                h = dy[i, j] * gain[j]
                m1 += h
                m2 += h * xhat[i, j]
                dgain[j] += dy[i, j] * xhat[i, j]
                dbias[j] += dy[i, j]
            m1 /= d
            m2 /= d
            r = rstd[i]
            for j in range(d):
                dx[i, j] = (dy[i, j] * gain[j] - m1 - xhat[i, j] * m2) * r
        return dx, dgain, dbias

    @njit(cache=True)
    def softmax_xent_nb(logits, targets, mask, smoothing):
        n, v = logits.shape
        grad = np.empty_like(logits)
        conf = 1.0 - smoothing
        off = smoothing / (v - 1)
        total = 0.0
        for i in range(n):
            m = logits[i, 0]
            for j in range(1, v):
                if logits[i, j] > m:
                    m = logits[i, j]
            se = 0.0
            for j in range(v):
                se += np.exp(logits[i, j] - m)
            lse = np.log(se) + m
            lsum = 0.0
            for j in range(v):
                lsum += logits[i, j] - lse
            t = targets[i]
            lp_t = logits[i, t] - lse
            total += -(conf * lp_t + off * (lsum - lp_t)) * mask[i]
            w = mask[i]
            for j in range(v):
                p = np.exp(logits[i, j] - lse)
                grad[i, j] = (p - off) * w
            grad[i, t] -= (conf - off) * w
        return total, grad

    @njit(cache=True)
    def adam_update_nb(p, g, m, v, lr, beta1, beta2, eps, bc1, bc2):
        for i in range(p.size):
            mi = beta1 * m[i] + (1.0 - beta1) * g[i]
            vi = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i]
            m[i] = mi
            v[i] = vi
            p[i] -= lr * (mi / bc1) / (math.sqrt(vi / bc2) + eps)

    @njit(cache=True)
    def levenshtein_nb(a, b):
        na, nb = a.size, b.size
        if nb == 0:
            return na
        prev = np.arange(nb + 1).astype(np.int64)
        cur = np.empty(nb + 1, dtype=np.int64)
        for i in range(na):
            cur[0] = i + 1
            for j in range(1, nb + 1):
                cost = 0 if a[i] == b[j - 1] else 1
                best = prev[j - 1] + cost
                if prev[j] + 1 < best:
                    best = prev[j] + 1
                if cur[j - 1] + 1 < best:
                    best = cur[j - 1] + 1
                cur[j] = best
            prev, cur = cur, prev
        return int(prev[nb])

    @njit(cache=True)
    def _bleu_from_sums_nb(match, total, hyp_len, ref_len, smoothing):
        if hyp_len == 0:
            return 0.0
        logp_sum = 0.0
        n_inc = 0
        for k in range(4):
            mt = float(match[k])
            tt = float(total[k])
            if smoothing and k >= 1:
                mt += 1.0
                tt += 1.0
            if tt <= 0.0:
                continue
            if mt <= 0.0:
                return 0.0
            logp_sum += np.log(mt / tt)
            n_inc += 1
        if n_inc == 0:
            return 0.0
        gm = np.exp(logp_sum / n_inc)
        if hyp_len >= ref_len:
            bp = 1.0
        else:
            bp = np.exp(1.0 - ref_len / hyp_len)
        return 100.0 * bp * gm

    @njit(cache=True)
    def bootstrap_scores_nb(stats_a, stats_b, idx, smoothing):
        s, l = idx.shape
        scores_a = np.empty(s, dtype=np.float64)
        scores_b = np.empty(s, dtype=np.float64)
        sum_a = np.empty(10, dtype=np.int64)
        sum_b = np.empty(10, dtype=np.int64)
        for si in range(s):
            sum_a[:] = 0
            sum_b[:] = 0
            for li in range(l):
                row = idx[si, li]
                for c in range(10):
                    sum_a[c] += stats_a[row, c]
                    sum_b[c] += stats_b[row, c]
            scores_a[si] = _bleu_from_sums_nb(
                sum_a[0:4], sum_a[4:8], float(sum_a[8]), float(sum_a[9]), smoothing
            )
            scores_b[si] = _bleu_from_sums_nb(
                sum_b[0:4], sum_b[4:8], float(sum_b[8]), float(sum_b[9]), smoothing
            )
        return scores_a, scores_b

    NUMBA_KERNELS = {
        "layer_norm_fwd": layer_norm_fwd_nb,
        "layer_norm_bwd": layer_norm_bwd_nb,
        "softmax_xent": softmax_xent_nb,
        "adam_update": adam_update_nb,
        "levenshtein": levenshtein_nb,
        "bootstrap_scores": bootstrap_scores_nb,
    }

# ---------------------------------------------------------------------------

ACTIVE_KERNELS = NUMBA_KERNELS if NUMBA_ENABLED else NUMPY_KERNELS

layer_norm_fwd = ACTIVE_KERNELS["layer_norm_fwd"]
layer_norm_bwd = ACTIVE_KERNELS["layer_norm_bwd"]
softmax_xent = ACTIVE_KERNELS["softmax_xent"]
adam_update = ACTIVE_KERNELS["adam_update"]
levenshtein = ACTIVE_KERNELS["levenshtein"]
bootstrap_scores = ACTIVE_KERNELS["bootstrap_scores"]
