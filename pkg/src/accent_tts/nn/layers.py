"""Layer catalog: fused ops with hand-written backward rules plus composites.

All layers are functions of tensors; parameters live in a :class:`ParamStore`
and are passed in explicitly.
"""
import numpy as np

from .. import kernels
from ..errors import ConfigError, ShapeError
from .tensor import Tensor, _make, as_tensor, concat, matmul, mean, mul, softmax, take_rows

LN_EPS = 1e-5


def linear(x, W, b=None):
    """``x @ W + b`` over the last axis."""
    x = as_tensor(x)
    if x.shape[-1] != W.shape[0] or (b is not None and b.shape != (W.shape[1],)):
        raise ShapeError(
            f"linear: input {x.shape}, weight {W.shape}, bias {None if b is None else b.shape}"
        )
    out = matmul(x, W)
    return out if b is None else out + b


def embedding(table, idx):
    return take_rows(table, idx)


def conv1d(x, K, b=None):
    """Same-padded 1-D convolution over time.

    Parameters
    ----------
    x : Tensor [T, Cin]
    K : Tensor [k, Cin, Cout], k odd
    b : Tensor [Cout] or None
    """
    x = as_tensor(x)
    k, cin, cout = K.shape
    if k % 2 == 0:
        raise ConfigError(f"conv1d needs an odd kernel size, got {k}")
    if x.ndim != 2 or x.shape[1] != cin:
        raise ShapeError(f"conv1d: input {x.shape} incompatible with kernel {K.shape}")
    T = x.shape[0]
    pad = k // 2
    xp = np.pad(x.data, ((pad, pad), (0, 0)))
    cols = np.stack([xp[j:j + T] for j in range(k)], axis=1).reshape(T, k * cin)
    kmat = K.data.reshape(k * cin, cout)
    out = cols @ kmat
    if b is not None:
        out = out + b.data

    def bw(g):
        if K.requires_grad:
            K._accum((cols.T @ g).reshape(K.shape))
        if b is not None and b.requires_grad:
            b._accum(g.sum(axis=0))
        if x.requires_grad:
            dcols = (g @ kmat.T).reshape(T, k, cin)
            dxp = np.zeros_like(xp)
            for j in range(k):
                dxp[j:j + T] += dcols[:, j]
            x._accum(dxp[pad:pad + T])

    parents = (x, K) if b is None else (x, K, b)
    return _make(out, parents, bw)


def layer_norm(x, gamma, beta, eps=LN_EPS):
    x = as_tensor(x)
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = xhat * gamma.data + beta.data

    def bw(g):
        lead = tuple(range(g.ndim - 1))
        if gamma.requires_grad:
            gamma._accum((g * xhat).sum(axis=lead))
        if beta.requires_grad:
            beta._accum(g.sum(axis=lead))
        if x.requires_grad:
            dxh = g * gamma.data
            x._accum(
                inv
                * (
                    dxh
                    - dxh.mean(axis=-1, keepdims=True)
                    - xhat * (dxh * xhat).mean(axis=-1, keepdims=True)
                )
            )

    return _make(out, (x, gamma, beta), bw)


def self_attention(x, n_heads, Wq, Wk, Wv, Wo):
    """Multi-head scaled dot-product self-attention over a [T, d] sequence."""
    d = x.shape[-1]
    if d % n_heads:
        raise ConfigError(f"hidden size {d} not divisible by {n_heads} heads")
    dk = d // n_heads
    q = matmul(x, Wq)
    k = matmul(x, Wk)
    v = matmul(x, Wv)
    scale = 1.0 / np.sqrt(dk)
    heads = []
    for h in range(n_heads):
        cols = slice(h * dk, (h + 1) * dk)
        scores = matmul(q[:, cols], k[:, cols].T) * scale
        heads.append(attention_weights_apply(softmax(scores, axis=-1), v[:, cols]))
    return matmul(concat(heads, axis=-1), Wo)


def attention_weights_apply(weights, values):
    """``weights @ values`` where both sides may carry gradients."""
    def bw(g):
        if weights.requires_grad:
            weights._accum(g @ values.data.T)
        if values.requires_grad:
            values._accum(weights.data.T @ g)

    return _make(weights.data @ values.data, (weights, values), bw)


def gru(x, h0, W, U, b_ih, b_hh):
    """Unidirectional GRU over [T, din]; returns the hidden sequence [T, H].

    r = σ(x W_r + b_ir + h U_r + b_hr), z likewise,
    n = tanh(x W_n + b_in + r ⊙ (h U_n + b_hn)), h' = (1 − z) ⊙ n + z ⊙ h.
    """
    x, h0 = as_tensor(x), as_tensor(h0)
    H = h0.shape[-1]
    if x.ndim != 2 or W.shape != (x.shape[1], 3 * H) or U.shape != (H, 3 * H):
        raise ShapeError(f"gru: input {x.shape}, W {W.shape}, U {U.shape}, h0 {h0.shape}")
    xproj = x.data @ W.data + b_ih.data
    hs, cache = kernels.gru_forward(xproj, U.data, b_hh.data, h0.data)

    def bw(g):
        dxp, dU, db_hh, dh0 = kernels.gru_backward(g, h0.data, hs, cache, U.data)
        if x.requires_grad:
            x._accum(dxp @ W.data.T)
        if W.requires_grad:
            W._accum(x.data.T @ dxp)
        if b_ih.requires_grad:
            b_ih._accum(dxp.sum(axis=0))
        if U.requires_grad:
            U._accum(dU)
        if b_hh.requires_grad:
            b_hh._accum(db_hh)
        if h0.requires_grad:
            h0._accum(dh0)

    return _make(hs, (x, h0, W, U, b_ih, b_hh), bw)


def bigru(x, h0, fwd, bwd):
    """Bidirectional GRU.

    ``fwd``/``bwd`` are ``(W, U, b_ih, b_hh)`` tuples. Returns the [T, 2H]
    output sequence and the final states of both directions (the backward
    direction's final state is the one aligned with frame 0).
    """
    T = x.shape[0]
    hf = gru(x, h0, *fwd)
    rev = np.arange(T - 1, -1, -1)
    hb_rev = gru(take_rows(x, rev), h0, *bwd)
    hb = take_rows(hb_rev, rev)
    return concat([hf, hb], axis=-1), hf[T - 1], hb_rev[T - 1]


def dropout(x, rate, rng):
    """Inverted dropout; identity when ``rng`` is None (evaluation mode) or rate is 0."""
    if rng is None or rate <= 0.0:
        return x
    keep = 1.0 - rate
    mask = (rng.random(x.shape) < keep) / keep
    return mul(x, mask)


def mse_loss(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"mse_loss shape mismatch: {a.shape} vs {b.shape}")
    diff = a - b
    return mean(diff * diff)


def sinusoid_positions(length, dim):
    """Sinusoidal positional table; even columns sin, odd columns cos."""
    pos = np.arange(length, dtype=np.float64)[:, None]
    i = np.arange(dim)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / dim)
    table = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    return Tensor(table)
