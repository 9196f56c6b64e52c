"""Masked self-attention patch reconstructor in plain numpy.

Every patch position becomes one token.  Visible positions embed their
flattened pixels linearly; masked positions use a shared learned mask
token.  Both receive a positional embedding (initialised to 2-D sin-cos).
A stack of pre-norm transformer blocks follows, and a linear head maps
every token back to ``P*P*C`` pixel values.  Attention keys are restricted
to visible positions, so nothing stored in a masked slot can reach any
output.

Forward and backward passes are written out by hand; :func:`loss_and_grad`
returns the analytic gradient of the masked-position MSE.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

LN_EPS = 1e-5
_GELU_C = math.sqrt(2.0 / math.pi)


@dataclass(frozen=True)
class AttentionConfig:
    dim: int = 64
    heads: int = 4
    blocks: int = 2
    mlp_ratio: int = 2

    def __post_init__(self):
        if self.dim % self.heads:
            raise ValueError(f"embedding dim {self.dim} not divisible by {self.heads} heads")


def sincos_2d(rows: int, cols: int, dim: int) -> np.ndarray:
    """Fixed 2-D sine-cosine position table of shape ``(rows*cols, dim)``."""
    if dim % 4:
        # fall back to a 1-D table for odd sizes
        pos = np.arange(rows * cols, dtype=np.float64)[:, None]
        freq = 1.0 / 10000 ** (np.arange(dim, dtype=np.float64) / dim)
        table = pos * freq
        table[:, 0::2] = np.sin(table[:, 0::2])
        table[:, 1::2] = np.cos(table[:, 1::2])
        return table
    quarter = dim // 4
    omega = 1.0 / 10000 ** (np.arange(quarter, dtype=np.float64) / quarter)
    rr, cc = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
    out_r = rr.reshape(-1, 1) * omega
    out_c = cc.reshape(-1, 1) * omega
    return np.concatenate([np.sin(out_r), np.cos(out_r), np.sin(out_c), np.cos(out_c)], axis=1)


def param_names(cfg: AttentionConfig) -> list[str]:
    """Parameter names in their fixed serialisation order."""
    names = ["embed_w", "embed_b", "pos", "mask_token"]
    for b in range(cfg.blocks):
        names += [
            f"b{b}.ln1_g", f"b{b}.ln1_b",
            f"b{b}.wq", f"b{b}.bq", f"b{b}.wk", f"b{b}.wv", f"b{b}.bv",
            f"b{b}.wo", f"b{b}.bo",
            f"b{b}.ln2_g", f"b{b}.ln2_b",
            f"b{b}.w1", f"b{b}.b1", f"b{b}.w2", f"b{b}.b2",
        ]
    names += ["lnf_g", "lnf_b", "head_w", "head_b"]
    return names


def init_params(cfg: AttentionConfig, n_tokens: int, patch_dim: int, rows: int, cols: int,
                rng: np.random.Generator) -> dict[str, np.ndarray]:
    d, hidden = cfg.dim, cfg.dim * cfg.mlp_ratio

    def xavier(fan_in, fan_out):
        lim = math.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-lim, lim, size=(fan_in, fan_out))

    p = {
        "embed_w": xavier(patch_dim, d),
        "embed_b": np.zeros(d),
        "pos": sincos_2d(rows, cols, d) if rows * cols == n_tokens else rng.normal(0, 0.02, (n_tokens, d)),
        "mask_token": rng.normal(0.0, 0.02, d),
    }
    for b in range(cfg.blocks):
        p[f"b{b}.ln1_g"] = np.ones(d)
        p[f"b{b}.ln1_b"] = np.zeros(d)
        for w in ("q", "k", "v", "o"):
            p[f"b{b}.w{w}"] = xavier(d, d)
            if w != "k":  # a key bias shifts every score of a query equally
                p[f"b{b}.b{w}"] = np.zeros(d)
        p[f"b{b}.ln2_g"] = np.ones(d)
        p[f"b{b}.ln2_b"] = np.zeros(d)
        p[f"b{b}.w1"] = xavier(d, hidden)
        p[f"b{b}.b1"] = np.zeros(hidden)
        p[f"b{b}.w2"] = xavier(hidden, d)
        p[f"b{b}.b2"] = np.zeros(d)
    p["lnf_g"] = np.ones(d)
    p["lnf_b"] = np.zeros(d)
    p["head_w"] = xavier(d, patch_dim)
    p["head_b"] = np.full(patch_dim, 0.5)
    return p


# -- primitives -------------------------------------------------------------

def _ln_fwd(x, g, b):
    mu = x.mean(-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * rstd
    return xhat * g + b, (xhat, rstd)


def _ln_bwd(dy, g, cache):
    xhat, rstd = cache
    axes = tuple(range(dy.ndim - 1))
    dg = (dy * xhat).sum(axes)
    db = dy.sum(axes)
    dxhat = dy * g
    dx = rstd * (dxhat - dxhat.mean(-1, keepdims=True) - xhat * (dxhat * xhat).mean(-1, keepdims=True))
    return dx, dg, db


def _gelu_fwd(u):
    inner = _GELU_C * (u + 0.044715 * u * u * u)  # u**3 hits a slow pow path
    t = np.tanh(inner)
    return 0.5 * u * (1.0 + t), t


def _gelu_bwd(du_out, u, t):
    dinner = _GELU_C * (1.0 + 3 * 0.044715 * u * u)
    return du_out * (0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * dinner)


def _split(x, heads):
    b, n, d = x.shape
    return x.reshape(b, n, heads, d // heads).transpose(0, 2, 1, 3)


def _merge(x):
    b, h, n, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, n, h * dh)


def _sum01(x):
    return x.reshape(-1, x.shape[-1]).sum(0)


def _matmul_w_grad(x, dy):
    return x.reshape(-1, x.shape[-1]).T @ dy.reshape(-1, dy.shape[-1])


# -- model ------------------------------------------------------------------

def forward(params: dict, cfg: AttentionConfig, x: np.ndarray, visible: np.ndarray, keep_cache: bool = False):
    """Predict every token's pixels.

    ``x`` is ``(B, N, D)`` flattened patches, ``visible`` is ``(B, N)`` bool.
    Masked rows of ``x`` are never read.  Returns ``(B, N, D)`` predictions
    (unclamped) and, if requested, the cache for :func:`backward`.
    """
    visible = np.asarray(visible, dtype=bool)
    x = np.where(visible[..., None], x, 0.0)
    heads = cfg.heads
    dh = cfg.dim // heads
    scale = 1.0 / math.sqrt(dh)
    key_mask = visible[:, None, None, :]

    emb = x @ params["embed_w"] + params["embed_b"]
    h = np.where(visible[..., None], emb, params["mask_token"]) + params["pos"]
    caches = []
    for b in range(cfg.blocks):
        pre = f"b{b}."
        a, ln1 = _ln_fwd(h, params[pre + "ln1_g"], params[pre + "ln1_b"])
        q = _split(a @ params[pre + "wq"] + params[pre + "bq"], heads)
        k = _split(a @ params[pre + "wk"], heads)
        v = _split(a @ params[pre + "wv"] + params[pre + "bv"], heads)
        s = (q @ k.transpose(0, 1, 3, 2)) * scale
        s = np.where(key_mask, s, -np.inf)
        s = s - s.max(-1, keepdims=True)
        e = np.exp(s)
        att = e / e.sum(-1, keepdims=True)
        o = _merge(att @ v)
        h = h + o @ params[pre + "wo"] + params[pre + "bo"]
        c, ln2 = _ln_fwd(h, params[pre + "ln2_g"], params[pre + "ln2_b"])
        u = c @ params[pre + "w1"] + params[pre + "b1"]
        g, t = _gelu_fwd(u)
        h = h + g @ params[pre + "w2"] + params[pre + "b2"]
        if keep_cache:
            caches.append((a, ln1, q, k, v, att, o, c, ln2, u, g, t))
    f, lnf = _ln_fwd(h, params["lnf_g"], params["lnf_b"])
    y = f @ params["head_w"] + params["head_b"]
    if not keep_cache:
        return y, None
    return y, {"x": x, "visible": visible, "blocks": caches, "f": f, "lnf": lnf}


def backward(params: dict, cfg: AttentionConfig, dy: np.ndarray, cache: dict) -> dict[str, np.ndarray]:
    heads = cfg.heads
    scale = 1.0 / math.sqrt(cfg.dim // heads)
    grads: dict[str, np.ndarray] = {}

    grads["head_w"] = _matmul_w_grad(cache["f"], dy)
    grads["head_b"] = _sum01(dy)
    df = dy @ params["head_w"].T
    dh, grads["lnf_g"], grads["lnf_b"] = _ln_bwd(df, params["lnf_g"], cache["lnf"])

    for b in reversed(range(cfg.blocks)):
        pre = f"b{b}."
        a, ln1, q, k, v, att, o, c, ln2, u, g, t = cache["blocks"][b]
        # MLP branch
        grads[pre + "w2"] = _matmul_w_grad(g, dh)
        grads[pre + "b2"] = _sum01(dh)
        dg = dh @ params[pre + "w2"].T
        du = _gelu_bwd(dg, u, t)
        grads[pre + "w1"] = _matmul_w_grad(c, du)
        grads[pre + "b1"] = _sum01(du)
        dc = du @ params[pre + "w1"].T
        dx_ln2, grads[pre + "ln2_g"], grads[pre + "ln2_b"] = _ln_bwd(dc, params[pre + "ln2_g"], ln2)
        dh = dh + dx_ln2
        # attention branch
        grads[pre + "wo"] = _matmul_w_grad(o, dh)
        grads[pre + "bo"] = _sum01(dh)
        do = _split(dh @ params[pre + "wo"].T, heads)
        datt = do @ v.transpose(0, 1, 3, 2)
        dv = att.transpose(0, 1, 3, 2) @ do
        ds = att * (datt - (datt * att).sum(-1, keepdims=True)) * scale
        dq = ds @ k
        dk = ds.transpose(0, 1, 3, 2) @ q
        da = np.zeros_like(a)
        for name, dpart in (("q", dq), ("k", dk), ("v", dv)):
            dpart = _merge(dpart)
            grads[pre + "w" + name] = _matmul_w_grad(a, dpart)
            if name != "k":
                grads[pre + "b" + name] = _sum01(dpart)
            da += dpart @ params[pre + "w" + name].T
        dx_ln1, grads[pre + "ln1_g"], grads[pre + "ln1_b"] = _ln_bwd(da, params[pre + "ln1_g"], ln1)
        dh = dh + dx_ln1

    visible = cache["visible"]
    grads["pos"] = dh.sum(0)
    demb = np.where(visible[..., None], dh, 0.0)
    grads["mask_token"] = _sum01(np.where(visible[..., None], 0.0, dh))
    grads["embed_w"] = _matmul_w_grad(cache["x"], demb)
    grads["embed_b"] = _sum01(demb)
    return grads


def masked_mse(y: np.ndarray, target: np.ndarray, loss_mask: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error over positions where ``loss_mask`` is True.

    Returns the loss and its gradient with respect to ``y``.
    """
    w = np.asarray(loss_mask).astype(y.dtype)[..., None]
    denom = max(w.sum(), 1.0) * y.shape[-1]
    diff = (y - target) * w
    return float((diff * diff).sum() / denom), 2.0 * diff / denom


def loss_and_grad(params: dict, cfg: AttentionConfig, x: np.ndarray, visible: np.ndarray,
                  loss_mask: np.ndarray | None = None):
    """Masked-position MSE and its analytic gradient for every parameter."""
    if loss_mask is None:
        loss_mask = ~np.asarray(visible, dtype=bool)
    y, cache = forward(params, cfg, x, visible, keep_cache=True)
    loss, dy = masked_mse(y, x, loss_mask)
    return loss, backward(params, cfg, dy, cache)
