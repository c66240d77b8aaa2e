"""Independent numpy reference implementations used as test oracles.

Everything here is written directly from the math, without calling into
the package's ops, so the two sides of each comparison stay independent.
"""

import math

import numpy as np
from scipy.special import erf


def softmax_np(x, axis=-1):
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def layer_norm_np(x, gamma, beta, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * gamma + beta


def gelu_np(x):
    return 0.5 * x * (1.0 + erf(x / math.sqrt(2.0)))


def linear_np(x, w, b):
    return x @ w + b


def dense_attention_np(tokens, qkv_w, qkv_b, proj_w, proj_b, bias, heads):
    """Naive per-window, per-head attention evaluated with plain loops.

    tokens: [nWin, T, D]; bias: [heads, T, T] added to pre-softmax scores.
    """
    nwin, t, d = tokens.shape
    dk = d // heads
    out = np.zeros_like(tokens)
    for wi in range(nwin):
        qkv = tokens[wi] @ qkv_w + qkv_b  # [T, 3D]
        q, k, v = qkv[:, :d], qkv[:, d:2 * d], qkv[:, 2 * d:]
        merged = np.zeros((t, d), dtype=tokens.dtype)
        for h in range(heads):
            qs = q[:, h * dk:(h + 1) * dk]
            ks = k[:, h * dk:(h + 1) * dk]
            vs = v[:, h * dk:(h + 1) * dk]
            scores = qs @ ks.T / math.sqrt(dk) + bias[h]
            attn = softmax_np(scores, axis=-1)
            merged[:, h * dk:(h + 1) * dk] = attn @ vs
        out[wi] = merged @ proj_w + proj_b
    return out


def conv2d_np(x, w, b, stride=1, padding=0):
    """Loop-based cross-correlation; x [B,C,H,W], w [O,C,kh,kw]."""
    bsz, c, h, ww = x.shape
    o, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (ww + 2 * padding - kw) // stride + 1
    out = np.zeros((bsz, o, oh, ow), dtype=x.dtype)
    for bi in range(bsz):
        for oi in range(o):
            for r in range(oh):
                for cc in range(ow):
                    patch = xp[bi, :, r * stride:r * stride + kh, cc * stride:cc * stride + kw]
                    out[bi, oi, r, cc] = np.sum(patch * w[oi]) + b[oi]
    return out


def stb_np(tokens, p, heads, window, eps=1e-5):
    """Step-by-step block oracle composing the five sub-ops independently."""
    from drt.attention import relative_position_index

    idx = relative_position_index(window)
    table = p.attn.bias_table.data
    bias = table[idx.reshape(-1)].reshape(window * window, window * window, heads)
    bias = bias.transpose(2, 0, 1)
    h = layer_norm_np(tokens, p.ln1_gamma.data, p.ln1_beta.data, eps)
    y = dense_attention_np(
        h, p.attn.qkv_weight.data, p.attn.qkv_bias.data,
        p.attn.proj_weight.data, p.attn.proj_bias.data, bias, heads,
    ) + tokens
    h2 = layer_norm_np(y, p.ln2_gamma.data, p.ln2_beta.data, eps)
    h2 = gelu_np(linear_np(h2, p.mlp_w1.data, p.mlp_b1.data))
    return linear_np(h2, p.mlp_w2.data, p.mlp_b2.data) + y


def psnr_np(a, b, peak=1.0):
    mse = np.mean((np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)) ** 2)
    return 10.0 * np.log10(peak * peak / mse)


def ssim_np(a, b, peak=1.0, window=11, sigma=1.5, k1=0.01, k2=0.03):
    """Sliding-window SSIM with explicit loops over valid positions."""
    r = window // 2
    xs = np.arange(-r, r + 1, dtype=np.float64)
    g = np.exp(-(xs * xs) / (2 * sigma * sigma))
    kern = np.outer(g, g)
    kern /= kern.sum()
    c1 = (k1 * peak) ** 2
    c2 = (k2 * peak) ** 2
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    vals = []
    for ch in range(a.shape[0]):
        x, y = a[ch], b[ch]
        h, w = x.shape
        total = []
        for i in range(h - window + 1):
            for j in range(w - window + 1):
                px = x[i:i + window, j:j + window]
                py = y[i:i + window, j:j + window]
                mx = np.sum(px * kern)
                my = np.sum(py * kern)
                vx = np.sum(px * px * kern) - mx * mx
                vy = np.sum(py * py * kern) - my * my
                cov = np.sum(px * py * kern) - mx * my
                total.append(
                    ((2 * mx * my + c1) * (2 * cov + c2))
                    / ((mx * mx + my * my + c1) * (vx + vy + c2))
                )
        vals.append(np.mean(total))
    return float(np.mean(vals))


def make_clean_image(seed, height, width, dtype=np.float32):
    """Smooth procedural RGB test image: random low-frequency cosine fields."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    img = np.zeros((3, height, width), dtype=np.float64)
    for ch in range(3):
        acc = np.zeros((height, width))
        for _ in range(4):
            fy, fx = rng.uniform(0.5, 3.0, size=2)
            phase = rng.uniform(0, 2 * np.pi, size=2)
            amp = rng.uniform(0.3, 1.0)
            acc += amp * np.cos(2 * np.pi * fy * yy / height + phase[0]) \
                       * np.cos(2 * np.pi * fx * xx / width + phase[1])
        acc -= acc.min()
        if acc.max() > 0:
            acc /= acc.max()
        img[ch] = 0.1 + 0.8 * acc
    return img.astype(dtype)
