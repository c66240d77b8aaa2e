"""Window partitioning and windowed multi-head self-attention.

Feature maps are [B, H, W, D] (channel-last). Attention runs on
non-overlapping M x M windows, flattened row-major into token sequences
of length M^2, with a learned relative-position bias per head added to
the pre-softmax scores. Inputs whose extents are not multiples of M are
reflect-padded on the bottom/right and cropped back after the reverse.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor import ShapeError, Tensor, linear, matmul, reshape, softmax, take, transpose

__all__ = [
    "WindowLayout",
    "AttentionParams",
    "pad_to_window_multiple",
    "window_partition",
    "window_reverse",
    "relative_position_index",
    "relative_position_bias",
    "multi_head_attention",
    "wmsa_complexity",
]


@dataclass(frozen=True)
class WindowLayout:
    """Bookkeeping for pad -> partition so the reverse is exact."""

    height: int
    width: int
    padded_height: int
    padded_width: int
    window_size: int

    @property
    def pad_bottom(self) -> int:
        return self.padded_height - self.height

    @property
    def pad_right(self) -> int:
        return self.padded_width - self.width

    @property
    def windows_per_image(self) -> int:
        m = self.window_size
        return (self.padded_height // m) * (self.padded_width // m)


def _reflect_indices(n: int, target: int) -> np.ndarray:
    """Index vector of length ``target`` extending [0, n) by mirror reflection.

    Mirrors without repeating the edge sample; degenerates to replication
    when n == 1 (nothing to reflect into).
    """
    if n == 1:
        return np.zeros(target, dtype=np.intp)
    period = 2 * n - 2
    idx = np.arange(target, dtype=np.intp) % period
    return np.where(idx < n, idx, period - idx)


def pad_to_window_multiple(x: Tensor, window_size: int) -> tuple[Tensor, WindowLayout]:
    """Reflect-pad [B, H, W, D] on the bottom/right to multiples of the window."""
    if window_size < 1:
        raise ShapeError(f"window size must be >= 1, got {window_size}")
    if x.ndim != 4:
        raise ShapeError(f"expected [B, H, W, D], got shape {tuple(x.shape)}")
    _, h, w, _ = x.shape
    if h < 1 or w < 1:
        raise ShapeError(f"spatial extents must be >= 1, got {h}x{w}")
    m = window_size
    ph = math.ceil(h / m) * m
    pw = math.ceil(w / m) * m
    layout = WindowLayout(h, w, ph, pw, m)
    if ph == h and pw == w:
        return x, layout
    out = x
    if ph != h:
        out = take(out, _reflect_indices(h, ph), axis=1)
    if pw != w:
        out = take(out, _reflect_indices(w, pw), axis=2)
    return out, layout


def window_partition(x: Tensor, window_size: int) -> Tensor:
    """[B, H, W, D] -> [B*nW, M^2, D]; windows row-major, tokens row-major."""
    if x.ndim != 4:
        raise ShapeError(f"expected [B, H, W, D], got shape {tuple(x.shape)}")
    b, h, w, d = x.shape
    m = window_size
    if h % m or w % m:
        raise ShapeError(f"extents {h}x{w} are not multiples of window size {m}")
    x = reshape(x, (b, h // m, m, w // m, m, d))
    x = transpose(x, (0, 1, 3, 2, 4, 5))
    return reshape(x, (b * (h // m) * (w // m), m * m, d))


def window_reverse(windows: Tensor, layout: WindowLayout) -> Tensor:
    """Invert pad + partition; output has the layout's ORIGINAL extents."""
    m = layout.window_size
    nwin = layout.windows_per_image
    if windows.ndim != 3 or windows.shape[1] != m * m or windows.shape[0] % nwin:
        raise ShapeError(
            f"windows of shape {tuple(windows.shape)} inconsistent with layout {layout}"
        )
    b = windows.shape[0] // nwin
    d = windows.shape[2]
    hb = layout.padded_height // m
    wb = layout.padded_width // m
    x = reshape(windows, (b, hb, wb, m, m, d))
    x = transpose(x, (0, 1, 3, 2, 4, 5))
    x = reshape(x, (b, layout.padded_height, layout.padded_width, d))
    if layout.pad_bottom or layout.pad_right:
        x = x[:, : layout.height, : layout.width, :]
    return x


@dataclass
class AttentionParams:
    """Learnable state of one windowed attention layer.

    The query/key/value projection is fused (D -> 3D). The bias table has
    one row per relative offset in [-(M-1), M-1]^2 and one column per head.
    """

    qkv_weight: Tensor  # [D, 3D]
    qkv_bias: Tensor  # [3D]
    proj_weight: Tensor  # [D, D]
    proj_bias: Tensor  # [D]
    bias_table: Tensor  # [(2M-1)^2, heads]
    heads: int
    window_size: int

    @property
    def dim(self) -> int:
        return self.qkv_weight.shape[0]

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads

    def named_tensors(self, prefix: str = ""):
        yield prefix + "qkv_weight", self.qkv_weight
        yield prefix + "qkv_bias", self.qkv_bias
        yield prefix + "proj_weight", self.proj_weight
        yield prefix + "proj_bias", self.proj_bias
        yield prefix + "bias_table", self.bias_table


_REL_INDEX_CACHE: dict[int, np.ndarray] = {}


def relative_position_index(window_size: int) -> np.ndarray:
    """[M^2, M^2] map from token pair (i, j) to a row of the bias table.

    index(i, j) encodes (row_i - row_j, col_i - col_j), each offset shifted
    into [0, 2M-2], flattened row-major over the (2M-1) x (2M-1) offset grid.
    """
    m = window_size
    cached = _REL_INDEX_CACHE.get(m)
    if cached is not None:
        return cached
    coords = np.stack(np.meshgrid(np.arange(m), np.arange(m), indexing="ij"))  # [2, M, M]
    flat = coords.reshape(2, -1)  # [2, M^2]
    rel = flat[:, :, None] - flat[:, None, :]  # [2, M^2, M^2]
    idx = (rel[0] + m - 1) * (2 * m - 1) + (rel[1] + m - 1)
    idx = idx.astype(np.intp)
    _REL_INDEX_CACHE[m] = idx
    return idx


def relative_position_bias(window_size: int, table: Tensor, heads: int) -> Tensor:
    """Expand the bias table into per-head [heads, M^2, M^2] score offsets."""
    m = window_size
    expected = (2 * m - 1) ** 2
    if table.shape != (expected, heads):
        raise ShapeError(
            f"bias table shape {tuple(table.shape)} != ({expected}, {heads}) for window {m}"
        )
    idx = relative_position_index(m).reshape(-1)
    bias = take(table, idx, axis=0)  # [M^4, heads]
    bias = reshape(bias, (m * m, m * m, heads))
    return transpose(bias, (2, 0, 1))


def multi_head_attention(tokens: Tensor, params: AttentionParams) -> Tensor:
    """Per-window multi-head self-attention over [nWin, T, D] token sequences.

    scores = Q K^T / sqrt(d_k) + relative bias; heads are concatenated and
    projected by the output weight.
    """
    if tokens.ndim != 3:
        raise ShapeError(f"expected [nWin, T, D] tokens, got {tuple(tokens.shape)}")
    nwin, t, d = tokens.shape
    n = params.heads
    if d % n:
        raise ShapeError(f"embed dim {d} not divisible by head count {n}")
    m = params.window_size
    if t != m * m:
        raise ShapeError(f"token count {t} != window_size^2 = {m * m}")
    dk = d // n

    qkv = linear(tokens, params.qkv_weight, params.qkv_bias)  # [nWin, T, 3D]
    qkv = reshape(qkv, (nwin, t, 3, n, dk))
    qkv = transpose(qkv, (2, 0, 3, 1, 4))  # [3, nWin, n, T, dk]
    q, k, v = qkv[0], qkv[1], qkv[2]

    # scaling q instead of the T x T score tensor saves a large temporary
    scores = matmul(q * (1.0 / math.sqrt(dk)), transpose(k, (0, 1, 3, 2)))
    bias = relative_position_bias(m, params.bias_table, n)  # [n, T, T]
    attn = softmax(scores + bias, axis=-1)
    out = matmul(attn, v)  # [nWin, n, T, dk]
    out = reshape(transpose(out, (0, 2, 1, 3)), (nwin, t, d))
    return linear(out, params.proj_weight, params.proj_bias)


def wmsa_complexity(h: int, w: int, c: int, m: int) -> tuple[int, int]:
    """Closed-form MAC counts of windowed vs. global self-attention.

    Returns (4*h*w*C^2 + 2*M^2*h*w*C, 4*h*w*C^2 + 2*(h*w)^2*C) as exact
    integers: the projection cost is shared, the score/value products cost
    M^2 per token when windowed and h*w per token when global.
    """
    if min(h, w, c, m) < 1:
        raise ShapeError("wmsa_complexity: all arguments must be positive")
    proj = 4 * h * w * c * c
    windowed = proj + 2 * (m * m) * h * w * c
    global_ = proj + 2 * (h * w) * (h * w) * c
    return windowed, global_
