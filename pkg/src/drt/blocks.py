"""Transformer blocks: the windowed-attention block and its recursive group.

The recursive group applies one shared chain of U blocks L times; every
pass re-adds the group's own input, and a single 3x3 convolution (no
activation) closes the group. Because the chain is shared, L changes the
compute but never the parameter count.
"""

from __future__ import annotations

from dataclasses import dataclass

from .tensor import (
    ShapeError,
    Tensor,
    conv2d,
    gelu,
    layer_norm,
    leaky_relu,
    linear,
    transpose,
)
from .attention import (
    AttentionParams,
    multi_head_attention,
    pad_to_window_multiple,
    window_partition,
    window_reverse,
)

__all__ = [
    "StbParams",
    "RtbParams",
    "stb_forward",
    "rtb_forward",
    "count_stb_params",
    "count_rtb_params",
]

LAYER_NORM_EPS = 1e-5


@dataclass
class StbParams:
    """One attention block: LN -> WMSA -> residual -> LN -> MLP -> residual."""

    ln1_gamma: Tensor
    ln1_beta: Tensor
    attn: AttentionParams
    ln2_gamma: Tensor
    ln2_beta: Tensor
    mlp_w1: Tensor  # [D, r*D]
    mlp_b1: Tensor
    mlp_w2: Tensor  # [r*D, D]
    mlp_b2: Tensor

    def named_tensors(self, prefix: str = ""):
        yield prefix + "ln1_gamma", self.ln1_gamma
        yield prefix + "ln1_beta", self.ln1_beta
        yield from self.attn.named_tensors(prefix + "attn.")
        yield prefix + "ln2_gamma", self.ln2_gamma
        yield prefix + "ln2_beta", self.ln2_beta
        yield prefix + "mlp_w1", self.mlp_w1
        yield prefix + "mlp_b1", self.mlp_b1
        yield prefix + "mlp_w2", self.mlp_w2
        yield prefix + "mlp_b2", self.mlp_b2


@dataclass
class RtbParams:
    """The shared block chain plus the tail convolution(s).

    ``stbs`` holds exactly U parameter sets no matter how many recursive
    passes run over them. ``tail`` is a list of (weight [D, D, k, k],
    bias [D]) convolutions; the single-conv configuration has no
    activation, multi-conv tails interleave leaky ReLU.
    """

    stbs: list[StbParams]
    tail: list[tuple[Tensor, Tensor]]
    leaky_slope: float = 0.01

    def named_tensors(self, prefix: str = ""):
        for i, stb in enumerate(self.stbs):
            yield from stb.named_tensors(f"{prefix}stb{i}.")
        for i, (w, b) in enumerate(self.tail):
            yield f"{prefix}tail{i}_weight", w
            yield f"{prefix}tail{i}_bias", b


def stb_forward(tokens: Tensor, params: StbParams) -> Tensor:
    """y = WMSA(LN(x)) + x; out = MLP(LN(y)) + y, on [nWin, T, D] tokens."""
    h = layer_norm(tokens, params.ln1_gamma, params.ln1_beta, LAYER_NORM_EPS)
    y = multi_head_attention(h, params.attn) + tokens
    h2 = layer_norm(y, params.ln2_gamma, params.ln2_beta, LAYER_NORM_EPS)
    h2 = linear(h2, params.mlp_w1, params.mlp_b1)
    h2 = gelu(h2)
    h2 = linear(h2, params.mlp_w2, params.mlp_b2)
    return h2 + y


def rtb_forward(s_in: Tensor, params: RtbParams, recursions: int) -> Tensor:
    """Run L recursive passes of the shared block chain over [B, H, W, D].

    Every pass feeds the previous pass's output through the chain and then
    adds the ORIGINAL group input. Token space is entered once (pad +
    partition) and left once (reverse + crop) before the tail convolution.
    """
    if recursions < 1:
        raise ShapeError(f"recursion count must be >= 1, got {recursions}")
    m = params.stbs[0].attn.window_size
    padded, layout = pad_to_window_multiple(s_in, m)
    tokens_in = window_partition(padded, m)
    t = tokens_in
    for _ in range(recursions):
        for stb in params.stbs:
            t = stb_forward(t, stb)
        t = t + tokens_in
    y = window_reverse(t, layout)

    out = transpose(y, (0, 3, 1, 2))  # [B, D, H, W]
    kh = params.tail[0][0].shape[2]
    last = len(params.tail) - 1
    for i, (w, b) in enumerate(params.tail):
        out = conv2d(out, w, b, stride=1, padding=kh // 2)
        if i < last:
            out = leaky_relu(out, params.leaky_slope)
    return transpose(out, (0, 2, 3, 1))


def count_stb_params(embed_dim: int, window_size: int, heads: int, mlp_ratio: int) -> int:
    """Scalar count of one block: LNs, fused QKV, projection, bias table, MLP."""
    d = embed_dim
    hidden = mlp_ratio * d
    lns = 2 * (2 * d)
    qkv = d * 3 * d + 3 * d
    proj = d * d + d
    table = (2 * window_size - 1) ** 2 * heads
    mlp = (d * hidden + hidden) + (hidden * d + d)
    return lns + qkv + proj + table + mlp


def count_rtb_params(
    stbs_per_block: int,
    embed_dim: int,
    window_size: int,
    heads: int,
    mlp_ratio: int,
    conv_kernel: int,
    tail_convs: int = 1,
) -> int:
    """Count one recursive group: U blocks plus the tail conv(s).

    Independent of the recursion depth by construction; recursion reuses
    the same U parameter sets.
    """
    stb = count_stb_params(embed_dim, window_size, heads, mlp_ratio)
    d = embed_dim
    tail = tail_convs * (d * d * conv_kernel * conv_kernel + d)
    return stbs_per_block * stb + tail
