"""Full network assembly: embed stem, recursive groups, reconstruction head.

The network is residual end to end: the deep stage output is added back to
the embedding, and the reconstruction output is added back to the raw
input, so the learnable path only has to model the degradation. Spatial
resolution is preserved throughout when patch size is 1.

Also here: exact analytic parameter counting, an itemized multiply-
accumulate audit, and seeded parameter initialization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .tensor import ShapeError, Tensor, conv2d, transpose, upsample_nearest, zero_pad2d
from .attention import AttentionParams
from .blocks import RtbParams, StbParams, count_rtb_params, rtb_forward

__all__ = [
    "ModelConfig",
    "DrtParameters",
    "patch_embed",
    "deep_features",
    "reconstruct",
    "forward",
    "count_params",
    "count_macs",
    "MacReport",
    "init_params",
]


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters; defaults are the reference configuration."""

    rtb_count: int = 6  # N
    recursions: int = 3  # L
    stbs_per_block: int = 2  # U
    embed_dim: int = 96  # D
    heads: int = 2
    window_size: int = 7  # M
    patch_size: int = 1  # P
    mlp_ratio: int = 1
    conv_kernel: int = 3
    channels: int = 3
    tail_convs: int = 1
    leaky_slope: float = 0.01

    def __post_init__(self):
        for f in fields(self):
            if f.name == "leaky_slope":
                continue
            if getattr(self, f.name) < 1:
                raise ShapeError(f"config field {f.name} must be positive")
        if self.embed_dim % self.heads:
            raise ShapeError(
                f"embed_dim {self.embed_dim} not divisible by heads {self.heads}"
            )
        if self.conv_kernel % 2 == 0:
            raise ShapeError(f"conv_kernel must be odd, got {self.conv_kernel}")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)

    def with_overrides(self, **kw) -> "ModelConfig":
        return replace(self, **kw)


@dataclass
class DrtParameters:
    """The complete learnable state; no sharing across recursive groups."""

    config: ModelConfig
    embed_weight: Tensor  # [D, C, k, k]
    embed_bias: Tensor  # [D]
    rtbs: list[RtbParams]
    recon_weight: Tensor  # [C, D, k, k]
    recon_bias: Tensor  # [C]

    def named_tensors(self):
        yield "embed_weight", self.embed_weight
        yield "embed_bias", self.embed_bias
        for i, rtb in enumerate(self.rtbs):
            yield from rtb.named_tensors(f"rtb{i}.")
        yield "recon_weight", self.recon_weight
        yield "recon_bias", self.recon_bias

    def scalar_count(self) -> int:
        return sum(t.size for _, t in self.named_tensors())

    def zero_grads(self) -> None:
        for _, t in self.named_tensors():
            t.grad = None

    @property
    def dtype(self):
        return self.embed_weight.dtype


def patch_embed(img: Tensor, params: DrtParameters) -> Tensor:
    """[B, C, H, W] -> [B, H/P, W/P, D] via the conv stem (stride = patch size)."""
    cfg = params.config
    p = cfg.patch_size
    k = cfg.conv_kernel
    _, _, h, w = img.shape
    if h % p or w % p:
        raise ShapeError(f"extents {h}x{w} not divisible by patch size {p}")
    if p == 1:
        e = conv2d(img, params.embed_weight, params.embed_bias, stride=1, padding=k // 2)
    else:
        # stride-P stem: total padding k - P tiles the kernel exactly P apart
        if k < p:
            raise ShapeError(f"conv_kernel {k} must be >= patch_size {p}")
        total = k - p
        img = zero_pad2d(img, total // 2, total - total // 2, total // 2, total - total // 2)
        e = conv2d(img, params.embed_weight, params.embed_bias, stride=p, padding=0)
    return transpose(e, (0, 2, 3, 1))


def deep_features(e: Tensor, params: DrtParameters) -> Tensor:
    """Sequential recursive groups, then one residual add of the stage input."""
    x = e
    for rtb in params.rtbs:
        x = rtb_forward(x, rtb, params.config.recursions)
    return x + e


def reconstruct(d: Tensor, r_input: Tensor, params: DrtParameters) -> Tensor:
    """[B, H/P, W/P, D] -> [B, C, H, W] conv head plus the global residual."""
    cfg = params.config
    x = transpose(d, (0, 3, 1, 2))
    if cfg.patch_size > 1:
        x = upsample_nearest(x, cfg.patch_size)
    pad = cfg.conv_kernel // 2
    out = conv2d(x, params.recon_weight, params.recon_bias, stride=1, padding=pad)
    return out + r_input


def forward(img: Tensor, params: DrtParameters) -> Tensor:
    """End-to-end restoration pass; output shape equals input shape."""
    e = patch_embed(img, params)
    d = deep_features(e, params)
    return reconstruct(d, img, params)


# ----------------------------------------------------------------------
# accounting
# ----------------------------------------------------------------------

def count_params(config: ModelConfig) -> int:
    """Exact scalar parameter count, no instantiation needed."""
    c = config
    stem = c.embed_dim * c.channels * c.conv_kernel ** 2 + c.embed_dim
    rtb = count_rtb_params(
        c.stbs_per_block,
        c.embed_dim,
        c.window_size,
        c.heads,
        c.mlp_ratio,
        c.conv_kernel,
        c.tail_convs,
    )
    head = c.channels * c.embed_dim * c.conv_kernel ** 2 + c.channels
    return stem + c.rtb_count * rtb + head


@dataclass
class MacReport:
    """Itemized multiply-accumulate audit of one forward pass.

    Convention: convolutions cost k^2 * C_in * C_out per output position;
    linear layers cost D_in * D_out per token; the two attention products
    cost 2 * heads * T^2 * d_k per window. Every recursive pass is counted.
    Layer norms, softmax, activations and residual adds are not MACs and
    are excluded. Token-space terms use the padded (window-multiple) grid,
    which is what actually executes.
    """

    height: int
    width: int
    items: dict[str, int] = field(default_factory=dict)

    @property
    def total(self) -> int:
        return sum(self.items.values())

    def lines(self) -> list[str]:
        width = max(len(k) for k in self.items)
        out = [f"{k:<{width}}  {v:>20,}" for k, v in self.items.items()]
        out.append(f"{'total':<{width}}  {self.total:>20,}")
        return out


def count_macs(config: ModelConfig, height: int, width: int) -> MacReport:
    """Audit the multiply-accumulates of one forward pass at H x W input."""
    c = config
    if height < 1 or width < 1:
        raise ShapeError("input extents must be positive")
    if height % c.patch_size or width % c.patch_size:
        raise ShapeError(f"extents {height}x{width} not divisible by patch size {c.patch_size}")
    gh, gw = height // c.patch_size, width // c.patch_size  # token grid
    m = c.window_size
    ph = math.ceil(gh / m) * m
    pw = math.ceil(gw / m) * m
    tokens = ph * pw
    windows = (ph // m) * (pw // m)
    d = c.embed_dim
    k2 = c.conv_kernel ** 2
    t = m * m
    dk = d // c.heads

    stb_passes = c.rtb_count * c.recursions * c.stbs_per_block
    report = MacReport(height=height, width=width)
    report.items["embed_conv"] = k2 * c.channels * d * gh * gw
    report.items["attention_qkv"] = stb_passes * tokens * d * 3 * d
    report.items["attention_scores_values"] = stb_passes * windows * 2 * c.heads * t * t * dk
    report.items["attention_proj"] = stb_passes * tokens * d * d
    report.items["mlp"] = stb_passes * tokens * 2 * d * (c.mlp_ratio * d)
    report.items["rtb_tail_conv"] = c.rtb_count * c.tail_convs * k2 * d * d * tokens
    report.items["recon_conv"] = k2 * d * c.channels * height * width
    return report


# ----------------------------------------------------------------------
# initialization
# ----------------------------------------------------------------------

INIT_STD = 0.02
INIT_TRUNC = 2.0  # in units of std


def _trunc_normal(rng: np.random.Generator, shape, dtype) -> Tensor:
    """Normal(0, INIT_STD) with redraws outside +/- INIT_TRUNC std."""
    bound = INIT_TRUNC * INIT_STD
    vals = rng.normal(0.0, INIT_STD, size=shape)
    bad = np.abs(vals) > bound
    while bad.any():
        vals[bad] = rng.normal(0.0, INIT_STD, size=int(bad.sum()))
        bad = np.abs(vals) > bound
    return Tensor(vals.astype(dtype), requires_grad=True)


def _zeros(shape, dtype) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


def _ones(shape, dtype) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype), requires_grad=True)


def _init_stb(cfg: ModelConfig, rng: np.random.Generator, dtype) -> StbParams:
    d = cfg.embed_dim
    hidden = cfg.mlp_ratio * d
    table_rows = (2 * cfg.window_size - 1) ** 2
    attn = AttentionParams(
        qkv_weight=_trunc_normal(rng, (d, 3 * d), dtype),
        qkv_bias=_zeros((3 * d,), dtype),
        proj_weight=_trunc_normal(rng, (d, d), dtype),
        proj_bias=_zeros((d,), dtype),
        bias_table=_zeros((table_rows, cfg.heads), dtype),
        heads=cfg.heads,
        window_size=cfg.window_size,
    )
    return StbParams(
        ln1_gamma=_ones((d,), dtype),
        ln1_beta=_zeros((d,), dtype),
        attn=attn,
        ln2_gamma=_ones((d,), dtype),
        ln2_beta=_zeros((d,), dtype),
        mlp_w1=_trunc_normal(rng, (d, hidden), dtype),
        mlp_b1=_zeros((hidden,), dtype),
        mlp_w2=_trunc_normal(rng, (hidden, d), dtype),
        mlp_b2=_zeros((d,), dtype),
    )


def init_params(config: ModelConfig, seed: int, dtype=np.float32) -> DrtParameters:
    """Fully seeded parameter build: weights truncated-normal, biases zero."""
    rng = np.random.Generator(np.random.PCG64(int(seed) & 0xFFFFFFFFFFFFFFFF))
    c = config
    k = c.conv_kernel
    rtbs = []
    embed_w = _trunc_normal(rng, (c.embed_dim, c.channels, k, k), dtype)
    embed_b = _zeros((c.embed_dim,), dtype)
    for _ in range(c.rtb_count):
        stbs = [_init_stb(c, rng, dtype) for _ in range(c.stbs_per_block)]
        tail = [
            (_trunc_normal(rng, (c.embed_dim, c.embed_dim, k, k), dtype), _zeros((c.embed_dim,), dtype))
            for _ in range(c.tail_convs)
        ]
        rtbs.append(RtbParams(stbs=stbs, tail=tail, leaky_slope=c.leaky_slope))
    recon_w = _trunc_normal(rng, (c.channels, c.embed_dim, k, k), dtype)
    recon_b = _zeros((c.channels,), dtype)
    return DrtParameters(
        config=c,
        embed_weight=embed_w,
        embed_bias=embed_b,
        rtbs=rtbs,
        recon_weight=recon_w,
        recon_bias=recon_b,
    )
