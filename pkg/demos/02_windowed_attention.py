"""
Windowed self-attention
=======================

Attention runs inside non-overlapping M x M windows, which turns the
quadratic token-count term into a quadratic *window-size* term. This demo
partitions a feature map (including one whose extents are not multiples
of the window), reverses the partition exactly, and evaluates the
closed-form cost comparison between windowed and global attention.
"""

import numpy as np

import drt
from drt.attention import pad_to_window_multiple, window_partition, window_reverse

M = 7
rng = np.random.default_rng(1)

# a 10x13 map does not tile into 7x7 windows; reflect-padding handles it
x = drt.Tensor(rng.random((1, 10, 13, 4)).astype(np.float32))
padded, layout = pad_to_window_multiple(x, M)
tokens = window_partition(padded, M)
print(f"input {x.shape} -> padded {padded.shape} -> tokens {tokens.shape}")
print(f"layout: {layout.windows_per_image} windows of {M}x{M}")

back = window_reverse(tokens, layout)
print("roundtrip bitwise exact:", np.array_equal(back.data, x.data))

# run attention over the windows with randomly initialized parameters
cfg = drt.ModelConfig(rtb_count=1, recursions=1, stbs_per_block=1,
                      embed_dim=4, heads=2, window_size=M)
params = drt.init_params(cfg, seed=0)
attn = params.rtbs[0].stbs[0].attn
out = drt.multi_head_attention(tokens, attn)
print("attention output:", out.shape)

# the cost formulas, exactly, in integer arithmetic
for h, w, c in ((56, 56, 96), (336, 336, 96)):
    windowed, global_ = drt.wmsa_complexity(h, w, c, M)
    print(f"{h}x{w}, C={c}: windowed {windowed:,} MACs "
          f"vs global {global_:,} MACs ({global_ / windowed:.1f}x saved)")
