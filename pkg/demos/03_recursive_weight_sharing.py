"""
Recursive weight sharing
========================

A recursive transformer group applies ONE chain of blocks several times,
re-adding the group input after every pass. Depth grows with the
recursion count L while the parameter count does not, and the gradient of
a shared block is the sum of its per-pass contributions.
"""

import numpy as np

import drt
from drt.blocks import count_rtb_params, rtb_forward
from drt.tensor import tensor_sum

cfg = drt.ModelConfig(rtb_count=1, recursions=1, stbs_per_block=2,
                      embed_dim=8, heads=2, window_size=2)
params = drt.init_params(cfg, seed=3, dtype=np.float64)
group = params.rtbs[0]

rng = np.random.default_rng(4)
x = drt.Tensor(rng.uniform(-1, 1, size=(1, 4, 4, 8)))

# more recursions -> different function, same parameters
for depth in (1, 2, 3):
    y = rtb_forward(x, group, recursions=depth)
    print(f"L={depth}: output norm {np.linalg.norm(y.data):.4f}, "
          f"parameters {sum(t.size for _, t in group.named_tensors()):,}")

print("\nanalytic group count (any L):",
      count_rtb_params(2, 8, 2, 2, 1, 3))

# gradients accumulate over the recursive passes
y = rtb_forward(x, group, recursions=3)
tensor_sum(y).backward()
qkv = group.stbs[0].attn.qkv_weight
print("\nshared qkv weight gradient norm over 3 passes:",
      float(np.linalg.norm(qkv.grad)))

# at the reference width the group matches the reference budget
print("\nreference-width group:", count_rtb_params(2, 96, 7, 2, 1, 3), "parameters")
