"""
Spatial group-wise enhance, step by step
========================================

A tiny feature map goes through the operator. We look at the group
descriptor, the per-position similarity, the gate, and what the
parameter and FLOP counters report for a realistic layer.
"""
import numpy as np

from sge.op import SgeParams, count_flops, count_params, sge_forward, similarity_decomposition
from sge.tensor import group_split

rng = np.random.default_rng(0)

# one sample, 8 channels split into 2 groups, on a 3x3 grid
x = rng.standard_normal((1, 8, 3, 3))
view = group_split(x, 2)
print("grouped view:", view.data.shape, "(N, G, channels per group, positions)")

# default init: gamma=0, beta=1, so every position gets the same gate sigmoid(1)
out, cache = sge_forward(x, SgeParams.init(2))
print("gates at init:", np.unique(cache.gate.round(6)))

# a nonzero gamma lets positions that agree with the group mean pass through
params = SgeParams(gamma=np.array([2.0, -1.0]), beta=np.array([0.0, 0.0]))
out, cache = sge_forward(x, params)
print("group 0 gate map:\n", cache.gate[0, 0].reshape(3, 3).round(3))

# the similarity is |g| |x_i| cos(theta_i)
for rec in similarity_decomposition(cache, 0, 0)[:3]:
    print(f"|g|={rec.g_norm:.3f} |x|={rec.x_norm:.3f} cos={rec.cos_theta:+.3f} -> {rec.product:+.3f}")

# a ResNet-50 stage-4 sized layer: 2048 channels, 64 groups, 7x7
print("params:", count_params(2048, 64))
print("multiply-adds:", count_flops(1, 2048, 7, 7, 64))

# the gate never amplifies: |out| <= |x| elementwise
assert np.all(np.abs(out) <= np.abs(x))
