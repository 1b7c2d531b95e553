"""
Activation lengths, variance and heatmaps
=========================================

Train a small SGE model, then compare the site before and after gating:
per-group variance of activation lengths, a histogram for one group, and
normalized heatmaps written as PGM files.
"""
import sys
import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np

from sge import experiments as ex
from sge.data import make_datasets
from sge.io import write_heatmap
from sge.stats import activation_histogram, group_variance_distribution, normalize_unit_interval, site_lengths

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 5
result = ex.run(ex.RunSpec(seed=0), train_config=replace(ex.TOY_TRAIN, epochs=epochs))
model = result.model
_, test_set = make_datasets(result.data_config)

summary = group_variance_distribution(model, test_set)
for g, (pre, post) in enumerate(zip(summary["pre"].mean_variance, summary["post"].mean_variance)):
    print(f"group {g}: variance pre {pre:.4f} post {post:.4f}")

hist = activation_histogram(model, test_set, group=0, bins=16)
pre_low, post_low = hist.low_mass()
print(f"mass in the lowest quarter of the range: pre {pre_low:.2f}, post {post_low:.2f}")

# heatmaps for the first test image; each map is rescaled to [0, 1]
out_dir = Path(sys.argv[2]) if len(sys.argv) > 2 else Path(tempfile.mkdtemp())
pre, post = site_lengths(model, test_set.images[:1])
side = int(np.sqrt(pre.shape[-1]))
for g in (0, 1):
    for phase, lengths in (("pre", pre), ("post", post)):
        write_heatmap(normalize_unit_interval(lengths[0, g]).reshape(side, side), out_dir / f"group{g:02d}_{phase}.pgm")
print("heatmaps in", out_dir)
