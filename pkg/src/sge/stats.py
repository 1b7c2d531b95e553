"""Activation diagnostics around an SGE site.

The activation value of a sub-feature is its Euclidean length. For each
group the spread of a map is the (population) variance of these lengths over
positions, computed per sample and then summarized across the dataset by
its mean and standard deviation.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import BadBinCount, LayerNotFound
from .tensor import GroupedView, group_split

PHASES = ("pre", "post")


def activation_lengths(view: GroupedView, n: int, g: int) -> np.ndarray:
    """``|x_i|`` for every position of sample ``n``, group ``g``."""
    block = view.group(n, g).astype(np.float64)
    return np.sqrt((block * block).sum(axis=0))


def all_activation_lengths(fm, groups) -> np.ndarray:
    """Lengths for every (sample, group, position): shape ``(N, G, H*W)``."""
    x = group_split(fm, groups).data.astype(np.float64)
    return np.sqrt((x * x).sum(axis=2))


def normalize_unit_interval(values) -> np.ndarray:
    """Linearly rescale to ``[0, 1]``. A constant input maps to all zeros."""
    v = np.asarray(values, dtype=np.float64)
    lo, hi = v.min(), v.max()
    if hi == lo:
        return np.zeros_like(v)
    out = (v - lo) / (hi - lo)
    # pin the extremes exactly; rounding can otherwise leave max at 1 - ulp
    out[v == lo] = 0.0
    out[v == hi] = 1.0
    return out


@dataclass
class GroupVariance:
    phase: str
    mean_variance: np.ndarray  # (G,)
    std_variance: np.ndarray  # (G,)
    per_sample: np.ndarray = field(repr=False)  # (N, G)


@dataclass
class ActivationHistogram:
    group: int
    edges: np.ndarray  # (bins + 1,)
    count_pre: np.ndarray
    count_post: np.ndarray

    def low_mass(self, fraction=0.25):
        """Share of each histogram's mass in the lowest ``fraction`` of bins (pre, post)."""
        k = max(1, int(round(fraction * (len(self.edges) - 1))))
        return (self.count_pre[:k].sum() / self.count_pre.sum(),
                self.count_post[:k].sum() / self.count_post.sum())

    def low_mass_shift(self, fraction=0.25) -> float:
        pre, post = self.low_mass(fraction)
        return float(post - pre)


def _sge_site(model, layer):
    sites = model.sge_layers()
    if layer is None:
        if not sites:
            raise LayerNotFound("model has no SGE layer")
        return sites[-1]
    if layer not in sites:
        raise LayerNotFound(f"layer {layer} is not an SGE layer (SGE layers: {sites})")
    return layer


def site_lengths(model, images, layer=None, batch_size=256):
    """Activation lengths before and after the SGE layer: two ``(N, G, m)`` arrays."""
    idx = _sge_site(model, layer)
    groups = model.layers[idx].params["gamma"].size
    pre, post = [], []
    for start in range(0, len(images), batch_size):
        a, b = model.site_activations(images[start:start + batch_size], idx)
        pre.append(all_activation_lengths(a, groups))
        post.append(all_activation_lengths(b, groups))
    return np.concatenate(pre), np.concatenate(post)


def variance_summary(lengths, phase) -> GroupVariance:
    per_sample = lengths.var(axis=2)
    return GroupVariance(phase, per_sample.mean(axis=0), per_sample.std(axis=0), per_sample)


def relative_spread(lengths) -> np.ndarray:
    """Per-group mean over samples of var/mean^2 of the lengths (squared coefficient of variation).

    Unlike the raw variance this is unchanged by a uniform rescale, so it
    isolates contrast from the overall shrinkage a sub-unit gate applies.
    Samples whose group is all zero are skipped.
    """
    lengths = np.asarray(lengths, dtype=np.float64)
    mean = lengths.mean(axis=2)
    alive = mean > 0
    ratio = np.where(alive, lengths.var(axis=2) / np.where(alive, mean, 1.0) ** 2, 0.0)
    return ratio.sum(axis=0) / np.maximum(alive.sum(axis=0), 1)


def group_variance_distribution(model, dataset, layer=None, pre_or_post="both"):
    """Per-group variance of activation lengths, summarized over ``dataset``.

    Returns one :class:`GroupVariance` for ``"pre"`` or ``"post"``, or a dict
    of both for ``"both"``.
    """
    if pre_or_post not in PHASES + ("both",):
        raise ValueError(f"pre_or_post must be 'pre', 'post' or 'both', got {pre_or_post!r}")
    pre, post = site_lengths(model, dataset.images, layer)
    out = {"pre": variance_summary(pre, "pre"), "post": variance_summary(post, "post")}
    return out if pre_or_post == "both" else out[pre_or_post]


def histogram_pair(pre_values, post_values, bins=64, group=0) -> ActivationHistogram:
    """Fixed-width histograms of two samples over their joint min-max range."""
    if int(bins) != bins or bins < 2:
        raise BadBinCount(f"need at least 2 bins, got {bins}")
    pre_values = np.ravel(pre_values)
    post_values = np.ravel(post_values)
    lo = min(pre_values.min(), post_values.min())
    hi = max(pre_values.max(), post_values.max())
    if hi == lo:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, int(bins) + 1)
    count_pre, _ = np.histogram(pre_values, edges)
    count_post, _ = np.histogram(post_values, edges)
    return ActivationHistogram(group, edges, count_pre, count_post)


def activation_histogram(model, dataset, layer=None, group=0, bins=64) -> ActivationHistogram:
    if int(bins) != bins or bins < 2:
        raise BadBinCount(f"need at least 2 bins, got {bins}")
    pre, post = site_lengths(model, dataset.images, layer)
    if not (0 <= group < pre.shape[1]):
        raise IndexError(f"group {group} out of range [0, {pre.shape[1]})")
    return histogram_pair(pre[:, group], post[:, group], bins, group)


def _write_comments(f, metadata):
    for k, v in (metadata or {}).items():
        f.write(f"# {k}={v}\n")


def write_variance_csv(path, summaries, metadata=None):
    """Rows ``group,mean_variance,std_variance,phase`` for each phase in ``summaries``."""
    with open(path, "w", newline="") as f:
        _write_comments(f, metadata)
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["group", "mean_variance", "std_variance", "phase"])
        for s in summaries:
            for g, (mv, sv) in enumerate(zip(s.mean_variance, s.std_variance)):
                w.writerow([g, repr(float(mv)), repr(float(sv)), s.phase])


def write_histogram_csv(path, hist: ActivationHistogram, metadata=None):
    with open(path, "w", newline="") as f:
        _write_comments(f, metadata)
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["bin_low", "bin_high", "count_pre", "count_post"])
        for lo, hi, cp, cq in zip(hist.edges[:-1], hist.edges[1:], hist.count_pre, hist.count_post):
            w.writerow([repr(float(lo)), repr(float(hi)), int(cp), int(cq)])
