"""Loop-for-loop reference transcription of the operator, used as an oracle.

Deliberately naive: plain Python floats, explicit index loops, no numpy
reductions. Slow, and only meant for small verification shapes.
"""
from __future__ import annotations

import math

import numpy as np


class MACounter:
    """Tallies multiply-adds as the reference loops execute them."""

    def __init__(self):
        self.count = 0

    def tick(self, k=1):
        self.count += k


def _sigmoid(a):
    if a >= 0:
        return 1.0 / (1.0 + math.exp(-a))
    e = math.exp(a)
    return e / (1.0 + e)


def sge_forward_reference(x, gamma, beta, groups, epsilon=1e-5, normalize=True, counter=None):
    """Returns ``(output, gate)`` with output shaped like ``x`` and gate ``(N, G, H*W)``."""
    x = np.asarray(x, dtype=np.float64)
    tick = counter.tick if counter is not None else (lambda k=1: None)
    N, C, H, W = x.shape
    D = C // groups
    m = H * W
    out = np.zeros_like(x)
    gates = np.zeros((N, groups, m))
    for n in range(N):
        for grp in range(groups):
            def sub(i, d):
                return float(x[n, grp * D + d, i // W, i % W])

            g = []
            for d in range(D):
                s = 0.0
                for i in range(m):
                    s += sub(i, d)
                    tick()
                g.append(s / m)

            c = []
            for i in range(m):
                s = 0.0
                for d in range(D):
                    s += g[d] * sub(i, d)
                    tick()
                c.append(s)

            if normalize:
                mu = 0.0
                for i in range(m):
                    mu += c[i]
                    tick()
                mu /= m
                var = 0.0
                for i in range(m):
                    var += (c[i] - mu) * (c[i] - mu)
                    tick()
                sigma = math.sqrt(var / m)
                c_hat = []
                for i in range(m):
                    c_hat.append((c[i] - mu) / (sigma + epsilon))
                    tick()
            else:
                c_hat = list(c)

            for i in range(m):
                a = gamma[grp] * c_hat[i] + beta[grp]
                tick()
                gate = _sigmoid(a)
                tick()
                gates[n, grp, i] = gate
                for d in range(D):
                    out[n, grp * D + d, i // W, i % W] = sub(i, d) * gate
                    tick()
    return out, gates


def count_flops_instrumented(batch, channels, height, width, groups, normalize=True):
    """Multiply-add count obtained by running the reference on zeros and counting."""
    counter = MACounter()
    x = np.zeros((batch, channels, height, width))
    sge_forward_reference(x, np.zeros(groups), np.zeros(groups), groups,
                          normalize=normalize, counter=counter)
    return counter.count


def spatial_mean_reference(block):
    """Mean over positions of a ``(D, m)`` block, one scalar at a time."""
    D, m = block.shape
    out = []
    for d in range(D):
        s = 0.0
        for i in range(m):
            s += float(block[d, i])
        out.append(s / m)
    return np.array(out)


def activation_lengths_reference(block):
    D, m = block.shape
    out = []
    for i in range(m):
        s = 0.0
        for d in range(D):
            s += float(block[d, i]) ** 2
        out.append(math.sqrt(s))
    return np.array(out)
