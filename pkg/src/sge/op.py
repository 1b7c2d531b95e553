"""Spatial group-wise enhance: forward, analytic backward and cost accounting.

For every sample and channel group with sub-features ``x_1 .. x_m``
(one ``C/G`` vector per spatial position)::

    g     = mean_i x_i
    c_i   = g . x_i
    ch_i  = (c_i - mean(c)) / (std(c) + eps)      # population std
    a_i   = gamma * ch_i + beta
    out_i = x_i * sigmoid(a_i)

The normalization step can be switched off (``normalize=False``), in which
case ``ch_i = c_i``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import IndivisibleChannels, ShapeMismatch, StaleCache
from .tensor import as_feature_map

DEFAULT_EPSILON = 1e-5
DEFAULT_GROUPS = 64
DEFAULT_GAMMA_INIT = 0.0
DEFAULT_BETA_INIT = 1.0


@dataclass
class SgeParams:
    gamma: np.ndarray
    beta: np.ndarray
    epsilon: float = DEFAULT_EPSILON
    normalize: bool = True

    def __post_init__(self):
        self.gamma = np.atleast_1d(np.asarray(self.gamma, dtype=np.float64))
        self.beta = np.atleast_1d(np.asarray(self.beta, dtype=np.float64))
        if self.gamma.ndim != 1 or self.gamma.shape != self.beta.shape:
            raise ValueError(
                f"gamma and beta must be vectors of equal length, got {self.gamma.shape} and {self.beta.shape}"
            )
        if self.gamma.size == 0:
            raise ValueError("at least one group is required")
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")

    @classmethod
    def init(cls, groups=DEFAULT_GROUPS, gamma=DEFAULT_GAMMA_INIT, beta=DEFAULT_BETA_INIT,
             epsilon=DEFAULT_EPSILON, normalize=True) -> "SgeParams":
        return cls(np.full(groups, gamma, dtype=np.float64), np.full(groups, beta, dtype=np.float64),
                   epsilon=epsilon, normalize=normalize)

    @property
    def groups(self) -> int:
        return self.gamma.size

    @property
    def num_params(self) -> int:
        return self.gamma.size + self.beta.size


@dataclass
class SgeForwardCache:
    """Intermediates of one forward call, all float64.

    Shapes use ``D = C // G`` and ``m = H * W``: ``g_vec`` is ``(N, G, D)``,
    ``mu_c`` / ``sigma_c`` are ``(N, G)`` and ``c``, ``c_hat``, ``a``,
    ``gate`` are ``(N, G, m)``.
    """

    input_ref: np.ndarray
    groups: int
    g_vec: np.ndarray
    c: np.ndarray
    mu_c: np.ndarray
    sigma_c: np.ndarray
    c_hat: np.ndarray
    a: np.ndarray
    gate: np.ndarray
    epsilon: float
    normalize: bool = True

    def grouped_input(self) -> np.ndarray:
        n, c, h, w = self.input_ref.shape
        return self.input_ref.reshape(n, self.groups, c // self.groups, h * w)


@dataclass
class SgeGradients:
    d_input: np.ndarray
    d_gamma: np.ndarray
    d_beta: np.ndarray


def sigmoid(x):
    # split by sign so exp never overflows
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sge_forward(fm, params: SgeParams):
    """Apply the operator to an ``(N, C, H, W)`` map.

    Statistics are computed in float64; the returned map has the input dtype.
    Returns ``(output, cache)``.
    """
    fm = as_feature_map(fm)
    n, ch, h, w = fm.shape
    groups = params.groups
    if ch % groups != 0:
        raise IndivisibleChannels(ch, groups)
    m = h * w
    x = fm.reshape(n, groups, ch // groups, m).astype(np.float64, copy=False)

    g_vec = x.mean(axis=3)
    c = np.einsum("ngd,ngdm->ngm", g_vec, x)
    mu = c.mean(axis=2)
    centered = c - mu[..., None]
    sigma = np.sqrt((centered * centered).mean(axis=2))
    if params.normalize:
        c_hat = centered / (sigma[..., None] + params.epsilon)
    else:
        c_hat = c.copy()
    a = params.gamma[None, :, None] * c_hat + params.beta[None, :, None]
    gate = sigmoid(a)

    gate_in = gate.astype(fm.dtype, copy=False)
    out = (fm.reshape(n, groups, ch // groups, m) * gate_in[:, :, None, :]).reshape(fm.shape)
    cache = SgeForwardCache(
        input_ref=fm, groups=groups, g_vec=g_vec, c=c, mu_c=mu, sigma_c=sigma,
        c_hat=c_hat, a=a, gate=gate, epsilon=params.epsilon, normalize=params.normalize,
    )
    return out, cache


def sge_backward(cache: SgeForwardCache, d_output, params: SgeParams) -> SgeGradients:
    """Gradients of ``sum(d_output * output)`` w.r.t. input, gamma and beta.

    Differentiates through the gate, the spatial normalization (mean and
    standard deviation both depend on the input), the dot products and the
    spatial mean. ``epsilon`` is a constant. Where ``sigma_c`` is exactly 0
    every ``c_i - mu_c`` is 0 as well and the std-path term vanishes.
    """
    d_output = np.asarray(d_output)
    src = cache.input_ref
    if d_output.shape != src.shape:
        raise ShapeMismatch(f"d_output shape {d_output.shape} != forward input shape {src.shape}")
    if params.groups != cache.groups or cache.gate.shape[:2] != (src.shape[0], cache.groups):
        raise StaleCache(
            f"cache holds {cache.groups} groups for input {src.shape}, params have {params.groups}"
        )
    if cache.normalize != params.normalize or cache.epsilon != params.epsilon:
        raise StaleCache("cache was produced with a different epsilon/normalize setting")

    n, ch, h, w = src.shape
    groups = cache.groups
    m = h * w
    x = cache.grouped_input().astype(np.float64, copy=False)
    dy = d_output.reshape(n, groups, ch // groups, m).astype(np.float64, copy=False)
    gate = cache.gate

    d_gate = np.einsum("ngdm,ngdm->ngm", dy, x)
    d_a = d_gate * gate * (1.0 - gate)
    d_beta = d_a.sum(axis=(0, 2))
    d_gamma = (d_a * cache.c_hat).sum(axis=(0, 2))
    d_chat = d_a * params.gamma[None, :, None]

    if cache.normalize:
        denom = (cache.sigma_c + cache.epsilon)[..., None]
        centered = cache.c - cache.mu_c[..., None]
        d_mu = -d_chat.sum(axis=2, keepdims=True) / denom
        d_sigma = -(d_chat * centered).sum(axis=2, keepdims=True) / denom**2
        sigma = cache.sigma_c[..., None]
        safe_sigma = np.where(sigma > 0, sigma, 1.0)
        dsigma_dc = np.where(sigma > 0, centered / (m * safe_sigma), 0.0)
        d_c = d_chat / denom + d_mu / m + d_sigma * dsigma_dc
    else:
        d_c = d_chat

    d_g = np.einsum("ngm,ngdm->ngd", d_c, x)
    d_x = (
        dy * gate[:, :, None, :]
        + d_c[:, :, None, :] * cache.g_vec[..., None]
        + d_g[..., None] / m
    )
    return SgeGradients(
        d_input=d_x.reshape(src.shape).astype(src.dtype, copy=False),
        d_gamma=d_gamma,
        d_beta=d_beta,
    )


@dataclass(frozen=True)
class SimilarityRecord:
    g_norm: float
    x_norm: float
    cos_theta: float

    @property
    def product(self) -> float:
        return self.g_norm * self.x_norm * self.cos_theta


def similarity_decomposition(cache: SgeForwardCache, n: int, g: int) -> list[SimilarityRecord]:
    """Split each ``c_i`` of one (sample, group) cell into ``|g| |x_i| cos(theta_i)``.

    ``cos_theta`` is 0 whenever either vector has zero length.
    """
    if not (0 <= n < cache.c.shape[0]):
        raise IndexError(f"batch index {n} out of range [0, {cache.c.shape[0]})")
    if not (0 <= g < cache.groups):
        raise IndexError(f"group index {g} out of range [0, {cache.groups})")
    x = cache.grouped_input()[n, g].astype(np.float64)
    gv = cache.g_vec[n, g]
    g_norm = float(np.linalg.norm(gv))
    x_norms = np.linalg.norm(x, axis=0)
    records = []
    for i, x_norm in enumerate(x_norms):
        if g_norm == 0.0 or x_norm == 0.0:
            cos = 0.0
        else:
            cos = float(np.clip(cache.c[n, g, i] / (g_norm * x_norm), -1.0, 1.0))
        records.append(SimilarityRecord(g_norm, float(x_norm), cos))
    return records


def count_params(channels: int, groups: int) -> int:
    """Trainable parameters of one operator instance: a scale and a shift per group."""
    if groups <= 0 or channels % groups != 0:
        raise IndivisibleChannels(channels, groups)
    return 2 * groups


def count_flops(batch: int, channels: int, height: int, width: int, groups: int,
                normalize: bool = True) -> int:
    """Multiply-adds of one forward pass.

    Per (sample, group) with ``D = C // G`` and ``m = H * W``:

    ======================  =========
    spatial mean            ``m * D``
    dot products            ``m * D``
    mean and variance of c  ``2 * m``
    normalization           ``m``
    affine                  ``m``
    sigmoid                 ``m``
    gating the sub-features ``m * D``
    ======================  =========

    i.e. ``N * m * (3 * C + 5 * G)`` in total. With normalization off the
    moment and normalization rows drop out.
    """
    if groups <= 0 or channels % groups != 0:
        raise IndivisibleChannels(channels, groups)
    m = height * width
    per_position = 3 * channels + (5 if normalize else 2) * groups
    return batch * m * per_position
