"""Verification suites: finite-difference gradient checks and the loop-reference forward check."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .op import SgeParams, sge_backward, sge_forward
from .reference import sge_forward_reference

DEFAULT_SHAPES = ((1, 2, 2, 2, 1), (2, 8, 3, 3, 4), (1, 64, 5, 5, 16))
STEP = 1e-5
REL_TOL = 1e-4
ABS_FLOOR = 1e-7


@dataclass
class Mismatch:
    which: str
    index: tuple
    analytic: float
    numeric: float
    rel_error: float


@dataclass
class GradcheckResult:
    shape: tuple
    seed: int
    max_rel_error: float
    checked: int
    max_abs_error: float = 0.0
    failures: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures


def relative_error(analytic, numeric, floor=ABS_FLOOR):
    """Elementwise ``|a - n| / max(|a|, |n|)``; 0 where ``|a - n| <= floor``."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    diff = np.abs(analytic - numeric)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.where(diff <= floor, 0.0, diff / scale)


def numeric_gradient(f, x, step=STEP):
    """Central differences of scalar ``f`` at every coordinate of ``x`` (modified in place, restored)."""
    grad = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + step
        fp = f()
        flat[k] = orig - step
        fm = f()
        flat[k] = orig
        gflat[k] = (fp - fm) / (2 * step)
    return grad


def random_instance(shape, rng, *, gamma_scale=1.0, epsilon=1e-5, normalize=True):
    n, c, h, w, g = shape
    x = rng.standard_normal((n, c, h, w))
    params = SgeParams(rng.standard_normal(g) * gamma_scale, rng.standard_normal(g),
                       epsilon=epsilon, normalize=normalize)
    d_out = rng.standard_normal((n, c, h, w))
    return x, params, d_out


def check_sge_gradients(x, params: SgeParams, d_out, *, step=STEP, rel_tol=REL_TOL,
                        floor=ABS_FLOOR, seed=-1) -> GradcheckResult:
    """Compare :func:`sge_backward` with finite differences of ``sum(d_out * sge_forward(x))``."""
    x = np.array(x, dtype=np.float64)
    d_out = np.asarray(d_out, dtype=np.float64)
    out, cache = sge_forward(x, params)
    grads = sge_backward(cache, d_out, params)

    def loss():
        y, _ = sge_forward(x, params)
        return float(np.sum(d_out * y))

    numeric = {
        "d_input": numeric_gradient(loss, x, step),
        "d_gamma": numeric_gradient(loss, params.gamma, step),
        "d_beta": numeric_gradient(loss, params.beta, step),
    }
    analytic = {"d_input": grads.d_input, "d_gamma": grads.d_gamma, "d_beta": grads.d_beta}

    result = GradcheckResult(shape=x.shape + (params.groups,), seed=seed, max_rel_error=0.0, checked=0)
    for name, num in numeric.items():
        ana = analytic[name]
        rel = relative_error(ana, num, floor)
        result.checked += rel.size
        result.max_rel_error = max(result.max_rel_error, float(rel.max()))
        result.max_abs_error = max(result.max_abs_error, float(np.abs(ana - num).max()))
        for idx in zip(*np.nonzero(rel >= rel_tol)):
            result.failures.append(Mismatch(name, tuple(int(i) for i in idx), float(ana[idx]),
                                            float(num[idx]), float(rel[idx])))
    return result


def run_suite(shapes=DEFAULT_SHAPES, seeds=range(20), **kwargs) -> list[GradcheckResult]:
    results = []
    for shape in shapes:
        for seed in seeds:
            rng = np.random.default_rng(seed)
            x, params, d_out = random_instance(tuple(shape), rng)
            results.append(check_sge_gradients(x, params, d_out, seed=seed, **kwargs))
    return results


def oracle_instances(instances=100, seed=0):
    """Yield ``(x, params)`` pairs: float64 inputs with small random shapes and G in {1, 2, 4}."""
    rng = np.random.default_rng(seed)
    for _ in range(instances):
        g = int(rng.choice([1, 2, 4]))
        n, d, h, w = (int(v) for v in rng.integers(1, 4, size=4))
        x = rng.standard_normal((n, g * d, h, w))
        yield x, SgeParams(rng.standard_normal(g), rng.standard_normal(g))


def oracle_suite(instances=100, seed=0, rtol=1e-6):
    """Vectorized forward vs the reference loops on random instances.

    Returns ``(worst relative error, failing instance indices)``.
    """
    worst, failures = 0.0, []
    for k, (x, params) in enumerate(oracle_instances(instances, seed)):
        fast, _ = sge_forward(x, params)
        slow, _ = sge_forward_reference(x, params.gamma, params.beta, params.groups)
        err = float(np.max(np.abs(fast - slow) / np.maximum(np.abs(slow), 1e-300)))
        worst = max(worst, err)
        if not np.allclose(fast, slow, rtol=rtol, atol=0):
            failures.append(k)
    return worst, failures
