"""
Checking the hand-derived backward pass
=======================================

Central differences in float64 against the analytic gradients, on the
three standard shapes, plus the loop-based forward oracle.
"""
import numpy as np

from sge.gradcheck import DEFAULT_SHAPES, check_sge_gradients, oracle_suite, random_instance, run_suite

# a single instance first, to see the numbers
rng = np.random.default_rng(1)
x, params, d_out = random_instance((2, 8, 3, 3, 4), rng)
result = check_sge_gradients(x, params, d_out)
print(f"checked {result.checked} coordinates, max abs error {result.max_abs_error:.2e}")

# the normalization-off variant has its own, simpler, backward path
x, params, d_out = random_instance((2, 8, 3, 3, 4), rng, normalize=False)
print("norm off passes:", check_sge_gradients(x, params, d_out).passed)

# five seeds over every default shape
results = run_suite(DEFAULT_SHAPES, range(5))
for r in results[::5]:
    print(r.shape, "seed", r.seed, "max abs", f"{r.max_abs_error:.1e}")
print("all passed:", all(r.passed for r in results))

worst, failures = oracle_suite(100)
print(f"vectorized vs loops: worst relative error {worst:.1e}, {len(failures)} failures")
