"""High-precision reference values (mpmath, 50 digits) for the schedule formulas."""

import mpmath
import numpy as np

mpmath.mp.dps = 50


# independent high-precision references
def ref_sparsity(P, alpha, tau, k):
    P, alpha = mpmath.mpf(P), mpmath.mpf(alpha)
    return P / (1 + mpmath.exp(-alpha * (k - mpmath.mpf(tau) / 2)))


def ref_weight_lr(eta0, tau, k):
    return mpmath.mpf(eta0) / 2 * (1 + mpmath.cos(mpmath.pi * k / tau))


def ref_mask_lr(eta0, P, alpha, tau, k):
    return ref_weight_lr(eta0, tau, k) * ref_sparsity(P, alpha, tau, k) / mpmath.mpf(P)


def grid(n=1000, seed=0):
    rng = np.random.default_rng(seed)
    for _ in range(n):
        tau = int(rng.integers(1, 400))
        yield (float(rng.uniform(0.01, 0.99)), float(rng.choice([0.05, 0.1, 0.5, 1.0, 2.0, rng.uniform(0.01, 3)])),
               tau, int(rng.integers(0, tau + 1)), float(rng.uniform(0.001, 1.0)))
