"""Finite-difference gradient oracle, independent of the tape machinery.

``fd_gradient`` evaluates a scalar function of raw numpy parameter arrays
by central differences; it never touches Tensor.grad, so it can referee
the reverse-mode results.
"""

import numpy as np

FD_STEP = 1e-6


def fd_gradient(f, arrays, step=FD_STEP):
    """Central finite differences of scalar f(list-of-arrays) w.r.t. each array."""
    grads = []
    for k, a in enumerate(arrays):
        g = np.zeros_like(a)
        flat = a.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = f(arrays)
            flat[i] = orig - step
            lo = f(arrays)
            flat[i] = orig
            gflat[i] = (hi - lo) / (2.0 * step)
        grads.append(g)
    return grads


def rel_err(a, b):
    """Max elementwise |a-b| / max(1, |a|, |b|); absolute below magnitude 1."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0
