"""Central finite differences, used as an independent check on backward()."""

import numpy as np

# below this magnitude gradients are compared in absolute terms
MAGNITUDE_FLOOR = 1e-3


def numerical_gradient(f, x, step=1e-6):
    """d f / d x by central differences; ``f`` maps nothing to a float and reads ``x`` in place."""
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + step
        f_plus = f()
        x[idx] = orig - step
        f_minus = f()
        x[idx] = orig
        grad[idx] = (f_plus - f_minus) / (2.0 * step)
    return grad


def relative_error(analytic, numeric, floor=MAGNITUDE_FLOOR):
    """Elementwise |a - n| / max(|a|, |n|, floor); returns the max over entries."""
    a = np.asarray(analytic, dtype=float)
    n = np.asarray(numeric, dtype=float)
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))
