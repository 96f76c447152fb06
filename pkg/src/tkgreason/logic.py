"""Many-valued (product) logic on vectors in [0, 1]^d.

The formulas are written with plain ``+ - *`` so they also apply to
:class:`tkgreason.autodiff.Tensor` operands; range checks only run for
numpy/float inputs.
"""

from __future__ import annotations

from functools import reduce

import numpy as np

TOL = 1e-9


def _check(x):
    if isinstance(x, (int, float, np.ndarray, np.floating, list, tuple)):
        a = np.asarray(x, dtype=np.float64)
        if a.size == 0:
            raise ValueError("empty logic vector")
        if np.any(a < -TOL) or np.any(a > 1 + TOL) or np.any(np.isnan(a)):
            raise ValueError("logic values must lie in [0, 1]")
        return np.clip(a, 0.0, 1.0)
    return x


def _pair(a, b):
    a, b = _check(a), _check(b)
    if isinstance(a, np.ndarray) and isinstance(b, np.ndarray) and a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return a, b


def not_(a):
    a = _check(a)
    return 1.0 - a


def and_(a, b):
    a, b = _pair(a, b)
    return a * b


def or_(a, b):
    a, b = _pair(a, b)
    return a + b - a * b


def impl_(a, b):
    a, b = _pair(a, b)
    return 1.0 - a * (1.0 - b)


def xor_(a, b):
    a, b = _pair(a, b)
    return a + b - 2.0 * a * b


def _seq(xs):
    xs = list(xs)
    if not xs:
        raise ValueError("need at least one operand")
    if any(not isinstance(x, (int, float, np.ndarray, np.floating, list, tuple)) for x in xs):
        return [_check(x) for x in xs]
    arrays = [np.asarray(x, dtype=np.float64) for x in xs]
    shapes = {a.shape for a in arrays}
    if len(shapes) > 1:
        raise ValueError(f"dimension mismatch: {sorted(shapes)}")
    # one range check over all operands
    return list(_check(np.stack(arrays)))


def nary_and(xs):
    """Component-wise product of all operands."""
    xs = _seq(xs)
    return reduce(lambda r, x: r * x, xs[1:], xs[0])


def nary_or(xs):
    """Fold ``r <- r + x - r*x`` from r = 0; equals the inclusion-exclusion sum in O(n*d)."""
    xs = _seq(xs)
    result = xs[0]  # 0 + x - 0*x
    for x in xs[1:]:
        result = result + x - result * x
    return result
