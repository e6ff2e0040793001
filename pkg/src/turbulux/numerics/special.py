"""Scaled modified Bessel functions and the first-order Marcum Q-function."""

import numpy as np
from scipy import special as sp
from scipy.stats import ncx2

__all__ = ["bessel_i_scaled", "marcum_q1", "marcum_p1"]


def bessel_i_scaled(order, x):
    """Return ``exp(-x) * I_order(x)`` for order 0 or 1 and ``x >= 0``.

    Backed by the Cephes Chebyshev expansions in :mod:`scipy.special`, which
    stay finite for any ``x`` (no overflow of the unscaled function).
    """
    x = np.asarray(x, dtype=float)
    if np.any(x < 0) or np.any(np.isnan(x)):
        raise ValueError("bessel_i_scaled: x must be >= 0")
    if order == 0:
        out = sp.i0e(x)
    elif order == 1:
        out = sp.i1e(x)
    else:
        raise ValueError("bessel_i_scaled: order must be 0 or 1")
    return out if out.ndim else float(out)


def _marcum(a, b, upper):
    a, b = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    if np.any(a < 0) or np.any(b < 0) or not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValueError("Marcum Q: arguments must be finite and >= 0")
    # Q_1(a, b) is the survival function of a noncentral chi-square with two
    # degrees of freedom and noncentrality a^2, evaluated at b^2.
    dist = ncx2(2.0, a * a)
    out = dist.sf(b * b) if upper else dist.cdf(b * b)
    out = np.clip(out, 0.0, 1.0)
    return out if out.ndim else float(out)


def marcum_q1(a, b):
    """First-order Marcum Q-function ``Q_1(a, b)``.

    ``Q_1(a, b)`` is the probability that a Rice variable with noncentrality
    ``a`` and unit scale exceeds ``b``.  Both tails come from the Boost
    noncentral chi-square behind :mod:`scipy.stats`, which sums each tail
    directly, so neither the value nor its complement suffers cancellation.
    Use :func:`marcum_p1` when the complement ``1 - Q_1`` is small.
    """
    return _marcum(a, b, upper=True)


def marcum_p1(a, b):
    """Complement ``1 - Q_1(a, b)``, evaluated as a lower tail in its own right."""
    return _marcum(a, b, upper=False)
