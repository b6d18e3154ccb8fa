"""Small statistical helpers: weighted polynomial fits and KS gates."""

from __future__ import annotations

import math

import numpy as np

__all__ = ["wls_polyfit", "ks_critical", "KS_CONST_1E3"]

# two-sided two-sample Kolmogorov-Smirnov critical constant at the 0.1% level
KS_CONST_1E3 = 1.94947


def wls_polyfit(x, y, se, powers):
    """Weighted least squares of y on columns x**k, k in ``powers``.

    Weights are 1/se^2.  Returns (coeffs, cov) where cov is the parameter
    covariance under the stated per-point standard errors (not rescaled by
    the residual chi^2 — the se's are taken at face value).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    se = np.asarray(se, dtype=float)
    if np.any(se <= 0):
        raise ValueError("standard errors must be positive")
    design = np.column_stack([x**k for k in powers])
    w = 1.0 / se
    a = design * w[:, None]
    b = y * w
    coeffs, *_ = np.linalg.lstsq(a, b, rcond=None)
    cov = np.linalg.inv(a.T @ a)
    return coeffs, cov


def ks_critical(n: int, m: int, const: float = KS_CONST_1E3) -> float:
    """Two-sample KS critical distance c * sqrt((n+m)/(n*m))."""
    return const * math.sqrt((n + m) / (n * m))
