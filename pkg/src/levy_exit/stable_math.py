"""Special functions for symmetric alpha-stable generators.

The jump measure of a standard symmetric alpha-stable motion is
``C_alpha |y|^(-1-alpha) dy``; :func:`stable_intensity_constant` returns
``C_alpha``.  :func:`riemann_zeta` covers ``[-1, 1)``, the range needed by the
quadrature correction ``zeta(alpha - 1)``.
"""
from __future__ import annotations

import math

import numpy as np

__all__ = [
    "StabilityIndexError",
    "check_alpha",
    "stable_intensity_constant",
    "riemann_zeta",
    "reference_met_f0",
]

_LN_2PI = math.log(2.0 * math.pi)


class StabilityIndexError(ValueError):
    """Raised for a stability index outside the open interval (0, 2)."""


def check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not (0.0 < alpha < 2.0):
        raise StabilityIndexError(f"stability index must lie in (0, 2), got {alpha!r}")
    return alpha


def stable_intensity_constant(alpha: float) -> float:
    """Return ``C_alpha = alpha Gamma((1+alpha)/2) / (2^(1-alpha) sqrt(pi) Gamma(1-alpha/2))``."""
    alpha = check_alpha(alpha)
    return (
        alpha
        * math.gamma(0.5 * (1.0 + alpha))
        / (2.0 ** (1.0 - alpha) * math.sqrt(math.pi) * math.gamma(1.0 - 0.5 * alpha))
    )


def _borwein_coefficients(n: int) -> np.ndarray:
    # d_k = n * sum_{i<=k} (n+i-1)! 4^i / ((n-i)! (2i)!)
    terms = [
        math.factorial(n + i - 1) * 4**i / (math.factorial(n - i) * math.factorial(2 * i))
        for i in range(n + 1)
    ]
    return n * np.cumsum(np.array(terms, dtype=float))


_BORWEIN_N = 40
_BORWEIN_D = _borwein_coefficients(_BORWEIN_N)
_BORWEIN_K = np.arange(_BORWEIN_N, dtype=float)
_BORWEIN_SIGN = (-1.0) ** _BORWEIN_K


def _dirichlet_eta(s: float) -> float:
    """Alternating zeta ``sum (-1)^(k+1) k^-s`` for ``s > 0`` (Borwein acceleration)."""
    d = _BORWEIN_D
    terms = _BORWEIN_SIGN * (d[:-1] - d[-1]) / (_BORWEIN_K + 1.0) ** s
    return float(-terms.sum() / d[-1])


def _zeta_from_eta(s: float) -> float:
    # 1 - 2^(1-s) via expm1 keeps full relative accuracy as s -> 1.
    return _dirichlet_eta(s) / -math.expm1((1.0 - s) * math.log(2.0))


def riemann_zeta(s: float) -> float:
    """Riemann zeta function on ``-1 <= s < 1``.

    Positive arguments go through the accelerated eta series, negative ones
    through the functional equation.  Only ``s = 0`` itself needs a patch:
    near it the reflection is evaluated as the product of two well-conditioned
    ratios.
    """
    s = float(s)
    if not (-1.0 <= s < 1.0):
        raise ValueError(f"riemann_zeta supports -1 <= s < 1, got {s!r}")
    if abs(s) < 1e-8:
        return -0.5 - 0.5 * _LN_2PI * s
    if s > 0.0:
        return _zeta_from_eta(s)
    # zeta(s) = 2^s pi^(s-1) sin(pi s/2) Gamma(1-s) zeta(1-s), with
    # zeta(1-s) = eta(1-s) / (1 - 2^s) and 1 - 2^s = -expm1(s ln 2).
    t = 1.0 - s
    ratio = math.sin(0.5 * math.pi * s) / -math.expm1(s * math.log(2.0))
    return 2.0**s * math.pi ** (s - 1.0) * ratio * math.gamma(t) * _dirichlet_eta(t)


def reference_met_f0(alpha: float, x):
    """Exact mean exit time from (-1, 1) for zero drift, unit noise, no diffusion.

    ``u(x) = 2^-alpha Gamma(1/2) / (Gamma(1+alpha/2) Gamma((1+alpha)/2)) (1-x^2)^(alpha/2)``.
    Accepts scalars or arrays; raises ``ValueError`` for ``|x| > 1``.
    """
    alpha = check_alpha(alpha)
    xa = np.asarray(x, dtype=float)
    if np.any(np.abs(xa) > 1.0):
        raise ValueError("reference_met_f0 is defined for |x| <= 1")
    const = (
        2.0**-alpha
        * math.sqrt(math.pi)
        / (math.gamma(1.0 + 0.5 * alpha) * math.gamma(0.5 * (1.0 + alpha)))
    )
    u = const * np.clip(1.0 - xa * xa, 0.0, None) ** (0.5 * alpha)
    return float(u) if u.ndim == 0 else u
