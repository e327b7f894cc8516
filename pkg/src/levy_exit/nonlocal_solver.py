"""Finite-difference solver for mean exit time and escape probability.

Both quantities solve ``A w = g`` in ``D = (a, b)`` with ``w`` prescribed on
all of the exterior, where

    A w = d/2 w'' + f(x) w' + eps C_alpha PV int (w(x+y) - w(x)) |y|^(-1-alpha) dy.

Every problem is mapped affinely onto the canonical interval ``(-1, 1)``.
There the jump integral is split at the domain boundary: the part landing in
``[-1, 1]`` is a punched-hole trapezoidal sum on the grid ``z_j = j/J`` (the
``k = 0`` node omitted, end nodes half-weighted) and the part landing outside
is integrated in closed form.  The leading quadrature error
``-zeta(alpha-1) w'' h^(2-alpha)`` is cancelled by folding it into the
second-difference coefficient.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .drift_dsl import DriftEvalError, DriftExpr, eval_drift, parse_drift
from .linear import LinearSystem, solve_linear
from .stable_math import check_alpha, riemann_zeta, stable_intensity_constant

__all__ = [
    "SystemParams", "Domain", "TargetSet", "Grid", "CanonicalParams", "Profile",
    "AssemblyError", "SchemeQualityWarning",
    "build_grid", "canonicalize_params", "exterior_mass",
    "assemble_met_system", "assemble_ep_system",
    "mean_exit_time", "escape_probability",
]

SCHEMES = ("simplified", "split")
MET = "mean-exit-time"
EP = "escape-probability"


class AssemblyError(ValueError):
    pass


class SchemeQualityWarning(RuntimeWarning):
    """A solved profile left its physical range by more than round-off."""


@dataclass(frozen=True)
class SystemParams:
    """Stability index, noise intensity, Gaussian diffusion and drift parameters."""

    alpha: float
    epsilon: float = 1.0
    d: float = 0.0
    drift_env: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        check_alpha(self.alpha)
        if not (self.epsilon > 0 and math.isfinite(self.epsilon)):
            raise ValueError(f"epsilon must be positive, got {self.epsilon!r}")
        if not (self.d >= 0 and math.isfinite(self.d)):
            raise ValueError(f"d must be non-negative, got {self.d!r}")


@dataclass(frozen=True)
class Domain:
    a: float
    b: float

    def __post_init__(self):
        if not (math.isfinite(self.a) and math.isfinite(self.b) and self.a < self.b):
            raise ValueError(f"domain needs finite a < b, got ({self.a!r}, {self.b!r})")

    @property
    def center(self) -> float:
        return 0.5 * (self.a + self.b)

    @property
    def radius(self) -> float:
        return 0.5 * (self.b - self.a)

    def to_canonical(self, x):
        return (2.0 * np.asarray(x, dtype=float) - self.a - self.b) / (self.b - self.a)

    def to_original(self, z):
        return self.center + self.radius * np.asarray(z, dtype=float)

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return (x > self.a) & (x < self.b)


@dataclass(frozen=True)
class TargetSet:
    """Exterior landing set ``E``.

    ``side`` is ``"left"`` (``(-inf, a]``), ``"right"`` (``[b, inf)``),
    ``"both"`` (all of the exterior) or ``"interval"`` with explicit closed
    bounds ``lo``/``hi`` (either may be infinite).
    """

    side: str
    lo: float | None = None
    hi: float | None = None

    def __post_init__(self):
        if self.side not in ("left", "right", "both", "interval"):
            raise ValueError(f"unknown target side {self.side!r}")
        if self.side == "interval":
            if self.lo is None or self.hi is None or not (self.lo < self.hi):
                raise ValueError("interval target needs lo < hi")

    @classmethod
    def parse(cls, text: str) -> "TargetSet":
        """``left``, ``right``, ``both`` or ``LO:HI`` (``inf``/``-inf`` allowed)."""
        text = text.strip()
        if text in ("left", "right", "both"):
            return cls(text)
        parts = text.split(":")
        if len(parts) != 2:
            raise ValueError(f"target must be left|right|both|LO:HI, got {text!r}")
        lo, hi = (float(p) for p in parts)
        return cls("interval", lo, hi)

    def intervals(self, domain: Domain) -> list[tuple[float, float]]:
        """Closed intervals making up ``E``; rejects sets meeting ``(a, b)`` or empty ones."""
        if self.side == "left":
            out = [(-math.inf, domain.a)]
        elif self.side == "right":
            out = [(domain.b, math.inf)]
        elif self.side == "both":
            out = [(-math.inf, domain.a), (domain.b, math.inf)]
        else:
            if self.lo < domain.b and self.hi > domain.a:
                raise ValueError(
                    f"target [{self.lo}, {self.hi}] intersects the domain ({domain.a}, {domain.b})"
                )
            out = [(self.lo, self.hi)]
        return out

    def complement(self, domain: Domain) -> "TargetSet":
        """Exterior minus this set, for the half-line targets."""
        swap = {"left": "right", "right": "left"}
        if self.side not in swap:
            raise ValueError("complement is only defined for left/right targets")
        return TargetSet(swap[self.side])

    def contains(self, x, domain: Domain) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        hit = np.zeros(x.shape, dtype=bool)
        for lo, hi in self.intervals(domain):
            hit |= (x >= lo) & (x <= hi)
        return hit


@dataclass(frozen=True)
class Grid:
    """Uniform grid ``z_j = j h``, ``h = 1/J``, ``-2J <= j <= 2J`` on canonical ``[-2, 2]``.

    Unknowns live at ``|j| < J``; ``j = +-J`` are the boundary nodes.
    """

    domain: Domain
    J: int

    @property
    def h(self) -> float:
        return 1.0 / self.J

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(-2 * self.J, 2 * self.J + 1) * self.h

    @property
    def interior(self) -> np.ndarray:
        return np.arange(-self.J + 1, self.J) * self.h

    @property
    def xs(self) -> np.ndarray:
        """Interior nodes in original coordinates."""
        return self.domain.to_original(self.interior)


def build_grid(domain: Domain, J: int) -> Grid:
    if int(J) != J or J < 2:
        raise ValueError(f"grid parameter J must be an integer >= 2, got {J!r}")
    return Grid(domain, int(J))


@dataclass(frozen=True)
class CanonicalParams:
    """Parameters of the problem transported to ``(-1, 1)`` by ``x = center + radius z``."""

    alpha: float
    epsilon: float
    d: float
    center: float
    radius: float
    drift_env: Mapping[str, float]

    def drift(self, expr: DriftExpr, z) -> np.ndarray:
        """Rescaled drift ``f(center + radius z) / radius``."""
        try:
            return eval_drift(expr, self.drift_env, self.center + self.radius * np.asarray(z)) / self.radius
        except DriftEvalError as exc:
            raise AssemblyError(f"drift evaluation failed: {exc}") from exc


def canonicalize_params(params: SystemParams, domain: Domain) -> CanonicalParams:
    """Scale laws ``d' = d/r^2``, ``f' = f/r``, ``eps' = eps/r^alpha`` with ``r`` the half-width."""
    r = domain.radius
    return CanonicalParams(
        alpha=params.alpha,
        epsilon=params.epsilon / r**params.alpha,
        d=params.d / r**2,
        center=domain.center,
        radius=r,
        drift_env=dict(params.drift_env),
    )


def exterior_mass(x, interval: tuple[float, float], alpha: float, epsilon: float = 1.0):
    """Jump intensity from ``x`` into ``interval``: ``eps C_alpha int |z-x|^(-1-alpha) dz``.

    ``x`` (scalar or array) must lie strictly outside the closed interval.
    """
    alpha = check_alpha(alpha)
    lo, hi = interval
    if not lo < hi:
        raise ValueError(f"empty interval ({lo}, {hi})")
    xa = np.asarray(x, dtype=float)
    right = xa < lo
    left = xa > hi
    if not np.all(right | left):
        raise ValueError("exterior_mass needs x strictly outside the interval")
    near = np.where(right, lo - xa, xa - hi)
    far = np.where(right, hi - xa, xa - lo)
    with np.errstate(divide="ignore"):
        mass = near**-alpha - np.where(np.isinf(far), 0.0, far) ** -alpha
    mass = np.where(np.isinf(far), near**-alpha, mass)
    out = epsilon * stable_intensity_constant(alpha) / alpha * mass
    return float(out) if out.ndim == 0 else out


def _trapezoid_weights(k_lo: int, k_hi: int) -> tuple[np.ndarray, np.ndarray]:
    """Offsets ``k_lo..k_hi`` with end weights 1/2; a single-point range has weight 0."""
    ks = np.arange(k_lo, k_hi + 1)
    w = np.ones(ks.size)
    if ks.size == 1:
        w[:] = 0.0
    else:
        w[0] = w[-1] = 0.5
    return ks, w


def _extended_operator(canon: CanonicalParams, drift: DriftExpr, J: int, scheme: str) -> np.ndarray:
    """Rows ``j = -J+1..J-1`` acting on all nodes ``m = -J..J`` (columns ``m + J``)."""
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; use one of {SCHEMES}")
    if int(J) != J or J < 2:
        raise ValueError(f"grid parameter J must be an integer >= 2, got {J!r}")
    alpha, eps = canon.alpha, canon.epsilon
    h = 1.0 / J
    n = 2 * J - 1
    j = np.arange(-J + 1, J)
    z = j * h
    rows = np.arange(n)
    diag_cols = rows + 1

    c_alpha = stable_intensity_constant(alpha)
    jump = eps * c_alpha
    c_h = 0.5 * canon.d - jump * riemann_zeta(alpha - 1.0) * h ** (2.0 - alpha)
    f = np.broadcast_to(canon.drift(drift, z), z.shape)

    A = np.zeros((n, 2 * J + 1))
    # |x_k|^(-1-alpha) weights of the punched-hole sum, indexed by |k|
    absk = np.arange(2 * J + 1, dtype=float)
    q = np.zeros(2 * J + 1)
    q[1:] = jump * h * (absk[1:] * h) ** (-1.0 - alpha)

    if scheme == "simplified":
        cols = np.arange(2 * J + 1)
        W = q[np.abs(cols[None, :] - diag_cols[:, None])]
        W[:, 0] *= 0.5
        W[:, -1] *= 0.5
        A += W
        A[rows, diag_cols] -= W.sum(axis=1)
    else:
        for r, jj in enumerate(j):
            if jj >= 0:
                plain = (-J - jj, -J + jj)
                desing = (-J + jj, J - jj)
            else:
                plain = (J + jj, J - jj)
                desing = (-J - jj, J + jj)
            for (k_lo, k_hi), compensated in ((plain, False), (desing, True)):
                ks, w = _trapezoid_weights(k_lo, k_hi)
                keep = ks != 0
                ks, w = ks[keep], w[keep]
                wq = w * q[np.abs(ks)]
                np.add.at(A[r], ks + jj + J, wq)
                A[r, jj + J] -= wq.sum()
                if compensated:
                    coupling = np.sum(wq * ks * h) / (2.0 * h)
                    A[r, jj + J + 1] -= coupling
                    A[r, jj + J - 1] += coupling

    A[rows, diag_cols] -= jump / alpha * ((1.0 + z) ** -alpha + (1.0 - z) ** -alpha)
    A[rows, diag_cols] -= 2.0 * c_h / h**2
    A[rows, diag_cols - 1] += c_h / h**2 - f / (2.0 * h)
    A[rows, diag_cols + 1] += c_h / h**2 + f / (2.0 * h)
    if not np.all(np.isfinite(A)):
        raise AssemblyError("assembled operator has non-finite entries")
    return A


def assemble_met_system(
    canon: CanonicalParams, drift: DriftExpr, grid: Grid, scheme: str = "simplified"
) -> LinearSystem:
    """Mean exit time system ``M U = -1`` with ``U = 0`` on the exterior."""
    A = _extended_operator(canon, drift, grid.J, scheme)
    M = np.ascontiguousarray(A[:, 1:-1])
    return LinearSystem(M, -np.ones(M.shape[0]))


def assemble_ep_system(
    canon: CanonicalParams,
    drift: DriftExpr,
    grid: Grid,
    target: TargetSet,
    scheme: str = "simplified",
) -> LinearSystem:
    """Escape probability system: same operator, exterior data 1 on ``E``.

    Boundary nodes ``z = +-1`` enter the trapezoidal sum and the difference
    stencils with their exterior value; mass landing beyond them is exact.
    """
    A = _extended_operator(canon, drift, grid.J, scheme)
    dom = grid.domain
    z_int = grid.interior
    rhs = np.zeros(z_int.size)
    for lo, hi in target.intervals(dom):
        lo_c, hi_c = (float(dom.to_canonical(v)) if math.isfinite(v) else v for v in (lo, hi))
        rhs -= exterior_mass(z_int, (lo_c, hi_c), canon.alpha, canon.epsilon)
    boundary = target.contains(np.array([dom.a, dom.b]), dom).astype(float)
    rhs -= A[:, 0] * boundary[0] + A[:, -1] * boundary[1]
    M = np.ascontiguousarray(A[:, 1:-1])
    return LinearSystem(M, rhs)


@dataclass(frozen=True)
class Profile:
    """Values of a solved or observed quantity at increasing locations ``xs``."""

    xs: np.ndarray
    values: np.ndarray
    kind: str
    stderr: np.ndarray | None = None
    censored_fraction: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in (MET, EP):
            raise ValueError(f"unknown profile kind {self.kind!r}")
        if np.shape(self.xs) != np.shape(self.values):
            raise ValueError("xs and values must have equal length")

    def __len__(self):
        return len(self.xs)

    def interpolate(self, x) -> np.ndarray:
        return np.interp(np.asarray(x, dtype=float), self.xs, self.values)


def _as_expr(drift) -> DriftExpr:
    return parse_drift(drift) if isinstance(drift, str) else drift


def _solve(system: LinearSystem, method: str, solver_options: Mapping | None) -> np.ndarray:
    return solve_linear(system, method, **(solver_options or {}))


def mean_exit_time(
    params: SystemParams,
    drift,
    domain: Domain,
    J: int,
    scheme: str = "simplified",
    method: str = "lu",
    solver_options: Mapping | None = None,
) -> Profile:
    """Mean exit time from ``domain`` at the ``2J - 1`` interior grid nodes."""
    expr = _as_expr(drift)
    grid = build_grid(domain, J)
    canon = canonicalize_params(params, domain)
    u = _solve(assemble_met_system(canon, expr, grid, scheme), method, solver_options)
    if u.min() < -1e-8:
        warnings.warn(
            f"mean exit time has negative values (min {u.min():.3e}); refine the grid",
            SchemeQualityWarning,
            stacklevel=2,
        )
    return Profile(grid.xs, u, MET)


def escape_probability(
    params: SystemParams,
    drift,
    domain: Domain,
    target: TargetSet,
    J: int,
    scheme: str = "simplified",
    method: str = "lu",
    solver_options: Mapping | None = None,
) -> Profile:
    """Probability of first landing in ``target`` when leaving ``domain``."""
    expr = _as_expr(drift)
    grid = build_grid(domain, J)
    canon = canonicalize_params(params, domain)
    p = _solve(assemble_ep_system(canon, expr, grid, target, scheme), method, solver_options)
    if p.min() < -1e-8 or p.max() > 1.0 + 1e-8:
        warnings.warn(
            f"escape probability outside [0, 1] (range {p.min():.3e}..{p.max():.3e})",
            SchemeQualityWarning,
            stacklevel=2,
        )
    return Profile(grid.xs, p, EP)
