"""Parameter recovery from observed exit-time or escape-probability profiles.

The misfit is the relative squared Euclidean distance between the forward
solution (interpolated to the observation points) and the observations.  One
free parameter is found by a bounded Brent search (golden section with
parabolic steps); several by Nelder-Mead in logit coordinates with a lattice
of starting points.
"""
from __future__ import annotations

import itertools
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, NamedTuple, Sequence

import numpy as np
import scipy.optimize

from .drift_dsl import free_parameters, parse_drift
from .nonlocal_solver import (
    EP,
    MET,
    Domain,
    Profile,
    SchemeQualityWarning,
    SystemParams,
    TargetSet,
    escape_probability,
    mean_exit_time,
)

__all__ = [
    "ObservationSet", "FreeParameter", "EstimationProblem", "EstimateResult",
    "ScalarMinimum", "MultiMinimum", "EstimationError",
    "relative_l2_objective", "minimize_scalar", "minimize_multi", "estimate_parameters",
]

_GOLDEN = 0.5 * (3.0 - math.sqrt(5.0))
SYSTEM_NAMES = ("alpha", "epsilon", "d")


class EstimationError(RuntimeError):
    pass


@dataclass(frozen=True)
class ObservationSet:
    xs: np.ndarray
    values: np.ndarray
    kind: str
    target: TargetSet | None = None

    def __post_init__(self):
        xs = np.asarray(self.xs, dtype=float)
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "values", values)
        if xs.ndim != 1 or xs.shape != values.shape or xs.size == 0:
            raise ValueError("observations need equal-length, non-empty 1-d xs and values")
        if np.any(np.diff(xs) <= 0):
            raise ValueError("observation locations must be strictly increasing")
        if not np.all(np.isfinite(values)) or not np.all(np.isfinite(xs)):
            raise ValueError("observations must be finite")
        if self.kind not in (MET, EP):
            raise ValueError(f"unknown observation kind {self.kind!r}")
        if self.kind == EP:
            if self.target is None:
                raise ValueError("escape-probability observations need a target set")
            if values.min() < 0 or values.max() > 1:
                raise ValueError("escape-probability observations must lie in [0, 1]")

    @classmethod
    def from_profile(cls, profile: Profile, target: TargetSet | None = None, mask=None):
        keep = slice(None) if mask is None else np.asarray(mask)
        return cls(profile.xs[keep], profile.values[keep], profile.kind, target)


def relative_l2_objective(model: Profile, obs: ObservationSet) -> float:
    """``sum (model(x_i) - v_i)^2 / sum v_i^2`` with ``model`` linearly interpolated."""
    denom = float(np.dot(obs.values, obs.values))
    if denom == 0.0:
        raise ValueError("relative misfit undefined for all-zero observations")
    lo, hi = model.xs[0], model.xs[-1]
    if obs.xs[0] < lo or obs.xs[-1] > hi:
        raise ValueError(
            f"observations span [{obs.xs[0]}, {obs.xs[-1]}] beyond the model nodes [{lo}, {hi}]"
        )
    resid = model.interpolate(obs.xs) - obs.values
    return float(np.dot(resid, resid) / denom)


class ScalarMinimum(NamedTuple):
    x: float
    fun: float
    nfev: int
    trace: list


def minimize_scalar(
    objective: Callable[[float], float],
    lo: float,
    hi: float,
    xtol: float = 1e-4,
    max_eval: int = 200,
    allow_inf: bool = False,
) -> ScalarMinimum:
    """Bounded Brent minimization of ``objective`` on ``[lo, hi]``.

    Parabolic steps are taken only when they fall inside the bracket and
    shrink it; otherwise a golden-section step is used.  Stops once the
    bracket is narrower than ``xtol * (1 + |x|)`` or after ``max_eval``
    evaluations, and returns the best point evaluated.  Non-finite values
    abort unless ``allow_inf`` is set, in which case ``+inf`` is accepted as a
    failed probe.
    """
    if not lo < hi:
        raise ValueError(f"need lo < hi, got [{lo}, {hi}]")
    trace: list[tuple[float, float]] = []

    def f(x):
        fx = float(objective(x))
        trace.append((x, fx))
        if math.isnan(fx) or (math.isinf(fx) and not (allow_inf and fx > 0)):
            raise FloatingPointError(f"objective returned {fx} at x = {x!r}")
        return fx

    a, b = float(lo), float(hi)
    x = w = v = a + _GOLDEN * (b - a)
    fx = fw = fv = f(x)
    d = e = 0.0
    while len(trace) < max_eval:
        xm = 0.5 * (a + b)
        tol1 = 0.25 * xtol * (1.0 + abs(x)) + 1e-15
        tol2 = 2.0 * tol1
        if abs(x - xm) <= tol2 - 0.5 * (b - a):
            break
        golden = True
        if abs(e) > tol1:
            r = (x - w) * (fx - fv)
            q = (x - v) * (fx - fw)
            p = (x - v) * q - (x - w) * r
            q = 2.0 * (q - r)
            if q > 0.0:
                p = -p
            q = abs(q)
            r, e = e, d
            if abs(p) < abs(0.5 * q * r) and q * (a - x) < p < q * (b - x):
                d = p / q
                u = x + d
                if u - a < tol2 or b - u < tol2:
                    d = math.copysign(tol1, xm - x)
                golden = False
        if golden:
            e = (a - x) if x >= xm else (b - x)
            d = _GOLDEN * e
        u = x + (d if abs(d) >= tol1 else math.copysign(tol1, d))
        fu = f(u)
        if fu <= fx:
            if u >= x:
                a = x
            else:
                b = x
            v, fv, w, fw, x, fx = w, fw, x, fx, u, fu
        else:
            if u < x:
                a = u
            else:
                b = u
            if fu <= fw or w == x:
                v, fv, w, fw = w, fw, u, fu
            elif fu <= fv or v == x or v == w:
                v, fv = u, fu
    best_x, best_f = min(trace, key=lambda t: t[1])
    return ScalarMinimum(best_x, best_f, len(trace), trace)


class MultiMinimum(NamedTuple):
    x: np.ndarray
    fun: float
    nfev: int
    trace: list  # (start index, step index, point, value)


def _to_box(u, lo, hi):
    return lo + (hi - lo) / (1.0 + np.exp(-u))


def _from_box(v, lo, hi):
    t = (v - lo) / (hi - lo)
    return np.log(t / (1.0 - t))


def minimize_multi(
    objective: Callable[[np.ndarray], float],
    bounds: Sequence[tuple[float, float]],
    multistart: int = 3,
    xatol: float = 1e-4,
    max_evaluations: int = 200,
    threads: int = 1,
) -> MultiMinimum:
    """Nelder-Mead on logit-transformed box coordinates from a lattice of starts.

    Starts are the ``multistart**dim`` interior lattice points of the box;
    ``max_evaluations`` budgets each start.  A start whose first value is
    non-finite is abandoned.  ``xatol`` applies in logit units, where one unit
    moves a coordinate by at most a quarter of its range.
    """
    lo = np.array([b[0] for b in bounds], dtype=float)
    hi = np.array([b[1] for b in bounds], dtype=float)
    if lo.size < 2:
        raise ValueError("minimize_multi needs at least two dimensions; use minimize_scalar")
    if not np.all(lo < hi) or not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        raise ValueError("bounds must be finite with lower < upper")
    fractions = (np.arange(multistart) + 1.0) / (multistart + 1.0)
    starts = [lo + (hi - lo) * np.array(p) for p in itertools.product(fractions, repeat=lo.size)]

    def run(index, start):
        steps: list = []

        def g(u):
            v = _to_box(np.asarray(u, dtype=float), lo, hi)
            fv = float(objective(v))
            steps.append((index, len(steps), v, fv))
            return fv if math.isfinite(fv) else math.inf

        u0 = _from_box(start, lo, hi)
        if not math.isfinite(g(u0)):
            return steps
        simplex = np.vstack([u0] + [u0 + 0.5 * np.eye(lo.size)[i] for i in range(lo.size)])
        scipy.optimize.minimize(
            g,
            u0,
            method="Nelder-Mead",
            options=dict(
                initial_simplex=simplex,
                xatol=xatol,
                fatol=1e-14,
                maxfev=max(max_evaluations - 1, 1),
            ),
        )
        return steps

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_start = list(pool.map(run, range(len(starts)), starts))
    else:
        per_start = [run(i, s) for i, s in enumerate(starts)]

    trace = [entry for steps in per_start for entry in steps]
    finite = [t for t in trace if math.isfinite(t[3])]
    if not finite:
        raise EstimationError("objective was non-finite at every start point")
    best = min(finite, key=lambda t: t[3])
    return MultiMinimum(np.array(best[2]), best[3], len(trace), trace)


@dataclass(frozen=True)
class FreeParameter:
    name: str
    lower: float
    upper: float

    def __post_init__(self):
        if not (math.isfinite(self.lower) and math.isfinite(self.upper) and self.lower < self.upper):
            raise ValueError(f"bounds for {self.name!r} must be finite with lower < upper")
        if self.name == "alpha" and not (0.0 < self.lower and self.upper < 2.0):
            raise ValueError("alpha bounds must lie inside (0, 2)")

    @classmethod
    def parse(cls, text: str) -> "FreeParameter":
        """``name:lower:upper``."""
        parts = text.split(":")
        if len(parts) != 3:
            raise ValueError(f"free parameter must be name:lower:upper, got {text!r}")
        return cls(parts[0].strip(), float(parts[1]), float(parts[2]))


@dataclass
class EstimationProblem:
    observations: ObservationSet
    drift: str
    domain: Domain
    free: list[FreeParameter]
    fixed: dict[str, float] = field(default_factory=dict)
    J: int = 100
    scheme: str = "simplified"
    method: str = "lu"
    xtol: float = 1e-4
    multistart: int = 3
    max_evaluations: int = 200
    threads: int = 1

    def __post_init__(self):
        self.expr = parse_drift(self.drift)
        drift_names = free_parameters(self.expr)
        names = [p.name for p in self.free]
        if not names:
            raise ValueError("at least one free parameter is required")
        if len(set(names)) != len(names):
            raise ValueError("free parameters must be distinct")
        allowed = set(SYSTEM_NAMES) | set(drift_names)
        for name in list(names) + list(self.fixed):
            if name not in allowed:
                raise ValueError(f"unknown parameter {name!r}; expected one of {sorted(allowed)}")
        clash = set(names) & set(self.fixed)
        if clash:
            raise ValueError(f"parameters both free and fixed: {sorted(clash)}")
        self.fixed = {"epsilon": 1.0, "d": 0.0, **self.fixed}
        for name in ("alpha",) + drift_names:
            if name not in names and name not in self.fixed:
                raise ValueError(f"parameter {name!r} is neither free nor fixed")
        if not np.all(self.domain.contains(self.observations.xs)):
            raise ValueError("observation locations must lie inside the domain")

    def assemble(self, values: Sequence[float]) -> dict[str, float]:
        env = dict(self.fixed)
        env.update({p.name: float(v) for p, v in zip(self.free, values)})
        return env

    def forward(self, env: Mapping[str, float]) -> Profile:
        drift_env = {k: v for k, v in env.items() if k not in SYSTEM_NAMES}
        params = SystemParams(env["alpha"], env["epsilon"], env["d"], drift_env)
        obs = self.observations
        if obs.kind == MET:
            prof = mean_exit_time(params, self.expr, self.domain, self.J, self.scheme, self.method)
            edge = np.zeros(2)
        else:
            prof = escape_probability(
                params, self.expr, self.domain, obs.target, self.J, self.scheme, self.method
            )
            edge = obs.target.contains([self.domain.a, self.domain.b], self.domain).astype(float)
        # exterior values at the endpoints, as used by the scheme's boundary nodes
        xs = np.concatenate([[self.domain.a], prof.xs, [self.domain.b]])
        values = np.concatenate([[edge[0]], prof.values, [edge[1]]])
        return Profile(xs, values, prof.kind)

    def objective(self, env: Mapping[str, float]) -> float:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", SchemeQualityWarning)
            return relative_l2_objective(self.forward(env), self.observations)


@dataclass
class EstimateResult:
    best: dict[str, float]
    objective_value: float
    evaluations: int
    trace: list[tuple[dict[str, float], float]]
    failures: list[tuple[dict[str, float], str]] = field(default_factory=list)


def estimate_parameters(problem: EstimationProblem) -> EstimateResult:
    """Minimize the relative misfit over the free parameters of ``problem``.

    A forward solve that fails at a probed point counts as ``+inf`` and is
    listed in ``failures``; estimation fails only if every probe fails.
    """
    trace: list[tuple[dict[str, float], float]] = []
    failures: list[tuple[dict[str, float], str]] = []

    def evaluate(vec) -> float:
        env = problem.assemble(np.atleast_1d(vec))
        try:
            value = problem.objective(env)
        except (ArithmeticError, ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
            failures.append((env, f"{type(exc).__name__}: {exc}"))
            value = math.inf
        trace.append((env, value))
        return value

    free = problem.free
    if len(free) == 1:
        p = free[0]
        res = minimize_scalar(
            lambda v: evaluate([v]), p.lower, p.upper, problem.xtol,
            problem.max_evaluations, allow_inf=True,
        )
        best_vec, best_val = [res.x], res.fun
    else:
        # multistart evaluations may interleave; rebuild the trace in (start, step) order
        res = minimize_multi(
            evaluate, [(p.lower, p.upper) for p in free], problem.multistart,
            problem.xtol, problem.max_evaluations, problem.threads,
        )
        trace = [(problem.assemble(pt), val) for _, _, pt, val in res.trace]
        best_vec, best_val = res.x, res.fun
    if not math.isfinite(best_val):
        raise EstimationError(f"every forward solve failed; first failure: {failures[0][1]}")
    return EstimateResult(problem.assemble(best_vec), best_val, len(trace), trace, failures)
