"""Synthetic-data scenarios behind the four estimation figures.

Observations are produced by the forward solver at the true parameters on a
fine grid (``J_obs``) and inverted on a coarser one (``J_est``), restricted
to the inner 80% of the domain where the solution is free of the boundary
layer the central drift stencil produces for ``alpha < 1``.
"""
from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .estimator import (
    EstimateResult,
    EstimationProblem,
    FreeParameter,
    ObservationSet,
    estimate_parameters,
)
from .nonlocal_solver import (
    EP,
    MET,
    Domain,
    Profile,
    SystemParams,
    TargetSet,
    escape_probability,
    mean_exit_time,
)

__all__ = ["Scenario", "SCENARIOS", "synthetic_observations", "run_scenario", "write_figure"]

INNER_FRACTION = 0.8


@dataclass(frozen=True)
class Scenario:
    name: str
    kind: str
    drift: str
    domain: Domain
    truth: dict
    free: tuple[FreeParameter, ...]
    target: TargetSet | None = None
    fixed: dict = field(default_factory=dict)


_ALPHA = FreeParameter("alpha", 0.1, 1.9)
_BETA = FreeParameter("beta", 0.05, 3.0)
_RIGHT = TargetSet("right")

SCENARIOS: dict[int, list[Scenario]] = {
    1: [
        Scenario("fig1_small", MET, "-x", Domain(-0.1, 0.1), {"alpha": 0.6}, (_ALPHA,)),
        Scenario("fig1_large", MET, "-x", Domain(-2.0, 2.0), {"alpha": 0.6}, (_ALPHA,)),
    ],
    2: [
        Scenario("fig2_small", EP, "x - x^3", Domain(-0.1, 0.1),
                 {"alpha": 1.5}, (_ALPHA,), _RIGHT),
        Scenario("fig2_large", EP, "x - x^3", Domain(-2.0, 2.0),
                 {"alpha": 1.5}, (_ALPHA,), _RIGHT),
    ],
    3: [
        Scenario("fig3", MET, "x - beta*x^3", Domain(-1.0, 1.0),
                 {"alpha": 0.6, "beta": 1.5}, (_ALPHA, _BETA)),
    ],
    4: [
        Scenario("fig4", EP, "x - beta*x^3", Domain(-1.0, 1.0),
                 {"alpha": 1.5, "beta": 0.4}, (_ALPHA, _BETA), _RIGHT),
    ],
}


def _params(scenario: Scenario, env: dict) -> SystemParams:
    drift_env = {k: v for k, v in env.items() if k not in ("alpha", "epsilon", "d")}
    return SystemParams(env["alpha"], env.get("epsilon", 1.0), env.get("d", 0.0), drift_env)


def forward(scenario: Scenario, env: dict, J: int) -> Profile:
    params = _params(scenario, env)
    if scenario.kind == MET:
        return mean_exit_time(params, scenario.drift, scenario.domain, J)
    return escape_probability(params, scenario.drift, scenario.domain, scenario.target, J)


def synthetic_observations(scenario: Scenario, J_obs: int = 400) -> ObservationSet:
    prof = forward(scenario, scenario.truth, J_obs)
    inner = np.abs(scenario.domain.to_canonical(prof.xs)) <= INNER_FRACTION + 1e-12
    return ObservationSet.from_profile(prof, scenario.target, inner)


def run_scenario(
    scenario: Scenario, J_obs: int = 400, J_est: int = 200, threads: int = 1
) -> tuple[ObservationSet, EstimationProblem, EstimateResult]:
    obs = synthetic_observations(scenario, J_obs)
    fixed = {k: v for k, v in scenario.truth.items() if k not in {p.name for p in scenario.free}}
    problem = EstimationProblem(
        obs, scenario.drift, scenario.domain, list(scenario.free),
        {**fixed, **scenario.fixed}, J=J_est, threads=threads,
    )
    return obs, problem, estimate_parameters(problem)


def _write_rows(path: Path, header, rows):
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    os.replace(tmp, path)


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def write_figure(which: int, out_dir, J_obs: int = 400, J_est: int = 200,
                 scan_points: int = 41, threads: int = 1) -> dict[str, EstimateResult]:
    """Write observation, fit, objective-scan and estimate CSVs for one figure.

    One-parameter figures scan the objective along alpha; two-parameter
    figures scan a ``scan_points x scan_points`` box around the truth.
    """
    if which not in SCENARIOS:
        raise ValueError(f"figure must be one of {sorted(SCENARIOS)}, got {which!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    results = {}
    for sc in SCENARIOS[which]:
        obs, problem, result = run_scenario(sc, J_obs, J_est, threads)
        results[sc.name] = result
        _write_rows(out / f"{sc.name}_observations.csv", ["x", "value"],
                    [(_fmt(x), _fmt(v)) for x, v in zip(obs.xs, obs.values)])
        fit = forward(sc, result.best, J_est)
        _write_rows(out / f"{sc.name}_fit.csv", ["x", "value"],
                    [(_fmt(x), _fmt(v)) for x, v in zip(fit.xs, fit.values)])
        names = [p.name for p in sc.free]
        if len(names) == 1:
            p = sc.free[0]
            grid = np.linspace(p.lower, p.upper, scan_points)
            rows = [(_fmt(g), _fmt(problem.objective(problem.assemble([g])))) for g in grid]
        else:
            axes = [
                np.linspace(max(p.lower, 0.5 * sc.truth[p.name]),
                            min(p.upper, 1.5 * sc.truth[p.name]), scan_points)
                for p in sc.free
            ]
            rows = []
            for u in axes[0]:
                for v in axes[1]:
                    rows.append((_fmt(u), _fmt(v), _fmt(problem.objective(problem.assemble([u, v])))))
        _write_rows(out / f"{sc.name}_objective.csv", names + ["objective"], rows)
        est_rows = [(k, _fmt(v)) for k, v in result.best.items()]
        est_rows += [("objective", _fmt(result.objective_value)),
                     ("evaluations", str(result.evaluations))]
        for k, v in sc.truth.items():
            est_rows.append((f"true_{k}", _fmt(v)))
        _write_rows(out / f"{sc.name}_estimate.csv", ["name", "value"], est_rows)
    return results
