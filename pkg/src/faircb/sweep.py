"""Seeded experiment sweeps over sample budgets and algorithms.

Every run draws its generator from ``SeedSequence(base_seed,
spawn_key=(budget_index, algorithm_id, run_index))``, so any row of the
output is reproducible in isolation.  A run that raises is recorded as a
failure and scored as an error.
"""

from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .allocation import cheap_arm_cap
from .bandit import RunTrace, run_csr, run_two_stage
from .divergence import DivergenceSet
from .io import instance_digest
from .model import Instance
from .oracles import oracle_report
from .sampling import make_sampler

__all__ = ["ALGORITHMS", "SweepRow", "ErrorCurve", "default_budget",
           "run_algorithm", "run_sweep", "error_curve_to_csv", "error_curve_to_json"]

# Canonical ids; seeding uses positions in this tuple, not in the caller's list.
ALGORITHMS = ("csr-v1", "csr-v2", "ts-v1", "ts-v2")


@dataclass(frozen=True)
class SweepRow:
    budget: int
    algorithm: str
    runs: int
    misidentifications: int
    no_fair_arm: int
    failures: int
    error_rate: float
    wall_time_s: float
    base_seed: int


@dataclass
class ErrorCurve:
    rows: tuple[SweepRow, ...]
    instance_digest: str
    truth: int | None


def default_budget(instance: Instance) -> float:
    """Per-sample cost cap that never binds: the most expensive single pull."""
    costs = [
        max(a.cost_pull, a.cost_force_s, a.cost_force_sprime) for a in instance.arms
    ]
    return max(costs) if costs else 0.0


def _extra_constraints(instance: Instance, T: int):
    if instance.cheap_arm_constraint:
        return (cheap_arm_cap(instance.n_arms, 0, T),)
    return ()


def run_algorithm(
    instance: Instance,
    algorithm: str,
    T: int,
    rng: np.random.Generator,
    budget: float | None = None,
    fairness_eps: float | None = None,
    divergences: DivergenceSet | None = None,
) -> RunTrace:
    """Dispatch one seeded run of any registered algorithm."""
    if algorithm not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {algorithm!r}; pick one of {ALGORITHMS}")
    eps = instance.fairness_eps if fairness_eps is None else fairness_eps
    if eps is None:
        raise ValueError("no fairness tolerance: set instance.fairness_eps or pass one")
    if divergences is None:
        divergences = DivergenceSet.exact(instance.model, instance.arms)
    if budget is None:
        budget = default_budget(instance)
    sampler = make_sampler(instance.model, instance.arms)
    extra = _extra_constraints(instance, T)
    family, variant = algorithm.split("-")
    runner = run_csr if family == "csr" else run_two_stage
    return runner(
        sampler, instance.arms, divergences, budget, T, eps,
        variant, rng, extra_constraints=extra,
    )


def _run_cell(
    instance: Instance,
    algorithm: str,
    T: int,
    base_seed: int,
    budget_index: int,
    run_index: int,
    truth: int | None,
    budget: float,
    divergences: DivergenceSet,
) -> tuple[bool, bool, bool, float]:
    """One seeded run scored against the oracle: (wrong, declared_none, failed, seconds)."""
    ss = np.random.SeedSequence(
        base_seed, spawn_key=(budget_index, ALGORITHMS.index(algorithm), run_index)
    )
    rng = np.random.default_rng(ss)
    start = time.perf_counter()
    try:
        trace = run_algorithm(
            instance, algorithm, T, rng, budget=budget, divergences=divergences
        )
    except Exception:
        return True, False, True, time.perf_counter() - start
    elapsed = time.perf_counter() - start
    return trace.decision != truth, trace.decision is None, False, elapsed


def run_sweep(
    instance: Instance,
    budgets: Sequence[int],
    runs: int,
    algorithms: Sequence[str] = ALGORITHMS,
    base_seed: int = 0,
    width: int = 1,
) -> ErrorCurve:
    """Score ``runs`` seeded runs per (budget, algorithm) against the exact oracle."""
    if instance.fairness_eps is None:
        raise ValueError("instance has no fairness_eps; sweeps need the oracle truth")
    for algorithm in algorithms:
        if algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {algorithm!r}")
    truth = oracle_report(instance, instance.fairness_eps)["best_fair"]
    digest = instance_digest(instance)
    budget = default_budget(instance)
    divergences = DivergenceSet.exact(instance.model, instance.arms)

    cells = [
        (instance, algorithm, int(T), base_seed, bi, run, truth, budget, divergences)
        for bi, T in enumerate(budgets)
        for algorithm in algorithms
        for run in range(runs)
    ]
    if width > 1:
        with ProcessPoolExecutor(max_workers=width) as pool:
            outcomes = list(pool.map(_run_cell_star, cells, chunksize=1))
    else:
        outcomes = [_run_cell(*cell) for cell in cells]

    rows = []
    i = 0
    for bi, T in enumerate(budgets):
        for algorithm in algorithms:
            chunk = outcomes[i : i + runs]
            i += runs
            wrong = sum(1 for w, _, _, _ in chunk if w)
            none_count = sum(1 for _, nd, _, _ in chunk if nd)
            failed = sum(1 for _, _, f, _ in chunk if f)
            rows.append(
                SweepRow(
                    budget=int(T),
                    algorithm=algorithm,
                    runs=runs,
                    misidentifications=wrong,
                    no_fair_arm=none_count,
                    failures=failed,
                    error_rate=wrong / runs,
                    wall_time_s=sum(dt for _, _, _, dt in chunk),
                    base_seed=base_seed,
                )
            )
    return ErrorCurve(rows=tuple(rows), instance_digest=digest, truth=truth)


def _run_cell_star(args) -> tuple[bool, bool, bool, float]:
    return _run_cell(*args)


_CSV_FIELDS = [
    "budget", "algorithm", "runs", "misidentifications", "no_fair_arm",
    "failures", "error_rate", "wall_time_s", "base_seed", "instance_digest",
]


def error_curve_to_csv(curve: ErrorCurve, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=_CSV_FIELDS)
        writer.writeheader()
        for row in curve.rows:
            record = asdict(row)
            record["instance_digest"] = curve.instance_digest
            writer.writerow(record)


def error_curve_to_json(curve: ErrorCurve, path: str | Path) -> None:
    payload = {
        "instance_digest": curve.instance_digest,
        "truth": curve.truth,
        "rows": [asdict(row) for row in curve.rows],
    }
    Path(path).write_text(json.dumps(payload, indent=1) + "\n")
