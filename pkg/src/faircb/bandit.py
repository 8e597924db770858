"""Successive-rejection runs: phase schedule, fair set, elimination, traces.

A run splits its pull budget into phases of shrinking accuracy eps = 2^{1-l}.
Each phase solves the max-min allocation over the surviving arms, pulls the
rounded counts, re-estimates, computes the set of arms currently certified
fair, and eliminates arms that are provably suboptimal or unfair at the
current accuracy.  The v1 variant estimates from the phase's own samples,
v2 from every sample collected so far (re-clipped at the current eps).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .allocation import Allocation, build_problem, costs_from_arms, round_counts, solve_maxmin
from .divergence import DivergenceSet
from .estimation import EstimateVector, SamplePool, estimate_all
from .model import Arm, Regime
from .sampling import BatchSamples

__all__ = [
    "PhaseSchedule",
    "PhaseRecord",
    "RunTrace",
    "phase_schedule",
    "fair_set",
    "eliminate",
    "run_csr",
    "run_two_stage",
    "bound_report",
]

Sampler = Callable[[int, Regime, int, np.random.Generator], BatchSamples]

_REGIME_ROWS = (Regime.OBSERVATIONAL, Regime.FORCE_S, Regime.FORCE_SPRIME)


@dataclass
class PhaseSchedule:
    """Phase count, per-phase pull counts, and the harmonic normalizer."""

    n: int
    tau: np.ndarray
    logbar: float


@dataclass
class PhaseRecord:
    phase: int
    stage: int
    eps: float
    remaining: tuple[int, ...]
    fair: tuple[int, ...]
    allocation: Allocation
    estimates: EstimateVector
    eliminated: tuple[tuple[int, str], ...]
    samples: int
    cost: float


@dataclass
class RunTrace:
    """Full account of one run: per-phase records plus the decision."""

    phases: list[PhaseRecord]
    decision: int | None
    samples_spent: int
    cost_spent: float

    @property
    def no_fair_arm(self) -> bool:
        return self.decision is None


def phase_schedule(T: int) -> PhaseSchedule:
    """n = ceil(log2(10 sqrt(T))) phases with tau(l) ~ T/(l logbar).

    Floor rounding leaves a deficit of at most n pulls, which goes to the
    first phase so the counts sum to T exactly.
    """
    if T < 4:
        raise ValueError("T must be >= 4")
    n = math.ceil(math.log2(10.0 * math.sqrt(T)))
    logbar = float(sum(1.0 / i for i in range(1, n + 1)))
    tau = np.array([int(T // (l * logbar)) for l in range(1, n + 1)], dtype=np.int64)
    tau[0] += T - int(tau.sum())
    return PhaseSchedule(n=n, tau=tau, logbar=logbar)


def fair_set(
    estimates: EstimateVector, l: int, fairness_eps: float, remaining: Sequence[int]
) -> tuple[int, ...]:
    """Arms whose both directional estimates clear the threshold by 3/2^l.

    All four inequalities are strict; a missing estimate keeps the arm out.
    """
    margin = 3.0 / 2.0**l
    fair = []
    for k in remaining:
        z1 = estimates.zeta_ssp[k]
        z2 = estimates.zeta_sps[k]
        if np.isnan(z1) or np.isnan(z2):
            continue
        if (
            z1 + margin < fairness_eps
            and z1 - margin > -fairness_eps
            and z2 + margin < fairness_eps
            and z2 - margin > -fairness_eps
        ):
            fair.append(k)
    return tuple(fair)


def _best_outcome(estimates: EstimateVector, candidates: Sequence[int]) -> int | None:
    """Argmax of the outcome estimate, ties and all-missing to lowest index."""
    best = None
    best_val = -math.inf
    for k in candidates:
        val = estimates.y[k]
        val = -math.inf if np.isnan(val) else float(val)
        if best is None or val > best_val:
            best, best_val = k, val
    return best


def _unfair_records(
    estimates: EstimateVector, l: int, fairness_eps: float, remaining: Sequence[int]
) -> list[tuple[int, str]]:
    margin = 3.0 / 2.0**l
    records = []
    for k in remaining:
        for z, tag in ((estimates.zeta_ssp[k], "ssp"), (estimates.zeta_sps[k], "sps")):
            if np.isnan(z):
                continue
            if z - margin > fairness_eps:
                records.append((k, f"unfair-high-{tag}"))
            if z + margin < -fairness_eps:
                records.append((k, f"unfair-low-{tag}"))
    return records


def _suboptimal_records(
    estimates: EstimateVector, l: int, reference: Sequence[int], remaining: Sequence[int]
) -> list[tuple[int, str]]:
    y_ref = [estimates.y[k] for k in reference if not np.isnan(estimates.y[k])]
    if not y_ref:
        return []
    y_h = max(y_ref)
    gap = 5.0 / 2.0**l
    return [
        (k, "suboptimal")
        for k in remaining
        if not np.isnan(estimates.y[k]) and y_h > estimates.y[k] + gap
    ]


def eliminate(
    estimates: EstimateVector,
    fair: Sequence[int],
    l: int,
    fairness_eps: float,
    remaining: Sequence[int],
) -> tuple[tuple[int, ...], tuple[tuple[int, str], ...]]:
    """Drop arms beaten by the best fair arm or provably unfair.

    With no certified-fair arm the phase eliminates nothing.  Arms with
    missing estimates are exempt from the clauses they lack data for.
    Returns the surviving set and one (arm, reason) record per fired clause.
    """
    if not fair:
        return tuple(remaining), ()
    records = _suboptimal_records(estimates, l, fair, remaining)
    records += _unfair_records(estimates, l, fairness_eps, remaining)
    dropped = {k for k, _ in records}
    return tuple(k for k in remaining if k not in dropped), tuple(records)


def _round_phase(alloc: Allocation, tau_l: int, n_arms: int) -> Allocation:
    """round_counts, except a zero-length phase yields all-zero counts."""
    if tau_l > 0:
        return round_counts(alloc, tau_l)
    zero = np.zeros(n_arms, dtype=np.int64)
    return replace(alloc, tau_y=zero, tau_s=zero.copy(), tau_sp=zero.copy())


def _pull_phase(
    sampler: Sampler,
    pool: SamplePool,
    allocation: Allocation,
    costs: np.ndarray,
    rng: np.random.Generator,
) -> tuple[int, float]:
    """Execute the rounded counts; returns (samples, cost) spent."""
    counts = (allocation.tau_y, allocation.tau_s, allocation.tau_sp)
    samples = 0
    cost = 0.0
    for j in range(costs.shape[1]):
        for row, regime in enumerate(_REGIME_ROWS):
            cnt = int(counts[row][j])
            if cnt > 0:
                pool.add(sampler(j, regime, cnt, rng))
                samples += cnt
                cost += costs[row, j] * cnt
    return samples, cost


def run_csr(
    sampler: Sampler,
    arms: Sequence[Arm],
    divergences: DivergenceSet,
    budget: float,
    T: int,
    fairness_eps: float,
    variant: str = "v2",
    rng: np.random.Generator | None = None,
    extra_constraints: Sequence[tuple[np.ndarray, float]] = (),
) -> RunTrace:
    """One joint successive-rejection run over the full budget."""
    if variant not in ("v1", "v2"):
        raise ValueError(f"variant must be 'v1' or 'v2', got {variant!r}")
    rng = np.random.default_rng() if rng is None else rng
    K = len(arms)
    costs = costs_from_arms(arms)
    sched = phase_schedule(T)
    remaining = tuple(range(K))
    cumulative = SamplePool(K)
    phases: list[PhaseRecord] = []
    samples_spent = 0
    cost_spent = 0.0
    last_fair: tuple[tuple[int, ...], EstimateVector] | None = None
    decision: int | None = None
    decided = False

    for l in range(1, sched.n + 1):
        eps = 2.0 ** (-(l - 1))
        problem = build_problem(divergences, costs, budget, remaining, extra_constraints)
        alloc = _round_phase(solve_maxmin(problem), int(sched.tau[l - 1]), K)
        pool = cumulative if variant == "v2" else SamplePool(K)
        spent, cost = _pull_phase(sampler, pool, alloc, costs, rng)
        samples_spent += spent
        cost_spent += cost
        estimates = estimate_all(pool, arms, eps, divergences)
        fair = fair_set(estimates, l, fairness_eps, remaining)
        if fair:
            last_fair = (fair, estimates)
        if len(remaining) == 1:
            phases.append(
                PhaseRecord(l, 1, eps, remaining, fair, alloc, estimates, (), spent, cost)
            )
            decision = remaining[0]
            decided = True
            break
        remaining_new, eliminated = eliminate(estimates, fair, l, fairness_eps, remaining)
        phases.append(
            PhaseRecord(l, 1, eps, remaining, fair, alloc, estimates, eliminated, spent, cost)
        )
        remaining = remaining_new

    if not decided:
        if last_fair is not None:
            decision = _best_outcome(last_fair[1], last_fair[0])
        else:
            decision = None
    return RunTrace(
        phases=phases, decision=decision, samples_spent=samples_spent, cost_spent=cost_spent
    )


def run_two_stage(
    sampler: Sampler,
    arms: Sequence[Arm],
    divergences: DivergenceSet,
    budget: float,
    T: int,
    fairness_eps: float,
    inner: str = "v2",
    rng: np.random.Generator | None = None,
    extra_constraints: Sequence[tuple[np.ndarray, float]] = (),
) -> RunTrace:
    """Half the budget screens unfair arms, the other half picks the best.

    Stage one allocates forced pulls only and eliminates on the fairness
    clauses alone; an empty survivor set means no fair arm.  Stage two
    allocates observational pulls only over the survivors and eliminates on
    the reward clause alone.
    """
    if inner not in ("v1", "v2"):
        raise ValueError(f"inner must be 'v1' or 'v2', got {inner!r}")
    if T < 8:
        raise ValueError("T must be >= 8 so each stage gets a schedule")
    rng = np.random.default_rng() if rng is None else rng
    K = len(arms)
    costs = costs_from_arms(arms)
    half = T // 2
    remaining = tuple(range(K))
    cumulative = SamplePool(K)
    phases: list[PhaseRecord] = []
    samples_spent = 0
    cost_spent = 0.0

    sched = phase_schedule(half)
    for l in range(1, sched.n + 1):
        eps = 2.0 ** (-(l - 1))
        problem = build_problem(
            divergences, costs, budget, remaining, extra_constraints, include_outcome=False
        )
        alloc = _round_phase(solve_maxmin(problem), int(sched.tau[l - 1]), K)
        pool = cumulative if inner == "v2" else SamplePool(K)
        spent, cost = _pull_phase(sampler, pool, alloc, costs, rng)
        samples_spent += spent
        cost_spent += cost
        estimates = estimate_all(pool, arms, eps, divergences)
        fair = fair_set(estimates, l, fairness_eps, remaining)
        eliminated = tuple(_unfair_records(estimates, l, fairness_eps, remaining))
        dropped = {k for k, _ in eliminated}
        remaining_new = tuple(k for k in remaining if k not in dropped)
        phases.append(
            PhaseRecord(l, 1, eps, remaining, fair, alloc, estimates, eliminated, spent, cost)
        )
        remaining = remaining_new
        if len(remaining) <= 1:
            break

    if not remaining:
        return RunTrace(
            phases=phases, decision=None, samples_spent=samples_spent, cost_spent=cost_spent
        )

    decision: int | None = None
    decided = False
    last_estimates: EstimateVector | None = None
    sched2 = phase_schedule(half)
    for l in range(1, sched2.n + 1):
        eps = 2.0 ** (-(l - 1))
        problem = build_problem(
            divergences, costs, budget, remaining, extra_constraints, include_fairness=False
        )
        alloc = _round_phase(solve_maxmin(problem), int(sched2.tau[l - 1]), K)
        pool = cumulative if inner == "v2" else SamplePool(K)
        spent, cost = _pull_phase(sampler, pool, alloc, costs, rng)
        samples_spent += spent
        cost_spent += cost
        estimates = estimate_all(pool, arms, eps, divergences)
        last_estimates = estimates
        if len(remaining) == 1:
            phases.append(
                PhaseRecord(l, 2, eps, remaining, remaining, alloc, estimates, (), spent, cost)
            )
            decision = remaining[0]
            decided = True
            break
        eliminated = tuple(_suboptimal_records(estimates, l, remaining, remaining))
        dropped = {k for k, _ in eliminated}
        remaining_new = tuple(k for k in remaining if k not in dropped)
        phases.append(
            PhaseRecord(l, 2, eps, remaining, remaining, alloc, estimates, eliminated, spent, cost)
        )
        remaining = remaining_new

    if not decided:
        decision = _best_outcome(last_estimates, remaining)
    return RunTrace(
        phases=phases, decision=decision, samples_spent=samples_spent, cost_spent=cost_spent
    )


def _bracket_phase(numerator: float, gap: float) -> float:
    """Smallest integer phase l with numerator/2^l < gap; inf when gap <= 0."""
    if gap <= 0.0:
        return math.inf
    return float(max(1, math.ceil(math.log2(numerator / gap))))


def bound_report(
    oracle: dict,
    divergences: DivergenceSet,
    costs: np.ndarray,
    budget: float,
    T: int,
    extra_constraints: Sequence[tuple[np.ndarray, float]] = (),
) -> dict:
    """Problem-dependent constants and both error bounds for an instance.

    Takes the exact oracle report (means, directional gaps, fair set) and
    rebuilds every constant of the two guarantees: per-arm ideal deletion
    phases, the hardness constant, and the exponential bounds, clamped to
    [0, 1] for reporting.
    """
    mu = np.asarray(oracle["mu"], dtype=float)
    zeta_ssp = np.asarray(oracle["zeta_ssp"], dtype=float)
    zeta_sps = np.asarray(oracle["zeta_sps"], dtype=float)
    fairness_eps = float(oracle["fairness_eps"])
    fair = list(oracle["fair"])
    best = oracle["best_fair"]
    K = mu.shape[0]
    sched = phase_schedule(T)

    def vstar(active: Sequence[int]) -> float:
        problem = build_problem(divergences, costs, budget, active, extra_constraints)
        return solve_maxmin(problem).v_star

    delta = [None if best is None else float(mu[best] - mu[k]) for k in range(K)]
    so = [
        math.inf if delta[k] is None else _bracket_phase(10.0, delta[k]) for k in range(K)
    ]
    f_ssp = [
        _bracket_phase(6.0, max(zeta_ssp[k] - fairness_eps, -fairness_eps - zeta_ssp[k]))
        for k in range(K)
    ]
    f_sps = [
        _bracket_phase(6.0, max(zeta_sps[k] - fairness_eps, -fairness_eps - zeta_sps[k]))
        for k in range(K)
    ]

    l0 = None
    if best is not None:
        slacks = [
            fairness_eps + zeta_ssp[best],
            fairness_eps - zeta_ssp[best],
            fairness_eps + zeta_sps[best],
            fairness_eps - zeta_sps[best],
        ]
        l0 = float(max(math.log2(5.0 / s) for s in slacks))

    rho = []
    for k in range(K):
        if k == best:
            rho.append(math.inf)
            continue
        so_term = so[k] if l0 is None else max(so[k], l0)
        rho.append(float(min(so_term, f_ssp[k], f_sps[k])))

    # Minimal category gaps feed the worst-case deletion phase rho*.
    so_gaps = [delta[k] for k in fair if k != best and delta[k] is not None and delta[k] > 0]
    ssp_gaps = [
        min(abs(zeta_ssp[k] - fairness_eps), abs(zeta_ssp[k] + fairness_eps))
        for k in range(K)
        if abs(zeta_ssp[k]) >= fairness_eps
    ]
    sps_gaps = [
        min(abs(zeta_sps[k] - fairness_eps), abs(zeta_sps[k] + fairness_eps))
        for k in range(K)
        if abs(zeta_sps[k]) >= fairness_eps
    ]
    terms = []
    if so_gaps:
        terms.append(math.log2(20.0 / min(so_gaps)))
    if ssp_gaps:
        terms.append(math.log2(12.0 / min(ssp_gaps)))
    if sps_gaps:
        terms.append(math.log2(12.0 / min(sps_gaps)))
    rho_star = float(max(terms)) if terms else math.inf

    r_star = {k: [a for a in range(K) if rho[a] >= rho[k]] for k in range(K)}
    v_star_k = {}
    h_bar = 0.0
    for k in range(K):
        if k == best:
            continue
        v = vstar(r_star[k])
        v_star_k[k] = v
        if math.isinf(rho[k]):
            h_bar = math.inf
        else:
            h_bar = max(h_bar, rho[k] ** 3 * 2.0 ** (2.0 * rho[k]) / v**2)

    misid = None
    if best is not None and K > 1:
        expo = 0.0 if math.isinf(h_bar) else T / (8.0 * h_bar * sched.logbar)
        misid = float(min(1.0, 8.0 * K**2 * rho_star * math.exp(-expo)))

    v_full = vstar(range(K))
    xi_star = float(oracle["xi_star"])
    fair_err = float(
        min(
            1.0,
            4.0
            * K
            * sched.n
            * math.exp(-(xi_star**2) * T * v_full**2 / (32.0 * sched.n**3 * sched.logbar)),
        )
    )

    return {
        "T": T,
        "budget": float(budget),
        "fairness_eps": fairness_eps,
        "n_phases": sched.n,
        "logbar": sched.logbar,
        "best_fair": best,
        "delta": delta,
        "so": so,
        "f_ssp": f_ssp,
        "f_sps": f_sps,
        "l0": l0,
        "rho": rho,
        "rho_star": rho_star,
        "r_star": r_star,
        "v_star": v_star_k,
        "v_star_full": v_full,
        "h_bar": h_bar,
        "xi_star": xi_star,
        "misidentification_bound": misid,
        "fairness_error_bound": fair_err,
    }
