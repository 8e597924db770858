"""Shared fixtures: hand-sized models, random enumerable instances, brute oracles.

The brute-force functions enumerate with plain ``itertools.product`` loops and
no ancestral pruning, so they cross-check the vectorized oracles through a
completely separate code path.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from faircb.model import Arm, CausalModel, Instance

S_CHAIN_F = np.array([0.2, 0.5, 0.9])


def chain_model() -> tuple[CausalModel, list[Arm]]:
    """S -> V -> Y with three arms and closed-form truth.

    mu = [0.508, 0.570, 8/15], zeta_ssp = [-0.13, -0.35, 0].
    """
    model = CausalModel(
        nodes=("S", "V", "Y"),
        cards={"S": 2, "V": 3, "Y": 2},
        parents={"S": (), "V": ("S",), "Y": ("V",)},
        cpts={
            "S": np.array([[0.4, 0.6]]),
            "V": np.array([[0.5, 0.3, 0.2], [0.2, 0.5, 0.3]]),
            "Y": np.column_stack([1.0 - S_CHAIN_F, S_CHAIN_F]),
        },
        sensitive="S",
        intervention="V",
        target="Y",
        target_values=np.array([0.0, 1.0]),
    )
    arms = [
        Arm(0, model.cpts["V"].copy()),
        Arm(1, np.array([[0.6, 0.3, 0.1], [0.1, 0.3, 0.6]])),
        Arm(2, np.full((2, 3), 1.0 / 3.0)),
    ]
    return model, arms


def side_child_model() -> tuple[CausalModel, list[Arm]]:
    """S with two children (V and a non-intervention W), Y reads both.

    mu = [0.4525, 0.4525], zeta_ssp = [-0.225, 0.175].
    """
    model = CausalModel(
        nodes=("S", "V", "W", "Y"),
        cards={"S": 2, "V": 2, "W": 2, "Y": 2},
        parents={"S": (), "V": ("S",), "W": ("S",), "Y": ("V", "W")},
        cpts={
            "S": np.array([[0.5, 0.5]]),
            "V": np.array([[0.7, 0.3], [0.4, 0.6]]),
            "W": np.array([[0.6, 0.4], [0.25, 0.75]]),
            "Y": np.array([[0.9, 0.1], [0.6, 0.4], [0.5, 0.5], [0.2, 0.8]]),
        },
        sensitive="S",
        intervention="V",
        target="Y",
        target_values=np.array([0.0, 1.0]),
    )
    arms = [
        Arm(0, model.cpts["V"].copy()),
        Arm(1, np.array([[0.2, 0.8], [0.9, 0.1]])),
    ]
    return model, arms


def random_instance(rng: np.random.Generator, floor: float = 0.02) -> Instance:
    """A random enumerable instance: <= 6 nodes, supports <= 4, K <= 4 arms.

    All tables are bounded away from zero so importance ratios stay finite.
    """
    n_extra = int(rng.integers(0, 4))
    names = ["S"] + [f"X{i}" for i in range(n_extra)] + ["V", "Y"]
    cards = {"S": 2}
    for x in names[1:]:
        cards[x] = int(rng.integers(2, 5))
    parents: dict[str, tuple[str, ...]] = {"S": ()}
    for i, x in enumerate(names[1:], start=1):
        before = names[:i]
        k = int(rng.integers(0, min(len(before), 3) + 1))
        if x == "Y" and k == 0 and len(before) > 0:
            k = 1
        picks = sorted(rng.choice(len(before), size=k, replace=False).tolist())
        ps = [before[j] for j in picks]
        if x == "Y" and "V" not in ps and rng.random() < 0.7:
            ps = sorted(set(ps + ["V"]), key=names.index)
        parents[x] = tuple(ps)

    def random_table(n_rows: int, card: int) -> np.ndarray:
        t = rng.dirichlet(np.full(card, 1.5), size=n_rows) + floor
        return t / t.sum(axis=1, keepdims=True)

    cpts = {}
    for x in names:
        n_rows = 1
        for p in parents[x]:
            n_rows *= cards[p]
        cpts[x] = random_table(n_rows, cards[x])

    card_y = cards["Y"]
    model = CausalModel(
        nodes=tuple(names),
        cards=cards,
        parents=parents,
        cpts=cpts,
        sensitive="S",
        intervention="V",
        target="Y",
        target_values=np.arange(card_y) / (card_y - 1),
    )
    n_rows_v = model.n_rows("V")
    n_arms = int(rng.integers(2, 5))
    arms = tuple(Arm(k, random_table(n_rows_v, cards["V"])) for k in range(n_arms))
    return Instance(model=model, arms=arms, name="random")


def _joint(model: CausalModel, arm: Arm | None, force_s: int | None = None):
    """Yield (probability, assignment dict) over the full joint, pure python."""
    order = model.topological_order()
    for combo in itertools.product(*(range(model.cards[x]) for x in order)):
        values = dict(zip(order, combo))
        if force_s is not None and values[model.sensitive] != force_s:
            continue
        p = 1.0
        for x in order:
            if force_s is not None and x == model.sensitive:
                continue
            table = arm.table if (arm is not None and x == model.intervention) else model.cpts[x]
            row = 0
            for parent, stride in zip(model.parents[x], model.row_strides(x)):
                row += values[parent] * stride
            p *= table[row, values[x]]
        yield p, values


def brute_mean(model: CausalModel, arm: Arm) -> float:
    return sum(p * model.target_values[v[model.target]] for p, v in _joint(model, arm))


def _brute_ratio(model: CausalModel, arm: Arm, values: dict, num_s: int, den_s: int) -> float:
    ratio = 1.0
    for x in model.children(model.sensitive):
        table = arm.table if x == model.intervention else model.cpts[x]
        strides = model.row_strides(x)
        ps = model.parents[x]
        s_at = ps.index(model.sensitive)
        row_num = sum(
            (num_s if i == s_at else values[p]) * st for i, (p, st) in enumerate(zip(ps, strides))
        )
        row_den = sum(
            (den_s if i == s_at else values[p]) * st for i, (p, st) in enumerate(zip(ps, strides))
        )
        ratio *= table[row_num, values[x]] / table[row_den, values[x]]
    return ratio


def brute_fairness(model: CausalModel, arm: Arm, direction: str) -> float:
    """Counterfactual gap via the reweighted do(evidence) expectation."""
    cf, ev = (0, 1) if direction == "ssp" else (1, 0)
    acc = 0.0
    for p, values in _joint(model, arm, force_s=ev):
        y = model.target_values[values[model.target]]
        acc += p * y * (_brute_ratio(model, arm, values, cf, ev) - 1.0)
    return acc


def clipped_outcome_expectation(model: CausalModel, arms, k: int, j: int, eps: float, m_kj: float) -> float:
    """Exact E_j[Y * w_kj * 1{w_kj <= 2 ln(2/eps) m_kj}] by enumeration."""
    thr = 2.0 * math.log(2.0 / eps) * m_kj
    acc = 0.0
    for p, values in _joint(model, arms[j]):
        if p == 0.0:
            continue
        v = model.intervention
        row = sum(values[q] * st for q, st in zip(model.parents[v], model.row_strides(v)))
        w = arms[k].table[row, values[v]] / arms[j].table[row, values[v]]
        if w <= thr:
            acc += p * model.target_values[values[model.target]] * w
    return acc


def clipped_fairness_expectation(
    model: CausalModel, arms, k: int, j: int, eps: float, d_kj: float, direction: str
) -> float:
    """Exact forced-regime E_j[Y * u_kj * 1{|u_kj| <= 2 ln(2/eps) d_kj}] by enumeration."""
    cf, ev = (0, 1) if direction == "ssp" else (1, 0)
    thr = 2.0 * math.log(2.0 / eps) * d_kj
    acc = 0.0
    for p, values in _joint(model, arms[j], force_s=ev):
        if p == 0.0:
            continue
        v = model.intervention
        row = sum(values[q] * st for q, st in zip(model.parents[v], model.row_strides(v)))
        w = arms[k].table[row, values[v]] / arms[j].table[row, values[v]]
        u = w * (_brute_ratio(model, arms[k], values, cf, ev) - 1.0)
        if abs(u) <= thr:
            acc += p * model.target_values[values[model.target]] * u
    return acc


def maxmin_vertex_value(problem, feas_tol: float = 1e-7) -> float | None:
    """Exact max-min LP value by brute-force vertex enumeration.

    Independent of any LP solver: every basic feasible solution of the
    epigraph polytope is enumerated and the best objective kept.  Returns
    None when no combination is feasible.  Only viable for a handful of
    arms.
    """
    K = problem.n_arms
    n = 3 * K + 1

    rows: list[np.ndarray] = []
    ubs: list[float] = []

    def precision(recip: np.ndarray, offset: int) -> None:
        for k in problem.active:
            row = np.zeros(n)
            row[offset : offset + K] = -recip[k]
            row[-1] = 1.0
            rows.append(row)
            ubs.append(0.0)

    if problem.include_outcome:
        precision(problem.recip_m, 0)
    if problem.include_fairness:
        precision(problem.recip_dsps, K)
        precision(problem.recip_dssp, 2 * K)
    budget_row = np.zeros(n)
    budget_row[: 3 * K] = problem.costs.reshape(-1)
    rows.append(budget_row)
    ubs.append(problem.budget)
    for coeffs, ub in problem.extra_constraints:
        row = np.zeros(n)
        row[: 3 * K] = coeffs
        rows.append(row)
        ubs.append(ub)
    for i in range(n):
        row = np.zeros(n)
        row[i] = -1.0
        rows.append(row)
        ubs.append(0.0)

    equalities = [(np.r_[np.ones(3 * K), 0.0], 1.0)]
    if not problem.include_outcome:
        for i in range(K):
            equalities.append((np.eye(n)[i], 0.0))
    if not problem.include_fairness:
        for i in range(K, 3 * K):
            equalities.append((np.eye(n)[i], 0.0))

    a_ineq = np.array(rows)
    b_ineq = np.array(ubs)
    need = n - len(equalities)
    eq_a = np.array([row for row, _ in equalities])
    eq_b = np.array([val for _, val in equalities])

    combos = list(itertools.combinations(range(len(rows)), need))
    stacked = np.empty((len(combos), n, n))
    stacked[:, : len(equalities), :] = eq_a
    rhs = np.empty((len(combos), n))
    rhs[:, : len(equalities)] = eq_b
    for c, combo in enumerate(combos):
        stacked[c, len(equalities) :, :] = a_ineq[list(combo)]
        rhs[c, len(equalities) :] = b_ineq[list(combo)]

    best = None
    dets = np.linalg.det(stacked)
    solvable = np.abs(dets) > 1e-12
    if not np.any(solvable):
        return None
    xs = np.linalg.solve(stacked[solvable], rhs[solvable][..., None])[..., 0]
    feasible = np.all(xs @ a_ineq.T <= b_ineq + feas_tol, axis=1)
    if not np.any(feasible):
        return None
    return float(np.max(xs[feasible, -1]))
