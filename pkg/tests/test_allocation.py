"""Max-min allocation LP: worked examples, an independent vertex oracle, rounding."""

from __future__ import annotations

import math

import numpy as np
import pytest

from faircb.allocation import (
    Allocation,
    build_problem,
    cheap_arm_cap,
    costs_from_arms,
    round_counts,
    solve_maxmin,
)
from faircb.divergence import DivergenceSet
from faircb.errors import Infeasible
from faircb.model import Arm

from helpers import maxmin_vertex_value


def unit_costs(k: int) -> np.ndarray:
    return np.ones((3, k))


def random_problem(rng, k, extras=(), budget=1.2):
    ds = DivergenceSet(
        m=1.0 + rng.random((k, k)) * 3.0,
        d_ssp=0.7 + rng.random((k, k)) * 4.0,
        d_sps=0.7 + rng.random((k, k)) * 4.0,
    )
    costs = 0.5 + rng.random((3, k))
    return build_problem(ds, costs, budget, range(k), extra_constraints=extras)


def test_costs_from_arms():
    arms = (
        Arm(index=0, table=np.array([[1.0]]), cost_pull=0.0, cost_force_s=2.0, cost_force_sprime=3.0),
        Arm(index=1, table=np.array([[1.0]])),
    )
    np.testing.assert_array_equal(costs_from_arms(arms), [[0.0, 1.0], [2.0, 1.0], [3.0, 1.0]])


def test_build_problem_reciprocals_and_validation():
    ds = DivergenceSet(
        m=np.ones((3, 3)),
        d_ssp=np.full((3, 3), math.log(2.0)),
        d_sps=np.full((3, 3), 2.0),
    )
    prob = build_problem(ds, unit_costs(3), 1.0, [2])
    np.testing.assert_array_equal(prob.recip_m, np.ones((3, 3)))
    assert prob.recip_dssp[0, 0] == pytest.approx(1.4427, abs=1e-4)
    assert prob.active == (2,)
    assert prob.n_arms == 3
    with pytest.raises(ValueError):
        build_problem(ds, np.ones((2, 3)), 1.0, [0])
    with pytest.raises(ValueError):
        build_problem(ds, -unit_costs(3), 1.0, [0])
    with pytest.raises(ValueError):
        build_problem(ds, unit_costs(3), -1.0, [0])
    with pytest.raises(ValueError):
        build_problem(ds, unit_costs(3), 1.0, [])
    with pytest.raises(ValueError):
        build_problem(ds, unit_costs(3), 1.0, [0], extra_constraints=((np.ones(4), 1.0),))
    with pytest.raises(ValueError):
        build_problem(ds, unit_costs(3), 1.0, [0], include_outcome=False, include_fairness=False)


def test_single_arm_equalizer():
    ds = DivergenceSet(m=np.ones((1, 1)), d_ssp=np.ones((1, 1)), d_sps=np.ones((1, 1)))
    alloc = solve_maxmin(build_problem(ds, unit_costs(1), 1.0, [0]))
    assert alloc.v_star == pytest.approx(1.0 / 3.0, abs=1e-9)
    for nu in (alloc.nu_y, alloc.nu_s, alloc.nu_sp):
        assert nu[0] == pytest.approx(1.0 / 3.0, abs=1e-9)


def test_budget_below_every_cost_is_infeasible():
    ds = DivergenceSet(m=np.ones((2, 2)), d_ssp=np.ones((2, 2)), d_sps=np.ones((2, 2)))
    with pytest.raises(Infeasible):
        solve_maxmin(build_problem(ds, 5.0 * unit_costs(2), 1.0, [0, 1]))


@pytest.mark.parametrize("seed", range(8))
def test_matches_vertex_enumeration_oracle(seed):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(1, 3))
    extras = (cheap_arm_cap(k, 0, 400),) if seed % 2 else ()
    prob = random_problem(rng, k, extras)
    expected = maxmin_vertex_value(prob)
    if expected is None:
        with pytest.raises(Infeasible):
            solve_maxmin(prob)
    else:
        assert solve_maxmin(prob).v_star == pytest.approx(expected, abs=2e-3)


def test_matches_vertex_oracle_k3():
    prob = random_problem(np.random.default_rng(99), 3)
    assert solve_maxmin(prob).v_star == pytest.approx(maxmin_vertex_value(prob), abs=2e-3)


def test_scaling_matrices_scales_value():
    rng = np.random.default_rng(11)
    prob = random_problem(rng, 2, budget=2.0)
    base = solve_maxmin(prob).v_star
    lam = 3.7
    scaled = build_problem(
        DivergenceSet(
            m=lam / prob.recip_m, d_ssp=lam / prob.recip_dssp, d_sps=lam / prob.recip_dsps
        ),
        prob.costs,
        prob.budget,
        prob.active,
    )
    assert solve_maxmin(scaled).v_star == pytest.approx(base / lam, abs=1e-9)


def test_value_monotone_in_active_set_and_budget():
    rng = np.random.default_rng(23)
    ds = DivergenceSet(
        m=1.0 + rng.random((3, 3)) * 3.0,
        d_ssp=0.7 + rng.random((3, 3)) * 4.0,
        d_sps=0.7 + rng.random((3, 3)) * 4.0,
    )
    costs = 0.5 + rng.random((3, 3))
    values = [
        solve_maxmin(build_problem(ds, costs, 1.5, active))
        for active in ([0], [0, 1], [0, 1, 2])
    ]
    assert values[0].v_star >= values[1].v_star - 1e-9 >= values[2].v_star - 2e-9
    by_budget = [
        solve_maxmin(build_problem(ds, costs, b, [0, 1, 2])).v_star
        for b in (0.8, 1.0, 1.5, 2.5)
    ]
    assert all(lo <= hi + 1e-9 for lo, hi in zip(by_budget, by_budget[1:]))


def test_disabled_blocks_pin_fractions_to_zero():
    prob_outcome = random_problem(np.random.default_rng(5), 2)
    stage1 = build_problem(
        DivergenceSet(m=1 / prob_outcome.recip_m, d_ssp=1 / prob_outcome.recip_dssp,
                      d_sps=1 / prob_outcome.recip_dsps),
        prob_outcome.costs, prob_outcome.budget, prob_outcome.active,
        include_fairness=False,
    )
    alloc = solve_maxmin(stage1)
    np.testing.assert_array_equal(alloc.nu_s, 0.0)
    np.testing.assert_array_equal(alloc.nu_sp, 0.0)
    assert alloc.nu_y.sum() == pytest.approx(1.0, abs=1e-9)
    stage2 = build_problem(
        DivergenceSet(m=1 / prob_outcome.recip_m, d_ssp=1 / prob_outcome.recip_dssp,
                      d_sps=1 / prob_outcome.recip_dsps),
        prob_outcome.costs, prob_outcome.budget, prob_outcome.active,
        include_outcome=False,
    )
    alloc2 = solve_maxmin(stage2)
    np.testing.assert_array_equal(alloc2.nu_y, 0.0)
    assert (alloc2.nu_s + alloc2.nu_sp).sum() == pytest.approx(1.0, abs=1e-9)


def test_cheap_arm_cap_binds():
    # Arm 0 is informative for nobody, the others are, so the optimum wants
    # to spend off the cheap arm and the cap pins that spend.
    k, T = 3, 400
    m = np.full((k, k), 8.0)
    m[:, 1:] = 1.0
    np.fill_diagonal(m, 1.0)
    ds = DivergenceSet(m=m, d_ssp=m.copy(), d_sps=m.copy())
    coeffs, ub = cheap_arm_cap(k, 0, T)
    assert ub == pytest.approx((1.0 - 1e-12) / math.sqrt(T), rel=1e-15)
    np.testing.assert_array_equal(coeffs[[0, k, 2 * k]], 0.0)
    free = solve_maxmin(build_problem(ds, unit_costs(k), 1.0, range(k)))
    capped = solve_maxmin(
        build_problem(ds, unit_costs(k), 1.0, range(k), extra_constraints=((coeffs, ub),))
    )
    off_cheap = capped.nu_y[1:].sum() + capped.nu_s[1:].sum() + capped.nu_sp[1:].sum()
    assert off_cheap == pytest.approx(ub, abs=1e-9)
    assert capped.v_star < free.v_star - 0.1


def test_allocation_invariants_on_random_problems():
    rng = np.random.default_rng(31)
    for _ in range(10):
        prob = random_problem(rng, int(rng.integers(1, 4)), budget=2.5)
        alloc = solve_maxmin(prob)
        total = alloc.nu_y.sum() + alloc.nu_s.sum() + alloc.nu_sp.sum()
        assert total == pytest.approx(1.0, abs=1e-9)
        spend = (
            prob.costs[0] @ alloc.nu_y + prob.costs[1] @ alloc.nu_s + prob.costs[2] @ alloc.nu_sp
        )
        assert spend <= prob.budget + 1e-9
        assert np.all(alloc.nu_y >= 0) and np.all(alloc.nu_s >= 0) and np.all(alloc.nu_sp >= 0)
        for k in prob.active:
            assert prob.recip_m[k] @ alloc.nu_y >= alloc.v_star - 1e-12
            assert prob.recip_dsps[k] @ alloc.nu_s >= alloc.v_star - 1e-12
            assert prob.recip_dssp[k] @ alloc.nu_sp >= alloc.v_star - 1e-12


def test_round_counts_worked_examples():
    third = Allocation(
        nu_y=np.array([1 / 3]), nu_s=np.array([1 / 3]), nu_sp=np.array([1 / 3]), v_star=1 / 3
    )
    rounded = round_counts(third, 3)
    assert (rounded.tau_y[0], rounded.tau_s[0], rounded.tau_sp[0]) == (1, 1, 1)
    halves = Allocation(
        nu_y=np.array([0.5]), nu_s=np.array([0.5]), nu_sp=np.array([0.0]), v_star=0.0
    )
    rounded = round_counts(halves, 5)
    assert (rounded.tau_y[0], rounded.tau_s[0], rounded.tau_sp[0]) == (3, 2, 0)
    with pytest.raises(ValueError):
        round_counts(third, 0)


def test_round_counts_largest_remainder_properties():
    rng = np.random.default_rng(17)
    for _ in range(20):
        k = int(rng.integers(1, 5))
        raw = rng.random(3 * k)
        raw /= raw.sum()
        alloc = Allocation(nu_y=raw[:k], nu_s=raw[k : 2 * k], nu_sp=raw[2 * k :], v_star=0.0)
        tau = 997
        rounded = round_counts(alloc, tau)
        counts = np.concatenate([rounded.tau_y, rounded.tau_s, rounded.tau_sp])
        assert counts.sum() == tau
        assert np.all(counts >= 0)
        assert np.max(np.abs(counts - raw * tau)) < 1.0
        assert np.all(counts[raw >= 1.0 / tau] >= 1)


def test_rounded_counts_keep_precision_slack():
    rng = np.random.default_rng(41)
    for _ in range(5):
        k = 3
        # Divergence-like scales: outcome cutoffs >= 1, fairness cutoffs >= 1.
        ds = DivergenceSet(
            m=1.0 + rng.random((k, k)) * 3.0,
            d_ssp=1.0 + rng.random((k, k)) * 4.0,
            d_sps=1.0 + rng.random((k, k)) * 4.0,
        )
        prob = build_problem(ds, 0.5 + rng.random((3, k)), 2.0, range(k))
        alloc = round_counts(solve_maxmin(prob), 200)
        for arm in prob.active:
            assert prob.recip_m[arm] @ alloc.tau_y / 200 >= alloc.v_star - k / 200
            assert prob.recip_dsps[arm] @ alloc.tau_s / 200 >= alloc.v_star - k / 200
            assert prob.recip_dssp[arm] @ alloc.tau_sp / 200 >= alloc.v_star - k / 200
