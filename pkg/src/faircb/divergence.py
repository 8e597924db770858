"""Divergence matrices between arms and the empirical quantiles they dominate.

The outcome side uses the conditional f-divergence with ``f1(x) = x e^(x-1) - 1``
and the cutoff ``M[i, j] = 1 + ln(1 + D_f1(P_i || P_j))``.  The fairness side
uses ``D[i, j] = ln(E_{i,s}[exp |w|] + E_{i,s'}[exp |w|])`` where ``w`` is the
signed counterfactual weight of the pair.  Rows index the target arm ``i``,
columns the source arm ``j``.  Expectations are evaluated in log-sum-exp form
throughout, so entries stay finite even when individual weights overflow
``exp``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .model import Arm, CausalModel, Regime, S_VALUE, SPRIME_VALUE
from .oracles import (
    attribute_ratio_values,
    direction_values,
    enumerate_joint,
    marginal_rows,
)
from .sampling import sample_batch

__all__ = [
    "f1",
    "conditional_f_divergence",
    "outcome_matrix",
    "fairness_matrix",
    "DivergenceSet",
    "empirical_quantile_eta",
    "empirical_quantile_gamma",
]

_QUANTILE_ATOL = 1e-12


def f1(x):
    """Convex generator ``x * exp(x - 1) - 1`` with ``f1(1) = 0``."""
    x = np.asarray(x, dtype=float)
    out = x * np.exp(x - 1.0) - 1.0
    return out if out.ndim else float(out)


def _outcome_cells(model: CausalModel, arm_i: Arm, arm_j: Arm):
    """Cells ``(p_j, p_i, w)`` of the intervention context under the j measure.

    ``p_j > 0`` on every returned cell; the shared zero pattern between arms
    makes ``w = P_i / P_j`` finite there.
    """
    marg = marginal_rows(model, model.intervention)
    pj = marg[:, None] * arm_j.table
    pi = marg[:, None] * arm_i.table
    mask = pj > 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.where(mask, arm_i.table / arm_j.table, 0.0)
    return pj[mask], pi[mask], w[mask]


def conditional_f_divergence(
    model: CausalModel,
    arm_i: Arm,
    arm_j: Arm,
    mode: str = "exact",
    draws: int = 100_000,
    rng: np.random.Generator | None = None,
) -> float:
    """``E_j[f1(P_i / P_j)]`` over the intervention context, exact by default."""
    if mode == "exact":
        pj, _, w = _outcome_cells(model, arm_i, arm_j)
        return float(pj @ f1(w))
    if mode != "mc":
        raise ValueError(f"unknown mode {mode!r}")
    if rng is None:
        raise ValueError("mc mode needs an rng")
    batch = sample_batch(model, arm_j, Regime.OBSERVATIONAL, draws, rng)
    w = arm_i.table[batch.v_row, batch.v_val] / arm_j.table[batch.v_row, batch.v_val]
    return float(np.mean(f1(w)))


def _log_mgf_outcome(pj: np.ndarray, w: np.ndarray) -> float:
    """``ln E_j[w e^(w-1)] = ln (1 + D_f1)``, safe for huge ratios.

    Uses ``sum_j p f1(w) + 1 = sum_j p w e^(w-1)`` since the cell masses sum
    to one.
    """
    pos = w > 0.0
    return float(logsumexp(np.log(pj[pos]) + np.log(w[pos]) + w[pos] - 1.0))


def outcome_matrix(
    model: CausalModel,
    arms: list[Arm] | tuple[Arm, ...],
    mode: str = "exact",
    draws: int = 100_000,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Cutoff matrix ``M[i, j] = 1 + ln(1 + D_f1(P_i || P_j))`` with unit diagonal."""
    if mode not in ("exact", "mc"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "mc" and rng is None:
        raise ValueError("mc mode needs an rng")
    k = len(arms)
    m = np.ones((k, k), dtype=float)
    marg = marginal_rows(model, model.intervention) if mode == "exact" else None
    for j in range(k):
        if mode == "exact":
            pj = marg[:, None] * arms[j].table
            mask = pj > 0.0
        else:
            batch = sample_batch(model, arms[j], Regime.OBSERVATIONAL, draws, rng)
        for i in range(k):
            if i == j:
                continue
            if mode == "exact":
                with np.errstate(divide="ignore", invalid="ignore"):
                    w = np.where(mask, arms[i].table / arms[j].table, 0.0)
                m[i, j] = 1.0 + _log_mgf_outcome(pj[mask], w[mask])
            else:
                w = arms[i].table[batch.v_row, batch.v_val] / arms[j].table[batch.v_row, batch.v_val]
                pos = w > 0.0
                m[i, j] = 1.0 + float(
                    logsumexp(np.log(w[pos]) + w[pos] - 1.0) - np.log(w.shape[0])
                )
    return m


def _fairness_weight_cells(model: CausalModel, arm_i: Arm, arm_j: Arm, direction: str):
    """Per forced regime, cells ``(probs under arm i, signed weight w_ij)``.

    The weight keeps the orientation of ``direction`` while the evidence
    attribute runs over both values, which is what the two-regime expectation
    and the two-sided quantile need.
    """
    num, den = direction_values(direction)
    needed = [model.intervention, *model.children(model.sensitive)]
    v = model.intervention
    strides = model.row_strides(v)
    out = []
    for forced in (S_VALUE, SPRIME_VALUE):
        probs_parts, w_parts = [], []
        for probs, values in enumerate_joint(model, arm_i, needed, force_s=forced):
            mask = probs > 0.0
            sub = {x: col[mask] for x, col in values.items()}
            rows = np.zeros(int(mask.sum()), dtype=np.int64)
            for p, st in zip(model.parents[v], strides):
                rows += sub[p] * st
            w_v = arm_i.table[rows, sub[v]] / arm_j.table[rows, sub[v]]
            ratio = attribute_ratio_values(model, arm_i, sub, num, den)
            probs_parts.append(probs[mask])
            w_parts.append(w_v * (ratio - 1.0))
        out.append((np.concatenate(probs_parts), np.concatenate(w_parts)))
    return out


def fairness_matrix(
    model: CausalModel,
    arms: list[Arm] | tuple[Arm, ...],
    direction: str,
    mode: str = "exact",
    draws: int = 100_000,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Cutoff matrix ``D[i, j]`` for the counterfactual weights of ``direction``."""
    k = len(arms)
    d = np.zeros((k, k), dtype=float)
    num, den = direction_values(direction)
    for i in range(k):
        if mode == "exact":
            for j in range(k):
                parts = []
                for probs, w in _fairness_weight_cells(model, arms[i], arms[j], direction):
                    parts.append(logsumexp(np.log(probs) + np.abs(w)))
                d[i, j] = float(np.logaddexp(*parts))
        elif mode == "mc":
            if rng is None:
                raise ValueError("mc mode needs an rng")
            batches = [
                sample_batch(model, arms[i], reg, draws, rng)
                for reg in (Regime.FORCE_S, Regime.FORCE_SPRIME)
            ]
            for j in range(k):
                parts = []
                for batch in batches:
                    w_v = (
                        arms[i].table[batch.v_row, batch.v_val]
                        / arms[j].table[batch.v_row, batch.v_val]
                    )
                    rnum = arms[i].table[batch.v_row_s, batch.v_val]
                    rden = arms[i].table[batch.v_row_sp, batch.v_val]
                    ratio = batch.child_ratio * rnum / rden
                    if direction == "sps":
                        ratio = 1.0 / ratio
                    w = w_v * (ratio - 1.0)
                    parts.append(logsumexp(np.abs(w)) - np.log(w.shape[0]))
                d[i, j] = float(np.logaddexp(*parts))
        else:
            raise ValueError(f"unknown mode {mode!r}")
    return d


@dataclass
class DivergenceSet:
    """The three cutoff matrices a run needs, rows = target arm, columns = source arm."""

    m: np.ndarray
    d_ssp: np.ndarray
    d_sps: np.ndarray

    @classmethod
    def exact(cls, model: CausalModel, arms) -> "DivergenceSet":
        return cls(
            m=outcome_matrix(model, arms),
            d_ssp=fairness_matrix(model, arms, "ssp"),
            d_sps=fairness_matrix(model, arms, "sps"),
        )

    @classmethod
    def mc(cls, model: CausalModel, arms, draws: int, rng: np.random.Generator) -> "DivergenceSet":
        return cls(
            m=outcome_matrix(model, arms, mode="mc", draws=draws, rng=rng),
            d_ssp=fairness_matrix(model, arms, "ssp", mode="mc", draws=draws, rng=rng),
            d_sps=fairness_matrix(model, arms, "sps", mode="mc", draws=draws, rng=rng),
        )

    @property
    def n_arms(self) -> int:
        return self.m.shape[0]


def _min_tail_quantile(weights: np.ndarray, probs: np.ndarray, bound: float) -> float:
    """Smallest support value ``q`` with ``P(W > q) <= bound``."""
    order = np.argsort(weights, kind="stable")
    w, p = weights[order], probs[order]
    uniq, start = np.unique(w, return_index=True)
    ends = np.r_[start[1:], w.shape[0]] - 1
    cum = np.cumsum(p)
    tails = cum[-1] - cum[ends]
    ok = tails <= bound + _QUANTILE_ATOL
    return float(uniq[int(np.argmax(ok))])


def empirical_quantile_eta(
    model: CausalModel, arm_i: Arm, arm_j: Arm, eps: float
) -> float:
    """Smallest ``eta`` with ``P_i(P_i / P_j > eta) <= eps / 2``."""
    if not 0.0 < eps < 2.0:
        raise ValueError("eps must lie in (0, 2)")
    _, pi, w = _outcome_cells(model, arm_i, arm_j)
    mask = pi > 0.0
    return _min_tail_quantile(w[mask], pi[mask], eps / 2.0)


def empirical_quantile_gamma(
    model: CausalModel, arm_i: Arm, arm_j: Arm, eps: float, direction: str
) -> float:
    """Smallest ``gamma`` whose two forced tail masses of ``|w_ij|`` sum below ``eps / 2``."""
    if not 0.0 < eps < 2.0:
        raise ValueError("eps must lie in (0, 2)")
    cells = _fairness_weight_cells(model, arm_i, arm_j, direction)
    weights = np.concatenate([np.abs(w) for _, w in cells])
    probs = np.concatenate([p for p, _ in cells])
    return _min_tail_quantile(weights, probs, eps / 2.0)
