"""Ancestral sampling under an arm and a regime, plus per-sample importance weights."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import WrongRegime, ZeroDenominator
from .model import Arm, CausalModel, Regime, Sample, S_VALUE, SPRIME_VALUE

__all__ = [
    "BatchSamples",
    "sample",
    "sample_batch",
    "make_sampler",
    "importance_weight_outcome",
    "importance_weight_fairness",
]


@dataclass
class BatchSamples:
    """A packed block of pulls from one arm under one regime.

    ``v_row`` indexes the realized parent assignment of the intervention node
    into the arm tables; ``v_row_s`` and ``v_row_sp`` are the same assignment
    with the S slot forced to s and s' (all three coincide when S is not a
    parent of the intervention node).  ``child_ratio`` carries the product over
    the non intervention children of S of ``P(x | pa, s) / P(x | pa, s')`` at
    the realized values.
    """

    arm: int
    regime: Regime
    y: np.ndarray
    v_row: np.ndarray
    v_val: np.ndarray
    v_row_s: np.ndarray
    v_row_sp: np.ndarray
    child_ratio: np.ndarray

    @property
    def n(self) -> int:
        return int(self.y.shape[0])


def _categorical_rows(table: np.ndarray, rows: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draw one value per entry of ``rows`` from the categorical rows of ``table``."""
    cum = np.cumsum(table[rows], axis=1)
    u = rng.random(rows.shape[0])
    vals = (u[:, None] > cum).sum(axis=1)
    return np.minimum(vals, table.shape[1] - 1)


def _draw_values(
    model: CausalModel,
    arm: Arm,
    regime: Regime,
    n: int,
    rng: np.random.Generator,
) -> dict[str, np.ndarray]:
    values: dict[str, np.ndarray] = {}
    forced = regime.forced_value
    for node in model.topological_order():
        if node == model.sensitive and forced is not None:
            values[node] = np.full(n, forced, dtype=np.int64)
            continue
        table = arm.table if node == model.intervention else model.cpts[node]
        ps = model.parents[node]
        if ps:
            strides = model.row_strides(node)
            rows = np.zeros(n, dtype=np.int64)
            for p, st in zip(ps, strides):
                rows += values[p] * st
        else:
            rows = np.zeros(n, dtype=np.int64)
        values[node] = _categorical_rows(table, rows, rng)
    return values


def _pack(
    model: CausalModel,
    arm: Arm,
    regime: Regime,
    values: dict[str, np.ndarray],
) -> BatchSamples:
    n = values[model.target].shape[0]
    v = model.intervention
    s = model.sensitive

    ps = model.parents[v]
    strides = model.row_strides(v)
    v_row = np.zeros(n, dtype=np.int64)
    for p, st in zip(ps, strides):
        v_row += values[p] * st
    if s in ps:
        s_stride = strides[ps.index(s)]
        base = v_row - values[s] * s_stride
        v_row_s = base + S_VALUE * s_stride
        v_row_sp = base + SPRIME_VALUE * s_stride
    else:
        v_row_s = v_row
        v_row_sp = v_row

    child_ratio = np.ones(n, dtype=float)
    for x in model.children(s):
        if x == v:
            continue
        xps = model.parents[x]
        xst = model.row_strides(x)
        rows = np.zeros(n, dtype=np.int64)
        for p, st in zip(xps, xst):
            rows += values[p] * st
        s_stride = xst[xps.index(s)]
        base = rows - values[s] * s_stride
        cpt = model.cpts[x]
        xv = values[x]
        child_ratio *= cpt[base + S_VALUE * s_stride, xv] / cpt[base + SPRIME_VALUE * s_stride, xv]

    y = model.target_values[values[model.target]]
    return BatchSamples(
        arm=arm.index,
        regime=regime,
        y=y,
        v_row=v_row,
        v_val=values[v].astype(np.int64),
        v_row_s=v_row_s,
        v_row_sp=v_row_sp,
        child_ratio=child_ratio,
    )


def sample_batch(
    model: CausalModel,
    arm: Arm,
    regime: Regime,
    n: int,
    rng: np.random.Generator,
) -> BatchSamples:
    """Draw ``n`` pulls of ``arm`` under ``regime``."""
    values = _draw_values(model, arm, regime, n, rng)
    return _pack(model, arm, regime, values)


def sample(model: CausalModel, arm: Arm, regime: Regime, rng: np.random.Generator) -> Sample:
    """Draw a single pull with the full observed contexts spelled out."""
    values = _draw_values(model, arm, regime, 1, rng)
    packed = _pack(model, arm, regime, values)
    s = model.sensitive
    contexts = []
    for x in model.children(s):
        pa = tuple(int(values[p][0]) for p in model.parents[x] if p != s)
        contexts.append((x, pa, int(values[x][0])))
    return Sample(
        arm=arm.index,
        regime=regime,
        s_value=int(values[s][0]),
        v_parents=tuple(int(values[p][0]) for p in model.parents[model.intervention]),
        v_value=int(values[model.intervention][0]),
        s_child_contexts=tuple(contexts),
        outcome=float(packed.y[0]),
        v_row=int(packed.v_row[0]),
        v_row_s=int(packed.v_row_s[0]),
        v_row_sp=int(packed.v_row_sp[0]),
        child_ratio=float(packed.child_ratio[0]),
    )


def make_sampler(
    model: CausalModel, arms: Sequence[Arm]
) -> Callable[[int, Regime, int, np.random.Generator], BatchSamples]:
    """Bind a model and arms into the pull interface the bandit loop consumes."""

    def pull(arm_index: int, regime: Regime, n: int, rng: np.random.Generator) -> BatchSamples:
        return sample_batch(model, arms[arm_index], regime, n, rng)

    return pull


def importance_weight_outcome(sample: Sample, from_arm: Arm, to_arm: Arm) -> float:
    """Ratio that reweights an outcome sample of ``from_arm`` onto ``to_arm``."""
    denom = float(from_arm.table[sample.v_row, sample.v_value])
    if denom <= 0.0:
        raise ZeroDenominator(
            f"arm {from_arm.index} puts zero mass on its own sample at row {sample.v_row}"
        )
    return float(to_arm.table[sample.v_row, sample.v_value]) / denom


def _attribute_ratio(sample: Sample, to_arm: Arm) -> float:
    """Product over the children of S of P(x | pa, s) / P(x | pa, s') under ``to_arm``."""
    num = float(to_arm.table[sample.v_row_s, sample.v_value])
    den = float(to_arm.table[sample.v_row_sp, sample.v_value])
    if den <= 0.0:
        raise ZeroDenominator(f"arm {to_arm.index} has empty s' support at the sampled value")
    return sample.child_ratio * num / den


def importance_weight_fairness(
    sample: Sample,
    from_arm: Arm,
    to_arm: Arm,
    direction: str,
) -> float:
    """Signed weight whose mean over forced pulls is the counterfactual gap.

    ``direction`` is ``"ssp"`` for the gap of the counterfactual s against
    evidence s' (needs a pull forced to s') and ``"sps"`` for the reverse
    (needs a pull forced to s).
    """
    if direction not in ("ssp", "sps"):
        raise ValueError(f"unknown direction {direction!r}")
    needed = Regime.FORCE_SPRIME if direction == "ssp" else Regime.FORCE_S
    if sample.regime is not needed:
        raise WrongRegime(f"direction {direction} needs regime {needed.value}, got {sample.regime.value}")
    w = importance_weight_outcome(sample, from_arm, to_arm)
    ratio = _attribute_ratio(sample, to_arm)
    if direction == "ssp":
        return w * (ratio - 1.0)
    if ratio <= 0.0:
        raise ZeroDenominator("attribute ratio vanished on a forced-s pull")
    return w * (1.0 / ratio - 1.0)
