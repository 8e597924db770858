"""Discrete causal models with a sensitive attribute, an intervention node and a target.

A model is a DAG over finitely supported variables.  Node values are integer
coded as ``0 .. card - 1``.  The sensitive node ``S`` is parentless and binary;
its value ``0`` is written ``s`` and its value ``1`` is written ``s'``.  Arms
are alternative conditional tables for the intervention node ``V``.  The target
``Y`` carries a numeric encoding of each support value into ``[0, 1]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "Regime",
    "CausalModel",
    "Arm",
    "Sample",
    "Instance",
    "ValidationReport",
    "validate_model",
    "S_VALUE",
    "SPRIME_VALUE",
]

S_VALUE = 0
SPRIME_VALUE = 1

ROW_ATOL = 1e-9


class Regime(Enum):
    """How the sensitive attribute is handled during a pull."""

    OBSERVATIONAL = "observational"
    FORCE_S = "force-s"
    FORCE_SPRIME = "force-sprime"

    @property
    def forced_value(self) -> int | None:
        if self is Regime.FORCE_S:
            return S_VALUE
        if self is Regime.FORCE_SPRIME:
            return SPRIME_VALUE
        return None


def _as_table(x: Sequence | np.ndarray) -> np.ndarray:
    t = np.asarray(x, dtype=float)
    if t.ndim == 1:
        t = t[None, :]
    if t.ndim != 2:
        raise ValueError(f"conditional table must be 2-d, got shape {t.shape}")
    return t


@dataclass
class CausalModel:
    """A discrete causal DAG with designated sensitive, intervention and target nodes.

    ``cpts[x]`` has shape ``(n_rows(x), card[x])`` with one row per parent
    assignment, rows keyed in row-major order of the declared parent tuple.
    """

    nodes: tuple[str, ...]
    cards: dict[str, int]
    parents: dict[str, tuple[str, ...]]
    cpts: dict[str, np.ndarray]
    sensitive: str
    intervention: str
    target: str
    target_values: np.ndarray  # encoding of each target support value into [0, 1]

    def __post_init__(self) -> None:
        self.nodes = tuple(self.nodes)
        self.parents = {x: tuple(ps) for x, ps in self.parents.items()}
        self.cpts = {x: _as_table(t) for x, t in self.cpts.items()}
        self.target_values = np.asarray(self.target_values, dtype=float)
        self._children: dict[str, tuple[str, ...]] | None = None
        self._topo: tuple[str, ...] | None = None

    # -- structure helpers -------------------------------------------------

    def parent_cards(self, node: str) -> tuple[int, ...]:
        return tuple(self.cards[p] for p in self.parents[node])

    def n_rows(self, node: str) -> int:
        out = 1
        for c in self.parent_cards(node):
            out *= c
        return out

    def row_strides(self, node: str) -> tuple[int, ...]:
        """Row-major strides over the parent tuple of ``node``."""
        cards = self.parent_cards(node)
        strides = [0] * len(cards)
        acc = 1
        for i in range(len(cards) - 1, -1, -1):
            strides[i] = acc
            acc *= cards[i]
        return tuple(strides)

    def row_index(self, node: str, parent_values: Sequence[int]) -> int:
        strides = self.row_strides(node)
        if len(parent_values) != len(strides):
            raise ValueError(
                f"{node} expects {len(strides)} parent values, got {len(parent_values)}"
            )
        return int(sum(int(v) * st for v, st in zip(parent_values, strides)))

    def children(self, node: str) -> tuple[str, ...]:
        if self._children is None:
            ch: dict[str, list[str]] = {x: [] for x in self.nodes}
            for x in self.nodes:
                for p in self.parents.get(x, ()):
                    if p in ch:
                        ch[p].append(x)
            self._children = {x: tuple(v) for x, v in ch.items()}  # type: ignore[assignment]
        return self._children[node]  # type: ignore[index]

    def topological_order(self) -> tuple[str, ...]:
        """Kahn order, stable in declared node order.  Raises on a cycle."""
        if self._topo is not None:
            return self._topo
        indeg = {x: len(self.parents.get(x, ())) for x in self.nodes}
        order: list[str] = []
        ready = [x for x in self.nodes if indeg[x] == 0]
        while ready:
            x = ready.pop(0)
            order.append(x)
            for c in self.children(x):
                indeg[c] -= 1
                if indeg[c] == 0:
                    ready.append(c)
        if len(order) != len(self.nodes):
            raise ValueError("graph has a cycle")
        self._topo = tuple(order)
        return self._topo

    def ancestors(self, targets: Iterable[str]) -> tuple[str, ...]:
        """Ancestral closure of ``targets`` (inclusive), in topological order."""
        want = set(targets)
        stack = list(want)
        while stack:
            x = stack.pop()
            for p in self.parents.get(x, ()):
                if p not in want:
                    want.add(p)
                    stack.append(p)
        return tuple(x for x in self.topological_order() if x in want)


@dataclass
class Arm:
    """A soft intervention: an alternative conditional table for the intervention node."""

    index: int
    table: np.ndarray  # shape (n_rows(V), card[V])
    cost_pull: float = 1.0
    cost_force_s: float = 1.0
    cost_force_sprime: float = 1.0

    def __post_init__(self) -> None:
        self.table = _as_table(self.table)


@dataclass(frozen=True)
class Sample:
    """One pull: the observer sees the intervention context, the children of S and Y.

    ``v_parents`` lists the realized parent values of the intervention node in
    declared order (the forced S value appears there when S is a parent) and
    ``s_child_contexts`` holds ``(child, parent values without S, child value)``
    for every child of the sensitive node.  ``v_row``, ``v_row_s``,
    ``v_row_sp`` and ``child_ratio`` cache what the importance weights need:
    the realized table row, the same row with the S slot set to s and to s',
    and the product over the non intervention children of S of
    ``P(x | pa, s) / P(x | pa, s')``.
    """

    arm: int
    regime: Regime
    s_value: int
    v_parents: tuple[int, ...]
    v_value: int
    s_child_contexts: tuple[tuple[str, tuple[int, ...], int], ...]
    outcome: float
    v_row: int
    v_row_s: int
    v_row_sp: int
    child_ratio: float


@dataclass
class Instance:
    """A model together with its candidate arms and run-level conventions."""

    model: CausalModel
    arms: tuple[Arm, ...]
    name: str = ""
    cheap_arm_constraint: bool = False
    observed: tuple[str, ...] | None = None
    fairness_eps: float | None = None

    def __post_init__(self) -> None:
        self.arms = tuple(self.arms)
        if self.observed is not None:
            self.observed = tuple(self.observed)

    @property
    def n_arms(self) -> int:
        return len(self.arms)


@dataclass
class ValidationReport:
    ok: bool
    problems: tuple[str, ...] = ()

    def __bool__(self) -> bool:
        return self.ok


def _row_problems(name: str, table: np.ndarray, n_rows: int, card: int) -> list[str]:
    out: list[str] = []
    if table.shape != (n_rows, card):
        out.append(f"{name}: table shape {table.shape} != ({n_rows}, {card})")
        return out
    if np.any(table < 0.0):
        out.append(f"{name}: negative entries")
    bad = np.abs(table.sum(axis=1) - 1.0) > ROW_ATOL
    if np.any(bad):
        out.append(f"{name}: rows {np.flatnonzero(bad).tolist()} do not sum to 1")
    return out


def _s_slice_rows(model: CausalModel, node: str) -> tuple[np.ndarray, np.ndarray] | None:
    """Row indices of ``node``'s table with the S slot set to s and to s'."""
    ps = model.parents[node]
    if model.sensitive not in ps:
        return None
    strides = model.row_strides(node)
    s_stride = strides[ps.index(model.sensitive)]
    rows = np.arange(model.n_rows(node))
    s_val = (rows // s_stride) % model.cards[model.sensitive]
    base = rows - s_val * s_stride
    return base + S_VALUE * s_stride, base + SPRIME_VALUE * s_stride


def validate_model(model: CausalModel, arms: Sequence[Arm] = ()) -> ValidationReport:
    """Structural and probabilistic checks for a model and its arms."""
    problems: list[str] = []

    if len(set(model.nodes)) != len(model.nodes):
        problems.append("duplicate node ids")
    for x in model.nodes:
        for p in model.parents.get(x, ()):
            if p not in model.cards:
                problems.append(f"{x}: unknown parent {p!r}")
            if p == x:
                problems.append(f"{x}: is its own parent")
    for x in model.nodes:
        if x not in model.parents:
            problems.append(f"{x}: missing parent declaration")
        if x not in model.cpts:
            problems.append(f"{x}: missing conditional table")
        if model.cards.get(x, 0) < 1:
            problems.append(f"{x}: support must be nonempty")
    if problems:
        return ValidationReport(False, tuple(problems))

    try:
        model.topological_order()
    except ValueError as exc:
        return ValidationReport(False, (str(exc),))

    for x in model.nodes:
        problems.extend(_row_problems(x, model.cpts[x], model.n_rows(x), model.cards[x]))

    for designated, label in (
        (model.sensitive, "sensitive"),
        (model.intervention, "intervention"),
        (model.target, "target"),
    ):
        if designated not in model.cards:
            problems.append(f"{label} node {designated!r} is not in the model")
    if model.sensitive in model.cards:
        if model.cards[model.sensitive] != 2:
            problems.append("sensitive node must be binary")
        if model.parents.get(model.sensitive, ()):
            problems.append("sensitive node must be parentless")
    if model.target in model.cards:
        if model.target_values.shape != (model.cards[model.target],):
            problems.append("target encoding length does not match the target support")
        elif np.any((model.target_values < 0.0) | (model.target_values > 1.0)):
            problems.append("target encoding must lie in [0, 1]")

    if problems:
        return ValidationReport(False, tuple(problems))

    v = model.intervention
    n_rows_v, card_v = model.n_rows(v), model.cards[v]
    for arm in arms:
        problems.extend(_row_problems(f"arm {arm.index}", arm.table, n_rows_v, card_v))
        for c in (arm.cost_pull, arm.cost_force_s, arm.cost_force_sprime):
            if c < 0:
                problems.append(f"arm {arm.index}: negative cost")

    if arms and not problems:
        # Importance ratios between arms need a shared zero pattern per row.
        pattern = arms[0].table > 0.0
        for arm in arms[1:]:
            if not np.array_equal(arm.table > 0.0, pattern):
                problems.append(f"arm {arm.index}: zero pattern differs from arm {arms[0].index}")

    # Counterfactual reweighting across s and s' needs matching support in
    # every child of the sensitive node, including each arm's table when the
    # intervention node is such a child.
    for x in model.children(model.sensitive):
        rows = _s_slice_rows(model, x)
        if rows is None:
            continue
        rows_s, rows_sp = rows
        tables = [(x, model.cpts[x])] if x != v else [(f"arm {a.index}", a.table) for a in arms]
        for name, table in tables:
            if not np.array_equal(table[rows_s] > 0.0, table[rows_sp] > 0.0):
                problems.append(f"{name}: support differs between s and s' rows")

    return ValidationReport(not problems, tuple(problems))
