"""Materializing latent variables in a circuit.

Materializing a scope W appends a fresh categorical variable Z and attaches an
indicator input Z = j to the j-th product unit whose scope equals W (an
ordered set, ordered by topological index). The augmented circuit represents
p(X, Z) with the same parameters, and summing Z out recovers p(X) exactly.

Also provides the enumeration oracle for the conditional-independence
guarantee of materialization, and the structural views used by factored
training: the sub-circuit encoding p(X_part | Z = j) and the latent view
encoding p(Z).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .circuit import (
    INPUT,
    MARGINALIZED,
    MAX_ENUMERATION,
    PRODUCT,
    SUM,
    Circuit,
    CircuitBuilder,
    Unit,
    log_values,
    marginal_batch,
    scope_assignment_grid,
    scope_disjoint,
    scope_size,
    scope_subset,
    scope_vars,
)
from .errors import CapacityError, StructuralError

log = logging.getLogger(__name__)


@dataclass
class PartitionSpec:
    """Ordered disjoint scopes covering all observed variables.

    ``budgets`` optionally states the expected category count per part; it is
    checked against the number of product units found for that scope, since
    the two must agree for cluster supervision to pair up.
    """

    parts: tuple[int, ...]
    budgets: tuple[int, ...] | None = None

    def validate(self, num_observed: int) -> None:
        union = 0
        for i, p in enumerate(self.parts):
            if p == 0:
                raise StructuralError(f"partition part {i} is empty")
            if union & p:
                raise StructuralError(f"partition part {i} overlaps an earlier part")
            union |= p
        if union != (1 << num_observed) - 1:
            raise StructuralError("partition does not cover all observed variables")
        if self.budgets is not None and len(self.budgets) != len(self.parts):
            raise StructuralError("budgets length does not match parts")


@dataclass
class MaterializationRecord:
    """Bookkeeping for one materialized LV: Z takes ``cardinality`` values and
    value j selects ``product_units[j]`` (whose indicator is ``indicator_units[j]``)."""

    z_var: int
    scope: int
    cardinality: int
    product_units: tuple[int, ...]
    indicator_units: tuple[int, ...]


def _check_scope_compatibility(circuit: Circuit, w: int) -> None:
    # No unit may straddle W: its scope must lie inside W, contain W, or avoid it.
    for i, u in enumerate(circuit.units):
        s = u.scope
        if not (scope_subset(s, w) or scope_subset(w, s) or scope_disjoint(s, w)):
            raise StructuralError(
                f"unit {i} (scope {scope_vars(s)}) partially overlaps the "
                f"materialization scope {scope_vars(w)}"
            )


def _anchor_units(circuit: Circuit, w: int) -> list[int]:
    """The ordered set of units that receive indicators: product units with
    scope W, plus input children of scope-W sums (wrapped in pass-through
    products during the rewrite). Ordered by topological index."""
    anchors = [
        i for i, u in enumerate(circuit.units) if u.kind == PRODUCT and u.scope == w
    ]
    seen = set(anchors)
    for u in circuit.units:
        if u.kind == SUM and u.scope == w:
            for c in u.children:
                if circuit.units[c].kind == INPUT and c not in seen:
                    anchors.append(c)
                    seen.add(c)
    anchors.sort()
    return anchors


def _check_antichain(circuit: Circuit, anchors: list[int]) -> None:
    # Nested same-scope anchors would zero out the augmented distribution:
    # the outer product would carry an indicator contradicting every inner one.
    anchor_set = set(anchors)
    descends: dict[int, bool] = {}

    def reaches_anchor(i: int) -> bool:
        if i in descends:
            return descends[i]
        hit = False
        for c in circuit.units[i].children:
            if c in anchor_set or reaches_anchor(c):
                hit = True
                break
        descends[i] = hit
        return hit

    for a in anchors:
        if reaches_anchor(a):
            raise StructuralError(
                f"unit {a} contains another unit of the same scope; "
                "materialization would not preserve the marginal"
            )


def materialize_lv(
    circuit: Circuit, w: int, validate: bool = True
) -> tuple[Circuit, MaterializationRecord]:
    """Append a latent variable for scope ``w`` and return the augmented
    circuit together with its record. Parameters are shared with ``circuit``."""
    if not any(u.kind == SUM and u.scope == w for u in circuit.units):
        raise StructuralError(
            f"no sum unit has scope {scope_vars(w)}; nothing to materialize"
        )
    if validate:
        report = circuit.structure_report()
        if not report.ok:
            raise StructuralError(
                "materialization requires a smooth and decomposable circuit"
            )
        _check_scope_compatibility(circuit, w)
    anchors = _anchor_units(circuit, w)
    _check_antichain(circuit, anchors)

    z_var = circuit.num_vars
    cardinality = len(anchors)
    var_cards = np.concatenate([circuit.var_cards, [cardinality]])
    builder = CircuitBuilder(var_cards)
    remap: dict[int, int] = {}
    anchor_value = {a: j for j, a in enumerate(anchors)}
    product_units: list[int] = [-1] * cardinality
    indicator_units: list[int] = [-1] * cardinality

    for i, u in enumerate(circuit.units):
        if u.kind == INPUT:
            new_i = builder.input_unit(u.var, u.dist, frozen=u.frozen)
            remap[i] = new_i
            if i in anchor_value:
                # Scope-W sum over bare inputs: wrap in a pass-through product
                # so the indicator has a product to attach to.
                j = anchor_value[i]
                ind = builder.indicator(z_var, j)
                wrapped = builder.product_unit((new_i, ind))
                indicator_units[j] = ind
                product_units[j] = wrapped
                remap[i] = wrapped
        elif u.kind == PRODUCT:
            children = [remap[c] for c in u.children]
            if i in anchor_value:
                j = anchor_value[i]
                ind = builder.indicator(z_var, j)
                children.append(ind)
                indicator_units[j] = ind
                new_i = builder.product_unit(children)
                product_units[j] = new_i
            else:
                new_i = builder.product_unit(children)
            remap[i] = new_i
        else:
            remap[i] = builder.sum_unit(
                [remap[c] for c in u.children], log_weights=u.log_weights
            )

    augmented = builder.build(remap[circuit.root], validate=validate)
    record = MaterializationRecord(
        z_var=z_var,
        scope=w,
        cardinality=cardinality,
        product_units=tuple(product_units),
        indicator_units=tuple(indicator_units),
    )
    return augmented, record


def materialize_partition(
    circuit: Circuit, partition: PartitionSpec
) -> tuple[Circuit, list[MaterializationRecord]]:
    """Materialize one LV per partition part, in order."""
    partition.validate(circuit.num_vars)
    current = circuit
    records: list[MaterializationRecord] = []
    for i, part in enumerate(partition.parts):
        current, record = materialize_lv(current, part)
        if partition.budgets is not None and record.cardinality != partition.budgets[i]:
            raise StructuralError(
                f"part {i} materialized {record.cardinality} categories but the "
                f"partition budgets {partition.budgets[i]}"
            )
        records.append(record)
    if len(records) > 1:
        # Earlier records keep their unit indices only by luck; recompute them
        # against the final circuit via the indicators' identity.
        records = _rebase_records(current, records)
    return current, records


def _rebase_records(
    circuit: Circuit, records: list[MaterializationRecord]
) -> list[MaterializationRecord]:
    by_var: dict[int, dict[int, int]] = {r.z_var: {} for r in records}
    for i, u in enumerate(circuit.units):
        if u.kind == INPUT and u.frozen and u.var in by_var:
            value = int(np.argmax(u.dist))
            by_var[u.var][value] = i
    parents: dict[int, int] = {}
    for i, u in enumerate(circuit.units):
        if u.kind == PRODUCT:
            for c in u.children:
                if circuit.units[c].kind == INPUT and circuit.units[c].frozen:
                    parents[c] = i
    out = []
    for r in records:
        indicators = tuple(by_var[r.z_var][j] for j in range(r.cardinality))
        products = tuple(parents[ind] for ind in indicators)
        out.append(
            MaterializationRecord(r.z_var, r.scope, r.cardinality, products, indicators)
        )
    return out


def materialized_sum_units(circuit: Circuit, record: MaterializationRecord) -> list[int]:
    """Sum units that mix the augmented products; these are exactly the sums
    the materialization turned deterministic (each child now carries a
    distinct indicator over the new LV)."""
    augmented = set(record.product_units)
    return [
        i
        for i, u in enumerate(circuit.units)
        if u.kind == SUM and any(c in augmented for c in u.children)
    ]


# ---------------------------------------------------------------------------
# Conditional-independence oracle


def conditional_independence_oracle(
    circuit: Circuit, w: int, z_var: int, tol: float = 1e-9
) -> bool:
    """Enumeration check that W is independent of everything else given Z.

    True iff |p(w|z) - p(w|z,y)| < tol for all assignments with p(z,y) > 0,
    where y ranges over all variables outside W and Z. Probabilities come from
    ``marginal``.
    """
    if circuit.num_vars > 14:
        raise CapacityError(
            f"independence oracle limited to 14 variables, circuit has {circuit.num_vars}"
        )
    z_mask = 1 << z_var
    y_mask = ((1 << circuit.num_vars) - 1) & ~w & ~z_mask
    total = 1
    for v in range(circuit.num_vars):
        total *= int(circuit.var_cards[v])
    if total > MAX_ENUMERATION:
        raise CapacityError("independence oracle enumeration too large")

    w_grid = scope_assignment_grid(circuit, w)
    z_grid = scope_assignment_grid(circuit, z_mask)
    y_grid = scope_assignment_grid(circuit, y_mask)

    lp_z = marginal_batch(circuit, z_grid)
    n_w, n_z, n_y = len(w_grid), len(z_grid), len(y_grid)

    # p(z, y) for every (z, y) pair.
    zy = np.full((n_z * n_y, circuit.num_vars), MARGINALIZED, dtype=np.int64)
    for zi in range(n_z):
        block = slice(zi * n_y, (zi + 1) * n_y)
        zy[block] = y_grid
        zy[block, z_var] = z_grid[zi, z_var]
    lp_zy = marginal_batch(circuit, zy).reshape(n_z, n_y)

    w_cols = scope_vars(w)
    # p(w, z) and p(w, z, y).
    wz = np.full((n_w * n_z, circuit.num_vars), MARGINALIZED, dtype=np.int64)
    for wi in range(n_w):
        block = slice(wi * n_z, (wi + 1) * n_z)
        wz[block, z_var] = z_grid[:, z_var]
        wz[block][:, w_cols] = w_grid[wi][w_cols]
    lp_wz = marginal_batch(circuit, wz).reshape(n_w, n_z)

    for wi in range(n_w):
        wzy = zy.copy()
        wzy[:, w_cols] = w_grid[wi][w_cols]
        lp_wzy = marginal_batch(circuit, wzy).reshape(n_z, n_y)
        for zi in range(n_z):
            if lp_z[zi] == -np.inf:
                continue
            cond_wz = np.exp(lp_wz[wi, zi] - lp_z[zi])
            live = lp_zy[zi] > -np.inf
            cond_wzy = np.exp(lp_wzy[zi, live] - lp_zy[zi, live])
            if np.any(np.abs(cond_wzy - cond_wz) >= tol):
                return False
    return True


# ---------------------------------------------------------------------------
# Structural views for factored training


def _extract(circuit: Circuit, root: int, drop_children: dict[int, set[int]]) -> tuple[Circuit, dict[int, int]]:
    """Sub-circuit rooted at ``root`` with some children removed, sharing all
    parameter arrays. Returns the view and the old->new unit map."""
    keep: set[int] = set()
    stack = [root]
    while stack:
        i = stack.pop()
        if i in keep:
            continue
        keep.add(i)
        dropped = drop_children.get(i, ())
        for c in circuit.units[i].children:
            if c not in dropped:
                stack.append(c)
    order = sorted(keep)
    builder = CircuitBuilder(circuit.var_cards)
    remap: dict[int, int] = {}
    for i in order:
        u = circuit.units[i]
        children = [remap[c] for c in u.children if c not in drop_children.get(i, ())]
        if u.kind == INPUT:
            remap[i] = builder.input_unit(u.var, u.dist, frozen=u.frozen)
        elif u.kind == PRODUCT:
            remap[i] = builder.product_unit(children)
        else:
            remap[i] = builder.sum_unit(children, log_weights=u.log_weights)
    return builder.build(remap[root]), remap


def conditional_subcircuit(
    circuit: Circuit, record: MaterializationRecord, value: int
) -> Circuit:
    """View encoding p(X_part | Z = value): the augmented product with its
    indicator removed. Parameters are shared with the augmented circuit."""
    product = record.product_units[value]
    indicator = record.indicator_units[value]
    u = circuit.units[product]
    rest = [c for c in u.children if c != indicator]
    if len(rest) == 1:
        view, _ = _extract(circuit, rest[0], {})
        return view
    view, _ = _extract(circuit, product, {product: {indicator}})
    return view


@dataclass
class LatentView:
    """View of the augmented circuit restricted to the latent variables.

    ``circuit`` computes p(Z) when evaluated on complete Z assignments. Each
    entry of ``bonus_children`` maps a view product unit to the original
    indices of the pure-X children that were cut away; feeding their cached
    log-likelihoods back in as per-sample bonuses turns the view into
    p(X, Z) again, or p(X) when Z is marginalized.
    """

    circuit: Circuit
    unit_map: dict[int, int]
    bonus_children: dict[int, tuple[int, ...]]


def latent_view(circuit: Circuit, records: list[MaterializationRecord]) -> LatentView:
    z_mask = 0
    for r in records:
        z_mask |= 1 << r.z_var
    drop: dict[int, set[int]] = {}
    bonus_src: dict[int, tuple[int, ...]] = {}
    for r in records:
        for p in r.product_units:
            pure_x = tuple(
                c
                for c in circuit.units[p].children
                if scope_disjoint(circuit.units[c].scope, z_mask)
            )
            if pure_x:
                drop[p] = set(pure_x)
                bonus_src[p] = pure_x
    view, remap = _extract(circuit, circuit.root, drop)
    bonus_children = {remap[p]: srcs for p, srcs in bonus_src.items() if p in remap}
    return LatentView(view, remap, bonus_children)


def latent_bonus_cache(
    circuit: Circuit, view: LatentView, x_matrix: np.ndarray
) -> dict[int, np.ndarray]:
    """Per-sample log-likelihood of every cut-away sub-circuit, computed with
    one sweep over the augmented circuit (latent columns marginalized)."""
    batch = np.asarray(x_matrix, dtype=np.int64)
    vals = log_values(circuit, batch)
    return {
        view_unit: np.sum(vals[list(srcs)], axis=0)
        for view_unit, srcs in view.bonus_children.items()
    }
