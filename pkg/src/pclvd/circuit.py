"""Probabilistic-circuit data model and exact inference.

A circuit is a DAG of input, sum and product units stored in topological order
(children before parents). Sum units mix their children with normalized
weights, product units factorize over disjoint scopes. All probabilities are
stored and propagated as natural logs; log 0 is IEEE ``-inf`` so indicator
units and determinism checks see exact zeros.

Structure is immutable after construction. Parameters (sum log-weights, input
distributions) are numpy arrays that the learning module updates in place;
sharing those arrays between circuits is how an augmented circuit and its
original keep a single parameter space.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product as iter_product

import numpy as np
from scipy.special import logsumexp

from .errors import CapacityError, DataError, PreconditionError, StructuralError
from .instrumentation import record_sweep

INPUT = 0
SUM = 1
PRODUCT = 2

KIND_NAMES = {INPUT: "input", SUM: "sum", PRODUCT: "product"}

#: Sentinel category value meaning "sum this variable out" in an assignment.
MARGINALIZED = -1

#: Largest number of scope configurations the enumeration oracles accept.
MAX_ENUMERATION = 1 << 20


# ---------------------------------------------------------------------------
# Scopes are plain int bitmasks: bit v set <=> variable v is in the scope.
# Python ints are word-blocked internally, so subset/disjoint/equality tests
# are O(vars/64) machine-word operations.


def scope_of(vars_iterable) -> int:
    mask = 0
    for v in vars_iterable:
        mask |= 1 << v
    return mask


def scope_vars(mask: int) -> list[int]:
    out = []
    v = 0
    while mask:
        if mask & 1:
            out.append(v)
        mask >>= 1
        v += 1
    return out


def scope_size(mask: int) -> int:
    return bin(mask).count("1")


def scope_subset(a: int, b: int) -> bool:
    return a & ~b == 0


def scope_disjoint(a: int, b: int) -> bool:
    return a & b == 0


# ---------------------------------------------------------------------------
# Units and circuits


@dataclass(eq=False)
class Unit:
    """One computational unit.

    ``log_weights`` (sum units) and ``dist`` (input units, linear-space
    probabilities over one variable) are the trainable parameters. ``frozen``
    marks parameters excluded from training, e.g. materialized indicators.
    """

    kind: int
    scope: int
    children: tuple[int, ...] = ()
    log_weights: np.ndarray | None = None
    dist: np.ndarray | None = None
    var: int = -1
    frozen: bool = False


@dataclass
class StructureViolation:
    unit: int
    property: str
    detail: str


@dataclass
class StructureReport:
    smooth: bool
    decomposable: bool
    violations: list[StructureViolation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.smooth and self.decomposable


class Circuit:
    """Immutable-structure PC over variables ``0..num_vars-1``.

    Units must be topologically ordered (every child index below its parent)
    and every non-root unit reachable from the root. Sum weights must be
    normalized within 1e-12 and sum/product layers must alternate.
    """

    def __init__(self, units: list[Unit], root: int, var_cards, validate: bool = True):
        self.units = list(units)
        self.root = int(root)
        self.var_cards = np.asarray(var_cards, dtype=np.int64)
        self.num_vars = len(self.var_cards)
        self._structure_report: StructureReport | None = None
        if validate:
            self._validate()

    def __len__(self) -> int:
        return len(self.units)

    @property
    def root_scope(self) -> int:
        return self.units[self.root].scope

    def _validate(self) -> None:
        if not self.units:
            raise StructuralError("circuit has no units")
        if not 0 <= self.root < len(self.units):
            raise StructuralError(f"root index {self.root} out of range")
        if np.any(self.var_cards < 1):
            raise StructuralError("variable cardinalities must be >= 1")
        reached = np.zeros(len(self.units), dtype=bool)
        reached[self.root] = True
        for i in range(len(self.units) - 1, -1, -1):
            u = self.units[i]
            if not reached[i]:
                continue
            for c in u.children:
                if c >= i:
                    raise StructuralError(
                        f"unit {i} has child {c}: children must precede parents"
                    )
                reached[c] = True
        if not reached.all():
            orphan = int(np.flatnonzero(~reached)[0])
            raise StructuralError(f"unit {orphan} is not reachable from the root")
        for i, u in enumerate(self.units):
            if u.kind == INPUT:
                if u.children:
                    raise StructuralError(f"input unit {i} has children")
                if scope_size(u.scope) != 1 or u.var < 0 or u.scope != 1 << u.var:
                    raise StructuralError(f"input unit {i} must cover exactly one variable")
                if u.var >= self.num_vars:
                    raise StructuralError(f"input unit {i} covers unknown variable {u.var}")
                if u.dist is None or len(u.dist) != self.var_cards[u.var]:
                    raise StructuralError(f"input unit {i} distribution has wrong length")
                if np.any(u.dist < 0) or abs(float(np.sum(u.dist)) - 1.0) > 1e-12:
                    raise StructuralError(f"input unit {i} distribution is not normalized")
            elif u.kind == SUM:
                if not u.children:
                    raise StructuralError(f"sum unit {i} has no children")
                if u.log_weights is None or len(u.log_weights) != len(u.children):
                    raise StructuralError(f"sum unit {i} weight/child count mismatch")
                total = float(np.sum(np.exp(u.log_weights)))
                if abs(total - 1.0) > 1e-12:
                    raise StructuralError(
                        f"sum unit {i} weights sum to {total!r}, expected 1 within 1e-12"
                    )
                if any(self.units[c].kind == SUM for c in u.children):
                    raise StructuralError(f"sum unit {i} has a sum child: layers must alternate")
            elif u.kind == PRODUCT:
                if not u.children:
                    raise StructuralError(f"product unit {i} has no children")
                if any(self.units[c].kind == PRODUCT for c in u.children):
                    raise StructuralError(
                        f"product unit {i} has a product child: layers must alternate"
                    )
            else:
                raise StructuralError(f"unit {i} has unknown kind {u.kind}")
            if u.kind != INPUT:
                expect = 0
                for c in u.children:
                    expect |= self.units[c].scope
                if u.scope != expect:
                    raise StructuralError(f"unit {i} scope does not match its children")

    # -- structural properties ------------------------------------------------

    def structure_report(self) -> StructureReport:
        if self._structure_report is None:
            self._structure_report = check_structure(self)
        return self._structure_report


class CircuitBuilder:
    """Incremental construction helper; returns unit indices as they are added."""

    def __init__(self, var_cards):
        self.var_cards = np.asarray(var_cards, dtype=np.int64)
        self.units: list[Unit] = []

    def input_unit(self, var: int, dist, frozen: bool = False) -> int:
        dist = np.asarray(dist, dtype=np.float64)
        self.units.append(
            Unit(INPUT, 1 << var, dist=dist, var=int(var), frozen=frozen)
        )
        return len(self.units) - 1

    def indicator(self, var: int, value: int) -> int:
        dist = np.zeros(int(self.var_cards[var]), dtype=np.float64)
        dist[value] = 1.0
        return self.input_unit(var, dist, frozen=True)

    def sum_unit(self, children, weights=None, log_weights=None) -> int:
        children = tuple(int(c) for c in children)
        if log_weights is None:
            if weights is None:
                weights = np.full(len(children), 1.0 / len(children))
            weights = np.asarray(weights, dtype=np.float64)
            with np.errstate(divide="ignore"):
                log_weights = np.log(weights)
        else:
            log_weights = np.asarray(log_weights, dtype=np.float64)
        scope = 0
        for c in children:
            scope |= self.units[c].scope
        self.units.append(Unit(SUM, scope, children, log_weights=log_weights))
        return len(self.units) - 1

    def product_unit(self, children) -> int:
        children = tuple(int(c) for c in children)
        scope = 0
        for c in children:
            scope |= self.units[c].scope
        self.units.append(Unit(PRODUCT, scope, children))
        return len(self.units) - 1

    def build(self, root: int | None = None, validate: bool = True) -> Circuit:
        if root is None:
            root = len(self.units) - 1
        return Circuit(self.units, root, self.var_cards, validate=validate)


# ---------------------------------------------------------------------------
# Evaluation


def _as_batch(circuit: Circuit, assignment) -> np.ndarray:
    a = np.asarray(assignment, dtype=np.int64)
    if a.ndim == 1:
        a = a[None, :]
    if a.shape[1] != circuit.num_vars:
        raise DataError(
            f"assignment has {a.shape[1]} columns, circuit has {circuit.num_vars} variables"
        )
    return a

def _check_domains(circuit: Circuit, batch: np.ndarray) -> None:
    lo = batch < MARGINALIZED
    hi = batch >= circuit.var_cards[None, :]
    if lo.any() or hi.any():
        bad = np.argwhere(lo | hi)[0]
        raise DataError(
            f"sample {bad[0]} variable {bad[1]} has value {batch[bad[0], bad[1]]} "
            f"outside [0, {circuit.var_cards[bad[1]]})"
        )


def log_values(circuit: Circuit, batch: np.ndarray, extra_log=None) -> np.ndarray:
    """Upward pass: log value of every unit on every sample.

    ``batch`` is an (n, num_vars) int matrix; entries equal to MARGINALIZED
    make input units over that variable return log 1 = 0. ``extra_log``
    optionally maps a product unit to a per-sample log factor multiplied into
    it, acting as a frozen pseudo-child (used for cached sub-circuit values).
    """
    n = batch.shape[0]
    vals = np.empty((len(circuit.units), n), dtype=np.float64)
    for i, u in enumerate(circuit.units):
        if u.kind == INPUT:
            col = batch[:, u.var]
            with np.errstate(divide="ignore"):
                logd = np.log(u.dist)
            vals[i] = np.where(col == MARGINALIZED, 0.0, logd[np.clip(col, 0, None)])
        elif u.kind == PRODUCT:
            vals[i] = np.sum(vals[list(u.children)], axis=0)
            if extra_log is not None and i in extra_log:
                vals[i] += extra_log[i]
        else:
            stacked = vals[list(u.children)] + u.log_weights[:, None]
            vals[i] = logsumexp(stacked, axis=0)
    record_sweep(len(circuit.units), n)
    return vals


def support_values(circuit: Circuit, batch: np.ndarray) -> np.ndarray:
    """Boolean support of every unit: would its value be > 0 under any
    strictly positive sum weights. Marginalized variables always support."""
    n = batch.shape[0]
    sup = np.empty((len(circuit.units), n), dtype=bool)
    for i, u in enumerate(circuit.units):
        if u.kind == INPUT:
            col = batch[:, u.var]
            sup[i] = np.where(col == MARGINALIZED, True, u.dist[np.clip(col, 0, None)] > 0.0)
        elif u.kind == PRODUCT:
            sup[i] = np.all(sup[list(u.children)], axis=0)
        else:
            sup[i] = np.any(sup[list(u.children)], axis=0)
    record_sweep(len(circuit.units), n)
    return sup


def _require_complete(circuit: Circuit, batch: np.ndarray) -> None:
    scope_cols = scope_vars(circuit.root_scope)
    missing = batch[:, scope_cols] == MARGINALIZED
    if missing.any():
        s, v = np.argwhere(missing)[0]
        raise PreconditionError(
            f"sample {s} leaves variable {scope_cols[v]} unassigned but it is in the root scope"
        )


def evaluate_batch(circuit: Circuit, assignments) -> np.ndarray:
    """Log-probability of complete assignments (one per row)."""
    batch = _as_batch(circuit, assignments)
    _check_domains(circuit, batch)
    _require_complete(circuit, batch)
    return log_values(circuit, batch)[circuit.root]

def evaluate(circuit: Circuit, assignment) -> float:
    return float(evaluate_batch(circuit, assignment)[0])


def marginal_batch(circuit: Circuit, assignments) -> np.ndarray:
    """Log marginal probability of partial assignments.

    Requires smoothness and decomposability: without them the summed-out
    result would not equal the sum over completions.
    """
    report = circuit.structure_report()
    if not report.ok:
        raise StructuralError(
            "marginals require a smooth and decomposable circuit; violations: "
            + ", ".join(f"unit {v.unit} ({v.property})" for v in report.violations)
        )
    batch = _as_batch(circuit, assignments)
    _check_domains(circuit, batch)
    return log_values(circuit, batch)[circuit.root]

def marginal(circuit: Circuit, assignment) -> float:
    return float(marginal_batch(circuit, assignment)[0])


# ---------------------------------------------------------------------------
# Structural checks


def check_structure(circuit: Circuit) -> StructureReport:
    """Report smoothness (sum children share scopes) and decomposability
    (product children have pairwise disjoint scopes)."""
    violations: list[StructureViolation] = []
    smooth = True
    decomposable = True
    for i, u in enumerate(circuit.units):
        if u.kind == SUM:
            scopes = {circuit.units[c].scope for c in u.children}
            if len(scopes) > 1:
                smooth = False
                violations.append(
                    StructureViolation(i, "smoothness", "children have differing scopes")
                )
        elif u.kind == PRODUCT:
            seen = 0
            for c in u.children:
                cs = circuit.units[c].scope
                if seen & cs:
                    decomposable = False
                    violations.append(
                        StructureViolation(
                            i, "decomposability", "children scopes overlap"
                        )
                    )
                    break
                seen |= cs
    return StructureReport(smooth, decomposable, violations)


def scope_assignment_grid(circuit: Circuit, scope: int) -> np.ndarray:
    """All complete assignments to ``scope``, other variables MARGINALIZED."""
    vs = scope_vars(scope)
    total = 1
    for v in vs:
        total *= int(circuit.var_cards[v])
        if total > MAX_ENUMERATION:
            raise CapacityError(
                f"scope enumeration needs {total}+ configurations (limit {MAX_ENUMERATION})"
            )
    grid = np.full((total, circuit.num_vars), MARGINALIZED, dtype=np.int64)
    if vs:
        combos = np.array(
            list(iter_product(*(range(int(circuit.var_cards[v])) for v in vs))),
            dtype=np.int64,
        )
        grid[:, vs] = combos
    return grid


def check_deterministic(circuit: Circuit, sum_unit: int) -> bool:
    """Enumeration oracle: does at most one child of ``sum_unit`` have nonzero
    probability on every complete assignment to its scope."""
    u = circuit.units[sum_unit]
    if u.kind != SUM:
        raise PreconditionError(f"unit {sum_unit} is not a sum unit")
    grid = scope_assignment_grid(circuit, u.scope)
    vals = log_values(circuit, grid)
    positive = np.stack([vals[c] > -np.inf for c in u.children])
    return bool(np.all(positive.sum(axis=0) <= 1))


# ---------------------------------------------------------------------------
# Parameters


def renormalize(circuit: Circuit) -> None:
    """Renormalize sum weights and input distributions in place."""
    for u in circuit.units:
        if u.kind == SUM:
            u.log_weights -= logsumexp(u.log_weights)
        elif u.kind == INPUT and not u.frozen:
            u.dist /= u.dist.sum()


def num_parameters(circuit: Circuit) -> int:
    """Trainable parameter count: sum edges plus unfrozen input categories."""
    count = 0
    for u in circuit.units:
        if u.kind == SUM:
            count += len(u.children)
        elif u.kind == INPUT and not u.frozen:
            count += len(u.dist)
    return count


def parameter_vector(circuit: Circuit) -> np.ndarray:
    """Concatenated trainable parameters in topological unit order (linear space)."""
    parts = []
    for u in circuit.units:
        if u.kind == SUM:
            parts.append(np.exp(u.log_weights))
        elif u.kind == INPUT and not u.frozen:
            parts.append(u.dist)
    if not parts:
        return np.zeros(0)
    return np.concatenate(parts)
