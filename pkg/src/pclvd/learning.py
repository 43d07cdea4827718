"""Parameter estimation: expected-flow EM, closed-form estimation on fully
observed augmented data, factored training of latent-conditioned sub-circuits,
latent-distribution finetuning with cached sub-circuit likelihoods, and
full-model finetuning of the marginal objective.

All updates write parameter arrays in place, so every view extracted from an
augmented circuit trains the augmented circuit (and the original circuit it
was materialized from) at the same time.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .circuit import (
    INPUT,
    MARGINALIZED,
    PRODUCT,
    SUM,
    Circuit,
    log_values,
    support_values,
)
from .errors import ConfigError, StructuralError
from .instrumentation import record_sweep
from .materialize import (
    LatentView,
    MaterializationRecord,
    conditional_subcircuit,
    latent_bonus_cache,
    latent_view,
)

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    """Mini-batch EM settings; the per-epoch learning rate anneals linearly
    from ``alpha_start`` to ``alpha_end``."""

    batch_size: int = 1024
    alpha_start: float = 0.1
    alpha_end: float = 0.01
    epochs: int = 20
    pseudocount: float = 0.01
    seed: int = 0
    shuffle: bool = True
    convergence_tol: float | None = 1e-5
    update_inputs: bool = True

    def __post_init__(self):
        for a in (self.alpha_start, self.alpha_end):
            if not 0.0 < a <= 1.0:
                raise ConfigError(f"learning rate {a} outside (0, 1]")
        if self.pseudocount < 0:
            raise ConfigError("pseudocount must be >= 0")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("batch_size must be >= 1 and epochs >= 0")

    def alpha_schedule(self) -> list[float]:
        if self.epochs <= 1:
            return [self.alpha_start] * self.epochs
        step = (self.alpha_end - self.alpha_start) / (self.epochs - 1)
        return [self.alpha_start + step * e for e in range(self.epochs)]


@dataclass
class AugmentedDataset:
    """Paired observed rows and latent assignments, aligned by sample index."""

    x: np.ndarray
    z: np.ndarray
    z_vars: tuple[int, ...]
    z_cards: tuple[int, ...]

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.int64)
        self.z = np.asarray(self.z, dtype=np.int64)
        if self.x.shape[0] != self.z.shape[0]:
            raise StructuralError("observed data and latent assignments disagree on n")
        if self.z.shape[1] != len(self.z_vars) or len(self.z_vars) != len(self.z_cards):
            raise StructuralError("latent columns, variables and cardinalities disagree")
        for i, card in enumerate(self.z_cards):
            if self.z[:, i].min(initial=0) < 0 or self.z[:, i].max(initial=0) >= card:
                raise StructuralError(f"latent column {i} outside [0, {card})")

    @classmethod
    def from_records(cls, x, z, records: list[MaterializationRecord]) -> "AugmentedDataset":
        return cls(
            x=x,
            z=z,
            z_vars=tuple(r.z_var for r in records),
            z_cards=tuple(r.cardinality for r in records),
        )

    @property
    def n(self) -> int:
        return self.x.shape[0]

    def matrix(self, num_vars: int) -> np.ndarray:
        """Full assignment matrix: observed columns, latent columns in place,
        anything else marginalized."""
        out = np.full((self.n, num_vars), MARGINALIZED, dtype=np.int64)
        out[:, : self.x.shape[1]] = self.x
        for i, v in enumerate(self.z_vars):
            out[:, v] = self.z[:, i]
        return out


def pad_to_vars(x: np.ndarray, num_vars: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.int64)
    if x.shape[1] == num_vars:
        return x
    out = np.full((x.shape[0], num_vars), MARGINALIZED, dtype=np.int64)
    out[:, : x.shape[1]] = x
    return out


# ---------------------------------------------------------------------------
# Expected flows


@dataclass
class FlowAccumulator:
    """Linear-space sufficient statistics: per-sum-edge expected flows and
    per-input-category expected counts."""

    edge_flows: dict[int, np.ndarray]
    input_counts: dict[int, np.ndarray]
    samples: int = 0
    skipped: int = 0
    loglik: float = 0.0

    @classmethod
    def zeros(cls, circuit: Circuit) -> "FlowAccumulator":
        edge = {
            i: np.zeros(len(u.children))
            for i, u in enumerate(circuit.units)
            if u.kind == SUM
        }
        counts = {
            i: np.zeros(len(u.dist))
            for i, u in enumerate(circuit.units)
            if u.kind == INPUT and not u.frozen
        }
        return cls(edge, counts)

    def merge(self, other: "FlowAccumulator") -> None:
        for i, ef in other.edge_flows.items():
            self.edge_flows[i] += ef
        for i, cc in other.input_counts.items():
            self.input_counts[i] += cc
        self.samples += other.samples
        self.skipped += other.skipped
        self.loglik += other.loglik


def accumulate_flows(
    circuit: Circuit, batch: np.ndarray, extra_log=None
) -> FlowAccumulator:
    """One upward evaluation plus downward flow propagation over a batch.

    Samples with zero likelihood receive no flow and are counted as skipped.
    """
    acc = FlowAccumulator.zeros(circuit)
    vals = log_values(circuit, batch, extra_log=extra_log)
    root_ll = vals[circuit.root]
    ok = root_ll > -np.inf
    acc.samples = batch.shape[0]
    acc.skipped = int(np.sum(~ok))
    acc.loglik = float(root_ll[ok].sum())

    n = batch.shape[0]
    flows = np.zeros((len(circuit.units), n))
    flows[circuit.root][ok] = 1.0
    for i in range(len(circuit.units) - 1, -1, -1):
        u = circuit.units[i]
        f = flows[i]
        if u.kind == SUM:
            active = f > 0
            if not np.any(active):
                continue
            vi = vals[i][active]
            fa = f[active]
            for idx, c in enumerate(u.children):
                contrib = fa * np.exp(u.log_weights[idx] + vals[c][active] - vi)
                flows[c][active] += contrib
                acc.edge_flows[i][idx] += contrib.sum()
        elif u.kind == PRODUCT:
            for c in u.children:
                flows[c] += f
        elif i in acc.input_counts:
            col = batch[:, u.var]
            observed = (col != MARGINALIZED) & (f > 0)
            np.add.at(acc.input_counts[i], col[observed], f[observed])
    record_sweep(len(circuit.units), n)
    return acc


def apply_update(
    circuit: Circuit,
    acc: FlowAccumulator,
    alpha: float,
    pseudocount: float,
    update_inputs: bool = True,
) -> None:
    """theta_{t+1} = alpha * theta_new + (1 - alpha) * theta_t, where theta_new
    normalizes the accumulated flows with the pseudocount. In-place on the
    parameter arrays; weights stay normalized. alpha = 0 changes nothing."""
    if alpha == 0.0:
        return
    for i, ef in acc.edge_flows.items():
        u = circuit.units[i]
        if u.frozen:
            continue
        total = ef.sum()
        if total == 0.0 and pseudocount == 0.0:
            continue  # no evidence touched this unit; keep its parameters
        # The flow ratio is normalized up to summation ulps (well inside the
        # 1e-12 invariant); renormalizing again would break exact equality
        # with empirical frequencies at pseudocount 0.
        theta_new = (ef + pseudocount) / (total + pseudocount * len(ef))
        if alpha == 1.0:
            theta = theta_new
        else:
            theta = alpha * theta_new + (1.0 - alpha) * np.exp(u.log_weights)
        with np.errstate(divide="ignore"):
            u.log_weights[:] = np.log(theta)
    if not update_inputs:
        return
    for i, counts in acc.input_counts.items():
        u = circuit.units[i]
        total = counts.sum()
        if total == 0.0 and pseudocount == 0.0:
            continue
        d_new = (counts + pseudocount) / (total + pseudocount * len(counts))
        d = d_new if alpha == 1.0 else alpha * d_new + (1.0 - alpha) * u.dist
        u.dist[:] = d


@dataclass
class EmStepReport:
    loglik: float
    samples: int
    skipped: int


def em_step(
    circuit: Circuit,
    batch: np.ndarray,
    alpha: float,
    pseudocount: float = 0.0,
    extra_log=None,
    update_inputs: bool = True,
) -> EmStepReport:
    """One expectation-maximization step on a batch. Returns the batch
    log-likelihood under the parameters *before* the update."""
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"learning rate {alpha} outside [0, 1]")
    batch = np.asarray(batch, dtype=np.int64)
    acc = accumulate_flows(circuit, batch, extra_log=extra_log)
    apply_update(circuit, acc, alpha, pseudocount, update_inputs=update_inputs)
    return EmStepReport(acc.loglik, acc.samples, acc.skipped)


# ---------------------------------------------------------------------------
# Closed-form estimation on deterministic active paths


@dataclass
class ClosedFormReport:
    samples: int
    skipped: int


def closed_form_mle(
    circuit: Circuit,
    data: AugmentedDataset | np.ndarray,
    pseudocount: float = 0.0,
    chunk: int = 8192,
) -> ClosedFormReport:
    """Estimate every parameter from deterministic path counts.

    Each complete sample must activate at most one child of every sum unit it
    reaches (support computed with all sum weights treated as strictly
    positive); otherwise the closed form is invalid and a structural error is
    raised. With pseudocount 0 the result maximizes the complete-data
    log-likelihood and equals empirical frequencies.
    """
    matrix = data.matrix(circuit.num_vars) if isinstance(data, AugmentedDataset) else data
    matrix = np.asarray(matrix, dtype=np.int64)
    acc = FlowAccumulator.zeros(circuit)
    skipped = 0
    for start in range(0, matrix.shape[0], chunk):
        batch = matrix[start : start + chunk]
        n = batch.shape[0]
        sup = support_values(circuit, batch)
        ok = sup[circuit.root]
        skipped += int(np.sum(~ok))
        active = np.zeros((len(circuit.units), n), dtype=bool)
        active[circuit.root] = ok
        for i in range(len(circuit.units) - 1, -1, -1):
            u = circuit.units[i]
            a = active[i]
            if not np.any(a):
                continue
            if u.kind == SUM:
                child_active = np.stack([sup[c] for c in u.children]) & a
                per_sample = child_active.sum(axis=0)
                if np.any(per_sample > 1):
                    raise StructuralError(
                        f"sum unit {i} has multiple supported children on an active "
                        "path; closed-form estimation requires determinism there"
                    )
                for idx, c in enumerate(u.children):
                    acc.edge_flows[i][idx] += child_active[idx].sum()
                    active[c] |= child_active[idx]
            elif u.kind == PRODUCT:
                for c in u.children:
                    active[c] |= a
            elif i in acc.input_counts:
                col = batch[:, u.var]
                observed = a & (col != MARGINALIZED)
                np.add.at(acc.input_counts[i], col[observed], 1.0)
        record_sweep(len(circuit.units), n)
    if skipped:
        log.warning("closed-form estimation skipped %d unsupported samples", skipped)
    apply_update(circuit, acc, alpha=1.0, pseudocount=pseudocount)
    return ClosedFormReport(samples=matrix.shape[0], skipped=skipped)


# ---------------------------------------------------------------------------
# Epoch-driving helpers


@dataclass
class EpochRecord:
    epoch: int
    phase: str
    alpha: float
    train_ll: float
    valid_ll: float | None = None


@dataclass
class TrainLog:
    records: list[EpochRecord] = field(default_factory=list)
    skipped: int = 0

    @property
    def final_train_ll(self) -> float:
        return self.records[-1].train_ll if self.records else float("nan")


def mean_loglik(circuit: Circuit, matrix: np.ndarray, extra_log=None, chunk: int = 8192) -> float:
    total = 0.0
    n = matrix.shape[0]
    for start in range(0, n, chunk):
        sl = slice(start, min(start + chunk, n))
        sub_extra = None
        if extra_log is not None:
            sub_extra = {u: arr[sl] for u, arr in extra_log.items()}
        total += float(log_values(circuit, matrix[sl], extra_log=sub_extra)[circuit.root].sum())
    return total / n


def train_em(
    circuit: Circuit,
    matrix: np.ndarray,
    cfg: TrainConfig,
    extra_log=None,
    valid_matrix=None,
    valid_extra=None,
    phase: str = "em",
    epoch_offset: int = 0,
) -> TrainLog:
    """Mini-batch EM with the config's linear learning-rate anneal.

    Per-epoch train (and optional validation) mean log-likelihoods are
    recorded after each epoch's updates; training stops early once the
    relative improvement falls below the convergence tolerance.
    """
    matrix = np.asarray(matrix, dtype=np.int64)
    rng = np.random.default_rng(cfg.seed)
    out = TrainLog()
    prev = None
    for e, alpha in enumerate(cfg.alpha_schedule()):
        order = rng.permutation(matrix.shape[0]) if cfg.shuffle else np.arange(matrix.shape[0])
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            sub_extra = None
            if extra_log is not None:
                sub_extra = {u: arr[idx] for u, arr in extra_log.items()}
            report = em_step(
                circuit,
                matrix[idx],
                alpha,
                pseudocount=cfg.pseudocount,
                extra_log=sub_extra,
                update_inputs=cfg.update_inputs,
            )
            out.skipped += report.skipped
        train_ll = mean_loglik(circuit, matrix, extra_log=extra_log)
        valid_ll = (
            mean_loglik(circuit, valid_matrix, extra_log=valid_extra)
            if valid_matrix is not None
            else None
        )
        out.records.append(EpochRecord(epoch_offset + e, phase, alpha, train_ll, valid_ll))
        if (
            cfg.convergence_tol is not None
            and prev is not None
            and train_ll - prev < cfg.convergence_tol * abs(prev)
        ):
            break
        prev = train_ll
    return out


# ---------------------------------------------------------------------------
# Factored training of the distilled objective


@dataclass
class FactoredTrainResult:
    joint_loglik: float
    empty_clusters: int
    sub_logs: dict[tuple[int, int], TrainLog]
    latent_log: TrainLog


def factored_lvd_train(
    circuit: Circuit,
    records: list[MaterializationRecord],
    data: AugmentedDataset,
    cfg: TrainConfig,
) -> FactoredTrainResult:
    """Train each latent-conditioned sub-circuit on exactly the samples
    assigned to its category, then the latent distribution on the assignments.

    The complete-data objective decomposes over those pieces, so optimizing
    them separately optimizes the joint; because every sub-circuit view shares
    parameter arrays with ``circuit``, the composite is trained in place.
    """
    matrix = data.matrix(circuit.num_vars)
    empty = 0
    joint = 0.0
    sub_logs: dict[tuple[int, int], TrainLog] = {}
    for i, record in enumerate(records):
        for j in range(record.cardinality):
            rows = np.flatnonzero(data.z[:, i] == j)
            if len(rows) == 0:
                log.warning(
                    "latent %d has no samples in category %d; leaving its "
                    "sub-circuit at initialization", i, j,
                )
                empty += 1
                continue
            view = conditional_subcircuit(circuit, record, j)
            sub_logs[(i, j)] = train_em(
                view, matrix[rows], cfg, phase=f"sub[{i},{j}]"
            )
            joint += sub_logs[(i, j)].final_train_ll * len(rows)
    lview = latent_view(circuit, records)
    latent_log = train_em(lview.circuit, matrix, cfg, phase="latent-mle")
    # The objective decomposes, so the joint log-likelihood is the sum of the
    # factored pieces; no sweep over the whole circuit is needed.
    joint += latent_log.final_train_ll * data.n
    return FactoredTrainResult(joint, empty, sub_logs, latent_log)


def latent_finetune(
    circuit: Circuit,
    records: list[MaterializationRecord],
    x_data: np.ndarray,
    cfg: TrainConfig,
    valid_x: np.ndarray | None = None,
) -> TrainLog:
    """Finetune only the latent-distribution parameters against the marginal
    objective, with every latent-conditioned sub-circuit's likelihood cached
    from a single pass and held fixed."""
    view = latent_view(circuit, records)
    matrix = pad_to_vars(x_data, circuit.num_vars)
    bonus = latent_bonus_cache(circuit, view, matrix)
    valid_matrix = None
    valid_bonus = None
    if valid_x is not None:
        valid_matrix = pad_to_vars(valid_x, circuit.num_vars)
        valid_bonus = latent_bonus_cache(circuit, view, valid_matrix)
    return train_em(
        view.circuit,
        matrix,
        cfg,
        extra_log=bonus,
        valid_matrix=valid_matrix,
        valid_extra=valid_bonus,
        phase="latent-finetune",
    )


def full_finetune(
    circuit: Circuit,
    x_data: np.ndarray,
    cfg: TrainConfig,
    valid_x: np.ndarray | None = None,
    phase: str = "finetune",
) -> TrainLog:
    """Mini-batch EM on the marginal objective over the observed variables."""
    matrix = pad_to_vars(x_data, circuit.num_vars)
    valid_matrix = pad_to_vars(valid_x, circuit.num_vars) if valid_x is not None else None
    return train_em(circuit, matrix, cfg, valid_matrix=valid_matrix, phase=phase)
