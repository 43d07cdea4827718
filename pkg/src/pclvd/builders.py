"""Circuit families: non-homogeneous HMMs, hidden Chow-Liu trees, and the
two-level patch composite for images.

All builders produce smooth, decomposable circuits with alternating sum and
product layers, and keep a product layer wherever a latent variable may later
be materialized (pass-through products over bare inputs).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .circuit import Circuit, CircuitBuilder, num_parameters, scope_of
from .errors import ConfigError, DataError, StructuralError
from .materialize import MaterializationRecord

log = logging.getLogger(__name__)

DIRICHLET_JITTER = 1.1


def _dirichlet(rng: np.random.Generator, size: int) -> np.ndarray:
    return rng.dirichlet(np.full(size, DIRICHLET_JITTER))


# ---------------------------------------------------------------------------
# Hidden Markov models


@dataclass
class HmmSpec:
    seq_len: int
    hidden_states: int
    vocab_size: int
    homogeneous: bool = False

    def __post_init__(self):
        if self.seq_len < 1 or self.hidden_states < 1 or self.vocab_size < 1:
            raise ConfigError("seq_len, hidden_states and vocab_size must all be >= 1")
        if self.homogeneous:
            raise ConfigError(
                "homogeneous HMMs need parameter tying, which is not supported"
            )


@dataclass
class HmmParams:
    """initial: (h,); transitions: (T-1, h, h) rows p(z_{t+1} | z_t);
    emissions: (T, h, V) rows p(x_t | z_t). Position-specific throughout."""

    initial: np.ndarray
    transitions: np.ndarray
    emissions: np.ndarray

    @property
    def seq_len(self) -> int:
        return self.emissions.shape[0]

    @property
    def hidden_states(self) -> int:
        return self.emissions.shape[1]

    @property
    def vocab_size(self) -> int:
        return self.emissions.shape[2]


def uniform_hmm_params(spec: HmmSpec) -> HmmParams:
    t, h, v = spec.seq_len, spec.hidden_states, spec.vocab_size
    return HmmParams(
        initial=np.full(h, 1.0 / h),
        transitions=np.full((max(t - 1, 0), h, h), 1.0 / h),
        emissions=np.full((t, h, v), 1.0 / v),
    )


def random_hmm_params(spec: HmmSpec, seed: int = 0) -> HmmParams:
    """Dirichlet-jittered rows; symmetric initializations stall EM."""
    rng = np.random.default_rng(seed)
    t, h, v = spec.seq_len, spec.hidden_states, spec.vocab_size
    return HmmParams(
        initial=_dirichlet(rng, h),
        transitions=np.array(
            [[_dirichlet(rng, h) for _ in range(h)] for _ in range(t - 1)]
        ).reshape(max(t - 1, 0), h, h),
        emissions=np.array(
            [[_dirichlet(rng, v) for _ in range(h)] for _ in range(t)]
        ).reshape(t, h, v),
    )


def hmm_circuit(params: HmmParams) -> Circuit:
    """Suffix-structured circuit computing the HMM joint over x_0..x_{T-1}.

    Position t contributes h product units with scope {t..T-1}; these are the
    units a latent variable per suffix attaches to.
    """
    t_len, h = params.seq_len, params.hidden_states
    builder = CircuitBuilder([params.vocab_size] * t_len)
    below: list[int] = []
    for t in range(t_len - 1, -1, -1):
        products = []
        for j in range(h):
            emission = builder.input_unit(t, params.emissions[t, j])
            if t == t_len - 1:
                products.append(builder.product_unit((emission,)))
            else:
                mix = builder.sum_unit(below, weights=params.transitions[t, j])
                products.append(builder.product_unit((emission, mix)))
        below = products
    builder.sum_unit(below, weights=params.initial)
    return builder.build()


def build_hmm(spec: HmmSpec, init: str = "random", seed: int = 0) -> Circuit:
    if init == "random":
        params = random_hmm_params(spec, seed)
    elif init == "uniform":
        params = uniform_hmm_params(spec)
    else:
        raise ConfigError(f"unknown HMM init {init!r}")
    circuit = hmm_circuit(params)
    log.info(
        "built HMM T=%d h=%d V=%d: %d units, %d parameters",
        spec.seq_len, spec.hidden_states, spec.vocab_size,
        len(circuit), num_parameters(circuit),
    )
    return circuit


def hmm_suffix_scopes(spec_or_circuit) -> list[int]:
    """The materializable suffix scopes {t..T-1}, one per position."""
    t_len = (
        spec_or_circuit.seq_len
        if isinstance(spec_or_circuit, HmmSpec)
        else spec_or_circuit.num_vars
    )
    return [scope_of(range(t, t_len)) for t in range(t_len)]


def materialize_hmm_suffixes(circuit: Circuit) -> tuple[Circuit, list[MaterializationRecord]]:
    """Materialize one latent variable per suffix position."""
    from .materialize import _rebase_records, materialize_lv

    current = circuit
    records = []
    for w in hmm_suffix_scopes(circuit):
        current, record = materialize_lv(current, w)
        records.append(record)
    return current, _rebase_records(current, records)


# ---------------------------------------------------------------------------
# Chow-Liu trees


@dataclass
class SpanningTree:
    edges: tuple[tuple[int, int], ...]
    root: int
    num_nodes: int

    def __post_init__(self):
        if len(self.edges) != self.num_nodes - 1:
            raise StructuralError("edge count does not span the node set")
        self.parents()

    def parents(self) -> list[int]:
        adj: list[list[int]] = [[] for _ in range(self.num_nodes)]
        for u, v in self.edges:
            adj[u].append(v)
            adj[v].append(u)
        parent = [-1] * self.num_nodes
        order = [self.root]
        seen = {self.root}
        while order:
            node = order.pop()
            for nxt in adj[node]:
                if nxt not in seen:
                    seen.add(nxt)
                    parent[nxt] = node
                    order.append(nxt)
        if len(seen) != self.num_nodes:
            raise StructuralError("edges do not form a spanning tree")
        return parent

    def children_lists(self) -> list[list[int]]:
        parent = self.parents()
        out: list[list[int]] = [[] for _ in range(self.num_nodes)]
        for i, p in enumerate(parent):
            if p >= 0:
                out[p].append(i)
        return out


def chain_tree(num_nodes: int) -> SpanningTree:
    return SpanningTree(
        tuple((i, i + 1) for i in range(num_nodes - 1)), 0, num_nodes
    )


def pairwise_mutual_information(data: np.ndarray, var_cards) -> np.ndarray:
    """MI between every pair of columns under Laplace-smoothed (pseudocount 1)
    empirical joints; marginals are taken from the smoothed joint so every
    entry is nonnegative."""
    data = np.asarray(data, dtype=np.int64)
    n, v = data.shape
    cards = np.asarray(var_cards, dtype=np.int64)
    mi = np.zeros((v, v))
    for a in range(v):
        for b in range(a + 1, v):
            ca, cb = int(cards[a]), int(cards[b])
            joint = np.bincount(data[:, a] * cb + data[:, b], minlength=ca * cb)
            joint = (joint + 1.0).reshape(ca, cb)
            joint /= joint.sum()
            pa = joint.sum(axis=1, keepdims=True)
            pb = joint.sum(axis=0, keepdims=True)
            mi[a, b] = mi[b, a] = float(np.sum(joint * np.log(joint / (pa * pb))))
    return mi


def maximum_spanning_tree(weights: np.ndarray, root: int = 0) -> SpanningTree:
    """Kruskal with ties broken by lexicographic (min-index, min-index) edges."""
    v = weights.shape[0]
    if v == 1:
        return SpanningTree((), root, 1)
    edges = sorted(
        ((a, b) for a in range(v) for b in range(a + 1, v)),
        key=lambda e: (-weights[e[0], e[1]], e[0], e[1]),
    )
    parent = list(range(v))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    chosen = []
    for a, b in edges:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb
            chosen.append((a, b))
            if len(chosen) == v - 1:
                break
    return SpanningTree(tuple(chosen), root, v)


def chow_liu_tree(data: np.ndarray, var_cards) -> SpanningTree:
    """Maximum-MI spanning tree over the data columns, rooted at variable 0."""
    data = np.asarray(data, dtype=np.int64)
    if data.ndim != 2 or data.shape[0] < 2:
        raise DataError("Chow-Liu estimation needs at least 2 samples")
    if data.shape[1] < 2:
        raise DataError("Chow-Liu estimation needs at least 2 variables")
    return maximum_spanning_tree(pairwise_mutual_information(data, var_cards), root=0)


def tree_weight(tree: SpanningTree, weights: np.ndarray) -> float:
    return float(sum(weights[u, v] for u, v in tree.edges))


# ---------------------------------------------------------------------------
# Hidden Chow-Liu trees


@dataclass
class HcltSpec:
    num_vars: int
    var_cards: tuple[int, ...]
    hidden_size: int
    backbone: SpanningTree | None = None

    def __post_init__(self):
        if len(self.var_cards) != self.num_vars:
            raise ConfigError("var_cards length must equal num_vars")
        if self.hidden_size < 1:
            raise ConfigError("hidden_size must be >= 1")
        if self.backbone is None:
            self.backbone = chain_tree(self.num_vars)
        if self.backbone.num_nodes != self.num_vars:
            raise ConfigError("backbone does not span the variables")


def _build_hclt_into(
    builder: CircuitBuilder,
    spec: HcltSpec,
    var_map,
    rng: np.random.Generator | None,
    leaf_factory=None,
) -> int:
    """Emit an HCLT into ``builder``; returns the root sum index.

    ``var_map[v]`` is the builder variable for backbone node v. ``leaf_factory``
    optionally overrides the emission unit: called as (node, hidden_state) and
    must return a unit index (used by the patch composite to gate sub-circuits
    on latent leaves).
    """
    h = spec.hidden_size
    children = spec.backbone.children_lists()
    order = [spec.backbone.root]
    stack = [spec.backbone.root]
    while stack:
        node = stack.pop()
        for c in children[node]:
            order.append(c)
            stack.append(c)

    per_state: dict[int, list[int]] = {}
    for node in reversed(order):
        var = var_map[node]
        card = int(builder.var_cards[var])
        products = []
        for j in range(h):
            if leaf_factory is not None:
                emission = leaf_factory(node, j)
            else:
                dist = _dirichlet(rng, card) if rng is not None else np.full(card, 1.0 / card)
                emission = builder.input_unit(var, dist)
            parts = [emission]
            for c in children[node]:
                w = _dirichlet(rng, h) if rng is not None else np.full(h, 1.0 / h)
                parts.append(builder.sum_unit(per_state[c], weights=w))
            products.append(builder.product_unit(parts))
        per_state[node] = products
    prior = _dirichlet(rng, h) if rng is not None else np.full(h, 1.0 / h)
    return builder.sum_unit(per_state[spec.backbone.root], weights=prior)


def build_hclt(spec: HcltSpec, init: str = "random", seed: int = 0) -> Circuit:
    if init == "random":
        rng = np.random.default_rng(seed)
    elif init == "uniform":
        rng = None
    else:
        raise ConfigError(f"unknown HCLT init {init!r}")
    builder = CircuitBuilder(spec.var_cards)
    root = _build_hclt_into(builder, spec, var_map=list(range(spec.num_vars)), rng=rng)
    circuit = builder.build(root)
    log.info(
        "built HCLT over %d vars, hidden %d: %d units, %d parameters",
        spec.num_vars, spec.hidden_size, len(circuit), num_parameters(circuit),
    )
    return circuit


# ---------------------------------------------------------------------------
# Patch composite


@dataclass
class PatchPcSpec:
    """Two-level image model: one latent category per patch, a latent-tree
    distribution coupling the patch categories, and one sub-circuit per
    (patch, category) over the patch pixels."""

    height: int
    width: int
    patch_size: int
    counts: tuple[int, ...]
    pixel_card: int = 256
    sub_hidden: int = 16
    z_hidden: int | None = None
    sub_backbones: list[SpanningTree] | None = None
    z_backbone: SpanningTree | None = None

    def __post_init__(self):
        m = self.patch_size
        if m < 1 or self.height % m or self.width % m:
            raise ConfigError("patch size must divide both image dimensions")
        k = (self.height // m) * (self.width // m)
        if len(self.counts) != k:
            raise ConfigError(f"expected {k} patch category counts, got {len(self.counts)}")
        if any(c < 1 for c in self.counts):
            raise ConfigError("patch category counts must be >= 1")
        if self.z_hidden is None:
            # Latent-distribution hidden size follows the largest category count.
            self.z_hidden = max(self.counts)

    @property
    def num_patches(self) -> int:
        return (self.height // self.patch_size) * (self.width // self.patch_size)

    @property
    def num_pixels(self) -> int:
        return self.height * self.width

    def patch_pixel_vars(self, i: int) -> list[int]:
        """Row-major pixel variables of patch i (patches ordered row-major)."""
        m = self.patch_size
        per_row = self.width // m
        pr, pc = divmod(i, per_row)
        return [
            (pr * m + r) * self.width + (pc * m + c)
            for r in range(m)
            for c in range(m)
        ]


def build_patch_pc(
    spec: PatchPcSpec, init: str = "random", seed: int = 0
) -> tuple[Circuit, list[MaterializationRecord]]:
    """Composite circuit over pixels plus one latent variable per patch.

    The joint factorizes as p(z) * prod_i p(x_i | z_i): a latent-tree model
    over the patch categories whose leaf mixtures gate, through indicator
    products, one sub-circuit per (patch, category). Every sum over a
    patch-plus-latent scope is deterministic by construction.
    """
    rng = np.random.default_rng(seed) if init == "random" else None
    if init not in ("random", "uniform"):
        raise ConfigError(f"unknown patch-PC init {init!r}")
    k = spec.num_patches
    d = spec.num_pixels
    var_cards = [spec.pixel_card] * d + list(spec.counts)
    builder = CircuitBuilder(var_cards)

    gate_products: list[list[int]] = []
    indicator_units: list[list[int]] = []
    for i in range(k):
        pixel_vars = spec.patch_pixel_vars(i)
        backbone = (
            spec.sub_backbones[i] if spec.sub_backbones is not None else chain_tree(len(pixel_vars))
        )
        sub_spec = HcltSpec(
            num_vars=len(pixel_vars),
            var_cards=tuple(spec.pixel_card for _ in pixel_vars),
            hidden_size=spec.sub_hidden,
            backbone=backbone,
        )
        gates = []
        indicators = []
        for j in range(spec.counts[i]):
            sub_root = _build_hclt_into(builder, sub_spec, var_map=pixel_vars, rng=rng)
            ind = builder.indicator(d + i, j)
            gates.append(builder.product_unit((ind, sub_root)))
            indicators.append(ind)
        gate_products.append(gates)
        indicator_units.append(indicators)

    z_backbone = spec.z_backbone if spec.z_backbone is not None else chain_tree(k)
    z_spec = HcltSpec(
        num_vars=k,
        var_cards=tuple(spec.counts),
        hidden_size=spec.z_hidden,
        backbone=z_backbone,
    )

    def gated_leaf(node: int, _state: int) -> int:
        w = (
            _dirichlet(rng, spec.counts[node])
            if rng is not None
            else np.full(spec.counts[node], 1.0 / spec.counts[node])
        )
        return builder.sum_unit(gate_products[node], weights=w)

    root = _build_hclt_into(
        builder, z_spec, var_map=[d + i for i in range(k)], rng=rng, leaf_factory=gated_leaf
    )
    circuit = builder.build(root)
    records = [
        MaterializationRecord(
            z_var=d + i,
            scope=scope_of(spec.patch_pixel_vars(i)),
            cardinality=spec.counts[i],
            product_units=tuple(gate_products[i]),
            indicator_units=tuple(indicator_units[i]),
        )
        for i in range(k)
    ]
    log.info(
        "built patch composite %dx%d M=%d k=%d: %d units, %d parameters",
        spec.height, spec.width, spec.patch_size, k, len(circuit), num_parameters(circuit),
    )
    return circuit, records
