"""Turning neural embeddings into categorical latent-variable assignments.

The distillation recipe is clustering: run K-means on the embeddings of a
suffix window (sequences) or a patch (images) and use each sample's cluster id
as the value of the corresponding latent variable.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, PreconditionError

log = logging.getLogger(__name__)

KMEANS_MAX_ITER = 300
KMEANS_REL_TOL = 1e-6


@dataclass
class EmbeddingMatrix:
    """(n, d) float32 matrix plus a provenance tag (model/layer/position)."""

    data: np.ndarray
    provenance: str = ""

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 2 or self.data.shape[0] < 1 or self.data.shape[1] < 1:
            raise DataError("embeddings must be a non-empty 2-D matrix")
        if not np.all(np.isfinite(self.data)):
            raise DataError(f"embeddings contain NaN/Inf ({self.provenance or 'unnamed'})")

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]


@dataclass
class LVAssignment:
    """(n, k) integer matrix; column i holds the category of latent variable i."""

    z: np.ndarray
    cards: tuple[int, ...]

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=np.int64)
        if self.z.ndim != 2 or self.z.shape[1] != len(self.cards):
            raise DataError("assignment matrix shape does not match cardinalities")
        for i, card in enumerate(self.cards):
            col = self.z[:, i]
            if col.min(initial=0) < 0 or col.max(initial=0) >= card:
                raise DataError(f"latent variable {i} has values outside [0, {card})")

    @property
    def n(self) -> int:
        return self.z.shape[0]


@dataclass
class KMeansResult:
    centroids: np.ndarray
    assignments: np.ndarray
    objective: float
    iterations: int
    history: list[float] = field(default_factory=list)


def _squared_distances(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    d2 = (
        np.sum(points * points, axis=1)[:, None]
        + np.sum(centroids * centroids, axis=1)[None, :]
        - 2.0 * points @ centroids.T
    )
    return np.maximum(d2, 0.0)


def _plusplus_seeding(points: np.ndarray, m: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = _squared_distances(points, points[chosen[-1]][None, :])[:, 0]
    for _ in range(m - 1):
        total = d2.sum()
        if total <= 0.0:
            remaining = np.setdiff1d(np.arange(n), chosen)
            chosen.append(int(rng.choice(remaining)))
        else:
            chosen.append(int(rng.choice(n, p=d2 / total)))
        d2 = np.minimum(d2, _squared_distances(points, points[chosen[-1]][None, :])[:, 0])
    return points[chosen].copy()


def kmeans(
    embeddings: EmbeddingMatrix | np.ndarray,
    m: int,
    seed: int = 0,
    max_iter: int = KMEANS_MAX_ITER,
    rel_tol: float = KMEANS_REL_TOL,
) -> KMeansResult:
    """Lloyd's iterations from k-means++ seeding; deterministic given seed.

    Stops when the relative objective improvement drops below ``rel_tol`` or
    after ``max_iter`` iterations. Empty clusters are repaired by moving the
    point farthest from its centroid within the largest cluster.
    """
    points = embeddings.data if isinstance(embeddings, EmbeddingMatrix) else embeddings
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if not 1 <= m <= n:
        raise PreconditionError(f"need 1 <= clusters <= samples, got m={m}, n={n}")
    rng = np.random.default_rng(seed)
    centroids = _plusplus_seeding(points, m, rng)

    history: list[float] = []
    labels = np.zeros(n, dtype=np.int64)
    for iteration in range(1, max_iter + 1):
        d2 = _squared_distances(points, centroids)
        labels = np.argmin(d2, axis=1)
        objective = float(d2[np.arange(n), labels].sum())

        counts = np.bincount(labels, minlength=m)
        for empty in np.flatnonzero(counts == 0):
            donor = int(np.argmax(counts))
            members = np.flatnonzero(labels == donor)
            farthest = members[np.argmax(d2[members, donor])]
            labels[farthest] = empty
            counts[donor] -= 1
            counts[empty] += 1
            d2[farthest, empty] = 0.0
            objective = float(d2[np.arange(n), labels].sum())

        history.append(objective)
        if len(history) > 1 and history[-1] > history[-2] * (1.0 + 1e-12) + 1e-12:
            raise RuntimeError("k-means objective increased; invariant violated")
        for c in range(m):
            members = labels == c
            centroids[c] = points[members].mean(axis=0)
        if len(history) > 1:
            prev, cur = history[-2], history[-1]
            if prev - cur < rel_tol * max(prev, 1e-30):
                break
    return KMeansResult(
        centroids=centroids,
        assignments=labels,
        objective=history[-1],
        iterations=len(history),
        history=history,
    )


def induce_sequence_lvs(
    embeddings: list[EmbeddingMatrix], h: int, seed: int = 0
) -> LVAssignment:
    """Independent K-means per sequence position with m = h hidden states."""
    if not embeddings:
        raise PreconditionError("need at least one per-position embedding matrix")
    n = embeddings[0].n
    for t, e in enumerate(embeddings):
        if e.n != n:
            raise DataError(f"position {t} has {e.n} rows, expected {n}")
    columns = [kmeans(e, h, seed=seed).assignments for e in embeddings]
    return LVAssignment(np.stack(columns, axis=1), cards=(h,) * len(embeddings))


def induce_patch_lvs(
    features: list[EmbeddingMatrix], counts, seed: int = 0
) -> LVAssignment:
    """Independent K-means per patch with the patch's own category count."""
    counts = tuple(int(c) for c in counts)
    if len(features) != len(counts):
        raise DataError("one feature matrix per patch is required")
    n = features[0].n
    for i, e in enumerate(features):
        if e.n != n:
            raise DataError(f"patch {i} has {e.n} rows, expected {n}")
    columns = [
        kmeans(e, counts[i], seed=seed).assignments for i, e in enumerate(features)
    ]
    return LVAssignment(np.stack(columns, axis=1), cards=counts)


@dataclass
class PatchTree:
    """Maximum-correlation spanning tree over patches plus the ancestor-first
    traversal order used to schedule contextual re-embedding."""

    edges: tuple[tuple[int, int], ...]
    root: int
    ancestor_order: tuple[int, ...]
    num_patches: int
    excluded_rows: int = 0

    def to_json_dict(self) -> dict:
        return {
            "edges": [list(e) for e in self.edges],
            "root": self.root,
            "ancestor_order": list(self.ancestor_order),
        }


def mean_cosine_similarity(a: np.ndarray, b: np.ndarray) -> tuple[float, int]:
    """Mean over samples of the cosine between paired rows; rows where either
    side has zero norm are excluded. Returns (mean, excluded_count)."""
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    valid = (na > 0) & (nb > 0)
    excluded = int(np.sum(~valid))
    if not np.any(valid):
        return 0.0, excluded
    cos = np.sum(a[valid] * b[valid], axis=1) / (na[valid] * nb[valid])
    return float(np.mean(cos)), excluded


def patch_correlation_mst(features: list[EmbeddingMatrix]) -> PatchTree:
    """Spanning tree maximizing pairwise mean cosine similarity, rooted at
    patch 0, ties broken lexicographically."""
    from .builders import maximum_spanning_tree

    k = len(features)
    if k < 1:
        raise PreconditionError("need at least one patch")
    n = features[0].n
    for i, e in enumerate(features):
        if e.n != n:
            raise DataError(f"patch {i} has {e.n} rows, expected {n}")
    weights = np.zeros((k, k))
    excluded = 0
    for a in range(k):
        for b in range(a + 1, k):
            w, skipped = mean_cosine_similarity(
                features[a].data.astype(np.float64), features[b].data.astype(np.float64)
            )
            weights[a, b] = weights[b, a] = w
            excluded += skipped
    if excluded:
        log.warning("correlation MST excluded %d zero-norm sample pairs", excluded)
    tree = maximum_spanning_tree(weights, root=0)
    order = _ancestor_first_order(tree)
    return PatchTree(
        edges=tree.edges,
        root=tree.root,
        ancestor_order=tuple(order),
        num_patches=k,
        excluded_rows=excluded,
    )


def _ancestor_first_order(tree) -> list[int]:
    children = tree.children_lists()
    order = []
    queue = [tree.root]
    while queue:
        node = queue.pop(0)
        order.append(node)
        queue.extend(children[node])
    return order


def ancestors_on_path(tree_edges, root: int, node: int, num_nodes: int) -> list[int]:
    """Root-to-node ancestor chain (excluding the node itself)."""
    adj: list[list[int]] = [[] for _ in range(num_nodes)]
    for u, v in tree_edges:
        adj[u].append(v)
        adj[v].append(u)
    parent = {root: None}
    queue = [root]
    while queue:
        cur = queue.pop(0)
        for nxt in adj[cur]:
            if nxt not in parent:
                parent[nxt] = cur
                queue.append(nxt)
    chain = []
    cur = parent.get(node)
    while cur is not None:
        chain.append(cur)
        cur = parent[cur]
    chain.reverse()
    return chain
