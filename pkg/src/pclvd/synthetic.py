"""Synthetic datasets with planted latent structure, plus oracle embeddings.

The sequence generator plants a hierarchical hidden process over
``num_states`` coarse states: states are organized in a binary hierarchy
(groups of 4, pairs of 2, single states) and transitions prefer staying high
in the hierarchy, so coarser partitions of the state space are themselves
dynamically meaningful. An independent sticky binary subtype chain refines
each state's token block. Oracle embeddings encode the hierarchy with
decreasing scale (group strongest, subtype weakest), mimicking neural
features whose dominant directions carry the dominant structure: k-means at
cluster counts 2/4/8/16 recovers groups/pairs/states/(state, subtype)
respectively.

The patch generator plants one categorical per patch with a noisy pixel
pattern per category, and emits per-patch oracle features around one-hot
cluster centers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .induce import EmbeddingMatrix


@dataclass
class PlantedSequences:
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray
    embeddings: list[EmbeddingMatrix]  # per position, aligned with train rows
    states: np.ndarray  # (n_train, T) planted state
    subtypes: np.ndarray  # (n_train, T) planted subtype
    vocab_size: int


def _hierarchical_transition_matrix(
    num_states: int, stay: float, group_bias: float
) -> np.ndarray:
    """Jump targets prefer the same group-of-4, then the rest uniformly."""
    matrix = np.zeros((num_states, num_states))
    for s in range(num_states):
        group = s // 4
        for t in range(num_states):
            if t == s:
                matrix[s, t] += stay
                continue
            same_group = (t // 4) == group and num_states > 4
            in_group = max(min(4, num_states) - 1, 1)
            out_group = max(num_states - min(4, num_states), 1)
            if num_states <= 4:
                matrix[s, t] += (1.0 - stay) / (num_states - 1)
            elif same_group:
                matrix[s, t] += (1.0 - stay) * group_bias / in_group
            else:
                matrix[s, t] += (1.0 - stay) * (1.0 - group_bias) / out_group
    matrix /= matrix.sum(axis=1, keepdims=True)
    return matrix


def _hierarchical_centers(num_states: int, subtypes: int) -> np.ndarray:
    """(num_states * subtypes, d) embedding centers: group, pair, state and
    subtype blocks with decreasing scale."""
    groups = max(num_states // 4, 1)
    pairs = max(num_states // 2, 1)
    d = groups + pairs + num_states + subtypes
    centers = np.zeros((num_states * subtypes, d))
    for s in range(num_states):
        for b in range(subtypes):
            row = centers[s * subtypes + b]
            offset = 0
            row[offset + min(s // 4, groups - 1)] = 1.2
            offset += groups
            row[offset + min(s // 2, pairs - 1)] = 0.8
            offset += pairs
            row[offset + s] = 0.6
            offset += num_states
            row[offset + b] = 0.4
    return centers


def planted_sequence_data(
    num_states: int = 8,
    subtypes: int = 2,
    vocab_size: int = 64,
    seq_len: int = 8,
    n_train: int = 20000,
    n_valid: int = 2000,
    n_test: int = 2000,
    seed: int = 0,
    state_stick: float = 0.5,
    group_bias: float = 0.75,
    subtype_stick: float = 0.85,
    embed_noise: float = 0.05,
) -> PlantedSequences:
    if vocab_size % (num_states * subtypes) != 0:
        raise ConfigError("vocab_size must be a multiple of num_states * subtypes")
    rng = np.random.default_rng(seed)
    block = vocab_size // (num_states * subtypes)
    within = np.linspace(1.0, 0.25, block)
    within /= within.sum()
    transition = _hierarchical_transition_matrix(num_states, state_stick, group_bias)
    centers = _hierarchical_centers(num_states, subtypes)

    def sample_split(n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        states = np.empty((n, seq_len), dtype=np.int64)
        subs = np.empty((n, seq_len), dtype=np.int64)
        states[:, 0] = rng.integers(num_states, size=n)
        subs[:, 0] = rng.integers(subtypes, size=n)
        for t in range(1, seq_len):
            for s in range(num_states):
                rows = states[:, t - 1] == s
                states[rows, t] = rng.choice(num_states, size=rows.sum(), p=transition[s])
            stay_b = rng.random(n) < subtype_stick
            jump_b = rng.integers(1, max(subtypes, 2), size=n)
            subs[:, t] = np.where(stay_b, subs[:, t - 1], (subs[:, t - 1] + jump_b) % subtypes)
        offsets = (states * subtypes + subs) * block
        inner = rng.choice(block, size=(n, seq_len), p=within)
        return offsets + inner, states, subs

    train, states, subs = sample_split(n_train)
    valid, _, _ = sample_split(n_valid)
    test, _, _ = sample_split(n_test)

    embeddings = []
    for t in range(seq_len):
        e = centers[states[:, t] * subtypes + subs[:, t]].copy()
        e += rng.normal(0.0, embed_noise, size=e.shape)
        embeddings.append(EmbeddingMatrix(e.astype(np.float32), provenance=f"planted:pos={t}"))
    return PlantedSequences(train, valid, test, embeddings, states, subs, vocab_size)


@dataclass
class PlantedPatches:
    train: np.ndarray  # (n, H*W) pixel rows
    valid: np.ndarray
    test: np.ndarray
    features: list[EmbeddingMatrix]  # per patch, aligned with train rows
    assignments: np.ndarray  # (n_train, k) planted categories
    height: int
    width: int
    patch_size: int
    counts: tuple[int, ...]
    pixel_card: int


def planted_patch_data(
    height: int = 4,
    width: int = 4,
    patch_size: int = 2,
    counts: tuple[int, ...] = (4, 4, 4, 4),
    pixel_card: int = 2,
    n_train: int = 2000,
    n_valid: int = 200,
    n_test: int = 200,
    seed: int = 0,
    flip_prob: float = 0.05,
    embed_noise: float = 0.05,
) -> PlantedPatches:
    if height % patch_size or width % patch_size:
        raise ConfigError("patch size must divide the image dims")
    k = (height // patch_size) * (width // patch_size)
    if len(counts) != k:
        raise ConfigError(f"expected {k} category counts")
    rng = np.random.default_rng(seed)
    per_row = width // patch_size
    pixel_vars = []
    for i in range(k):
        pr, pc = divmod(i, per_row)
        pixel_vars.append(
            [
                (pr * patch_size + r) * width + (pc * patch_size + c)
                for r in range(patch_size)
                for c in range(patch_size)
            ]
        )
    patterns = [
        rng.integers(pixel_card, size=(counts[i], patch_size * patch_size))
        for i in range(k)
    ]

    def sample_split(n: int) -> tuple[np.ndarray, np.ndarray]:
        z = np.stack([rng.integers(counts[i], size=n) for i in range(k)], axis=1)
        images = np.zeros((n, height * width), dtype=np.int64)
        for i in range(k):
            pix = patterns[i][z[:, i]]
            flip = rng.random(pix.shape) < flip_prob
            noisy = np.where(flip, rng.integers(pixel_card, size=pix.shape), pix)
            images[:, pixel_vars[i]] = noisy
        return images, z

    train, z_train = sample_split(n_train)
    valid, _ = sample_split(n_valid)
    test, _ = sample_split(n_test)

    features = []
    for i in range(k):
        e = np.zeros((n_train, max(counts[i], 2)), dtype=np.float64)
        e[np.arange(n_train), z_train[:, i]] = 1.0
        e += rng.normal(0.0, embed_noise, size=e.shape)
        features.append(EmbeddingMatrix(e.astype(np.float32), provenance=f"planted:patch={i}"))
    return PlantedPatches(
        train, valid, test, features, z_train,
        height, width, patch_size, tuple(counts), pixel_card,
    )
