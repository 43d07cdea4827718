"""Extraction jobs: per-position suffix embeddings for token sequences and
per-patch features for images, with the optional MST-ancestor context pass."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .models import load_patch_encoder, load_sequence_encoder
from .pcem import FormatError, atomic_write_bytes, load_rows, write_pcem

MODES = ("sequence-suffix", "patch", "patch-with-context")


@dataclass
class ExtractionJob:
    model_id: str
    dataset_path: str
    mode: str
    output_dir: str
    suffix_window: int = 3
    patch_size: int = 1
    image_height: int = 0
    image_width: int = 0
    pixel_card: int = 256
    vocab_size: int = 0
    mst_path: str = ""
    layer: int = -1
    max_ancestors: int = 4
    batch_size: int = 256

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mode == "sequence-suffix" and self.suffix_window < 1:
            raise ValueError("suffix window must be >= 1")
        if self.mode.startswith("patch") and self.patch_size < 1:
            raise ValueError("patch size must be >= 1")
        if self.mode == "patch-with-context" and not self.mst_path:
            raise ValueError("patch-with-context needs an MST ordering file")


@dataclass
class ExtractionResult:
    files: list[str]
    rows: int
    manifest_path: str


def _write_manifest(job: ExtractionJob, files: list[str], n: int) -> str:
    manifest = {
        "model": job.model_id,
        "dataset": job.dataset_path,
        "mode": job.mode,
        "rows": n,
        "files": [
            {"path": os.path.basename(path), "rows": n, "index": i}
            for i, path in enumerate(files)
        ],
    }
    path = os.path.join(job.output_dir, "manifest.json")
    atomic_write_bytes(path, json.dumps(manifest, indent=2, sort_keys=True).encode())
    return path


def extract_sequence_embeddings(job: ExtractionJob) -> ExtractionResult:
    """One PCEM file per position t: mean-pooled hidden states of the tokens
    in the suffix window starting at t, contextualized over the whole
    sequence. Row order follows dataset order exactly."""
    tokens = load_rows(job.dataset_path)
    n, seq_len = tokens.shape
    if seq_len < job.suffix_window:
        raise ValueError(
            f"sequences of length {seq_len} are shorter than the "
            f"suffix window ({job.suffix_window})"
        )
    vocab = job.vocab_size or int(tokens.max()) + 1
    encoder = load_sequence_encoder(job.model_id, vocab, seq_len, layer=job.layer)
    states = encoder.token_states(tokens, batch_size=job.batch_size)
    os.makedirs(job.output_dir, exist_ok=True)
    files = []
    for t in range(seq_len):
        stop = min(t + job.suffix_window, seq_len)
        pooled = states[:, t:stop, :].mean(axis=1)
        path = os.path.join(job.output_dir, f"pos_{t:03d}.pcem")
        write_pcem(path, pooled)
        files.append(path)
    manifest = _write_manifest(job, files, n)
    return ExtractionResult(files, n, manifest)


def _split_patches(job: ExtractionJob, images: np.ndarray) -> np.ndarray:
    n, dims = images.shape
    height, width = job.image_height, job.image_width
    if not height or not width:
        side = int(round(dims ** 0.5))
        if side * side != dims:
            raise FormatError(
                "image dims are not square; pass image height/width explicitly"
            )
        height = width = side
    if height * width != dims:
        raise FormatError(f"rows of {dims} pixels do not match {height}x{width}")
    m = job.patch_size
    if height % m or width % m:
        raise FormatError(f"patch size {m} does not divide {height}x{width}")
    grid = images.reshape(n, height // m, m, width // m, m)
    # (n, k, m*m) with patches in row-major grid order.
    patches = grid.transpose(0, 1, 3, 2, 4).reshape(n, -1, m * m)
    return patches


def _load_ancestors(job: ExtractionJob, k: int) -> list[list[int]]:
    with open(job.mst_path) as fh:
        doc = json.load(fh)
    for key in ("edges", "root", "ancestor_order"):
        if key not in doc:
            raise FormatError(f"{job.mst_path}: missing key {key!r}")
    adj: list[list[int]] = [[] for _ in range(k)]
    for u, v in doc["edges"]:
        adj[u].append(v)
        adj[v].append(u)
    root = doc["root"]
    parent: dict[int, int | None] = {root: None}
    queue = [root]
    while queue:
        cur = queue.pop(0)
        for nxt in adj[cur]:
            if nxt not in parent:
                parent[nxt] = cur
                queue.append(nxt)
    chains = []
    for node in range(k):
        chain: list[int] = []
        cur = parent.get(node)
        while cur is not None:
            chain.append(cur)
            cur = parent[cur]
        chain.reverse()  # root first
        chains.append(chain[-job.max_ancestors :])
    return chains


def extract_patch_features(job: ExtractionJob) -> ExtractionResult:
    """One PCEM file per patch.

    Without context each patch is encoded alone. With mode
    ``patch-with-context`` the patch is encoded together with its ancestors
    on the correlation spanning tree (nearest ancestors, capped), and the
    target patch's state is emitted."""
    images = load_rows(job.dataset_path)
    patches = _split_patches(job, images)
    n, k, patch_dim = patches.shape
    scale = max(job.pixel_card - 1, 1)
    values = patches.astype(np.float32) / scale
    encoder = load_patch_encoder(job.model_id, patch_dim, k, layer=job.layer)
    ancestors = _load_ancestors(job, k) if job.mode == "patch-with-context" else None
    os.makedirs(job.output_dir, exist_ok=True)
    files = []
    for i in range(k):
        if ancestors is None:
            selected = [i]
        else:
            selected = ancestors[i] + [i]
        states = encoder.patch_states(
            values[:, selected, :], np.asarray(selected), batch_size=job.batch_size
        )
        features = states[:, -1, :]  # the target patch is the last token
        path = os.path.join(job.output_dir, f"patch_{i:03d}.pcem")
        write_pcem(path, features)
        files.append(path)
    manifest = _write_manifest(job, files, n)
    return ExtractionResult(files, n, manifest)
