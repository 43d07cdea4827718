"""Dataset containers, token windowing, and evaluation metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError, PreconditionError

LN2 = math.log(2.0)


@dataclass
class Dataset:
    """Integer samples: token sequences (n, T) or channel-flattened 8-bit
    images (n, H*W)."""

    kind: str  # "tokens" | "images"
    data: np.ndarray
    card: int
    split: str = "train"
    height: int = 0
    width: int = 0

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.int64)
        if self.kind not in ("tokens", "images"):
            raise DataError(f"unknown dataset kind {self.kind!r}")
        if self.data.ndim != 2:
            raise DataError("dataset must be a 2-D sample matrix")
        if self.data.size and (self.data.min() < 0 or self.data.max() >= self.card):
            raise DataError(f"dataset values must lie in [0, {self.card})")
        if self.kind == "images" and self.height * self.width != self.data.shape[1]:
            raise DataError("image dims do not match the flattened row length")

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def dims(self) -> int:
        return self.data.shape[1]


def window_tokens(
    stream, seq_len: int, stride: int = 1, vocab_size: int | None = None, split: str = "train"
) -> Dataset:
    """All contiguous length-``seq_len`` windows of a token stream (stride 1
    by default), in stream order."""
    stream = np.asarray(stream, dtype=np.int64).ravel()
    if seq_len < 1:
        raise PreconditionError("window length must be >= 1")
    if stride < 1:
        raise PreconditionError("stride must be >= 1")
    if len(stream) < seq_len:
        raise DataError(
            f"stream of {len(stream)} tokens is shorter than the window ({seq_len}); "
            "the windowed dataset would be empty"
        )
    starts = np.arange(0, len(stream) - seq_len + 1, stride)
    windows = np.stack([stream[s : s + seq_len] for s in starts])
    card = int(stream.max()) + 1 if vocab_size is None else vocab_size
    return Dataset(kind="tokens", data=windows, card=card, split=split)


def compute_bpd(ll_total: float, n_samples: int, dims: int) -> float:
    """Bits per dimension: -LL / (ln 2 * n * dims)."""
    if dims <= 0 or n_samples <= 0:
        raise PreconditionError("bits-per-dimension needs positive sample and dim counts")
    return -ll_total / (LN2 * n_samples * dims)


def compute_perplexity(ll_total: float, token_count: int) -> float:
    """exp of the negative mean per-token log-likelihood; inf on overflow."""
    if token_count <= 0:
        raise PreconditionError("perplexity needs a positive token count")
    try:
        return math.exp(-ll_total / token_count)
    except OverflowError:
        return math.inf


@dataclass
class Metrics:
    ll_total: float
    n_samples: int
    dims: int
    bpd: float
    perplexity: float

    @classmethod
    def from_loglik(cls, ll_total: float, n_samples: int, dims: int) -> "Metrics":
        return cls(
            ll_total=ll_total,
            n_samples=n_samples,
            dims=dims,
            bpd=compute_bpd(ll_total, n_samples, dims),
            perplexity=compute_perplexity(ll_total, n_samples * dims),
        )
