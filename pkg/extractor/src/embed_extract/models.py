"""Encoder registry.

Model ids:

* ``random-bert:layers=2,hidden=32,heads=4,seed=0`` -- a BERT-architecture
  masked-LM encoder with deterministic seeded random weights, for offline and
  contract-testing use.
* ``random-mae:layers=2,hidden=32,heads=4,seed=0`` -- a masked-autoencoder
  style set encoder over patches: any subset of patches can be fed, each
  tagged with its position embedding, mirroring how an MAE encoder consumes
  unmasked patches.
* ``hf:<path-or-name>`` -- a pretrained checkpoint via ``transformers``;
  loading failures surface as ModelLoadError (the CLI exits nonzero).

All encoders run in eval mode with no dropout, so identical inputs give
identical embeddings.
"""

from __future__ import annotations

import numpy as np
import torch
from torch import nn


class ModelLoadError(RuntimeError):
    pass


def _parse_params(spec: str, defaults: dict) -> dict:
    params = dict(defaults)
    if spec:
        for item in spec.split(","):
            if not item:
                continue
            key, _, value = item.partition("=")
            if key not in params:
                raise ModelLoadError(f"unknown model parameter {key!r}")
            params[key] = int(value)
    return params


class SequenceEncoder:
    """Per-token hidden states for integer token sequences."""

    def __init__(self, model, layer: int):
        self.model = model.eval()
        self.layer = layer
        self.hidden_size = model.config.hidden_size

    @torch.no_grad()
    def token_states(self, tokens: np.ndarray, batch_size: int = 256) -> np.ndarray:
        out = []
        for start in range(0, len(tokens), batch_size):
            ids = torch.as_tensor(tokens[start : start + batch_size], dtype=torch.long)
            result = self.model(input_ids=ids, output_hidden_states=True)
            out.append(result.hidden_states[self.layer].numpy())
        return np.concatenate(out, axis=0)


class PatchSetModule(nn.Module):
    """Transformer over an arbitrary subset of position-tagged patches."""

    def __init__(self, patch_dim: int, num_positions: int, hidden: int, layers: int, heads: int):
        super().__init__()
        self.embed = nn.Linear(patch_dim, hidden)
        self.pos = nn.Parameter(torch.randn(num_positions, hidden) * 0.02)
        self.blocks = nn.ModuleList(
            nn.TransformerEncoderLayer(
                d_model=hidden, nhead=heads, dim_feedforward=4 * hidden,
                dropout=0.0, batch_first=True,
            )
            for _ in range(layers)
        )

    def forward(self, values: torch.Tensor, positions: torch.Tensor) -> list[torch.Tensor]:
        tok = self.embed(values) + self.pos[positions][None, :, :]
        states = [tok]
        for block in self.blocks:
            tok = block(tok)
            states.append(tok)
        return states


class PatchEncoder:
    def __init__(self, module: PatchSetModule, layer: int, hidden_size: int):
        self.module = module.eval()
        self.layer = layer
        self.hidden_size = hidden_size

    @torch.no_grad()
    def patch_states(
        self, values: np.ndarray, positions: np.ndarray, batch_size: int = 256
    ) -> np.ndarray:
        """(n, s, patch_dim) patch values at the given s positions ->
        (n, s, hidden) states from the configured layer."""
        pos = torch.as_tensor(positions, dtype=torch.long)
        out = []
        for start in range(0, len(values), batch_size):
            chunk = torch.as_tensor(values[start : start + batch_size], dtype=torch.float32)
            states = self.module(chunk, pos)
            out.append(states[self.layer].numpy())
        return np.concatenate(out, axis=0)


def load_sequence_encoder(
    model_id: str, vocab_size: int, max_positions: int, layer: int = -1
) -> SequenceEncoder:
    if model_id.startswith("random-bert"):
        _, _, spec = model_id.partition(":")
        params = _parse_params(spec, {"layers": 2, "hidden": 32, "heads": 4, "seed": 0})
        try:
            from transformers import BertConfig, BertModel
        except ImportError as exc:
            raise ModelLoadError(f"transformers unavailable: {exc}") from exc
        torch.manual_seed(params["seed"])
        config = BertConfig(
            vocab_size=vocab_size,
            hidden_size=params["hidden"],
            num_hidden_layers=params["layers"],
            num_attention_heads=params["heads"],
            intermediate_size=4 * params["hidden"],
            max_position_embeddings=max(max_positions, 8),
        )
        return SequenceEncoder(BertModel(config), layer)
    if model_id.startswith("hf:"):
        path = model_id[3:]
        try:
            from transformers import AutoModel
        except ImportError as exc:
            raise ModelLoadError(f"transformers unavailable: {exc}") from exc
        try:
            model = AutoModel.from_pretrained(path)
        except Exception as exc:
            raise ModelLoadError(f"cannot load pretrained model {path!r}: {exc}") from exc
        return SequenceEncoder(model, layer)
    raise ModelLoadError(f"unknown sequence model id {model_id!r}")


def load_patch_encoder(
    model_id: str, patch_dim: int, num_positions: int, layer: int = -1
) -> PatchEncoder:
    if model_id.startswith("random-mae"):
        _, _, spec = model_id.partition(":")
        params = _parse_params(spec, {"layers": 2, "hidden": 32, "heads": 4, "seed": 0})
        torch.manual_seed(params["seed"])
        module = PatchSetModule(
            patch_dim, num_positions, params["hidden"], params["layers"], params["heads"]
        )
        return PatchEncoder(module, layer, params["hidden"])
    if model_id.startswith("hf:"):
        raise ModelLoadError(
            "pretrained patch encoders must be adapted per checkpoint; "
            "use random-mae:... or extend load_patch_encoder for your model"
        )
    raise ModelLoadError(f"unknown patch model id {model_id!r}")
