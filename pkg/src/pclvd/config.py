"""TOML pipeline configuration.

Sections: ``[dataset]`` (file paths or a synthetic recipe), ``[structure]``
(circuit family and sizes), ``[embeddings]`` (PCEM file directory or the
planted oracle), ``[train]`` (per-phase EM settings).
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError
from .learning import TrainConfig

DATASET_KINDS = ("tokens", "images", "synthetic-sequences", "synthetic-patches")
STRUCTURE_KINDS = ("hmm", "patch-pc", "hclt")
EMBEDDING_SOURCES = ("files", "planted")


@dataclass
class DatasetConfig:
    kind: str
    train: str = ""
    valid: str = ""
    test: str = ""
    vocab_size: int = 0
    height: int = 0
    width: int = 0
    pixel_card: int = 0  # zero means "inherit from [structure]" (default 256)
    # synthetic recipes; zero/empty means "inherit from [structure]"
    num_states: int = 8
    subtypes: int = 2
    seq_len: int = 0
    n_train: int = 2000
    n_valid: int = 200
    n_test: int = 200
    patch_size: int = 0
    categories: tuple[int, ...] = ()
    stream: bool = False  # token files hold one stream to window, not windows
    window_stride: int = 1

    def __post_init__(self):
        if self.kind not in DATASET_KINDS:
            raise ConfigError(f"dataset kind must be one of {DATASET_KINDS}, got {self.kind!r}")
        if self.kind in ("tokens", "images") and not self.train:
            raise ConfigError("file-backed datasets need a [dataset].train path")


@dataclass
class StructureConfig:
    kind: str
    seq_len: int = 0
    hidden_states: int = 0
    vocab_size: int = 0
    patch_size: int = 0
    hidden_size: int = 16
    z_hidden: int = 0  # 0 -> max of categories
    categories: tuple[int, ...] = ()
    height: int = 0
    width: int = 0
    pixel_card: int = 256
    num_vars: int = 0
    var_card: int = 2
    backbone: str = "chow-liu"  # chow-liu | chain

    def __post_init__(self):
        if self.kind not in STRUCTURE_KINDS:
            raise ConfigError(
                f"structure kind must be one of {STRUCTURE_KINDS}, got {self.kind!r}"
            )
        if self.backbone not in ("chow-liu", "chain"):
            raise ConfigError(f"backbone must be chow-liu or chain, got {self.backbone!r}")
        if self.kind == "hmm" and (self.seq_len < 1 or self.hidden_states < 1 or self.vocab_size < 1):
            raise ConfigError("hmm structure needs seq_len, hidden_states and vocab_size")
        if self.kind == "patch-pc" and (not self.categories or self.patch_size < 1):
            raise ConfigError("patch-pc structure needs patch_size and categories")


@dataclass
class EmbeddingConfig:
    source: str = "planted"
    dir: str = ""
    pattern: str = ""  # defaults to pos_*.pcem / patch_*.pcem by dataset kind

    def __post_init__(self):
        if self.source not in EMBEDDING_SOURCES:
            raise ConfigError(
                f"embeddings source must be one of {EMBEDDING_SOURCES}, got {self.source!r}"
            )
        if self.source == "files" and not self.dir:
            raise ConfigError("file-backed embeddings need an [embeddings].dir")


@dataclass
class TrainSection:
    batch_size: int = 1024
    pseudocount: float = 0.01
    seed: int = 0
    lvd_epochs: int = 10
    lvd_alpha_start: float = 0.1
    lvd_alpha_end: float = 0.01
    latent_epochs: int = 10
    latent_alpha_start: float = 0.1
    latent_alpha_end: float = 0.001
    finetune_epochs: int = 20
    finetune_alpha_start: float = 0.1
    finetune_alpha_end: float = 0.01
    finetune_update_inputs: bool = True
    convergence_tol: float = 1e-5

    def lvd(self) -> TrainConfig:
        return TrainConfig(
            batch_size=self.batch_size,
            alpha_start=self.lvd_alpha_start,
            alpha_end=self.lvd_alpha_end,
            epochs=self.lvd_epochs,
            pseudocount=self.pseudocount,
            seed=self.seed,
            convergence_tol=self.convergence_tol,
        )

    def latent(self) -> TrainConfig:
        return TrainConfig(
            batch_size=self.batch_size,
            alpha_start=self.latent_alpha_start,
            alpha_end=self.latent_alpha_end,
            epochs=self.latent_epochs,
            pseudocount=self.pseudocount,
            seed=self.seed,
            convergence_tol=self.convergence_tol,
        )

    def finetune(self) -> TrainConfig:
        return TrainConfig(
            batch_size=self.batch_size,
            alpha_start=self.finetune_alpha_start,
            alpha_end=self.finetune_alpha_end,
            epochs=self.finetune_epochs,
            pseudocount=self.pseudocount,
            seed=self.seed,
            convergence_tol=self.convergence_tol,
            update_inputs=self.finetune_update_inputs,
        )


@dataclass
class PipelineConfig:
    dataset: DatasetConfig
    structure: StructureConfig
    embeddings: EmbeddingConfig
    train: TrainSection
    seed: int = 0
    deterministic: bool = False
    baseline: bool = False
    source_path: str = ""
    raw: dict = field(default_factory=dict)


def _build_section(cls, table: dict[str, Any], name: str):
    fields = {f for f in cls.__dataclass_fields__}
    unknown = set(table) - fields
    if unknown:
        raise ConfigError(f"[{name}] has unknown keys: {sorted(unknown)}")
    kwargs = dict(table)
    for key in ("categories",):
        if key in kwargs:
            kwargs[key] = tuple(int(v) for v in kwargs[key])
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad [{name}] section: {exc}") from exc


def load_config(
    path: str,
    seed: int | None = None,
    deterministic: bool = False,
    baseline: bool = False,
) -> PipelineConfig:
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {path}: {exc}") from exc
    known = {"dataset", "structure", "embeddings", "train"}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    if "dataset" not in doc or "structure" not in doc:
        raise ConfigError("config needs [dataset] and [structure] sections")
    cfg = PipelineConfig(
        dataset=_build_section(DatasetConfig, doc["dataset"], "dataset"),
        structure=_build_section(StructureConfig, doc["structure"], "structure"),
        embeddings=_build_section(EmbeddingConfig, doc.get("embeddings", {}), "embeddings"),
        train=_build_section(TrainSection, doc.get("train", {}), "train"),
        deterministic=deterministic,
        baseline=baseline,
        source_path=path,
        raw=doc,
    )
    cfg.seed = seed if seed is not None else cfg.train.seed
    cfg.train.seed = cfg.seed
    return cfg
