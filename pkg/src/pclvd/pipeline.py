"""End-to-end orchestration: build, materialize, induce, distill-train,
latent finetune, full finetune, evaluate.

Every stage persists its artifacts into the output directory and is recorded
in a manifest together with input-file hashes and the seeds in effect, so a
rerun with identical inputs is bit-identical in deterministic mode. A stage
failure aborts the run but leaves earlier artifacts and the manifest behind.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from .builders import (
    HcltSpec,
    HmmSpec,
    PatchPcSpec,
    build_hclt,
    build_hmm,
    build_patch_pc,
    chain_tree,
    chow_liu_tree,
    materialize_hmm_suffixes,
)
from .circuit import Circuit, marginal_batch
from .config import PipelineConfig
from .datasets import Dataset, Metrics, window_tokens
from .errors import ConfigError, DataError, PcError
from .fileformats import (
    PCDS_PIXELS,
    PCDS_TOKENS,
    load_dataset_file,
    read_assignments,
    read_embeddings,
    write_assignments,
    write_dataset,
    write_embeddings,
)
from .induce import EmbeddingMatrix, LVAssignment, induce_patch_lvs, induce_sequence_lvs
from .learning import (
    AugmentedDataset,
    EpochRecord,
    TrainLog,
    closed_form_mle,
    factored_lvd_train,
    full_finetune,
    latent_finetune,
    mean_loglik,
    pad_to_vars,
)
from .materialize import MaterializationRecord
from .serialize import atomic_write_text, load_circuit, save_circuit
from .synthetic import planted_patch_data, planted_sequence_data

log = logging.getLogger(__name__)

STAGES = (
    "build",
    "materialize",
    "induce",
    "train-lvd",
    "finetune-latent",
    "finetune",
    "eval",
)
BASELINE_SKIPPED = ("materialize", "induce", "train-lvd", "finetune-latent")


def sha256_file(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


@dataclass
class StageEntry:
    name: str
    status: str = "pending"
    outputs: dict[str, str] = field(default_factory=dict)
    detail: str = ""


@dataclass
class LoadedData:
    train: Dataset
    valid: Dataset | None
    test: Dataset | None
    embeddings: list[EmbeddingMatrix] | None = None
    input_files: list[str] = field(default_factory=list)


def _load_file_dataset(cfg: PipelineConfig, path: str, split: str) -> Dataset:
    rows = load_dataset_file(path)
    ds_cfg = cfg.dataset
    if ds_cfg.kind == "tokens":
        if ds_cfg.stream:
            return window_tokens(
                rows.ravel(),
                cfg.structure.seq_len,
                stride=ds_cfg.window_stride,
                vocab_size=ds_cfg.vocab_size or None,
                split=split,
            )
        card = ds_cfg.vocab_size or int(rows.max()) + 1
        return Dataset(kind="tokens", data=rows, card=card, split=split)
    return Dataset(
        kind="images",
        data=rows,
        card=ds_cfg.pixel_card or cfg.structure.pixel_card or 256,
        split=split,
        height=ds_cfg.height or cfg.structure.height,
        width=ds_cfg.width or cfg.structure.width,
    )


def load_data(cfg: PipelineConfig, out_dir: str | None = None) -> LoadedData:
    ds = cfg.dataset
    if ds.kind in ("tokens", "images"):
        train = _load_file_dataset(cfg, ds.train, "train")
        valid = _load_file_dataset(cfg, ds.valid, "valid") if ds.valid else None
        test = _load_file_dataset(cfg, ds.test, "test") if ds.test else None
        files = [p for p in (ds.train, ds.valid, ds.test) if p]
        return LoadedData(train, valid, test, input_files=files)
    if ds.kind == "synthetic-sequences":
        planted = planted_sequence_data(
            num_states=ds.num_states,
            subtypes=ds.subtypes,
            vocab_size=ds.vocab_size or cfg.structure.vocab_size,
            seq_len=ds.seq_len or cfg.structure.seq_len,
            n_train=ds.n_train,
            n_valid=ds.n_valid,
            n_test=ds.n_test,
            seed=cfg.seed,
        )
        card = planted.vocab_size
        data = LoadedData(
            Dataset("tokens", planted.train, card, "train"),
            Dataset("tokens", planted.valid, card, "valid"),
            Dataset("tokens", planted.test, card, "test"),
            embeddings=planted.embeddings,
        )
    elif ds.kind == "synthetic-patches":
        counts = ds.categories or cfg.structure.categories
        planted = planted_patch_data(
            height=ds.height or cfg.structure.height,
            width=ds.width or cfg.structure.width,
            patch_size=ds.patch_size or cfg.structure.patch_size,
            counts=tuple(counts),
            pixel_card=ds.pixel_card or cfg.structure.pixel_card or 256,
            n_train=ds.n_train,
            n_valid=ds.n_valid,
            n_test=ds.n_test,
            seed=cfg.seed,
        )
        data = LoadedData(
            Dataset("images", planted.train, planted.pixel_card, "train",
                    height=planted.height, width=planted.width),
            Dataset("images", planted.valid, planted.pixel_card, "valid",
                    height=planted.height, width=planted.width),
            Dataset("images", planted.test, planted.pixel_card, "test",
                    height=planted.height, width=planted.width),
            embeddings=planted.features,
        )
    else:
        raise ConfigError(f"unhandled dataset kind {ds.kind!r}")
    if out_dir is not None:
        dtype = PCDS_TOKENS if data.train.kind == "tokens" else PCDS_PIXELS
        for split, d in (("train", data.train), ("valid", data.valid), ("test", data.test)):
            if d is not None:
                path = os.path.join(out_dir, f"{split}.pcds")
                write_dataset(path, d.data, dtype)
                data.input_files.append(path)
        for t, emb in enumerate(data.embeddings or []):
            prefix = "pos" if data.train.kind == "tokens" else "patch"
            path = os.path.join(out_dir, f"{prefix}_{t:03d}.pcem")
            write_embeddings(path, emb)
            data.input_files.append(path)
    return data


# ---------------------------------------------------------------------------
# Stage implementations (also used by the CLI subcommands)


def build_structure(
    cfg: PipelineConfig, train: Dataset | None
) -> tuple[Circuit, list[MaterializationRecord]]:
    st = cfg.structure
    if st.kind == "hmm":
        if train is not None and train.dims != st.seq_len:
            raise ConfigError(
                f"dataset rows have {train.dims} positions but the structure "
                f"expects seq_len={st.seq_len}"
            )
        spec = HmmSpec(st.seq_len, st.hidden_states, st.vocab_size)
        return build_hmm(spec, init="random", seed=cfg.seed), []
    if st.kind == "hclt":
        if st.backbone == "chow-liu":
            if train is None:
                raise ConfigError("chow-liu backbone needs training data")
            backbone = chow_liu_tree(train.data, [train.card] * train.dims)
            num_vars, card = train.dims, train.card
        else:
            num_vars = st.num_vars or (train.dims if train else 0)
            card = st.var_card if not train else train.card
            backbone = chain_tree(num_vars)
        spec = HcltSpec(num_vars, tuple([card] * num_vars), st.hidden_size, backbone)
        return build_hclt(spec, init="random", seed=cfg.seed), []
    # patch-pc
    height = st.height or (train.height if train else 0)
    width = st.width or (train.width if train else 0)
    pixel_card = train.card if train is not None else st.pixel_card
    spec = PatchPcSpec(
        height=height,
        width=width,
        patch_size=st.patch_size,
        counts=tuple(st.categories),
        pixel_card=pixel_card,
        sub_hidden=st.hidden_size,
        z_hidden=st.z_hidden or None,
    )
    if st.backbone == "chow-liu" and train is not None:
        backbones = []
        for i in range(spec.num_patches):
            cols = spec.patch_pixel_vars(i)
            if len(cols) >= 2:
                backbones.append(
                    chow_liu_tree(train.data[:, cols], [pixel_card] * len(cols))
                )
            else:
                backbones.append(chain_tree(1))
        spec.sub_backbones = backbones
    circuit, records = build_patch_pc(spec, init="random", seed=cfg.seed)
    return circuit, records


def stage_materialize(
    cfg: PipelineConfig, circuit: Circuit, records: list[MaterializationRecord]
) -> tuple[Circuit, list[MaterializationRecord]]:
    if cfg.structure.kind == "hmm":
        return materialize_hmm_suffixes(circuit)
    if not records:
        raise PcError("patch composite is missing its materialization records")
    return circuit, records


def stage_induce(
    cfg: PipelineConfig,
    embeddings: list[EmbeddingMatrix],
    records: list[MaterializationRecord],
) -> LVAssignment:
    if cfg.structure.kind == "hmm":
        if len(embeddings) != cfg.structure.seq_len:
            raise DataError(
                f"need {cfg.structure.seq_len} per-position embedding files, "
                f"got {len(embeddings)}"
            )
        return induce_sequence_lvs(embeddings, cfg.structure.hidden_states, seed=cfg.seed)
    counts = [r.cardinality for r in records]
    if len(embeddings) != len(counts):
        raise DataError(f"need {len(counts)} per-patch embedding files, got {len(embeddings)}")
    return induce_patch_lvs(embeddings, counts, seed=cfg.seed)


def load_embedding_dir(directory: str) -> list[EmbeddingMatrix]:
    names = sorted(f for f in os.listdir(directory) if f.endswith(".pcem"))
    if not names:
        raise DataError(f"no .pcem files in {directory}")
    return [read_embeddings(os.path.join(directory, f)) for f in names]


def stage_train_lvd(
    cfg: PipelineConfig,
    aug: Circuit,
    records: list[MaterializationRecord],
    train: Dataset,
    assignment: LVAssignment,
) -> list[EpochRecord]:
    data = AugmentedDataset.from_records(train.data, assignment.z, records)
    if cfg.structure.kind == "hmm":
        closed_form_mle(aug, data, pseudocount=cfg.train.pseudocount)
        matrix = data.matrix(aug.num_vars)
        ll = mean_loglik(aug, matrix)
        return [EpochRecord(0, "lvd-closed-form", 1.0, ll)]
    result = factored_lvd_train(aug, records, data, cfg.train.lvd())
    recs = []
    for tl in result.sub_logs.values():
        recs.extend(tl.records)
    recs.extend(result.latent_log.records)
    return recs


def stage_finetune_latent(
    cfg: PipelineConfig,
    aug: Circuit,
    records: list[MaterializationRecord],
    train: Dataset,
    valid: Dataset | None,
) -> TrainLog:
    return latent_finetune(
        aug,
        records,
        train.data,
        cfg.train.latent(),
        valid_x=valid.data if valid is not None else None,
    )


def stage_finetune(
    cfg: PipelineConfig, circuit: Circuit, train: Dataset, valid: Dataset | None
) -> TrainLog:
    return full_finetune(
        circuit,
        train.data,
        cfg.train.finetune(),
        valid_x=valid.data if valid is not None else None,
    )


def evaluate_dataset(circuit: Circuit, data: Dataset, chunk: int = 8192) -> Metrics:
    """Marginal log-likelihood of a dataset under the (possibly augmented)
    circuit, latent columns summed out."""
    total = 0.0
    matrix = pad_to_vars(data.data, circuit.num_vars)
    for start in range(0, matrix.shape[0], chunk):
        total += float(marginal_batch(circuit, matrix[start : start + chunk]).sum())
    return Metrics.from_loglik(total, data.n, data.dims)


def write_metrics_csv(path: str, records: list[EpochRecord]) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["epoch", "phase", "train_ll", "valid_ll", "alpha"])
    for r in records:
        writer.writerow(
            [
                r.epoch,
                r.phase,
                repr(r.train_ll),
                "" if r.valid_ll is None else repr(r.valid_ll),
                repr(r.alpha),
            ]
        )
    atomic_write_text(path, buf.getvalue())


# ---------------------------------------------------------------------------
# Full pipeline


def pipeline_run(cfg: PipelineConfig, out_dir: str) -> dict:
    """Run every stage, persist artifacts, and return the manifest dict."""
    os.makedirs(out_dir, exist_ok=True)
    entries = {name: StageEntry(name) for name in STAGES}
    manifest_path = os.path.join(out_dir, "manifest.json")
    inputs: dict[str, str] = {}
    if cfg.source_path:
        inputs[cfg.source_path] = sha256_file(cfg.source_path)

    def write_manifest() -> dict:
        doc = {
            "seed": cfg.seed,
            "deterministic": cfg.deterministic,
            "baseline": cfg.baseline,
            "inputs": inputs,
            "stages": [
                {
                    "name": e.name,
                    "status": e.status,
                    "outputs": e.outputs,
                    "detail": e.detail,
                }
                for e in entries.values()
            ],
        }
        atomic_write_text(manifest_path, json.dumps(doc, indent=2, sort_keys=True))
        return doc

    def finish(name: str, outputs: list[str], detail: str = "") -> None:
        entries[name].status = "ok"
        entries[name].outputs = {p: sha256_file(p) for p in outputs}
        entries[name].detail = detail
        write_manifest()

    epoch_records: list[EpochRecord] = []
    current: str = "build"
    try:
        data = load_data(cfg, out_dir=out_dir)
        for p in data.input_files:
            inputs[p] = sha256_file(p)

        current = "build"
        circuit, built_records = build_structure(cfg, data.train)
        build_path = os.path.join(out_dir, "circuit.json")
        save_circuit(circuit, build_path, built_records or None)
        finish("build", [build_path], f"{len(circuit)} units")

        if cfg.baseline:
            for name in BASELINE_SKIPPED:
                entries[name].status = "skipped"
                entries[name].detail = "baseline mode"
            write_manifest()
            aug = circuit
            records: list[MaterializationRecord] = []
        else:
            current = "materialize"
            aug, records = stage_materialize(cfg, circuit, built_records)
            aug_path = os.path.join(out_dir, "augmented.json")
            save_circuit(aug, aug_path, records)
            finish("materialize", [aug_path], f"{len(records)} latent variables")

            current = "induce"
            if cfg.embeddings.source == "files":
                embeddings = load_embedding_dir(cfg.embeddings.dir)
                for name in sorted(os.listdir(cfg.embeddings.dir)):
                    if name.endswith(".pcem"):
                        p = os.path.join(cfg.embeddings.dir, name)
                        inputs[p] = sha256_file(p)
            else:
                if data.embeddings is None:
                    raise ConfigError(
                        "planted embeddings are only available for synthetic datasets"
                    )
                embeddings = data.embeddings
            assignment = stage_induce(cfg, embeddings, records)
            assign_path = os.path.join(out_dir, "assignments.pclv")
            write_assignments(assign_path, assignment)
            finish("induce", [assign_path], f"{assignment.z.shape[1]} latent columns")

            current = "train-lvd"
            epoch_records.extend(stage_train_lvd(cfg, aug, records, data.train, assignment))
            lvd_path = os.path.join(out_dir, "trained_lvd.json")
            save_circuit(aug, lvd_path, records)
            finish("train-lvd", [lvd_path])

            current = "finetune-latent"
            tl = stage_finetune_latent(cfg, aug, records, data.train, data.valid)
            epoch_records.extend(tl.records)
            latent_path = os.path.join(out_dir, "trained_latent.json")
            save_circuit(aug, latent_path, records)
            finish("finetune-latent", [latent_path], f"{len(tl.records)} epochs")

        current = "finetune"
        target = circuit if cfg.structure.kind == "hmm" else aug
        tl = stage_finetune(cfg, target, data.train, data.valid)
        epoch_records.extend(tl.records)
        final_path = os.path.join(out_dir, "final.json")
        save_circuit(target, final_path, records or None)
        csv_path = os.path.join(out_dir, "metrics.csv")
        write_metrics_csv(csv_path, epoch_records)
        finish("finetune", [final_path, csv_path], f"{len(tl.records)} epochs")

        current = "eval"
        eval_target = target
        results = {}
        for split, d in (("train", data.train), ("valid", data.valid), ("test", data.test)):
            if d is None:
                continue
            m = evaluate_dataset(eval_target, d)
            results[split] = {
                "ll_total": m.ll_total,
                "n": m.n_samples,
                "dims": m.dims,
                "bpd": m.bpd,
                "perplexity": m.perplexity,
            }
        eval_path = os.path.join(out_dir, "eval.json")
        atomic_write_text(eval_path, json.dumps(results, indent=2, sort_keys=True))
        finish("eval", [eval_path, csv_path])
    except Exception as exc:
        entries[current].status = "failed"
        entries[current].detail = f"{type(exc).__name__}: {exc}"
        write_manifest()
        raise PcError(f"stage {current!r} failed: {exc}") from exc
    return write_manifest()
