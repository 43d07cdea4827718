"""Command-line entry points.

Exit codes: 0 ok, 2 configuration error, 3 data error, 4 structural error,
1 anything else.
"""

from __future__ import annotations

import json
import logging
import sys

import click

from .config import load_config
from .errors import CapacityError, ConfigError, DataError, PcError, StructuralError
from .fileformats import read_assignments, write_assignments
from .learning import EpochRecord
from .pipeline import (
    build_structure,
    evaluate_dataset,
    load_data,
    load_embedding_dir,
    pipeline_run,
    stage_finetune,
    stage_finetune_latent,
    stage_induce,
    stage_materialize,
    stage_train_lvd,
    write_metrics_csv,
)
from .serialize import load_circuit, save_circuit

log = logging.getLogger(__name__)


def _common_options(fn):
    fn = click.option("--config", "config_path", required=True, type=click.Path(), help="TOML pipeline configuration.")(fn)
    fn = click.option("--seed", type=int, default=None, help="Override the config seed.")(fn)
    fn = click.option("--deterministic", is_flag=True, help="Fixed-order reductions and seeded shuffles for bit-identical reruns.")(fn)
    fn = click.option("--baseline", is_flag=True, help="Random-init baseline: skip distillation stages.")(fn)
    return fn


def _load(config_path, seed, deterministic, baseline):
    return load_config(config_path, seed=seed, deterministic=deterministic, baseline=baseline)


@click.group()
def cli():
    """Probabilistic-circuit training with latent-variable distillation."""
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")


@cli.command()
@_common_options
@click.option("--out", required=True, type=click.Path(), help="Circuit JSON output path.")
def build(config_path, seed, deterministic, baseline, out):
    """Construct the configured circuit structure."""
    cfg = _load(config_path, seed, deterministic, baseline)
    data = load_data(cfg)
    circuit, records = build_structure(cfg, data.train)
    save_circuit(circuit, out, records or None)
    click.echo(f"wrote {out} ({len(circuit)} units)")


@cli.command()
@_common_options
@click.option("--circuit", "circuit_path", required=True, type=click.Path())
@click.option("--out", required=True, type=click.Path())
def materialize(config_path, seed, deterministic, baseline, circuit_path, out):
    """Materialize the latent variables for the configured structure."""
    cfg = _load(config_path, seed, deterministic, baseline)
    circuit, records = load_circuit(circuit_path)
    aug, records = stage_materialize(cfg, circuit, records)
    save_circuit(aug, out, records)
    click.echo(f"wrote {out} ({len(records)} latent variables)")


@cli.command()
@_common_options
@click.option("--embeddings", "embeddings_dir", type=click.Path(), default=None,
              help="Directory of PCEM files (defaults to [embeddings].dir).")
@click.option("--circuit", "circuit_path", required=True, type=click.Path(),
              help="Materialized circuit (for latent cardinalities).")
@click.option("--out", required=True, type=click.Path(), help="PCLV output path.")
def induce(config_path, seed, deterministic, baseline, embeddings_dir, circuit_path, out):
    """Cluster embeddings into latent-variable assignments."""
    cfg = _load(config_path, seed, deterministic, baseline)
    _, records = load_circuit(circuit_path)
    directory = embeddings_dir or cfg.embeddings.dir
    if directory:
        embeddings = load_embedding_dir(directory)
    else:
        data = load_data(cfg)
        if data.embeddings is None:
            raise ConfigError("no embeddings directory and no synthetic recipe")
        embeddings = data.embeddings
    assignment = stage_induce(cfg, embeddings, records)
    write_assignments(out, assignment)
    click.echo(f"wrote {out} ({assignment.n} samples, {assignment.z.shape[1]} latents)")


@cli.command("train-lvd")
@_common_options
@click.option("--circuit", "circuit_path", required=True, type=click.Path())
@click.option("--assignments", "assignments_path", required=True, type=click.Path())
@click.option("--out", required=True, type=click.Path())
@click.option("--metrics", "metrics_path", type=click.Path(), default=None)
def train_lvd(config_path, seed, deterministic, baseline, circuit_path,
              assignments_path, out, metrics_path):
    """Maximize the distilled complete-data objective."""
    cfg = _load(config_path, seed, deterministic, baseline)
    aug, records = load_circuit(circuit_path)
    assignment = read_assignments(assignments_path)
    data = load_data(cfg)
    records_out = stage_train_lvd(cfg, aug, records, data.train, assignment)
    save_circuit(aug, out, records)
    if metrics_path:
        write_metrics_csv(metrics_path, records_out)
    click.echo(f"wrote {out}")


@cli.command("finetune-latent")
@_common_options
@click.option("--circuit", "circuit_path", required=True, type=click.Path())
@click.option("--out", required=True, type=click.Path())
@click.option("--metrics", "metrics_path", type=click.Path(), default=None)
def finetune_latent(config_path, seed, deterministic, baseline, circuit_path, out, metrics_path):
    """Finetune only the latent-distribution parameters (cached sub-circuits)."""
    cfg = _load(config_path, seed, deterministic, baseline)
    aug, records = load_circuit(circuit_path)
    if not records:
        raise StructuralError("circuit has no latent-variable records to finetune")
    data = load_data(cfg)
    tl = stage_finetune_latent(cfg, aug, records, data.train, data.valid)
    save_circuit(aug, out, records)
    if metrics_path:
        write_metrics_csv(metrics_path, tl.records)
    click.echo(f"wrote {out} ({len(tl.records)} epochs)")


@cli.command()
@_common_options
@click.option("--circuit", "circuit_path", required=True, type=click.Path())
@click.option("--out", required=True, type=click.Path())
@click.option("--metrics", "metrics_path", type=click.Path(), default=None)
def finetune(config_path, seed, deterministic, baseline, circuit_path, out, metrics_path):
    """Mini-batch EM on the marginal objective over the observed variables."""
    cfg = _load(config_path, seed, deterministic, baseline)
    circuit, records = load_circuit(circuit_path)
    data = load_data(cfg)
    tl = stage_finetune(cfg, circuit, data.train, data.valid)
    save_circuit(circuit, out, records or None)
    if metrics_path:
        write_metrics_csv(metrics_path, tl.records)
    click.echo(f"wrote {out} ({len(tl.records)} epochs)")


@cli.command("eval")
@_common_options
@click.option("--circuit", "circuit_path", required=True, type=click.Path())
@click.option("--split", type=click.Choice(["train", "valid", "test"]), default="test")
@click.option("--out", type=click.Path(), default=None, help="Optional metrics JSON path.")
def eval_cmd(config_path, seed, deterministic, baseline, circuit_path, split, out):
    """Report marginal log-likelihood, bits per dimension, and perplexity."""
    cfg = _load(config_path, seed, deterministic, baseline)
    circuit, _ = load_circuit(circuit_path)
    data = load_data(cfg)
    target = {"train": data.train, "valid": data.valid, "test": data.test}[split]
    if target is None:
        raise DataError(f"config has no {split} split")
    m = evaluate_dataset(circuit, target)
    doc = {
        "split": split,
        "ll_total": m.ll_total,
        "n": m.n_samples,
        "dims": m.dims,
        "bpd": m.bpd,
        "perplexity": m.perplexity,
    }
    if out:
        from .serialize import atomic_write_text

        atomic_write_text(out, json.dumps(doc, indent=2, sort_keys=True))
    click.echo(json.dumps(doc, sort_keys=True))


@cli.command()
@_common_options
@click.option("--out-dir", required=True, type=click.Path())
def pipeline(config_path, seed, deterministic, baseline, out_dir):
    """Run every stage: build, materialize, induce, distill-train, latent
    finetune, full finetune, evaluate."""
    cfg = _load(config_path, seed, deterministic, baseline)
    manifest = pipeline_run(cfg, out_dir)
    ok = sum(1 for s in manifest["stages"] if s["status"] == "ok")
    click.echo(f"pipeline complete: {ok} stages ok, manifest at {out_dir}/manifest.json")


def main() -> None:
    try:
        cli(standalone_mode=False)
    except click.ClickException as exc:
        exc.show()
        sys.exit(2)
    except click.Abort:
        sys.exit(1)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(2)
    except DataError as exc:
        click.echo(f"data error: {exc}", err=True)
        sys.exit(3)
    except (StructuralError, CapacityError) as exc:
        click.echo(f"structural error: {exc}", err=True)
        sys.exit(4)
    except PcError as exc:
        click.echo(f"error: {exc}", err=True)
        # A wrapped stage failure keeps its original category for the exit code.
        cause = exc.__cause__
        if isinstance(cause, ConfigError):
            sys.exit(2)
        if isinstance(cause, DataError):
            sys.exit(3)
        if isinstance(cause, (StructuralError, CapacityError)):
            sys.exit(4)
        sys.exit(1)


if __name__ == "__main__":
    main()
