"""Command line for the embedding extractor."""

from __future__ import annotations

import sys

import click

from .jobs import MODES, ExtractionJob, extract_patch_features, extract_sequence_embeddings
from .models import ModelLoadError
from .pcem import FormatError


@click.command()
@click.option("--model", "model_id", required=True,
              help="random-bert:..., random-mae:..., or hf:<path>.")
@click.option("--dataset", "dataset_path", required=True, type=click.Path(),
              help="PCDS file or whitespace-separated text rows.")
@click.option("--mode", type=click.Choice(MODES), required=True)
@click.option("--out-dir", required=True, type=click.Path())
@click.option("--window", "suffix_window", type=int, default=3,
              help="Suffix window length (sequence-suffix mode).")
@click.option("--patch-size", type=int, default=1)
@click.option("--height", "image_height", type=int, default=0)
@click.option("--width", "image_width", type=int, default=0)
@click.option("--pixel-card", type=int, default=256)
@click.option("--vocab-size", type=int, default=0)
@click.option("--mst", "mst_path", type=click.Path(), default="",
              help="MST ordering JSON (patch-with-context mode).")
@click.option("--layer", type=int, default=-1,
              help="Encoder layer to read features from (-1 = final).")
@click.option("--max-ancestors", type=int, default=4)
@click.option("--batch-size", type=int, default=256)
def cli(model_id, dataset_path, mode, out_dir, suffix_window, patch_size,
        image_height, image_width, pixel_card, vocab_size, mst_path, layer,
        max_ancestors, batch_size):
    """Emit PCEM embedding files for a dataset using a pretrained or
    seeded-random encoder."""
    job = ExtractionJob(
        model_id=model_id,
        dataset_path=dataset_path,
        mode=mode,
        output_dir=out_dir,
        suffix_window=suffix_window,
        patch_size=patch_size,
        image_height=image_height,
        image_width=image_width,
        pixel_card=pixel_card,
        vocab_size=vocab_size,
        mst_path=mst_path,
        layer=layer,
        max_ancestors=max_ancestors,
        batch_size=batch_size,
    )
    if mode == "sequence-suffix":
        result = extract_sequence_embeddings(job)
    else:
        result = extract_patch_features(job)
    click.echo(f"wrote {len(result.files)} PCEM files ({result.rows} rows) to {out_dir}")


def main() -> None:
    try:
        cli(standalone_mode=False)
    except click.ClickException as exc:
        exc.show()
        sys.exit(2)
    except click.Abort:
        sys.exit(1)
    except ModelLoadError as exc:
        click.echo(f"model load failure: {exc}", err=True)
        sys.exit(5)
    except (FormatError, FileNotFoundError) as exc:
        click.echo(f"data error: {exc}", err=True)
        sys.exit(3)
    except ValueError as exc:
        click.echo(f"invalid job: {exc}", err=True)
        sys.exit(2)


if __name__ == "__main__":
    main()
