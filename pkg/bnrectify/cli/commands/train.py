import click

from bnrectify.core.model import PRESETS

from .util import (
    ensure_parent,
    load_dataset,
    load_severity_table,
    record_run,
    seed_option,
    severity_table_option,
)


@click.command
@click.option(
    "--preset",
    type=click.Choice(PRESETS),
    default="tiny-cnn-bn",
    show_default=True,
)
@click.option("--data", type=click.Path(exists=True, dir_okay=False), required=True,
              help="Training RSET1 images")
@click.option("--labels", type=click.Path(exists=True, dir_okay=False),
              help="RLBL1 labels file  [default: next to --data]")
@click.option("--eval-data", type=click.Path(exists=True, dir_okay=False),
              help="Held-out RSET1 images reported per epoch")
@click.option("--classes", type=click.IntRange(min=2), default=10, show_default=True)
@click.option("--epochs", type=click.IntRange(min=0), default=10, show_default=True)
@click.option("--lr", type=click.FloatRange(min=0), default=0.05, show_default=True)
@click.option("--batch", type=click.IntRange(min=2), default=64, show_default=True)
@click.option("--momentum", type=click.FloatRange(0, 1), default=0.9, show_default=True)
@click.option("--weight-decay", type=click.FloatRange(min=0), default=5e-4, show_default=True)
@click.option("--augment", help="Train on corrupted images, as kind:severity")
@seed_option
@severity_table_option
@click.option("--out", type=click.Path(), required=True, help="Basename of the trained model")
def train(
    preset, data, labels, eval_data, classes, epochs, lr, batch, momentum, weight_decay,
    augment, seed, severity_table, out,
):
    """Train a preset network from scratch"""
    from pathlib import Path

    from bnrectify.core import serialization, trainer
    from bnrectify.core.corruptions import CorruptionSpec
    from bnrectify.core.model import build_preset

    dataset = load_dataset(data, labels)
    held_out = load_dataset(eval_data) if eval_data else None
    config = trainer.TrainConfig(
        epochs=epochs,
        batch_size=batch,
        learning_rate=lr,
        momentum=momentum,
        weight_decay=weight_decay,
        seed=seed,
        augment=CorruptionSpec.parse(augment, seed) if augment else None,
    )
    model = build_preset(preset, dataset.image_shape, classes, seed)
    model, trace = trainer.train(
        model, dataset, config, held_out, load_severity_table(severity_table)
    )
    manifest, _ = serialization.save(model, ensure_parent(out))
    trainer.write_trace(Path(f"{out}.trace.csv"), trace)
    record_run(out)
    if trace:
        last = trace[-1]
        click.echo(
            f"epoch {last.epoch}: loss {last.loss:.4f}, train accuracy {last.train_acc:.3f}"
        )
    click.echo(f"model written to {manifest}")
