import click

from .util import (
    ensure_parent,
    load_dataset,
    load_model,
    load_severity_table,
    record_run,
    seed_option,
    severity_table_option,
)


def _common_options(function):
    function = click.option(
        "--out", type=click.Path(), required=True, help="CSV file to write"
    )(function)
    function = severity_table_option(function)
    function = seed_option(function)
    function = click.option(
        "--batch-size", type=click.IntRange(min=2), default=32, show_default=True
    )(function)
    function = click.option(
        "--kind", default="gaussian_noise", show_default=True, help="Corruption kind"
    )(function)
    function = click.option(
        "--layer", required=True, help="Layer to examine; there is no default"
    )(function)
    function = click.option(
        "--labels",
        type=click.Path(exists=True, dir_okay=False),
        help="RLBL1 labels file  [default: next to --data]",
    )(function)
    function = click.option(
        "--data",
        type=click.Path(exists=True, dir_okay=False),
        required=True,
        help="Clean RSET1 images",
    )(function)
    return click.option("--model", type=click.Path(), required=True, help="Model basename")(
        function
    )


@click.group
def diagnose():
    """Measure how corruptions move features and BN statistics"""


@diagnose.command
@_common_options
@click.option("--adapted-model", type=click.Path(),
              help="Rectified model  [default: rectify on each corrupted batch]")
def cosine(model, data, labels, layer, kind, batch_size, seed, severity_table, out,
           adapted_model):
    """Feature similarity to clean features across severities 0-5"""
    from bnrectify.core import const
    from bnrectify.core.adaptation import draw_representation
    from bnrectify.core.corruptions import CorruptionSpec, corrupt_images
    from bnrectify.core.diagnostics import severity_similarity_curve, write_similarity_curve

    graph = load_model(model)
    dataset = load_dataset(data, labels)
    table = load_severity_table(severity_table)
    indices = draw_representation(dataset, batch_size, seed, "diagnose")
    clean = dataset.pixels(indices)
    corrupted = {
        severity: corrupt_images(clean, CorruptionSpec(kind, severity, seed), table, indices)
        for severity in const.SEVERITIES
    }
    adapted = load_model(adapted_model) if adapted_model else None
    points = severity_similarity_curve(graph, clean, corrupted, layer, adapted)
    write_similarity_curve(ensure_parent(out), points)
    record_run(out)
    for point in points:
        click.echo(
            f"severity {point.severity}: unadapted {point.unadapted:.4f} "
            f"adapted {point.adapted:.4f}"
        )


@diagnose.command
@_common_options
@click.option("--severity", type=click.IntRange(1, 5), default=3, show_default=True)
@click.option("--repeats", type=click.IntRange(min=1), default=100, show_default=True)
@click.option("--pool", type=click.IntRange(min=4), default=1000, show_default=True,
              help="Number of clean images to corrupt and draw batches from")
def statdist(model, data, labels, layer, kind, batch_size, seed, severity_table, out,
             severity, repeats, pool):
    """Distance between BN statistics of clean and corrupted batches"""
    from bnrectify.core.adaptation import draw_representation
    from bnrectify.core.corruptions import CorruptionSpec, corrupt_images
    from bnrectify.core.dataset import RawDataset, to_pixels_u8
    from bnrectify.core.diagnostics import style_distance_study, write_distance_table

    graph = load_model(model)
    dataset = load_dataset(data, labels)
    indices = draw_representation(dataset, min(pool, len(dataset)), seed, "pool")
    clean = dataset.subset(indices)
    spec = CorruptionSpec(kind, severity, seed)
    images = corrupt_images(clean.pixels(), spec, load_severity_table(severity_table), indices)
    corrupted = RawDataset(to_pixels_u8(images), clean.labels)
    study = style_distance_study(graph, clean, corrupted, layer, batch_size, repeats, seed)
    write_distance_table(ensure_parent(out), study)
    record_run(out)
    for name, (mean, variance) in study.items():
        click.echo(f"{name}: |dmean| {mean:.4g}  |dvar| {variance:.4g}")
