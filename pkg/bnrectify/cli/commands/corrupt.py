import click

from .util import (
    load_dataset,
    load_severity_table,
    record_run,
    seed_option,
    severity_table_option,
)


@click.command
@click.option("--data", type=click.Path(exists=True, dir_okay=False), required=True,
              help="Clean RSET1 images file")
@click.option("--labels", type=click.Path(exists=True, dir_okay=False),
              help="RLBL1 labels file  [default: next to --data]")
@click.option("--kinds", default="all", show_default=True,
              help="Comma-separated corruption kinds, or all")
@click.option("--severities", default="1,2,3,4,5", show_default=True,
              help="Comma-separated severities")
@seed_option
@severity_table_option
@click.option("--out-dir", type=click.Path(file_okay=False), required=True,
              help="Directory for <kind>-<severity>.rset/.rlbl")
def corrupt(data, labels, kinds, severities, seed, severity_table, out_dir):
    """Write corrupted copies of a dataset for every kind and severity"""
    from bnrectify.core import util
    from bnrectify.core.corruptions import KINDS, CorruptionSpec, corrupt_dataset
    from bnrectify.core.dataset import labels_path_for

    names = KINDS if kinds == "all" else tuple(k.strip() for k in kinds.split(",") if k.strip())
    specs = [
        CorruptionSpec(kind, severity, seed)
        for kind in names
        for severity in util.parse_int_list(severities, "severity")
    ]
    dataset = load_dataset(data, labels)
    table = load_severity_table(severity_table)
    util.make_output_dir(out_dir)
    written = corrupt_dataset(
        dataset, specs, out_dir, table, labels_source=labels or labels_path_for(data)
    )
    record_run(out_dir, directory=True)
    click.echo(f"wrote {len(written)} corrupted sets to {out_dir}")
