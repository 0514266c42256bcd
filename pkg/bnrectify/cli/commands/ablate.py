"""
Ablations over sample count, statistics scope and layer location
"""

import click

from .util import ensure_parent, load_model, record_run, seed_option


def _common_options(function):
    function = click.option(
        "--out", type=click.Path(), required=True, help="CSV file to write"
    )(function)
    function = seed_option(function)
    function = click.option(
        "--corrupted-dir",
        type=click.Path(exists=True, file_okay=False),
        required=True,
        help="Directory written by the corrupt command",
    )(function)
    return click.option("--model", type=click.Path(), required=True, help="Model basename")(
        function
    )


@click.group
def ablate():
    """Run the rectification ablations"""


@ablate.command
@_common_options
@click.option("--kind", default="gaussian_noise", show_default=True,
              help="Corruption kind, averaged over its severities")
@click.option("--counts", default="1,2,4,8,16,32,64", show_default=True,
              help="Comma-separated sample counts")
@click.option("--baseline-errors", type=click.Path(exists=True, dir_okay=False),
              help="report.csv of the CE baseline model")
def samples(model, corrupted_dir, seed, out, kind, counts, baseline_errors):
    """Accuracy against the number of representation samples"""
    from bnrectify.core import adaptation, metrics, util
    from bnrectify.core.corruptions import load_corrupted_dir

    graph = load_model(model)
    sets = load_corrupted_dir(corrupted_dir, kinds=[kind])
    baseline = metrics.read_error_table(baseline_errors) if baseline_errors else None
    rows = adaptation.ablate_sample_count(
        graph, sets, util.parse_int_list(counts, "count"), seed, baseline
    )
    adaptation.write_sample_count_table(ensure_parent(out), rows)
    record_run(out)
    for row in rows:
        click.echo(f"n={row.count:<3d} Acc {util.format_percent(row.accuracy)}")


def _policy_ablation(model, corrupted_dir, seed, out, n, policies):
    from bnrectify.core import adaptation, metrics
    from bnrectify.core.corruptions import load_corrupted_dir

    graph = load_model(model)
    sets = load_corrupted_dir(corrupted_dir)
    tables = adaptation.ablate_policies(graph, sets, policies(n), seed)
    metrics.write_accuracy_table(ensure_parent(out), tables)
    record_run(out)
    for name, table in tables.items():
        click.echo(f"{name:<14s} {100 * table.accuracy:.1f}%")


@ablate.command
@_common_options
@click.option("--n", "n", type=click.IntRange(min=1), default=32, show_default=True)
def policy(model, corrupted_dir, seed, out, n):
    """Rectify both statistics, the mean only, or the variance only"""
    from bnrectify.core.adaptation import stats_policies

    _policy_ablation(model, corrupted_dir, seed, out, n, stats_policies)


@ablate.command
@_common_options
@click.option("--n", "n", type=click.IntRange(min=1), default=32, show_default=True)
def layers(model, corrupted_dir, seed, out, n):
    """Rectify the front, middle or end third of the BN layers"""
    from bnrectify.core.adaptation import location_policies

    _policy_ablation(model, corrupted_dir, seed, out, n, location_policies)
