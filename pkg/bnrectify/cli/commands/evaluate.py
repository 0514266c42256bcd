import click

from .util import (
    ensure_parent,
    load_dataset,
    load_model,
    make_policy,
    policy_options,
    record_run,
    seed_option,
)


@click.command
@click.option("--model", type=click.Path(), required=True, help="Model basename")
@click.option("--corrupted-dir", type=click.Path(exists=True, file_okay=False), required=True,
              help="Directory written by the corrupt command")
@click.option("--clean-data", type=click.Path(exists=True, dir_okay=False),
              help="Clean RSET1 test images")
@click.option("--baseline-errors", type=click.Path(exists=True, dir_okay=False),
              help="report.csv of the CE baseline model")
@policy_options
@seed_option
@click.option("--no-adapt", is_flag=True, help="Skip the adapted evaluation")
@click.option("--exclude-representation", is_flag=True,
              help="Leave representation samples out of the adapted evaluation")
@click.option("--out", type=click.Path(), required=True,
              help="Report prefix; writes <out>.csv and <out>.json")
def evaluate(
    model, corrupted_dir, clean_data, baseline_errors, n, stats, layers, seed, no_adapt,
    exclude_representation, out,
):
    """Evaluate a model on the corruption grid, with and without rectification"""
    from bnrectify.core import metrics, util
    from bnrectify.core.adaptation import evaluate_adapted
    from bnrectify.core.corruptions import load_corrupted_dir

    graph = load_model(model)
    sets = load_corrupted_dir(corrupted_dir)
    clean = load_dataset(clean_data) if clean_data else None
    baseline = metrics.read_error_table(baseline_errors) if baseline_errors else None

    table, clean_accuracy = metrics.evaluate(graph, sets, clean)
    adapted = None
    if not no_adapt and not graph.bn_layers():
        click.echo(
            f"warning: {graph.identifier} has no batch normalization layers; "
            "skipping the adapted evaluation",
            err=True,
        )
    elif not no_adapt:
        adapted = evaluate_adapted(
            graph, sets, make_policy(n, stats, layers), seed, exclude_representation
        )
    report = metrics.build_report(table, baseline, adapted, clean_accuracy)

    ensure_parent(out)
    metrics.write_report(report, f"{out}.csv", f"{out}.json")
    record_run(out)
    click.echo(f"Acc  {util.format_percent(report.accuracy)}")
    if adapted is not None:
        click.echo(f"Acc* {util.format_percent(report.accuracy_adapted)}")
    if report.mce is not None:
        click.echo(f"mCE  {report.mce:.1f}")
    if report.mce_adapted is not None:
        click.echo(f"mCE* {report.mce_adapted:.1f}")
