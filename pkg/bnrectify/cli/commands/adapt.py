from pathlib import Path

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
@click.option("--data", type=click.Path(exists=True, dir_okay=False), required=True,
              help="RSET1 images to draw representation samples from")
@click.option("--labels", type=click.Path(exists=True, dir_okay=False),
              help="RLBL1 labels file  [default: next to --data]")
@policy_options
@seed_option
@click.option("--out", type=click.Path(), required=True, help="Basename of the adapted model")
def adapt(model, data, labels, n, stats, layers, seed, out):
    """Rectify BN population statistics from representation samples"""
    from dataclasses import replace

    from bnrectify.core import serialization
    from bnrectify.core.adaptation import adapt_to_dataset

    source = load_model(model)
    dataset = load_dataset(data, labels)
    policy = make_policy(n, stats, layers)
    adapted, _ = adapt_to_dataset(source, dataset, policy, seed, Path(data).stem)
    adapted = replace(adapted, metadata={
        **adapted.metadata, "adaptation": policy.label, "adapted_from": source.identifier,
    })
    manifest, _ = serialization.save(adapted, ensure_parent(out))
    record_run(out)
    click.echo(f"adapted model ({policy.label}) written to {manifest}")
