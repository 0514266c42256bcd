import os

from invoke import task


DIR_BASE = "runs"
DIR_DATA = os.path.join(DIR_BASE, "data")
DIR_MODELS = os.path.join(DIR_BASE, "models")
DIR_CORRUPTED = os.path.join(DIR_BASE, "corrupted")
DIR_REPORTS = os.path.join(DIR_BASE, "reports")


@task
def clean(c):
    """Remove previous experiment outputs"""
    c.run(f"rm -rf {DIR_BASE}")


@task
def data(c, seed: int = 0):
    """Synthesize the built-in dataset and its corrupted test sets"""
    c.run(f"bnrectify make-dataset --out-dir {DIR_DATA} --seed {seed}")
    c.run(
        f"bnrectify corrupt --data {DIR_DATA}/test.rset --seed {seed} "
        f"--out-dir {DIR_CORRUPTED}"
    )


@task(pre=(data,))
def models(c, seed: int = 0):
    """Train the CE baseline, the BN/GN/IN presets and the augmented upper bound"""
    train = f"bnrectify -v train --data {DIR_DATA}/train.rset --seed {seed}"
    c.run(f"{train} --preset ref-baseline --out {DIR_MODELS}/baseline")
    for flavor in ("bn", "gn", "in"):
        c.run(f"{train} --preset tiny-cnn-{flavor} --out {DIR_MODELS}/tiny-{flavor}")
    c.run(f"{train} --augment gaussian_noise:3 --out {DIR_MODELS}/upper-bound")


@task(pre=(models,), default=True)
def report(c, seed: int = 0):
    """Evaluate every model on the corruption grid and run the ablations"""
    evaluate = f"bnrectify evaluate --corrupted-dir {DIR_CORRUPTED} --seed {seed}"
    c.run(f"{evaluate} --model {DIR_MODELS}/baseline --no-adapt --out {DIR_REPORTS}/baseline")
    baseline = f"--baseline-errors {DIR_REPORTS}/baseline.csv"
    c.run(
        f"{evaluate} --model {DIR_MODELS}/tiny-bn --clean-data {DIR_DATA}/test.rset "
        f"{baseline} --out {DIR_REPORTS}/tiny-bn"
    )
    for name in ("tiny-gn", "tiny-in", "upper-bound"):
        c.run(
            f"{evaluate} --model {DIR_MODELS}/{name} --clean-data {DIR_DATA}/test.rset "
            f"{baseline} --no-adapt --out {DIR_REPORTS}/{name}"
        )
    ablate = f"--model {DIR_MODELS}/tiny-bn --corrupted-dir {DIR_CORRUPTED} --seed {seed}"
    c.run(f"bnrectify ablate samples {ablate} {baseline} --out {DIR_REPORTS}/samples.csv")
    c.run(f"bnrectify ablate policy {ablate} --out {DIR_REPORTS}/policy.csv")
    c.run(f"bnrectify ablate layers {ablate} --out {DIR_REPORTS}/layers.csv")
    diagnose = f"--model {DIR_MODELS}/tiny-bn --data {DIR_DATA}/test.rset --seed {seed}"
    c.run(f"bnrectify diagnose statdist {diagnose} --layer bn1 --out {DIR_REPORTS}/statdist.csv")
    c.run(f"bnrectify diagnose cosine {diagnose} --layer bn3 --out {DIR_REPORTS}/cosine.csv")
