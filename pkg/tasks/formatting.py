from invoke import task


SOURCES = "bnrectify tests tasks docs/conf.py"


@task
def check(c):
    """Check all formatting, but do not modify files"""
    c.run(f"flake8 {SOURCES}", echo=True)
    c.run(f"isort --check {SOURCES}", echo=True)
    c.run(f"black --check {SOURCES}", echo=True)


@task(default=True)
def format(c):
    """Format all files"""
    c.run(f"isort {SOURCES}", echo=True)
    c.run(f"black {SOURCES}", echo=True)
