from invoke import task


@task
def check(c, rev_range: str = "HEAD"):
    """Validate commit messages"""
    c.run(f"cz check --rev-range {rev_range}")


@task(default=True)
def commit(c, all: bool = False):
    """Commit changes"""
    c.run("cz commit --all" if all else "cz commit")


@task
def bump(c, dry_run: bool = False):
    """Bump the version and extend CHANGELOG.rst from the commit history"""
    c.run(f"cz bump --yes{' --dry-run' if dry_run else ''}", echo=True)
