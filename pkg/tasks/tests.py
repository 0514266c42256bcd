from invoke import task


@task(default=True)
def all(c):
    """Run all fast tests"""
    c.run("pytest")


@task
def slow(c):
    """Run the directional robustness checks (trains several models)"""
    c.run("pytest -m slow")
