from invoke import task


@task(
    name="install",
    aliases=("inst",),
)
def install_all(c, hooks: bool = True):
    """Install bnrectify with its development tools and, optionally, the git hooks"""
    c.run("poetry install --with dev", echo=True)
    if hooks:
        c.run("pre-commit install", echo=True)
