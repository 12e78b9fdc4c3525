"""Gateway operator commands: serve a config, hash passwords for the user list."""

from __future__ import annotations

import click

from .config import load_config
from .security import hash_password
from .serve import serve_forever


@click.group()
def cli():
    """Plant-data portal gateway."""


@cli.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False))
def serve(config_path):
    """Run the gateway until interrupted."""
    config = load_config(config_path)
    click.echo(f"serving on https://{config.host}:{config.port}", err=True)
    serve_forever(config)


@cli.command("hash-password")
@click.option("--password", default=None, help="Password to hash (prompted when omitted).")
def hash_password_cmd(password):
    """Print a password hash for the config users list."""
    if password is None:
        password = click.prompt("Password", hide_input=True, confirmation_prompt=True)
    click.echo(hash_password(password))


def main():
    cli()


if __name__ == "__main__":
    main()
