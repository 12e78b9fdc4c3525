"""Command-line client: every portal capability behind scripting-friendly flags.

Exit codes: 0 success, 1 user error (bad flags, malformed query, empty
result), 2 server or transport error. Human output and errors go to stderr;
data (and all --json documents) go to stdout.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .catalog import MalformedQuery, Query, query_from_wire, query_to_wire
from .clientcore import (
    ClientConfig,
    ClientError,
    ConnectionFailed,
    EmptyResult,
    PortalClient,
    ServerError,
    TlsError,
    default_config_path,
)

FILETYPE_NAMES = ("single_plant", "multiple_plant", "annotated", "metadata_json")


def build_query(
    species=(),
    age_min=None,
    age_max=None,
    date_min=None,
    date_max=None,
    plant_id=None,
    filetypes=(),
    dataset_class=None,
    precompiled=None,
) -> Query:
    """Map CLI flags 1:1 onto a wire query document, then sanitize it exactly
    like the gateway would."""
    doc: dict = {}
    if species:
        doc["species"] = list(species)
    if age_min is not None:
        doc["age_min"] = age_min
    if age_max is not None:
        doc["age_max"] = age_max
    if date_min is not None:
        doc["date_min"] = date_min
    if date_max is not None:
        doc["date_max"] = date_max
    if plant_id is not None:
        doc["plant_id"] = plant_id
    if filetypes:
        doc["filetypes"] = list(filetypes)
    if dataset_class is not None:
        doc["dataset_class"] = dataset_class
    if precompiled is not None:
        doc["precompiled_id"] = precompiled
    return query_from_wire(doc)


def render_query_flags(query: Query) -> list[str]:
    """Inverse of the flag mapping; render_query_flags then parsing reproduces
    the query (the CLI round-trip the tests pin down)."""
    argv: list[str] = []
    doc = query_to_wire(query)
    for name in doc.get("species", []):
        argv += ["--species", name]
    for key in ("age_min", "age_max", "date_min", "date_max", "plant_id"):
        if key in doc:
            argv += [f"--{key.replace('_', '-')}", str(doc[key])]
    for ft in doc["filetypes"]:
        argv += ["--filetypes", ft]
    argv += ["--dataset-class", doc["dataset_class"]]
    if "precompiled_id" in doc:
        argv += ["--precompiled", doc["precompiled_id"]]
    return argv


def filter_options(command):
    for option in reversed(
        [
            click.option("--species", multiple=True, help="Species label; repeatable (OR-combined)."),
            click.option("--age-min", type=int, default=None),
            click.option("--age-max", type=int, default=None),
            click.option("--date-min", default=None, help="Earliest capture date, YYYY-MM-DD."),
            click.option("--date-max", default=None, help="Latest capture date, YYYY-MM-DD."),
            click.option("--plant-id", default=None),
            click.option(
                "--filetypes",
                multiple=True,
                type=click.Choice(FILETYPE_NAMES),
                help="Filetype to include; repeatable. Defaults to all four.",
            ),
            click.option("--dataset-class", type=click.Choice(["eagli", "field"]), default=None),
        ]
    ):
        command = option(command)
    return command


@click.group()
@click.option("--config", "config_path", default=None, type=click.Path(), help="Client config file (defaults to $TBC_CONFIG).")
@click.pass_context
def cli(ctx, config_path):
    """Client for the plant-data portal."""
    ctx.obj = {"config_path": Path(config_path) if config_path else None}


def _load_config(ctx) -> ClientConfig:
    return ClientConfig.load(ctx.obj["config_path"])


def _client(ctx) -> PortalClient:
    return PortalClient(_load_config(ctx))


@cli.group("config")
def config_group():
    """Local client configuration."""


@config_group.command("set-credentials")
@click.option("--server-url", required=True)
@click.option("--username", required=True)
@click.option("--password", default=None, help="Prompted when omitted.")
@click.option("--tls-trust", default=None, help='"system" or a path to a trusted certificate.')
@click.pass_context
def set_credentials(ctx, server_url, username, password, tls_trust):
    if password is None:
        password = click.prompt("Password", hide_input=True)
    path = ctx.obj["config_path"] or default_config_path()
    try:
        config = ClientConfig.load(path)
    except ClientError:
        config = ClientConfig()
    from dataclasses import replace

    config = replace(config, server_url=server_url, username=username, password=password)
    if tls_trust is not None:
        config = replace(config, tls_trust=tls_trust)
    saved = config.save(path)
    click.echo(f"credentials saved to {saved}", err=True)


def _set_path(ctx, attr: str, value: str):
    from dataclasses import replace

    path = ctx.obj["config_path"] or default_config_path()
    try:
        config = ClientConfig.load(path)
    except ClientError:
        config = ClientConfig()
    config = replace(config, **{attr: Path(value)})
    saved = config.save(path)
    click.echo(f"{attr.replace('_', ' ')} saved to {saved}", err=True)


@config_group.command("set-sample-path")
@click.argument("directory", type=click.Path(file_okay=False))
@click.pass_context
def set_sample_path(ctx, directory):
    _set_path(ctx, "sample_path", directory)


@config_group.command("set-download-path")
@click.argument("directory", type=click.Path(file_okay=False))
@click.pass_context
def set_download_path(ctx, directory):
    _set_path(ctx, "download_path", directory)


@cli.command()
@filter_options
@click.option("--precompiled", default=None, help="Precompiled dataset id (excludes all filters).")
@click.option("--json", "as_json", is_flag=True)
@click.pass_context
def check(ctx, precompiled, as_json, **flags):
    """Count matching files and parts without downloading anything."""
    query = build_query(precompiled=precompiled, **flags)
    with _client(ctx) as client:
        summary = client.check_query(query)
    if as_json:
        click.echo(json.dumps({
            "file_count": summary.file_count,
            "part_count": summary.part_count,
            "total_bytes": summary.total_bytes,
        }))
    else:
        click.echo(
            f"{summary.file_count} files in {summary.part_count} parts"
            f" ({summary.total_bytes / 1e6:.1f} MB)"
        )


@cli.command()
@filter_options
@click.option("--json", "as_json", is_flag=True)
@click.pass_context
def sample(ctx, as_json, **flags):
    """Download a random sample per selected filetype into the sample path."""
    query = build_query(**flags)
    with _client(ctx) as client:
        paths = client.get_sample(query)
    if as_json:
        click.echo(json.dumps({"files": [str(p) for p in paths]}))
    else:
        click.echo(f"wrote {len(paths)} sample files to {_load_config(ctx).sample_path}", err=True)
        for p in paths:
            click.echo(str(p))


@cli.command()
@filter_options
@click.option("--precompiled", default=None, help="Fetch a precompiled dataset instead of filtering.")
@click.option("--json", "as_json", is_flag=True)
@click.pass_context
def download(ctx, precompiled, as_json, **flags):
    """Download every file matching the query, part by part."""
    query = build_query(precompiled=precompiled, **flags)
    with _client(ctx) as client:
        if query.precompiled_id is not None:
            paths = client.get_precompiled(query.precompiled_id)
            doc = {"files_written": len(paths), "bytes_written": sum(p.stat().st_size for p in paths)}
            if as_json:
                click.echo(json.dumps(doc))
            else:
                click.echo(f"precompiled dataset extracted: {doc['files_written']} files", err=True)
            return
        report = client.download(query)
    if as_json:
        click.echo(json.dumps(report.to_json()))
    else:
        click.echo(
            f"job {report.job_id}: {report.parts_completed}/{report.parts_total} parts,"
            f" {report.files_written} files, {report.bytes_written / 1e6:.1f} MB"
            f" in {report.wall_time_seconds:.1f}s",
            err=True,
        )
    if report.parts_abandoned:
        click.echo(f"abandoned parts: {report.parts_abandoned}", err=True)
        sys.exit(2)


@cli.group()
def precompiled():
    """Precompiled datasets stored permanently on the server."""


@precompiled.command("list")
@click.option("--json", "as_json", is_flag=True)
@click.pass_context
def precompiled_list(ctx, as_json):
    with _client(ctx) as client:
        datasets = client.list_precompiled()
    if as_json:
        click.echo(json.dumps(datasets))
    else:
        for d in datasets:
            click.echo(f"{d['id']}\t{d['name']}\t{d['file_count']} files\t{d['bytes']} bytes")


@precompiled.command("get")
@click.argument("dataset_id")
@click.option("--json", "as_json", is_flag=True)
@click.pass_context
def precompiled_get(ctx, dataset_id, as_json):
    with _client(ctx) as client:
        paths = client.get_precompiled(dataset_id)
    if as_json:
        click.echo(json.dumps({"files": [str(p) for p in paths]}))
    else:
        click.echo(f"extracted {len(paths)} files", err=True)


def main(argv: list[str] | None = None) -> int:
    """Entry point with the documented exit-code mapping."""
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.ClickException as exc:
        exc.show(file=sys.stderr)
        return 1
    except (ConnectionFailed, TlsError, ServerError) as exc:
        click.echo(f"error: {exc}", err=True)
        return 2
    except (MalformedQuery, EmptyResult, ClientError) as exc:
        click.echo(f"error: {exc}", err=True)
        return 1
    except SystemExit as exc:
        return int(exc.code or 0)
    except KeyboardInterrupt:
        return 130


if __name__ == "__main__":
    sys.exit(main())
