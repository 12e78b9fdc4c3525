"""Corpus and benchmark tooling: generate synthetic corpora, build precompiled
archives, and run the parallel-user harness against a self-hosted gateway."""

from __future__ import annotations

import json
import sys
import tempfile
from pathlib import Path

import click

from .bench import host_corpus_gateway, run_parallel_user_bench
from .catalog import Catalog
from .cli import build_query, filter_options
from .datagen import (
    CorpusSpec,
    build_precompiled_archive,
    generate,
    write_precompiled_index,
)
from .jobengine import PartitionPolicy
from .objectstore import LatencyModel, LocalDirectoryStore


@click.group()
def cli():
    """Synthetic corpus generator and performance harness."""


@cli.command()
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--seed", type=int, default=42, show_default=True)
@click.option("--originals", type=int, default=300, show_default=True)
@click.option("--field-originals", type=int, default=0, show_default=True)
@click.option("--plants-min", type=int, default=1, show_default=True)
@click.option("--plants-max", type=int, default=5, show_default=True)
def corpus(out_dir, seed, originals, field_originals, plants_min, plants_max):
    """Generate a corpus directory: store/, catalog.jsonl, manifest.jsonl."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    spec = CorpusSpec(
        rng_seed=seed,
        n_originals=originals,
        n_field_originals=field_originals,
        plants_per_original=(plants_min, plants_max),
    )
    store = LocalDirectoryStore(out / "store")
    catalog = Catalog()
    manifest = generate(spec, store, catalog)
    catalog.save_snapshot(out / "catalog.jsonl")
    manifest.save(out / "manifest.jsonl")
    click.echo(
        f"generated {manifest.file_count} files"
        f" ({manifest.total_bytes / 1e6:.1f} MB) under {out}",
        err=True,
    )


@cli.command()
@click.option("--corpus", "corpus_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--id", "dataset_id", required=True)
@click.option("--name", required=True)
@filter_options
def precompiled(corpus_dir, dataset_id, name, **flags):
    """Build a precompiled archive for a query and register it in the corpus index."""
    corpus_path = Path(corpus_dir)
    query = build_query(**flags)
    catalog = Catalog.load_snapshot(corpus_path / "catalog.jsonl")
    store = LocalDirectoryStore(corpus_path / "store")
    out_dir = corpus_path / "precompiled"
    out_dir.mkdir(exist_ok=True)
    archive_path = out_dir / f"{dataset_id}.tar"
    file_count, archive_bytes = build_precompiled_archive(catalog, store, query, archive_path)

    index_path = out_dir / "index.json"
    entries = json.loads(index_path.read_text()) if index_path.exists() else []
    entries = [e for e in entries if e["id"] != dataset_id]
    entries.append(
        {"id": dataset_id, "name": name, "archive": archive_path.name, "file_count": file_count}
    )
    write_precompiled_index(index_path, entries)
    click.echo(
        f"precompiled {dataset_id}: {file_count} files, {archive_bytes / 1e6:.1f} MB", err=True
    )


@cli.command()
@click.option("--corpus", "corpus_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--users", "n_users", type=int, default=6, show_default=True)
@click.option("--per-object-delay-ms", type=float, default=20.0, show_default=True)
@click.option("--bandwidth-cap", type=float, default=0.0, show_default=True, help="bytes/second, 0 = uncapped")
@click.option("--target-part-bytes", type=int, default=64 * 1024 * 1024, show_default=True)
@click.option("--precompiled-id", default=None)
@click.option("--json", "as_json", is_flag=True)
@filter_options
def bench(corpus_dir, n_users, per_object_delay_ms, bandwidth_cap, target_part_bytes, precompiled_id, as_json, **flags):
    """Run the parallel-user benchmark against a self-hosted gateway."""
    query = build_query(**flags)
    latency = LatencyModel(
        per_object_delay_ms=per_object_delay_ms,
        bandwidth_cap_bytes_per_sec=bandwidth_cap,
    )
    with tempfile.TemporaryDirectory(prefix="portal-bench-") as tmp:
        workdir = Path(tmp)
        handle, credentials = host_corpus_gateway(
            corpus_dir,
            workdir,
            latency=latency,
            n_users=n_users,
            partition=PartitionPolicy(target_part_bytes=target_part_bytes),
        )
        try:
            result = run_parallel_user_bench(
                handle,
                credentials,
                query,
                n_users=n_users,
                precompiled_id=precompiled_id,
                workdir=workdir / "downloads",
            )
        finally:
            handle.stop()
    if as_json:
        click.echo(json.dumps(result.to_json()))
    else:
        click.echo(result.format_table())


def main():
    sys.exit(cli.main(standalone_mode=True))


if __name__ == "__main__":
    main()
