from __future__ import annotations

import hashlib
import io
import random
from collections import Counter

import pytest
from PIL import Image

from plantportal.catalog import Catalog, DatasetClass, FileType, Query, record_json_bytes, validate_record
from plantportal.datagen import (
    CorpusSpec,
    Manifest,
    NonEmptyTarget,
    build_precompiled_archive,
    flat_corpus,
    generate,
    make_png,
)
from plantportal.archive import iter_archive_entries
from plantportal.objectstore import LocalDirectoryStore


def fresh_targets(tmp_path, name="gen"):
    return LocalDirectoryStore(tmp_path / name / "store"), Catalog()


class TestMakePng:
    def test_exact_size_and_validity(self):
        rng = random.Random(0)
        for target in (9_000, 16_000, 150_000):
            data = make_png(rng, target)
            assert len(data) == target
            image = Image.open(io.BytesIO(data))
            image.load()
            assert image.size == (48, 48)

    def test_deterministic_given_rng_state(self):
        assert make_png(random.Random(5), 20_000) == make_png(random.Random(5), 20_000)


class TestGenerate:
    def test_empty_spec_yields_empty_manifest(self, tmp_path):
        store, catalog = fresh_targets(tmp_path)
        manifest = generate(CorpusSpec(n_originals=0), store, catalog)
        assert manifest.file_count == 0
        assert len(catalog) == 0

    def test_non_empty_target_rejected(self, tmp_path, small_corpus):
        store = LocalDirectoryStore(small_corpus.store_root)
        with pytest.raises(NonEmptyTarget):
            generate(CorpusSpec(n_originals=1), store, Catalog())

    def test_deterministic_corpus_and_manifest(self, tmp_path):
        spec = CorpusSpec(rng_seed=42, n_originals=8)
        store_a, catalog_a = fresh_targets(tmp_path, "a")
        store_b, catalog_b = fresh_targets(tmp_path, "b")
        manifest_a = generate(spec, store_a, catalog_a)
        manifest_b = generate(spec, store_b, catalog_b)
        path_a, path_b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        manifest_a.save(path_a)
        manifest_b.save(path_b)
        assert path_a.read_bytes() == path_b.read_bytes()
        for key in list(store_a.iter_keys())[:20]:
            assert store_a.get(key) == store_b.get(key)

    def test_structure_counts(self, small_corpus):
        manifest = small_corpus.manifest
        by_type = Counter(r.filetype for r in manifest.records)
        n_orig = small_corpus.spec.n_originals
        assert by_type[FileType.MULTIPLE_PLANT] == n_orig
        assert by_type[FileType.ANNOTATED] == n_orig
        crops = by_type[FileType.SINGLE_PLANT]
        assert crops == sum(manifest.plant_draws)  # generator's self-tally
        assert len(manifest.plant_draws) == n_orig
        lo, hi = small_corpus.spec.plants_per_original
        assert all(lo <= draw <= hi for draw in manifest.plant_draws)
        # One sidecar per original and one per crop; none for annotated copies.
        assert by_type[FileType.METADATA_JSON] == n_orig + crops

    def test_records_satisfy_schema_and_crop_bounds(self, small_corpus):
        for record in small_corpus.manifest.records:
            validate_record(record)
            if record.filetype is FileType.SINGLE_PLANT:
                assert 0 <= record.x_min < record.x_max <= record.width_px
                assert 0 <= record.y_min < record.y_max <= record.height_px

    def test_manifest_hashes_match_store_bytes(self, small_corpus):
        store = LocalDirectoryStore(small_corpus.store_root)
        recomputed = {
            r.record_id: hashlib.sha256(store.get(r.blob_key)).hexdigest()
            for r in small_corpus.manifest.records
        }
        assert recomputed == small_corpus.manifest.hashes

    def test_byte_size_equals_stored_length(self, small_corpus):
        store = LocalDirectoryStore(small_corpus.store_root)
        for record in small_corpus.manifest.records[::7]:
            assert len(store.get(record.blob_key)) == record.byte_size

    def test_sidecar_blob_is_canonical_record_json(self, small_corpus):
        store = LocalDirectoryStore(small_corpus.store_root)
        catalog = small_corpus.load_catalog()
        sidecar = next(r for r in small_corpus.manifest.records if r.record_id == "orig-00000-meta")
        image = catalog.get("orig-00000")
        assert store.get(sidecar.blob_key) == record_json_bytes(image)

    def test_plant_ids_recur_across_captures(self, small_corpus):
        crops = [r for r in small_corpus.manifest.records if r.filetype is FileType.SINGLE_PLANT]
        recaptured = Counter(r.plant_id for r in crops)
        assert any(count > 1 for count in recaptured.values())
        # Same plant, different capture days: ages must differ consistently.
        plant_id = next(pid for pid, count in recaptured.items() if count > 1)
        sightings = sorted(
            (r for r in crops if r.plant_id == plant_id), key=lambda r: r.capture_datetime
        )
        ages = [r.age_days for r in sightings]
        assert ages == sorted(ages)

    def test_manifest_file_round_trip(self, tmp_path, small_corpus):
        path = tmp_path / "roundtrip.jsonl"
        small_corpus.manifest.save(path)
        loaded = Manifest.load(path)
        assert loaded.hashes == small_corpus.manifest.hashes
        assert loaded.records == small_corpus.manifest.records
        assert loaded.plant_draws == small_corpus.manifest.plant_draws

    def test_field_records_are_originals_only(self, mixed_corpus):
        field_records = [
            r for r in mixed_corpus.manifest.records if r.dataset_class is DatasetClass.FIELD
        ]
        assert field_records
        assert all(
            r.filetype in (FileType.MULTIPLE_PLANT, FileType.METADATA_JSON) for r in field_records
        )
        assert all(r.plant_id is None for r in field_records)


class TestFlatCorpus:
    def test_exact_counts_and_sizes(self, tmp_path):
        store, catalog = fresh_targets(tmp_path)
        manifest = flat_corpus(store, catalog, n_files=25, file_bytes=9_000)
        assert manifest.file_count == 25
        assert manifest.total_bytes == 25 * 9_000
        assert len(catalog) == 25
        assert store.total_bytes() == 25 * 9_000


class TestPrecompiledBuild:
    def test_archive_contains_exact_query_result(self, tmp_path, small_corpus):
        catalog = small_corpus.load_catalog()
        store = LocalDirectoryStore(small_corpus.store_root)
        query = Query(filetypes=frozenset({FileType.ANNOTATED}))
        out = tmp_path / "annotated.tar"
        count, size = build_precompiled_archive(catalog, store, query, out)
        assert out.stat().st_size == size
        entries = dict(iter_archive_entries(out.read_bytes()))
        expected = {r.record_id + ".png" for r in catalog.list_matches(query)}
        assert set(entries) == expected
        assert count == len(expected)
        record = catalog.list_matches(query)[0]
        assert hashlib.sha256(entries[record.record_id + ".png"]).hexdigest() == (
            small_corpus.manifest.hashes[record.record_id]
        )
