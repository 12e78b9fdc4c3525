"""Deterministic synthetic corpus generator.

Emulates the structure of a robotic lab imager's output: each camera frame
(original) contains a tray of plants photographed together; post-processing
yields one annotated copy of the frame, one cropped image per plant, and JSON
metadata sidecars (one for the frame, one per crop). Blobs are small valid
PNGs padded with a private ancillary chunk to an exact target size, so byte
accounting in tests is deterministic down to the manifest hash.
"""

from __future__ import annotations

import hashlib
import json
import random
import struct
import zlib
from dataclasses import dataclass, field
from datetime import date, datetime, time, timedelta, timezone
from pathlib import Path
from typing import Iterable

from .archive import write_archive_file
from .catalog import (
    Catalog,
    DatasetClass,
    FileType,
    ImageRecord,
    Query,
    record_from_json,
    record_json_bytes,
    record_to_json,
)
from .jobengine import part_file
from .objectstore import LocalDirectoryStore


class NonEmptyTarget(Exception):
    """The target store/catalog already holds data."""


DEFAULT_SPECIES = (
    ("Soybean", "Glycine max"),
    ("Fallopia convolvulus", "Fallopia convolvulus"),
    ("Canola", "Brassica napus"),
    ("Wheat", "Triticum aestivum"),
    ("Oat", "Avena sativa"),
    ("Barley", "Hordeum vulgare"),
)

_CAMERAS = (
    ("Canon EOS 5DS R / EF 50mm", 2448, 2048),
    ("Basler acA4112-30uc / C23-1620", 2048, 1536),
)
_ROOMS = ("UW-GH-101", "UW-GH-102")


@dataclass(frozen=True)
class CorpusSpec:
    rng_seed: int = 42
    n_originals: int = 300
    plants_per_original: tuple[int, int] = (1, 5)
    species_pool: tuple[tuple[str, str], ...] = DEFAULT_SPECIES
    date_range: tuple[date, date] = (date(2021, 3, 1), date(2021, 11, 30))
    image_bytes: tuple[int, int] = (32_000, 288_000)
    n_field_originals: int = 0

    def to_json(self) -> dict:
        return {
            "rng_seed": self.rng_seed,
            "n_originals": self.n_originals,
            "plants_per_original": list(self.plants_per_original),
            "species_pool": [list(pair) for pair in self.species_pool],
            "date_range": [d.isoformat() for d in self.date_range],
            "image_bytes": list(self.image_bytes),
            "n_field_originals": self.n_field_originals,
        }


# --- minimal PNG ------------------------------------------------------------

_PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"
_PAD_CHUNK_TYPE = b"pdDa"  # ancillary + private + safe-to-copy: viewers skip it


def _png_chunk(chunk_type: bytes, data: bytes) -> bytes:
    return (
        struct.pack(">I", len(data))
        + chunk_type
        + data
        + struct.pack(">I", zlib.crc32(chunk_type + data))
    )


def make_png(rng: random.Random, byte_size: int, width: int = 48, height: int = 48) -> bytes:
    """A valid RGB noise PNG of exactly ``byte_size`` bytes (padded via an
    ancillary chunk). Falls back to the unpadded minimum for tiny targets."""
    ihdr = _png_chunk(b"IHDR", struct.pack(">IIBBBBB", width, height, 8, 2, 0, 0, 0))
    raw = b"".join(b"\x00" + rng.randbytes(width * 3) for _ in range(height))
    idat = _png_chunk(b"IDAT", zlib.compress(raw, 1))
    iend = _png_chunk(b"IEND", b"")
    base_size = len(_PNG_SIGNATURE) + len(ihdr) + len(idat) + len(iend)
    pad_payload = byte_size - base_size - 12  # 12 = chunk length/type/crc overhead
    if pad_payload < 0:
        return _PNG_SIGNATURE + ihdr + idat + iend
    pad = _png_chunk(_PAD_CHUNK_TYPE, rng.randbytes(pad_payload))
    return _PNG_SIGNATURE + ihdr + idat + pad + iend


# --- manifest ----------------------------------------------------------------


@dataclass
class Manifest:
    """Ground truth for the corpus: full record set plus per-blob content hashes."""

    spec: dict
    records: list[ImageRecord]
    hashes: dict[str, str]  # record_id -> sha256 hex
    plant_draws: list[int] = field(default_factory=list)  # plants per lab original

    @property
    def file_count(self) -> int:
        return len(self.records)

    @property
    def total_bytes(self) -> int:
        return sum(r.byte_size for r in self.records)

    def hash_multiset(self) -> set[tuple[str, str]]:
        return {(r.record_id, self.hashes[r.record_id]) for r in self.records}

    def save(self, path: str | Path) -> None:
        path = Path(path)
        with open(path, "w", encoding="utf-8") as fh:
            header = {
                "generator": self.spec,
                "file_count": self.file_count,
                "total_bytes": self.total_bytes,
                "plant_draws": self.plant_draws,
            }
            fh.write(json.dumps(header, sort_keys=True) + "\n")
            for r in self.records:
                line = {"content_hash": self.hashes[r.record_id], **record_to_json(r)}
                fh.write(json.dumps(line, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "Manifest":
        records, hashes = [], {}
        with open(path, encoding="utf-8") as fh:
            header = json.loads(fh.readline())
            for line in fh:
                doc = json.loads(line)
                content_hash = doc.pop("content_hash")
                record = record_from_json(doc)
                records.append(record)
                hashes[record.record_id] = content_hash
        return cls(
            spec=header.get("generator", {}),
            records=records,
            hashes=hashes,
            plant_draws=header.get("plant_draws", []),
        )


# --- generation ---------------------------------------------------------------


@dataclass
class _Tray:
    """One planting event: plants imaged together, possibly on several days."""

    label: str
    scientific_name: str
    planting: date
    plant_ids: list[str]
    position_ids: list[str]
    camera: tuple[str, int, int]
    room: str
    last_capture: date


class _Builder:
    def __init__(self, spec: CorpusSpec, store: LocalDirectoryStore, rng: random.Random):
        self.spec = spec
        self.store = store
        self.rng = rng
        self.records: list[ImageRecord] = []
        self.hashes: dict[str, str] = {}
        self.plant_draws: list[int] = []
        self._next_plant = 0

    def add_blob(self, record: ImageRecord, payload: bytes) -> None:
        assert len(payload) == record.byte_size
        self.store.put(record.blob_key, payload)
        self.records.append(record)
        self.hashes[record.record_id] = hashlib.sha256(payload).hexdigest()

    def add_image(self, record: ImageRecord) -> None:
        payload = make_png(self.rng, record.byte_size)
        self.add_blob(record, payload)

    def add_sidecar(self, image: ImageRecord, record_id: str, blob_key: str) -> None:
        payload = record_json_bytes(image)
        sidecar = ImageRecord(
            record_id=record_id,
            filetype=FileType.METADATA_JSON,
            blob_key=blob_key,
            byte_size=len(payload),
            camera_lens=image.camera_lens,
            camera_pose=image.camera_pose,
            capture_datetime=image.capture_datetime,
            institute_room=image.institute_room,
            width_px=image.width_px,
            height_px=image.height_px,
            label=image.label,
            scientific_name=image.scientific_name,
            planting_date=image.planting_date,
            age_days=image.age_days,
            position_id=image.position_id,
            dataset_class=image.dataset_class,
            plant_id=image.plant_id,
            x_min=image.x_min,
            x_max=image.x_max,
            y_min=image.y_min,
            y_max=image.y_max,
        )
        self.add_blob(sidecar, payload)

    def new_plant_id(self) -> str:
        self._next_plant += 1
        return f"plant-{self._next_plant:06d}"

    def draw_size(self) -> int:
        return self.rng.randint(*self.spec.image_bytes)


def _new_tray(b: _Builder, capture: date) -> _Tray:
    rng, spec = b.rng, b.spec
    label, scientific = rng.choice(spec.species_pool)
    n_plants = rng.randint(*spec.plants_per_original)
    camera = rng.choice(_CAMERAS)
    return _Tray(
        label=label,
        scientific_name=scientific,
        planting=capture - timedelta(days=rng.randint(3, 14)),
        plant_ids=[b.new_plant_id() for _ in range(n_plants)],
        position_ids=[f"pos-{rng.randint(1, 9)}{rng.randint(1, 9)}" for _ in range(n_plants)],
        camera=camera,
        room=rng.choice(_ROOMS),
        last_capture=capture,
    )


def _draw_capture_date(rng: random.Random, spec: CorpusSpec) -> date:
    start, end = spec.date_range
    return start + timedelta(days=rng.randint(0, (end - start).days))


def _capture_moment(rng: random.Random, day: date) -> datetime:
    moment = time(rng.randint(7, 18), rng.randint(0, 59), rng.randint(0, 59))
    return datetime.combine(day, moment, tzinfo=timezone.utc)


def _crop_box(rng: random.Random, width: int, height: int) -> tuple[int, int, int, int]:
    x_min = rng.randint(0, width - 256)
    y_min = rng.randint(0, height - 256)
    x_max = x_min + rng.randint(128, 256)
    y_max = y_min + rng.randint(128, 256)
    return x_min, x_max, y_min, y_max


def generate(spec: CorpusSpec, store: LocalDirectoryStore, catalog: Catalog) -> Manifest:
    """Populate an empty store+catalog; returns the manifest (same spec, same bytes)."""
    if len(catalog) or next(store.iter_keys(), None) is not None:
        raise NonEmptyTarget("corpus generation needs an empty store and catalog")
    rng = random.Random(spec.rng_seed)
    b = _Builder(spec, store, rng)
    trays: list[_Tray] = []

    for i in range(spec.n_originals):
        reuse = trays and rng.random() < 0.5
        if reuse:
            tray = rng.choice(trays)
            capture = tray.last_capture + timedelta(days=rng.randint(1, 4))
            age = (capture - tray.planting).days
            if capture > spec.date_range[1] or age > 45:
                reuse = False
        if not reuse:
            tray = _new_tray(b, _draw_capture_date(rng, spec))
            trays.append(tray)
            capture = tray.last_capture
        tray.last_capture = capture

        captured_at = _capture_moment(rng, capture)
        pose = (
            round(rng.uniform(0, 1200), 1),
            round(rng.uniform(0, 800), 1),
            round(rng.uniform(300, 900), 1),
            round(rng.uniform(-180, 180), 1),
            round(rng.uniform(-45, 10), 1),
        )
        camera_lens, width, height = tray.camera
        age = (capture - tray.planting).days
        stem = f"orig-{i:05d}"
        key_prefix = f"eagli/{capture:%Y/%m/%d}"
        common = dict(
            camera_lens=camera_lens,
            camera_pose=pose,
            capture_datetime=captured_at,
            institute_room=tray.room,
            width_px=width,
            height_px=height,
            label=tray.label,
            scientific_name=tray.scientific_name,
            planting_date=tray.planting,
            age_days=age,
            dataset_class=DatasetClass.EAGLI,
        )

        original = ImageRecord(
            record_id=stem,
            filetype=FileType.MULTIPLE_PLANT,
            blob_key=f"{key_prefix}/{stem}.png",
            byte_size=b.draw_size(),
            position_id="",
            **common,
        )
        b.add_image(original)
        b.add_image(
            ImageRecord(
                record_id=f"{stem}-ann",
                filetype=FileType.ANNOTATED,
                blob_key=f"{key_prefix}/{stem}-ann.png",
                byte_size=b.draw_size(),
                position_id="",
                **common,
            )
        )
        b.add_sidecar(original, f"{stem}-meta", f"{key_prefix}/{stem}.json")

        b.plant_draws.append(len(tray.plant_ids))
        for j, plant_id in enumerate(tray.plant_ids):
            x_min, x_max, y_min, y_max = _crop_box(rng, width, height)
            crop_stem = f"{stem}-p{j}"
            crop = ImageRecord(
                record_id=crop_stem,
                filetype=FileType.SINGLE_PLANT,
                blob_key=f"{key_prefix}/{crop_stem}.png",
                byte_size=b.draw_size(),
                position_id=tray.position_ids[j],
                plant_id=plant_id,
                x_min=x_min,
                x_max=x_max,
                y_min=y_min,
                y_max=y_max,
                **common,
            )
            b.add_image(crop)
            b.add_sidecar(crop, f"{crop_stem}-meta", f"{key_prefix}/{crop_stem}.json")

    for i in range(spec.n_field_originals):
        capture = _draw_capture_date(rng, spec)
        label, scientific = rng.choice(spec.species_pool)
        age = rng.randint(20, 90)
        stem = f"field-{i:05d}"
        key_prefix = f"field/{capture:%Y/%m/%d}"
        record = ImageRecord(
            record_id=stem,
            filetype=FileType.MULTIPLE_PLANT,
            blob_key=f"{key_prefix}/{stem}.png",
            byte_size=b.draw_size(),
            camera_lens="DJI P4 Multispectral",
            camera_pose=(
                round(rng.uniform(0, 500_000), 1),
                round(rng.uniform(0, 500_000), 1),
                round(rng.uniform(10_000, 30_000), 1),
                round(rng.uniform(-180, 180), 1),
                -90.0,
            ),
            capture_datetime=_capture_moment(rng, capture),
            institute_room="field",
            width_px=5472,
            height_px=3648,
            label=label,
            scientific_name=scientific,
            planting_date=capture - timedelta(days=age),
            age_days=age,
            position_id=f"plot-{rng.randint(1, 40):02d}",
            dataset_class=DatasetClass.FIELD,
        )
        b.add_image(record)
        b.add_sidecar(record, f"{stem}-meta", f"{key_prefix}/{stem}.json")

    catalog.ingest(b.records)
    return Manifest(spec=spec.to_json(), records=b.records, hashes=b.hashes, plant_draws=b.plant_draws)


def flat_corpus(
    store: LocalDirectoryStore,
    catalog: Catalog,
    *,
    n_files: int,
    file_bytes: int,
    rng_seed: int = 7,
    label: str = "Soybean",
) -> Manifest:
    """A uniform single-filetype corpus for transfer-overhead experiments:
    ``n_files`` blobs of exactly ``file_bytes`` each."""
    if len(catalog) or next(store.iter_keys(), None) is not None:
        raise NonEmptyTarget("corpus generation needs an empty store and catalog")
    rng = random.Random(rng_seed)
    spec = CorpusSpec(rng_seed=rng_seed, n_originals=0)
    b = _Builder(spec, store, rng)
    captured_at = datetime(2021, 6, 1, 12, 0, 0, tzinfo=timezone.utc)
    for i in range(n_files):
        record = ImageRecord(
            record_id=f"flat-{i:06d}",
            filetype=FileType.SINGLE_PLANT,
            blob_key=f"flat/flat-{i:06d}.png",
            byte_size=file_bytes,
            camera_lens=_CAMERAS[0][0],
            camera_pose=(0.0, 0.0, 500.0, 0.0, -30.0),
            capture_datetime=captured_at + timedelta(seconds=i),
            institute_room=_ROOMS[0],
            width_px=2448,
            height_px=2048,
            label=label,
            scientific_name="Glycine max",
            planting_date=date(2021, 5, 20),
            age_days=12,
            position_id="pos-11",
            plant_id=f"plant-flat-{i:06d}",
            x_min=0,
            x_max=256,
            y_min=0,
            y_max=256,
        )
        b.add_image(record)
    catalog.ingest(b.records)
    return Manifest(spec=spec.to_json(), records=b.records, hashes=b.hashes)


# --- precompiled archives -----------------------------------------------------


def build_precompiled_archive(
    catalog: Catalog, store: LocalDirectoryStore, query: Query, out_path: str | Path
) -> tuple[int, int]:
    """Materialize a query's full result as one archive; returns (files, bytes)."""
    records = catalog.list_matches(query)
    files = [part_file(r) for r in records]
    entries = ((f.name, store.get(f.blob_key)) for f in files)
    archive_bytes = write_archive_file(out_path, entries)
    return len(files), archive_bytes


def write_precompiled_index(path: str | Path, entries: Iterable[dict]) -> None:
    Path(path).write_text(json.dumps(list(entries), indent=2) + "\n")
