"""Image metadata catalog: record schema, filter queries, and an indexed query engine.

Records describe files held in the object store (camera frames, per-plant
crops, annotated copies, and JSON metadata sidecars). Queries AND-combine
their active filters; the species list is an OR within itself. The engine
answers queries from per-field indexes so a brute-force scan stays available
as an independent oracle in the test suite.
"""

from __future__ import annotations

import bisect
import json
import random
import threading
from dataclasses import dataclass
from datetime import date, datetime, timedelta, timezone
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, Sequence


class CatalogError(Exception):
    """Base class for catalog failures."""


class DuplicateRecordId(CatalogError):
    def __init__(self, record_id: str):
        super().__init__(f"duplicate record_id: {record_id!r}")
        self.record_id = record_id


class InvariantViolation(CatalogError):
    """A record breaks the schema invariants."""


class MalformedQuery(CatalogError):
    """A query (or its wire form) fails validation."""


class FileType(Enum):
    """The four deliverable file classes, in wire-name form."""

    SINGLE_PLANT = "single_plant"
    MULTIPLE_PLANT = "multiple_plant"
    ANNOTATED = "annotated"
    METADATA_JSON = "metadata_json"

    @property
    def extension(self) -> str:
        return ".json" if self is FileType.METADATA_JSON else ".png"


class DatasetClass(Enum):
    EAGLI = "eagli"
    FIELD = "field"


ALL_FILETYPES = frozenset(FileType)

_CROP_FIELDS = ("plant_id", "x_min", "x_max", "y_min", "y_max")


@dataclass(frozen=True)
class ImageRecord:
    """One metadata document per stored file.

    ``width_px``/``height_px`` are the camera-frame dimensions; crop
    coordinates on per-plant records are expressed within that frame, so the
    bounds invariant is checkable per record. The crop-specific fields
    (``plant_id`` and the four coordinates) are set together or not at all.
    """

    record_id: str
    filetype: FileType
    blob_key: str
    byte_size: int
    camera_lens: str
    camera_pose: tuple[float, float, float, float, float]  # x, y, z, pan, tilt
    capture_datetime: datetime  # timezone-aware, UTC
    institute_room: str
    width_px: int
    height_px: int
    label: str
    scientific_name: str
    planting_date: date
    age_days: int
    position_id: str
    dataset_class: DatasetClass = DatasetClass.EAGLI
    tags: tuple[str, ...] = ()
    plant_id: str | None = None
    x_min: int | None = None
    x_max: int | None = None
    y_min: int | None = None
    y_max: int | None = None

    @property
    def capture_date(self) -> date:
        return self.capture_datetime.date()

    @property
    def has_crop_fields(self) -> bool:
        return self.plant_id is not None


def validate_record(r: ImageRecord) -> None:
    """Raise InvariantViolation unless ``r`` satisfies every schema invariant."""
    if not r.record_id:
        raise InvariantViolation("record_id must be non-empty")
    if not r.blob_key:
        raise InvariantViolation(f"{r.record_id}: blob_key must be non-empty")
    if r.byte_size < 0:
        raise InvariantViolation(f"{r.record_id}: byte_size must be >= 0")
    if r.width_px <= 0 or r.height_px <= 0:
        raise InvariantViolation(f"{r.record_id}: frame dimensions must be positive")
    if len(r.camera_pose) != 5:
        raise InvariantViolation(f"{r.record_id}: camera_pose must have 5 components")
    if r.capture_datetime.tzinfo is None:
        raise InvariantViolation(f"{r.record_id}: capture_datetime must be timezone-aware")
    if r.age_days < 0:
        raise InvariantViolation(f"{r.record_id}: age_days must be >= 0")
    elapsed = (r.capture_datetime.astimezone(timezone.utc).date() - r.planting_date).days
    if elapsed != r.age_days:
        raise InvariantViolation(
            f"{r.record_id}: age_days={r.age_days} but planting->capture spans {elapsed} days"
        )

    crop_values = [getattr(r, name) for name in _CROP_FIELDS]
    present = [v is not None for v in crop_values]
    if any(present) and not all(present):
        raise InvariantViolation(f"{r.record_id}: crop fields must be set together")
    if r.filetype is FileType.SINGLE_PLANT and not all(present):
        raise InvariantViolation(f"{r.record_id}: single-plant records require crop fields")
    if r.filetype in (FileType.MULTIPLE_PLANT, FileType.ANNOTATED) and any(present):
        raise InvariantViolation(f"{r.record_id}: {r.filetype.value} records carry no crop fields")
    if all(present):
        if not (0 <= r.x_min < r.x_max <= r.width_px):
            raise InvariantViolation(f"{r.record_id}: x crop bounds outside frame")
        if not (0 <= r.y_min < r.y_max <= r.height_px):
            raise InvariantViolation(f"{r.record_id}: y crop bounds outside frame")


def record_to_json(r: ImageRecord) -> dict:
    """Plain-JSON form of a record; optional crop fields are omitted when unset."""
    doc = {
        "record_id": r.record_id,
        "filetype": r.filetype.value,
        "blob_key": r.blob_key,
        "byte_size": r.byte_size,
        "camera_lens": r.camera_lens,
        "camera_pose": list(r.camera_pose),
        "capture_datetime": r.capture_datetime.astimezone(timezone.utc).isoformat(),
        "institute_room": r.institute_room,
        "width_px": r.width_px,
        "height_px": r.height_px,
        "label": r.label,
        "scientific_name": r.scientific_name,
        "planting_date": r.planting_date.isoformat(),
        "age_days": r.age_days,
        "position_id": r.position_id,
        "dataset_class": r.dataset_class.value,
        "tags": list(r.tags),
    }
    if r.plant_id is not None:
        doc["plant_id"] = r.plant_id
        doc["x_min"] = r.x_min
        doc["x_max"] = r.x_max
        doc["y_min"] = r.y_min
        doc["y_max"] = r.y_max
    return doc


def record_json_bytes(r: ImageRecord) -> bytes:
    """Canonical serialized form, used verbatim for metadata sidecar content."""
    return json.dumps(record_to_json(r), sort_keys=True, separators=(",", ":")).encode()


def record_from_json(doc: dict) -> ImageRecord:
    try:
        pose = doc["camera_pose"]
        crop_fields = {}
        if doc.get("plant_id") is not None:
            crop_fields = {
                "plant_id": doc["plant_id"],
                "x_min": int(doc["x_min"]),
                "x_max": int(doc["x_max"]),
                "y_min": int(doc["y_min"]),
                "y_max": int(doc["y_max"]),
            }
        return ImageRecord(
            record_id=doc["record_id"],
            filetype=FileType(doc["filetype"]),
            blob_key=doc["blob_key"],
            byte_size=int(doc["byte_size"]),
            camera_lens=doc["camera_lens"],
            camera_pose=(float(pose[0]), float(pose[1]), float(pose[2]), float(pose[3]), float(pose[4])),
            capture_datetime=datetime.fromisoformat(doc["capture_datetime"]),
            institute_room=doc["institute_room"],
            width_px=int(doc["width_px"]),
            height_px=int(doc["height_px"]),
            label=doc["label"],
            scientific_name=doc["scientific_name"],
            planting_date=date.fromisoformat(doc["planting_date"]),
            age_days=int(doc["age_days"]),
            position_id=doc["position_id"],
            dataset_class=DatasetClass(doc.get("dataset_class", "eagli")),
            tags=tuple(doc.get("tags", ())),
            **crop_fields,
        )
    except (KeyError, ValueError, TypeError, IndexError) as exc:
        raise InvariantViolation(f"unparseable record document: {exc}") from exc


@dataclass(frozen=True)
class Query:
    """A user-defined filter set. All unset filters are vacuously true.

    ``precompiled_id`` names a pre-built dataset and is mutually exclusive
    with every filter field.
    """

    filetypes: frozenset[FileType] = ALL_FILETYPES
    species: tuple[str, ...] = ()
    age_min: int | None = None
    age_max: int | None = None
    date_min: date | None = None
    date_max: date | None = None
    plant_id: str | None = None
    precompiled_id: str | None = None
    dataset_class: DatasetClass = DatasetClass.EAGLI

    def has_filters(self) -> bool:
        return bool(
            self.species
            or self.age_min is not None
            or self.age_max is not None
            or self.date_min is not None
            or self.date_max is not None
            or self.plant_id is not None
            or self.filetypes != ALL_FILETYPES
        )

    def validate(self) -> None:
        if not self.filetypes:
            raise MalformedQuery("filetypes must be a non-empty set")
        if self.age_min is not None and self.age_min < 0:
            raise MalformedQuery("age_min must be >= 0")
        if self.age_max is not None and self.age_max < 0:
            raise MalformedQuery("age_max must be >= 0")
        if self.age_min is not None and self.age_max is not None and self.age_min > self.age_max:
            raise MalformedQuery("age_min exceeds age_max")
        if self.date_min is not None and self.date_max is not None and self.date_min > self.date_max:
            raise MalformedQuery("date_min exceeds date_max")
        if self.precompiled_id is not None and self.has_filters():
            raise MalformedQuery("precompiled_id cannot be combined with filters")


@dataclass(frozen=True)
class QuerySummary:
    file_count: int
    part_count: int
    total_bytes: int


def matches(query: Query, record: ImageRecord) -> bool:
    """Per-record filter predicate: AND over active filters, OR within species."""
    if query.precompiled_id is not None:
        raise MalformedQuery("precompiled queries carry no filter semantics")
    if record.filetype not in query.filetypes:
        return False
    if record.dataset_class is not query.dataset_class:
        return False
    if query.species and record.label not in query.species:
        return False
    if query.age_min is not None and record.age_days < query.age_min:
        return False
    if query.age_max is not None and record.age_days > query.age_max:
        return False
    if query.date_min is not None and record.capture_date < query.date_min:
        return False
    if query.date_max is not None and record.capture_date > query.date_max:
        return False
    if query.plant_id is not None and record.plant_id != query.plant_id:
        return False
    return True


# --- wire form -------------------------------------------------------------
#
# This is the one place client-supplied query documents are admitted into the
# system; the gateway routes every request body through it before the catalog
# sees anything. Unknown fields, wrong types, and out-of-range values are all
# rejected here.

_QUERY_FIELDS = {
    "species",
    "age_min",
    "age_max",
    "date_min",
    "date_max",
    "plant_id",
    "filetypes",
    "precompiled_id",
    "dataset_class",
}
_MAX_AGE_DAYS = 36_500
_MAX_STRING = 200
_MAX_SPECIES = 100
_ID_CHARS = set("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789._-")


def _strict_int(value, field_name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise MalformedQuery(f"{field_name} must be an integer")
    return value


def _strict_str(value, field_name: str) -> str:
    if not isinstance(value, str) or not value or len(value) > _MAX_STRING:
        raise MalformedQuery(f"{field_name} must be a non-empty string of at most {_MAX_STRING} chars")
    return value


def _strict_date(value, field_name: str) -> date:
    if not isinstance(value, str):
        raise MalformedQuery(f"{field_name} must be an ISO date string")
    try:
        return date.fromisoformat(value)
    except ValueError as exc:
        raise MalformedQuery(f"{field_name} is not a valid YYYY-MM-DD date") from exc


def query_from_wire(doc: object) -> Query:
    """Sanitize a wire-format query document into a validated Query."""
    if not isinstance(doc, dict):
        raise MalformedQuery("query body must be a JSON object")
    unknown = set(doc) - _QUERY_FIELDS
    if unknown:
        raise MalformedQuery(f"unknown query field(s): {', '.join(sorted(unknown))}")

    kwargs: dict = {}

    species = doc.get("species")
    if species is not None:
        if not isinstance(species, list) or len(species) > _MAX_SPECIES:
            raise MalformedQuery(f"species must be a list of at most {_MAX_SPECIES} names")
        kwargs["species"] = tuple(_strict_str(s, "species entry") for s in species)

    for bound in ("age_min", "age_max"):
        if doc.get(bound) is not None:
            value = _strict_int(doc[bound], bound)
            if not 0 <= value <= _MAX_AGE_DAYS:
                raise MalformedQuery(f"{bound} out of range 0..{_MAX_AGE_DAYS}")
            kwargs[bound] = value
    for bound in ("date_min", "date_max"):
        if doc.get(bound) is not None:
            kwargs[bound] = _strict_date(doc[bound], bound)

    if doc.get("plant_id") is not None:
        kwargs["plant_id"] = _strict_str(doc["plant_id"], "plant_id")

    filetypes = doc.get("filetypes")
    if filetypes is not None:
        if not isinstance(filetypes, list) or not filetypes:
            raise MalformedQuery("filetypes must be a non-empty list")
        try:
            kwargs["filetypes"] = frozenset(FileType(_strict_str(ft, "filetype")) for ft in filetypes)
        except ValueError as exc:
            raise MalformedQuery(f"unknown filetype: {exc}") from exc

    if doc.get("precompiled_id") is not None:
        ident = _strict_str(doc["precompiled_id"], "precompiled_id")
        if not set(ident) <= _ID_CHARS:
            raise MalformedQuery("precompiled_id contains invalid characters")
        kwargs["precompiled_id"] = ident

    dataset_class = doc.get("dataset_class")
    if dataset_class is not None:
        if not isinstance(dataset_class, str):
            raise MalformedQuery("dataset_class must be a string")
        try:
            kwargs["dataset_class"] = DatasetClass(dataset_class)
        except ValueError as exc:
            raise MalformedQuery(f"unknown dataset_class: {dataset_class!r}") from exc

    query = Query(**kwargs)
    query.validate()
    return query


def query_to_wire(query: Query) -> dict:
    """Wire-format document for a Query; unset fields are omitted."""
    doc: dict = {
        "filetypes": [ft.value for ft in FileType if ft in query.filetypes],
        "dataset_class": query.dataset_class.value,
    }
    if query.species:
        doc["species"] = list(query.species)
    if query.age_min is not None:
        doc["age_min"] = query.age_min
    if query.age_max is not None:
        doc["age_max"] = query.age_max
    if query.date_min is not None:
        doc["date_min"] = query.date_min.isoformat()
    if query.date_max is not None:
        doc["date_max"] = query.date_max.isoformat()
    if query.plant_id is not None:
        doc["plant_id"] = query.plant_id
    if query.precompiled_id is not None:
        doc["precompiled_id"] = query.precompiled_id
    return doc


# --- indexed engine ---------------------------------------------------------


class _Snapshot:
    """Immutable index set over one catalog generation; safe to share across threads."""

    __slots__ = (
        "records",
        "order",
        "by_filetype",
        "by_class",
        "by_label",
        "by_plant",
        "age_keys",
        "date_keys",
    )

    def __init__(self, records: dict[str, ImageRecord]):
        self.records = records
        ordered = sorted(records.values(), key=lambda r: (r.capture_datetime, r.record_id))
        self.order = {r.record_id: i for i, r in enumerate(ordered)}
        self.by_filetype: dict[FileType, set[str]] = {ft: set() for ft in FileType}
        self.by_class: dict[DatasetClass, set[str]] = {dc: set() for dc in DatasetClass}
        self.by_label: dict[str, set[str]] = {}
        self.by_plant: dict[str, set[str]] = {}
        for r in records.values():
            self.by_filetype[r.filetype].add(r.record_id)
            self.by_class[r.dataset_class].add(r.record_id)
            self.by_label.setdefault(r.label, set()).add(r.record_id)
            if r.plant_id is not None:
                self.by_plant.setdefault(r.plant_id, set()).add(r.record_id)
        self.age_keys = sorted((r.age_days, r.record_id) for r in records.values())
        self.date_keys = sorted((r.capture_date, r.record_id) for r in records.values())

    def _range_ids(self, keys: list, lo, hi) -> set[str]:
        start = 0 if lo is None else bisect.bisect_left(keys, (lo,))
        stop = len(keys) if hi is None else bisect.bisect_left(keys, (hi,))
        return {rid for _, rid in keys[start:stop]}

    def evaluate(self, query: Query) -> list[ImageRecord]:
        candidate_sets: list[set[str]] = []
        candidate_sets.append(
            set().union(*(self.by_filetype[ft] for ft in query.filetypes))
        )
        candidate_sets.append(self.by_class[query.dataset_class])
        if query.species:
            candidate_sets.append(
                set().union(*(self.by_label.get(s, set()) for s in query.species))
            )
        if query.plant_id is not None:
            candidate_sets.append(self.by_plant.get(query.plant_id, set()))
        if query.age_min is not None or query.age_max is not None:
            hi = None if query.age_max is None else query.age_max + 1
            candidate_sets.append(self._range_ids(self.age_keys, query.age_min, hi))
        if query.date_min is not None or query.date_max is not None:
            hi = None if query.date_max is None else query.date_max + timedelta(days=1)
            candidate_sets.append(self._range_ids(self.date_keys, query.date_min, hi))

        candidate_sets.sort(key=len)
        result = candidate_sets[0]
        for s in candidate_sets[1:]:
            result = result & s
            if not result:
                break
        ordered = sorted(result, key=self.order.__getitem__)
        return [self.records[rid] for rid in ordered]


class Catalog:
    """In-memory record store with indexed queries and JSON-lines snapshots.

    Reads operate on an immutable snapshot grabbed atomically, so query
    evaluation is safe from any number of request-handler threads; ingest
    swaps in a new snapshot under an exclusive lock.
    """

    def __init__(self):
        self._write_lock = threading.Lock()
        self._snap = _Snapshot({})

    def __len__(self) -> int:
        return len(self._snap.records)

    def records(self) -> Sequence[ImageRecord]:
        return list(self._snap.records.values())

    def get(self, record_id: str) -> ImageRecord | None:
        return self._snap.records.get(record_id)

    def ingest(self, records: Iterable[ImageRecord]) -> int:
        """Atomically add a batch; the whole batch is rejected on any bad record."""
        batch = list(records)
        with self._write_lock:
            existing = self._snap.records
            seen: set[str] = set()
            for r in batch:
                validate_record(r)
                if r.record_id in existing or r.record_id in seen:
                    raise DuplicateRecordId(r.record_id)
                seen.add(r.record_id)
            merged = dict(existing)
            merged.update((r.record_id, r) for r in batch)
            self._snap = _Snapshot(merged)
        return len(batch)

    def _validated(self, query: Query) -> Query:
        query.validate()
        if query.precompiled_id is not None:
            raise MalformedQuery("precompiled queries are not evaluated against the catalog")
        return query

    def list_matches(self, query: Query) -> list[ImageRecord]:
        """All matching records ordered by (capture_datetime, record_id)."""
        return self._snap.evaluate(self._validated(query))

    def count_matches(self, query: Query) -> int:
        return len(self.list_matches(query))

    def sample_matches(self, query: Query, k: int, rng_seed: int) -> list[ImageRecord]:
        """Uniform sample without replacement of up to ``k`` matches per filetype."""
        if k < 1:
            raise MalformedQuery("sample size must be >= 1")
        matched = self.list_matches(query)
        rng = random.Random(rng_seed)
        sampled: list[ImageRecord] = []
        for ft in FileType:  # enum order keeps the draw sequence deterministic
            if ft not in query.filetypes:
                continue
            pool = [r for r in matched if r.filetype is ft]
            sampled.extend(rng.sample(pool, min(k, len(pool))))
        return sampled

    # --- snapshot persistence ------------------------------------------

    def save_snapshot(self, path: str | Path) -> None:
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        with open(tmp, "w", encoding="utf-8") as fh:
            for r in self._snap.records.values():
                fh.write(json.dumps(record_to_json(r), sort_keys=True))
                fh.write("\n")
        tmp.replace(path)

    @classmethod
    def load_snapshot(cls, path: str | Path) -> "Catalog":
        catalog = cls()
        catalog.ingest(iter_snapshot(path))
        return catalog


def iter_snapshot(path: str | Path) -> Iterator[ImageRecord]:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield record_from_json(json.loads(line))
