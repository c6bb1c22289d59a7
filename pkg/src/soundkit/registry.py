"""Declarative dataset manifests and the dataset handle.

A dataset is pure data: a manifest (remotes, index reference, license,
citation, field bindings) plus a canonical index. Adding a dataset to the
registry means adding two JSON files, never code. Built-in manifests ship
under this package's ``datasets/`` directory; user manifests live under
``$SOUNDKIT_DATA_HOME/manifests/`` and shadow built-ins of the same id.
"""

from __future__ import annotations

import os
import re
import threading
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Any, Mapping, Union

from .canonical import canonical_bytes, load_document
from .core import AudioBuffer, Clip, EventList, TagList
from .errors import (
    AbsentField,
    IoError,
    MediaError,
    ParseError,
    SchemaError,
    UnknownClip,
    UnknownDataset,
    UnknownField,
)
from .fetch import RemoteFile
from .index import DatasetIndex, _byte_key, parse_index, validate_relative_path
from .io_parsers import (
    DELIMITERS,
    EventFormatSpec,
    MetadataTable,
    load_audio,
    parse_events,
    parse_metadata_table,
    parse_tags,
)

ENV_DATA_HOME = "SOUNDKIT_DATA_HOME"
_ID_RE = re.compile(r"[a-z0-9_-]+\Z")
_BUILTIN_DIR = Path(__file__).parent / "datasets"

BINDING_KINDS = ("audio_wav", "tags", "events", "metadata_table", "raw")

AnnotationValue = Union[TagList, EventList, MetadataTable, AudioBuffer, bytes]


@dataclass(frozen=True)
class FieldBinding:
    """How a field's file parses: one of the standard kinds plus its options."""

    kind: str
    delimiter: str | None = None
    has_confidence: bool | None = None
    header_rows: int | None = None

    def __post_init__(self) -> None:
        if self.kind not in BINDING_KINDS:
            raise SchemaError(f"unknown binding kind {self.kind!r}")


@dataclass(frozen=True)
class DatasetManifest:
    """The declarative definition of one dataset."""

    id: str
    name: str
    version: str
    license: str
    citation: str
    index_ref: str
    remotes: Mapping[str, RemoteFile]
    field_bindings: Mapping[str, FieldBinding]

    def __post_init__(self) -> None:
        if not isinstance(self.id, str) or not _ID_RE.match(self.id):
            raise SchemaError(
                f"dataset id {self.id!r} must be non-empty lowercase [a-z0-9_-]"
            )
        validate_relative_path(self.index_ref)
        object.__setattr__(self, "remotes", MappingProxyType(dict(self.remotes)))
        object.__setattr__(self, "field_bindings", MappingProxyType(dict(self.field_bindings)))


_BINDING_OPTION_KEYS = {
    "audio_wav": set(),
    "tags": {"delimiter"},
    "events": {"delimiter", "has_confidence", "header_rows"},
    "metadata_table": set(),
    "raw": set(),
}


def _parse_binding(field_name: str, raw: Any) -> FieldBinding:
    where = f"field_bindings.{field_name}"
    if not isinstance(raw, dict):
        raise SchemaError(f"{where}: binding must be an object")
    kind = raw.get("kind")
    if kind not in BINDING_KINDS:
        raise SchemaError(f"{where}.kind: unknown kind {kind!r}")
    expected = _BINDING_OPTION_KEYS[kind] | {"kind"}
    if set(raw) != expected:
        raise SchemaError(
            f"{where}: keys {sorted(raw)} do not match {sorted(expected)} for kind {kind!r}"
        )
    binding = FieldBinding(
        kind=kind,
        delimiter=raw.get("delimiter"),
        has_confidence=raw.get("has_confidence"),
        header_rows=raw.get("header_rows"),
    )
    if binding.delimiter is not None and binding.delimiter not in DELIMITERS:
        raise SchemaError(f"{where}.delimiter: unknown delimiter {binding.delimiter!r}")
    if kind == "events":
        if not isinstance(binding.has_confidence, bool):
            raise SchemaError(f"{where}.has_confidence: must be a boolean")
        if not isinstance(binding.header_rows, int) or isinstance(binding.header_rows, bool) \
                or binding.header_rows < 0:
            raise SchemaError(f"{where}.header_rows: must be a count >= 0")
    return binding


def _parse_remote(name: str, raw: Any) -> RemoteFile:
    where = f"remotes.{name}"
    if not isinstance(raw, dict):
        raise SchemaError(f"{where}: remote must be an object")
    expected = {"checksum", "checksum_algorithm", "destination", "name", "unpack", "url"}
    if set(raw) != expected:
        raise SchemaError(f"{where}: keys {sorted(raw)} do not match {sorted(expected)}")
    if raw["name"] != name:
        raise SchemaError(f"{where}.name: {raw['name']!r} does not match its key {name!r}")
    for key in expected:
        if not isinstance(raw[key], str):
            raise SchemaError(f"{where}.{key}: must be text")
    try:
        return RemoteFile(
            name=raw["name"],
            url=raw["url"],
            checksum=raw["checksum"],
            checksum_algorithm=raw["checksum_algorithm"],
            destination=raw["destination"],
            unpack=raw["unpack"],
        )
    except SchemaError as exc:
        raise SchemaError(f"{where}: {exc}") from exc


def load_manifest(data: bytes) -> DatasetManifest:
    """Parse and fully validate a manifest document; unknown keys are rejected."""
    doc = load_document(data)
    if not isinstance(doc, dict):
        raise SchemaError("manifest document must be an object")
    expected = {
        "citation", "field_bindings", "id", "index_ref",
        "license", "name", "remotes", "version",
    }
    if set(doc) != expected:
        extra = sorted(set(doc) - expected)
        missing = sorted(expected - set(doc))
        raise SchemaError(f"manifest keys mismatch: extra {extra}, missing {missing}")
    for key in ("citation", "id", "index_ref", "license", "name", "version"):
        if not isinstance(doc[key], str):
            raise SchemaError(f"{key}: must be text")
    if not isinstance(doc["remotes"], dict) or not isinstance(doc["field_bindings"], dict):
        raise SchemaError("'remotes' and 'field_bindings' must be objects")
    remotes = {name: _parse_remote(name, raw) for name, raw in doc["remotes"].items()}
    bindings = {
        field_name: _parse_binding(field_name, raw)
        for field_name, raw in doc["field_bindings"].items()
    }
    return DatasetManifest(
        id=doc["id"],
        name=doc["name"],
        version=doc["version"],
        license=doc["license"],
        citation=doc["citation"],
        index_ref=doc["index_ref"],
        remotes=remotes,
        field_bindings=bindings,
    )


def serialize_manifest(manifest: DatasetManifest) -> bytes:
    """Canonical manifest document; load_manifest inverts it."""
    doc = {
        "citation": manifest.citation,
        "field_bindings": {
            name: _binding_to_doc(binding)
            for name, binding in manifest.field_bindings.items()
        },
        "id": manifest.id,
        "index_ref": manifest.index_ref,
        "license": manifest.license,
        "name": manifest.name,
        "remotes": {
            name: {
                "checksum": r.checksum,
                "checksum_algorithm": r.checksum_algorithm,
                "destination": r.destination,
                "name": r.name,
                "unpack": r.unpack,
                "url": r.url,
            }
            for name, r in manifest.remotes.items()
        },
        "version": manifest.version,
    }
    return canonical_bytes(doc)


def _binding_to_doc(binding: FieldBinding) -> dict[str, Any]:
    doc: dict[str, Any] = {"kind": binding.kind}
    for key in _BINDING_OPTION_KEYS[binding.kind]:
        doc[key] = getattr(binding, key)
    return doc


# --- registry discovery ---------------------------------------------------


def _environ(env: Mapping[str, str] | None) -> Mapping[str, str]:
    return os.environ if env is None else env


def shared_root(env: Mapping[str, str] | None = None) -> Path:
    """Root under which per-dataset data homes and user manifests live."""
    env = _environ(env)
    configured = env.get(ENV_DATA_HOME)
    return Path(configured) if configured else Path.home() / "sound_datasets"


def user_manifest_dir(env: Mapping[str, str] | None = None) -> Path:
    return shared_root(env) / "manifests"


def manifest_search_dirs(env: Mapping[str, str] | None = None) -> list[Path]:
    return [user_manifest_dir(env), _BUILTIN_DIR]


def resolve_data_home(
    dataset_id: str,
    data_home: Path | str | None = None,
    env: Mapping[str, str] | None = None,
) -> Path:
    """Resolution order: explicit path, $SOUNDKIT_DATA_HOME/<id>, ~/sound_datasets/<id>."""
    if data_home is not None:
        return Path(data_home)
    return shared_root(env) / dataset_id


def list_datasets(env: Mapping[str, str] | None = None) -> list[str]:
    """Ids of every registered manifest, user dir shadowing built-ins, sorted."""
    ids: set[str] = set()
    for directory in manifest_search_dirs(env):
        if directory.is_dir():
            ids.update(p.stem for p in directory.glob("*.json"))
    return sorted(ids, key=_byte_key)


def find_manifest_path(dataset_id: str, env: Mapping[str, str] | None = None) -> Path:
    for directory in manifest_search_dirs(env):
        candidate = directory / f"{dataset_id}.json"
        if candidate.is_file():
            return candidate
    raise UnknownDataset(f"no manifest for dataset id {dataset_id!r} in the registry")


def load_manifest_file(path: Path | str) -> DatasetManifest:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read manifest {path}: {exc}") from exc
    manifest = load_manifest(data)
    if manifest.id != path.stem:
        raise SchemaError(
            f"manifest id {manifest.id!r} does not match its file name {path.name!r}"
        )
    return manifest


# --- the dataset handle ---------------------------------------------------


def _read_file(path: Path) -> bytes:
    """Single chokepoint for clip-file reads (kept patchable for read tracing)."""
    return path.read_bytes()


@dataclass
class Dataset:
    """Standardized access to one dataset's clips and annotations.

    Opening a dataset reads only the index; clip files are read lazily on
    annotation access and each (clip, field) parse is cached for the handle's
    lifetime. Handles are safe to share across threads.
    """

    manifest: DatasetManifest
    index: DatasetIndex
    data_home: Path
    _cache: dict = field(default_factory=dict, repr=False, compare=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def clip_ids(self) -> list[str]:
        """All clip ids, sorted bytewise ascending."""
        return sorted(self.index.clips, key=_byte_key)

    def clip(self, clip_id: str) -> Clip:
        """Resolve one clip's field paths; performs no file reads."""
        entry = self.index.clips.get(clip_id)
        if entry is None:
            raise UnknownClip(f"dataset {self.manifest.id!r} has no clip {clip_id!r}")
        fields = {
            name: (self.data_home / ref.path) if ref is not None else None
            for name, ref in entry.fields.items()
        }
        extras = {
            name: ref.path
            for name, ref in entry.fields.items()
            if ref is not None and name not in self.manifest.field_bindings
        }
        return Clip(clip_id, fields, extras)

    def _parse_with_binding(self, binding: FieldBinding | None, data: bytes) -> AnnotationValue:
        if binding is None or binding.kind == "raw":
            return data
        if binding.kind == "audio_wav":
            return load_audio(data)
        if binding.kind == "tags":
            return parse_tags(data, binding.delimiter or "comma")
        if binding.kind == "events":
            return parse_events(
                data,
                EventFormatSpec(
                    delimiter=binding.delimiter or "tab",
                    has_confidence=bool(binding.has_confidence),
                    header_rows=binding.header_rows or 0,
                ),
            )
        return parse_metadata_table(data)

    def annotation(self, clip_id: str, field_name: str) -> AnnotationValue:
        """Read and parse one clip field per its manifest binding, with caching.

        Fields without a binding come back as raw bytes. Null-pair fields
        raise AbsentField. Parse and media errors carry the clip id and field.
        """
        entry = self.index.clips.get(clip_id)
        if entry is None:
            raise UnknownClip(f"dataset {self.manifest.id!r} has no clip {clip_id!r}")
        if field_name not in entry.fields:
            raise UnknownField(f"clip {clip_id!r} has no field {field_name!r}")
        ref = entry.fields[field_name]
        if ref is None:
            raise AbsentField(f"clip {clip_id!r} field {field_name!r} is absent by design")

        key = ("clip", clip_id, field_name)
        with self._lock:
            if key in self._cache:
                return self._cache[key]
        path = self.data_home / ref.path
        try:
            data = _read_file(path)
        except OSError as exc:
            raise IoError(f"{clip_id}.{field_name}: cannot read {path}: {exc}") from exc
        binding = self.manifest.field_bindings.get(field_name)
        try:
            value = self._parse_with_binding(binding, data)
        except ParseError as exc:
            raise ParseError(f"{clip_id}.{field_name}: {exc}", None) from exc
        except MediaError as exc:
            raise MediaError(f"{clip_id}.{field_name}: {exc}") from exc
        with self._lock:
            return self._cache.setdefault(key, value)

    def metadata_table(self, name: str) -> AnnotationValue:
        """Read and parse one dataset-level metadata file, with caching."""
        ref = self.index.metadata.get(name)
        if ref is None:
            raise UnknownField(f"dataset {self.manifest.id!r} has no metadata {name!r}")
        key = ("metadata", name)
        with self._lock:
            if key in self._cache:
                return self._cache[key]
        path = self.data_home / ref.path
        try:
            data = _read_file(path)
        except OSError as exc:
            raise IoError(f"metadata {name!r}: cannot read {path}: {exc}") from exc
        binding = self.manifest.field_bindings.get(name, FieldBinding("metadata_table"))
        try:
            value = self._parse_with_binding(binding, data)
        except ParseError as exc:
            raise ParseError(f"metadata {name!r}: {exc}", None) from exc
        with self._lock:
            return self._cache.setdefault(key, value)

    def cite(self) -> str:
        return self.manifest.citation

    def license(self) -> str:
        return self.manifest.license


def open_dataset(
    manifest: DatasetManifest,
    data_home: Path | str,
    manifest_dir: Path | str | None = None,
) -> Dataset:
    """Open a dataset handle; reads the index file, never clip files.

    ``index_ref`` resolves relative to ``manifest_dir`` when given (the
    directory the manifest was loaded from), else relative to ``data_home``.
    """
    data_home = Path(data_home)
    base = Path(manifest_dir) if manifest_dir is not None else data_home
    index_path = base / manifest.index_ref
    try:
        index_bytes = index_path.read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read index file {index_path}: {exc}") from exc
    index = parse_index(index_bytes)
    return Dataset(manifest, index, data_home)


def load_dataset(
    dataset_id: str,
    data_home: Path | str | None = None,
    env: Mapping[str, str] | None = None,
) -> Dataset:
    """Open a registered dataset by id using the standard resolution rules."""
    manifest_path = find_manifest_path(dataset_id, env)
    manifest = load_manifest_file(manifest_path)
    home = resolve_data_home(dataset_id, data_home, env)
    return open_dataset(manifest, home, manifest_dir=manifest_path.parent)
