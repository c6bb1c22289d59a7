"""The canonical index: per-clip (path, checksum) records and tooling to mint them.

An index is the published definition of a dataset's files. Local copies are
validated against it, so its serialized form is canonical and byte-stable.
"""

from __future__ import annotations

import hashlib
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from types import MappingProxyType
from typing import Callable, Mapping, Union

from .canonical import canonical_bytes, load_document
from .core import validate_clip_id
from .errors import IoError, RuleError, SchemaError

SCHEMA_VERSION = "1.0"
CHECKSUM_HEX_LENGTH = {"md5": 32, "sha256": 64}
_HEX_DIGITS = set("0123456789abcdef")
_CHUNK_SIZE = 1 << 20


def validate_relative_path(path: str) -> str:
    """Check an index-style path: relative, "/"-separated, no "." or ".." segments."""
    if not isinstance(path, str) or not path:
        raise SchemaError("path must be non-empty text")
    segments = path.split("/")
    if any(seg == "" for seg in segments):
        raise SchemaError(f"path {path!r} is absolute or has an empty segment")
    if any(seg in (".", "..") for seg in segments):
        raise SchemaError(f"path {path!r} contains a '.' or '..' segment")
    return path


def validate_checksum(checksum: str, algorithm: str) -> str:
    """Check a lowercase hex digest of the length ``algorithm`` dictates."""
    if algorithm not in CHECKSUM_HEX_LENGTH:
        raise SchemaError(f"unknown checksum algorithm {algorithm!r}")
    if not isinstance(checksum, str) or set(checksum) - _HEX_DIGITS:
        raise SchemaError(f"checksum {checksum!r} is not lowercase hex")
    expected = CHECKSUM_HEX_LENGTH[algorithm]
    if len(checksum) != expected:
        raise SchemaError(
            f"checksum {checksum!r} has length {len(checksum)}, "
            f"expected {expected} for {algorithm}"
        )
    return checksum


@dataclass(frozen=True)
class FileRef:
    """A relative path plus the checksum its bytes must have."""

    path: str
    checksum: str

    def __post_init__(self) -> None:
        validate_relative_path(self.path)
        if not isinstance(self.checksum, str) or not self.checksum or set(self.checksum) - _HEX_DIGITS:
            raise SchemaError(f"checksum {self.checksum!r} is not lowercase hex")


@dataclass(frozen=True)
class IndexEntry:
    """One clip's fields. A None value is the null pair: the clip legitimately lacks that asset."""

    fields: Mapping[str, Union[FileRef, None]]

    def __post_init__(self) -> None:
        fields = dict(self.fields)
        if not fields:
            raise SchemaError("index entry must have at least one field")
        for name in fields:
            if not isinstance(name, str) or not name:
                raise SchemaError("field names must be non-empty")
        object.__setattr__(self, "fields", MappingProxyType(fields))


@dataclass(frozen=True)
class DatasetIndex:
    """The canonical version of a dataset."""

    checksum_algorithm: str
    clips: Mapping[str, IndexEntry]
    metadata: Mapping[str, FileRef]
    schema_version: str = SCHEMA_VERSION

    def __post_init__(self) -> None:
        if self.schema_version != SCHEMA_VERSION:
            raise SchemaError(f"unsupported schema_version {self.schema_version!r}")
        if self.checksum_algorithm not in CHECKSUM_HEX_LENGTH:
            raise SchemaError(f"unknown checksum algorithm {self.checksum_algorithm!r}")
        clips = dict(self.clips)
        for clip_id, entry in clips.items():
            validate_clip_id(clip_id)
            for field_name, ref in entry.fields.items():
                if ref is not None:
                    validate_checksum(ref.checksum, self.checksum_algorithm)
        metadata = dict(self.metadata)
        for name, ref in metadata.items():
            if not isinstance(name, str) or not name:
                raise SchemaError("metadata names must be non-empty")
            if not isinstance(ref, FileRef):
                raise SchemaError(f"metadata entry {name!r} must be a (path, checksum) pair")
            validate_checksum(ref.checksum, self.checksum_algorithm)
        object.__setattr__(self, "clips", MappingProxyType(clips))
        object.__setattr__(self, "metadata", MappingProxyType(metadata))

    def all_refs(self) -> list[tuple[str, str, FileRef]]:
        """Every non-null (scope, name, ref): scope is "<clip>" for clip fields, "" for metadata."""
        out = []
        for clip_id in sorted(self.clips, key=_byte_key):
            entry = self.clips[clip_id]
            for field_name in sorted(entry.fields, key=_byte_key):
                ref = entry.fields[field_name]
                if ref is not None:
                    out.append((clip_id, field_name, ref))
        for name in sorted(self.metadata, key=_byte_key):
            out.append(("", name, self.metadata[name]))
        return out


def _byte_key(text: str) -> bytes:
    return text.encode("utf-8", errors="surrogateescape")


def compute_checksum(file_path: Path | str, algorithm: str) -> str:
    """Streaming digest of a file's bytes; constant memory in the file size."""
    if algorithm not in CHECKSUM_HEX_LENGTH:
        raise SchemaError(f"unknown checksum algorithm {algorithm!r}")
    digest = hashlib.new(algorithm)
    try:
        with open(file_path, "rb") as handle:
            while True:
                chunk = handle.read(_CHUNK_SIZE)
                if not chunk:
                    break
                digest.update(chunk)
    except OSError as exc:
        raise IoError(f"cannot read {file_path}: {exc}") from exc
    return digest.hexdigest()


def _pair_to_ref(clip_id: str, field_name: str, value: object, algorithm: str) -> FileRef | None:
    where = f"clips.{clip_id}.{field_name}" if clip_id else f"metadata.{field_name}"
    if not isinstance(value, list) or len(value) != 2:
        raise SchemaError(f"{where}: expected a [path, checksum] pair")
    path, checksum = value
    if path is None and checksum is None:
        return None
    if not isinstance(path, str) or not isinstance(checksum, str):
        raise SchemaError(f"{where}: path and checksum must both be text or both be null")
    try:
        validate_relative_path(path)
        validate_checksum(checksum, algorithm)
    except SchemaError as exc:
        raise SchemaError(f"{where}: {exc}") from exc
    return FileRef(path, checksum)


def parse_index(data: bytes) -> DatasetIndex:
    """Parse and fully validate a canonical index document."""
    doc = load_document(data)
    if not isinstance(doc, dict):
        raise SchemaError("index document must be an object")
    expected_keys = {"checksum_algorithm", "clips", "metadata", "schema_version"}
    actual_keys = set(doc)
    if actual_keys != expected_keys:
        extra = sorted(actual_keys - expected_keys)
        missing = sorted(expected_keys - actual_keys)
        raise SchemaError(f"index keys mismatch: extra {extra}, missing {missing}")
    version = doc["schema_version"]
    if version != SCHEMA_VERSION:
        raise SchemaError(f"unsupported schema_version {version!r}")
    algorithm = doc["checksum_algorithm"]
    if algorithm not in CHECKSUM_HEX_LENGTH:
        raise SchemaError(f"unknown checksum algorithm {algorithm!r}")
    if not isinstance(doc["clips"], dict) or not isinstance(doc["metadata"], dict):
        raise SchemaError("'clips' and 'metadata' must be objects")

    clips: dict[str, IndexEntry] = {}
    for clip_id, raw_entry in doc["clips"].items():
        validate_clip_id(clip_id)
        if not isinstance(raw_entry, dict) or not raw_entry:
            raise SchemaError(f"clips.{clip_id}: entry must be a non-empty object")
        fields = {
            name: _pair_to_ref(clip_id, name, value, algorithm)
            for name, value in raw_entry.items()
        }
        clips[clip_id] = IndexEntry(fields)

    metadata: dict[str, FileRef] = {}
    for name, value in doc["metadata"].items():
        ref = _pair_to_ref("", name, value, algorithm)
        if ref is None:
            raise SchemaError(f"metadata.{name}: null pairs are not allowed in metadata")
        metadata[name] = ref

    return DatasetIndex(algorithm, clips, metadata, version)


def serialize_index(index: DatasetIndex) -> bytes:
    """Render an index in the canonical byte form; parse_index inverts it exactly."""
    doc = {
        "schema_version": index.schema_version,
        "checksum_algorithm": index.checksum_algorithm,
        "clips": {
            clip_id: {
                name: [ref.path, ref.checksum] if ref is not None else [None, None]
                for name, ref in entry.fields.items()
            }
            for clip_id, entry in index.clips.items()
        },
        "metadata": {
            name: [ref.path, ref.checksum] for name, ref in index.metadata.items()
        },
    }
    return canonical_bytes(doc)


@dataclass(frozen=True)
class ClipFieldAssignment:
    clip_id: str
    field: str


@dataclass(frozen=True)
class MetadataAssignment:
    name: str


FileAssignment = Union[ClipFieldAssignment, MetadataAssignment, None]
FieldRule = Callable[[str], FileAssignment]


def _strip_extension(name: str) -> str:
    dot = name.rfind(".")
    return name[:dot] if dot > 0 else name


def directory_field_rule(relpath: str) -> FileAssignment:
    """Default layout rule.

    The top-level directory names the field; the remaining path with its
    extension stripped names the clip. Files under "metadata/" become
    dataset-level metadata entries. Files directly under the root belong to
    no clip and are skipped.
    """
    segments = relpath.split("/")
    if len(segments) < 2:
        return None
    head = segments[0]
    rest = segments[1:]
    rest[-1] = _strip_extension(rest[-1])
    stem = "/".join(rest)
    if head == "metadata":
        return MetadataAssignment(stem)
    return ClipFieldAssignment(stem, head)


def _walk_regular_files(root: Path) -> list[str]:
    relpaths: list[str] = []
    for dirpath, dirnames, filenames in os.walk(root, followlinks=False):
        # prune symlinked directories so the walk never leaves the tree
        dirnames[:] = [d for d in dirnames if not os.path.islink(os.path.join(dirpath, d))]
        for filename in filenames:
            full = os.path.join(dirpath, filename)
            if os.path.islink(full) or not os.path.isfile(full):
                continue
            rel = os.path.relpath(full, root)
            relpaths.append(rel.replace(os.sep, "/"))
    try:
        return sorted(relpaths, key=lambda p: p.encode("utf-8"))
    except UnicodeEncodeError as exc:
        raise IoError(f"file name under {root} is not valid UTF-8: {exc}") from exc


def build_index(
    root: Path | str,
    algorithm: str = "sha256",
    clip_rule: FieldRule = directory_field_rule,
    workers: int = 1,
) -> DatasetIndex:
    """Walk ``root``, group files into clips per ``clip_rule``, and checksum them.

    The walk order, grouping, and output bytes are deterministic for a given
    tree regardless of ``workers``. Symbolic links are not followed.
    """
    root = Path(root)
    if not root.is_dir():
        raise IoError(f"{root} is not a readable directory")
    relpaths = _walk_regular_files(root)

    assignments: list[tuple[str, FileAssignment]] = []
    claimed: dict[object, str] = {}
    for relpath in relpaths:
        assignment = clip_rule(relpath)
        if assignment is None:
            continue
        if isinstance(assignment, ClipFieldAssignment):
            validate_clip_id(assignment.clip_id)
            slot: object = (assignment.clip_id, assignment.field)
        else:
            slot = assignment.name
        if slot in claimed:
            raise RuleError(
                f"{relpath!r} and {claimed[slot]!r} both map to {slot!r}"
            )
        claimed[slot] = relpath
        assignments.append((relpath, assignment))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            digests = list(
                pool.map(lambda rp: compute_checksum(root / rp, algorithm),
                         [rp for rp, _ in assignments])
            )
    else:
        digests = [compute_checksum(root / rp, algorithm) for rp, _ in assignments]

    clip_fields: dict[str, dict[str, FileRef | None]] = {}
    metadata: dict[str, FileRef] = {}
    for (relpath, assignment), digest in zip(assignments, digests):
        ref = FileRef(relpath, digest)
        if isinstance(assignment, ClipFieldAssignment):
            clip_fields.setdefault(assignment.clip_id, {})[assignment.field] = ref
        else:
            metadata[assignment.name] = ref

    clips = {clip_id: IndexEntry(fields) for clip_id, fields in clip_fields.items()}
    return DatasetIndex(algorithm, clips, metadata)
