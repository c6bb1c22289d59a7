"""Diff a local dataset copy against its canonical index.

Validation is read-only and one-directional: indexed files are checked for
presence (and, in full mode, byte-correctness); extra local files are ignored.
Reports are deterministic down to the byte for a given disk state.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Mapping

from .canonical import canonical_bytes, load_document
from .errors import IoError, SchemaError
from .index import DatasetIndex, FileRef, compute_checksum, _byte_key

MODES = ("full", "fast")

# distinguishing flags carried in the report's detail section
FLAG_UNREADABLE = "unreadable"
FLAG_ESCAPES_ROOT = "escapes_root"


@dataclass(frozen=True)
class ValidationReport:
    """Deterministic diff of local data against the canonical index.

    ``clean`` is true iff every missing/invalid collection is empty. All
    sequences and map iteration orders are sorted bytewise ascending.
    ``error_clips``/``error_metadata`` flag invalid entries whose failure was
    not a checksum mismatch (unreadable file, resolution escaping the root);
    they are always a subset of the invalid collections.
    """

    mode: str
    files_checked: int
    missing_clips: Mapping[str, tuple[str, ...]]
    invalid_clips: Mapping[str, tuple[str, ...]]
    missing_metadata: tuple[str, ...]
    invalid_metadata: tuple[str, ...]
    clean: bool
    error_clips: Mapping[str, Mapping[str, str]] = field(default_factory=dict)
    error_metadata: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise SchemaError(f"unknown validation mode {self.mode!r}")
        missing_clips = {k: tuple(v) for k, v in self.missing_clips.items()}
        invalid_clips = {k: tuple(v) for k, v in self.invalid_clips.items()}
        for clip_id, fields in missing_clips.items():
            overlap = set(fields) & set(invalid_clips.get(clip_id, ()))
            if overlap:
                raise SchemaError(
                    f"clip {clip_id!r} fields {sorted(overlap)} are both missing and invalid"
                )
        should_be_clean = not (
            missing_clips or invalid_clips or self.missing_metadata or self.invalid_metadata
        )
        if self.clean != should_be_clean:
            raise SchemaError("'clean' flag contradicts the report's collections")
        for collection in (
            list(missing_clips),
            list(invalid_clips),
            *missing_clips.values(),
            *invalid_clips.values(),
            self.missing_metadata,
            self.invalid_metadata,
        ):
            if list(collection) != sorted(collection, key=_byte_key):
                raise SchemaError("report collections must be sorted bytewise ascending")
        for clip_id, flags in self.error_clips.items():
            if set(flags) - set(invalid_clips.get(clip_id, ())):
                raise SchemaError("error flags must be a subset of the invalid collections")
        if set(self.error_metadata) - set(self.invalid_metadata):
            raise SchemaError("error flags must be a subset of the invalid collections")
        object.__setattr__(self, "missing_clips", MappingProxyType(missing_clips))
        object.__setattr__(self, "invalid_clips", MappingProxyType(invalid_clips))
        object.__setattr__(self, "missing_metadata", tuple(self.missing_metadata))
        object.__setattr__(self, "invalid_metadata", tuple(self.invalid_metadata))
        object.__setattr__(
            self,
            "error_clips",
            MappingProxyType({k: MappingProxyType(dict(v)) for k, v in self.error_clips.items()}),
        )
        object.__setattr__(self, "error_metadata", MappingProxyType(dict(self.error_metadata)))


def _sorted_map(entries: dict[str, list[str]]) -> dict[str, tuple[str, ...]]:
    return {
        key: tuple(sorted(entries[key], key=_byte_key))
        for key in sorted(entries, key=_byte_key)
    }


def _resolves_under(target: Path, root: Path) -> bool:
    real_root = os.path.realpath(root)
    real_target = os.path.realpath(target)
    return real_target == real_root or real_target.startswith(real_root + os.sep)


def validate(
    index: DatasetIndex,
    data_home: Path | str,
    mode: str = "full",
    workers: int = 1,
) -> ValidationReport:
    """Check every non-null FileRef of ``index`` under ``data_home``.

    Absent files are missing; present files whose digest differs from the
    index checksum are invalid (full mode only). Fast mode checks existence
    only. ``data_home`` need not exist, in which case everything is missing.
    """
    if mode not in MODES:
        raise SchemaError(f"unknown validation mode {mode!r}")
    data_home = Path(data_home)
    jobs: list[tuple[str, str, FileRef]] = index.all_refs()

    def check(job: tuple[str, str, FileRef]) -> tuple[str, str] | None:
        """Returns (status, flag): status in {"ok", "missing", "invalid"}."""
        _, _, ref = job
        target = data_home / ref.path
        if not target.is_file():
            return ("missing", "")
        if not _resolves_under(target, data_home):
            return ("invalid", FLAG_ESCAPES_ROOT)
        if mode == "fast":
            return ("ok", "")
        try:
            digest = compute_checksum(target, index.checksum_algorithm)
        except IoError:
            return ("invalid", FLAG_UNREADABLE)
        if digest != ref.checksum:
            return ("invalid", "")
        return ("ok", "")

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(check, jobs))
    else:
        results = [check(job) for job in jobs]

    missing_clips: dict[str, list[str]] = {}
    invalid_clips: dict[str, list[str]] = {}
    missing_metadata: list[str] = []
    invalid_metadata: list[str] = []
    error_clips: dict[str, dict[str, str]] = {}
    error_metadata: dict[str, str] = {}
    for (clip_id, name, _), (status, flag) in zip(jobs, results):
        if status == "ok":
            continue
        if clip_id:
            bucket = missing_clips if status == "missing" else invalid_clips
            bucket.setdefault(clip_id, []).append(name)
            if flag:
                error_clips.setdefault(clip_id, {})[name] = flag
        else:
            bucket_m = missing_metadata if status == "missing" else invalid_metadata
            bucket_m.append(name)
            if flag:
                error_metadata[name] = flag

    missing_clips_s = _sorted_map(missing_clips)
    invalid_clips_s = _sorted_map(invalid_clips)
    clean = not (missing_clips_s or invalid_clips_s or missing_metadata or invalid_metadata)
    return ValidationReport(
        mode=mode,
        files_checked=len(jobs),
        missing_clips=missing_clips_s,
        invalid_clips=invalid_clips_s,
        missing_metadata=tuple(sorted(missing_metadata, key=_byte_key)),
        invalid_metadata=tuple(sorted(invalid_metadata, key=_byte_key)),
        clean=clean,
        error_clips={k: dict(v) for k, v in sorted(error_clips.items())},
        error_metadata=error_metadata,
    )


def report_to_document(report: ValidationReport) -> bytes:
    """Canonical serialized form of a report; parse_report inverts it exactly."""
    doc: dict[str, object] = {
        "clean": report.clean,
        "files_checked": report.files_checked,
        "mode": report.mode,
        "missing": {
            "clips": {k: list(v) for k, v in report.missing_clips.items()},
            "metadata": list(report.missing_metadata),
        },
        "invalid": {
            "clips": {k: list(v) for k, v in report.invalid_clips.items()},
            "metadata": list(report.invalid_metadata),
        },
    }
    if report.error_clips or report.error_metadata:
        doc["errors"] = {
            "clips": {k: dict(v) for k, v in report.error_clips.items()},
            "metadata": dict(report.error_metadata),
        }
    return canonical_bytes(doc)


def _require_keys(obj: object, keys: set[str], where: str) -> dict:
    if not isinstance(obj, dict):
        raise SchemaError(f"{where} must be an object")
    if set(obj) != keys:
        raise SchemaError(f"{where} keys mismatch: got {sorted(obj)}, expected {sorted(keys)}")
    return obj


def _parse_name_lists(obj: object, where: str) -> tuple[dict[str, tuple[str, ...]], tuple[str, ...]]:
    section = _require_keys(obj, {"clips", "metadata"}, where)
    clips_raw = section["clips"]
    if not isinstance(clips_raw, dict):
        raise SchemaError(f"{where}.clips must be an object")
    clips: dict[str, tuple[str, ...]] = {}
    for clip_id, names in clips_raw.items():
        if not isinstance(names, list) or not all(isinstance(n, str) for n in names):
            raise SchemaError(f"{where}.clips.{clip_id} must be a list of field names")
        clips[clip_id] = tuple(names)
    meta = section["metadata"]
    if not isinstance(meta, list) or not all(isinstance(n, str) for n in meta):
        raise SchemaError(f"{where}.metadata must be a list of names")
    return clips, tuple(meta)


def parse_report(data: bytes) -> ValidationReport:
    """Parse a canonical report document back into an equal ValidationReport."""
    doc = load_document(data)
    if not isinstance(doc, dict):
        raise SchemaError("report document must be an object")
    keys = set(doc)
    base = {"clean", "files_checked", "invalid", "missing", "mode"}
    if keys not in (base, base | {"errors"}):
        raise SchemaError(f"report keys mismatch: got {sorted(keys)}")
    if not isinstance(doc["clean"], bool):
        raise SchemaError("'clean' must be a boolean")
    if not isinstance(doc["files_checked"], int) or isinstance(doc["files_checked"], bool):
        raise SchemaError("'files_checked' must be a count")
    missing_clips, missing_metadata = _parse_name_lists(doc["missing"], "missing")
    invalid_clips, invalid_metadata = _parse_name_lists(doc["invalid"], "invalid")
    error_clips: dict[str, dict[str, str]] = {}
    error_metadata: dict[str, str] = {}
    if "errors" in doc:
        section = _require_keys(doc["errors"], {"clips", "metadata"}, "errors")
        if not isinstance(section["clips"], dict) or not isinstance(section["metadata"], dict):
            raise SchemaError("errors sections must be objects")
        for clip_id, flags in section["clips"].items():
            if not isinstance(flags, dict):
                raise SchemaError(f"errors.clips.{clip_id} must be an object")
            error_clips[clip_id] = dict(flags)
        error_metadata = dict(section["metadata"])
    return ValidationReport(
        mode=doc["mode"],
        files_checked=doc["files_checked"],
        missing_clips=missing_clips,
        invalid_clips=invalid_clips,
        missing_metadata=missing_metadata,
        invalid_metadata=invalid_metadata,
        clean=doc["clean"],
        error_clips=error_clips,
        error_metadata=error_metadata,
    )
