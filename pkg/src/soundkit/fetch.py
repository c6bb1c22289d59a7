"""Download dataset remotes, verify their checksums, and extract archives.

Discipline: bytes stream to a temporary name and are renamed into place only
after the digest matches, so a partially-written or tampered file is never
visible at a final path. Archive members are all vetted before anything is
written, so a rejected archive installs nothing.
"""

from __future__ import annotations

import os
import posixpath
import stat
import struct
import tarfile
import zipfile
from dataclasses import dataclass
from pathlib import Path
from types import MappingProxyType
from typing import Callable, Mapping
from urllib.parse import urlsplit

import requests

from .canonical import canonical_bytes, load_document
from .errors import (
    ArchiveError,
    ChecksumMismatch,
    IoError,
    NetworkError,
    PathTraversal,
    SchemaError,
    UnknownRemote,
)
from .index import compute_checksum, validate_checksum, validate_relative_path

UNPACK_KINDS = ("none", "zip", "tar_gz")
_MAX_REDIRECTS = 5
_RECEIPT_DIR = ".soundkit/receipts"

Logger = Callable[[str], None]


def _silent(_: str) -> None:
    pass


@dataclass(frozen=True)
class RemoteFile:
    """One downloadable file composing a dataset, with its declared checksum."""

    name: str
    url: str
    checksum: str
    checksum_algorithm: str
    destination: str
    unpack: str

    def __post_init__(self) -> None:
        if not self.name:
            raise SchemaError("remote name must be non-empty")
        scheme = urlsplit(self.url).scheme
        if scheme not in ("http", "https"):
            raise SchemaError(f"remote url {self.url!r} must be http or https")
        validate_checksum(self.checksum, self.checksum_algorithm)
        if self.destination != ".":
            validate_relative_path(self.destination)
        if self.unpack not in UNPACK_KINDS:
            raise SchemaError(f"unknown unpack kind {self.unpack!r}")


@dataclass(frozen=True)
class FetchResult:
    path: Path
    outcome: str  # downloaded | already_present
    bytes_transferred: int


@dataclass(frozen=True)
class FetchSummary:
    """Per-remote outcomes of a download_dataset run."""

    outcomes: Mapping[str, str]  # downloaded | already_present | skipped
    bytes_transferred: int
    extracted_files: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "outcomes", MappingProxyType(dict(self.outcomes)))


def _destination_dir(data_home: Path, remote: RemoteFile) -> Path:
    return data_home if remote.destination == "." else data_home / remote.destination


def _archive_target(data_home: Path, remote: RemoteFile) -> Path:
    filename = posixpath.basename(urlsplit(remote.url).path) or remote.name
    return _destination_dir(data_home, remote) / filename


def _stream_to_temp(
    url: str, temp_path: Path, algorithm: str, session: requests.Session
) -> tuple[str, int]:
    import hashlib

    digest = hashlib.new(algorithm)
    size = 0
    with session.get(url, stream=True, timeout=60) as response:
        if response.status_code >= 400:
            raise NetworkError(f"HTTP {response.status_code} for {url}")
        with open(temp_path, "wb") as handle:
            for chunk in response.iter_content(chunk_size=1 << 16):
                handle.write(chunk)
                digest.update(chunk)
                size += len(chunk)
    return digest.hexdigest(), size


def fetch_remote(
    remote: RemoteFile,
    data_home: Path | str,
    force: bool = False,
    log: Logger = _silent,
) -> FetchResult:
    """Download one remote into ``data_home``, gated by its declared checksum.

    If the target file already exists with a matching digest and ``force`` is
    false, no network traffic happens. A downloaded file whose digest does not
    match the declaration is removed and never installed.
    """
    data_home = Path(data_home)
    target = _archive_target(data_home, remote)
    if not force and target.is_file():
        if compute_checksum(target, remote.checksum_algorithm) == remote.checksum:
            log(f"{remote.name}: already present")
            return FetchResult(target, "already_present", 0)

    target.parent.mkdir(parents=True, exist_ok=True)
    temp_path = target.parent / f".{target.name}.part-{os.getpid()}"
    session = requests.Session()
    session.max_redirects = _MAX_REDIRECTS
    try:
        log(f"{remote.name}: fetching {remote.url}")
        try:
            digest, size = _stream_to_temp(remote.url, temp_path, remote.checksum_algorithm, session)
        except requests.exceptions.ConnectionError:
            # one automatic retry on a reset connection, none on HTTP errors
            log(f"{remote.name}: connection dropped, retrying once")
            digest, size = _stream_to_temp(remote.url, temp_path, remote.checksum_algorithm, session)
        except requests.exceptions.RequestException as exc:
            raise NetworkError(f"cannot fetch {remote.url}: {exc}") from exc

        if digest != remote.checksum:
            raise ChecksumMismatch(
                f"{remote.url}: downloaded digest {digest} does not match declared {remote.checksum}"
            )
        os.replace(temp_path, target)
    except requests.exceptions.RequestException as exc:
        raise NetworkError(f"cannot fetch {remote.url}: {exc}") from exc
    except OSError as exc:
        raise IoError(f"cannot write {target}: {exc}") from exc
    finally:
        session.close()
        temp_path.unlink(missing_ok=True)
    log(f"{remote.name}: downloaded {size} bytes")
    return FetchResult(target, "downloaded", size)


def _check_member_path(name: str, dest: Path) -> str:
    """Vet one archive member path; returns it normalized (no trailing slash)."""
    if not name or name in (".", "./"):
        raise ArchiveError(f"member with empty name {name!r}")
    if name.startswith("/") or name.startswith("\\"):
        raise PathTraversal(f"absolute member path {name!r}")
    parts = [p for p in name.split("/") if p not in ("", ".")]
    if not parts:
        raise ArchiveError(f"member with empty name {name!r}")
    if ".." in parts:
        raise PathTraversal(f"member path {name!r} escapes the extraction root")
    resolved = os.path.realpath(dest / Path(*parts))
    root = os.path.realpath(dest)
    if resolved != root and not resolved.startswith(root + os.sep):
        raise PathTraversal(f"member path {name!r} escapes the extraction root")
    return "/".join(parts)


def _write_stream(src, target: Path) -> None:
    target.parent.mkdir(parents=True, exist_ok=True)
    with open(target, "wb") as out:
        while True:
            chunk = src.read(1 << 16)
            if not chunk:
                break
            out.write(chunk)


def _extract_zip(archive: Path, dest: Path) -> list[str]:
    try:
        with zipfile.ZipFile(archive) as zf:
            dirs: list[str] = []
            plan: list[tuple[str, zipfile.ZipInfo]] = []
            for info in zf.infolist():
                mode = info.external_attr >> 16
                if stat.S_ISLNK(mode):
                    raise PathTraversal(f"symlink member {info.filename!r} rejected")
                relname = _check_member_path(info.filename, dest)
                if info.is_dir():
                    dirs.append(relname)
                else:
                    plan.append((relname, info))
            for relname in dirs:
                (dest / Path(*relname.split("/"))).mkdir(parents=True, exist_ok=True)
            written = []
            for relname, info in plan:
                try:
                    with zf.open(info) as src:
                        _write_stream(src, dest / Path(*relname.split("/")))
                except (zipfile.BadZipFile, NotImplementedError, struct.error) as exc:
                    raise ArchiveError(f"cannot extract {relname!r}: {exc}") from exc
                written.append(relname)
            return written
    except zipfile.BadZipFile as exc:
        raise ArchiveError(f"{archive} is not a valid zip archive: {exc}") from exc


def _extract_tar_gz(archive: Path, dest: Path) -> list[str]:
    try:
        with tarfile.open(archive, "r:gz") as tf:
            dirs = []
            plan: list[tuple[str, tarfile.TarInfo]] = []
            for member in tf.getmembers():
                if member.issym() or member.islnk():
                    raise PathTraversal(f"symlink member {member.name!r} rejected")
                if member.isdir():
                    dirs.append(_check_member_path(member.name, dest))
                    continue
                if not member.isfile():
                    raise ArchiveError(f"unsupported member type for {member.name!r}")
                plan.append((_check_member_path(member.name, dest), member))
            for relname in dirs:
                (dest / Path(*relname.split("/"))).mkdir(parents=True, exist_ok=True)
            written = []
            for relname, member in plan:
                src = tf.extractfile(member)
                if src is None:
                    raise ArchiveError(f"cannot extract {relname!r}")
                with src:
                    _write_stream(src, dest / Path(*relname.split("/")))
                written.append(relname)
            return written
    except (tarfile.TarError, EOFError, OSError) as exc:
        raise ArchiveError(f"{archive} is not a valid tar.gz archive: {exc}") from exc


def extract_archive(archive: Path | str, kind: str, dest: Path | str) -> list[str]:
    """Extract a zip or tar_gz archive strictly under ``dest``.

    Members are all vetted before extraction: absolute paths, ".." segments,
    and symlink members reject the whole archive and nothing is installed.
    Returns the extracted file paths, relative to ``dest``, sorted bytewise.
    """
    archive = Path(archive)
    dest = Path(dest)
    if not archive.is_file():
        raise IoError(f"archive {archive} does not exist")
    dest.mkdir(parents=True, exist_ok=True)
    if kind == "zip":
        written = _extract_zip(archive, dest)
    elif kind == "tar_gz":
        written = _extract_tar_gz(archive, dest)
    else:
        raise ArchiveError(f"unknown archive kind {kind!r}")
    return sorted(written, key=lambda p: p.encode("utf-8"))


def _receipt_path(data_home: Path, remote_name: str) -> Path:
    return data_home / _RECEIPT_DIR / f"{remote_name}.json"


def _read_receipt(data_home: Path, remote: RemoteFile) -> bool:
    """True when a receipt records a completed extraction of this exact remote."""
    path = _receipt_path(data_home, remote.name)
    if not path.is_file():
        return False
    try:
        doc = load_document(path.read_bytes())
    except (OSError, SchemaError):
        return False
    return isinstance(doc, dict) and doc.get("checksum") == remote.checksum


def _write_receipt(data_home: Path, remote: RemoteFile) -> None:
    path = _receipt_path(data_home, remote.name)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(
        canonical_bytes(
            {"checksum": remote.checksum, "checksum_algorithm": remote.checksum_algorithm}
        )
    )


def download_dataset(
    manifest,
    data_home: Path | str,
    partial: set[str] | None = None,
    force: bool = False,
    cleanup: bool = True,
    log: Logger = _silent,
) -> FetchSummary:
    """Fetch the selected remotes of a manifest and extract the archives.

    With ``partial`` given, only the named remotes are fetched; the others are
    marked skipped. Receipts under the data home record completed extractions
    so that a re-run after ``cleanup`` deleted the archives transfers nothing.
    """
    data_home = Path(data_home)
    remote_names = sorted(manifest.remotes)
    if partial is not None:
        unknown = sorted(set(partial) - set(remote_names))
        if unknown:
            raise UnknownRemote(
                f"manifest {manifest.id!r} declares no remote named {unknown[0]!r}"
            )

    outcomes: dict[str, str] = {}
    total_bytes = 0
    extracted_count = 0
    for name in remote_names:
        if partial is not None and name not in partial:
            outcomes[name] = "skipped"
            log(f"{name}: skipped")
            continue
        remote = manifest.remotes[name]
        if (
            not force
            and remote.unpack != "none"
            and not _archive_target(data_home, remote).is_file()
            and _read_receipt(data_home, remote)
        ):
            outcomes[name] = "already_present"
            log(f"{name}: already extracted")
            continue
        result = fetch_remote(remote, data_home, force=force, log=log)
        total_bytes += result.bytes_transferred
        outcomes[name] = result.outcome
        if remote.unpack != "none":
            if result.outcome == "downloaded" or force or not _read_receipt(data_home, remote):
                written = extract_archive(
                    result.path, remote.unpack, _destination_dir(data_home, remote)
                )
                extracted_count += len(written)
                log(f"{name}: extracted {len(written)} files")
                _write_receipt(data_home, remote)
            if cleanup:
                result.path.unlink(missing_ok=True)
    return FetchSummary(outcomes, total_bytes, extracted_count)
