"""Parsers for the on-disk annotation and media formats.

All parsers are total over arbitrary byte input: they return a value or raise
ParseError/MediaError with a location, never crash, and never return a partial
value. Source order is always preserved; nothing here sorts.
"""

from __future__ import annotations

import csv
import io
import re
import struct
from dataclasses import dataclass
from types import MappingProxyType
from typing import Mapping

from .core import AudioBuffer, Event, EventList, Tag, TagList, validate_clip_id
from .errors import InvalidAnnotation, MediaError, ParseError, SchemaError

DELIMITERS = {"tab": "\t", "comma": ","}

# plain decimal or scientific notation only: no inf/nan/underscores/hex
_NUMBER_RE = re.compile(r"[+-]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?\Z")


@dataclass(frozen=True)
class EventFormatSpec:
    """Shape of a delimiter-separated event file."""

    delimiter: str = "tab"
    has_confidence: bool = False
    header_rows: int = 0

    def __post_init__(self) -> None:
        if self.delimiter not in DELIMITERS:
            raise SchemaError(f"unknown delimiter {self.delimiter!r}")
        if not isinstance(self.header_rows, int) or self.header_rows < 0:
            raise SchemaError("header_rows must be a count >= 0")

    @property
    def delimiter_char(self) -> str:
        return DELIMITERS[self.delimiter]


@dataclass(frozen=True)
class MetadataTable:
    """A clip-metadata table: header plus one row of verbatim text per clip id."""

    header: tuple[str, ...]
    rows: Mapping[str, Mapping[str, str]]

    def __post_init__(self) -> None:
        object.__setattr__(self, "header", tuple(self.header))
        object.__setattr__(
            self,
            "rows",
            MappingProxyType({k: MappingProxyType(dict(v)) for k, v in self.rows.items()}),
        )

    def __len__(self) -> int:
        return len(self.rows)


def _decode_utf8(data: bytes) -> str:
    if data.startswith(b"\xef\xbb\xbf"):
        data = data[3:]
    try:
        return data.decode("utf-8")
    except UnicodeDecodeError as exc:
        line = data.count(b"\n", 0, exc.start) + 1
        raise ParseError(f"input is not UTF-8 ({exc.reason})", line) from exc


def _lines(text: str) -> list[str]:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return [line[:-1] if line.endswith("\r") else line for line in lines]


def _parse_number(cell: str, what: str, line: int) -> float:
    if not _NUMBER_RE.match(cell):
        raise ParseError(f"non-numeric {what} {cell!r}", line)
    return float(cell)


def _parse_confidence(cell: str, line: int) -> float:
    value = _parse_number(cell, "confidence", line)
    if not (0.0 <= value <= 1.0):
        raise ParseError(f"confidence {cell!r} outside [0, 1]", line)
    return value


def parse_tags(data: bytes, delimiter: str = "comma") -> TagList:
    """One tag per non-empty line: ``label`` or ``label<delim>confidence``."""
    if delimiter not in DELIMITERS:
        raise SchemaError(f"unknown delimiter {delimiter!r}")
    sep = DELIMITERS[delimiter]
    tags: list[Tag] = []
    for lineno, line in enumerate(_lines(_decode_utf8(data)), start=1):
        if not line.strip():
            continue
        cells = line.split(sep)
        if len(cells) == 1:
            label, confidence = cells[0], None
        elif len(cells) == 2:
            label, confidence = cells[0], _parse_confidence(cells[1], lineno)
        else:
            raise ParseError(
                f"expected label or label{sep!r}confidence, got {len(cells)} cells", lineno
            )
        try:
            tags.append(Tag(label, confidence))
        except InvalidAnnotation as exc:
            raise ParseError(str(exc), lineno) from exc
    return TagList(tuple(tags))


def parse_events(data: bytes, spec: EventFormatSpec) -> EventList:
    """Parse onset/offset/label[/confidence] lines after skipping header rows."""
    lines = _lines(_decode_utf8(data))
    sep = spec.delimiter_char
    expected = 4 if spec.has_confidence else 3
    events: list[Event] = []
    for lineno, line in enumerate(lines, start=1):
        if lineno <= spec.header_rows or not line.strip():
            continue
        cells = line.split(sep)
        if len(cells) != expected:
            raise ParseError(f"expected {expected} cells, got {len(cells)}", lineno)
        onset = _parse_number(cells[0], "onset", lineno)
        offset = _parse_number(cells[1], "offset", lineno)
        confidence = _parse_confidence(cells[3], lineno) if spec.has_confidence else None
        try:
            events.append(Event(onset, offset, cells[2], confidence))
        except InvalidAnnotation as exc:
            raise ParseError(str(exc), lineno) from exc
    return EventList(tuple(events))


def render_events(events: EventList, spec: EventFormatSpec) -> bytes:
    """Canonical rendering: 6-decimal times, spec delimiter, "\\n" line endings.

    ``spec.header_rows`` must be 0, labels must not contain the delimiter or a
    newline, and each event's confidence presence must match
    ``spec.has_confidence``; otherwise the rendering could not parse back to
    the same list and a ValueError is raised.
    """
    if spec.header_rows != 0:
        raise ValueError("render_events emits no header rows; use header_rows=0")
    sep = spec.delimiter_char
    out: list[str] = []
    for event in events:
        if sep in event.label or "\n" in event.label or "\r" in event.label:
            raise ValueError(f"label {event.label!r} would not survive the delimiter")
        cells = [f"{event.onset:.6f}", f"{event.offset:.6f}", event.label]
        if spec.has_confidence:
            if event.confidence is None:
                raise ValueError("format carries a confidence column but event has none")
            cells.append(f"{event.confidence:.6f}")
        elif event.confidence is not None:
            raise ValueError("event has a confidence but the format carries no column for it")
        out.append(sep.join(cells))
    return "".join(line + "\n" for line in out).encode("utf-8")


def parse_metadata_table(data: bytes) -> MetadataTable:
    """Parse an RFC-4180-style CSV whose first row is the header.

    Cell text is carried verbatim; no type coercion. First-column values must
    be unique clip ids and every row must have exactly the header's width.
    """
    lines = _lines(_decode_utf8(data))
    if not lines or not lines[0].strip():
        raise ParseError("empty header", 1)

    def split_csv(line: str, lineno: int) -> list[str]:
        try:
            return next(csv.reader(io.StringIO(line), strict=True))
        except (csv.Error, StopIteration) as exc:
            raise ParseError(f"malformed CSV: {exc}", lineno) from exc

    header = split_csv(lines[0], 1)
    if any(not cell for cell in header):
        raise ParseError("empty column name in header", 1)
    if len(set(header)) != len(header):
        raise ParseError("duplicate column name in header", 1)

    rows: dict[str, dict[str, str]] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cells = split_csv(line, lineno)
        if len(cells) != len(header):
            raise ParseError(
                f"row has {len(cells)} cells, header has {len(header)}", lineno
            )
        try:
            key = validate_clip_id(cells[0])
        except SchemaError as exc:
            raise ParseError(str(exc), lineno) from exc
        if key in rows:
            raise ParseError(f"duplicate id {key!r} in first column", lineno)
        rows[key] = dict(zip(header, cells))
    return MetadataTable(tuple(header), rows)


_PCM_TAG = 1
_FLOAT_TAG = 3


def _scan_riff_chunks(data: bytes) -> dict[bytes, bytes]:
    chunks: dict[bytes, bytes] = {}
    pos = 12
    while pos < len(data):
        if pos + 8 > len(data):
            raise MediaError("truncated chunk header")
        chunk_id = data[pos : pos + 4]
        (size,) = struct.unpack_from("<I", data, pos + 4)
        body = data[pos + 8 : pos + 8 + size]
        if len(body) < size:
            raise MediaError(f"truncated {chunk_id!r} chunk: {len(body)} of {size} bytes")
        if chunk_id in (b"fmt ", b"data"):
            if chunk_id in chunks:
                raise MediaError(f"duplicate {chunk_id!r} chunk")
            chunks[chunk_id] = body
        pos += 8 + size + (size & 1)
    return chunks


def load_audio(data: bytes) -> AudioBuffer:
    """Decode a RIFF/WAVE payload with integer PCM (8/16/24-bit) or 32-bit float samples.

    Integer samples are normalized by 2^(bits-1): full negative scale maps to
    exactly -1.0, full positive scale to just under 1.0. Channels come back
    de-interleaved.
    """
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise MediaError("not a RIFF/WAVE payload")
    chunks = _scan_riff_chunks(data)
    fmt = chunks.get(b"fmt ")
    if fmt is None:
        raise MediaError("missing 'fmt ' chunk")
    if len(fmt) < 16:
        raise MediaError("'fmt ' chunk shorter than 16 bytes")
    codec, channels, sample_rate, _, block_align, bits = struct.unpack_from("<HHIIHH", fmt)
    if channels == 0:
        raise MediaError("zero channels")
    if sample_rate == 0:
        raise MediaError("zero sample rate")
    if codec == _PCM_TAG:
        if bits not in (8, 16, 24):
            raise MediaError(f"unsupported PCM bit depth {bits}")
    elif codec == _FLOAT_TAG:
        if bits != 32:
            raise MediaError(f"unsupported float bit depth {bits}")
    else:
        raise MediaError(f"unsupported codec tag {codec}")

    body = chunks.get(b"data")
    if body is None:
        raise MediaError("missing 'data' chunk")
    frame_size = channels * (bits // 8)
    if block_align not in (0, frame_size):
        raise MediaError(f"block alignment {block_align} does not match frame size {frame_size}")
    if len(body) % frame_size:
        raise MediaError("data chunk does not divide into whole frames")
    n_frames = len(body) // frame_size

    flat: list[float]
    if codec == _FLOAT_TAG:
        values = struct.unpack(f"<{n_frames * channels}f", body)
        for v in values:
            if not (-1.0 <= v <= 1.0):  # also rejects NaN
                raise MediaError(f"float sample {v!r} outside [-1, 1]")
        flat = list(values)
    elif bits == 16:
        flat = [v / 32768.0 for v in struct.unpack(f"<{n_frames * channels}h", body)]
    elif bits == 8:
        flat = [(v - 128) / 128.0 for v in body]
    else:  # 24-bit
        flat = [
            int.from_bytes(body[i : i + 3], "little", signed=True) / 8388608.0
            for i in range(0, len(body), 3)
        ]

    samples = tuple(tuple(flat[ch::channels]) for ch in range(channels))
    return AudioBuffer(sample_rate, channels, samples)
