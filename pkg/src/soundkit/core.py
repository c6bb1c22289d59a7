"""Standardized in-memory types for clips, annotations, and audio.

Every constructor here is a gatekeeper: a value that violates its invariants
cannot be built through the public surface. All values are immutable after
construction and safe to share between threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Iterator, Mapping

from .errors import InvalidAnnotation, MediaError, SchemaError


def validate_clip_id(value: str) -> str:
    """Check a clip id: non-empty text with no path-escaping ".." segment."""
    if not isinstance(value, str) or not value:
        raise SchemaError("clip id must be non-empty text")
    if ".." in value.split("/"):
        raise SchemaError(f"clip id {value!r} contains a path-escaping '..' segment")
    return value


def _check_confidence(confidence: float | None, what: str) -> None:
    if confidence is None:
        return
    if isinstance(confidence, bool) or not isinstance(confidence, (int, float)):
        raise InvalidAnnotation(f"{what} confidence must be a number")
    if not (0.0 <= confidence <= 1.0):
        raise InvalidAnnotation(f"{what} confidence {confidence!r} outside [0, 1]")


@dataclass(frozen=True)
class Tag:
    """A clip-level label with an optional confidence in [0, 1].

    An absent confidence means the source file did not state one; it is never
    defaulted to 1.0.
    """

    label: str
    confidence: float | None = None

    def __post_init__(self) -> None:
        if not isinstance(self.label, str) or not self.label:
            raise InvalidAnnotation("tag label must be non-empty")
        _check_confidence(self.confidence, "tag")


@dataclass(frozen=True)
class TagList:
    """Tags in exactly the order the source file listed them."""

    tags: tuple[Tag, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "tags", tuple(self.tags))
        if not all(isinstance(t, Tag) for t in self.tags):
            raise InvalidAnnotation("TagList holds Tag values only")

    def __iter__(self) -> Iterator[Tag]:
        return iter(self.tags)

    def __len__(self) -> int:
        return len(self.tags)

    def __getitem__(self, i: int) -> Tag:
        return self.tags[i]


@dataclass(frozen=True)
class Event:
    """A labeled time interval in seconds. Zero-length events are legal."""

    onset: float
    offset: float
    label: str
    confidence: float | None = None

    def __post_init__(self) -> None:
        for name in ("onset", "offset"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise InvalidAnnotation(f"event {name} must be a number")
            if not math.isfinite(value):
                raise InvalidAnnotation(f"event {name} must be finite")
        if self.onset < 0:
            raise InvalidAnnotation(f"event onset {self.onset!r} is negative")
        if self.offset < self.onset:
            raise InvalidAnnotation(
                f"event offset {self.offset!r} precedes onset {self.onset!r}"
            )
        if not isinstance(self.label, str) or not self.label:
            raise InvalidAnnotation("event label must be non-empty")
        _check_confidence(self.confidence, "event")


@dataclass(frozen=True)
class EventList:
    """Events in exactly the order the source file listed them."""

    events: tuple[Event, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "events", tuple(self.events))
        if not all(isinstance(e, Event) for e in self.events):
            raise InvalidAnnotation("EventList holds Event values only")

    def __iter__(self) -> Iterator[Event]:
        return iter(self.events)

    def __len__(self) -> int:
        return len(self.events)

    def __getitem__(self, i: int) -> Event:
        return self.events[i]


def make_event(
    onset: float, offset: float, label: str, confidence: float | None = None
) -> Event:
    """Build an Event, raising InvalidAnnotation unless all invariants hold."""
    return Event(onset, offset, label, confidence)


def clip_duration_bound(events: EventList) -> float:
    """Largest event offset in seconds, or 0.0 for an empty list."""
    return max((e.offset for e in events), default=0.0)


@dataclass(frozen=True)
class AudioBuffer:
    """Decoded audio: per-channel float samples in [-1, 1], equal lengths."""

    sample_rate: int
    channels: int
    samples: tuple[tuple[float, ...], ...]

    def __post_init__(self) -> None:
        if not isinstance(self.sample_rate, int) or self.sample_rate <= 0:
            raise MediaError(f"sample rate {self.sample_rate!r} is not a positive integer")
        if not isinstance(self.channels, int) or self.channels < 1:
            raise MediaError(f"channel count {self.channels!r} is not >= 1")
        object.__setattr__(self, "samples", tuple(tuple(ch) for ch in self.samples))
        if len(self.samples) != self.channels:
            raise MediaError(
                f"{self.channels} channels declared but {len(self.samples)} sample sequences given"
            )
        lengths = {len(ch) for ch in self.samples}
        if len(lengths) > 1:
            raise MediaError(f"channels have unequal lengths {sorted(lengths)}")
        for ch in self.samples:
            for value in ch:
                if not math.isfinite(value) or not (-1.0 <= value <= 1.0):
                    raise MediaError(f"sample {value!r} outside [-1, 1]")

    @property
    def num_frames(self) -> int:
        return len(self.samples[0]) if self.samples else 0

    def duration(self) -> float:
        return self.num_frames / self.sample_rate


@dataclass(frozen=True)
class Clip:
    """One recording's resolved asset paths plus its non-standard attributes.

    ``fields`` maps every field name of the owning index entry to an absolute
    path, or None for null-pair fields. ``extras`` carries fields the manifest
    has no standard parser binding for, as the raw relative-path text from the
    index. Construction never touches the filesystem.
    """

    id: str
    fields: Mapping[str, Path | None]
    extras: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        validate_clip_id(self.id)
        object.__setattr__(self, "fields", MappingProxyType(dict(self.fields)))
        object.__setattr__(self, "extras", MappingProxyType(dict(self.extras)))

    def path(self, field_name: str) -> Path | None:
        return self.fields[field_name]
