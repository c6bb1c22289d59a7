"""Exception types raised by the soundkit toolchain."""


class SoundkitError(Exception):
    """Base class for every error this package raises deliberately."""


class InvalidAnnotation(SoundkitError):
    """An annotation value violates its invariants (bad interval, empty label, confidence outside [0, 1])."""


class SchemaError(SoundkitError):
    """A document (index, manifest, report) does not match its schema."""


class ParseError(SoundkitError):
    """An annotation or table file could not be parsed.

    ``line`` is the 1-based line number of the offending input line when known.
    """

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class MediaError(SoundkitError):
    """An audio payload is not a decodable RIFF/WAVE file of a supported codec."""


class IoError(SoundkitError):
    """A local file could not be read or written."""


class NetworkError(SoundkitError):
    """A remote could not be fetched (connection failure or HTTP status >= 400)."""


class ChecksumMismatch(SoundkitError):
    """Downloaded bytes do not match their declared checksum; nothing was installed."""


class ArchiveError(SoundkitError):
    """An archive is corrupt, of the wrong kind, or uses an unsupported feature."""


class PathTraversal(SoundkitError):
    """An archive member would escape the extraction root; the archive was rejected whole."""


class RuleError(SoundkitError):
    """A field rule mapped two files onto the same (clip, field) slot."""


class UnknownRemote(SoundkitError):
    """A remote name was requested that the manifest does not declare."""


class UnknownDataset(SoundkitError):
    """No manifest with the requested dataset id exists in the registry."""


class UnknownClip(SoundkitError):
    """The index has no entry for the requested clip id."""


class UnknownField(SoundkitError):
    """The clip's index entry has no field with the requested name."""


class AbsentField(SoundkitError):
    """The field is a null pair: the clip legitimately lacks this asset."""
