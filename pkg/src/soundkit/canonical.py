"""Canonical JSON rendering shared by indexes, manifests, and reports.

Canonical form: UTF-8, object keys sorted bytewise ascending, two-space
indentation, "\\n" line endings, one trailing newline. Two structurally equal
documents always serialize to identical bytes, which is what makes indexes
diff-friendly and reports byte-comparable.
"""

from __future__ import annotations

import json
from typing import Any

from .errors import SchemaError


def canonical_bytes(document: Any) -> bytes:
    """Render ``document`` (plain dicts/lists/scalars) in canonical form."""
    text = json.dumps(
        document, ensure_ascii=False, allow_nan=False, indent=2, sort_keys=True
    )
    return (text + "\n").encode("utf-8")


def _pairs_hook(pairs: list[tuple[str, Any]]) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for key, value in pairs:
        if key in out:
            raise SchemaError(f"duplicate object key {key!r}")
        out[key] = value
    return out


def _reject_constant(name: str) -> Any:
    raise SchemaError(f"non-finite number {name!r} is not allowed")


def load_document(data: bytes) -> Any:
    """Parse a JSON document, rejecting non-UTF-8 input and duplicate keys."""
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise SchemaError(f"document is not UTF-8: {exc}") from exc
    try:
        return json.loads(
            text, object_pairs_hook=_pairs_hook, parse_constant=_reject_constant
        )
    except json.JSONDecodeError as exc:
        raise SchemaError(f"document is not valid JSON: {exc}") from exc
