"""Ingest, validate, filter, and render the target document collection.

Corpus files are JSONL in the BEIR convention: one object per line with
`_id` (required), `title` (optional), and `text` (required).
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import DuplicateIdError, FormatError, InvalidConfigError, ValidationError

DEFAULT_MIN_CHARS = 300

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


def tokenize(text: str) -> list[str]:
    """Lowercase and split on any non-alphanumeric character."""
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class Document:
    id: str
    title: str
    text: str


@dataclass
class Collection:
    """Ordered documents plus an id -> ordinal lookup (file order is stable)."""

    docs: list[Document] = field(default_factory=list)
    index: dict[str, int] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.docs)

    def __iter__(self):
        return iter(self.docs)

    def __getitem__(self, ordinal: int) -> Document:
        return self.docs[ordinal]

    def ordinal(self, doc_id: str) -> int:
        return self.index[doc_id]

    def get(self, doc_id: str) -> Document | None:
        pos = self.index.get(doc_id)
        return None if pos is None else self.docs[pos]


def _validate_doc(doc_id: str, title: str, text: str, line_number: int) -> None:
    if not doc_id:
        raise FormatError("empty `_id`", line_number)
    if "\x00" in title or "\x00" in text:
        raise ValidationError(f"line {line_number}: NUL byte in document {doc_id!r}")


def load_collection(path: str | Path, fmt: str = "jsonl") -> Collection:
    """Load a corpus file into a Collection, preserving file order."""
    if fmt != "jsonl":
        raise InvalidConfigError(f"unsupported corpus format: {fmt!r}")
    docs: list[Document] = []
    index: dict[str, int] = {}
    with open(path, encoding="utf-8") as fh:
        for line_number, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"invalid JSON ({exc.msg})", line_number) from exc
            if not isinstance(obj, dict):
                raise FormatError("expected a JSON object", line_number)
            if "_id" not in obj:
                raise FormatError("missing `_id` field", line_number)
            if "text" not in obj:
                raise FormatError("missing `text` field", line_number)
            doc_id = str(obj["_id"])
            title = str(obj.get("title") or "")
            text = str(obj["text"])
            _validate_doc(doc_id, title, text, line_number)
            if doc_id in index:
                raise DuplicateIdError(f"duplicate `_id` {doc_id!r} at line {line_number}")
            index[doc_id] = len(docs)
            docs.append(Document(id=doc_id, title=title, text=text))
    return Collection(docs=docs, index=index)


def save_collection(collection: Collection, path: str | Path) -> None:
    """Write a Collection back to JSONL; values round-trip byte-exactly."""
    with open(path, "w", encoding="utf-8") as fh:
        for doc in collection:
            obj = {"_id": doc.id, "title": doc.title, "text": doc.text}
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")


def render_document(doc: Document) -> str:
    """Title plus a single space plus text; bare text when the title is empty."""
    if doc.title:
        return doc.title + " " + doc.text
    return doc.text


def filter_min_length(collection: Collection, min_chars: int = DEFAULT_MIN_CHARS) -> Collection:
    """Drop documents whose rendered string is shorter than min_chars.

    Length counts Unicode scalar values of the rendered title+text string.
    Order is preserved and ordinals are reassigned.
    """
    if min_chars < 0:
        raise InvalidConfigError(f"min_chars must be >= 0, got {min_chars}")
    kept = [doc for doc in collection if len(render_document(doc)) >= min_chars]
    return Collection(docs=kept, index={doc.id: i for i, doc in enumerate(kept)})
