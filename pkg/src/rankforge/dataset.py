"""Training-file emission and the run manifest.

Two training formats are written from the mined pairs:
  * triples TSV: one ``query \\t positive_text \\t negative_text`` row per
    negative, with tabs and newlines inside fields replaced by spaces;
  * pointwise JSONL: ``{query, doc_id, doc_text, label}`` with label 1 for
    the positive and 0 for each negative, positive first.

The manifest captures counts, the effective configuration, and sha256
hashes of every artifact. It contains no timestamps or absolute paths, so
two runs with the same seed and inputs produce byte-identical manifests.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .corpus import Collection, render_document
from .errors import DataError, FormatError
from .mine import TrainingPair

_FIELD_BREAK_RE = re.compile(r"[\t\n\r]")


def sanitize_field(text: str) -> str:
    """Make text safe for one TSV cell."""
    return _FIELD_BREAK_RE.sub(" ", text)


def _doc_text(collection: Collection, doc_id: str) -> str:
    try:
        return render_document(collection[collection.ordinal(doc_id)])
    except KeyError:
        raise DataError(f"pair references unknown document id {doc_id!r}") from None


def write_triples(pairs: Sequence[TrainingPair], collection: Collection, path: str | Path) -> int:
    """Write the triples TSV; returns the number of rows."""
    rows = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for pair in pairs:
            query = sanitize_field(pair.query_text)
            positive = sanitize_field(_doc_text(collection, pair.positive_doc_id))
            for neg_id in pair.negative_doc_ids:
                negative = sanitize_field(_doc_text(collection, neg_id))
                fh.write(f"{query}\t{positive}\t{negative}\n")
                rows += 1
    return rows


def write_pointwise(pairs: Sequence[TrainingPair], collection: Collection, path: str | Path) -> int:
    """Write the pointwise JSONL; returns the number of records."""
    records = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for pair in pairs:
            labeled = [(pair.positive_doc_id, 1)]
            labeled.extend((neg_id, 0) for neg_id in pair.negative_doc_ids)
            for doc_id, label in labeled:
                obj = {
                    "query": pair.query_text,
                    "doc_id": doc_id,
                    "doc_text": _doc_text(collection, doc_id),
                    "label": label,
                }
                fh.write(json.dumps(obj, ensure_ascii=False, sort_keys=True) + "\n")
                records += 1
    return records


def sha256_file(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


@dataclass
class DatasetManifest:
    config: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)
    artifacts: dict = field(default_factory=dict)   # name -> {path, sha256, bytes}

    def add_artifact(self, name: str, path_as_given: str | Path) -> None:
        p = Path(path_as_given)
        self.artifacts[name] = {
            "path": Path(path_as_given).as_posix(),
            "sha256": sha256_file(p),
            "bytes": p.stat().st_size,
        }

    def to_json(self) -> str:
        obj = {"config": self.config, "counts": self.counts, "artifacts": self.artifacts}
        return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def write_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(manifest.to_json())


def load_manifest(path: str | Path) -> DatasetManifest:
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc.msg})") from exc
    for key in ("config", "counts", "artifacts"):
        if key not in obj:
            raise FormatError(f"{path}: manifest missing `{key}`")
    return DatasetManifest(config=obj["config"], counts=obj["counts"], artifacts=obj["artifacts"])
