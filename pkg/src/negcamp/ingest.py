"""Loading and indexing of corpora, gold-standard labels, and party metadata.

Corpus records that fail validation are skipped and reported with their line
number instead of aborting the run, so large ingestions stay resumable and
auditable. Gold and party-metadata files are small curated inputs and raise
on the first invalid row.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Iterable, Iterator, Mapping

from .codes import ISO_COUNTRIES, ISO_LANGUAGES, PARTY_FAMILIES
from .errors import IngestError

logger = logging.getLogger(__name__)

# JSONL / CSV column names of a corpus record, in canonical order.
DOCUMENT_FIELDS = ("id", "text", "lang", "country", "author", "party", "created_at", "retweet")

GOLD_HEADER = ("doc_id", "coder_id", "label")
PARTY_META_HEADER = ("party_id", "country", "lrgen", "govt", "antielite_salience", "family", "name")


@dataclass(frozen=True)
class Document:
    """One political message. An empty ``party_id`` marks an independent."""

    id: str
    text: str
    language: str
    country: str
    author_id: str
    party_id: str
    created_at: str
    is_retweet: bool


@dataclass(frozen=True)
class GoldLabel:
    doc_id: str
    coder_id: str
    label: int


@dataclass(frozen=True)
class PartyMeta:
    party_id: str
    country: str
    lrgen: float
    govt: int
    antielite_salience: float
    family: str
    display_name: str


@dataclass(frozen=True)
class Rejection:
    """A skipped corpus record: source line number plus the reason."""

    line: int
    reason: str
    doc_id: str = ""


class Corpus:
    """Immutable document collection, iterated in id order.

    Indices map each document to exactly one key: ``by_id`` on the unique id,
    ``by_party`` on ``party_id`` (independents under ``""``), ``by_country``
    on the country code.
    """

    def __init__(self, documents: Iterable[Document]):
        docs = sorted(documents, key=lambda d: d.id)
        by_id: dict[str, Document] = {}
        by_party: dict[str, list[Document]] = {}
        by_country: dict[str, list[Document]] = {}
        for doc in docs:
            if doc.id in by_id:
                raise IngestError(f"duplicate document id {doc.id!r} in corpus")
            by_id[doc.id] = doc
            by_party.setdefault(doc.party_id, []).append(doc)
            by_country.setdefault(doc.country, []).append(doc)
        self._documents: tuple[Document, ...] = tuple(docs)
        self.by_id: Mapping[str, Document] = by_id
        self.by_party: Mapping[str, tuple[Document, ...]] = {k: tuple(v) for k, v in by_party.items()}
        self.by_country: Mapping[str, tuple[Document, ...]] = {k: tuple(v) for k, v in by_country.items()}

    def __iter__(self) -> Iterator[Document]:
        return iter(self._documents)

    def __len__(self) -> int:
        return len(self._documents)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Corpus) and self._documents == other._documents

    def __repr__(self) -> str:
        return f"Corpus({len(self)} documents, {len(self.by_country)} countries)"


@dataclass(frozen=True)
class DocumentIngest:
    """Result of a corpus ingestion: the valid documents plus the skip report."""

    corpus: Corpus
    rejections: tuple[Rejection, ...] = field(default=())


def detect_retweet(doc: Document) -> bool:
    """True iff the metadata flag is set or the text starts with ``RT @``.

    The flag is authoritative when present; the prefix rule catches corpora
    whose source database did not mark retweets. Pure function of
    ``(text, is_retweet)``.
    """
    return doc.is_retweet or doc.text.lstrip().startswith("RT @")


def _validate_timestamp(value: str) -> None:
    # RFC 3339; Python 3.10's fromisoformat lacks "Z" support.
    normalized = value[:-1] + "+00:00" if value.endswith("Z") else value
    datetime.fromisoformat(normalized)


def _parse_record(record: Mapping[str, object]) -> Document:
    missing = [k for k in DOCUMENT_FIELDS if record.get(k) is None]
    if missing:
        raise ValueError("missing fields: " + ", ".join(missing))
    text = str(record["text"])
    if not text:
        raise ValueError("empty text")
    lang = str(record["lang"])
    if lang not in ISO_LANGUAGES:
        raise ValueError(f"invalid language code {lang!r}")
    country = str(record["country"])
    if country not in ISO_COUNTRIES:
        raise ValueError(f"invalid country code {country!r}")
    created_at = str(record["created_at"])
    try:
        _validate_timestamp(created_at)
    except ValueError:
        raise ValueError(f"invalid created_at timestamp {created_at!r}") from None
    retweet = record["retweet"]
    if isinstance(retweet, str):
        if retweet.lower() not in ("true", "false"):
            raise ValueError(f"invalid retweet flag {retweet!r}")
        retweet = retweet.lower() == "true"
    elif not isinstance(retweet, bool):
        raise ValueError(f"invalid retweet flag {retweet!r}")
    return Document(
        id=str(record["id"]),
        text=text,
        language=lang,
        country=country,
        author_id=str(record["author"]),
        party_id=str(record["party"]),
        created_at=created_at,
        is_retweet=retweet,
    )


def _iter_records(path: Path, fmt: str) -> Iterator[tuple[int, Mapping[str, object] | None, str]]:
    """Yield (line_number, record_or_None, error_reason) triples."""
    if fmt == "jsonl":
        with path.open(encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    yield lineno, None, "blank line"
                    continue
                try:
                    record = json.loads(line)
                except json.JSONDecodeError as exc:
                    yield lineno, None, f"invalid JSON: {exc.msg}"
                    continue
                if not isinstance(record, dict):
                    yield lineno, None, "record is not an object"
                    continue
                yield lineno, record, ""
    elif fmt == "csv":
        with path.open(encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh)
            for lineno, row in enumerate(reader, start=2):
                yield lineno, row, ""
    else:
        raise IngestError(f"unsupported corpus format {fmt!r} (expected jsonl or csv)")


def ingest_documents(path: str | Path, fmt: str = "jsonl") -> DocumentIngest:
    """Load a corpus file, skipping invalid records.

    Duplicate ids keep the first occurrence and reject the later one. The
    rejection report cites source line numbers for every skipped record.
    """
    path = Path(path)
    if not path.is_file():
        raise IngestError(f"corpus file not found: {path}")
    documents: list[Document] = []
    seen: set[str] = set()
    rejections: list[Rejection] = []
    for lineno, record, reason in _iter_records(path, fmt):
        if record is None:
            rejections.append(Rejection(line=lineno, reason=reason))
            continue
        try:
            doc = _parse_record(record)
        except ValueError as exc:
            rejections.append(Rejection(line=lineno, reason=str(exc), doc_id=str(record.get("id", ""))))
            continue
        if doc.id in seen:
            rejections.append(Rejection(line=lineno, reason=f"duplicate id {doc.id!r}", doc_id=doc.id))
            continue
        seen.add(doc.id)
        documents.append(doc)
    return DocumentIngest(corpus=Corpus(documents), rejections=tuple(rejections))


def ingest_gold(path: str | Path) -> list[GoldLabel]:
    """Load a gold-label CSV with header ``doc_id,coder_id,label``.

    Labels must be 0 or 1 and (doc_id, coder_id) pairs unique; violations
    raise naming the offending row. Multi-coder tables are allowed.
    """
    path = Path(path)
    if not path.is_file():
        raise IngestError(f"gold file not found: {path}")
    labels: list[GoldLabel] = []
    seen: set[tuple[str, str]] = set()
    with path.open(encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != GOLD_HEADER:
            raise IngestError(f"{path.name}: expected header {','.join(GOLD_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if row.get("doc_id") is None or row.get("coder_id") is None:
                raise IngestError(f"{path.name} line {lineno}: short row")
            raw = (row["label"] or "").strip()
            if raw not in ("0", "1"):
                raise IngestError(f"{path.name} line {lineno}: non-binary label {raw!r}")
            key = (row["doc_id"], row["coder_id"])
            if key in seen:
                raise IngestError(f"{path.name} line {lineno}: duplicate (doc_id, coder_id) {key!r}")
            seen.add(key)
            labels.append(GoldLabel(doc_id=row["doc_id"], coder_id=row["coder_id"], label=int(raw)))
    return labels


def ingest_party_meta(path: str | Path) -> dict[str, PartyMeta]:
    """Load the party covariate CSV keyed by party_id."""
    path = Path(path)
    if not path.is_file():
        raise IngestError(f"party metadata file not found: {path}")
    meta: dict[str, PartyMeta] = {}
    with path.open(encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != PARTY_META_HEADER:
            raise IngestError(f"{path.name}: expected header {','.join(PARTY_META_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                record = _parse_party_row(row)
            except (ValueError, TypeError) as exc:
                raise IngestError(f"{path.name} line {lineno}: {exc}") from None
            if record.party_id in meta:
                raise IngestError(f"{path.name} line {lineno}: duplicate party_id {record.party_id!r}")
            meta[record.party_id] = record
    return meta


def _parse_party_row(row: Mapping[str, str]) -> PartyMeta:
    if any(row.get(k) is None for k in PARTY_META_HEADER):
        raise ValueError("short row")
    party_id = row["party_id"]
    if not party_id:
        raise ValueError("empty party_id")
    country = row["country"]
    if country not in ISO_COUNTRIES:
        raise ValueError(f"invalid country code {country!r}")
    lrgen = float(row["lrgen"])
    if not 0.0 <= lrgen <= 10.0:
        raise ValueError(f"lrgen {lrgen} outside [0, 10]")
    govt = int(row["govt"])
    if govt not in (0, 1):
        raise ValueError(f"govt {govt} not in {{0, 1}}")
    antielite = float(row["antielite_salience"])
    if not 0.0 <= antielite <= 10.0:
        raise ValueError(f"antielite_salience {antielite} outside [0, 10]")
    family = row["family"]
    if family not in PARTY_FAMILIES:
        raise ValueError(f"unknown party family {family!r}")
    return PartyMeta(
        party_id=party_id,
        country=country,
        lrgen=lrgen,
        govt=govt,
        antielite_salience=antielite,
        family=family,
        display_name=row["name"],
    )


def gold_label_map(
    labels: Iterable[GoldLabel], coder: str | None = None
) -> tuple[dict[str, int], int]:
    """Collapse gold labels to one label per document.

    With ``coder`` given, only that coder's labels are used. Otherwise
    documents labeled identically by all their coders are kept and
    conflicting documents are dropped; the second return value counts the
    dropped conflicts.
    """
    if coder is not None:
        return {g.doc_id: g.label for g in labels if g.coder_id == coder}, 0
    per_doc: dict[str, set[int]] = {}
    for g in labels:
        per_doc.setdefault(g.doc_id, set()).add(g.label)
    conflicts = sum(1 for v in per_doc.values() if len(v) > 1)
    if conflicts:
        logger.warning("dropping %d documents with conflicting gold labels", conflicts)
    return {d: next(iter(v)) for d, v in per_doc.items() if len(v) == 1}, conflicts
