"""Corpus ingestion: documents, concept vocabulary, mention matching and co-occurrence records."""

from __future__ import annotations

import csv
import json
import logging
import re
from collections import Counter, defaultdict
from collections.abc import Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Protocol

from .errors import InputError, MissingFileError

logger = logging.getLogger(__name__)

DOCUMENT_FIELDS: tuple[str, ...] = ("id", "year", "title", "abstract")
COOCCURRENCE_HEADER: tuple[str, ...] = ("u", "v", "year", "doc_id")

_TOKEN_SPLIT = re.compile(r"[\W_]+")
_WHITESPACE = re.compile(r"\s+")


@dataclass(frozen=True)
class Document:
    id: str
    year: int
    title: str
    abstract: str


@dataclass(frozen=True, order=True)
class CooccurrenceRecord:
    u: int
    v: int
    year: int
    doc_id: str

    def __post_init__(self) -> None:
        if self.u >= self.v:
            raise ValueError(f"co-occurrence record must satisfy u < v, got ({self.u}, {self.v})")


@dataclass
class ConceptVocab:
    """Ordered, normalised concepts and their dense node ids."""

    concepts: list[str]
    index: dict[str, int] = field(init=False)

    def __post_init__(self) -> None:
        self.index = {}
        for node_id, concept in enumerate(self.concepts):
            if concept in self.index:
                raise ValueError(f"duplicate concept after normalisation: '{concept}'")
            self.index[concept] = node_id

    def __len__(self) -> int:
        return len(self.concepts)

    @classmethod
    def from_raw(cls, raw: Iterable[str]) -> ConceptVocab:
        return cls([normalize_concept(item) for item in raw])


def normalize_concept(raw: str) -> str:
    """Lowercase, collapse internal whitespace and strip the ends."""

    return _WHITESPACE.sub(" ", raw).strip().lower()


def tokenize(text: str) -> list[str]:
    return [token for token in _TOKEN_SPLIT.split(text.lower()) if token]


def load_corpus(path: Path) -> list[Document]:
    """Read a JSON-lines corpus; blank lines are ignored."""

    path = Path(path)
    if not path.exists():
        raise MissingFileError(f"corpus file not found: {path}", path=str(path))

    documents: list[Document] = []
    seen: dict[str, int] = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                payload = json.loads(line)
            except json.JSONDecodeError as exc:
                raise InputError(f"malformed record at line {line_no}: {exc.msg}", path=str(path), line=line_no) from exc
            if not isinstance(payload, dict):
                raise InputError(f"malformed record at line {line_no}: expected a JSON object", path=str(path), line=line_no)
            for name in DOCUMENT_FIELDS:
                if name not in payload:
                    raise InputError(f"missing field '{name}' at line {line_no}", path=str(path), line=line_no, field=name)

            year = payload["year"]
            if isinstance(year, bool) or not isinstance(year, int):
                raise InputError(f"field 'year' must be an integer at line {line_no}", path=str(path), line=line_no, field="year")
            for name in ("id", "title", "abstract"):
                if not isinstance(payload[name], str):
                    raise InputError(f"field '{name}' must be a string at line {line_no}", path=str(path), line=line_no, field=name)

            doc_id = payload["id"]
            if doc_id in seen:
                raise InputError(
                    f"duplicate document id '{doc_id}' at line {line_no} (first seen at line {seen[doc_id]})",
                    path=str(path),
                    line=line_no,
                    field="id",
                )
            seen[doc_id] = line_no
            documents.append(Document(id=doc_id, year=year, title=payload["title"], abstract=payload["abstract"]))

    logger.info("Loaded %d documents from %s", len(documents), path)
    return documents


def load_vocab(path: Path) -> ConceptVocab:
    """Read one concept per line; concepts are normalised on load."""

    path = Path(path)
    if not path.exists():
        raise MissingFileError(f"vocabulary file not found: {path}", path=str(path))

    concepts: list[str] = []
    first_line: dict[str, int] = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            concept = normalize_concept(line)
            if not concept:
                continue
            if concept in first_line:
                raise InputError(
                    f"duplicate concept '{concept}' at line {line_no} (first at line {first_line[concept]})",
                    path=str(path),
                    line=line_no,
                )
            first_line[concept] = line_no
            concepts.append(concept)

    logger.info("Loaded %d concepts from %s", len(concepts), path)
    return ConceptVocab(concepts)


def filter_years(docs: Sequence[Document], min_year: int | None, max_year: int | None) -> list[Document]:
    kept = [
        doc
        for doc in docs
        if (min_year is None or doc.year >= min_year) and (max_year is None or doc.year <= max_year)
    ]
    skipped = len(docs) - len(kept)
    if skipped:
        logger.info("Skipped %d documents outside the year window [%s, %s]", skipped, min_year, max_year)
    return kept


class ConceptMatcher(Protocol):
    def match(self, doc: Document) -> set[int]: ...


class PhraseMatcher:
    """Case-insensitive whole-token phrase matching; no stemming or plural folding.

    Title and abstract are matched separately so a phrase never spans the two.
    """

    def __init__(self, vocab: ConceptVocab):
        if not len(vocab):
            raise ValueError("concept vocabulary is empty")
        self._by_head: dict[str, list[tuple[tuple[str, ...], int]]] = defaultdict(list)
        for concept, node_id in vocab.index.items():
            tokens = tuple(tokenize(concept))
            if tokens:
                self._by_head[tokens[0]].append((tokens, node_id))

    def _match_tokens(self, tokens: list[str]) -> set[int]:
        found: set[int] = set()
        for start, token in enumerate(tokens):
            for phrase, node_id in self._by_head.get(token, ()):
                if tuple(tokens[start : start + len(phrase)]) == phrase:
                    found.add(node_id)
        return found

    def match(self, doc: Document) -> set[int]:
        return self._match_tokens(tokenize(doc.title)) | self._match_tokens(tokenize(doc.abstract))


def match_concepts(doc: Document, vocab: ConceptVocab) -> set[int]:
    return PhraseMatcher(vocab).match(doc)


def _pairs_for(doc: Document, matched: set[int]) -> list[CooccurrenceRecord]:
    return [CooccurrenceRecord(u, v, doc.year, doc.id) for u, v in combinations(sorted(matched), 2)]


def extract_cooccurrences(
    docs: Sequence[Document],
    vocab: ConceptVocab,
    *,
    matcher: ConceptMatcher | None = None,
    workers: int = 1,
) -> list[CooccurrenceRecord]:
    """Emit every unordered concept pair per document with at least two matches.

    A pair mentioned several times in one document counts once. The result is
    sorted canonically, so it does not depend on document order or worker count.
    """

    matcher = matcher or PhraseMatcher(vocab)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            matches = list(pool.map(matcher.match, docs))
    else:
        matches = [matcher.match(doc) for doc in docs]

    records: list[CooccurrenceRecord] = []
    contributing = 0
    for doc, matched in zip(docs, matches):
        if len(matched) < 2:
            continue
        contributing += 1
        records.extend(_pairs_for(doc, matched))
    records.sort()
    logger.info("Extracted %d co-occurrence records from %d contributing documents", len(records), contributing)
    return records


def write_cooccurrences(records: Iterable[CooccurrenceRecord], path: Path) -> int:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        writer.writerow(COOCCURRENCE_HEADER)
        for record in records:
            writer.writerow((record.u, record.v, record.year, record.doc_id))
            count += 1
    return count


def read_cooccurrences(path: Path) -> list[CooccurrenceRecord]:
    path = Path(path)
    if not path.exists():
        raise MissingFileError(f"co-occurrence file not found: {path}", path=str(path))
    records: list[CooccurrenceRecord] = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, delimiter="\t")
        header = next(reader, None)
        if header is None:
            return records
        if tuple(header) != COOCCURRENCE_HEADER:
            raise InputError(f"unexpected header in {path}: {header}", path=str(path), line=1)
        for line_no, row in enumerate(reader, start=2):
            try:
                u, v, year, doc_id = row
                records.append(CooccurrenceRecord(int(u), int(v), int(year), doc_id))
            except ValueError as exc:
                raise InputError(f"malformed co-occurrence row at line {line_no}: {exc}", path=str(path), line=line_no) from exc
    return records


@dataclass
class CorpusStats:
    documents: int
    contributing_per_year: dict[int, int]
    mention_counts: dict[str, int]
    top_pairs: list[tuple[str, str, int]]

    @property
    def contributing(self) -> int:
        return sum(self.contributing_per_year.values())

    def to_dict(self) -> dict:
        return {
            "documents": self.documents,
            "contributing": self.contributing,
            "contributing_per_year": {str(year): n for year, n in sorted(self.contributing_per_year.items())},
            "mention_counts": self.mention_counts,
            "top_pairs": [list(pair) for pair in self.top_pairs],
        }

    def to_markdown(self) -> str:
        lines = ["| year | contributing documents |", "|---|---|"]
        for year, n in sorted(self.contributing_per_year.items()):
            lines.append(f"| {year} | {n:,} |")
        lines.append(f"| **total** | **{self.contributing:,}** |")
        if self.top_pairs:
            lines += ["", "| concept | concept | documents |", "|---|---|---|"]
            lines += [f"| {a} | {b} | {n:,} |" for a, b, n in self.top_pairs]
        return "\n".join(lines) + "\n"


def corpus_statistics(
    docs: Sequence[Document],
    vocab: ConceptVocab,
    *,
    matcher: ConceptMatcher | None = None,
    top_k: int = 20,
) -> CorpusStats:
    """Per-year counts of documents that mention at least a pair of concepts."""

    matcher = matcher or PhraseMatcher(vocab)
    per_year: Counter[int] = Counter()
    mentions: Counter[str] = Counter()
    pairs: Counter[tuple[int, int]] = Counter()
    for doc in docs:
        matched = matcher.match(doc)
        for node_id in matched:
            mentions[vocab.concepts[node_id]] += 1
        if len(matched) < 2:
            continue
        per_year[doc.year] += 1
        pairs.update(combinations(sorted(matched), 2))

    top = sorted(pairs.items(), key=lambda item: (-item[1], item[0]))[:top_k]
    return CorpusStats(
        documents=len(docs),
        contributing_per_year=dict(per_year),
        mention_counts=dict(sorted(mentions.items(), key=lambda item: (-item[1], item[0]))),
        top_pairs=[(vocab.concepts[u], vocab.concepts[v], n) for (u, v), n in top],
    )
