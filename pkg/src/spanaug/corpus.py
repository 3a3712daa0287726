"""CoNLL-style corpora: label schemas, tagged sentences, BIO2 codecs, sampling.

File formats
------------
Corpus: one ``token tag`` pair per non-blank line (whitespace separated, BIO2
tags ``B-X``/``I-X``/``O``), blank line between sentences.

Schema: one line per entity type, tab separated::

    TAG<TAB>display name[<TAB>v1,v2,...]

The optional third column is an embedding vector; either every type has one
or none does. The tag doubles as the type id.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

from .errors import (
    InvalidBioTransitionError,
    MalformedLineError,
    SchemaError,
    UnknownTagError,
)
from .seeding import derive_rng

log = logging.getLogger(__name__)

# Structural symbols of the linearized form plus the escape char; banned from
# tags and display names so rendered text stays unambiguous.
_FORBIDDEN_NAME_CHARS = set("[]|\\")


@dataclass(frozen=True)
class LabelType:
    """One entity type: opaque id, BIO tag (``PER``), display name (``person``)."""

    type_id: str
    tag: str
    display_name: str


@dataclass
class LabelSchema:
    """The closed set of entity types, plus optional type embeddings."""

    entries: list[LabelType]
    embeddings: dict[str, tuple[float, ...]] | None = None

    def __post_init__(self) -> None:
        normalized = []
        for e in self.entries:
            display = " ".join(e.display_name.split())
            if not e.tag or any(c.isspace() for c in e.tag):
                raise SchemaError(f"bad tag {e.tag!r}: must be non-empty, no whitespace")
            if not display:
                raise SchemaError(f"type {e.type_id!r} has an empty display name")
            for name in (e.tag, display):
                bad = set(name) & _FORBIDDEN_NAME_CHARS
                if bad:
                    raise SchemaError(f"{name!r} contains reserved characters {sorted(bad)}")
            normalized.append(LabelType(e.type_id, e.tag, display))
        self.entries = normalized

        for key, label in (
            (lambda e: e.type_id, "type id"),
            (lambda e: e.tag.lower(), "tag"),
            (lambda e: e.display_name.lower(), "display name"),
        ):
            seen: set[str] = set()
            for e in self.entries:
                k = key(e)
                if k in seen:
                    raise SchemaError(f"duplicate {label} {k!r}")
                seen.add(k)

        if self.embeddings is not None:
            self.embeddings = {k: tuple(float(x) for x in v) for k, v in self.embeddings.items()}
            ids = {e.type_id for e in self.entries}
            if set(self.embeddings) != ids:
                raise SchemaError("embeddings must cover every type or be absent")
            dims = {len(v) for v in self.embeddings.values()}
            if len(dims) != 1 or 0 in dims:
                raise SchemaError(f"embedding dimensions differ or are zero: {sorted(dims)}")

        self._by_id = {e.type_id: e for e in self.entries}
        self._by_tag = {e.tag: e for e in self.entries}
        self._by_display = {e.display_name.lower(): e for e in self.entries}

    @property
    def type_ids(self) -> tuple[str, ...]:
        return tuple(e.type_id for e in self.entries)

    def has_type(self, type_id: str) -> bool:
        return type_id in self._by_id

    def display_of(self, type_id: str) -> str:
        return self._by_id[type_id].display_name

    def tag_of(self, type_id: str) -> str:
        return self._by_id[type_id].tag

    def type_for_tag(self, tag: str) -> LabelType:
        try:
            return self._by_tag[tag]
        except KeyError:
            raise UnknownTagError(f"entity tag {tag!r} is not in the schema") from None

    def resolve_display(self, name: str) -> LabelType | None:
        """Case-insensitive, whitespace-normalized display name lookup."""
        return self._by_display.get(" ".join(name.split()).lower())

    def embedding(self, type_id: str) -> tuple[float, ...] | None:
        if self.embeddings is None:
            return None
        return self.embeddings.get(type_id)


@dataclass(frozen=True, order=True)
class EntitySpan:
    """Half-open token span [start, end) labeled with a type id."""

    start: int
    end: int
    type_id: str


@dataclass
class TaggedSentence:
    """Tokens plus non-overlapping, sorted entity spans."""

    sentence_id: str
    tokens: list[str]
    spans: list[EntitySpan]

    def __post_init__(self) -> None:
        if not self.tokens:
            raise ValueError(f"sentence {self.sentence_id!r} has no tokens")
        for tok in self.tokens:
            if not tok or any(c.isspace() for c in tok):
                raise ValueError(f"bad token {tok!r}: tokens are non-empty and whitespace-free")
        self.spans = sorted(self.spans)
        prev_end = 0
        for sp in self.spans:
            if not (0 <= sp.start < sp.end <= len(self.tokens)):
                raise ValueError(f"span {sp} out of bounds for {len(self.tokens)} tokens")
            if sp.start < prev_end:
                raise ValueError(f"span {sp} overlaps a previous span")
            if not sp.type_id:
                raise ValueError("span with empty type id")
            prev_end = sp.end

    def span_types(self) -> list[str]:
        return [sp.type_id for sp in self.spans]


@dataclass
class Dataset:
    """A schema and the sentences tagged against it."""

    schema: LabelSchema
    sentences: list[TaggedSentence]

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for s in self.sentences:
            if s.sentence_id in seen:
                raise ValueError(f"duplicate sentence id {s.sentence_id!r}")
            seen.add(s.sentence_id)
            for sp in s.spans:
                if not self.schema.has_type(sp.type_id):
                    raise SchemaError(
                        f"sentence {s.sentence_id!r} uses type {sp.type_id!r} not in schema"
                    )

    def __len__(self) -> int:
        return len(self.sentences)


# --- BIO2 parsing / emission --------------------------------------------------

def _decode_bio(tags: list[tuple[str, int]], schema: LabelSchema, mode: str) -> list[EntitySpan]:
    spans: list[EntitySpan] = []
    open_start: int | None = None
    open_type: str | None = None

    def close(end: int) -> None:
        nonlocal open_start, open_type
        if open_start is not None:
            spans.append(EntitySpan(open_start, end, open_type))
            open_start = open_type = None

    for i, (tag, lineno) in enumerate(tags):
        if tag == "O":
            close(i)
        elif tag.startswith("B-") or tag.startswith("I-"):
            entry = schema.type_for_tag(tag[2:])
            if tag.startswith("B-"):
                close(i)
                open_start, open_type = i, entry.type_id
            elif open_type == entry.type_id and open_start is not None:
                pass  # continue the open span
            elif mode == "strict":
                raise InvalidBioTransitionError(
                    f"line {lineno}: {tag} does not continue an open {entry.tag} span"
                )
            else:
                close(i)  # lenient: treat the dangling I- as B-
                open_start, open_type = i, entry.type_id
        else:
            raise MalformedLineError(f"line {lineno}: tag {tag!r} is not B-X/I-X/O")
    close(len(tags))
    return spans


def parse_conll(text: str, schema: LabelSchema, mode: str = "strict") -> Dataset:
    """Parse two-column BIO2 text. ``mode`` is ``strict`` or ``lenient``."""
    if mode not in ("strict", "lenient"):
        raise ValueError(f"unknown parse mode {mode!r}")
    sentences: list[TaggedSentence] = []
    tokens: list[str] = []
    tags: list[tuple[str, int]] = []

    def flush() -> None:
        if tokens:
            spans = _decode_bio(tags, schema, mode)
            sentences.append(TaggedSentence(str(len(sentences)), list(tokens), spans))
            tokens.clear()
            tags.clear()

    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            flush()
            continue
        parts = line.split()
        if len(parts) != 2:
            raise MalformedLineError(f"line {lineno}: expected 'token tag', got {raw!r}")
        tokens.append(parts[0])
        tags.append((parts[1], lineno))
    flush()
    return Dataset(schema, sentences)


def bio_tags(sentence: TaggedSentence, schema: LabelSchema) -> list[str]:
    """Per-token BIO2 tags for a sentence."""
    tags = ["O"] * len(sentence.tokens)
    for sp in sentence.spans:
        tag = schema.tag_of(sp.type_id)
        tags[sp.start] = f"B-{tag}"
        for i in range(sp.start + 1, sp.end):
            tags[i] = f"I-{tag}"
    return tags


def emit_conll(dataset: Dataset) -> str:
    """Inverse of :func:`parse_conll` on valid inputs."""
    blocks = []
    for s in dataset.sentences:
        pairs = zip(s.tokens, bio_tags(s, dataset.schema))
        blocks.append("\n".join(f"{tok} {tag}" for tok, tag in pairs))
    return "\n\n".join(blocks) + ("\n" if blocks else "")


# --- schema file IO -----------------------------------------------------------

def parse_schema(text: str) -> LabelSchema:
    entries: list[LabelType] = []
    vectors: dict[str, tuple[float, ...]] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        if not raw.strip():
            continue
        cols = raw.split("\t")
        if len(cols) not in (2, 3):
            raise SchemaError(f"schema line {lineno}: expected 2 or 3 tab-separated columns")
        tag, display = cols[0].strip(), cols[1].strip()
        entries.append(LabelType(type_id=tag, tag=tag, display_name=display))
        if len(cols) == 3:
            try:
                vectors[tag] = tuple(float(x) for x in cols[2].split(","))
            except ValueError as e:
                raise SchemaError(f"schema line {lineno}: bad embedding: {e}") from None
    if vectors and len(vectors) != len(entries):
        raise SchemaError("schema embeddings must cover every type or none")
    return LabelSchema(entries, vectors or None)


def load_schema(path: str | Path) -> LabelSchema:
    return parse_schema(Path(path).read_text(encoding="utf-8"))


def load_corpus(path: str | Path, schema: LabelSchema, mode: str = "strict") -> Dataset:
    return parse_conll(Path(path).read_text(encoding="utf-8"), schema, mode)


def save_corpus(dataset: Dataset, path: str | Path) -> None:
    Path(path).write_text(emit_conll(dataset), encoding="utf-8")


# --- JSON records (wire / artifact format) -------------------------------------

def sentence_to_record(s: TaggedSentence) -> dict:
    return {
        "id": s.sentence_id,
        "tokens": list(s.tokens),
        "spans": [{"start": sp.start, "end": sp.end, "type": sp.type_id} for sp in s.spans],
    }


def sentence_from_record(rec: dict) -> TaggedSentence:
    return TaggedSentence(
        sentence_id=rec["id"],
        tokens=list(rec["tokens"]),
        spans=[EntitySpan(sp["start"], sp["end"], sp["type"]) for sp in rec["spans"]],
    )


def schema_to_record(schema: LabelSchema) -> dict:
    rec: dict = {
        "types": [
            {"id": e.type_id, "tag": e.tag, "display_name": e.display_name}
            for e in schema.entries
        ]
    }
    if schema.embeddings is not None:
        rec["embeddings"] = {k: list(v) for k, v in schema.embeddings.items()}
    return rec


def schema_from_record(rec: dict) -> LabelSchema:
    entries = [LabelType(t["id"], t["tag"], t["display_name"]) for t in rec["types"]]
    emb = rec.get("embeddings")
    return LabelSchema(entries, {k: tuple(v) for k, v in emb.items()} if emb else None)


# --- few-shot sampling ----------------------------------------------------------

def sample_shots(dataset: Dataset, shots: int, seed: int) -> tuple[Dataset, Dataset]:
    """Select about ``shots`` sentences per entity type.

    Types are visited in schema order; sentences already selected for earlier
    types count toward later types' quotas, then the quota is topped up from a
    per-type seeded shuffle of the remaining candidates. Returns
    (selected, rest); both preserve corpus order and together partition the
    input. Types with too few candidate sentences log a warning and keep what
    exists.
    """
    if shots < 1:
        raise ValueError("shots must be >= 1")
    by_type: dict[str, list[TaggedSentence]] = {t: [] for t in dataset.schema.type_ids}
    for s in dataset.sentences:
        for t in sorted({sp.type_id for sp in s.spans}):
            by_type[t].append(s)

    selected: set[str] = set()
    for entry in dataset.schema.entries:
        pool = by_type[entry.type_id]
        have = sum(1 for s in pool if s.sentence_id in selected)
        need = shots - have
        if need <= 0:
            continue
        candidates = [s for s in pool if s.sentence_id not in selected]
        rng = derive_rng(seed, "sample_shots", entry.type_id)
        rng.shuffle(candidates)
        take = candidates[:need]
        if len(take) < need:
            log.warning(
                "type %s: requested %d sentences, corpus only supports %d",
                entry.tag, shots, have + len(take),
            )
        selected.update(s.sentence_id for s in take)

    picked = [s for s in dataset.sentences if s.sentence_id in selected]
    rest = [s for s in dataset.sentences if s.sentence_id not in selected]
    return Dataset(dataset.schema, picked), Dataset(dataset.schema, rest)
