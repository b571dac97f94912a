"""Data model and bit-exact I/O for BIO-tagged corpora.

The on-disk format is token-per-line CoNLL: ``surface<TAB>tag``, sentences
separated by exactly one blank line, UTF-8. Schemas live in a flat JSON list
of ``{"name": ..., "domain_specific": ...}`` entries.

All types are immutable after construction and safe to share across threads;
every operation here is a pure function.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

ORIGIN_SEED = "seed"
ORIGIN_GENERATED = "generated"
_ORIGINS = (ORIGIN_SEED, ORIGIN_GENERATED)


class CorpusError(ValueError):
    """Malformed corpus data: bad line, invalid BIO transition, unknown type.

    ``line`` carries the 1-based line number of the first violation when the
    error originates from a file or text stream.
    """

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


@dataclass(frozen=True)
class EntityType:
    name: str
    domain_specific: bool = False

    def __post_init__(self):
        if not self.name:
            raise CorpusError("entity type name must be non-empty")


@dataclass(frozen=True)
class EntitySchema:
    """The ordered entity-type set; order is the canonical reporting order."""

    types: tuple[EntityType, ...]

    def __post_init__(self):
        if not self.types:
            raise CorpusError("schema must declare at least one entity type")
        names = [t.name for t in self.types]
        if len(set(names)) != len(names):
            raise CorpusError(f"duplicate entity type names in schema: {names}")
        if not any(t.domain_specific for t in self.types):
            warnings.warn("schema declares no domain-specific entity type", stacklevel=2)

    def names(self) -> list[str]:
        return [t.name for t in self.types]

    def domain_specific_names(self) -> list[str]:
        return [t.name for t in self.types if t.domain_specific]

    def __contains__(self, name: str) -> bool:
        return any(t.name == name for t in self.types)

    def get(self, name: str) -> EntityType:
        for t in self.types:
            if t.name == name:
                return t
        raise KeyError(name)


@dataclass(frozen=True)
class Token:
    surface: str
    tag: str

    def __post_init__(self):
        if not self.surface or any(ch.isspace() for ch in self.surface):
            raise CorpusError(f"token surface must be non-empty and whitespace-free: {self.surface!r}")
        if not _tag_shape_ok(self.tag):
            raise CorpusError(f"tag must be 'O', 'B-<type>' or 'I-<type>': {self.tag!r}")


@dataclass(frozen=True)
class EntitySpan:
    """Token-index span, ``end`` exclusive; ``surface`` is the space-joined text."""

    start: int
    end: int
    type: str
    surface: str


@dataclass(frozen=True)
class TaggedSentence:
    tokens: tuple[Token, ...]
    origin: str = ORIGIN_SEED
    meta: str | None = None

    def __post_init__(self):
        if not self.tokens:
            raise CorpusError("sentence must contain at least one token")
        if self.origin not in _ORIGINS:
            raise CorpusError(f"origin must be one of {_ORIGINS}: {self.origin!r}")
        validate_bio([t.tag for t in self.tokens])

    def surfaces(self) -> list[str]:
        return [t.surface for t in self.tokens]

    def tags(self) -> list[str]:
        return [t.tag for t in self.tokens]

    def text(self) -> str:
        return " ".join(t.surface for t in self.tokens)

    def key(self) -> tuple[tuple[str, str], ...]:
        """Dedup key: exact token-and-tag sequence, ignoring provenance."""
        return tuple((t.surface, t.tag) for t in self.tokens)

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class Corpus:
    schema: EntitySchema
    sentences: tuple[TaggedSentence, ...]

    def __post_init__(self):
        known = set(self.schema.names())
        for i, sent in enumerate(self.sentences):
            for j, tok in enumerate(sent.tokens):
                t = _tag_type(tok.tag)
                if t is not None and t not in known:
                    raise CorpusError(
                        f"sentence {i}, token {j}: entity type {t!r} not in schema"
                    )

    def __len__(self) -> int:
        return len(self.sentences)

    def __iter__(self) -> Iterator[TaggedSentence]:
        return iter(self.sentences)

    def with_sentences(self, sentences: Iterable[TaggedSentence]) -> Corpus:
        return Corpus(self.schema, tuple(sentences))


def _tag_shape_ok(tag: str) -> bool:
    if tag == "O":
        return True
    return len(tag) > 2 and tag[0] in "BI" and tag[1] == "-"


def _tag_type(tag: str) -> str | None:
    return None if tag == "O" else tag[2:]


def bio_transition_ok(prev: str | None, tag: str) -> bool:
    """Whether ``tag`` may follow ``prev`` (``None`` = sentence start).

    The only illegal move is I-X after anything that is not B-X or I-X.
    """
    if not tag.startswith("I-"):
        return True
    if prev is None or prev == "O":
        return False
    return _tag_type(prev) == _tag_type(tag)


def validate_bio(tags: Sequence[str]) -> None:
    """Raise :class:`CorpusError` at the first invalid tag or transition."""
    prev: str | None = None
    for i, tag in enumerate(tags):
        if not _tag_shape_ok(tag):
            raise CorpusError(f"token {i}: malformed tag {tag!r}")
        if not bio_transition_ok(prev, tag):
            raise CorpusError(f"token {i}: invalid BIO transition {prev!r} -> {tag!r}")
        prev = tag


def repair_bio(tags: Sequence[str]) -> list[str]:
    """Coerce every dangling I-X (after O, start, or a different type) to B-X."""
    repaired: list[str] = []
    prev: str | None = None
    for tag in tags:
        if not _tag_shape_ok(tag):
            raise CorpusError(f"malformed tag {tag!r} cannot be repaired")
        if not bio_transition_ok(prev, tag):
            tag = "B-" + _tag_type(tag)
        repaired.append(tag)
        prev = tag
    return repaired


def extract_spans(sentence: TaggedSentence) -> list[EntitySpan]:
    """Entity spans of a sentence, non-overlapping and sorted by start."""
    spans: list[EntitySpan] = []
    surfaces = sentence.surfaces()
    start: int | None = None
    current: str | None = None

    def close(end: int) -> None:
        nonlocal start, current
        if start is not None:
            spans.append(
                EntitySpan(start, end, current, " ".join(surfaces[start:end]))
            )
        start, current = None, None

    for i, tok in enumerate(sentence.tokens):
        if tok.tag == "O":
            close(i)
        elif tok.tag.startswith("B-"):
            close(i)
            start, current = i, _tag_type(tok.tag)
        # I-<type>: continuation; sentence invariants already guarantee validity
    close(len(sentence.tokens))
    return spans


def spans_to_bio(
    surfaces: Sequence[str],
    spans: Sequence[EntitySpan],
    origin: str = ORIGIN_SEED,
    meta: str | None = None,
) -> TaggedSentence:
    """Inverse of :func:`extract_spans`: build a tagged sentence from spans.

    Raises :class:`CorpusError` on overlapping spans or out-of-range indices.
    """
    tags = ["O"] * len(surfaces)
    for span in sorted(spans, key=lambda s: s.start):
        if not (0 <= span.start < span.end <= len(surfaces)):
            raise CorpusError(
                f"span ({span.start}, {span.end}) out of range for {len(surfaces)} tokens"
            )
        if any(tags[i] != "O" for i in range(span.start, span.end)):
            raise CorpusError(f"span ({span.start}, {span.end}, {span.type}) overlaps another span")
        tags[span.start] = "B-" + span.type
        for i in range(span.start + 1, span.end):
            tags[i] = "I-" + span.type
    tokens = tuple(Token(s, t) for s, t in zip(surfaces, tags))
    return TaggedSentence(tokens, origin=origin, meta=meta)


def entity_type_counts(corpus: Corpus) -> dict[str, int]:
    """Mention counts per entity type, zero-filled over the whole schema."""
    counts = {name: 0 for name in corpus.schema.names()}
    for sentence in corpus.sentences:
        for span in extract_spans(sentence):
            counts[span.type] += 1
    return counts


# ---------------------------------------------------------------------------
# CoNLL parsing / serialization


def parse_conll(
    text: str | bytes,
    schema: EntitySchema | None = None,
    mode: str = "strict",
) -> Corpus:
    """Parse token-per-line CoNLL text into a validated :class:`Corpus`.

    ``mode="strict"`` rejects invalid BIO transitions and empty sentences
    (consecutive blank lines); ``mode="repair"`` coerces dangling I-X tags to
    B-X and skips stray blank lines. When ``schema`` is None it is inferred
    from the tags (all types non-domain-specific).
    """
    if mode not in ("strict", "repair"):
        raise ValueError(f"mode must be 'strict' or 'repair': {mode!r}")
    if isinstance(text, bytes):
        text = text.decode("utf-8")

    known = set(schema.names()) if schema is not None else None
    seen_types: list[str] = []
    sentences: list[TaggedSentence] = []
    pending: list[Token] = []
    prev_tag: str | None = None

    def flush() -> None:
        nonlocal pending, prev_tag
        if pending:
            sentences.append(TaggedSentence(tuple(pending)))
            pending = []
        prev_tag = None

    lines = text.split("\n")
    # A trailing newline yields one final empty chunk; it is not a blank line.
    if lines and lines[-1] == "":
        lines.pop()

    for lineno, raw in enumerate(lines, start=1):
        line = raw.rstrip("\r")
        if line.strip() == "":
            if not pending and mode == "strict":
                raise CorpusError(
                    "blank line without a preceding sentence (empty sentence)", line=lineno
                )
            flush()
            continue

        fields = line.split("\t")
        if len(fields) != 2:
            raise CorpusError(
                f"expected 'surface<TAB>tag', got {len(fields)} field(s): {line!r}",
                line=lineno,
            )
        surface, tag = fields
        if not surface or any(ch.isspace() for ch in surface):
            raise CorpusError(f"bad token surface {surface!r}", line=lineno)
        if not _tag_shape_ok(tag):
            raise CorpusError(f"malformed tag {tag!r}", line=lineno)

        tag_type = _tag_type(tag)
        if tag_type is not None:
            if known is not None:
                if tag_type not in known:
                    raise CorpusError(f"unknown entity type {tag_type!r}", line=lineno)
            elif tag_type not in seen_types:
                seen_types.append(tag_type)

        if not bio_transition_ok(prev_tag, tag):
            if mode == "strict":
                raise CorpusError(
                    f"invalid BIO transition {prev_tag!r} -> {tag!r}", line=lineno
                )
            tag = "B-" + tag_type
        pending.append(Token(surface, tag))
        prev_tag = tag

    flush()

    if schema is None:
        if not seen_types:
            raise CorpusError("cannot infer a schema without entity tags; pass one explicitly")
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")  # inferred types carry no domain flags
            schema = EntitySchema(tuple(EntityType(n) for n in seen_types))
        warnings.warn(
            "schema inferred from tags; domain_specific flags default to False", stacklevel=2
        )
    return Corpus(schema, tuple(sentences))


def serialize_conll(corpus: Corpus) -> str:
    """Serialize a corpus; ``parse_conll(serialize_conll(c))`` reproduces ``c``.

    Each sentence is a block of ``surface<TAB>tag`` lines followed by exactly
    one blank line; an empty corpus serializes to the empty string.
    """
    chunks: list[str] = []
    for sentence in corpus.sentences:
        for tok in sentence.tokens:
            chunks.append(f"{tok.surface}\t{tok.tag}\n")
        chunks.append("\n")
    return "".join(chunks)


def load_conll(path: str | Path, schema: EntitySchema | None = None, mode: str = "strict") -> Corpus:
    return parse_conll(Path(path).read_bytes(), schema=schema, mode=mode)


def save_conll(corpus: Corpus, path: str | Path) -> None:
    Path(path).write_text(serialize_conll(corpus), encoding="utf-8")


# ---------------------------------------------------------------------------
# Schema files


def schema_to_json(schema: EntitySchema) -> str:
    entries = [{"name": t.name, "domain_specific": t.domain_specific} for t in schema.types]
    return json.dumps(entries, indent=2) + "\n"


def schema_from_json(text: str | bytes) -> EntitySchema:
    try:
        entries = json.loads(text)
    except json.JSONDecodeError as err:
        raise CorpusError(f"schema file is not valid JSON: {err}") from err
    if not isinstance(entries, list):
        raise CorpusError("schema file must contain a JSON list")
    types = []
    for entry in entries:
        if isinstance(entry, str):
            types.append(EntityType(entry))
        elif isinstance(entry, dict) and "name" in entry:
            types.append(EntityType(entry["name"], bool(entry.get("domain_specific", False))))
        else:
            raise CorpusError(f"bad schema entry: {entry!r}")
    return EntitySchema(tuple(types))


def load_schema(path: str | Path) -> EntitySchema:
    return schema_from_json(Path(path).read_bytes())


def save_schema(schema: EntitySchema, path: str | Path) -> None:
    Path(path).write_text(schema_to_json(schema), encoding="utf-8")
