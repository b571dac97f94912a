"""CoNLL file handling for the trainer.

The trainer exchanges data with other tools purely through files: BIO-tagged
``surface<TAB>tag`` CoNLL text and a JSON list describing the entity types.
This module owns that boundary — reading, validating, repairing, and writing —
so the rest of the package works with plain ``(surfaces, tags)`` pairs.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

#: One sentence: parallel token surfaces and BIO tags.
Sentence = tuple[list[str], list[str]]


class DataError(Exception):
    """Raised for malformed corpus files, schemas, or label mismatches."""


def bio_labels(type_names: Sequence[str]) -> list[str]:
    """The label inventory for a type set: O first, then B-/I- per type."""
    labels = ["O"]
    for name in type_names:
        labels.append(f"B-{name}")
        labels.append(f"I-{name}")
    return labels


def read_schema(path: str | Path) -> list[str]:
    """Entity type names, in declaration order, from a schema JSON file.

    The file holds a JSON list of ``{"name": ..., "domain_specific": ...}``
    entries; only the names and their order matter here.
    """
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"schema file {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, list) or not raw:
        raise DataError(f"schema file {path} must contain a non-empty JSON list")
    names: list[str] = []
    for i, entry in enumerate(raw):
        if not isinstance(entry, dict) or not isinstance(entry.get("name"), str) or not entry["name"]:
            raise DataError(f"schema file {path}: entry {i} lacks a non-empty 'name'")
        if entry["name"] in names:
            raise DataError(f"schema file {path}: duplicate type {entry['name']!r}")
        names.append(entry["name"])
    return names


def _valid_tag_shape(tag: str) -> bool:
    if tag == "O":
        return True
    return len(tag) > 2 and tag[0] in "BI" and tag[1] == "-"


def parse_conll(text: str, source: str = "<string>") -> list[Sentence]:
    """Parse ``surface<TAB>tag`` blocks separated by blank lines.

    Validates the two-column shape and the B-/I-/O tag shape; BIO transition
    validity is the caller's concern (gold inputs are expected valid, and
    predictions are repaired before writing).
    """
    sentences: list[Sentence] = []
    surfaces: list[str] = []
    tags: list[str] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            if surfaces:
                sentences.append((surfaces, tags))
                surfaces, tags = [], []
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise DataError(
                f"{source} line {lineno}: expected 'surface<TAB>tag', got {line!r}"
            )
        surface, tag = parts
        if not surface.strip():
            raise DataError(f"{source} line {lineno}: empty token surface")
        if not _valid_tag_shape(tag):
            raise DataError(f"{source} line {lineno}: malformed tag {tag!r}")
        surfaces.append(surface)
        tags.append(tag)
    if surfaces:
        sentences.append((surfaces, tags))
    return sentences


def read_conll(path: str | Path) -> list[Sentence]:
    return parse_conll(Path(path).read_text(encoding="utf-8"), source=str(path))


def serialize_conll(sentences: Sequence[Sentence]) -> str:
    """Each sentence as a ``surface<TAB>tag`` block followed by one blank line."""
    chunks: list[str] = []
    for surfaces, tags in sentences:
        for surface, tag in zip(surfaces, tags):
            chunks.append(f"{surface}\t{tag}\n")
        chunks.append("\n")
    return "".join(chunks)


def write_conll(sentences: Sequence[Sentence], path: str | Path) -> None:
    Path(path).write_text(serialize_conll(sentences), encoding="utf-8")


def repair_bio(tags: Sequence[str]) -> list[str]:
    """Coerce dangling continuations: I-X after O, start, or a different type
    becomes B-X. Already-valid sequences pass through unchanged."""
    repaired: list[str] = []
    prev_type: str | None = None
    for tag in tags:
        if tag.startswith("I-"):
            type_name = tag[2:]
            if prev_type != type_name:
                tag = f"B-{type_name}"
            prev_type = type_name
        elif tag.startswith("B-"):
            prev_type = tag[2:]
        else:
            prev_type = None
        repaired.append(tag)
    return repaired


def check_labels(sentences: Sequence[Sentence], labels: Sequence[str]) -> None:
    """Reject any tag outside the schema's label inventory."""
    allowed = set(labels)
    for i, (_, tags) in enumerate(sentences):
        for tag in tags:
            if tag not in allowed:
                raise DataError(
                    f"sentence {i}: tag {tag!r} is outside the schema's labels"
                )


def extract_spans(tags: Sequence[str]) -> list[tuple[int, int, str]]:
    """(start, end, type) spans of maximal B-/I- runs; end is exclusive."""
    spans: list[tuple[int, int, str]] = []
    i = 0
    while i < len(tags):
        if tags[i].startswith("B-"):
            type_name = tags[i][2:]
            j = i + 1
            while j < len(tags) and tags[j] == f"I-{type_name}":
                j += 1
            spans.append((i, j, type_name))
            i = j
        else:
            i += 1
    return spans


def micro_f1(
    gold: Sequence[Sentence], pred: Sequence[Sentence]
) -> tuple[float, float, float]:
    """Micro precision/recall/F1 over exact (start, end, type) span matches.

    Used internally for dev-set checkpointing; downstream evaluation is
    expected to run through the dedicated scoring tool.
    """
    if len(gold) != len(pred):
        raise DataError(f"gold has {len(gold)} sentences, pred has {len(pred)}")
    tp = fp = fn = 0
    for (g_surf, g_tags), (p_surf, p_tags) in zip(gold, pred):
        if len(g_surf) != len(p_surf):
            raise DataError("gold and pred sentences have different token counts")
        g_spans = set(extract_spans(g_tags))
        p_spans = set(extract_spans(p_tags))
        tp += len(g_spans & p_spans)
        fp += len(p_spans - g_spans)
        fn += len(g_spans - p_spans)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1
