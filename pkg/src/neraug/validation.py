"""Input validation helpers shared by the estimator classes.

These play the role scikit-learn's ``check_array`` plays for numeric data:
each accepts the loose things callers actually pass (a Corpus, a list of
sentences, a schema in several spellings) and returns the canonical type or
raises with a precise message.
"""
from __future__ import annotations

from typing import Any, Iterable

from .corpus import (
    Corpus,
    CorpusError,
    EntitySchema,
    EntityType,
    TaggedSentence,
)


def check_schema(schema: Any) -> EntitySchema:
    """Coerce ``schema`` to an :class:`EntitySchema`.

    Accepts an EntitySchema, or an iterable of EntityType / ``(name,
    domain_specific)`` pairs / ``{"name": ..., "domain_specific": ...}``
    dicts / bare names.
    """
    if isinstance(schema, EntitySchema):
        return schema
    if isinstance(schema, (str, bytes)) or not isinstance(schema, Iterable):
        raise CorpusError(f"cannot interpret {type(schema).__name__} as a schema")
    types: list[EntityType] = []
    for entry in schema:
        if isinstance(entry, EntityType):
            types.append(entry)
        elif isinstance(entry, str):
            types.append(EntityType(entry))
        elif isinstance(entry, dict) and "name" in entry:
            types.append(EntityType(entry["name"], bool(entry.get("domain_specific", False))))
        elif isinstance(entry, tuple) and len(entry) == 2:
            types.append(EntityType(entry[0], bool(entry[1])))
        else:
            raise CorpusError(f"bad schema entry: {entry!r}")
    return EntitySchema(tuple(types))


def check_corpus(X: Any, schema: Any | None = None) -> Corpus:
    """Coerce ``X`` to a validated :class:`Corpus`.

    ``X`` may already be a Corpus (re-validated against ``schema`` when one is
    given) or any iterable of :class:`TaggedSentence`, in which case a schema
    is required.
    """
    if isinstance(X, Corpus):
        if schema is None:
            return X
        return Corpus(check_schema(schema), X.sentences)
    if isinstance(X, TaggedSentence):
        raise CorpusError("expected a corpus, got a single sentence; wrap it in a list")
    if not isinstance(X, Iterable):
        raise CorpusError(f"cannot interpret {type(X).__name__} as a corpus")
    sentences = tuple(X)
    for s in sentences:
        if not isinstance(s, TaggedSentence):
            raise CorpusError(f"corpus elements must be TaggedSentence, got {type(s).__name__}")
    if schema is None:
        raise CorpusError("a schema is required when passing bare sentences")
    return Corpus(check_schema(schema), sentences)


def check_aligned(gold: Corpus, pred: Corpus) -> None:
    """Require sentence-by-sentence, token-by-token surface alignment.

    Evaluation compares span sets per sentence index, which is meaningless if
    the two corpora disagree on tokenization; the error names the first
    offending sentence.
    """
    if len(gold) != len(pred):
        raise CorpusError(
            f"corpora are not aligned: {len(gold)} gold sentences vs {len(pred)} predicted"
        )
    for i, (g, p) in enumerate(zip(gold.sentences, pred.sentences)):
        if g.surfaces() != p.surfaces():
            raise CorpusError(
                f"sentence {i}: token surfaces differ between gold and predicted"
            )


def check_fitted(estimator: Any, attributes: Iterable[str]) -> None:
    missing = [a for a in attributes if not hasattr(estimator, a)]
    if missing:
        raise RuntimeError(
            f"{type(estimator).__name__} is not fitted yet; call fit() first "
            f"(missing {', '.join(missing)})"
        )
