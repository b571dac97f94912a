"""Shared fixtures and random-data generators for the test suite.

The generators here build corpora by constructing tag lists directly (never
through the library's span<->tag converters), so round-trip and oracle tests
compare genuinely independent code paths.
"""
from __future__ import annotations

import random
import string

import pytest

from neraug.corpus import (
    Corpus,
    EntitySchema,
    EntityType,
    TaggedSentence,
    Token,
)


def make_schema(n_types: int, n_domain: int | None = None, rng: random.Random | None = None) -> EntitySchema:
    """Schema with types t0..t{n-1}; the first ``n_domain`` are domain-specific."""
    if n_domain is None:
        n_domain = max(1, n_types // 2)
    return EntitySchema(
        tuple(EntityType(f"t{i}", domain_specific=i < n_domain) for i in range(n_types))
    )


def random_tags(rng: random.Random, n_tokens: int, type_names: list[str], span_density: float = 0.35) -> list[str]:
    """A valid BIO tag list built by direct construction."""
    tags = ["O"] * n_tokens
    i = 0
    while i < n_tokens:
        if rng.random() < span_density:
            name = rng.choice(type_names)
            length = min(rng.randint(1, 3), n_tokens - i)
            tags[i] = f"B-{name}"
            for j in range(i + 1, i + length):
                tags[j] = f"I-{name}"
            i += length
        else:
            i += 1
    return tags


def random_sentence(
    rng: random.Random,
    schema: EntitySchema,
    max_tokens: int = 15,
    span_density: float = 0.35,
) -> TaggedSentence:
    n = rng.randint(1, max_tokens)
    tags = random_tags(rng, n, schema.names(), span_density)
    words = [
        "".join(rng.choice(string.ascii_lowercase) for _ in range(rng.randint(1, 8)))
        for _ in range(n)
    ]
    return TaggedSentence(tuple(Token(w, t) for w, t in zip(words, tags)))


def random_corpus(
    rng: random.Random,
    n_types: int | None = None,
    n_sentences: int | None = None,
    max_tokens: int = 15,
    span_density: float = 0.35,
) -> Corpus:
    if n_types is None:
        n_types = rng.randint(3, 8)
    if n_sentences is None:
        n_sentences = rng.randint(50, 500)
    schema = make_schema(n_types)
    sentences = tuple(
        random_sentence(rng, schema, max_tokens, span_density) for _ in range(n_sentences)
    )
    return Corpus(schema, sentences)


def naive_spans(tags: list[str]) -> list[tuple[int, int, str]]:
    """Independent span extraction used as the oracle in several suites."""
    spans = []
    i = 0
    while i < len(tags):
        if tags[i].startswith("B-"):
            t = tags[i][2:]
            j = i + 1
            while j < len(tags) and tags[j] == f"I-{t}":
                j += 1
            spans.append((i, j, t))
            i = j
        else:
            i += 1
    return spans


@pytest.fixture
def tiny_schema() -> EntitySchema:
    return EntitySchema(
        (
            EntityType("drug", domain_specific=True),
            EntityType("disease", domain_specific=True),
            EntityType("person", domain_specific=False),
        )
    )


def sent(text: str, tags: str, **kwargs) -> TaggedSentence:
    """Build a sentence from parallel space-separated surfaces and tags."""
    surfaces = text.split()
    tag_list = tags.split()
    assert len(surfaces) == len(tag_list), "test helper misuse"
    return TaggedSentence(
        tuple(Token(s, t) for s, t in zip(surfaces, tag_list)), **kwargs
    )
