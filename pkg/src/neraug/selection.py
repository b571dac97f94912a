"""Demonstration selection for in-context NER prompting.

Two modes:

* ``few_shot`` — a single greedy pass over a seeded shuffle of the corpus,
  accepting a sentence only if every per-type mention counter stays within
  ``alpha * k`` after adding it, and stopping once every type has at least
  ``k`` mentions.
* ``fully_supervised`` — keep every usable sentence: drop noisy sentences
  (more than ``t`` entity mentions), stably sort domain-specific content
  first, under-sample the most over-represented type, then keep only
  sentences containing at least one domain-specific mention.

Selection must be reproducible bit-for-bit across platforms and languages,
so the shuffle runs on an explicit SplitMix64 generator instead of
``random.Random`` (whose shuffle algorithm is an implementation detail of
CPython).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Sequence

from sklearn.base import BaseEstimator, TransformerMixin

from .corpus import Corpus, CorpusError, EntitySchema, TaggedSentence, entity_type_counts, extract_spans
from .validation import check_corpus, check_fitted

logger = logging.getLogger(__name__)

_MASK64 = (1 << 64) - 1

MODE_FEW_SHOT = "few_shot"
MODE_FULLY_SUPERVISED = "fully_supervised"


class SplitMix64:
    """SplitMix64 PRNG: 64-bit state, one multiply-xorshift mix per draw.

    Chosen because the algorithm is tiny, public, and identical across
    languages, which keeps seeded runs reproducible outside Python.
    """

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    def next_uint64(self) -> int:
        self._state = (self._state + 0x9E3779B97F4A7C15) & _MASK64
        z = self._state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def randbelow(self, n: int) -> int:
        """Uniform draw from [0, n) via rejection sampling (no modulo bias)."""
        if n <= 0:
            raise ValueError(f"randbelow requires n >= 1, got {n}")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            x = self.next_uint64()
            if x < limit:
                return x % n


def shuffled_indices(n: int, seed: int) -> list[int]:
    """A seeded Fisher-Yates permutation of ``range(n)``."""
    rng = SplitMix64(seed)
    order = list(range(n))
    for i in range(n - 1, 0, -1):
        j = rng.randbelow(i + 1)
        order[i], order[j] = order[j], order[i]
    return order


@dataclass(frozen=True)
class SelectionConfig:
    """Knobs for demonstration selection.

    ``k`` is the per-type mention target, ``alpha`` the overshoot tolerance
    (a sentence is accepted only while every counter stays <= alpha * k),
    ``t`` the per-sentence mention budget of the quality filter, and ``mode``
    one of ``few_shot`` / ``fully_supervised``.
    """

    k: int = 5
    alpha: float = 1.3
    t: int = 5
    seed: int = 0
    mode: str = MODE_FEW_SHOT

    def __post_init__(self):
        if self.k < 0:
            raise ValueError(f"k must be >= 0, got {self.k}")
        if self.alpha < 1.0:
            raise ValueError(f"alpha must be >= 1, got {self.alpha}")
        if self.t < 1:
            raise ValueError(f"t must be >= 1, got {self.t}")
        if self.mode not in (MODE_FEW_SHOT, MODE_FULLY_SUPERVISED):
            raise ValueError(f"unknown selection mode: {self.mode!r}")


@dataclass(frozen=True)
class SelectionResult:
    """Outcome of a selection pass.

    ``demos`` preserves acceptance order; ``counters`` maps every schema type
    to its mention count over the demos; ``satisfied`` reports whether each
    type reached its target; ``deficient`` lists the types that did not.
    """

    demos: tuple[TaggedSentence, ...]
    counters: dict[str, int]
    satisfied: bool
    rejected_count: int
    deficient: tuple[str, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        return {
            "num_demos": len(self.demos),
            "counters": dict(self.counters),
            "satisfied": self.satisfied,
            "rejected_count": self.rejected_count,
            "deficient": list(self.deficient),
        }


def sentence_type_counts(sentence: TaggedSentence) -> dict[str, int]:
    """Mention count per entity type for one sentence (spans, not tokens)."""
    delta: dict[str, int] = {}
    for span in extract_spans(sentence):
        delta[span.type] = delta.get(span.type, 0) + 1
    return delta


def total_mentions(sentence: TaggedSentence) -> int:
    return len(extract_spans(sentence))


# ---------------------------------------------------------------------------
# Index-level passes. Each returns positions into the input corpus so the
# estimators can replay a fitted selection on new objects; the public
# functions below wrap them into Corpus / SelectionResult values.


def _quality_indices(corpus: Corpus, t: int) -> list[int]:
    return [i for i, s in enumerate(corpus.sentences) if total_mentions(s) <= t]


def _domain_priority_order(corpus: Corpus, indices: Sequence[int]) -> list[int]:
    domain = set(corpus.schema.domain_specific_names())

    def has_domain(i: int) -> bool:
        return any(sp.type in domain for sp in extract_spans(corpus.sentences[i]))

    # Stable: domain-bearing sentences first, original order preserved inside
    # each partition.
    return sorted(indices, key=lambda i: not has_domain(i))


def _undersample_indices(corpus: Corpus, indices: Sequence[int], cap: float) -> list[int]:
    """Re-balance by trimming the single most frequent type: drop sentences
    whose spans are ALL of that type, from the end, until the type accounts
    for at most ``cap`` of all mentions (or no droppable sentence remains).

    The dominant type is fixed up front (ties broken by schema order) so the
    pass has a single, order-independent target.
    """
    counts = {name: 0 for name in corpus.schema.names()}
    for i in indices:
        for t, c in sentence_type_counts(corpus.sentences[i]).items():
            counts[t] += c
    total = sum(counts.values())
    if total == 0:
        return list(indices)
    dominant = max(corpus.schema.names(), key=lambda n: counts[n])

    def droppable(i: int) -> bool:
        delta = sentence_type_counts(corpus.sentences[i])
        return set(delta) == {dominant}

    kept = list(indices)
    while counts[dominant] > cap * sum(counts.values()):
        victim = next((pos for pos in range(len(kept) - 1, -1, -1) if droppable(kept[pos])), None)
        if victim is None:
            break
        for t, c in sentence_type_counts(corpus.sentences[kept[victim]]).items():
            counts[t] -= c
        del kept[victim]
    return kept


def _domain_filter_indices(corpus: Corpus, indices: Sequence[int]) -> list[int]:
    domain = set(corpus.schema.domain_specific_names())
    return [
        i
        for i in indices
        if any(sp.type in domain for sp in extract_spans(corpus.sentences[i]))
    ]


def _kshot_indices(
    corpus: Corpus, config: SelectionConfig, shuffle: bool = True
) -> tuple[list[int], dict[str, int], bool, int]:
    names = corpus.schema.names()
    counters = {name: 0 for name in names}
    if config.k == 0:
        return [], counters, True, 0

    order = (
        shuffled_indices(len(corpus.sentences), config.seed)
        if shuffle
        else list(range(len(corpus.sentences)))
    )
    cap = config.alpha * config.k
    accepted: list[int] = []
    rejected = 0
    for idx in order:
        if all(counters[name] >= config.k for name in names):
            break
        delta = sentence_type_counts(corpus.sentences[idx])
        if all(counters[t] + c <= cap for t, c in delta.items()):
            accepted.append(idx)
            for t, c in delta.items():
                counters[t] += c
        else:
            rejected += 1
    satisfied = all(counters[name] >= config.k for name in names)
    return accepted, counters, satisfied, rejected


# ---------------------------------------------------------------------------
# Public functional API


def filter_quality_subset(corpus: Corpus, t: int = 5) -> Corpus:
    """Keep sentences with at most ``t`` entity mentions, in order."""
    corpus = check_corpus(corpus)
    if t < 1:
        raise ValueError(f"t must be >= 1, got {t}")
    return corpus.with_sentences(corpus.sentences[i] for i in _quality_indices(corpus, t))


def prioritize_domain_specific(corpus: Corpus) -> Corpus:
    """Stable-sort sentences bearing domain-specific mentions to the front."""
    corpus = check_corpus(corpus)
    order = _domain_priority_order(corpus, range(len(corpus.sentences)))
    return corpus.with_sentences(corpus.sentences[i] for i in order)


def undersample_dominant_type(corpus: Corpus, cap: float = 0.5) -> Corpus:
    """Trim the most over-represented type to at most ``cap`` of all mentions."""
    corpus = check_corpus(corpus)
    if not 0 < cap <= 1:
        raise ValueError(f"cap must be in (0, 1], got {cap}")
    kept = _undersample_indices(corpus, range(len(corpus.sentences)), cap)
    return corpus.with_sentences(corpus.sentences[i] for i in kept)


def select_full_demos(corpus: Corpus) -> SelectionResult:
    """Keep every sentence containing at least one domain-specific mention.

    Pure filter: callers wanting the quality / balance passes compose them
    first (see :class:`FullCorpusSelector`).
    """
    corpus = check_corpus(corpus)
    if not corpus.schema.domain_specific_names():
        raise CorpusError("schema declares no domain-specific type; nothing to select for")
    kept = _domain_filter_indices(corpus, range(len(corpus.sentences)))
    demos = tuple(corpus.sentences[i] for i in kept)
    counters = entity_type_counts(corpus.with_sentences(demos))
    return SelectionResult(
        demos=demos,
        counters=counters,
        satisfied=bool(demos),
        rejected_count=len(corpus.sentences) - len(demos),
        deficient=() if demos else tuple(corpus.schema.names()),
    )


def select_kshot_demos(
    corpus: Corpus, config: SelectionConfig | None = None, shuffle: bool = True
) -> SelectionResult:
    """Greedy capped selection after a seeded shuffle.

    One pass over the shuffled corpus; a sentence is accepted iff adding its
    mention counts keeps every type at or below ``alpha * k``. The pass stops
    early once every type has at least ``k`` mentions. ``satisfied`` is False
    when the corpus ran out first, with the lagging types in ``deficient``.

    ``shuffle=False`` scans in input order (identity permutation); it exists
    so tests can drive the selector against hand-computed traces.
    """
    corpus = check_corpus(corpus)
    config = config or SelectionConfig()
    indices, counters, satisfied, rejected = _kshot_indices(corpus, config, shuffle=shuffle)
    demos = tuple(corpus.sentences[i] for i in indices)
    deficient = tuple(n for n in corpus.schema.names() if counters[n] < config.k)
    if not satisfied:
        logger.warning(
            "selection unsatisfied: %d/%d types below k=%d (%s)",
            len(deficient), len(counters), config.k, ", ".join(deficient),
        )
    return SelectionResult(
        demos=demos,
        counters=counters,
        satisfied=satisfied,
        rejected_count=rejected,
        deficient=deficient,
    )


def select_demos(corpus: Corpus, config: SelectionConfig | None = None) -> SelectionResult:
    """Mode dispatch: the full pipeline for the configured selection mode."""
    corpus = check_corpus(corpus)
    config = config or SelectionConfig()
    filtered = filter_quality_subset(corpus, config.t)
    if config.mode == MODE_FEW_SHOT:
        return select_kshot_demos(filtered, config)
    ordered = prioritize_domain_specific(filtered)
    balanced = undersample_dominant_type(ordered)
    return select_full_demos(balanced)


# ---------------------------------------------------------------------------
# Estimator API


class QualityFilter(BaseEstimator, TransformerMixin):
    """Drop sentences whose total mention count exceeds ``max_entities``.

    ``fit`` records which input rows survive (``indices_``); ``transform``
    applies that mask, so the filter composes in a sklearn pipeline.
    """

    def __init__(self, max_entities: int = 5):
        self.max_entities = max_entities

    def fit(self, X, y=None):
        corpus = check_corpus(X)
        if self.max_entities < 1:
            raise ValueError(f"max_entities must be >= 1, got {self.max_entities}")
        self.indices_ = _quality_indices(corpus, self.max_entities)
        self.n_rejected_ = len(corpus.sentences) - len(self.indices_)
        return self

    def transform(self, X) -> Corpus:
        check_fitted(self, ["indices_"])
        corpus = check_corpus(X)
        return corpus.with_sentences(corpus.sentences[i] for i in self.indices_)


class KShotSelector(BaseEstimator, TransformerMixin):
    """Few-shot demonstration selector (greedy capped pass over a shuffle).

    Fitted attributes: ``indices_`` (positions into the fit corpus, in
    acceptance order), ``counters_``, ``satisfied_``, ``rejected_count_``,
    ``deficient_types_``, ``result_``.
    """

    def __init__(
        self,
        k: int = 5,
        alpha: float = 1.3,
        max_entities: int = 5,
        seed: int = 0,
        shuffle: bool = True,
    ):
        self.k = k
        self.alpha = alpha
        self.max_entities = max_entities
        self.seed = seed
        self.shuffle = shuffle

    def _config(self) -> SelectionConfig:
        return SelectionConfig(
            k=self.k, alpha=self.alpha, t=self.max_entities, seed=self.seed
        )

    def fit(self, X, y=None):
        corpus = check_corpus(X)
        config = self._config()
        quality = _quality_indices(corpus, config.t)
        subset = corpus.with_sentences(corpus.sentences[i] for i in quality)
        picked, counters, satisfied, rejected = _kshot_indices(
            subset, config, shuffle=self.shuffle
        )
        self.indices_ = [quality[i] for i in picked]
        self.counters_ = counters
        self.satisfied_ = satisfied
        self.rejected_count_ = rejected
        self.deficient_types_ = tuple(
            n for n in corpus.schema.names() if counters[n] < config.k
        )
        self.result_ = SelectionResult(
            demos=tuple(corpus.sentences[i] for i in self.indices_),
            counters=counters,
            satisfied=satisfied,
            rejected_count=rejected,
            deficient=self.deficient_types_,
        )
        return self

    def transform(self, X) -> Corpus:
        check_fitted(self, ["indices_"])
        corpus = check_corpus(X)
        if self.indices_ and max(self.indices_) >= len(corpus.sentences):
            raise CorpusError(
                f"fitted selection references row {max(self.indices_)} but the "
                f"corpus has only {len(corpus.sentences)} sentences"
            )
        return corpus.with_sentences(corpus.sentences[i] for i in self.indices_)


class FullCorpusSelector(BaseEstimator, TransformerMixin):
    """Fully-supervised demo selection: quality filter, domain-first ordering,
    dominant-type under-sampling, then the domain-specific keep-filter.

    Fitted attributes mirror :class:`KShotSelector` (``satisfied_`` is True
    iff anything survived).
    """

    def __init__(self, max_entities: int = 5, undersample_cap: float = 0.5):
        self.max_entities = max_entities
        self.undersample_cap = undersample_cap

    def fit(self, X, y=None):
        corpus = check_corpus(X)
        if not corpus.schema.domain_specific_names():
            raise CorpusError("schema declares no domain-specific type; nothing to select for")
        if not 0 < self.undersample_cap <= 1:
            raise ValueError(f"undersample_cap must be in (0, 1], got {self.undersample_cap}")
        idx = _quality_indices(corpus, self.max_entities)
        idx = _domain_priority_order(corpus, idx)
        idx = _undersample_indices(corpus, idx, self.undersample_cap)
        idx = _domain_filter_indices(corpus, idx)
        self.indices_ = idx
        demos = tuple(corpus.sentences[i] for i in idx)
        self.counters_ = entity_type_counts(corpus.with_sentences(demos))
        self.satisfied_ = bool(demos)
        self.rejected_count_ = len(corpus.sentences) - len(demos)
        self.result_ = SelectionResult(
            demos=demos,
            counters=self.counters_,
            satisfied=self.satisfied_,
            rejected_count=self.rejected_count_,
            deficient=() if demos else tuple(corpus.schema.names()),
        )
        return self

    def transform(self, X) -> Corpus:
        check_fitted(self, ["indices_"])
        corpus = check_corpus(X)
        return corpus.with_sentences(corpus.sentences[i] for i in self.indices_)
