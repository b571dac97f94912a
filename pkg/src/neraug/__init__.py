"""neraug: entity-knowledge data augmentation for BIO-tagged NER corpora.

The toolkit turns a small tagged seed corpus into a larger, quality-controlled
training corpus: select demonstration sentences, expand the per-type entity
pool through an LLM backend, generate new tagged sentences one entity at a
time (with rejection filtering and optional self-verification), and score
predictions with entity-level micro F1.

Library surface: sklearn-style estimators (:class:`KShotSelector`,
:class:`FullCorpusSelector`, :class:`QualityFilter`, :class:`EntityAugmenter`,
:class:`InstanceAugmenter`) over immutable :class:`Corpus` values, plus the
plain functions they wrap. The ``neraug`` command drives the same stages from
a JSON config.
"""
from __future__ import annotations

__version__ = "0.1.0"

from .audit import Clock, GenerationRecord, LogicalClock, read_records, write_records
from .corpus import (
    Corpus,
    CorpusError,
    EntitySchema,
    EntitySpan,
    EntityType,
    TaggedSentence,
    Token,
    entity_type_counts,
    extract_spans,
    load_conll,
    load_schema,
    parse_conll,
    repair_bio,
    save_conll,
    save_schema,
    serialize_conll,
    spans_to_bio,
    validate_bio,
)
from .entity_aug import (
    EntityAugConfig,
    EntityAugError,
    EntityAugmenter,
    EntityPool,
    augment_entities_iterative,
    augment_entities_straightforward,
    augment_pool,
    parse_entity_response,
    render_entity_prompt,
)
from .evaluation import (
    MatchCounts,
    Score,
    ScoreReport,
    aggregate_runs,
    emit_report,
    match_spans,
    micro_f1,
)
from .gateway import (
    BackendError,
    CompletionRequest,
    CompletionResponse,
    DiskCache,
    LlmConfig,
    MalformedResponseError,
    MockBackend,
    MockRule,
    MockScenario,
    MockScenarioError,
    OpenAIChatClient,
    PermanentBackendError,
    default_scenario,
    mock_complete,
)
from .instance_aug import (
    InstanceAugConfig,
    InstanceAugmenter,
    align_and_tag,
    augment_corpus,
    find_occurrences,
    lexicon_filter,
    render_instance_prompt,
    self_verify,
)
from .selection import (
    FullCorpusSelector,
    KShotSelector,
    QualityFilter,
    SelectionConfig,
    SelectionResult,
    SplitMix64,
    filter_quality_subset,
    prioritize_domain_specific,
    select_demos,
    select_full_demos,
    select_kshot_demos,
    shuffled_indices,
    undersample_dominant_type,
)
from .validation import check_aligned, check_corpus, check_fitted, check_schema

__all__ = [
    "__version__",
    # corpus
    "Corpus", "CorpusError", "EntitySchema", "EntitySpan", "EntityType",
    "TaggedSentence", "Token", "entity_type_counts", "extract_spans",
    "load_conll", "load_schema", "parse_conll", "repair_bio", "save_conll",
    "save_schema", "serialize_conll", "spans_to_bio", "validate_bio",
    # selection
    "FullCorpusSelector", "KShotSelector", "QualityFilter", "SelectionConfig",
    "SelectionResult", "SplitMix64", "filter_quality_subset",
    "prioritize_domain_specific", "select_demos", "select_full_demos",
    "select_kshot_demos", "shuffled_indices", "undersample_dominant_type",
    # entity augmentation
    "EntityAugConfig", "EntityAugError", "EntityAugmenter", "EntityPool",
    "augment_entities_iterative", "augment_entities_straightforward",
    "augment_pool", "parse_entity_response", "render_entity_prompt",
    # instance augmentation
    "InstanceAugConfig", "InstanceAugmenter", "align_and_tag", "augment_corpus",
    "find_occurrences", "lexicon_filter", "render_instance_prompt", "self_verify",
    # gateway
    "BackendError", "CompletionRequest", "CompletionResponse", "DiskCache",
    "LlmConfig", "MalformedResponseError", "MockBackend", "MockRule",
    "MockScenario", "MockScenarioError", "OpenAIChatClient", "PermanentBackendError",
    "default_scenario", "mock_complete",
    # audit
    "Clock", "GenerationRecord", "LogicalClock", "read_records", "write_records",
    # evaluation
    "MatchCounts", "Score", "ScoreReport", "aggregate_runs", "emit_report",
    "match_spans", "micro_f1",
    # validation
    "check_aligned", "check_corpus", "check_fitted", "check_schema",
]
