"""Generation of new tagged sentences, one target entity at a time.

For each (type, entity) in the pool's augmentation scope, a demonstration
sentence anchors a generation prompt; the raw completion is whitespace-
tokenized, the target entity is located and tagged, and the sentence must
then survive the lexicon filter (no other pooled surface present) and, when
enabled, an LLM self-verification round. Rejections are normal outcomes and
are fully audited.
"""
from __future__ import annotations

import logging
import re
import string
from dataclasses import dataclass
from typing import Sequence

from sklearn.base import BaseEstimator

from .audit import (
    STAGE_INSTANCE,
    VERDICT_ACCEPTED,
    VERDICT_BACKEND_ERROR,
    VERDICT_FOREIGN_ENTITY,
    VERDICT_MISSING_ENTITY,
    VERDICT_SELF_VERIFICATION,
    Clock,
    GenerationRecord,
)
from .corpus import (
    Corpus,
    EntityType,
    ORIGIN_GENERATED,
    TaggedSentence,
    Token,
)
from .entity_aug import DEFAULT_DOMAIN, EntityPool
from .gateway import BackendError
from .validation import check_corpus, check_fitted

logger = logging.getLogger(__name__)

INSTANCE_PROMPT_TEMPLATE = (
    "Take the sentence as an example {demo}, please generate a new {domain} tweet "
    "which only has the {entity}, without introducing any other named entity."
)

VERIFY_PROMPT_TEMPLATE = (
    "Sentence: {sentence}\n"
    'Answer the following questions with "yes" or "no", one answer per line.\n'
    "1. Is \"{entity}\" a {type} entity relevant to {domain}?\n"
    "2. Does the sentence introduce any named entity other than \"{entity}\"?"
)


@dataclass(frozen=True)
class InstanceAugConfig:
    """Generation-loop knobs.

    ``max_attempts`` is the attempt budget per entity (demos rotate
    round-robin across attempts); ``matcher`` controls how entity occurrences
    are located in raw output (``casefold`` is punctuation- and
    case-insensitive at token boundaries, ``exact`` only strips punctuation).
    """

    instances_per_entity: int = 1
    max_attempts: int = 3
    enable_self_verification: bool = False
    matcher: str = "casefold"

    def __post_init__(self):
        if self.instances_per_entity < 1:
            raise ValueError(
                f"instances_per_entity must be >= 1, got {self.instances_per_entity}"
            )
        if self.max_attempts < 1:
            raise ValueError(f"max_attempts must be >= 1, got {self.max_attempts}")
        if self.matcher not in ("exact", "casefold"):
            raise ValueError(f"unknown matcher: {self.matcher!r}")


def render_instance_prompt(
    demo: TaggedSentence, entity: str, domain: str = DEFAULT_DOMAIN
) -> str:
    if not entity:
        raise ValueError("entity must be non-empty")
    return INSTANCE_PROMPT_TEMPLATE.format(demo=demo.text(), domain=domain, entity=entity)


def _norm_token(token: str, matcher: str) -> str:
    token = token.strip(string.punctuation)
    return token.casefold() if matcher == "casefold" else token


def _entity_tokens(entity: str, matcher: str) -> list[str]:
    tokens = [_norm_token(t, matcher) for t in entity.split()]
    return tokens if tokens and all(tokens) else []


def find_occurrences(surfaces: Sequence[str], entity: str, matcher: str = "casefold") -> list[tuple[int, int]]:
    """All non-overlapping (start, end) token spans where ``entity`` occurs.

    Tokens are compared after stripping leading/trailing punctuation (and
    casefolding under the ``casefold`` matcher), so "Paxlovid," matches
    "paxlovid". Greedy left-to-right scan.
    """
    needle = _entity_tokens(entity, matcher)
    if not needle:
        return []
    haystack = [_norm_token(t, matcher) for t in surfaces]
    spans: list[tuple[int, int]] = []
    i = 0
    while i + len(needle) <= len(haystack):
        if haystack[i : i + len(needle)] == needle:
            spans.append((i, i + len(needle)))
            i += len(needle)
        else:
            i += 1
    return spans


def align_and_tag(
    text: str,
    entity: str,
    entity_type: str | EntityType,
    matcher: str = "casefold",
    meta: str | None = None,
) -> TaggedSentence | None:
    """Whitespace-tokenize raw output and tag every occurrence of ``entity``.

    Returns None when the entity does not occur (the caller records
    ``rejected_missing_entity``) or when the text has no tokens at all.
    """
    type_name = entity_type.name if isinstance(entity_type, EntityType) else entity_type
    surfaces = text.split()
    if not surfaces:
        return None
    occurrences = find_occurrences(surfaces, entity, matcher)
    if not occurrences:
        return None
    tags = ["O"] * len(surfaces)
    for start, end in occurrences:
        tags[start] = f"B-{type_name}"
        for i in range(start + 1, end):
            tags[i] = f"I-{type_name}"
    tokens = tuple(Token(s, t) for s, t in zip(surfaces, tags))
    return TaggedSentence(tokens, origin=ORIGIN_GENERATED, meta=meta)


def lexicon_filter(
    sentence: TaggedSentence,
    pool: EntityPool,
    target: str,
    matcher: str = "casefold",
) -> bool:
    """True iff no pooled surface other than the target occurs in the sentence.

    Every surface in the pool (all types) is scanned against every token
    position; any hit from a surface that does not normalize to the target
    rejects the sentence. Deliberately brute force — pools are small and the
    semantics must stay spotlessly simple.
    """
    surfaces = sentence.surfaces()
    target_key = tuple(_entity_tokens(target, matcher))
    for pooled in pool.all_surfaces():
        if tuple(_entity_tokens(pooled, matcher)) == target_key:
            continue
        if find_occurrences(surfaces, pooled, matcher):
            return False
    return True


_YES_NO_RE = re.compile(r"\b(yes|no)\b", re.IGNORECASE)


def parse_verify_response(raw: str) -> tuple[str, str] | None:
    """Extract the first two yes/no answers, or None if fewer are found."""
    answers = [m.group(1).casefold() for m in _YES_NO_RE.finditer(raw)]
    if len(answers) < 2:
        return None
    return answers[0], answers[1]


def self_verify(
    sentence: TaggedSentence,
    entity: str,
    entity_type: str | EntityType,
    backend,
    domain: str = DEFAULT_DOMAIN,
    template: str = VERIFY_PROMPT_TEMPLATE,
) -> tuple[bool, str, str]:
    """One verification call; returns (accepted, prompt, raw_response).

    The backend is asked two yes/no questions: is the entity really of the
    target type and relevant to the domain, and does the sentence introduce
    any other named entity. Acceptance requires exactly (yes, no); anything
    unparseable rejects (fail-closed). Backend failures propagate.
    """
    type_name = entity_type.name if isinstance(entity_type, EntityType) else entity_type
    prompt = template.format(
        sentence=sentence.text(), entity=entity, type=type_name, domain=domain
    )
    response = backend.generate(prompt)
    answers = parse_verify_response(response.text)
    accepted = answers == ("yes", "no")
    return accepted, prompt, response.text


def augment_corpus(
    demos: Sequence[TaggedSentence] | Corpus,
    pool: EntityPool,
    config: InstanceAugConfig,
    backend,
    domain: str = DEFAULT_DOMAIN,
    domain_specific_only: bool = True,
    clock: Clock | None = None,
    verify_template: str = VERIFY_PROMPT_TEMPLATE,
) -> tuple[Corpus, list[GenerationRecord]]:
    """Generate tagged sentences for every (type, entity) in the pool's scope.

    Demos rotate round-robin over a global attempt counter; each entity gets
    up to ``max_attempts`` attempts, stopping early once
    ``instances_per_entity`` sentences are accepted. Backend failures are
    recorded per attempt and never abort the run. Output order is the
    deterministic scope order (schema order, insertion order, attempt order).
    """
    demo_list = list(demos.sentences) if isinstance(demos, Corpus) else list(demos)
    scope = list(pool.iter_scope(domain_specific_only=domain_specific_only))
    if not scope:
        return Corpus(pool.schema, ()), []
    if not demo_list:
        raise ValueError("demos must be non-empty")

    records: list[GenerationRecord] = []
    accepted_sentences: list[TaggedSentence] = []
    demo_cursor = 0

    def stamp() -> str:
        return clock.now() if clock is not None else ""

    for etype, entity in scope:
        accepted_count = 0
        for attempt in range(config.max_attempts):
            if accepted_count >= config.instances_per_entity:
                break
            demo_index = demo_cursor % len(demo_list)
            demo = demo_list[demo_index]
            demo_cursor += 1
            prompt = render_instance_prompt(demo, entity, domain)
            base = dict(
                prompt=prompt,
                entity=entity,
                type=etype.name,
                demo_id=str(demo_index),
                stage=STAGE_INSTANCE,
            )

            try:
                response = backend.generate(prompt)
            except BackendError as err:
                logger.warning("backend failed for %s/%s: %s", etype.name, entity, err)
                records.append(GenerationRecord(
                    raw_response="", verdict=VERDICT_BACKEND_ERROR, timestamp=stamp(), **base,
                ))
                continue

            meta = f"{etype.name}:{entity}:{attempt}"
            sentence = align_and_tag(
                response.text, entity, etype, matcher=config.matcher, meta=meta
            )
            if sentence is None:
                records.append(GenerationRecord(
                    raw_response=response.text, verdict=VERDICT_MISSING_ENTITY,
                    timestamp=stamp(), **base,
                ))
                continue
            if not lexicon_filter(sentence, pool, entity, matcher=config.matcher):
                records.append(GenerationRecord(
                    raw_response=response.text, verdict=VERDICT_FOREIGN_ENTITY,
                    timestamp=stamp(), **base,
                ))
                continue
            verify_prompt = verify_raw = None
            if config.enable_self_verification:
                try:
                    ok, verify_prompt, verify_raw = self_verify(
                        sentence, entity, etype, backend,
                        domain=domain, template=verify_template,
                    )
                except BackendError as err:
                    logger.warning("verification failed for %s/%s: %s", etype.name, entity, err)
                    records.append(GenerationRecord(
                        raw_response=response.text, verdict=VERDICT_BACKEND_ERROR,
                        timestamp=stamp(), **base,
                    ))
                    continue
                if not ok:
                    records.append(GenerationRecord(
                        raw_response=response.text, verdict=VERDICT_SELF_VERIFICATION,
                        timestamp=stamp(), verify_prompt=verify_prompt,
                        verify_raw_response=verify_raw, **base,
                    ))
                    continue
            records.append(GenerationRecord(
                raw_response=response.text, verdict=VERDICT_ACCEPTED, timestamp=stamp(),
                verify_prompt=verify_prompt, verify_raw_response=verify_raw, **base,
            ))
            accepted_sentences.append(sentence)
            accepted_count += 1

    return Corpus(pool.schema, tuple(accepted_sentences)), records


class InstanceAugmenter(BaseEstimator):
    """Estimator facade: ``fit(X)`` stores demos, ``generate(pool)`` runs the loop.

    Fitted attributes: ``demos_``; after ``generate``: ``corpus_`` and
    ``records_``.
    """

    def __init__(
        self,
        backend=None,
        instances_per_entity: int = 1,
        max_attempts: int = 3,
        enable_self_verification: bool = False,
        matcher: str = "casefold",
        domain: str = DEFAULT_DOMAIN,
        domain_specific_only: bool = True,
        clock: Clock | None = None,
    ):
        self.backend = backend
        self.instances_per_entity = instances_per_entity
        self.max_attempts = max_attempts
        self.enable_self_verification = enable_self_verification
        self.matcher = matcher
        self.domain = domain
        self.domain_specific_only = domain_specific_only
        self.clock = clock

    def _config(self) -> InstanceAugConfig:
        return InstanceAugConfig(
            instances_per_entity=self.instances_per_entity,
            max_attempts=self.max_attempts,
            enable_self_verification=self.enable_self_verification,
            matcher=self.matcher,
        )

    def fit(self, X, y=None):
        corpus = check_corpus(X)
        if not corpus.sentences:
            raise ValueError("demo corpus must be non-empty")
        self.demos_ = corpus
        return self

    def generate(self, pool: EntityPool) -> Corpus:
        check_fitted(self, ["demos_"])
        if self.backend is None:
            raise ValueError("a backend is required to generate instances")
        corpus, records = augment_corpus(
            self.demos_,
            pool,
            self._config(),
            self.backend,
            domain=self.domain,
            domain_specific_only=self.domain_specific_only,
            clock=self.clock,
        )
        self.corpus_ = corpus
        self.records_ = records
        return corpus
