"""LLM-driven expansion of the per-type entity pool.

Seed surfaces come from the demo corpus; the backend is then prompted for new
surfaces, either all at once (``straightforward``) or in example batches over
several rounds (``iterative``), with accepted entities feeding later rounds'
example lists. Every backend call is audited with a
:class:`~neraug.audit.GenerationRecord`.
"""
from __future__ import annotations

import json
import logging
import re
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

from sklearn.base import BaseEstimator

from .audit import (
    STAGE_ENTITY,
    VERDICT_ACCEPTED,
    VERDICT_BACKEND_ERROR,
    Clock,
    GenerationRecord,
)
from .corpus import Corpus, CorpusError, EntitySchema, EntityType, extract_spans
from .gateway import BackendError
from .validation import check_corpus, check_fitted, check_schema

logger = logging.getLogger(__name__)

PROVENANCE_SEED = "seed"
PROVENANCE_GENERATED = "generated"

DEFAULT_DOMAIN = "COVID-19"

ENTITY_PROMPT_TEMPLATE = (
    "There are some entities about {domain} {type} such as {examples}. "
    "Please generate {n} new entities of the same type."
)


class EntityAugError(RuntimeError):
    """Augmentation produced nothing usable (e.g. no parseable entities)."""


def normalize_surface(surface: str, normalization: str = "casefold") -> str:
    if normalization == "exact":
        return surface
    if normalization == "casefold":
        return surface.casefold()
    raise ValueError(f"unknown normalization: {normalization!r}")


@dataclass(frozen=True)
class PoolEntry:
    surface: str
    provenance: str  # seed | generated

    def __post_init__(self):
        if self.provenance not in (PROVENANCE_SEED, PROVENANCE_GENERATED):
            raise ValueError(f"bad provenance {self.provenance!r}")
        if not self.surface.strip():
            raise ValueError("entity surface must be non-empty")


class EntityPool:
    """Per-type ordered entity surfaces with seed/generated provenance.

    Uniqueness is enforced under the configured normalization; the first-seen
    surface form wins. Mutable by design (augmentation appends); use one
    writer at a time.
    """

    def __init__(self, schema: EntitySchema, normalization: str = "casefold"):
        normalize_surface("", normalization)  # validate the mode eagerly
        self.schema = check_schema(schema)
        self.normalization = normalization
        self._entries: dict[str, list[PoolEntry]] = {t.name: [] for t in self.schema.types}
        self._keys: dict[str, set[str]] = {t.name: set() for t in self.schema.types}

    @classmethod
    def from_corpus(cls, corpus: Corpus, normalization: str = "casefold") -> "EntityPool":
        """Seed a pool with every entity surface mentioned in ``corpus``."""
        corpus = check_corpus(corpus)
        pool = cls(corpus.schema, normalization)
        for sentence in corpus.sentences:
            for span in extract_spans(sentence):
                pool.add(span.type, span.surface, PROVENANCE_SEED)
        return pool

    def add(self, type_name: str, surface: str, provenance: str) -> bool:
        """Add a surface; returns False (no-op) if a duplicate under normalization."""
        if type_name not in self._entries:
            raise CorpusError(f"entity type {type_name!r} not in schema")
        surface = surface.strip()
        key = normalize_surface(surface, self.normalization)
        if not key or key in self._keys[type_name]:
            return False
        self._entries[type_name].append(PoolEntry(surface, provenance))
        self._keys[type_name].add(key)
        return True

    def surfaces(self, type_name: str) -> list[str]:
        return [e.surface for e in self.entries(type_name)]

    def seed_surfaces(self, type_name: str) -> list[str]:
        return [e.surface for e in self.entries(type_name) if e.provenance == PROVENANCE_SEED]

    def entries(self, type_name: str) -> list[PoolEntry]:
        if type_name not in self._entries:
            raise CorpusError(f"entity type {type_name!r} not in schema")
        return list(self._entries[type_name])

    def all_surfaces(self) -> list[str]:
        """Every pooled surface across all types, in schema-then-insertion order."""
        return [e.surface for t in self.schema.types for e in self._entries[t.name]]

    def iter_scope(self, domain_specific_only: bool = True) -> Iterator[tuple[EntityType, str]]:
        """(type, surface) pairs in deterministic order: schema order, then
        insertion order within each type."""
        for etype in self.schema.types:
            if domain_specific_only and not etype.domain_specific:
                continue
            for entry in self._entries[etype.name]:
                yield etype, entry.surface

    def size(self, type_name: str | None = None) -> int:
        if type_name is not None:
            return len(self.entries(type_name))
        return sum(len(v) for v in self._entries.values())

    # -- persistence ---------------------------------------------------------

    def to_json(self) -> str:
        payload = {
            t.name: [{"surface": e.surface, "provenance": e.provenance} for e in self._entries[t.name]]
            for t in self.schema.types
        }
        return json.dumps(payload, indent=2, ensure_ascii=False, sort_keys=True) + "\n"

    @classmethod
    def from_json(
        cls, text: str | bytes, schema: EntitySchema, normalization: str = "casefold"
    ) -> "EntityPool":
        try:
            payload = json.loads(text)
        except json.JSONDecodeError as err:
            raise CorpusError(f"pool file is not valid JSON: {err}") from err
        pool = cls(schema, normalization)
        for type_name, entries in payload.items():
            for entry in entries:
                pool.add(type_name, entry["surface"], entry["provenance"])
        return pool

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(
        cls, path: str | Path, schema: EntitySchema, normalization: str = "casefold"
    ) -> "EntityPool":
        return cls.from_json(Path(path).read_bytes(), schema, normalization)


@dataclass(frozen=True)
class EntityAugConfig:
    """Targets and strategy for pool expansion.

    ``n_new`` is the per-type acceptance target; ``batch_size`` and
    ``max_rounds`` apply to the iterative strategy only.
    """

    n_new: int = 10
    strategy: str = "iterative"
    batch_size: int = 5
    max_rounds: int = 3
    normalization: str = "casefold"

    def __post_init__(self):
        if self.n_new < 0:
            raise ValueError(f"n_new must be >= 0, got {self.n_new}")
        if self.strategy not in ("straightforward", "iterative"):
            raise ValueError(f"unknown strategy: {self.strategy!r}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_rounds < 1:
            raise ValueError(f"max_rounds must be >= 1, got {self.max_rounds}")
        normalize_surface("", self.normalization)


def render_entity_prompt(
    type_name: str | EntityType,
    examples: list[str],
    n: int,
    domain: str = DEFAULT_DOMAIN,
) -> str:
    if isinstance(type_name, EntityType):
        type_name = type_name.name
    if not examples:
        raise ValueError("examples must be non-empty")
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    return ENTITY_PROMPT_TEMPLATE.format(
        domain=domain, type=type_name, examples=", ".join(examples), n=n
    )


_LIST_MARKER_RE = re.compile(r"^\s*(?:\d+\s*[.)]\s*|[-*•]\s+)")
_QUOTE_CHARS = "\"'“”‘’`"


def parse_entity_response(raw: str) -> list[str]:
    """Extract entity surfaces from free-form list output.

    Splits on newlines and commas, strips numbered-list/bullet markers,
    surrounding quotes and whitespace, and drops empty pieces. Never raises;
    an empty list is a legitimate outcome.
    """
    surfaces = []
    for piece in re.split(r"[\n,]", raw):
        piece = _LIST_MARKER_RE.sub("", piece.strip())
        piece = piece.strip().strip(_QUOTE_CHARS).strip()
        if piece:
            surfaces.append(piece)
    return surfaces


def _record(
    records: list[GenerationRecord] | None,
    clock: Clock | None,
    **fields,
) -> None:
    if records is None:
        return
    timestamp = clock.now() if clock is not None else ""
    records.append(GenerationRecord(stage=STAGE_ENTITY, timestamp=timestamp, **fields))


def augment_entities_straightforward(
    pool: EntityPool,
    entity_type: str | EntityType,
    config: EntityAugConfig,
    backend,
    domain: str = DEFAULT_DOMAIN,
    records: list[GenerationRecord] | None = None,
    clock: Clock | None = None,
) -> list[str]:
    """One backend call with every known example; returns newly accepted surfaces.

    At most ``n_new`` surfaces are accepted (parsed order); duplicates under
    the pool's normalization are skipped. Raises :class:`EntityAugError` when
    the response parses to nothing; backend errors propagate with the prompt
    attached.
    """
    type_name = entity_type.name if isinstance(entity_type, EntityType) else entity_type
    examples = pool.surfaces(type_name)
    if not pool.seed_surfaces(type_name):
        raise EntityAugError(f"pool has no seed entities for type {type_name!r}")
    if config.n_new == 0:
        return []

    prompt = render_entity_prompt(type_name, examples, config.n_new, domain)
    try:
        response = backend.generate(prompt)
    except BackendError as err:
        _record(records, clock, prompt=prompt, raw_response="",
                verdict=VERDICT_BACKEND_ERROR, type=type_name)
        err.prompt = prompt
        raise
    _record(records, clock, prompt=prompt, raw_response=response.text,
            verdict=VERDICT_ACCEPTED, type=type_name)

    parsed = parse_entity_response(response.text)
    if not parsed:
        raise EntityAugError(
            f"no parseable entities in response for type {type_name!r} "
            f"(response starts {response.text[:80]!r})"
        )
    accepted: list[str] = []
    for surface in parsed:
        if len(accepted) >= config.n_new:
            break
        if pool.add(type_name, surface, PROVENANCE_GENERATED):
            accepted.append(surface)
    return accepted


def augment_entities_iterative(
    pool: EntityPool,
    entity_type: str | EntityType,
    config: EntityAugConfig,
    backend,
    domain: str = DEFAULT_DOMAIN,
    records: list[GenerationRecord] | None = None,
    clock: Clock | None = None,
) -> list[str]:
    """Batched augmentation: examples are split into ``batch_size`` groups,
    one call per group per round, and accepted entities join the example set
    for later rounds. Stops at ``n_new`` accepted or ``max_rounds`` rounds.

    A backend failure mid-run returns what was accepted so far (partial
    results are never discarded); a failure before anything was accepted
    propagates.
    """
    type_name = entity_type.name if isinstance(entity_type, EntityType) else entity_type
    if not pool.seed_surfaces(type_name):
        raise EntityAugError(f"pool has no seed entities for type {type_name!r}")
    if config.n_new == 0:
        return []

    accepted: list[str] = []
    any_parsed = False
    for _ in range(config.max_rounds):
        examples = pool.surfaces(type_name)
        batches = [
            examples[i : i + config.batch_size]
            for i in range(0, len(examples), config.batch_size)
        ]
        for batch in batches:
            if len(accepted) >= config.n_new:
                return accepted
            prompt = render_entity_prompt(
                type_name, batch, config.n_new - len(accepted), domain
            )
            try:
                response = backend.generate(prompt)
            except BackendError as err:
                _record(records, clock, prompt=prompt, raw_response="",
                        verdict=VERDICT_BACKEND_ERROR, type=type_name)
                if accepted:
                    logger.warning(
                        "backend failed mid-run for %s; keeping %d partial entities: %s",
                        type_name, len(accepted), err,
                    )
                    return accepted
                err.prompt = prompt
                raise
            _record(records, clock, prompt=prompt, raw_response=response.text,
                    verdict=VERDICT_ACCEPTED, type=type_name)
            parsed = parse_entity_response(response.text)
            any_parsed = any_parsed or bool(parsed)
            for surface in parsed:
                if len(accepted) >= config.n_new:
                    break
                if pool.add(type_name, surface, PROVENANCE_GENERATED):
                    accepted.append(surface)
        if len(accepted) >= config.n_new:
            break
    if not accepted and not any_parsed:
        raise EntityAugError(f"no parseable entities in any response for type {type_name!r}")
    return accepted


def augment_pool(
    pool: EntityPool,
    config: EntityAugConfig,
    backend,
    domain: str = DEFAULT_DOMAIN,
    domain_specific_only: bool = True,
    records: list[GenerationRecord] | None = None,
    clock: Clock | None = None,
) -> dict[str, list[str]]:
    """Run the configured strategy for every in-scope type; returns new
    surfaces per type. Types without seed entities are skipped with a warning
    (there is nothing to prompt with)."""
    strategy = (
        augment_entities_straightforward
        if config.strategy == "straightforward"
        else augment_entities_iterative
    )
    new_surfaces: dict[str, list[str]] = {}
    for etype in pool.schema.types:
        if domain_specific_only and not etype.domain_specific:
            continue
        if not pool.seed_surfaces(etype.name):
            warnings.warn(f"type {etype.name!r} has no seed entities; skipping augmentation")
            continue
        new_surfaces[etype.name] = strategy(
            pool, etype, config, backend, domain=domain, records=records, clock=clock
        )
    return new_surfaces


class EntityAugmenter(BaseEstimator):
    """Estimator facade: ``fit(X)`` seeds a pool from corpus ``X`` and expands it.

    Fitted attributes: ``pool_`` (the expanded :class:`EntityPool`),
    ``new_surfaces_`` (per-type accepted surfaces), ``records_`` (audit
    trail). Pass ``n_new=0`` to build a seed-only pool without a backend.
    """

    def __init__(
        self,
        backend=None,
        n_new: int = 10,
        strategy: str = "iterative",
        batch_size: int = 5,
        max_rounds: int = 3,
        normalization: str = "casefold",
        domain: str = DEFAULT_DOMAIN,
        domain_specific_only: bool = True,
        clock: Clock | None = None,
    ):
        self.backend = backend
        self.n_new = n_new
        self.strategy = strategy
        self.batch_size = batch_size
        self.max_rounds = max_rounds
        self.normalization = normalization
        self.domain = domain
        self.domain_specific_only = domain_specific_only
        self.clock = clock

    def _config(self) -> EntityAugConfig:
        return EntityAugConfig(
            n_new=self.n_new,
            strategy=self.strategy,
            batch_size=self.batch_size,
            max_rounds=self.max_rounds,
            normalization=self.normalization,
        )

    def fit(self, X, y=None):
        corpus = check_corpus(X)
        config = self._config()
        if self.backend is None and config.n_new > 0:
            raise ValueError("a backend is required when n_new > 0")
        pool = EntityPool.from_corpus(corpus, config.normalization)
        records: list[GenerationRecord] = []
        new_surfaces: dict[str, list[str]] = {}
        if config.n_new > 0:
            new_surfaces = augment_pool(
                pool,
                config,
                self.backend,
                domain=self.domain,
                domain_specific_only=self.domain_specific_only,
                records=records,
                clock=self.clock,
            )
        self.pool_ = pool
        self.new_surfaces_ = new_surfaces
        self.records_ = records
        return self

    def get_pool(self) -> EntityPool:
        check_fitted(self, ["pool_"])
        return self.pool_
