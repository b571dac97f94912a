"""Command-line entry point: stats, select, augment-entities,
augment-instances, score, and the end-to-end pipeline.

One JSON config file drives everything; ``${VAR}`` references inside string
values are replaced from the environment at load time. Every stage writes its
outputs plus a ``manifest.json`` (input/output hashes, config snapshot,
package version) into its own subdirectory of the output dir, and each stage
consumes only files named in the previous stage's manifest, so partial runs
can be inspected and resumed stage by stage.

Exit codes: 0 ok, 2 config error, 3 data error, 4 backend error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from . import __version__
from .audit import Clock, GenerationRecord, LogicalClock, write_records
from .corpus import (
    Corpus,
    CorpusError,
    EntitySchema,
    entity_type_counts,
    load_conll,
    load_schema,
    save_conll,
)
from .entity_aug import EntityAugConfig, EntityAugError, EntityPool, augment_pool
from .evaluation import aggregate_runs, emit_report, micro_f1
from .gateway import BackendError, LlmConfig, MockBackend, OpenAIChatClient, default_scenario
from .instance_aug import InstanceAugConfig, augment_corpus
from .selection import SelectionConfig, select_demos

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_BACKEND = 4


class ConfigError(ValueError):
    """Bad pipeline configuration: unparseable file, missing path, bad value."""


# ---------------------------------------------------------------------------
# Config loading


_ENV_RE = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}")


def interpolate_env(value: Any) -> Any:
    """Recursively replace ``${VAR}`` in strings from the environment."""
    if isinstance(value, str):

        def sub(match: re.Match) -> str:
            name = match.group(1)
            if name not in os.environ:
                raise ConfigError(f"config references undefined environment variable {name!r}")
            return os.environ[name]

        return _ENV_RE.sub(sub, value)
    if isinstance(value, dict):
        return {k: interpolate_env(v) for k, v in value.items()}
    if isinstance(value, list):
        return [interpolate_env(v) for v in value]
    return value


def _take(section: dict, allowed: set[str], where: str) -> None:
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(sorted(unknown))}")


@dataclass
class PipelineConfig:
    """Everything one run needs: paths, per-stage configs, global seed."""

    train: Path
    schema_path: Path
    output_dir: Path
    cache_dir: Path | None
    dev: Path | None
    test: Path | None
    predictions: Path | None
    seed: int
    mode: str
    domain: str
    domain_specific_only: bool
    selection: SelectionConfig
    entity_aug: EntityAugConfig
    instance_aug: InstanceAugConfig
    llm: LlmConfig
    snapshot: dict = field(default_factory=dict)

    @property
    def schema(self) -> EntitySchema:
        return load_schema(self.schema_path)


_TOP_KEYS = {
    "train", "dev", "test", "predictions", "schema", "output_dir", "cache_dir",
    "seed", "mode", "domain", "domain_specific_only",
    "selection", "entity_aug", "instance_aug", "llm",
}


def load_pipeline_config(
    path: str | Path,
    output_dir: str | None = None,
    cache_dir: str | None = None,
) -> PipelineConfig:
    """Load and validate a config file.

    Relative input paths resolve against the config file's directory; the
    ``output_dir`` / ``cache_dir`` arguments (CLI overrides) resolve against
    the working directory instead.
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as err:
        raise ConfigError(f"config file not found: {path}") from err
    except json.JSONDecodeError as err:
        raise ConfigError(f"config file {path} is not valid JSON: {err}") from err
    if not isinstance(raw, dict):
        raise ConfigError("config file must contain a JSON object")
    raw = interpolate_env(raw)
    _take(raw, _TOP_KEYS, str(path))

    base = path.parent

    def input_path(key: str, required: bool = False) -> Path | None:
        value = raw.get(key)
        if value is None:
            if required:
                raise ConfigError(f"config is missing required key {key!r}")
            return None
        p = (base / value).resolve() if not Path(value).is_absolute() else Path(value)
        if not p.exists():
            raise ConfigError(f"{key} path does not exist: {p}")
        return p

    train = input_path("train", required=True)
    schema_path = input_path("schema", required=True)
    dev = input_path("dev")
    test = input_path("test")
    predictions = input_path("predictions")

    out_value = output_dir if output_dir is not None else raw.get("output_dir", "aug-out")
    out = Path(out_value) if output_dir is not None else (
        Path(out_value) if Path(out_value).is_absolute() else base / out_value
    )
    cache_value = cache_dir if cache_dir is not None else raw.get("cache_dir")
    cache: Path | None
    if cache_value is None:
        cache = None
    elif cache_dir is not None or Path(cache_value).is_absolute():
        cache = Path(cache_value)
    else:
        cache = base / cache_value

    seed = raw.get("seed", 0)
    mode = raw.get("mode", "few_shot")
    domain = raw.get("domain", "COVID-19")
    domain_specific_only = bool(raw.get("domain_specific_only", True))
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError(f"seed must be a non-negative integer, got {seed!r}")

    sel = dict(raw.get("selection", {}))
    _take(sel, {"k", "alpha", "t"}, "selection")
    ent = dict(raw.get("entity_aug", {}))
    _take(ent, {"n_new", "strategy", "batch_size", "max_rounds", "normalization"}, "entity_aug")
    inst = dict(raw.get("instance_aug", {}))
    _take(
        inst,
        {"instances_per_entity", "max_attempts", "enable_self_verification", "matcher"},
        "instance_aug",
    )
    llm = dict(raw.get("llm", {}))
    _take(
        llm,
        {"endpoint", "model", "temperature", "max_tokens", "max_retries",
         "retry_backoff", "request_timeout", "concurrency_limit"},
        "llm",
    )
    if cache is not None:
        llm["cache_dir"] = str(cache)

    try:
        # The global seed feeds every seeded component (selection shuffle,
        # mock backend); per-stage seeds are deliberately not configurable.
        selection = SelectionConfig(seed=seed, mode=mode, **sel)
        entity_aug = EntityAugConfig(**ent)
        instance_aug = InstanceAugConfig(**inst)
        llm_config = LlmConfig(**llm)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"invalid config value: {err}") from err

    return PipelineConfig(
        train=train,
        schema_path=schema_path,
        output_dir=out,
        cache_dir=cache,
        dev=dev,
        test=test,
        predictions=predictions,
        seed=seed,
        mode=mode,
        domain=domain,
        domain_specific_only=domain_specific_only,
        selection=selection,
        entity_aug=entity_aug,
        instance_aug=instance_aug,
        llm=llm_config,
        snapshot=raw,
    )


# ---------------------------------------------------------------------------
# Manifests


def file_sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _manifest_path_entry(path: Path, root: Path, declared: str | None = None) -> dict:
    """Hash a file; record it by its path relative to the output root when it
    lives inside, otherwise by the path string the config declared (never an
    absolute host path, which would break cross-machine reproducibility)."""
    try:
        shown = path.resolve().relative_to(root.resolve()).as_posix()
    except ValueError:
        shown = declared if declared is not None else path.name
    return {"path": shown, "sha256": file_sha256(path)}


def write_stage_manifest(
    stage: str,
    cfg: PipelineConfig,
    stage_dir: Path,
    inputs: dict[str, tuple[Path, str | None]],
    outputs: dict[str, Path],
) -> Path:
    manifest = {
        "stage": stage,
        "seed": cfg.seed,
        "versions": {"neraug": __version__},
        "config": cfg.snapshot,
        "inputs": {
            name: _manifest_path_entry(p, cfg.output_dir, declared)
            for name, (p, declared) in inputs.items()
        },
        "outputs": {
            name: _manifest_path_entry(p, cfg.output_dir) for name, p in outputs.items()
        },
    }
    path = stage_dir / "manifest.json"
    path.write_text(
        json.dumps(manifest, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )
    return path


def read_manifest_output(cfg: PipelineConfig, stage: str, name: str) -> Path:
    """Resolve an output file recorded in an earlier stage's manifest."""
    manifest_path = cfg.output_dir / stage / "manifest.json"
    if not manifest_path.exists():
        raise CorpusError(
            f"stage {stage!r} has not run: missing {manifest_path}; "
            f"run the stage or pass the file explicitly"
        )
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    try:
        rel = manifest["outputs"][name]["path"]
    except KeyError as err:
        raise CorpusError(f"manifest {manifest_path} lists no output {name!r}") from err
    return cfg.output_dir / rel


# ---------------------------------------------------------------------------
# Stages


def make_backend(cfg: PipelineConfig, mock: bool):
    if mock:
        return MockBackend(default_scenario(), seed=cfg.seed)
    return OpenAIChatClient(cfg.llm)


def make_clock(mock: bool, logical: bool) -> Clock:
    return LogicalClock() if (mock or logical) else Clock()


def stage_select(cfg: PipelineConfig) -> Path:
    schema = cfg.schema
    corpus = load_conll(cfg.train, schema)
    result = select_demos(corpus, cfg.selection)

    stage_dir = cfg.output_dir / "select"
    stage_dir.mkdir(parents=True, exist_ok=True)
    demos_path = stage_dir / "demos.conll"
    save_conll(Corpus(schema, result.demos), demos_path)
    sidecar_path = stage_dir / "selection.json"
    sidecar = {
        **result.to_dict(),
        "seed": cfg.seed,
        "config": {
            "k": cfg.selection.k,
            "alpha": cfg.selection.alpha,
            "t": cfg.selection.t,
            "mode": cfg.selection.mode,
        },
    }
    sidecar_path.write_text(
        json.dumps(sidecar, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    manifest = write_stage_manifest(
        "select",
        cfg,
        stage_dir,
        inputs={
            "train": (cfg.train, str(cfg.snapshot.get("train"))),
            "schema": (cfg.schema_path, str(cfg.snapshot.get("schema"))),
        },
        outputs={"demos": demos_path, "selection": sidecar_path},
    )
    logger.info(
        "selected %d demos (satisfied=%s, rejected=%d)",
        len(result.demos), result.satisfied, result.rejected_count,
    )
    return manifest


def stage_augment_entities(
    cfg: PipelineConfig, backend, clock: Clock, demos_path: Path | None = None
) -> Path:
    schema = cfg.schema
    if demos_path is None:
        demos_path = read_manifest_output(cfg, "select", "demos")
    demos = load_conll(demos_path, schema)

    pool = EntityPool.from_corpus(demos, cfg.entity_aug.normalization)
    records: list[GenerationRecord] = []
    augment_pool(
        pool,
        cfg.entity_aug,
        backend,
        domain=cfg.domain,
        domain_specific_only=cfg.domain_specific_only,
        records=records,
        clock=clock,
    )

    stage_dir = cfg.output_dir / "entities"
    stage_dir.mkdir(parents=True, exist_ok=True)
    pool_path = stage_dir / "pool.json"
    pool.save(pool_path)
    records_path = stage_dir / "records.jsonl"
    write_records(records, records_path)
    manifest = write_stage_manifest(
        "entities",
        cfg,
        stage_dir,
        inputs={
            "demos": (demos_path, "select/demos.conll"),
            "schema": (cfg.schema_path, str(cfg.snapshot.get("schema"))),
        },
        outputs={"pool": pool_path, "records": records_path},
    )
    logger.info("pool now holds %d surfaces (%d calls)", pool.size(), len(records))
    return manifest


def stage_augment_instances(
    cfg: PipelineConfig,
    backend,
    clock: Clock,
    demos_path: Path | None = None,
    pool_path: Path | None = None,
) -> Path:
    schema = cfg.schema
    if demos_path is None:
        demos_path = read_manifest_output(cfg, "select", "demos")
    if pool_path is None:
        pool_path = read_manifest_output(cfg, "entities", "pool")
    demos = load_conll(demos_path, schema)
    pool = EntityPool.load(pool_path, schema, cfg.entity_aug.normalization)

    generated, records = augment_corpus(
        demos,
        pool,
        cfg.instance_aug,
        backend,
        domain=cfg.domain,
        domain_specific_only=cfg.domain_specific_only,
        clock=clock,
    )

    stage_dir = cfg.output_dir / "instances"
    stage_dir.mkdir(parents=True, exist_ok=True)
    generated_path = stage_dir / "generated.conll"
    save_conll(generated, generated_path)
    records_path = stage_dir / "records.jsonl"
    write_records(records, records_path)
    manifest = write_stage_manifest(
        "instances",
        cfg,
        stage_dir,
        inputs={
            "demos": (demos_path, "select/demos.conll"),
            "pool": (pool_path, "entities/pool.json"),
        },
        outputs={"generated": generated_path, "records": records_path},
    )
    accepted = sum(1 for r in records if r.verdict == "accepted")
    logger.info(
        "instance augmentation: %d accepted / %d attempts", accepted, len(records)
    )
    return manifest


def stage_merge(
    cfg: PipelineConfig, demos_path: Path | None = None, generated_path: Path | None = None
) -> Path:
    schema = cfg.schema
    if demos_path is None:
        demos_path = read_manifest_output(cfg, "select", "demos")
    if generated_path is None:
        generated_path = read_manifest_output(cfg, "instances", "generated")
    demos = load_conll(demos_path, schema)
    generated = load_conll(generated_path, schema)

    # Demos first, generations appended; exact token-and-tag duplicates drop.
    merged = []
    seen = set()
    for sentence in list(demos.sentences) + list(generated.sentences):
        key = sentence.key()
        if key in seen:
            continue
        seen.add(key)
        merged.append(sentence)

    stage_dir = cfg.output_dir / "merged"
    stage_dir.mkdir(parents=True, exist_ok=True)
    merged_path = stage_dir / "train_augmented.conll"
    save_conll(Corpus(schema, tuple(merged)), merged_path)
    return write_stage_manifest(
        "merged",
        cfg,
        stage_dir,
        inputs={
            "demos": (demos_path, "select/demos.conll"),
            "generated": (generated_path, "instances/generated.conll"),
        },
        outputs={"train_augmented": merged_path},
    )


def stage_score(cfg: PipelineConfig, gold_path: Path, pred_path: Path) -> Path:
    schema = cfg.schema
    gold = load_conll(gold_path, schema)
    pred = load_conll(pred_path, schema, mode="repair")
    report = micro_f1(gold, pred)

    stage_dir = cfg.output_dir / "score"
    stage_dir.mkdir(parents=True, exist_ok=True)
    outputs = {}
    for fmt, suffix in (("tsv", "tsv"), ("json", "json"), ("markdown", "md")):
        p = stage_dir / f"report.{suffix}"
        p.write_text(emit_report(report, fmt), encoding="utf-8")
        outputs[f"report_{fmt}"] = p
    return write_stage_manifest(
        "score",
        cfg,
        stage_dir,
        inputs={"gold": (gold_path, gold_path.name), "pred": (pred_path, pred_path.name)},
        outputs=outputs,
    )


def write_pipeline_manifest(cfg: PipelineConfig, stage_manifests: list[Path]) -> Path:
    files = {}
    for manifest_path in stage_manifests:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        rel_manifest = manifest_path.resolve().relative_to(cfg.output_dir.resolve()).as_posix()
        files[rel_manifest] = file_sha256(manifest_path)
        for entry in manifest["outputs"].values():
            files[entry["path"]] = entry["sha256"]
    payload = {
        "stage": "pipeline",
        "seed": cfg.seed,
        "versions": {"neraug": __version__},
        "config": cfg.snapshot,
        "files": dict(sorted(files.items())),
    }
    path = cfg.output_dir / "pipeline.manifest.json"
    path.write_text(
        json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )
    return path


# ---------------------------------------------------------------------------
# Subcommands


def cmd_stats(args: argparse.Namespace) -> int:
    schema = load_schema(args.schema) if args.schema else None
    corpus = load_conll(args.corpus, schema)
    counts = entity_type_counts(corpus)
    payload = {
        "sentences": len(corpus),
        "tokens": sum(len(s) for s in corpus.sentences),
        "entity_mentions": sum(counts.values()),
        "per_type": counts,
    }
    if args.json:
        print(json.dumps(payload, indent=2, sort_keys=True))
    else:
        print(f"sentences:       {payload['sentences']}")
        print(f"tokens:          {payload['tokens']}")
        print(f"entity mentions: {payload['entity_mentions']}")
        for name, count in counts.items():
            print(f"  {name}: {count}")
    return EXIT_OK


def cmd_select(args: argparse.Namespace) -> int:
    cfg = load_pipeline_config(args.config, args.out, args.cache_dir)
    stage_select(cfg)
    print(f"wrote {cfg.output_dir / 'select'}")
    return EXIT_OK


def cmd_augment_entities(args: argparse.Namespace) -> int:
    cfg = load_pipeline_config(args.config, args.out, args.cache_dir)
    backend = make_backend(cfg, args.mock)
    clock = make_clock(args.mock, args.logical_clock)
    demos = Path(args.demos) if args.demos else None
    stage_augment_entities(cfg, backend, clock, demos)
    print(f"wrote {cfg.output_dir / 'entities'}")
    return EXIT_OK


def cmd_augment_instances(args: argparse.Namespace) -> int:
    cfg = load_pipeline_config(args.config, args.out, args.cache_dir)
    backend = make_backend(cfg, args.mock)
    clock = make_clock(args.mock, args.logical_clock)
    demos = Path(args.demos) if args.demos else None
    pool = Path(args.pool) if args.pool else None
    stage_augment_instances(cfg, backend, clock, demos, pool)
    print(f"wrote {cfg.output_dir / 'instances'}")
    return EXIT_OK


def cmd_score(args: argparse.Namespace) -> int:
    schema = load_schema(args.schema) if args.schema else None
    gold = load_conll(args.gold, schema)
    reports = []
    for pred_path in args.pred:
        pred = load_conll(pred_path, schema, mode="repair")
        reports.append(micro_f1(gold, pred))
    report = reports[0] if len(reports) == 1 else aggregate_runs(reports)
    rendered = emit_report(report, args.format)
    if args.out:
        Path(args.out).write_text(rendered, encoding="utf-8")
        print(f"wrote {args.out}")
    else:
        print(rendered, end="")
    return EXIT_OK


def cmd_pipeline(args: argparse.Namespace) -> int:
    cfg = load_pipeline_config(args.config, args.out, args.cache_dir)
    backend = make_backend(cfg, args.mock)
    clock = make_clock(args.mock, args.logical_clock)
    cfg.output_dir.mkdir(parents=True, exist_ok=True)

    manifests = [stage_select(cfg)]
    manifests.append(stage_augment_entities(cfg, backend, clock))
    manifests.append(stage_augment_instances(cfg, backend, clock))
    manifests.append(stage_merge(cfg))
    if cfg.test is not None and cfg.predictions is not None:
        manifests.append(stage_score(cfg, cfg.test, cfg.predictions))
    manifest = write_pipeline_manifest(cfg, manifests)
    print(f"wrote {manifest}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="neraug",
        description="Entity-knowledge data augmentation for BIO-tagged NER corpora.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument(
        "-v", "--verbose", action="store_true", help="log progress to stderr"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config_args(p: argparse.ArgumentParser, backend: bool = False) -> None:
        p.add_argument("--config", required=True, help="pipeline config JSON")
        p.add_argument("--out", help="output directory (overrides config)")
        p.add_argument("--cache-dir", help="response cache directory (overrides config)")
        if backend:
            p.add_argument(
                "--mock", action="store_true",
                help="use the seeded deterministic mock backend instead of HTTP",
            )
            p.add_argument(
                "--logical-clock", action="store_true",
                help="stamp audit records with a deterministic logical clock",
            )

    p = sub.add_parser("stats", help="sentence/token/entity counts of a corpus")
    p.add_argument("corpus", help="CoNLL file")
    p.add_argument("--schema", help="schema JSON (inferred from tags if omitted)")
    p.add_argument("--json", action="store_true", help="machine-readable output")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("select", help="select demonstration sentences")
    add_config_args(p)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("augment-entities", help="expand the entity pool via the LLM")
    add_config_args(p, backend=True)
    p.add_argument("--demos", help="demo CoNLL file (default: from the select manifest)")
    p.set_defaults(func=cmd_augment_entities)

    p = sub.add_parser("augment-instances", help="generate new tagged sentences")
    add_config_args(p, backend=True)
    p.add_argument("--demos", help="demo CoNLL file (default: from the select manifest)")
    p.add_argument("--pool", help="entity pool JSON (default: from the entities manifest)")
    p.set_defaults(func=cmd_augment_instances)

    p = sub.add_parser("score", help="entity-level micro F1 of predictions vs gold")
    p.add_argument("--gold", required=True, help="gold CoNLL file")
    p.add_argument(
        "--pred", required=True, nargs="+",
        help="predicted CoNLL file(s); several aggregate to mean±std",
    )
    p.add_argument("--schema", help="schema JSON")
    p.add_argument(
        "--format", choices=("tsv", "json", "markdown"), default="tsv",
        help="report format (default tsv)",
    )
    p.add_argument("--out", help="write the report here instead of stdout")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("pipeline", help="select → augment → merge, end to end")
    add_config_args(p, backend=True)
    p.set_defaults(func=cmd_pipeline)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (CorpusError, FileNotFoundError, IsADirectoryError, PermissionError) as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except (BackendError, EntityAugError) as err:
        print(f"backend error: {err}", file=sys.stderr)
        return EXIT_BACKEND


if __name__ == "__main__":
    sys.exit(main())
