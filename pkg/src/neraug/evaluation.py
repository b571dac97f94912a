"""Entity-level precision/recall/F1 with exact span-and-type matching.

Spans must agree on (start, end, type) to count as true positives — no
partial or overlap credit. Micro scores are computed from counts summed over
all types and sentences; per-type scores from per-type counts. Multi-run
aggregation reports mean and standard deviation per cell.
"""
from __future__ import annotations

import json
import statistics
from dataclasses import dataclass, field

from .corpus import Corpus, CorpusError, TaggedSentence, extract_spans
from .validation import check_aligned, check_corpus


@dataclass
class MatchCounts:
    """Per-type true-positive / false-positive / false-negative counts."""

    tp: dict[str, int] = field(default_factory=dict)
    fp: dict[str, int] = field(default_factory=dict)
    fn: dict[str, int] = field(default_factory=dict)

    def add(self, other: "MatchCounts") -> None:
        for name, bucket in (("tp", self.tp), ("fp", self.fp), ("fn", self.fn)):
            for t, c in getattr(other, name).items():
                bucket[t] = bucket.get(t, 0) + c

    def totals(self) -> tuple[int, int, int]:
        return sum(self.tp.values()), sum(self.fp.values()), sum(self.fn.values())

    def types(self) -> set[str]:
        return set(self.tp) | set(self.fp) | set(self.fn)


@dataclass(frozen=True)
class Score:
    """One precision/recall/F1 cell; std fields are set by aggregation only."""

    precision: float
    recall: float
    f1: float
    precision_std: float | None = None
    recall_std: float | None = None
    f1_std: float | None = None


@dataclass(frozen=True)
class ScoreReport:
    """Per-type and micro scores; ``n_runs`` > 1 marks an aggregate report."""

    per_type: dict[str, Score]
    micro: Score
    n_runs: int = 1


def _prf(tp: int, fp: int, fn: int) -> Score:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return Score(precision, recall, f1)


def match_spans(gold: TaggedSentence, pred: TaggedSentence) -> MatchCounts:
    """Count exact (start, end, type) matches between one sentence pair.

    Span sets are compared as sets — BIO guarantees spans within a sentence
    are unique — so TP = |gold ∩ pred|, FP = |pred − gold|, FN = |gold − pred|.
    """
    if len(gold.tokens) != len(pred.tokens):
        raise CorpusError(
            f"token count mismatch: {len(gold.tokens)} gold vs {len(pred.tokens)} predicted"
        )
    gold_spans = {(s.start, s.end, s.type) for s in extract_spans(gold)}
    pred_spans = {(s.start, s.end, s.type) for s in extract_spans(pred)}
    counts = MatchCounts()
    for start, end, t in gold_spans & pred_spans:
        counts.tp[t] = counts.tp.get(t, 0) + 1
    for start, end, t in pred_spans - gold_spans:
        counts.fp[t] = counts.fp.get(t, 0) + 1
    for start, end, t in gold_spans - pred_spans:
        counts.fn[t] = counts.fn.get(t, 0) + 1
    return counts


def count_corpus(gold: Corpus, pred: Corpus) -> MatchCounts:
    """Summed match counts over aligned corpora."""
    gold = check_corpus(gold)
    pred = check_corpus(pred)
    check_aligned(gold, pred)
    counts = MatchCounts()
    for g, p in zip(gold.sentences, pred.sentences):
        counts.add(match_spans(g, p))
    return counts


def micro_f1(gold: Corpus, pred: Corpus) -> ScoreReport:
    """Entity-level report: per-type rows in schema order plus micro scores."""
    counts = count_corpus(gold, pred)
    per_type: dict[str, Score] = {}
    for name in gold.schema.names():
        per_type[name] = _prf(
            counts.tp.get(name, 0), counts.fp.get(name, 0), counts.fn.get(name, 0)
        )
    extra = sorted(counts.types() - set(gold.schema.names()))
    for name in extra:  # predicted types outside the gold schema still score
        per_type[name] = _prf(
            counts.tp.get(name, 0), counts.fp.get(name, 0), counts.fn.get(name, 0)
        )
    return ScoreReport(per_type=per_type, micro=_prf(*counts.totals()))


def aggregate_runs(reports: list[ScoreReport], ddof: int = 1) -> ScoreReport:
    """Mean ± std per cell over runs (sample std by default, 0 when n=1).

    All reports must cover the same type set; aggregation is permutation-
    invariant.
    """
    if not reports:
        raise ValueError("need at least one report to aggregate")
    if ddof not in (0, 1):
        raise ValueError(f"ddof must be 0 or 1, got {ddof}")
    type_sets = [tuple(r.per_type.keys()) for r in reports]
    if any(set(ts) != set(type_sets[0]) for ts in type_sets):
        raise ValueError("reports cover different type sets; cannot aggregate")

    def agg(values: list[float]) -> tuple[float, float]:
        mean = statistics.fmean(values)
        if len(values) == 1:
            return mean, 0.0
        std = statistics.stdev(values) if ddof == 1 else statistics.pstdev(values)
        return mean, std

    def agg_score(scores: list[Score]) -> Score:
        p, p_std = agg([s.precision for s in scores])
        r, r_std = agg([s.recall for s in scores])
        f, f_std = agg([s.f1 for s in scores])
        return Score(p, r, f, precision_std=p_std, recall_std=r_std, f1_std=f_std)

    per_type = {
        name: agg_score([r.per_type[name] for r in reports]) for name in type_sets[0]
    }
    micro = agg_score([r.micro for r in reports])
    return ScoreReport(per_type=per_type, micro=micro, n_runs=len(reports))


# ---------------------------------------------------------------------------
# Report emission


def _pct(value: float) -> str:
    return f"{100 * value:.2f}"


def _cell(value: float, std: float | None) -> str:
    return _pct(value) if std is None else f"{_pct(value)}±{_pct(std)}"


def emit_report(report: ScoreReport, format: str = "tsv") -> str:
    """Render a report; deterministic column order (type order, then micro).

    ``tsv`` and ``markdown`` show percentages with 2 decimals (aggregates as
    ``mean±std``); ``json`` keeps raw fractions for machine consumption.
    """
    if format == "json":
        return _emit_json(report)
    if format == "tsv":
        return _emit_tsv(report)
    if format == "markdown":
        return _emit_markdown(report)
    raise ValueError(f"unknown report format: {format!r}")


def _rows(report: ScoreReport) -> list[tuple[str, Score]]:
    return list(report.per_type.items()) + [("micro", report.micro)]


def _emit_tsv(report: ScoreReport) -> str:
    lines = ["type\tprecision\trecall\tf1"]
    for name, score in _rows(report):
        lines.append(
            f"{name}\t{_cell(score.precision, score.precision_std)}"
            f"\t{_cell(score.recall, score.recall_std)}"
            f"\t{_cell(score.f1, score.f1_std)}"
        )
    return "\n".join(lines) + "\n"


def _emit_json(report: ScoreReport) -> str:
    def score_dict(score: Score) -> dict:
        out = {"precision": score.precision, "recall": score.recall, "f1": score.f1}
        if score.f1_std is not None:
            out.update(
                precision_std=score.precision_std,
                recall_std=score.recall_std,
                f1_std=score.f1_std,
            )
        return out

    payload = {
        "per_type": {name: score_dict(s) for name, s in report.per_type.items()},
        "micro": score_dict(report.micro),
        "n_runs": report.n_runs,
    }
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def _emit_markdown(report: ScoreReport) -> str:
    """Types as columns, one row per metric — the usual benchmark-table shape."""
    names = [name for name, _ in _rows(report)]
    header = "| metric | " + " | ".join(names) + " |"
    rule = "|---" * (len(names) + 1) + "|"
    lines = [header, rule]
    for metric, attr, std_attr in (
        ("precision", "precision", "precision_std"),
        ("recall", "recall", "recall_std"),
        ("f1", "f1", "f1_std"),
    ):
        cells = [
            _cell(getattr(score, attr), getattr(score, std_attr))
            for _, score in _rows(report)
        ]
        lines.append(f"| {metric} | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def parse_tsv_report(text: str) -> dict[str, dict[str, str]]:
    """Parse an emitted TSV report back to {row: {column: cell}} (round-trip aid)."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    header = lines[0].split("\t")
    out: dict[str, dict[str, str]] = {}
    for line in lines[1:]:
        fields = line.split("\t")
        out[fields[0]] = dict(zip(header[1:], fields[1:]))
    return out
