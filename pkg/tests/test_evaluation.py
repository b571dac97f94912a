"""Entity-level scoring: exact span matching, micro F1, aggregation, reports."""
from __future__ import annotations

import json
import math
import random

import pytest

from neraug import (
    Corpus,
    CorpusError,
    EntitySchema,
    EntityType,
    MatchCounts,
    Score,
    ScoreReport,
    aggregate_runs,
    emit_report,
    match_spans,
    micro_f1,
)
from neraug import TaggedSentence, Token
from neraug.evaluation import count_corpus, parse_tsv_report

from conftest import random_corpus, random_tags, sent


def retag(corpus: Corpus, rng: random.Random) -> Corpus:
    """Predictions for ``corpus``: identical surfaces, fresh random tags."""
    sentences = []
    for s in corpus.sentences:
        tags = random_tags(rng, len(s.tokens), corpus.schema.names())
        sentences.append(
            TaggedSentence(tuple(Token(w, t) for w, t in zip(s.surfaces(), tags)))
        )
    return Corpus(corpus.schema, tuple(sentences))


def two_type_corpus(*pairs):
    """pairs: (text, tags) built over types a / b."""
    schema = EntitySchema((EntityType("a", True), EntityType("b", True)))
    return Corpus(schema, tuple(sent(t, g) for t, g in pairs))


# ---------------------------------------------------------------------------
# Span matching on single sentences


def test_match_spans_hand_counts():
    gold = sent("x y z w", "B-a O B-b O")
    pred = sent("x y z w", "B-a O O B-b")  # one exact hit, one shifted
    counts = match_spans(gold, pred)
    assert counts.tp == {"a": 1}
    assert counts.fp == {"b": 1}
    assert counts.fn == {"b": 1}
    assert counts.totals() == (1, 1, 1)


def test_match_spans_requires_exact_boundaries():
    gold = sent("acute chest pain", "O B-a I-a")
    shorter = sent("acute chest pain", "O B-a O")
    counts = match_spans(gold, shorter)
    assert counts.totals() == (0, 1, 1)  # overlap earns no credit


def test_match_spans_wrong_type_is_fp_plus_fn():
    gold = sent("x", "B-a")
    pred = sent("x", "B-b")
    counts = match_spans(gold, pred)
    assert counts.tp == {}
    assert counts.fp == {"b": 1}
    assert counts.fn == {"a": 1}


def test_match_spans_empty_and_identical():
    empty = sent("no entities here", "O O O")
    assert match_spans(empty, empty).totals() == (0, 0, 0)
    full = sent("x y", "B-a B-b")
    assert match_spans(full, full).totals() == (2, 0, 0)


def test_match_spans_rejects_length_mismatch():
    with pytest.raises(CorpusError):
        match_spans(sent("x y", "O O"), sent("x", "O"))


def test_match_counts_add_accumulates():
    total = MatchCounts()
    total.add(MatchCounts(tp={"a": 1}, fp={"b": 2}))
    total.add(MatchCounts(tp={"a": 3}, fn={"a": 1}))
    assert total.tp == {"a": 4}
    assert total.fp == {"b": 2}
    assert total.fn == {"a": 1}
    assert total.types() == {"a", "b"}


# ---------------------------------------------------------------------------
# Corpus-level micro F1


def test_micro_f1_hand_example():
    gold = two_type_corpus(("x y z w", "B-a O B-b O"))
    pred = two_type_corpus(("x y z w", "B-a O O B-b"))
    report = micro_f1(gold, pred)
    # TP=1 FP=1 FN=1 -> P = R = F1 = 0.5
    assert report.micro == Score(0.5, 0.5, 0.5)
    assert report.per_type["a"] == Score(1.0, 1.0, 1.0)
    assert report.per_type["b"] == Score(0.0, 0.0, 0.0)
    assert report.n_runs == 1


def test_micro_f1_perfect_and_zero():
    gold = two_type_corpus(("x y", "B-a B-b"), ("z", "O"))
    assert micro_f1(gold, gold).micro == Score(1.0, 1.0, 1.0)
    blank = two_type_corpus(("x y", "O O"), ("z", "O"))
    assert micro_f1(gold, blank).micro == Score(0.0, 0.0, 0.0)  # no division crash


def test_micro_f1_rows_follow_schema_order_plus_extras():
    schema = EntitySchema((EntityType("b", True), EntityType("a", True)))
    gold = Corpus(schema, (sent("x", "B-b"),))
    pred = Corpus(schema, (sent("x", "B-a"),))
    report = micro_f1(gold, pred)
    assert list(report.per_type) == ["b", "a"]  # schema order, not alphabetical

    # a predicted type absent from the gold schema still gets a row, after
    pred_extra = Corpus(EntitySchema((EntityType("b", True), EntityType("zz", True))),
                        (sent("x", "B-zz"),))
    report = micro_f1(Corpus(schema, (sent("x", "B-b"),)), pred_extra)
    assert list(report.per_type) == ["b", "a", "zz"]
    assert report.per_type["zz"].precision == 0.0


def test_micro_f1_rejects_misaligned_corpora():
    gold = two_type_corpus(("x y", "O O"))
    pred = two_type_corpus(("x", "O"))
    with pytest.raises(CorpusError):
        micro_f1(gold, pred)
    renamed = two_type_corpus(("x q", "O O"))
    with pytest.raises(CorpusError):
        micro_f1(gold, renamed)


def brute_force_report(gold: Corpus, pred: Corpus):
    """Independent scorer: enumerate every possible span of every sentence."""

    def spans_of(sentence):
        tags = sentence.tags()
        found = set()
        for start in range(len(tags)):
            for end in range(start + 1, len(tags) + 1):
                tag = tags[start]
                if not tag.startswith("B-"):
                    continue
                t = tag[2:]
                if all(tags[i] == f"I-{t}" for i in range(start + 1, end)):
                    after = tags[end] if end < len(tags) else "O"
                    if after != f"I-{t}":
                        found.add((start, end, t))
        return found

    tp = fp = fn = 0
    per_type: dict[str, list[int]] = {}
    for g, p in zip(gold.sentences, pred.sentences):
        gs, ps = spans_of(g), spans_of(p)
        for start, end, t in gs | ps:
            row = per_type.setdefault(t, [0, 0, 0])
            if (start, end, t) in gs and (start, end, t) in ps:
                row[0] += 1
            elif (start, end, t) in ps:
                row[1] += 1
            else:
                row[2] += 1
        tp += len(gs & ps)
        fp += len(ps - gs)
        fn += len(gs - ps)
    return tp, fp, fn, per_type


def test_micro_f1_agrees_with_brute_force_on_random_pairs():
    rng = random.Random(2024)
    for trial in range(300):
        gold = random_corpus(rng, n_types=rng.randint(1, 4),
                             n_sentences=rng.randint(1, 6), max_tokens=12)
        pred = retag(gold, rng)
        report = micro_f1(gold, pred)
        tp, fp, fn, per_type = brute_force_report(gold, pred)

        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        assert math.isclose(report.micro.precision, precision, abs_tol=1e-12)
        assert math.isclose(report.micro.recall, recall, abs_tol=1e-12)
        assert math.isclose(report.micro.f1, f1, abs_tol=1e-12)

        counts = count_corpus(gold, pred)
        for t, (btp, bfp, bfn) in per_type.items():
            assert counts.tp.get(t, 0) == btp
            assert counts.fp.get(t, 0) == bfp
            assert counts.fn.get(t, 0) == bfn


def test_f1_never_exceeds_arithmetic_mean_of_p_and_r():
    rng = random.Random(5)
    for _ in range(100):
        gold = random_corpus(rng, n_types=2, n_sentences=3, max_tokens=10)
        m = micro_f1(gold, retag(gold, rng)).micro
        assert m.f1 <= (m.precision + m.recall) / 2 + 1e-12


# ---------------------------------------------------------------------------
# Aggregation


def report_with_micro(p, r, f):
    return ScoreReport(per_type={"a": Score(p, r, f)}, micro=Score(p, r, f))


def test_aggregate_mean_and_sample_std():
    agg = aggregate_runs([report_with_micro(0.4, 0.4, 0.4),
                          report_with_micro(0.6, 0.6, 0.6)])
    assert math.isclose(agg.micro.f1, 0.5)
    assert math.isclose(agg.micro.f1_std, math.sqrt(0.02))  # sample std ~0.14142
    assert agg.n_runs == 2


def test_aggregate_population_std_option():
    agg = aggregate_runs([report_with_micro(0.4, 0.4, 0.4),
                          report_with_micro(0.6, 0.6, 0.6)], ddof=0)
    assert math.isclose(agg.micro.f1_std, 0.1)


def test_aggregate_single_run_has_zero_std():
    agg = aggregate_runs([report_with_micro(0.7, 0.7, 0.7)])
    assert agg.micro.f1 == 0.7
    assert agg.micro.f1_std == 0.0
    assert agg.n_runs == 1


def test_aggregate_is_permutation_invariant():
    runs = [report_with_micro(x, x, x) for x in (0.2, 0.5, 0.9)]
    forward = aggregate_runs(runs)
    backward = aggregate_runs(list(reversed(runs)))
    assert forward == backward


def test_aggregate_guards():
    with pytest.raises(ValueError):
        aggregate_runs([])
    with pytest.raises(ValueError):
        aggregate_runs([report_with_micro(0.5, 0.5, 0.5)], ddof=2)
    other = ScoreReport(per_type={"b": Score(1, 1, 1)}, micro=Score(1, 1, 1))
    with pytest.raises(ValueError):
        aggregate_runs([report_with_micro(0.5, 0.5, 0.5), other])


# ---------------------------------------------------------------------------
# Report emission


def sample_report():
    return ScoreReport(
        per_type={"drug": Score(1.0, 0.5, 2 / 3), "disease": Score(0.0, 0.0, 0.0)},
        micro=Score(0.75, 0.375, 0.5),
    )


def test_tsv_report_shape_and_percentages():
    text = emit_report(sample_report(), format="tsv")
    parsed = parse_tsv_report(text)
    assert list(parsed) == ["drug", "disease", "micro"]
    assert parsed["drug"] == {"precision": "100.00", "recall": "50.00", "f1": "66.67"}
    assert parsed["micro"]["f1"] == "50.00"
    assert text.endswith("\n")


def test_json_report_keeps_raw_fractions():
    payload = json.loads(emit_report(sample_report(), format="json"))
    assert payload["per_type"]["drug"]["recall"] == 0.5
    assert payload["micro"]["precision"] == 0.75
    assert payload["n_runs"] == 1
    assert "f1_std" not in payload["micro"]


def test_markdown_report_has_types_as_columns():
    lines = emit_report(sample_report(), format="markdown").splitlines()
    assert lines[0] == "| metric | drug | disease | micro |"
    assert lines[1] == "|---|---|---|---|"
    assert lines[2].startswith("| precision | 100.00 | 0.00 | 75.00 |")
    assert [ln.split("|")[1].strip() for ln in lines[2:]] == ["precision", "recall", "f1"]


def test_aggregate_cells_render_mean_plus_minus_std():
    agg = aggregate_runs([report_with_micro(0.4, 0.4, 0.4),
                          report_with_micro(0.6, 0.6, 0.6)])
    parsed = parse_tsv_report(emit_report(agg, format="tsv"))
    assert parsed["micro"]["f1"] == "50.00±14.14"
    payload = json.loads(emit_report(agg, format="json"))
    assert math.isclose(payload["micro"]["f1_std"], math.sqrt(0.02))
    assert payload["n_runs"] == 2


def test_unknown_format_rejected():
    with pytest.raises(ValueError):
        emit_report(sample_report(), format="xml")
