from __future__ import annotations

import pytest

from nertrainer import (
    DataError,
    bio_labels,
    check_labels,
    extract_spans,
    micro_f1,
    parse_conll,
    read_conll,
    read_schema,
    repair_bio,
    serialize_conll,
    write_conll,
)


def test_bio_labels_order_and_content():
    assert bio_labels(["drug", "disease"]) == [
        "O", "B-drug", "I-drug", "B-disease", "I-disease",
    ]


def test_parse_two_sentences():
    text = "took\tO\npaxlovid\tB-drug\n\nfever\tB-symptom\n\n"
    assert parse_conll(text) == [
        (["took", "paxlovid"], ["O", "B-drug"]),
        (["fever"], ["B-symptom"]),
    ]


def test_parse_handles_missing_trailing_blank_line():
    assert parse_conll("a\tO") == [(["a"], ["O"])]


@pytest.mark.parametrize(
    "text, fragment",
    [
        ("just-one-column\n", "line 1"),
        ("a\tO\tb\n", "line 1"),
        ("\tO\n", "empty token surface"),
        ("a\tB\n", "malformed tag 'B'"),
        ("a\tX-drug\n", "malformed tag"),
        ("a\tB-\n", "malformed tag"),
    ],
)
def test_parse_rejects_malformed_lines(text, fragment):
    with pytest.raises(DataError, match=fragment):
        parse_conll(text)


def test_serialize_round_trips_and_ends_each_block_with_blank_line():
    sentences = [(["a", "b"], ["B-x", "I-x"]), (["c"], ["O"])]
    text = serialize_conll(sentences)
    assert text == "a\tB-x\nb\tI-x\n\nc\tO\n\n"
    assert parse_conll(text) == sentences


def test_file_round_trip(tmp_path):
    sentences = [(["took", "zorvex"], ["O", "B-drug"])]
    path = tmp_path / "c.conll"
    write_conll(sentences, path)
    assert read_conll(path) == sentences


def test_read_schema_names_in_order(tmp_path):
    path = tmp_path / "schema.json"
    path.write_text(
        '[{"name": "drug", "domain_specific": true},'
        ' {"name": "person", "domain_specific": false}]'
    )
    assert read_schema(path) == ["drug", "person"]


@pytest.mark.parametrize(
    "payload, fragment",
    [
        ("not json", "not valid JSON"),
        ("{}", "JSON list"),
        ("[]", "non-empty"),
        ('[{"domain_specific": true}]', "lacks a non-empty 'name'"),
        ('[{"name": ""}]', "lacks a non-empty 'name'"),
        ('[{"name": "a"}, {"name": "a"}]', "duplicate type"),
    ],
)
def test_read_schema_rejects_bad_files(tmp_path, payload, fragment):
    path = tmp_path / "schema.json"
    path.write_text(payload)
    with pytest.raises(DataError, match=fragment):
        read_schema(path)


@pytest.mark.parametrize(
    "tags, expected",
    [
        (["O", "I-x", "I-x"], ["O", "B-x", "I-x"]),
        (["I-x"], ["B-x"]),
        (["B-x", "I-y"], ["B-x", "B-y"]),
        (["B-x", "I-x", "I-x"], ["B-x", "I-x", "I-x"]),
        (["B-x", "O", "I-x"], ["B-x", "O", "B-x"]),
        (["O", "O"], ["O", "O"]),
        ([], []),
    ],
)
def test_repair_bio(tags, expected):
    assert repair_bio(tags) == expected


def test_check_labels_rejects_out_of_schema_tag():
    labels = bio_labels(["drug"])
    check_labels([(["a"], ["B-drug"])], labels)
    with pytest.raises(DataError, match="'B-alien' is outside"):
        check_labels([(["a", "b"], ["O", "B-alien"])], labels)


def test_extract_spans_end_exclusive():
    assert extract_spans(["B-x", "I-x", "O", "B-y"]) == [(0, 2, "x"), (3, 4, "y")]


def test_micro_f1_hand_counts():
    gold = [(["a", "b", "c"], ["B-x", "I-x", "O"]), (["d"], ["B-y"])]
    pred = [(["a", "b", "c"], ["B-x", "O", "B-y"]), (["d"], ["B-y"])]
    # tp: (d,y) only... sentence 1 gold span (0,2,x) vs pred spans (0,1,x),(2,3,y)
    precision, recall, f1 = micro_f1(gold, pred)
    assert (precision, recall) == (1 / 3, 1 / 2)
    assert abs(f1 - 0.4) < 1e-12


def test_micro_f1_rejects_misaligned_inputs():
    with pytest.raises(DataError, match="sentences"):
        micro_f1([(["a"], ["O"])], [])
    with pytest.raises(DataError, match="token counts"):
        micro_f1([(["a"], ["O"])], [(["a", "b"], ["O", "O"])])
