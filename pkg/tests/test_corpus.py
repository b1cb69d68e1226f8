import json
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from patentfig.corpus import (
    CATEGORY_ORDER,
    BoundingBox,
    CorpusManifest,
    ElementCategory,
    ManifestError,
    ManifestRecord,
    check_split_exclusivity,
    compute_stats,
    load_manifest,
    save_manifest,
)
from tests.conftest import DATA
from tests.oracles.corpus_sums import exclusivity


def rec(pid, fid, split, brief="a b", detailed="c d e"):
    return ManifestRecord(pid, fid, "FIG. 1", 100, 80, split, brief, detailed)


def test_box_validation():
    with pytest.raises(ValueError):
        BoundingBox(10, 0, 5, 5)
    with pytest.raises(ValueError):
        BoundingBox(0, 0, 1001, 5)
    with pytest.raises(ValueError):
        BoundingBox(0.5, 0, 1, 1)
    assert BoundingBox(0, 0, 10, 20).area == 200


def test_five_categories_in_column_order():
    assert [c.value for c in CATEGORY_ORDER] == ["Node", "NodeLabel", "FigureLabel", "Text", "Arrow"]
    assert ElementCategory.ARROW.column == 4


def test_empty_file_gives_empty_manifest(tmp_path):
    p = tmp_path / "m.jsonl"
    p.write_text("")
    assert len(load_manifest(p)) == 0


def test_shipped_fixture_has_20_records_over_3_splits():
    m = load_manifest(DATA / "manifest_20.jsonl")
    assert len(m) == 20
    assert m.splits == {"train", "validation", "test"}


def test_duplicate_id_names_the_id(tmp_path):
    row = rec("P1", "P1-F1", "train").to_dict()
    p = tmp_path / "m.jsonl"
    p.write_text(json.dumps(row) + "\n" + json.dumps(row) + "\n")
    with pytest.raises(ManifestError, match="P1-F1"):
        load_manifest(p)


def test_malformed_line_reports_line_number(tmp_path):
    p = tmp_path / "m.jsonl"
    good = json.dumps(rec("P1", "P1-F1", "train").to_dict())
    p.write_text(good + "\n" + '{"patent_id": "x"}\n')
    with pytest.raises(ManifestError, match=":2:"):
        load_manifest(p)


def test_round_trip(tmp_path):
    m = load_manifest(DATA / "manifest_20.jsonl")
    out = tmp_path / "copy.jsonl"
    save_manifest(m, out)
    assert load_manifest(out).records == m.records


def test_single_figure_average(tok):
    brief = "one two three"
    stats = compute_stats([rec("P", "F", "train", brief=brief)], tok)
    assert stats["train"].avg_brief_tokens == float(tok.count(brief))
    assert stats["test"].empty and stats["test"].avg_brief_tokens is None


def test_stats_match_frozen_oracle(tok):
    expected = json.loads((DATA / "manifest_20_stats.json").read_text())
    assert expected["tokenizer"] == tok.tokenizer_id
    got = compute_stats(load_manifest(DATA / "manifest_20.jsonl"), tok)
    for split, exp in expected["splits"].items():
        row = got[split].rounded()
        for key, value in exp.items():
            assert row[key] == value, (split, key)


def test_stats_permutation_invariant(tok):
    records = list(load_manifest(DATA / "manifest_20.jsonl"))
    base = compute_stats(records, tok)
    rng = random.Random(3)
    for _ in range(5):
        rng.shuffle(records)
        assert compute_stats(records, tok) == base


def test_exclusivity_examples():
    clean = [rec("A", "A1", "train"), rec("B", "B1", "test")]
    assert check_split_exclusivity(clean) == []
    leaky = clean + [rec("A", "A2", "test")]
    assert check_split_exclusivity(leaky) == ["A"]


@settings(max_examples=200)
@given(st.lists(st.tuples(st.integers(0, 15), st.sampled_from(["train", "validation", "test"])), max_size=40))
def test_exclusivity_matches_set_oracle(rows):
    records = [rec(f"P{p}", f"F{i}", s) for i, (p, s) in enumerate(rows)]
    expected = exclusivity([{"patent_id": r.patent_id, "split": r.split} for r in records])
    assert check_split_exclusivity(CorpusManifest(tuple(records))) == expected
