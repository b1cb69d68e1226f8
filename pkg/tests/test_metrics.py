import json
import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from patentfig.corpus import CorpusManifest, ManifestRecord
from patentfig.metrics import (
    MissingReferenceError,
    avg_bleu,
    bleu_n,
    bleu_stats,
    evaluate_corpus,
    lcs_length,
    meteor,
    rouge_l,
    rouge_n,
    score_pairs,
    tokenize,
)
from tests.conftest import DATA, read_jsonl
from tests.oracles import text_metrics as oracle


def test_tokenizer_separates_punctuation():
    assert tokenize("FIG. 1 shows A-B, (x_y)!") == ["fig", ".", "1", "shows", "a", "-", "b", ",", "(", "x", "_", "y", ")", "!"]


@settings(max_examples=200)
@given(st.text(alphabet="abcXYZ019 .,;-_!\t\n", max_size=60))
def test_tokenizer_matches_scanner_oracle(text):
    assert tokenize(text) == oracle.tokenize(text)


def test_bleu_examples():
    s = "the cat sat on the mat"
    assert bleu_n(s, s, 4) == pytest.approx(1.0)
    assert bleu_n("a b c d", "a b x d", 2) == pytest.approx(0.5)
    assert bleu_n("a", "a b c d", 1) == pytest.approx(math.exp(-3))
    assert bleu_n("", "a b", 2) == 0.0
    with pytest.raises(ValueError):
        bleu_n("a", "a", 0)


def test_bleu_smoothing_only_above_order_one():
    assert bleu_n("a b c d", "a b x d", 4) == 0.0
    smoothed = bleu_n("a b c d", "a b x d", 4, smoothing=True)
    assert smoothed == pytest.approx((3 / 4 * 2 / 4 * 1 / 3 * 1 / 2) ** 0.25)


def test_avg_bleu_examples():
    assert avg_bleu("w x y z", "w x y z") == pytest.approx(1.0)
    # Too short for 4-grams: BLEU-4 is zero without smoothing.
    assert avg_bleu("x y z", "x y z") == pytest.approx(0.75)
    assert avg_bleu("a b c d", "a b x d") == pytest.approx(0.3125)
    assert avg_bleu("", "a b") == 0.0


def test_rouge_examples():
    assert rouge_n("a b c", "a b c", 1) == pytest.approx(1.0)
    assert rouge_n("a b c d", "a c b d", 1) == pytest.approx(1.0)
    assert rouge_n("a b c d", "a c b d", 2) == 0.0
    assert rouge_n("a", "b", 2) == 0.0
    assert rouge_l("a b c", "a b c") == pytest.approx(1.0)
    assert rouge_l("a b c d", "a c b d") == pytest.approx(0.75)
    assert rouge_l("a b", "c d") == 0.0


def test_meteor_examples():
    s = "one two three four five six"
    assert meteor(s, s) == pytest.approx(1 - 0.5 / 216)
    assert meteor("cats", "cat") == pytest.approx(0.5)
    assert meteor("a b", "c d") == 0.0
    assert meteor("quick", "fast", synonyms={"fast": ["quick"]}) == pytest.approx(0.5)


seqs = st.lists(st.sampled_from("abcde"), max_size=14)


def test_rouge_l_matches_dp_oracle_500_pairs():
    rng = random.Random(11)
    for _ in range(500):
        a = [rng.choice("abcdef") for _ in range(rng.randint(0, 25))]
        b = [rng.choice("abcdef") for _ in range(rng.randint(0, 25))]
        assert lcs_length(a, b) == oracle.lcs_dp(a, b)
        assert rouge_l(a, b) == pytest.approx(oracle.rouge_l(a, b), abs=1e-15)


@settings(max_examples=200)
@given(seqs, seqs)
def test_ngram_counts_match_brute_force(a, b):
    stats = bleu_stats(a, b, 4)
    for n in range(1, 5):
        m, total = oracle.clipped_matches(a, b, n)
        assert stats.matches[n - 1] == m and stats.totals[n - 1] == total


@settings(max_examples=200)
@given(seqs, seqs)
def test_scores_bounded_and_identity(a, b):
    for f in (lambda x, y: bleu_n(x, y, 4), avg_bleu, lambda x, y: rouge_n(x, y, 2), rouge_l, meteor):
        assert 0.0 <= f(a, b) <= 1.0
    if a:
        assert bleu_n(a, a, 1) == pytest.approx(1.0)
        assert rouge_l(a, a) == pytest.approx(1.0)
        assert meteor(a, a) == pytest.approx(1 - 0.5 / len(a) ** 3)
        assert meteor(a, b) == pytest.approx(oracle.meteor(a, b), abs=1e-12)


def test_twenty_pair_fixture_matches_frozen_oracle():
    rows = read_jsonl(DATA / "metric_pairs.jsonl")
    expected = json.loads((DATA / "metric_expected.json").read_text())
    report = score_pairs([(r["candidate"], r["reference"]) for r in rows])
    assert report.sample_count == expected["sample_count"] == 20
    for key in ("b1", "b2", "b3", "b4", "avg_b", "r1", "r2", "rl", "meteor"):
        assert abs(getattr(report, key) - expected[key]) <= 1e-9, key


def test_corpus_scores_order_invariant():
    rows = read_jsonl(DATA / "metric_pairs.jsonl")
    pairs = [(r["candidate"], r["reference"]) for r in rows]
    base = score_pairs(pairs).scores()
    random.Random(4).shuffle(pairs)
    for k, v in score_pairs(pairs).scores().items():
        assert v == pytest.approx(base[k], rel=1e-12)


def test_sentence_mode_differs_from_corpus_mode():
    pairs = [("a b c d", "a b x d"), ("p q r s", "p q r s")]
    corpus = score_pairs(pairs, bleu_mode="corpus")
    sentence = score_pairs(pairs, bleu_mode="sentence")
    assert sentence.b2 == pytest.approx((0.5 + 1.0) / 2)
    assert corpus.b2 != sentence.b2
    with pytest.raises(ValueError):
        score_pairs(pairs, bleu_mode="other")


def manifest(rows):
    return CorpusManifest(tuple(ManifestRecord(f"P{i}", fid, "FIG. 1", 10, 10, split, brief, brief + " more")
                                for i, (fid, split, brief) in enumerate(rows)))


def test_evaluate_corpus_identity_is_100():
    m = manifest([("a", "test", "FIG. 1 shows a router."), ("b", "test", "FIG. 2 is a flowchart.")])
    report = evaluate_corpus({"a": "FIG. 1 shows a router.", "b": "FIG. 2 is a flowchart."}, m, "brief")
    assert set(report.as_percent().values()) <= {100.0, round(100 * report.meteor, 2)}
    assert report.metadata["tokenizer"] == "lower-punct-ws" and report.metadata["meteor"] == "meteor-es"


def test_evaluate_corpus_errors_and_warnings():
    m = manifest([("a", "test", "x y"), ("b", "train", "x y")])
    with pytest.raises(MissingReferenceError, match="zzz"):
        evaluate_corpus({"a": "x y", "zzz": "q"}, m)
    with pytest.warns(UserWarning, match="outside split"):
        report = evaluate_corpus({"a": "x y", "b": "x y"}, m)
    assert report.sample_count == 1
