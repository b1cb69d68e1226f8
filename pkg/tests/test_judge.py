import httpx
import pytest
from hypothesis import given
from hypothesis import strategies as st

from patentfig.judge import (
    CRITERIA,
    ChatRequest,
    HttpChatTransport,
    JudgeError,
    JudgeParseError,
    JudgeRequest,
    JudgeSample,
    JudgeScores,
    RateLimiter,
    ReplayTransport,
    build_judge_prompt,
    corpus_mean_row,
    format_judge_scores,
    judge_corpus,
    judge_sample,
    load_prompt_template,
    parse_judge_scores,
    select_samples,
)
from tests.conftest import DATA

GT = "FIG. 1 is a block diagram of a system."
GEN = "FIG. 1 shows a system block diagram."
IMG = "https://example.org/fig1.png"


def reply(*values):
    return format_judge_scores(JudgeScores(*values))


@pytest.mark.parametrize("kind", ["brief", "detailed"])
def test_variant0_matches_golden(kind):
    system, user = build_judge_prompt(JudgeRequest(IMG, GT, GEN, kind, 0))
    golden = (DATA / "judge_golden" / f"variant0_{kind}.txt").read_text(encoding="utf-8")
    assert f"[system]\n{system}\n[user]\n{user}\n" == golden


def test_prompt_contents():
    system, user = build_judge_prompt(JudgeRequest(IMG, GT, GEN, "brief", 0))
    assert "Relevance: <your score>" in user.splitlines()
    assert f"IMAGE:{IMG}" in user and f"GROUND TRUTH:{GT}" in user and f"GENERATED DESCRIPTION:{GEN}" in user
    assert "#gt_desc#" not in user
    dsys, duser = build_judge_prompt(JudgeRequest(IMG, GT, GEN, "detailed", 0))
    assert "brief" not in dsys and dsys == system.replace("brief", "detailed")
    assert duser == user


def test_all_variants_carry_placeholders_and_format():
    for v in range(5):
        system, user = load_prompt_template(v)
        for ph in ("#img_url#", "#gt_desc#", "#gen_desc#"):
            assert user.count(ph) == 1
        for c in CRITERIA:
            assert f"{c.capitalize()}: <your score>" in user
        assert "<results></results>" in user
        assert "brief" in system


def test_bad_variant_and_empty_texts():
    with pytest.raises(ValueError):
        JudgeRequest(IMG, GT, GEN, "brief", 5)
    with pytest.raises(ValueError):
        JudgeRequest(IMG, "", GEN)
    with pytest.raises(ValueError):
        JudgeRequest(IMG, GT, GEN, "other")


def test_parse_examples():
    text = "Thoughts first.\n<RESULTS>\n relevance : 2\nAccuracy: 1\nCompleteness:0\nCoherence: 2\nFluency: 2\nCoverage: 1\n</RESULTS>"
    assert parse_judge_scores(text) == JudgeScores(2, 1, 0, 2, 2, 1)
    with pytest.raises(JudgeParseError, match="not one of"):
        parse_judge_scores(reply(1, 1, 1, 1, 1, 1).replace("Accuracy: 1", "Accuracy: 3"))
    with pytest.raises(JudgeParseError, match="coverage"):
        parse_judge_scores(reply(1, 1, 1, 1, 1, 1).replace("Coverage: 1", ""))
    with pytest.raises(JudgeParseError) as err:
        parse_judge_scores("no tags")
    assert err.value.raw == "no tags"


def test_last_results_block_wins():
    text = "Format: <results>Relevance: <your score></results>\n" + reply(0, 1, 2, 0, 1, 2)
    assert parse_judge_scores(text) == JudgeScores(0, 1, 2, 0, 1, 2)


@given(st.lists(st.integers(0, 2), min_size=6, max_size=6))
def test_parse_format_round_trip(values):
    scores = JudgeScores(*values)
    assert parse_judge_scores(format_judge_scores(scores)) == scores


def scripted(per_variant):
    return ReplayTransport({(IMG, v): [r] for v, r in enumerate(per_variant)})


def test_constant_scores_average_exactly():
    out = judge_sample(IMG, GT, GEN, "brief", scripted([reply(2, 2, 2, 2, 2, 2)] * 5), sleep=lambda s: None)
    assert out.scores.as_dict() == {c: 2.0 for c in CRITERIA}
    assert out.variants_ok == 5 and not out.flagged


def test_hand_arithmetic_average():
    rel = (1, 1, 2, 1, 2)
    t = scripted([reply(r, 0, 0, 0, 0, 0) for r in rel])
    out = judge_sample(IMG, GT, GEN, "brief", t, sleep=lambda s: None)
    assert out.scores.relevance == 1.4
    assert [c.variant for c in t.calls] == [0, 1, 2, 3, 4]
    assert all(c.temperature == 0.0 for c in t.calls)


def test_failed_variant_excluded_and_flagged():
    script = {(IMG, v): [reply(1, 1, 1, 1, 1, 1)] for v in range(5)}
    script[(IMG, 3)] = [JudgeError("boom")]
    sleeps = []
    out = judge_sample(IMG, GT, GEN, "brief", ReplayTransport(script), max_retries=2, backoff=0.5, sleep=sleeps.append)
    assert out.scores.as_dict() == {c: 1.0 for c in CRITERIA}
    assert out.variants_ok == 4 and out.failed_variants == [3] and out.flagged
    assert sleeps == [0.5, 1.0]


def test_retry_recovers_from_transient_failure():
    script = {(IMG, v): [reply(2, 2, 2, 2, 2, 2)] for v in range(5)}
    script[(IMG, 0)] = ["garbage", reply(0, 0, 0, 0, 0, 0)]
    out = judge_sample(IMG, GT, GEN, "brief", ReplayTransport(script), sleep=lambda s: None)
    assert not out.flagged
    assert out.scores.relevance == pytest.approx(1.6)


def test_all_variants_failing_raises():
    t = ReplayTransport(lambda req: "no results here")
    with pytest.raises(JudgeError, match="all 5"):
        judge_sample(IMG, GT, GEN, "brief", t, max_retries=1, sleep=lambda s: None)


def test_corpus_order_and_mean_row():
    def fn(req: ChatRequest):
        score = int(req.image_ref[-1]) % 3
        return reply(*([score] * 6))

    samples = [JudgeSample(f"s{i}", f"img{i}", GT, GEN) for i in range(7)]
    outs = judge_corpus(samples, "brief", ReplayTransport(fn), max_workers=4, sleep=lambda s: None)
    assert [o.scores.relevance for o in outs] == [float(i % 3) for i in range(7)]
    row = corpus_mean_row(outs)
    assert row["sample_count"] == 7 and row["relevance"] == round(sum(i % 3 for i in range(7)) / 7, 2)


def test_corpus_keeps_sample_errors_in_place():
    def fn(req):
        if req.image_ref == "bad":
            raise JudgeError("down")
        return reply(1, 1, 1, 1, 1, 1)

    samples = [JudgeSample("a", "ok", GT, GEN), JudgeSample("b", "bad", GT, GEN)]
    outs = judge_corpus(samples, "brief", ReplayTransport(fn), max_retries=0, sleep=lambda s: None)
    assert not isinstance(outs[0], Exception) and isinstance(outs[1], JudgeError)


def test_select_samples_seeded():
    ids = [f"f{i}" for i in range(50)]
    a = select_samples(ids, 10, seed=1)
    assert a == select_samples(list(reversed(ids)), 10, seed=1)
    assert len(a) == 10 and a == sorted(a)
    assert select_samples(ids, None) == sorted(ids)


def test_http_transport_payload_and_credentials(monkeypatch):
    monkeypatch.delenv("JUDGE_API_KEY", raising=False)
    with pytest.raises(JudgeError, match="JUDGE_API_KEY"):
        HttpChatTransport("http://judge.invalid/v1/chat/completions")
    seen = {}

    def handler(request: httpx.Request):
        seen["auth"] = request.headers["authorization"]
        seen["body"] = request.read()
        return httpx.Response(200, json={"choices": [{"message": {"content": reply(2, 1, 2, 1, 2, 1)}}]})

    monkeypatch.setenv("JUDGE_API_KEY", "secret")
    client = httpx.Client(transport=httpx.MockTransport(handler))
    t = HttpChatTransport("http://judge.invalid/v1/chat/completions", client=client)
    out = judge_sample(IMG, GT, GEN, "brief", t, model="m", sleep=lambda s: None)
    assert out.scores == JudgeScores(2, 1, 2, 1, 2, 1)
    assert seen["auth"] == "Bearer secret"
    assert b'"temperature": 0.0' in seen["body"] or b'"temperature":0.0' in seen["body"]
    assert IMG.encode() in seen["body"]


def test_rate_limiter_spacing():
    now = [0.0]
    slept = []
    rl = RateLimiter(1.0, clock=lambda: now[0], sleep=slept.append)
    for _ in range(3):
        rl.wait()
    assert slept == [1.0, 2.0]
