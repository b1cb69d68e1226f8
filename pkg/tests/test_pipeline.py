import json
import os

import pytest

from patentfig import pipeline as pl
from patentfig.corpus import load_manifest
from tests.conftest import read_jsonl, write_config


@pytest.fixture
def run_dir(fixture_corpus, tmp_path):
    cfg = pl.load_config(write_config(fixture_corpus, tmp_path / "out"))
    pl.run_pipeline(cfg)
    return fixture_corpus, cfg, tmp_path / "out"


def test_extract_matches_golden(run_dir):
    corpus, _, out = run_dir
    golden = {r["figure_id"]: r for r in read_jsonl(corpus.root / "golden" / "descriptions.jsonl")}
    got = {r.figure_id: r for r in load_manifest(out / "manifest.jsonl")}
    assert set(got) == set(golden)
    for fid, row in golden.items():
        assert (got[fid].brief, got[fid].detailed) == (row["brief"], row["detailed"])
    unmatched = read_jsonl(out / "unmatched.jsonl")
    expected = read_jsonl(corpus.root / "golden" / "unmatched.jsonl")
    assert [(r["figure_id"], r["reason"]) for r in unmatched] == [(r["figure_id"], r["reason"]) for r in expected]
    assert sorted(p.name for p in (out / "diagnostics").iterdir()) == sorted(f"{p}.json" for p in corpus.patent_ids)


def test_preprocess_matches_golden(run_dir):
    corpus, _, out = run_dir
    drops = {r["figure_id"]: r["reason"] for r in read_jsonl(out / "drop_report.jsonl")}
    assert drops == {r["figure_id"]: r["reason"] for r in read_jsonl(corpus.root / "golden" / "drops.jsonl")}
    orient = {r["figure_id"]: r["choice"] for r in read_jsonl(out / "orientation.jsonl")}
    golden = {r["figure_id"]: r["choice"] for r in read_jsonl(corpus.root / "golden" / "orientation.jsonl")}
    assert all(orient[k] == v for k, v in golden.items() if k in orient)
    kept = load_manifest(out / "filtered.jsonl")
    assert not set(drops) & {r.figure_id for r in kept}
    # Paths are rewritten to stay valid from the output directory.
    for rec in kept:
        assert (kept.base_dir / rec.ocr_path).is_file() and rec.ocr_rotated_path is None


def test_downstream_artifacts(run_dir):
    _, cfg, out = run_dir
    kept = [r.figure_id for r in load_manifest(out / "filtered.jsonl")]
    plans = read_jsonl(out / "mask_plans.jsonl")
    assert [p["figure_id"] for p in plans] == kept
    labels = read_jsonl(out / "patch_labels.jsonl")
    for plan, lab in zip(plans, labels):
        eligible = set().union(*map(set, lab["labels"].values()))
        assert set(plan["r_m"]) <= eligible and len(eligible) == plan["eligible_count"]
    stats = json.loads((out / "stats.json").read_text())
    assert stats["exclusivity_violations"] == []
    report = json.loads((out / "eval_detailed.json").read_text())
    assert report["metadata"]["clip_limit"] == 500 and report["sample_count"] > 0


def test_rerun_is_up_to_date_and_touch_reruns(run_dir):
    corpus, cfg, out = run_dir
    before = (out / "mask_plans.jsonl").read_bytes()
    results = pl.run_pipeline(cfg)
    assert {r.stage: r.status for r in results} == {
        "extract": "up to date", "preprocess": "up to date", "mask-plan": "up to date",
        "labels": "up to date", "stats": "up to date", "eval": "up to date", "judge": "skipped",
    }
    later = max(p.stat().st_mtime_ns for p in out.iterdir() if p.is_file()) + 10**9
    os.utime(out / "manifest.jsonl", ns=(later, later))
    statuses = {r.stage: r.status for r in pl.run_pipeline(cfg)}
    assert statuses["preprocess"] == "ran" and statuses["mask-plan"] == "ran"
    assert (out / "mask_plans.jsonl").read_bytes() == before
    assert {r.status for r in pl.run_pipeline(cfg, ["stats"], force=True)} == {"ran"}


def test_worker_count_does_not_change_output(fixture_corpus, tmp_path):
    blobs = []
    for workers in (1, 8):
        out = tmp_path / f"w{workers}"
        cfg = pl.load_config(write_config(fixture_corpus, out, workers=workers))
        pl.run_pipeline(cfg, ["extract", "preprocess", "mask-plan", "labels"])
        blobs.append(((out / "mask_plans.jsonl").read_bytes(), (out / "patch_labels.jsonl").read_bytes()))
    assert blobs[0] == blobs[1]


def test_config_validation(fixture_corpus, tmp_path):
    path = write_config(fixture_corpus, tmp_path / "out", vocab="missing.txt")
    with pytest.raises(pl.ConfigError, match="vocabulary"):
        pl.load_config(path)
    assert not (tmp_path / "out").exists()
    base = write_config(fixture_corpus, tmp_path / "out2")
    for bad in (["token_ratio=1.5"], ["patch_size=10"], ["seed=-1"], ["bogus=1"], ["patch_scope=some"]):
        with pytest.raises(pl.ConfigError):
            pl.load_config(base, bad)
    cfg = pl.load_config(base, ["seed=99", "judge.model=other"])
    assert cfg.seed == 99 and cfg.judge.model == "other"


def test_stage_failure_halts_downstream(run_dir, monkeypatch):
    _, cfg, out = run_dir

    def boom(*a, **k):
        raise RuntimeError("injected")

    monkeypatch.setattr(pl, "stage_mask_plan", boom)
    (out / "patch_labels.jsonl").unlink()
    with pytest.raises(pl.StageError) as err:
        pl.run_pipeline(cfg, force=True)
    assert err.value.stage == "mask-plan"
    assert not (out / "patch_labels.jsonl").exists()


def test_atomic_output_leaves_partial_on_error(tmp_path):
    target = tmp_path / "x.jsonl"
    with pytest.raises(ValueError):
        with pl.atomic_output(target) as fh:
            fh.write("half")
            raise ValueError
    assert not target.exists()
    assert (tmp_path / "x.jsonl.partial").read_text() == "half"


def test_judge_stage_with_replay(fixture_corpus, tmp_path):
    preds = pl.read_predictions(fixture_corpus.root / "predictions_brief.jsonl")
    replay = tmp_path / "replay.jsonl"
    with open(replay, "w") as fh:
        for fid in sorted(preds):
            for v in range(5):
                score = 2 if v < 3 else 1
                body = "<results>\n" + "\n".join(f"{c}: {score}" for c in ("Relevance", "Accuracy", "Completeness", "Coherence", "Fluency", "Coverage")) + "\n</results>"
                fh.write(json.dumps({"image_ref": f"img/{fid}.png", "variant": v, "response": body}) + "\n")
    out = tmp_path / "run"
    cfg = pl.load_config(write_config(
        fixture_corpus, out,
        judge={"replay": str(replay), "image_template": "img/{figure_id}.png", "backoff": 0},
    ))
    pl.run_pipeline(cfg)
    rows = read_jsonl(out / "judge_brief.jsonl")
    assert [r["figure_id"] for r in rows[:-1]] == sorted(preds)
    assert all(r["relevance"] == pytest.approx(1.6) for r in rows[:-1])
    assert rows[-1]["row"] == "mean" and rows[-1]["relevance"] == 1.6
