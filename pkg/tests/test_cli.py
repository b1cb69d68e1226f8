import json

import numpy as np
import pytest

from patentfig.cli import main
from patentfig.losses import EPS
from tests.conftest import read_jsonl, write_config


def run(args, capsys):
    code = main(args)
    out, err = capsys.readouterr()
    return code, out, err


def test_usage_errors(capsys):
    assert run([], capsys)[0] == 2
    assert run(["mask-plan", "--manifest", "x", "--token-ratio", "2"], capsys)[0] == 2
    assert run(["--version"], capsys)[0] == 0


def test_stepwise_subcommands(fixture_corpus, tmp_path, capsys):
    root = fixture_corpus.root
    man = tmp_path / "manifest.jsonl"
    code, _, err = run(["extract", "--figures", str(fixture_corpus.manifest_path), "--html-dir", str(root / "html"),
                        "--out", str(man), "--diagnostics", str(tmp_path / "diag")], capsys)
    assert code == 0
    event = json.loads(err.strip().splitlines()[-1])
    assert event["event"] == "extracted" and event["level"] == "info"

    report = tmp_path / "drops.jsonl"
    assert run(["preprocess", "--manifest", str(man), "--min-year", "2005", "--report", str(report)], capsys)[0] == 0
    assert {r["figure_id"]: r["reason"] for r in read_jsonl(report)} == {
        r["figure_id"]: r["reason"] for r in read_jsonl(root / "golden" / "drops.jsonl")}
    filtered = tmp_path / "filtered.jsonl"

    code, out, _ = run(["mask-plan", "--manifest", str(filtered), "--token-ratio", "0.30", "--patch-ratio", "0.40",
                        "--seed", "18446744073709551615"], capsys)
    assert code == 0
    plans = [json.loads(line) for line in out.splitlines()]
    assert plans and all(len(p["r_m"]) == max(1, (4 * p["eligible_count"] + 5) // 10) for p in plans)

    assert run(["labels", "--manifest", str(filtered), "--out", str(tmp_path / "labels.jsonl")], capsys)[0] == 0
    assert len(read_jsonl(tmp_path / "labels.jsonl")) == len(plans)

    code, out, _ = run(["stats", "--manifest", str(filtered)], capsys)
    assert code == 0 and json.loads(out)["splits"]["test"]["image_count"] > 0

    rep = tmp_path / "eval.json"
    assert run(["eval", "--manifest", str(filtered), "--preds", str(root / "predictions_detailed.jsonl"),
                "--field", "detailed", "--report", str(rep)], capsys)[0] == 0
    data = json.loads(rep.read_text())
    assert data["metadata"]["clip_limit"] == 500 and data["metadata"]["smoothing"] is False
    assert set(data["percent"]) == {"b2", "b4", "avg_b", "r1", "r2", "rl", "meteor"}


def test_data_errors(tmp_path, capsys):
    assert run(["stats", "--manifest", str(tmp_path / "nope.jsonl")], capsys)[0] == 4
    bad = tmp_path / "bad.jsonl"
    bad.write_text("{not json\n")
    code, _, err = run(["stats", "--manifest", str(bad)], capsys)
    assert code == 4 and "bad.jsonl:1" in err


def test_exclusivity_violation_exit_code(tmp_path, capsys):
    rows = [{"patent_id": "P", "figure_id": f"F{i}", "figure_label": None, "image_width": 1, "image_height": 1,
             "split": s, "brief": "x", "detailed": "y", "ocr_path": None, "elements_path": None}
            for i, s in enumerate(["train", "test"])]
    m = tmp_path / "m.jsonl"
    m.write_text("".join(json.dumps(r) + "\n" for r in rows))
    code, out, _ = run(["stats", "--manifest", str(m)], capsys)
    assert code == 4 and json.loads(out)["exclusivity_violations"] == ["P"]


def test_run_and_config_error(fixture_corpus, tmp_path, capsys):
    cfg = write_config(fixture_corpus, tmp_path / "out")
    code, out, _ = run(["run", "--config", str(cfg)], capsys)
    assert code == 0 and '"stage": "eval", "status": "ran"' in out
    code, out, _ = run(["run", "--config", str(cfg)], capsys)
    assert '"status": "up to date"' in out
    assert run(["run", "--config", str(cfg), "--set", "vocab=/nonexistent"], capsys)[0] == 3
    assert run(["run", "--config", str(cfg), "--stages", "nope"], capsys)[0] == 3


@pytest.mark.parametrize("kind", ["mlm", "lamim"])
def test_losses_categorical(kind, tmp_path, capsys):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"shape": [2, 4], "values": [0.25] * 8, "targets": [0, 3]}))
    code, out, _ = run(["losses", "--preds", str(p), "--kind", kind], capsys)
    assert code == 0 and json.loads(out)["loss"] == pytest.approx(2 * np.log(4))


def test_losses_pc_and_gradient_checksum(tmp_path, capsys):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"shape": [3, 5], "values": [0.5] * 15, "targets": [0, 1, 0, 0, 1] * 3}))
    code, out, _ = run(["losses", "--preds", str(p), "--kind", "pc"], capsys)
    assert json.loads(out)["loss"] == pytest.approx(5 * np.log(2), abs=1e-12)
    p.write_text(json.dumps({"shape": [2, 3], "values": [0, 0, 0, 1, 2, 3], "targets": [1, 2], "logits": True}))
    code, out, _ = run(["losses", "--preds", str(p), "--kind", "mlm"], capsys)
    data = json.loads(out)
    assert code == 0 and abs(data["grad_sum"]) < 1e-12 and len(data["grad_sha256"]) == 64


def test_judge_with_replay_and_failures(fixture_corpus, tmp_path, capsys):
    root = fixture_corpus.root
    filtered = tmp_path / "out" / "filtered.jsonl"
    cfg = write_config(fixture_corpus, tmp_path / "out")
    run(["run", "--config", str(cfg), "--stages", "extract,preprocess"], capsys)
    preds = read_jsonl(root / "predictions_brief.jsonl")
    replay = tmp_path / "replay.jsonl"
    lines = []
    for p in preds:
        for v in range(5):
            body = "<results>\nRelevance: 1\nAccuracy: 1\nCompleteness: 1\nCoherence: 1\nFluency: 1\nCoverage: 1\n</results>"
            lines.append({"image_ref": p["figure_id"], "variant": v, "response": body})
    replay.write_text("".join(json.dumps(r) + "\n" for r in lines))
    out = tmp_path / "judge.jsonl"
    args = ["judge", "--manifest", str(filtered), "--preds", str(root / "predictions_brief.jsonl"), "--field", "brief",
            "--replay", str(replay), "--out", str(out), "--backoff", "0", "--sample-size", "2", "--sample-seed", "3"]
    assert run(args, capsys)[0] == 0
    rows = read_jsonl(out)
    assert len(rows) == 3 and rows[-1]["sample_count"] == 2
    replay.write_text("")
    assert run(args, capsys)[0] == 6
    assert run(args[:7] + ["--out", str(out)], capsys)[0] == 3
