"""
Curating a synthetic patent-figure corpus end to end
=====================================================

Generates a small fixture corpus, runs every pipeline stage on it and
prints what each stage produced.
"""

import json
import tempfile
from pathlib import Path

from patentfig import pipeline as pl
from patentfig.fixtures import generate_fixture_corpus

work = Path(tempfile.mkdtemp(prefix="patentfig-demo-"))

# five patents: HTML documents, OCR passes, element boxes and golden outputs
corpus = generate_fixture_corpus(work / "corpus", seed=0, n_patents=5)
print("figures in raw manifest:", len(corpus.figure_ids))

# the same settings a config file would hold; paths are absolute here
cfg = pl.load_config(
    None,
    figures=str(corpus.manifest_path),
    html_dir=str(corpus.root / "html"),
    out_dir=str(work / "out"),
    seed=2024,
    predictions={
        "brief": str(corpus.root / "predictions_brief.jsonl"),
        "detailed": str(corpus.root / "predictions_detailed.jsonl"),
    },
)
for result in pl.run_pipeline(cfg):
    print(f"{result.stage:>10}: {result.status}")

out = work / "out"

# figures removed by the filters, one reason each
for row in pl.read_jsonl(out / "drop_report.jsonl"):
    print("dropped", row["figure_id"], "->", row["reason"])

# per-split statistics, averages to 2 decimals
stats = json.loads((out / "stats.json").read_text())
for split, row in stats["splits"].items():
    print(split, row["image_count"], "images, avg brief tokens", row["avg_brief_tokens"])

# caption metrics for the perturbed predictions, as percentages
for field in ("brief", "detailed"):
    report = json.loads((out / f"eval_{field}.json").read_text())
    print(field, report["percent"])

# a second run finds everything up to date
print([r.status for r in pl.run_pipeline(cfg)])
