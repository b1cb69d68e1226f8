"""Regenerate the frozen test fixtures under tests/data from the oracles.

    python3 scripts/freeze_test_data.py

Outputs:
    metric_pairs.jsonl     20 (candidate, reference) pairs with known perturbations
    metric_expected.json   oracle report for those pairs (corpus BLEU, exact+stem METEOR)
    manifest_20.jsonl      20-record manifest over 3 splits
    manifest_20_stats.json oracle per-split statistics under the default vocabulary
"""

import json
import random
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT))

from tests.oracles import corpus_sums, text_metrics  # noqa: E402
from patentfig.tokenizer import load_tokenizer  # noqa: E402

DATA = ROOT / "tests" / "data"

REFERENCES = [
    "FIG. 1 is a block diagram of a wireless communication system according to an embodiment.",
    "FIG. 2 is a flowchart illustrating a method of processing sensor data.",
    "FIG. 3 illustrates a schematic view of the control unit coupled to the memory.",
    "FIG. 4 shows an exploded perspective view of the housing assembly.",
    "FIG. 5 is a timing diagram of signals exchanged between the server and the client device.",
    "The processor 114 sends data to the storage device 120 over the bus 116.",
    "FIG. 6 depicts a network of nodes connected to a central gateway.",
    "FIG. 7 is a cross-sectional view taken along line A-A of FIG. 6.",
    "FIG. 8 illustrates a user interface displaying a plurality of icons.",
    "FIG. 9 is a block diagram showing the power management circuit.",
]

# Each perturbation maps a reference sentence to a candidate.
def _identity(s, rng):
    return s


def _drop_words(s, rng):
    words = s.split()
    keep = [w for i, w in enumerate(words) if i == 0 or rng.random() > 0.25]
    return " ".join(keep)


def _swap_adjacent(s, rng):
    words = s.split()
    i = rng.randrange(1, len(words) - 1)
    words[i], words[i + 1] = words[i + 1], words[i]
    return " ".join(words)


def _substitute(s, rng):
    words = s.split()
    i = rng.randrange(2, len(words))
    words[i] = rng.choice(["module", "device", "apparatus", "element", "circuit"])
    return " ".join(words)


def _inflect(s, rng):
    # Suffix changes exercise the stem-matching stage.
    table = {"illustrating": "illustrates", "connected": "connecting", "signals": "signal",
             "shows": "showing", "sends": "sending", "displaying": "displays", "nodes": "node",
             "icons": "icon", "is": "is", "view": "views", "processing": "processed"}
    return " ".join(table.get(w, w) for w in s.split())


def _truncate(s, rng):
    words = s.split()
    return " ".join(words[: max(3, len(words) // 2)])


def _reorder_clauses(s, rng):
    words = s.rstrip(".").split()
    mid = len(words) // 2
    return " ".join(words[mid:] + words[:mid]) + "."


def _extend(s, rng):
    return s.rstrip(".") + " in accordance with some implementations of the present disclosure."


PERTURBATIONS = [_identity, _drop_words, _swap_adjacent, _substitute, _inflect, _truncate, _reorder_clauses, _extend]


def metric_pairs() -> list[dict]:
    rng = random.Random(20)
    rows = []
    for k in range(20):
        ref = REFERENCES[k % len(REFERENCES)]
        fn = PERTURBATIONS[k % len(PERTURBATIONS)]
        rows.append({"id": f"P{k:02d}", "perturbation": fn.__name__.lstrip("_"),
                     "candidate": fn(ref, rng), "reference": ref})
    return rows


def manifest_20() -> list[dict]:
    rng = random.Random(7)
    rows = []
    layout = [("US7001001B2", "train", 4), ("US7002002B2", "train", 3), ("US7003003B2", "train", 4),
              ("US7004004B2", "train", 2), ("US8005005B2", "validation", 3), ("US9006006B2", "test", 4)]
    for pid, split, n in layout:
        for f in range(1, n + 1):
            brief = f"FIG. {f} {rng.choice(['is a block diagram of', 'illustrates', 'shows'])} " \
                    f"{rng.choice(REFERENCES).split(' ', 3)[-1]}"
            detailed = " ".join(
                rng.choice(REFERENCES).replace("FIG. ", "Fig. ") for _ in range(rng.randint(2, 6))
            )
            rows.append({
                "patent_id": pid, "figure_id": f"{pid}-F{f:02d}", "figure_label": f"FIG. {f}",
                "image_width": rng.choice([640, 800, 1024]), "image_height": rng.choice([480, 600, 768]),
                "split": split, "brief": brief, "detailed": detailed,
                "ocr_path": None, "elements_path": None,
            })
    assert len(rows) == 20
    return rows


def main() -> None:
    DATA.mkdir(parents=True, exist_ok=True)
    pairs = metric_pairs()
    with open(DATA / "metric_pairs.jsonl", "w", encoding="utf-8") as fh:
        for row in pairs:
            fh.write(json.dumps(row) + "\n")
    expected = text_metrics.report([(r["candidate"], r["reference"]) for r in pairs])
    (DATA / "metric_expected.json").write_text(json.dumps(expected, indent=1, sort_keys=True) + "\n")

    rows = manifest_20()
    with open(DATA / "manifest_20.jsonl", "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
    tok = load_tokenizer()
    stats = corpus_sums.split_stats(DATA / "manifest_20.jsonl", lambda t: len(tok.encode(t)))
    payload = {"tokenizer": tok.tokenizer_id, "splits": stats}
    (DATA / "manifest_20_stats.json").write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")
    print(json.dumps(expected, indent=1))
    print(json.dumps(payload, indent=1))


if __name__ == "__main__":
    main()
