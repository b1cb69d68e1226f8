"""Deterministic synthetic patent corpus for tests and demos.

The generator writes patent HTML with the usual tag structure, two OCR
passes per figure (original and rotated), detector-style element boxes, a
figure manifest without descriptions, predictions for the evaluation
stage, and golden files describing what each stage should produce. The
golden files are derived from how the corpus was built, never by running
the pipeline.

Layout of ``out_dir``::

    figures.jsonl            manifest, descriptions empty
    html/<patent_id>.html
    ocr/<figure_id>.json     ocr/<figure_id>.rot.json
    elements/<figure_id>.json
    predictions_brief.jsonl  predictions_detailed.jsonl
    golden/descriptions.jsonl golden/unmatched.jsonl
    golden/drops.jsonl       golden/orientation.jsonl
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from html import escape
from pathlib import Path

from .corpus import ManifestRecord, save_manifest

SUBJECTS = [
    "computing system", "wireless device", "data processing pipeline", "network appliance",
    "imaging apparatus", "vehicle control unit", "medical monitor", "storage array",
    "payment terminal", "robotic arm", "sensor network", "media server",
]
KINDS = [
    "block diagram", "flowchart", "schematic view", "perspective view",
    "sequence diagram", "cross-sectional view", "exploded view",
]
NOUNS = [
    "processor", "memory", "display", "network interface", "controller", "sensor",
    "storage device", "user interface", "communication module", "power supply",
    "camera", "server", "database", "router", "battery", "antenna", "encoder", "decoder",
]
VERBS = ["is coupled to", "communicates with", "sends data to", "receives signals from", "controls"]
INTROS = [
    "The following description refers to the accompanying drawings.",
    "Reference will now be made in detail to several embodiments.",
    "Various embodiments are described below in connection with the drawings.",
]
CLOSINGS = [
    "The foregoing description is illustrative and not restrictive.",
    "Many modifications and variations are possible without departing from the scope of the claims.",
]


@dataclass
class _Sentence:
    html: str
    plain: str
    multifig: bool = False


def _s(html: str, plain: str, multifig: bool = False) -> _Sentence:
    return _Sentence(html, plain, multifig)


def _fig(k: int | str, tagged: bool) -> tuple[str, str]:
    plain = f"FIG. {k}"
    return (f"<figref>{plain}</figref>" if tagged else plain), plain


@dataclass
class _Figure:
    figure_id: str
    label_num: str
    width: int
    height: int
    ocr_good: list[dict]
    ocr_bad: list[dict]
    rotated: bool
    elements: list[dict]
    is_plot: bool = False
    multi: bool = False
    orphan: bool = False
    duplicate_of: str | None = None


@dataclass
class FixtureCorpus:
    root: Path
    manifest_path: Path
    patent_ids: list[str] = field(default_factory=list)
    figure_ids: list[str] = field(default_factory=list)


def _ocr_tok(text, x0, y0, x1, y1, seg):
    return {"text": text, "box": [x0, y0, x1, y1], "segment_id": seg}


def _garble(tokens: list[dict], rng: random.Random) -> list[dict]:
    # What OCR reads from a sideways image: short fragments.
    out = []
    for t in tokens:
        frag = "".join(rng.choice("il1|:;.-_") for _ in range(rng.randint(1, 2)))
        out.append({**t, "text": frag})
    return out


def _layout(rng: random.Random, label_num: str, nouns: list[str], node_labels: list[int],
            extra_label: str | None):
    """OCR tokens and element boxes for a column of labeled nodes joined by arrows."""
    ocr, elements = [], []
    n = len(nouns)
    step = 760 // n
    seg = 0
    for i, (noun, num) in enumerate(zip(nouns, node_labels)):
        top = 40 + i * step
        bottom = top + step // 2
        left = rng.randint(150, 250)
        right = rng.randint(600, 720)
        elements.append({"category": "Node", "box": [left, top, right, bottom], "confidence": 0.97})
        x = left + 20
        for word in noun.split():
            w = 14 * len(word)
            box = [x, top + 20, x + w, top + 50]
            ocr.append(_ocr_tok(word, *box, seg))
            elements.append({"category": "Text", "box": box, "confidence": 0.9})
            x += w + 12
        seg += 1
        lbox = [right + 20, top + 10, right + 80, top + 40]
        ocr.append(_ocr_tok(str(num), *lbox, seg))
        elements.append({"category": "NodeLabel", "box": lbox, "confidence": 0.95})
        seg += 1
        if i + 1 < n:
            elements.append(
                {"category": "Arrow", "box": [430, bottom, 450, 40 + (i + 1) * step], "confidence": 0.88}
            )
    labels = [label_num] + ([extra_label] if extra_label else [])
    for j, lab in enumerate(labels):
        x = 380 + j * 260
        ocr.append(_ocr_tok("FIG.", x, 900, x + 70, 940, seg))
        ocr.append(_ocr_tok(lab, x + 80, 900, x + 120, 940, seg))
        elements.append({"category": "FigureLabel", "box": [x, 900, x + 120, 940], "confidence": 0.99})
        seg += 1
    return ocr, elements


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1) + "\n", encoding="utf-8")


def _write_jsonl(path: Path, rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")


def _perturb(text: str, rng: random.Random) -> str:
    words = text.split()
    if len(words) < 4:
        return text
    op = rng.randrange(4)
    if op == 0:
        del words[rng.randrange(len(words))]
    elif op == 1:
        i = rng.randrange(len(words) - 1)
        words[i], words[i + 1] = words[i + 1], words[i]
    elif op == 2:
        words[rng.randrange(len(words))] = rng.choice(NOUNS).split()[0]
    else:
        words = words[: max(3, len(words) * 2 // 3)]
    return " ".join(words)


def _split_for(index: int, n: int) -> str:
    if n >= 3 and index == n - 2:
        return "validation"
    if n >= 2 and index == n - 1:
        return "test"
    return "train"


def generate_fixture_corpus(out_dir: str | Path, seed: int = 0, n_patents: int = 5) -> FixtureCorpus:
    if n_patents < 1:
        raise ValueError("n_patents must be >= 1")
    rng = random.Random(seed)
    root = Path(out_dir)
    for sub in ("html", "ocr", "elements", "golden"):
        (root / sub).mkdir(parents=True, exist_ok=True)

    corpus = FixtureCorpus(root, root / "figures.jsonl")
    records: list[ManifestRecord] = []
    golden_desc, golden_drops, golden_orient, golden_unmatched = [], [], [], []
    preds = {"brief": [], "detailed": []}
    used_ids: set[str] = set()

    for p in range(n_patents):
        while True:
            patent_id = f"US{rng.randrange(7_000_000, 11_999_999)}B2"
            if patent_id not in used_ids:
                used_ids.add(patent_id)
                break
        corpus.patent_ids.append(patent_id)
        # Patent 3 (when present) predates the date cutoff.
        year = 2003 if p == 2 else rng.randint(2005, 2022)
        split = _split_for(p, n_patents)
        tagged_brief = p % 2 == 0
        use_lines = p % 3 != 1
        n_figs = rng.randint(3, 5)
        subject = rng.choice(SUBJECTS)

        figures: list[_Figure] = []
        texts: dict[str, dict] = {}
        for k in range(1, n_figs + 1):
            label_num = str(k)
            n_nodes = rng.randint(2, 4)
            nouns = rng.sample(NOUNS, n_nodes)
            node_labels = [100 * k + 2 * (i + 1) for i in range(n_nodes)]
            multi = k == 2 and p % 2 == 1
            extra = str(k + 1) if multi else None
            good, elements = _layout(rng, label_num, nouns, node_labels, extra)
            rotated = rng.random() < 0.3
            fig = _Figure(
                figure_id=f"{patent_id}-F{k:02d}",
                label_num=label_num,
                width=rng.randrange(1600, 2600, 8),
                height=rng.randrange(1800, 3200, 8),
                ocr_good=good,
                ocr_bad=_garble(good, rng),
                rotated=rotated,
                elements=elements,
                is_plot=(k == n_figs and p % 4 == 2),
                multi=multi,
            )
            figures.append(fig)
            texts[label_num] = {
                "kind": rng.choice(KINDS),
                "nouns": nouns,
                "labels": node_labels,
                "ref": 100 * k,
            }

        # The representative drawing reappears first, as a copy of FIG. 1.
        first = figures[0]
        rep = _Figure(
            figure_id=f"{patent_id}-F00",
            label_num=first.label_num,
            width=first.width,
            height=first.height,
            ocr_good=first.ocr_good,
            ocr_bad=first.ocr_bad,
            rotated=first.rotated,
            elements=first.elements,
            duplicate_of=first.figure_id,
        )
        figures.insert(0, rep)
        if p == 1:
            orphan_num = str(n_figs + 5)
            good, elements = _layout(rng, orphan_num, rng.sample(NOUNS, 2), [900, 902], None)
            figures.append(
                _Figure(f"{patent_id}-F{n_figs + 5:02d}", orphan_num, 2000, 2400, good,
                        _garble(good, rng), False, elements, orphan=True)
            )

        # -- HTML --
        brief_lines = []
        brief_plain = {}
        for k in range(1, n_figs + 1):
            t = texts[str(k)]
            ref_html, ref_plain = _fig(k, tagged_brief)
            body = f" is a {t['kind']} of an example {subject} according to some embodiments."
            tag = "description-line" if use_lines else "description-paragraph"
            brief_lines.append(f'<{tag} num="{k}">{ref_html}{escape(body)}</{tag}>')
            brief_plain[str(k)] = ref_plain + body

        intro = rng.choice(INTROS)
        paragraphs: list[list[_Sentence]] = [[_s(intro, intro)]]
        detailed: dict[str, list[str]] = {}
        for k in range(1, n_figs + 1):
            t = texts[str(k)]
            nouns, labels, ref = t["nouns"], t["labels"], t["ref"]
            fh, fp = _fig(k, True)
            lead = [
                _s(f"{fh} illustrates a {subject} {ref}.", f"{fp} illustrates a {subject} {ref}."),
                _s(
                    f"The {subject} {ref} includes a {nouns[0]} {labels[0]} and a {nouns[1]} {labels[1]}.",
                    f"The {subject} {ref} includes a {nouns[0]} {labels[0]} and a {nouns[1]} {labels[1]}.",
                ),
            ]
            verb = rng.choice(VERBS)
            cont = [
                _s(f"The {nouns[0]} {labels[0]} {verb} the {nouns[1]} {labels[1]}.",
                   f"The {nouns[0]} {labels[0]} {verb} the {nouns[1]} {labels[1]}."),
                _s(f"In some embodiments, the {nouns[-1]} {labels[-1]} operates in a low power mode.",
                   f"In some embodiments, the {nouns[-1]} {labels[-1]} operates in a low power mode."),
            ]
            block = [lead, cont]
            if k < n_figs and rng.random() < 0.6:
                oh, op_ = _fig(k, True)
                nh, np_ = _fig(k + 1, True)
                block.append([
                    _s(f"The {nouns[0]} {labels[0]} may be replaced by another component.",
                       f"The {nouns[0]} {labels[0]} may be replaced by another component."),
                    _s(f"Elements of {oh} may be combined with elements of {nh}.",
                       f"Elements of {op_} may be combined with elements of {np_}.", True),
                    _s("Such combinations are within the scope of the disclosure.",
                       "Such combinations are within the scope of the disclosure."),
                ])
            if k < n_figs and rng.random() < 0.4:
                oh, op_ = _fig(k, True)
                nh, np_ = _fig(k + 1, True)
                block.append([
                    _s(f"{oh} and {nh} share a common housing.", f"{op_} and {np_} share a common housing.", True),
                    _s("The housing is sealed against moisture.", "The housing is sealed against moisture."),
                ])
            for para in block:
                paragraphs.append(para)
                kept = [s.plain for s in para if not s.multifig]
                detailed.setdefault(str(k), []).append(" ".join(kept))
        closing = rng.choice(CLOSINGS)
        paragraphs.append([_s(closing, closing)])
        detailed[str(n_figs)].append(closing)

        summary = f"A {subject} with improved efficiency is disclosed. {rng.choice(INTROS)}"
        body_html = "\n".join(
            '<div class="description-paragraph">' + " ".join(s.html for s in para) + "</div>"
            for para in paragraphs
        )
        html = (
            "<!DOCTYPE html>\n<html><head><title>"
            f"{patent_id}</title><style>p {{ margin: 0 }}</style></head><body>\n"
            f"<section itemprop=\"description\"><heading>SUMMARY</heading>\n"
            f'<div class="description-paragraph">{escape(summary)}</div>\n'
            "<heading>BRIEF DESCRIPTION OF THE DRAWINGS</heading>\n"
            "<brief-description-of-drawings>\n" + "\n".join(brief_lines) +
            "\n</brief-description-of-drawings>\n<heading>DETAILED DESCRIPTION</heading>\n"
            f"{body_html}\n</section></body></html>\n"
        )
        (root / "html" / f"{patent_id}.html").write_text(html, encoding="utf-8")

        for fig in figures:
            fid = fig.figure_id
            corpus.figure_ids.append(fid)
            original, rot = (fig.ocr_bad, fig.ocr_good) if fig.rotated else (fig.ocr_good, fig.ocr_bad)
            _write_json(root / "ocr" / f"{fid}.json", original)
            _write_json(root / "ocr" / f"{fid}.rot.json", rot)
            _write_json(root / "elements" / f"{fid}.json", fig.elements)
            records.append(
                ManifestRecord(
                    patent_id=patent_id,
                    figure_id=fid,
                    figure_label=f"FIG. {fig.label_num}",
                    image_width=fig.width,
                    image_height=fig.height,
                    split=split,
                    ocr_path=f"ocr/{fid}.json",
                    elements_path=f"elements/{fid}.json",
                    publication_year=year,
                    is_plot=fig.is_plot,
                    ocr_rotated_path=f"ocr/{fid}.rot.json",
                )
            )
            golden_orient.append({"figure_id": fid, "choice": "Rotated90" if fig.rotated else "Original"})
            if fig.orphan:
                golden_unmatched.append({"figure_id": fid, "figure_label": f"FIG. {fig.label_num}", "reason": "no-brief"})
                continue
            golden_desc.append({
                "figure_id": fid,
                "figure_label": f"FIG. {fig.label_num}",
                "brief": brief_plain[fig.label_num],
                "detailed": " ".join(detailed[fig.label_num]),
            })
            if year < 2005:
                reason = "date"
            elif fig.is_plot:
                reason = "plot"
            elif fig.multi:
                reason = "multi-figure"
            elif fig.duplicate_of:
                reason = "redundant"
            else:
                reason = None
            if reason:
                golden_drops.append({"figure_id": fid, "reason": reason})
            elif split == "test":
                for fld in ("brief", "detailed"):
                    ref = golden_desc[-1][fld]
                    preds[fld].append({"figure_id": fid, "text": _perturb(ref, rng)})

    save_manifest(records, corpus.manifest_path)
    _write_jsonl(root / "golden" / "descriptions.jsonl", golden_desc)
    _write_jsonl(root / "golden" / "drops.jsonl", golden_drops)
    _write_jsonl(root / "golden" / "orientation.jsonl", golden_orient)
    _write_jsonl(root / "golden" / "unmatched.jsonl", golden_unmatched)
    for fld, rows in preds.items():
        _write_jsonl(root / f"predictions_{fld}.jsonl", rows)
    return corpus
