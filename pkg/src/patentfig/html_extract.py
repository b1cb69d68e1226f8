"""Patent HTML parsing and per-figure description extraction.

Brief descriptions come from the children of the
``brief-description-of-drawings`` section. Detailed descriptions are built
from the paragraphs after that section: a paragraph whose first sentence
holds a figref starts (or extends) that figure's text, any other paragraph
continues the most recently referenced figure.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import asdict, dataclass, field
from html.parser import HTMLParser
from pathlib import Path
from typing import Optional

from .corpus import DescriptionPair
from .text import (
    labels_in_text,
    normalize_figure_label,
    normalize_sentence,
    parse_figref_labels,
    sentence_spans,
    split_sentences,
)
from .tokenizer import BPETokenizer, load_tokenizer

SECTION = "brief-description-of-drawings"
LINE = "description-line"
PARAGRAPH = "description-paragraph"
FIGREF = "figref"
OTHER = "other"

BLOCK_KINDS = (SECTION, LINE, PARAGRAPH, FIGREF, OTHER)
_ALIASES = {"description-of-drawings": SECTION}
_TEXT_KINDS = (LINE, PARAGRAPH)
_VOID = {"br", "img", "hr", "meta", "input", "link", "area", "base", "col", "wbr", "source"}
_SKIP = {"script", "style"}
_BREAKING = {"p", "div", "li", "ul", "ol", "tr", "td", "heading", "h1", "h2", "h3", "h4", "section"}

NO_DESCRIPTION = "no-description-section"


class LabelNotFound(KeyError):
    def __init__(self, label: str):
        super().__init__(label)
        self.label = label

    def __str__(self):
        return f"no brief description matches figure label {self.label!r}"


@dataclass(frozen=True)
class FigRef:
    start: int
    end: int
    text: str
    labels: tuple[str, ...]


@dataclass
class Block:
    kind: str
    position: int
    parent: Optional[int]
    in_section: bool
    text: str = ""
    figrefs: list[FigRef] = field(default_factory=list)


@dataclass
class PatentHtmlDoc:
    blocks: list[Block]
    flags: set[str] = field(default_factory=set)

    def of_kind(self, kind: str) -> list[Block]:
        return [b for b in self.blocks if b.kind == kind]

    @property
    def section(self) -> Optional[Block]:
        sections = self.of_kind(SECTION)
        return sections[0] if sections else None

    def brief_children(self) -> list[Block]:
        sec = self.section
        if sec is None:
            return []
        return [b for b in self.blocks if b.kind in _TEXT_KINDS and b.parent == sec.position]

    def detail_paragraphs(self) -> list[Block]:
        sec = self.section
        after = sec.position if sec is not None else -1
        return [
            b for b in self.blocks
            if b.kind in _TEXT_KINDS and not b.in_section and b.position > after
        ]


class _TextBuffer:
    """Whitespace-collapsing text accumulator with offset marks."""

    def __init__(self):
        self.parts: list[str] = []
        self.length = 0
        self.pending_space = False
        self._marks: list[list[int]] = []

    def append(self, data: str) -> None:
        for i, chunk in enumerate(data.split()):
            if i > 0 or data[:1].isspace():
                self.pending_space = True
            if self.pending_space and self.length:
                self.parts.append(" ")
                self.length += 1
            self.pending_space = False
            for mark in self._marks:
                mark.append(self.length)
            self._marks.clear()
            self.parts.append(chunk)
            self.length += len(chunk)
        if data and data[-1:].isspace():
            self.pending_space = True

    def space(self) -> None:
        self.pending_space = True

    def mark(self) -> list[int]:
        """Box that receives the offset of the next non-space character."""
        box: list[int] = []
        self._marks.append(box)
        return box

    def text(self) -> str:
        return "".join(self.parts)


class _Parser(HTMLParser):
    def __init__(self):
        super().__init__(convert_charrefs=True)
        self.blocks: list[Block] = []
        # (tag, block index or None)
        self.stack: list[tuple[str, Optional[int]]] = []
        self.buffers: dict[int, _TextBuffer] = {}
        self.figref_marks: dict[int, tuple[int, list[int]]] = {}
        self.skip_depth = 0

    def _kind(self, tag: str, attrs) -> Optional[str]:
        names = [tag]
        for key, value in attrs:
            if key == "class" and value:
                names.extend(value.split())
        for name in names:
            name = _ALIASES.get(name.lower(), name.lower())
            if name in (SECTION, LINE, PARAGRAPH, FIGREF):
                return name
        return None

    def _open_blocks(self):
        return [i for _, i in self.stack if i is not None]

    def _text_owner(self) -> Optional[int]:
        for i in self._open_blocks():
            if self.blocks[i].kind in _TEXT_KINDS:
                return i
        return None

    def handle_starttag(self, tag, attrs):
        tag = tag.lower()
        if tag in _SKIP:
            self.skip_depth += 1
            self.stack.append((tag, None))
            return
        if tag in _VOID:
            self._space()
            return
        kind = self._kind(tag, attrs)
        open_blocks = self._open_blocks()
        owner = self._text_owner()
        if kind in _TEXT_KINDS and owner is not None:
            # Nested line/paragraph tags merge into the outer one.
            kind = None
        index = None
        if kind is not None:
            index = len(self.blocks)
            parent = open_blocks[-1] if open_blocks else None
            in_section = any(self.blocks[i].kind == SECTION for i in open_blocks)
            self.blocks.append(Block(kind, index, parent, in_section))
            self.buffers[index] = _TextBuffer()
            if kind == FIGREF and owner is not None:
                self.figref_marks[index] = (owner, self.buffers[owner].mark())
        elif tag in _BREAKING:
            self._space()
        self.stack.append((tag, index))

    def handle_startendtag(self, tag, attrs):
        if tag.lower() in _VOID:
            self._space()
        else:
            self.handle_starttag(tag, attrs)
            self.handle_endtag(tag)

    def handle_endtag(self, tag):
        tag = tag.lower()
        if not any(t == tag for t, _ in self.stack):
            return
        while self.stack:
            t, index = self.stack.pop()
            self._close(t, index)
            if t == tag:
                break

    def _close(self, tag, index):
        if tag in _SKIP:
            self.skip_depth -= 1
            return
        if index is None:
            if tag in _BREAKING:
                self._space()
            return
        block = self.blocks[index]
        block.text = self.buffers[index].text()
        if block.kind == FIGREF and index in self.figref_marks:
            owner, box = self.figref_marks.pop(index)
            if box:
                labels = tuple(parse_figref_labels(block.text))
                start = box[0]
                end = self.buffers[owner].length
                self.blocks[owner].figrefs.append(FigRef(start, end, block.text, labels))
        if block.kind != FIGREF:
            self._space()

    def _space(self):
        for i in self._open_blocks():
            self.buffers[i].space()

    def handle_data(self, data):
        if self.skip_depth:
            return
        for i in self._open_blocks():
            self.buffers[i].append(data)

    def finish(self) -> list[Block]:
        self.close()
        while self.stack:
            self._close(*self.stack.pop())
        return self.blocks


def parse_patent_html(html_text: str) -> PatentHtmlDoc:
    parser = _Parser()
    parser.feed(html_text)
    blocks = parser.finish()
    doc = PatentHtmlDoc(blocks)
    if not any(b.kind in (SECTION, LINE, PARAGRAPH) for b in blocks):
        doc.flags.add(NO_DESCRIPTION)
    return doc


def _brief_key(block: Block) -> Optional[str]:
    for ref in block.figrefs:
        if ref.labels:
            return ref.labels[0]
    found = labels_in_text(block.text)
    return found[0] if found else None


def brief_index(doc: PatentHtmlDoc) -> dict[str, Block]:
    """Normalized label -> brief-section child; the first child claiming a label wins."""
    index: dict[str, Block] = {}
    for child in doc.brief_children():
        key = _brief_key(child)
        if key is not None and key not in index:
            index[key] = child
    return index


def extract_brief(doc: PatentHtmlDoc, figure_label: str) -> str:
    child = brief_index(doc).get(normalize_figure_label(figure_label))
    if child is None or not child.text:
        raise LabelNotFound(figure_label)
    return child.text


@dataclass
class ExtractionDiagnostics:
    total_paragraphs: int = 0
    attributed: int = 0
    dropped_before_first_figref: int = 0
    discarded_multifig: int = 0
    multifig_sentences: int = 0
    # Continuation paragraphs after the last figref-led paragraph; these may be
    # concluding text that does not describe the last figure.
    trailing_paragraphs: int = 0
    trailing_label: Optional[str] = None
    unmatched: dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def _sentence_labels(block: Block, start: int, end: int) -> list[str]:
    labels: list[str] = []
    for ref in block.figrefs:
        if start <= ref.start < end:
            labels.extend(l for l in ref.labels if l not in labels)
    return labels


def extract_detailed(
    doc: PatentHtmlDoc,
    figure_labels: list[str],
    diagnostics: ExtractionDiagnostics | None = None,
) -> dict[str, str]:
    """Detailed description text for each requested label that has one.

    Continuation paragraphs are joined with a single space. Sentences
    naming two or more distinct figures are discarded.
    """
    diag = diagnostics if diagnostics is not None else ExtractionDiagnostics()
    wanted = {normalize_figure_label(l): l for l in figure_labels}
    pieces: dict[str, list[str]] = {}
    current: Optional[str] = None
    trailing = 0

    for para in doc.detail_paragraphs():
        diag.total_paragraphs += 1
        spans = sentence_spans(para.text, {r.start for r in para.figrefs})
        kept: list[tuple[int, int]] = []
        lead: Optional[str] = None
        for n, (a, b) in enumerate(spans):
            labels = _sentence_labels(para, a, b)
            if len(labels) >= 2:
                diag.multifig_sentences += 1
                continue
            if n == 0 and labels:
                lead = labels[0]
            kept.append((a, b))

        if not kept:
            diag.discarded_multifig += 1
            continue
        if lead is not None:
            current = lead
            trailing = 0
        elif current is None:
            diag.dropped_before_first_figref += 1
            continue
        else:
            trailing += 1

        diag.attributed += 1
        if len(kept) == len(spans):
            text = para.text
        else:
            text = " ".join(para.text[a:b] for a, b in kept)
        pieces.setdefault(current, []).append(text)

    diag.trailing_paragraphs = trailing
    diag.trailing_label = wanted.get(current, current) if trailing else None

    out = {}
    for key, label in wanted.items():
        if key in pieces:
            out[label] = " ".join(pieces[key])
    return out


@dataclass
class ExtractionResult:
    descriptions: dict[str, DescriptionPair]
    unmatched: dict[str, str]
    diagnostics: ExtractionDiagnostics


def extract_descriptions(
    doc: PatentHtmlDoc,
    figure_labels: list[str],
    tokenizer: BPETokenizer | None = None,
) -> ExtractionResult:
    tok = tokenizer or load_tokenizer()
    diag = ExtractionDiagnostics()
    detailed = extract_detailed(doc, figure_labels, diag)
    descriptions = {}
    unmatched = {}
    for label in figure_labels:
        try:
            brief = extract_brief(doc, label)
        except LabelNotFound:
            unmatched[label] = "no-brief"
            continue
        if not detailed.get(label):
            unmatched[label] = "no-detailed"
            continue
        descriptions[label] = DescriptionPair.from_texts(brief, detailed[label], tok)
    if NO_DESCRIPTION in doc.flags:
        unmatched = {label: NO_DESCRIPTION for label in figure_labels}
    diag.unmatched = dict(unmatched)
    return ExtractionResult(descriptions, unmatched, diag)


def clip_detailed(text: str, limit: int = 500, tokenizer: BPETokenizer | None = None) -> str:
    if limit <= 0:
        raise ValueError("limit must be positive")
    tok = tokenizer or load_tokenizer()
    ids = tok.encode(text)
    if len(ids) <= limit:
        return text
    return tok.decode(ids[:limit])


def sentence_prf(extracted: str, gold: str) -> tuple[float, float]:
    """Sentence-level precision and recall over normalized sentence multisets."""
    ext = Counter(s for s in map(normalize_sentence, split_sentences(extracted)) if s)
    ref = Counter(s for s in map(normalize_sentence, split_sentences(gold)) if s)
    if not ext and not ref:
        return 1.0, 1.0
    overlap = sum((ext & ref).values())
    precision = overlap / sum(ext.values()) if ext else 0.0
    recall = overlap / sum(ref.values()) if ref else 0.0
    return precision, recall


def write_diagnostics(path: str | Path, patent_id: str, diag: ExtractionDiagnostics) -> None:
    payload = {"patent_id": patent_id, **diag.to_dict()}
    Path(path).write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n", encoding="utf-8")
