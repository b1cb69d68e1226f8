"""Figure-label normalization and sentence splitting shared by extraction and filtering."""

from __future__ import annotations

import re

_FIG_WORD = re.compile(r"^FIG(?:URE)?S?", re.IGNORECASE)
_LABEL_ID = re.compile(r"\d+[A-Za-z]?(?![A-Za-z0-9])")
_LABEL_IN_TEXT = re.compile(
    r"\bFIG(?:URE)?S?\.?\s*(\d+[A-Za-z]?)(?![A-Za-z0-9])", re.IGNORECASE
)

# Tokens that end in a period without ending a sentence (compared lowercased).
ABBREVIATIONS = frozenset(
    {
        "fig.", "figs.", "figure.", "no.", "nos.", "u.s.", "pat.", "e.g.", "i.e.",
        "vs.", "ref.", "refs.", "sec.", "approx.", "et.", "al.", "dr.", "mr.", "ms.",
        "inc.", "corp.", "ltd.", "co.", "ser.", "appl.", "publ.", "pub.",
    }
)

_BOUNDARY = re.compile(r"[.?!][\"')\]]*(\s+)")


def normalize_figure_label(label: str) -> str:
    """Canonical label key: "FIG. 1", "Fig 1" and "FIGURE 1" all become "FIG1"."""
    s = re.sub(r"[\s.]+", "", label.upper())
    return _FIG_WORD.sub("FIG", s, count=1)


def labels_in_text(text: str) -> list[str]:
    """Normalized figure labels mentioned in free text, in order of appearance."""
    return ["FIG" + m.group(1).upper() for m in _LABEL_IN_TEXT.finditer(text)]


def parse_figref_labels(figref_text: str) -> list[str]:
    """Labels named by one figref tag's text.

    A figref may name several figures ("FIGS. 1 and 2") or only the id
    ("2"); every id becomes its own normalized label.
    """
    body = _FIG_WORD.sub("", figref_text.strip(), count=1)
    return ["FIG" + m.group(0).upper() for m in _LABEL_ID.finditer(body)]


def sentence_spans(text: str, break_before: frozenset[int] | set[int] = frozenset()) -> list[tuple[int, int]]:
    """Split ``text`` into sentence spans ``(start, end)``.

    A boundary is terminal punctuation followed by whitespace and then an
    uppercase letter or an offset listed in ``break_before`` (figref starts). Tokens in ``ABBREVIATIONS`` never end a sentence.
    """
    spans = []
    start = 0
    for m in _BOUNDARY.finditer(text):
        nxt = m.end()
        if nxt >= len(text):
            break
        if not (text[nxt].isupper() or nxt in break_before):
            continue
        word_start = text.rfind(" ", 0, m.start()) + 1
        word = text[word_start : m.start() + 1].lower()
        if word in ABBREVIATIONS:
            continue
        # Single capital initial ("A. Smith") is not a boundary.
        if len(word) == 2 and word[0].isalpha():
            continue
        end = m.start(1)
        if end > start:
            spans.append((start, end))
        start = nxt
    tail = text[start:].rstrip()
    if tail:
        spans.append((start, start + len(tail)))
    return spans


def split_sentences(text: str) -> list[str]:
    return [text[a:b] for a, b in sentence_spans(text)]


def normalize_sentence(sentence: str) -> str:
    s = " ".join(sentence.lower().split())
    return s.rstrip(".?!;:,").rstrip()
