"""Figure-level filters applied before description extraction.

Orientation correction, representative-figure dedupe, multi-figure
detection, plot removal and publication-date filtering. Everything here
works on OCR output and metadata; no pixels are decoded.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

from .corpus import OcrToken, PatentFigure
from .text import normalize_figure_label

DEFAULT_MIN_YEAR = 2005

_FIG_WORD = re.compile(r"^FIG(?:URE)?\.?$", re.IGNORECASE)
_FIG_ID = re.compile(r"^\d+[A-Z]?$", re.IGNORECASE)
_FIG_SINGLE = re.compile(r"^FIG(?:URE)?\.?\s*(\d+[A-Z]?)$", re.IGNORECASE)


class Orientation(str, Enum):
    ORIGINAL = "Original"
    ROTATED_90 = "Rotated90"


@dataclass(frozen=True)
class OrientationDecision:
    choice: Orientation
    avg_len_original: float
    avg_len_rotated: float


def _avg_len(tokens: Sequence[OcrToken]) -> float:
    if not tokens:
        return 0.0
    return sum(len(t.text) for t in tokens) / len(tokens)


def decide_orientation(
    ocr_original: Sequence[OcrToken], ocr_rotated: Sequence[OcrToken]
) -> OrientationDecision:
    """Keep whichever OCR pass reads longer tokens on average; ties keep the original."""
    a = _avg_len(ocr_original)
    b = _avg_len(ocr_rotated)
    choice = Orientation.ROTATED_90 if b > a else Orientation.ORIGINAL
    return OrientationDecision(choice, a, b)


def extract_figure_labels(ocr: Sequence[OcrToken]) -> list[str]:
    """Normalized figure labels ("FIG2", "FIG1A") found in OCR reading order.

    Matches a lone "FIG."/"FIGURE" token followed by an id token, or a
    single token such as "FIG.3" or "FIG 3".
    """
    labels = []
    i = 0
    while i < len(ocr):
        text = ocr[i].text.strip()
        m = _FIG_SINGLE.match(text)
        if m:
            labels.append("FIG" + m.group(1).upper())
        elif _FIG_WORD.match(text) and i + 1 < len(ocr) and _FIG_ID.match(ocr[i + 1].text.strip()):
            labels.append("FIG" + ocr[i + 1].text.strip().upper())
            i += 1
        i += 1
    return labels


def detect_multi_figure(ocr: Sequence[OcrToken]) -> bool:
    return len(set(extract_figure_labels(ocr))) >= 2


def dedupe_representative(figures: Sequence[PatentFigure]) -> list[PatentFigure]:
    """Drop the first copy of a figure repeated within one patent.

    Two figures are copies when they share a figure label and image
    dimensions. Only the first occurrence of each such key is removed;
    unlabeled figures are never treated as copies.
    """
    keys = [
        (normalize_figure_label(f.figure_label) if f.figure_label else None, f.image_width, f.image_height)
        for f in figures
    ]
    drop = set()
    for i, key in enumerate(keys):
        if key[0] is None or key in (keys[j] for j in drop):
            continue
        if key in keys[i + 1 :]:
            drop.add(i)
    return [f for i, f in enumerate(figures) if i not in drop]


class DropReason(str, Enum):
    DATE = "date"
    PLOT = "plot"
    MULTI_FIGURE = "multi-figure"
    REDUNDANT = "redundant"


def drop_reason(figure: PatentFigure, min_year: int = DEFAULT_MIN_YEAR) -> DropReason | None:
    # Check order fixes which single reason is recorded.
    if figure.publication_year is None or figure.publication_year < min_year:
        return DropReason.DATE
    if figure.is_plot:
        return DropReason.PLOT
    if detect_multi_figure(figure.ocr_tokens):
        return DropReason.MULTI_FIGURE
    return None


def filter_corpus(
    figures: Iterable[PatentFigure], min_year: int = DEFAULT_MIN_YEAR
) -> tuple[list[PatentFigure], list[tuple[PatentFigure, DropReason]]]:
    if min_year < 0:
        raise ValueError("min_year must be non-negative")
    kept, dropped = [], []
    for fig in figures:
        reason = drop_reason(fig, min_year)
        if reason is None:
            kept.append(fig)
        else:
            dropped.append((fig, reason))
    return kept, dropped
