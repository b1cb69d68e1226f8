"""Domain types, JSONL manifest persistence and corpus statistics."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, Optional

from .tokenizer import BPETokenizer, load_tokenizer

SPLITS = ("train", "validation", "test")

MANIFEST_KEYS = (
    "patent_id",
    "figure_id",
    "figure_label",
    "image_width",
    "image_height",
    "split",
    "brief",
    "detailed",
    "ocr_path",
    "elements_path",
)
# Written after the interface keys; absent keys fall back to defaults on load.
OPTIONAL_KEYS = ("publication_year", "is_plot", "ocr_rotated_path")


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class BoundingBox:
    """Box on the normalized 0-1000 grid (left, top, right, bottom)."""

    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self):
        for name in ("x0", "y0", "x1", "y1"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int):
                raise ValueError(f"box coordinate {name} must be an integer, got {value!r}")
        if not (0 <= self.x0 <= self.x1 <= 1000 and 0 <= self.y0 <= self.y1 <= 1000):
            raise ValueError(f"box out of range or inverted: {self.as_list()}")

    @classmethod
    def from_list(cls, coords) -> "BoundingBox":
        if len(coords) != 4:
            raise ValueError(f"box needs 4 coordinates, got {coords!r}")
        return cls(*coords)

    def as_list(self) -> list[int]:
        return [self.x0, self.y0, self.x1, self.y1]

    @property
    def area(self) -> int:
        return (self.x1 - self.x0) * (self.y1 - self.y0)


@dataclass(frozen=True)
class OcrToken:
    text: str
    box: BoundingBox
    segment_id: int = 0

    def __post_init__(self):
        if not self.text:
            raise ValueError("OCR token text must be non-empty")
        if self.segment_id < 0:
            raise ValueError("segment_id must be non-negative")

    @classmethod
    def from_dict(cls, d: dict) -> "OcrToken":
        return cls(d["text"], BoundingBox.from_list(d["box"]), int(d.get("segment_id", 0)))

    def to_dict(self) -> dict:
        return {"text": self.text, "box": self.box.as_list(), "segment_id": self.segment_id}


class ElementCategory(str, Enum):
    # Declaration order is the patch-label column order.
    NODE = "Node"
    NODE_LABEL = "NodeLabel"
    FIGURE_LABEL = "FigureLabel"
    TEXT = "Text"
    ARROW = "Arrow"

    @property
    def column(self) -> int:
        return CATEGORY_ORDER.index(self)


CATEGORY_ORDER = tuple(ElementCategory)


@dataclass(frozen=True)
class ElementBox:
    category: ElementCategory
    box: BoundingBox
    confidence: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must be in [0, 1], got {self.confidence}")

    @classmethod
    def from_dict(cls, d: dict) -> "ElementBox":
        return cls(
            ElementCategory(d["category"]),
            BoundingBox.from_list(d["box"]),
            float(d.get("confidence", 1.0)),
        )

    def to_dict(self) -> dict:
        return {
            "category": self.category.value,
            "box": self.box.as_list(),
            "confidence": self.confidence,
        }


@dataclass(frozen=True)
class PatentFigure:
    patent_id: str
    figure_id: str
    figure_label: Optional[str]
    image_width: int
    image_height: int
    ocr_tokens: tuple[OcrToken, ...] = ()
    element_boxes: tuple[ElementBox, ...] = ()
    is_plot: bool = False
    publication_year: Optional[int] = None

    def __post_init__(self):
        if self.image_width <= 0 or self.image_height <= 0:
            raise ValueError(f"{self.figure_id}: image dimensions must be positive")


@dataclass(frozen=True)
class DescriptionPair:
    brief: str
    detailed: str
    brief_token_count: int
    detailed_token_count: int

    @classmethod
    def from_texts(cls, brief: str, detailed: str, tokenizer: BPETokenizer | None = None):
        tok = tokenizer or load_tokenizer()
        return cls(brief, detailed, tok.count(brief), tok.count(detailed))


def read_ocr_file(path: str | Path) -> list[OcrToken]:
    with open(path, encoding="utf-8") as fh:
        return [OcrToken.from_dict(d) for d in json.load(fh)]


def read_elements_file(path: str | Path) -> list[ElementBox]:
    with open(path, encoding="utf-8") as fh:
        return [ElementBox.from_dict(d) for d in json.load(fh)]


def write_json_list(path: str | Path, items: Iterable[dict]) -> None:
    Path(path).write_text(json.dumps(list(items), indent=1) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class ManifestRecord:
    patent_id: str
    figure_id: str
    figure_label: Optional[str]
    image_width: int
    image_height: int
    split: str
    brief: str = ""
    detailed: str = ""
    ocr_path: Optional[str] = None
    elements_path: Optional[str] = None
    publication_year: Optional[int] = None
    is_plot: bool = False
    ocr_rotated_path: Optional[str] = None

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ValueError(f"{self.figure_id}: unknown split {self.split!r}")
        if self.image_width <= 0 or self.image_height <= 0:
            raise ValueError(f"{self.figure_id}: image dimensions must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "ManifestRecord":
        missing = [k for k in MANIFEST_KEYS if k not in d]
        if missing:
            raise ValueError(f"missing keys: {', '.join(missing)}")
        kwargs = {k: d[k] for k in MANIFEST_KEYS}
        kwargs.update({k: d[k] for k in OPTIONAL_KEYS if k in d})
        for key in ("image_width", "image_height"):
            if isinstance(kwargs[key], bool) or not isinstance(kwargs[key], int):
                raise ValueError(f"{key} must be an integer")
        return cls(**kwargs)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in MANIFEST_KEYS}
        d.update({k: getattr(self, k) for k in OPTIONAL_KEYS})
        return d

    def description(self, tokenizer: BPETokenizer | None = None) -> DescriptionPair:
        return DescriptionPair.from_texts(self.brief, self.detailed, tokenizer)

    def load_figure(self, base_dir: str | Path = ".") -> PatentFigure:
        """Materialize the figure, reading the referenced OCR and element files."""
        base = Path(base_dir)
        ocr = read_ocr_file(base / self.ocr_path) if self.ocr_path else []
        elements = read_elements_file(base / self.elements_path) if self.elements_path else []
        return PatentFigure(
            patent_id=self.patent_id,
            figure_id=self.figure_id,
            figure_label=self.figure_label,
            image_width=self.image_width,
            image_height=self.image_height,
            ocr_tokens=tuple(ocr),
            element_boxes=tuple(elements),
            is_plot=self.is_plot,
            publication_year=self.publication_year,
        )


@dataclass(frozen=True)
class CorpusManifest:
    records: tuple[ManifestRecord, ...] = ()
    # OCR/element paths in records are resolved relative to this directory.
    base_dir: Path = field(default=Path("."), compare=False)

    def __post_init__(self):
        seen = set()
        for rec in self.records:
            if rec.figure_id in seen:
                raise ManifestError(f"duplicate figure_id: {rec.figure_id}")
            seen.add(rec.figure_id)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[ManifestRecord]:
        return iter(self.records)

    def by_id(self) -> dict[str, ManifestRecord]:
        return {r.figure_id: r for r in self.records}

    def split(self, name: str) -> list[ManifestRecord]:
        return [r for r in self.records if r.split == name]

    @property
    def splits(self) -> set[str]:
        return {r.split for r in self.records}


def iter_manifest(path: str | Path) -> Iterator[ManifestRecord]:
    """Stream records from a JSONL manifest without materializing the corpus."""
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                yield ManifestRecord.from_dict(json.loads(line))
            except (ValueError, TypeError, KeyError) as exc:
                raise ManifestError(f"{path}:{lineno}: malformed record: {exc}") from exc


def load_manifest(path: str | Path) -> CorpusManifest:
    path = Path(path)
    seen: set[str] = set()
    records = []
    for rec in iter_manifest(path):
        if rec.figure_id in seen:
            raise ManifestError(f"{path}: duplicate figure_id: {rec.figure_id}")
        seen.add(rec.figure_id)
        records.append(rec)
    return CorpusManifest(tuple(records), base_dir=path.parent)


def dump_record(rec: ManifestRecord) -> str:
    return json.dumps(rec.to_dict(), ensure_ascii=False)


def save_manifest(manifest: CorpusManifest | Iterable[ManifestRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in manifest:
            fh.write(dump_record(rec) + "\n")


@dataclass(frozen=True)
class SplitStats:
    """One column of the dataset-statistics table. Averages are None for an empty split."""

    split: str
    image_count: int
    avg_brief_tokens: Optional[float]
    avg_detailed_tokens: Optional[float]
    unique_patents: int
    avg_images_per_patent: Optional[float]

    @property
    def empty(self) -> bool:
        return self.image_count == 0

    def rounded(self) -> dict:
        def r(x):
            return None if x is None else round(x, 2)

        return {
            "split": self.split,
            "image_count": self.image_count,
            "avg_brief_tokens": r(self.avg_brief_tokens),
            "avg_detailed_tokens": r(self.avg_detailed_tokens),
            "unique_patents": self.unique_patents,
            "avg_images_per_patent": r(self.avg_images_per_patent),
            "empty": self.empty,
        }


def compute_stats(
    manifest: CorpusManifest | Iterable[ManifestRecord],
    tokenizer: BPETokenizer | None = None,
) -> dict[str, SplitStats]:
    tok = tokenizer or load_tokenizer()
    images = dict.fromkeys(SPLITS, 0)
    brief = dict.fromkeys(SPLITS, 0)
    detailed = dict.fromkeys(SPLITS, 0)
    patents: dict[str, set[str]] = {s: set() for s in SPLITS}
    for rec in manifest:
        images[rec.split] += 1
        brief[rec.split] += tok.count(rec.brief)
        detailed[rec.split] += tok.count(rec.detailed)
        patents[rec.split].add(rec.patent_id)

    # Integer sums divided once, so results do not depend on record order.
    out = {}
    for s in SPLITS:
        n = images[s]
        out[s] = SplitStats(
            split=s,
            image_count=n,
            avg_brief_tokens=brief[s] / n if n else None,
            avg_detailed_tokens=detailed[s] / n if n else None,
            unique_patents=len(patents[s]),
            avg_images_per_patent=n / len(patents[s]) if n else None,
        )
    return out


def check_split_exclusivity(manifest: CorpusManifest | Iterable[ManifestRecord]) -> list[str]:
    """Patent ids present in train and also in validation or test, sorted."""
    train: set[str] = set()
    held_out: set[str] = set()
    for rec in manifest:
        (train if rec.split == "train" else held_out).add(rec.patent_id)
    return sorted(train & held_out)
