"""Caption metrics: BLEU-n, average BLEU, ROUGE-1/2/L and METEOR.

Texts are tokenized by lowercasing and splitting on whitespace after
separating punctuation into standalone tokens. METEOR aligns exact matches
first and Porter-stem matches second; synonym matching is optional.
"""

from __future__ import annotations

import math
import re
import warnings
from collections import Counter
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import Callable, Iterable, Mapping, Sequence

from nltk.stem.porter import PorterStemmer

from .html_extract import clip_detailed

TOKENIZER_ID = "lower-punct-ws"
METEOR_ID = "meteor-es"

_TOKEN = re.compile(r"[^\W_]+|[^\w\s]|_", re.UNICODE)


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


def _toks(x) -> list[str]:
    return tokenize(x) if isinstance(x, str) else list(x)


def ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


# -- BLEU ------------------------------------------------------------------


@dataclass
class BleuStats:
    """Clipped n-gram matches and totals per order, plus lengths; sums across a corpus."""

    matches: list[int]
    totals: list[int]
    cand_len: int
    ref_len: int

    def __add__(self, other: "BleuStats") -> "BleuStats":
        return BleuStats(
            [a + b for a, b in zip(self.matches, other.matches)],
            [a + b for a, b in zip(self.totals, other.totals)],
            self.cand_len + other.cand_len,
            self.ref_len + other.ref_len,
        )


def bleu_stats(candidate, reference, max_n: int = 4) -> BleuStats:
    cand, ref = _toks(candidate), _toks(reference)
    matches, totals = [], []
    for n in range(1, max_n + 1):
        c, r = ngrams(cand, n), ngrams(ref, n)
        matches.append(sum((c & r).values()))
        totals.append(sum(c.values()))
    return BleuStats(matches, totals, len(cand), len(ref))


def bleu_from_stats(stats: BleuStats, n: int, smoothing: bool = False) -> float:
    if stats.cand_len == 0:
        return 0.0
    log_p = 0.0
    for i in range(n):
        m, t = stats.matches[i], stats.totals[i]
        if smoothing and i > 0:
            m, t = m + 1, t + 1
        if m == 0 or t == 0:
            return 0.0
        log_p += math.log(m / t)
    bp = min(1.0, math.exp(1.0 - stats.ref_len / stats.cand_len))
    return bp * math.exp(log_p / n)


def bleu_n(candidate, reference, n: int = 4, smoothing: bool = False) -> float:
    """BLEU with uniform weights over orders 1..n and the standard brevity penalty."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return bleu_from_stats(bleu_stats(candidate, reference, n), n, smoothing)


def avg_bleu(candidate, reference, smoothing: bool = False) -> float:
    stats = bleu_stats(candidate, reference, 4)
    return sum(bleu_from_stats(stats, n, smoothing) for n in range(1, 5)) / 4


# -- ROUGE -----------------------------------------------------------------


def _f1(overlap: int, n_cand: int, n_ref: int) -> float:
    if overlap == 0 or n_cand == 0 or n_ref == 0:
        return 0.0
    p, r = overlap / n_cand, overlap / n_ref
    return 2 * p * r / (p + r)


def rouge_n(candidate, reference, n: int = 1) -> float:
    if n < 1:
        raise ValueError("n must be >= 1")
    c, r = ngrams(_toks(candidate), n), ngrams(_toks(reference), n)
    return _f1(sum((c & r).values()), sum(c.values()), sum(r.values()))


def lcs_length(a: Sequence, b: Sequence) -> int:
    """Bit-parallel LCS length (Hyyrö): one big-int update per element of ``b``."""
    if not a or not b:
        return 0
    masks: dict = {}
    for i, x in enumerate(a):
        masks[x] = masks.get(x, 0) | (1 << i)
    full = (1 << len(a)) - 1
    v = full
    for y in b:
        m = masks.get(y)
        if m is None:
            continue
        u = v & m
        v = ((v + u) | (v - u)) & full
    return len(a) - bin(v).count("1")


def rouge_l(candidate, reference) -> float:
    cand, ref = _toks(candidate), _toks(reference)
    return _f1(lcs_length(cand, ref), len(cand), len(ref))


# -- METEOR ----------------------------------------------------------------

_stemmer = PorterStemmer()


@lru_cache(maxsize=65536)
def stem(word: str) -> str:
    return _stemmer.stem(word)


def _align_stage(cand, ref, aligned_c, aligned_r, key: Callable[[str], object]):
    # k-th unaligned candidate occurrence of a key pairs with the k-th
    # unaligned reference occurrence of the same key.
    queues: dict = {}
    for j, w in enumerate(ref):
        if j not in aligned_r:
            queues.setdefault(key(w), []).append(j)
    for i, w in enumerate(cand):
        if i in aligned_c:
            continue
        q = queues.get(key(w))
        if q:
            j = q.pop(0)
            aligned_c[i] = j
            aligned_r.add(j)


def meteor_alignment(
    candidate,
    reference,
    use_stem: bool = True,
    synonyms: Mapping[str, Iterable[str]] | None = None,
) -> dict[int, int]:
    """Candidate index -> reference index for every aligned token."""
    cand, ref = _toks(candidate), _toks(reference)
    aligned_c: dict[int, int] = {}
    aligned_r: set[int] = set()
    _align_stage(cand, ref, aligned_c, aligned_r, lambda w: w)
    if use_stem:
        _align_stage(cand, ref, aligned_c, aligned_r, stem)
    if synonyms:
        # Each word maps to the smallest member of its synonym set.
        canon = {}
        for head, group in synonyms.items():
            members = {head, *group}
            rep = min(members)
            for w in members:
                canon[w] = min(rep, canon.get(w, rep))
        _align_stage(cand, ref, aligned_c, aligned_r, lambda w: canon.get(w, w))
    return aligned_c


def count_chunks(alignment: Mapping[int, int]) -> int:
    chunks = 0
    prev = None
    for i in sorted(alignment):
        j = alignment[i]
        if prev is None or i != prev[0] + 1 or j != prev[1] + 1:
            chunks += 1
        prev = (i, j)
    return chunks


def meteor(
    candidate,
    reference,
    use_stem: bool = True,
    synonyms: Mapping[str, Iterable[str]] | None = None,
    alpha: float = 0.9,
    beta: float = 3.0,
    gamma: float = 0.5,
) -> float:
    """METEOR with F_mean = PR / (alpha P + (1 - alpha) R) and a chunk penalty.

    The defaults give F_mean = 10PR / (R + 9P) and penalty
    0.5 * (chunks / matches) ** 3.
    """
    cand, ref = _toks(candidate), _toks(reference)
    if not cand or not ref:
        return 0.0
    alignment = meteor_alignment(cand, ref, use_stem, synonyms)
    m = len(alignment)
    if m == 0:
        return 0.0
    p, r = m / len(cand), m / len(ref)
    f_mean = p * r / (alpha * p + (1 - alpha) * r)
    penalty = gamma * (count_chunks(alignment) / m) ** beta
    return f_mean * (1 - penalty)


# -- corpus ----------------------------------------------------------------


@dataclass
class MetricReport:
    b1: float
    b2: float
    b3: float
    b4: float
    avg_b: float
    r1: float
    r2: float
    rl: float
    meteor: float
    sample_count: int
    metadata: dict = field(default_factory=dict)

    SCORE_FIELDS = ("b2", "b4", "avg_b", "r1", "r2", "rl", "meteor")

    def scores(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in self.SCORE_FIELDS}

    def as_percent(self) -> dict[str, float]:
        return {k: round(100 * v, 2) for k, v in self.scores().items()}

    def to_dict(self) -> dict:
        d = asdict(self)
        d["percent"] = self.as_percent()
        return d


def score_pairs(
    pairs: Sequence[tuple[str, str]],
    bleu_mode: str = "corpus",
    smoothing: bool = False,
    use_stem: bool = True,
    synonyms: Mapping[str, Iterable[str]] | None = None,
) -> MetricReport:
    """Aggregate scores over (candidate, reference) pairs.

    ``bleu_mode="corpus"`` sums n-gram statistics over all pairs before the
    geometric mean; ``"sentence"`` averages per-pair BLEU. ROUGE and METEOR
    are always per-pair means.
    """
    if not pairs:
        raise ValueError("no pairs to score")
    toks = [(tokenize(c), tokenize(r)) for c, r in pairs]
    n = len(toks)
    if bleu_mode == "corpus":
        total = BleuStats([0] * 4, [0] * 4, 0, 0)
        for c, r in toks:
            total = total + bleu_stats(c, r, 4)
        bleus = [bleu_from_stats(total, k, smoothing) for k in range(1, 5)]
    elif bleu_mode == "sentence":
        per = [bleu_stats(c, r, 4) for c, r in toks]
        bleus = [sum(bleu_from_stats(s, k, smoothing) for s in per) / n for k in range(1, 5)]
    else:
        raise ValueError(f"unknown bleu_mode {bleu_mode!r}")

    r1 = sum(rouge_n(c, r, 1) for c, r in toks) / n
    r2 = sum(rouge_n(c, r, 2) for c, r in toks) / n
    rl = sum(rouge_l(c, r) for c, r in toks) / n
    met = sum(meteor(c, r, use_stem, synonyms) for c, r in toks) / n
    return MetricReport(
        b1=bleus[0],
        b2=bleus[1],
        b3=bleus[2],
        b4=bleus[3],
        avg_b=sum(bleus) / 4,
        r1=r1,
        r2=r2,
        rl=rl,
        meteor=met,
        sample_count=n,
        metadata={
            "tokenizer": TOKENIZER_ID,
            "smoothing": smoothing,
            "bleu_mode": bleu_mode,
            "meteor": METEOR_ID if not synonyms else "meteor-ess",
        },
    )


class MissingReferenceError(KeyError):
    def __init__(self, ids):
        self.ids = sorted(ids)
        super().__init__(self.ids)

    def __str__(self):
        return f"predictions without a manifest record: {', '.join(self.ids)}"


def evaluate_corpus(
    predictions: Mapping[str, str],
    manifest,
    field: str = "brief",
    split: str | None = "test",
    clip_limit: int | None = None,
    tokenizer=None,
    **kwargs,
) -> MetricReport:
    """Score predictions against the manifest's ``brief`` or ``detailed`` text.

    Prediction ids missing from the manifest raise; ids belonging to
    another split are skipped with a warning. ``clip_limit`` clips
    references to that many BPE tokens first.
    """
    if field not in ("brief", "detailed"):
        raise ValueError(f"field must be 'brief' or 'detailed', got {field!r}")
    records = {r.figure_id: r for r in manifest}
    missing = set(predictions) - set(records)
    if missing:
        raise MissingReferenceError(missing)
    extra = {fid for fid in predictions if split is not None and records[fid].split != split}
    if extra:
        warnings.warn(f"{len(extra)} predictions outside split {split!r} ignored", stacklevel=2)

    pairs = []
    for fid in sorted(predictions):
        if fid in extra:
            continue
        ref = getattr(records[fid], field)
        if clip_limit is not None:
            ref = clip_detailed(ref, clip_limit, tokenizer)
        pairs.append((predictions[fid], ref))
    report = score_pairs(pairs, **kwargs)
    report.metadata["field"] = field
    report.metadata["split"] = split
    report.metadata["clip_limit"] = clip_limit
    return report
