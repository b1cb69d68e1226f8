"""Byte-level BPE tokenizer.

Token ids 0-255 are raw bytes; id ``256 + k`` is the k-th merge in the
merges file. Every byte string is encodable, so ``decode(encode(x)) == x``
for any text that is valid UTF-8.
"""

from __future__ import annotations

import hashlib
import re
from collections import Counter
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable

# GPT-2 style pre-tokenization, ASCII classes only (stdlib ``re`` has no \p{L}).
_PRETOKEN = re.compile(
    r"""'(?:[sdmt]|ll|ve|re)| ?[A-Za-z]+| ?[0-9]+| ?[^\sA-Za-z0-9]+|\s+(?!\S)|\s+"""
)

DEFAULT_MERGES = "bpe_merges.txt"


class BPETokenizer:
    def __init__(self, merges: list[tuple[bytes, bytes]]):
        self.merges = list(merges)
        self.ranks = {pair: i for i, pair in enumerate(self.merges)}
        self.vocab: dict[int, bytes] = {i: bytes([i]) for i in range(256)}
        for i, (a, b) in enumerate(self.merges):
            self.vocab[256 + i] = a + b
        self.ids = {tok: i for i, tok in self.vocab.items()}
        digest = hashlib.sha256(self.dumps().encode("ascii")).hexdigest()
        self.tokenizer_id = f"bpe-{len(self.merges)}-{digest[:12]}"
        self._encode_chunk = lru_cache(maxsize=65536)(self._encode_chunk_uncached)

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    # -- serialization -------------------------------------------------

    def dumps(self) -> str:
        lines = ["#bpe-merges v1"]
        lines += [f"{a.hex()} {b.hex()}" for a, b in self.merges]
        return "\n".join(lines) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps(), encoding="ascii")

    @classmethod
    def loads(cls, text: str) -> "BPETokenizer":
        merges = []
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                left, right = line.split()
                merges.append((bytes.fromhex(left), bytes.fromhex(right)))
            except ValueError as exc:
                raise ValueError(f"bad merge on line {lineno}: {line!r}") from exc
        return cls(merges)

    @classmethod
    def from_file(cls, path: str | Path) -> "BPETokenizer":
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"BPE merges file not found: {path}")
        return cls.loads(path.read_text(encoding="ascii"))

    # -- encoding ------------------------------------------------------

    def _encode_chunk_uncached(self, chunk: str) -> tuple[int, ...]:
        parts = [bytes([b]) for b in chunk.encode("utf-8")]
        while len(parts) > 1:
            best = None
            best_rank = None
            for pair in zip(parts, parts[1:]):
                rank = self.ranks.get(pair)
                if rank is not None and (best_rank is None or rank < best_rank):
                    best, best_rank = pair, rank
            if best is None:
                break
            merged = []
            i = 0
            while i < len(parts):
                if i < len(parts) - 1 and (parts[i], parts[i + 1]) == best:
                    merged.append(best[0] + best[1])
                    i += 2
                else:
                    merged.append(parts[i])
                    i += 1
            parts = merged
        return tuple(self.ids[p] for p in parts)

    def encode(self, text: str) -> list[int]:
        ids: list[int] = []
        for match in _PRETOKEN.finditer(text):
            ids.extend(self._encode_chunk(match.group(0)))
        return ids

    def decode(self, ids: Iterable[int]) -> str:
        return b"".join(self.vocab[i] for i in ids).decode("utf-8", errors="replace")

    def count(self, text: str) -> int:
        return len(self.encode(text))

    # -- training ------------------------------------------------------

    @classmethod
    def train(cls, texts: Iterable[str], num_merges: int) -> "BPETokenizer":
        """Learn ``num_merges`` merges from a text iterable.

        Ties between equally frequent pairs are broken by the byte values of
        the pair, so training is deterministic.
        """
        words: Counter[tuple[bytes, ...]] = Counter()
        for text in texts:
            for match in _PRETOKEN.finditer(text):
                words[tuple(bytes([b]) for b in match.group(0).encode("utf-8"))] += 1

        merges: list[tuple[bytes, bytes]] = []
        for _ in range(num_merges):
            pairs: Counter[tuple[bytes, bytes]] = Counter()
            for word, freq in words.items():
                for pair in zip(word, word[1:]):
                    pairs[pair] += freq
            if not pairs:
                break
            best = min(pairs, key=lambda p: (-pairs[p], p))
            if pairs[best] < 2:
                break
            merges.append(best)
            joined = best[0] + best[1]
            new_words: Counter[tuple[bytes, ...]] = Counter()
            for word, freq in words.items():
                out = []
                i = 0
                while i < len(word):
                    if i < len(word) - 1 and (word[i], word[i + 1]) == best:
                        out.append(joined)
                        i += 2
                    else:
                        out.append(word[i])
                        i += 1
                new_words[tuple(out)] += freq
            words = new_words
        return cls(merges)


@lru_cache(maxsize=None)
def _load_default() -> BPETokenizer:
    text = resources.files("patentfig.data").joinpath(DEFAULT_MERGES).read_text("ascii")
    return BPETokenizer.loads(text)


def load_tokenizer(path: str | Path | None = None) -> BPETokenizer:
    """Load a merges file, or the packaged default vocabulary when ``path`` is None."""
    if path is None:
        return _load_default()
    return BPETokenizer.from_file(path)
