"""Regenerate the packaged default BPE merges from synthetic fixture text.

    python scripts/build_default_vocab.py [n_merges]
"""

import re
import sys
import tempfile
from pathlib import Path

from patentfig.fixtures import generate_fixture_corpus
from patentfig.tokenizer import BPETokenizer

OUT = Path(__file__).resolve().parents[1] / "src" / "patentfig" / "data" / "bpe_merges.txt"


def corpus_text(seeds=range(20)):
    with tempfile.TemporaryDirectory() as tmp:
        for seed in seeds:
            root = Path(tmp) / str(seed)
            generate_fixture_corpus(root, seed=seed, n_patents=6)
            for html in sorted((root / "html").glob("*.html")):
                yield re.sub(r"<[^>]+>", " ", html.read_text(encoding="utf-8"))
    prompts = Path(__file__).resolve().parents[1] / "src" / "patentfig" / "data" / "judge_prompts"
    for path in sorted(prompts.glob("*.txt")):
        yield path.read_text(encoding="utf-8")


def main():
    n_merges = int(sys.argv[1]) if len(sys.argv) > 1 else 1000
    tok = BPETokenizer.train(corpus_text(), n_merges)
    tok.save(OUT)
    print(f"wrote {len(tok.merges)} merges to {OUT} ({tok.tokenizer_id})")


if __name__ == "__main__":
    main()
