import json
from pathlib import Path

import pytest

from patentfig.fixtures import generate_fixture_corpus
from patentfig.tokenizer import load_tokenizer

DATA = Path(__file__).parent / "data"


def read_jsonl(path):
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


@pytest.fixture(scope="session")
def tok():
    return load_tokenizer()


@pytest.fixture(scope="session")
def fixture_corpus(tmp_path_factory):
    return generate_fixture_corpus(tmp_path_factory.mktemp("fixture") / "corpus", seed=0, n_patents=5)


def write_config(corpus, out_dir, **extra) -> Path:
    cfg = {
        "figures": str(corpus.manifest_path),
        "html_dir": str(corpus.root / "html"),
        "out_dir": str(out_dir),
        "seed": 12345,
        "predictions": {
            "brief": str(corpus.root / "predictions_brief.jsonl"),
            "detailed": str(corpus.root / "predictions_detailed.jsonl"),
        },
    }
    cfg.update(extra)
    path = Path(out_dir).parent / f"{Path(out_dir).name}.config.json"
    path.write_text(json.dumps(cfg))
    return path


def pytest_terminal_summary(terminalreporter):
    from tests.test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
