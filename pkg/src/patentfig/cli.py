"""Command-line entry point: ``patentfig <subcommand> ...``.

Exit codes: 0 ok, 2 usage, 3 config, 4 input data, 5 stage failure,
6 judge failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .corpus import ManifestError, load_manifest
from .judge import DEFAULT_MODEL, JudgeError
from .losses import loss_gradients
from .masking import build_patch_grid
from .metrics import MissingReferenceError, evaluate_corpus
from . import pipeline as pl

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_DATA, EXIT_STAGE, EXIT_JUDGE = 0, 2, 3, 4, 5, 6

log = logging.getLogger("patentfig")

_RESERVED = set(logging.LogRecord("", 0, "", 0, "", None, None).__dict__) | {"message"}


class JsonFormatter(logging.Formatter):
    def format(self, record: logging.LogRecord) -> str:
        row = {
            "ts": round(record.created, 3),
            "level": record.levelname.lower(),
            "logger": record.name,
            "event": record.getMessage(),
        }
        row.update({k: v for k, v in record.__dict__.items() if k not in _RESERVED})
        return json.dumps(row, default=str)


def setup_logging(verbose: bool = False) -> None:
    root = logging.getLogger("patentfig")
    root.handlers.clear()
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(JsonFormatter())
    root.addHandler(handler)
    root.setLevel(logging.DEBUG if verbose else logging.INFO)
    root.propagate = False
    logging.captureWarnings(True)
    wlog = logging.getLogger("py.warnings")
    wlog.handlers = [handler]
    wlog.propagate = False


def _emit(obj, out: str | None) -> None:
    text = json.dumps(obj, indent=1, sort_keys=True)
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)


def _emit_rows(rows, out: str | None) -> None:
    if out:
        pl.write_jsonl(Path(out), rows)
    else:
        for row in rows:
            print(json.dumps(row, sort_keys=True))


def _grid(args):
    return build_patch_grid(args.image_height, args.image_width, args.patch_size)


# -- subcommands -----------------------------------------------------------


def cmd_extract(args) -> int:
    from .tokenizer import load_tokenizer

    out = Path(args.out)
    unmatched = pl.stage_extract(
        load_manifest(args.figures), Path(args.html_dir), out,
        Path(args.diagnostics) if args.diagnostics else None, load_tokenizer(args.vocab),
    )
    if args.unmatched:
        pl.write_jsonl(Path(args.unmatched), unmatched)
    log.info("extracted", extra={"manifest": str(out), "unmatched": len(unmatched)})
    return EXIT_OK


def cmd_preprocess(args) -> int:
    out = Path(args.out) if args.out else Path(args.manifest).with_name("filtered.jsonl")
    rows = pl.stage_preprocess(
        load_manifest(args.manifest), out, Path(args.report), args.min_year,
        Path(args.orientation) if args.orientation else None,
    )
    log.info("preprocessed", extra={"manifest": str(out), "dropped": len(rows)})
    return EXIT_OK


def cmd_mask_plan(args) -> int:
    from .tokenizer import load_tokenizer

    rows = pl.stage_mask_plan(
        load_manifest(args.manifest), None, args.seed, args.token_ratio, args.patch_ratio,
        _grid(args), args.scope, args.workers, load_tokenizer(args.vocab),
    )
    _emit_rows(rows, args.out)
    return EXIT_OK


def cmd_labels(args) -> int:
    rows = pl.stage_labels(load_manifest(args.manifest), None, _grid(args), args.workers)
    _emit_rows(rows, args.out)
    return EXIT_OK


def cmd_losses(args) -> int:
    """Reads ``{"shape", "values", "targets", "logits"}``; values are probabilities unless logits is true."""
    data = json.loads(Path(args.preds).read_text(encoding="utf-8"))
    values = np.asarray(data["values"], dtype=np.float64).reshape(data["shape"])
    targets = np.asarray(data["targets"])
    if args.kind == "pc":
        targets = targets.reshape(values.shape)
    from . import losses

    result = {"kind": args.kind}
    if data.get("logits", False):
        loss, grad = loss_gradients(args.kind, values, targets)
        result["grad_sum"] = float(grad.sum())
        result["grad_abs_sum"] = float(np.abs(grad).sum())
        result["grad_sha256"] = hashlib.sha256(np.round(grad, 12).tobytes()).hexdigest()
    elif args.kind == "pc":
        loss = losses.pc_loss(values, targets)
    else:
        loss = losses.categorical_nll(values, targets)
    result["loss"] = loss
    _emit(result, args.out)
    return EXIT_OK


def cmd_eval(args) -> int:
    from .tokenizer import load_tokenizer

    report = evaluate_corpus(
        pl.read_predictions(args.preds), load_manifest(args.manifest), args.field,
        split=None if args.split == "all" else args.split,
        clip_limit=args.clip if args.clip and args.clip > 0 else None,
        tokenizer=load_tokenizer(args.vocab), bleu_mode=args.bleu_mode,
        smoothing=args.smoothing, use_stem=not args.no_stem,
    )
    _emit(report.to_dict(), args.report)
    return EXIT_OK


def cmd_judge(args) -> int:
    settings = pl.JudgeSettings(
        field=args.field, endpoint=args.endpoint, model=args.model, replay=args.replay,
        image_template=args.image_template, max_retries=args.max_retries, backoff=args.backoff,
        max_workers=args.workers, min_interval=args.min_interval,
        sample_size=args.sample_size, sample_seed=args.sample_seed,
    )
    if not settings.enabled:
        raise pl.ConfigError("judge needs --endpoint or --replay")
    rows = pl.stage_judge(load_manifest(args.manifest), pl.read_predictions(args.preds), settings, Path(args.out))
    failed = [r for r in rows if r.get("error")]
    log.info("judged", extra={"samples": len(rows) - 1, "failed": len(failed), "out": args.out})
    return EXIT_JUDGE if failed and len(failed) == len(rows) - 1 else EXIT_OK


def cmd_stats(args) -> int:
    from .tokenizer import load_tokenizer

    payload = pl.stats_payload(load_manifest(args.manifest), load_tokenizer(args.vocab))
    _emit(payload, args.out)
    if payload["exclusivity_violations"]:
        log.warning("patents in both train and held-out splits",
                    extra={"patents": payload["exclusivity_violations"]})
        return EXIT_DATA
    return EXIT_OK


def cmd_fixtures(args) -> int:
    from .fixtures import generate_fixture_corpus

    corpus = generate_fixture_corpus(args.out, seed=args.seed, n_patents=args.patents)
    print(json.dumps({"root": str(corpus.root), "manifest": str(corpus.manifest_path),
                      "figures": len(corpus.figure_ids)}))
    return EXIT_OK


def cmd_run(args) -> int:
    config = pl.load_config(args.config, args.set)
    stages = args.stages.split(",") if args.stages else None
    start = time.monotonic()
    results = pl.run_pipeline(config, stages, force=args.force)
    for r in results:
        print(json.dumps({"stage": r.stage, "status": r.status}))
    log.info("pipeline done", extra={"seconds": round(time.monotonic() - start, 3)})
    return EXIT_OK


# -- parser ----------------------------------------------------------------


def _add_grid(p) -> None:
    p.add_argument("--image-height", type=int, default=384)
    p.add_argument("--image-width", type=int, default=384)
    p.add_argument("--patch-size", type=int, default=16)


def _ratio(text: str) -> float:
    value = float(text)
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError(f"ratio must be in [0, 1], got {value}")
    return value


def _seed(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be a 64-bit unsigned integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="patentfig", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="fill manifest descriptions from patent HTML")
    p.add_argument("--figures", required=True, help="figure manifest (JSONL) with empty descriptions")
    p.add_argument("--html-dir", required=True, help="directory of <patent_id>.html files")
    p.add_argument("--out", required=True)
    p.add_argument("--diagnostics", help="directory for per-patent diagnostics")
    p.add_argument("--unmatched", help="JSONL of figures left out, with reasons")
    p.add_argument("--vocab")
    p.set_defaults(fn=cmd_extract)

    p = sub.add_parser("preprocess", help="orientation, filters and dedupe")
    p.add_argument("--manifest", required=True)
    p.add_argument("--min-year", type=int, default=2005)
    p.add_argument("--report", required=True, help="drop report (JSONL)")
    p.add_argument("--out", help="filtered manifest (default: filtered.jsonl next to --manifest)")
    p.add_argument("--orientation", help="orientation decisions (JSONL)")
    p.set_defaults(fn=cmd_preprocess)

    p = sub.add_parser("mask-plan", help="deterministic token and patch masks")
    p.add_argument("--manifest", required=True)
    p.add_argument("--token-ratio", type=_ratio, default=0.30)
    p.add_argument("--patch-ratio", type=_ratio, default=0.40)
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--scope", choices=("eligible", "all"), default="eligible")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--vocab")
    p.add_argument("--out")
    _add_grid(p)
    p.set_defaults(fn=cmd_mask_plan)

    p = sub.add_parser("labels", help="per-patch element category labels")
    p.add_argument("--manifest", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out")
    _add_grid(p)
    p.set_defaults(fn=cmd_labels)

    p = sub.add_parser("losses", help="evaluate a loss kernel on a JSON container")
    p.add_argument("--preds", required=True)
    p.add_argument("--kind", choices=("mlm", "lamim", "pc"), required=True)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_losses)

    p = sub.add_parser("eval", help="caption metrics for predictions")
    p.add_argument("--manifest", required=True)
    p.add_argument("--preds", required=True, help="JSONL of {figure_id, text}")
    p.add_argument("--field", choices=("brief", "detailed"), required=True)
    p.add_argument("--report")
    p.add_argument("--split", default="test", help="split to score, or 'all'")
    p.add_argument("--clip", type=int, default=None,
                   help="clip references to N tokens (default 500 for detailed, 0 disables)")
    p.add_argument("--bleu-mode", choices=("corpus", "sentence"), default="corpus")
    p.add_argument("--smoothing", action="store_true")
    p.add_argument("--no-stem", action="store_true")
    p.add_argument("--vocab")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("judge", help="LLM-judge scores for predictions")
    p.add_argument("--manifest", required=True)
    p.add_argument("--preds", required=True)
    p.add_argument("--field", choices=("brief", "detailed"), required=True)
    p.add_argument("--endpoint")
    p.add_argument("--replay", help="JSONL of scripted responses, for offline runs")
    p.add_argument("--model", default=DEFAULT_MODEL)
    p.add_argument("--out", required=True)
    p.add_argument("--image-template", default="{figure_id}",
                   help="format string building the image reference from manifest fields")
    p.add_argument("--sample-size", type=int)
    p.add_argument("--sample-seed", type=int, default=0)
    p.add_argument("--max-retries", type=int, default=2)
    p.add_argument("--backoff", type=float, default=1.0)
    p.add_argument("--min-interval", type=float, default=0.0)
    p.add_argument("--workers", type=int, default=4)
    p.set_defaults(fn=cmd_judge)

    p = sub.add_parser("stats", help="per-split corpus statistics")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out")
    p.add_argument("--vocab")
    p.set_defaults(fn=cmd_stats)

    p = sub.add_parser("fixtures", help="write a synthetic corpus with golden outputs")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--patents", type=int, default=5)
    p.set_defaults(fn=cmd_fixtures)

    p = sub.add_parser("run", help="run pipeline stages from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--stages", help=f"comma-separated subset of {','.join(pl.STAGES)}")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--force", action="store_true", help="rerun stages that are up to date")
    p.set_defaults(fn=cmd_run)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    setup_logging(args.verbose)
    if args.command == "eval" and args.clip is None and args.field == "detailed":
        args.clip = 500
    try:
        return args.fn(args)
    except pl.ConfigError as exc:
        log.error("config error", extra={"error": str(exc)})
        return EXIT_CONFIG
    except pl.StageError as exc:
        log.error("stage error", extra={"stage": exc.stage, "error": str(exc.cause)})
        return EXIT_STAGE
    except JudgeError as exc:
        log.error("judge error", extra={"error": str(exc)})
        return EXIT_JUDGE
    except (ManifestError, MissingReferenceError, FileNotFoundError, KeyError, ValueError) as exc:
        log.error("data error", extra={"error": str(exc), "type": type(exc).__name__})
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
