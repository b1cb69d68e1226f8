"""Stage functions and the end-to-end runner.

Each stage reads files and writes files. Outputs are written to
``<name>.partial`` and renamed on success, so a failed stage leaves only
partial files behind. A stage is skipped when all of its outputs are newer
than all of its inputs.
"""

from __future__ import annotations

import json
import logging
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, fields, replace
from itertools import groupby
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

from . import judge as judge_mod
from .corpus import (
    CorpusManifest,
    ManifestRecord,
    check_split_exclusivity,
    compute_stats,
    dump_record,
    load_manifest,
    read_elements_file,
    read_ocr_file,
)
from .html_extract import extract_descriptions, parse_patent_html, write_diagnostics
from .masking import build_patch_grid, build_patch_labels, eligible_patches, plan_figure
from .metrics import evaluate_corpus
from .preprocess import DropReason, decide_orientation, dedupe_representative, extract_figure_labels, filter_corpus
from .tokenizer import BPETokenizer, load_tokenizer

logger = logging.getLogger("patentfig.pipeline")

STAGES = ("extract", "preprocess", "mask-plan", "labels", "stats", "eval", "judge")


class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class JudgeSettings:
    field: str = "brief"
    endpoint: Optional[str] = None
    model: str = judge_mod.DEFAULT_MODEL
    replay: Optional[str] = None
    image_template: str = "{figure_id}"
    max_retries: int = 2
    backoff: float = 1.0
    max_workers: int = 4
    min_interval: float = 0.0
    sample_size: Optional[int] = None
    sample_seed: int = 0

    @property
    def enabled(self) -> bool:
        return bool(self.endpoint or self.replay)


@dataclass
class PipelineConfig:
    figures: str
    html_dir: str
    out_dir: str
    vocab: Optional[str] = None
    image_height: int = 384
    image_width: int = 384
    patch_size: int = 16
    token_ratio: float = 0.30
    patch_ratio: float = 0.40
    patch_scope: str = "eligible"
    seed: int = 0
    min_year: int = 2005
    smoothing: bool = False
    bleu_mode: str = "corpus"
    meteor_stem: bool = True
    eval_split: str = "test"
    clip_detailed: Optional[int] = 500
    predictions: dict = field(default_factory=dict)
    judge: JudgeSettings = field(default_factory=JudgeSettings)
    workers: int = 1

    def validate(self) -> None:
        for name in ("token_ratio", "patch_ratio"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {value}")
        try:
            build_patch_grid(self.image_height, self.image_width, self.patch_size)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if self.patch_scope not in ("eligible", "all"):
            raise ConfigError(f"patch_scope must be 'eligible' or 'all', got {self.patch_scope!r}")
        if self.vocab is not None and not Path(self.vocab).is_file():
            raise ConfigError(f"vocabulary file not found: {self.vocab}")
        for fld, path in self.predictions.items():
            if fld not in ("brief", "detailed"):
                raise ConfigError(f"predictions key must be brief or detailed, got {fld!r}")
        if self.judge.enabled and self.judge.field not in self.predictions:
            raise ConfigError(f"judge needs predictions for field {self.judge.field!r}")

    def tokenizer(self) -> BPETokenizer:
        return load_tokenizer(self.vocab)


def _coerce(value: str):
    try:
        return json.loads(value)
    except json.JSONDecodeError:
        return value


def load_config(path: str | Path | None = None, overrides: Sequence[str] = (), **values) -> PipelineConfig:
    """Read a JSON config, then apply ``key=value`` overrides (``judge.model=x`` for nested keys).

    Relative paths in the file are resolved against the file's directory.
    """
    data: dict = {}
    base = Path(".")
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        base = path.parent
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        for key in ("figures", "html_dir", "out_dir", "vocab"):
            if data.get(key) is not None:
                data[key] = str(base / data[key])
        data["predictions"] = {k: str(base / v) for k, v in data.get("predictions", {}).items()}
        if data.get("judge", {}).get("replay"):
            data["judge"]["replay"] = str(base / data["judge"]["replay"])
    data.update(values)
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"override must be key=value, got {item!r}")
        target = data
        *parents, leaf = key.split(".")
        for p in parents:
            target = target.setdefault(p, {})
        target[leaf] = _coerce(raw)

    known = {f.name for f in fields(PipelineConfig)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    judge_keys = {f.name for f in fields(JudgeSettings)}
    jdata = data.pop("judge", {}) or {}
    if set(jdata) - judge_keys:
        raise ConfigError(f"unknown judge keys: {', '.join(sorted(set(jdata) - judge_keys))}")
    for key in ("figures", "html_dir", "out_dir"):
        if key not in data:
            raise ConfigError(f"missing required config key {key!r}")
    try:
        cfg = PipelineConfig(**data, judge=JudgeSettings(**jdata))
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    cfg.validate()
    return cfg


# -- file helpers ----------------------------------------------------------


@contextmanager
def atomic_output(path: Path, mode: str = "w"):
    """Write to ``path.partial``; rename onto ``path`` only if the block succeeds."""
    path.parent.mkdir(parents=True, exist_ok=True)
    partial = path.with_name(path.name + ".partial")
    with open(partial, mode, encoding="utf-8") as fh:
        yield fh
    os.replace(partial, path)


def write_jsonl(path: Path, rows: Iterable[dict]) -> None:
    with atomic_output(path) as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")


def write_json(path: Path, obj) -> None:
    with atomic_output(path) as fh:
        fh.write(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def read_jsonl(path: str | Path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def read_predictions(path: str | Path) -> dict[str, str]:
    out = {}
    for row in read_jsonl(path):
        if row["figure_id"] in out:
            raise ValueError(f"{path}: duplicate prediction for {row['figure_id']}")
        out[row["figure_id"]] = row["text"]
    return out


def _rebase(rel: Optional[str], src: Path, dst: Path) -> Optional[str]:
    if rel is None:
        return None
    return os.path.relpath(src / rel, dst).replace(os.sep, "/")


def save_records(records: Iterable[ManifestRecord], path: Path) -> None:
    with atomic_output(path) as fh:
        for rec in records:
            fh.write(dump_record(rec) + "\n")


def _pmap(fn: Callable, items: Sequence, workers: int) -> list:
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# -- stages ----------------------------------------------------------------


def stage_extract(
    figures: CorpusManifest,
    html_dir: Path,
    out_manifest: Path,
    diagnostics_dir: Path | None = None,
    tokenizer: BPETokenizer | None = None,
) -> list[dict]:
    """Fill in descriptions from patent HTML; figures without both descriptions are left out.

    Returns one row per excluded figure with the reason.
    """
    tok = tokenizer or load_tokenizer()
    out_dir = out_manifest.parent
    kept: list[ManifestRecord] = []
    unmatched: list[dict] = []
    records = sorted(figures.records, key=lambda r: r.patent_id)
    for patent_id, group in groupby(records, key=lambda r: r.patent_id):
        group = list(group)
        html_path = Path(html_dir) / f"{patent_id}.html"
        if not html_path.is_file():
            unmatched += [{"figure_id": r.figure_id, "reason": "no-html"} for r in group]
            continue
        doc = parse_patent_html(html_path.read_text(encoding="utf-8"))
        labels = {}
        for r in group:
            label = r.figure_label
            if label is None and r.ocr_path:
                found = extract_figure_labels(read_ocr_file(figures.base_dir / r.ocr_path))
                label = found[0] if found else None
            labels[r.figure_id] = label
        wanted = sorted({l for l in labels.values() if l is not None})
        result = extract_descriptions(doc, wanted, tok)
        if diagnostics_dir is not None:
            diagnostics_dir.mkdir(parents=True, exist_ok=True)
            write_diagnostics(diagnostics_dir / f"{patent_id}.json", patent_id, result.diagnostics)
        for r in group:
            label = labels[r.figure_id]
            pair = result.descriptions.get(label) if label else None
            if pair is None:
                reason = result.unmatched.get(label, "no-label") if label else "no-label"
                unmatched.append({"figure_id": r.figure_id, "reason": reason})
                continue
            kept.append(
                replace(
                    r,
                    figure_label=label,
                    brief=pair.brief,
                    detailed=pair.detailed,
                    ocr_path=_rebase(r.ocr_path, figures.base_dir, out_dir),
                    elements_path=_rebase(r.elements_path, figures.base_dir, out_dir),
                    ocr_rotated_path=_rebase(r.ocr_rotated_path, figures.base_dir, out_dir),
                )
            )
    order = {r.figure_id: i for i, r in enumerate(figures.records)}
    kept.sort(key=lambda r: order[r.figure_id])
    unmatched.sort(key=lambda row: order[row["figure_id"]])
    save_records(kept, out_manifest)
    return unmatched


def stage_preprocess(
    manifest: CorpusManifest,
    out_manifest: Path,
    report: Path,
    min_year: int = 2005,
    orientation_log: Path | None = None,
) -> list[dict]:
    """Orientation choice, date/plot/multi-figure filters, then representative dedupe.

    Returns the drop report rows ``{figure_id, reason}`` in manifest order.
    """
    base, out_dir = manifest.base_dir, out_manifest.parent
    oriented: list[ManifestRecord] = []
    decisions = []
    for rec in manifest:
        if rec.ocr_rotated_path:
            original = read_ocr_file(base / rec.ocr_path) if rec.ocr_path else []
            rotated = read_ocr_file(base / rec.ocr_rotated_path)
            decision = decide_orientation(original, rotated)
            chosen = rec.ocr_path if decision.choice.value == "Original" else rec.ocr_rotated_path
            decisions.append({
                "figure_id": rec.figure_id,
                "choice": decision.choice.value,
                "avg_len_original": round(decision.avg_len_original, 6),
                "avg_len_rotated": round(decision.avg_len_rotated, 6),
            })
            rec = replace(rec, ocr_path=chosen, ocr_rotated_path=None)
        oriented.append(rec)

    loaded = [r.load_figure(base) for r in oriented]
    kept, dropped = filter_corpus(loaded, min_year)
    reasons = {fig.figure_id: reason.value for fig, reason in dropped}
    by_patent: dict[str, list] = {}
    for fig in kept:
        by_patent.setdefault(fig.patent_id, []).append(fig)
    survivors = set()
    for figs in by_patent.values():
        deduped = dedupe_representative(figs)
        survivors |= {f.figure_id for f in deduped}
        for f in figs:
            if f.figure_id not in survivors:
                reasons[f.figure_id] = DropReason.REDUNDANT.value

    out_records = [
        replace(
            r,
            ocr_path=_rebase(r.ocr_path, base, out_dir),
            elements_path=_rebase(r.elements_path, base, out_dir),
        )
        for r in oriented
        if r.figure_id in survivors
    ]
    save_records(out_records, out_manifest)
    rows = [{"figure_id": r.figure_id, "reason": reasons[r.figure_id]} for r in oriented if r.figure_id in reasons]
    write_jsonl(report, rows)
    if orientation_log is not None:
        write_jsonl(orientation_log, decisions)
    return rows


def ocr_token_ids(tokens, tokenizer: BPETokenizer) -> list[int]:
    return tokenizer.encode(" ".join(t.text for t in tokens))


def stage_mask_plan(
    manifest: CorpusManifest,
    out: Path | None,
    seed: int = 0,
    token_ratio: float = 0.30,
    patch_ratio: float = 0.40,
    grid=None,
    scope: str = "eligible",
    workers: int = 1,
    tokenizer: BPETokenizer | None = None,
) -> list[dict]:
    tok = tokenizer or load_tokenizer()
    grid = grid or build_patch_grid()

    def plan(rec: ManifestRecord) -> dict:
        ocr = read_ocr_file(manifest.base_dir / rec.ocr_path) if rec.ocr_path else []
        elements = read_elements_file(manifest.base_dir / rec.elements_path) if rec.elements_path else []
        return plan_figure(
            rec.figure_id,
            ocr_token_ids(ocr, tok),
            eligible_patches(grid, elements),
            seed,
            token_ratio,
            patch_ratio,
            scope=scope,
            patch_count=grid.patch_count,
        ).to_record()

    rows = _pmap(plan, list(manifest.records), workers)
    if out is not None:
        write_jsonl(out, rows)
    return rows


def stage_labels(manifest: CorpusManifest, out: Path | None, grid=None, workers: int = 1) -> list[dict]:
    grid = grid or build_patch_grid()

    def labels(rec: ManifestRecord) -> dict:
        elements = read_elements_file(manifest.base_dir / rec.elements_path) if rec.elements_path else []
        grid_labels = build_patch_labels(grid, elements)
        return {"figure_id": rec.figure_id, "patch_count": grid.patch_count, "labels": grid_labels.to_record()}

    rows = _pmap(labels, list(manifest.records), workers)
    if out is not None:
        write_jsonl(out, rows)
    return rows


def stats_payload(manifest: CorpusManifest, tokenizer: BPETokenizer | None = None) -> dict:
    tok = tokenizer or load_tokenizer()
    stats = compute_stats(manifest, tok)
    return {
        "tokenizer": tok.tokenizer_id,
        "splits": {name: s.rounded() for name, s in stats.items()},
        "exclusivity_violations": check_split_exclusivity(manifest),
    }


def eval_payload(report) -> dict:
    return report.to_dict()


def stage_judge(
    manifest: CorpusManifest,
    predictions: dict[str, str],
    settings: JudgeSettings,
    out: Path,
    transport=None,
) -> list[dict]:
    records = manifest.by_id()
    missing = sorted(set(predictions) - set(records))
    if missing:
        raise ValueError(f"predictions without a manifest record: {', '.join(missing)}")
    ids = judge_mod.select_samples(list(predictions), settings.sample_size, settings.sample_seed)
    samples = []
    for fid in ids:
        rec = records[fid]
        image = settings.image_template.format(**rec.to_dict())
        samples.append(judge_mod.JudgeSample(fid, image, getattr(rec, settings.field), predictions[fid]))
    if transport is None:
        transport = make_transport(settings)
    outcomes = judge_mod.judge_corpus(
        samples,
        settings.field,
        transport,
        max_workers=settings.max_workers,
        model=settings.model,
        max_retries=settings.max_retries,
        backoff=settings.backoff,
    )
    rows = []
    for sample, outcome in zip(samples, outcomes):
        if isinstance(outcome, judge_mod.JudgeOutcome):
            rows.append(outcome.to_record(sample.sample_id))
        else:
            rows.append({"figure_id": sample.sample_id, "error": str(outcome), "flagged": True})
    rows.append(judge_mod.corpus_mean_row(outcomes))
    write_jsonl(out, rows)
    return rows


def make_transport(settings: JudgeSettings):
    if settings.replay:
        script: dict = {}
        for row in read_jsonl(settings.replay):
            outcome = row["response"] if "response" in row else judge_mod.JudgeError(row.get("error", "scripted failure"))
            script.setdefault((row["image_ref"], int(row["variant"])), []).append(outcome)
        return judge_mod.ReplayTransport(script)
    return judge_mod.HttpChatTransport(
        settings.endpoint, rate_limiter=judge_mod.RateLimiter(settings.min_interval)
    )


# -- runner ----------------------------------------------------------------


def _fresh(outputs: Sequence[Path], inputs: Sequence[Path]) -> bool:
    if not all(p.exists() for p in outputs):
        return False
    newest_in = max((p.stat().st_mtime_ns for p in inputs if p.exists()), default=0)
    return min(p.stat().st_mtime_ns for p in outputs) > newest_in


@dataclass
class StageResult:
    stage: str
    status: str  # "ran", "up to date", "skipped"
    outputs: list[str] = field(default_factory=list)


def _html_inputs(html_dir: Path) -> list[Path]:
    return sorted(html_dir.glob("*.html")) if html_dir.is_dir() else []


def run_pipeline(
    config: PipelineConfig,
    stages: Sequence[str] | None = None,
    force: bool = False,
) -> list[StageResult]:
    """Run the requested stages (all by default) in dependency order."""
    config.validate()
    requested = list(STAGES if stages is None else stages)
    bad = [s for s in requested if s not in STAGES]
    if bad:
        raise ConfigError(f"unknown stages: {', '.join(bad)}")
    tok = config.tokenizer()
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    grid = build_patch_grid(config.image_height, config.image_width, config.patch_size)
    figures = Path(config.figures)
    html_dir = Path(config.html_dir)
    extracted = out / "manifest.jsonl"
    filtered = out / "filtered.jsonl"

    def extract():
        unmatched = stage_extract(load_manifest(figures), html_dir, extracted, out / "diagnostics", tok)
        write_jsonl(out / "unmatched.jsonl", unmatched)

    def preprocess():
        stage_preprocess(load_manifest(extracted), filtered, out / "drop_report.jsonl",
                         config.min_year, out / "orientation.jsonl")

    def mask_plan():
        stage_mask_plan(load_manifest(filtered), out / "mask_plans.jsonl", int(config.seed),
                        config.token_ratio, config.patch_ratio, grid, config.patch_scope,
                        config.workers, tok)

    def labels():
        stage_labels(load_manifest(filtered), out / "patch_labels.jsonl", grid, config.workers)

    def stats():
        write_json(out / "stats.json", stats_payload(load_manifest(filtered), tok))

    def evaluate():
        manifest = load_manifest(filtered)
        for fld, path in sorted(config.predictions.items()):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                report = evaluate_corpus(
                    read_predictions(path), manifest, fld, split=config.eval_split,
                    clip_limit=config.clip_detailed if fld == "detailed" else None,
                    tokenizer=tok, bleu_mode=config.bleu_mode, smoothing=config.smoothing,
                    use_stem=config.meteor_stem,
                )
            write_json(out / f"eval_{fld}.json", eval_payload(report))

    def run_judge():
        fld = config.judge.field
        stage_judge(load_manifest(filtered), read_predictions(config.predictions[fld]),
                    config.judge, out / f"judge_{fld}.jsonl")

    vocab_inputs = [Path(config.vocab)] if config.vocab else []
    pred_inputs = [Path(p) for _, p in sorted(config.predictions.items())]
    plan = {
        "extract": (extract, [figures, *_html_inputs(html_dir), *vocab_inputs], [extracted, out / "unmatched.jsonl"]),
        "preprocess": (preprocess, [extracted], [filtered, out / "drop_report.jsonl", out / "orientation.jsonl"]),
        "mask-plan": (mask_plan, [filtered, *vocab_inputs], [out / "mask_plans.jsonl"]),
        "labels": (labels, [filtered], [out / "patch_labels.jsonl"]),
        "stats": (stats, [filtered, *vocab_inputs], [out / "stats.json"]),
        "eval": (evaluate, [filtered, *pred_inputs], [out / f"eval_{f}.json" for f in sorted(config.predictions)]),
        "judge": (run_judge, [filtered, *pred_inputs], [out / f"judge_{config.judge.field}.jsonl"]),
    }
    results = []
    for name in STAGES:
        if name not in requested:
            continue
        fn, inputs, outputs = plan[name]
        if (name == "eval" and not config.predictions) or (name == "judge" and not config.judge.enabled):
            logger.info("stage skipped", extra={"stage": name, "reason": "not configured"})
            results.append(StageResult(name, "skipped"))
            continue
        if not force and _fresh(outputs, inputs):
            logger.info("up to date", extra={"stage": name})
            results.append(StageResult(name, "up to date", [str(p) for p in outputs]))
            continue
        logger.info("stage start", extra={"stage": name})
        try:
            fn()
        except Exception as exc:
            logger.error("stage failed", extra={"stage": name, "error": str(exc)})
            raise StageError(name, exc) from exc
        logger.info("stage done", extra={"stage": name})
        results.append(StageResult(name, "ran", [str(p) for p in outputs]))
    return results


def config_asdict(config: PipelineConfig) -> dict:
    return asdict(config)
