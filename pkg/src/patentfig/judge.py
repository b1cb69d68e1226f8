"""LLM-judge scoring of generated descriptions.

Each sample is scored with five prompt variants at temperature 0 and the
six per-criterion integer scores (0-2) are averaged over the variants
that succeeded.
"""

from __future__ import annotations

import logging
import os
import random
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Callable, Mapping, Optional, Protocol, Sequence

import httpx

logger = logging.getLogger(__name__)

CRITERIA = ("relevance", "accuracy", "completeness", "coherence", "fluency", "coverage")
N_VARIANTS = 5
DEFAULT_MODEL = "gpt-4-vision-preview"
CREDENTIAL_ENV = "JUDGE_API_KEY"

_PLACEHOLDER = re.compile(r"#(img_url|gt_desc|gen_desc)#")
_RESULTS = re.compile(r"<results>(.*?)</results>", re.IGNORECASE | re.DOTALL)
_LINE = re.compile(
    r"^\s*(" + "|".join(CRITERIA) + r")\s*:\s*(\S+)\s*$", re.IGNORECASE | re.MULTILINE
)


class JudgeError(RuntimeError):
    pass


class JudgeParseError(JudgeError):
    def __init__(self, message: str, raw: str):
        super().__init__(message)
        self.raw = raw


@dataclass(frozen=True)
class JudgeScores:
    relevance: float
    accuracy: float
    completeness: float
    coherence: float
    fluency: float
    coverage: float

    def as_dict(self) -> dict[str, float]:
        return {c: getattr(self, c) for c in CRITERIA}

    @classmethod
    def mean(cls, scores: Sequence["JudgeScores"]) -> "JudgeScores":
        if not scores:
            raise ValueError("no scores to average")
        return cls(**{c: sum(getattr(s, c) for s in scores) / len(scores) for c in CRITERIA})


@dataclass(frozen=True)
class JudgeRequest:
    image_ref: str
    ground_truth: str
    generated: str
    kind: str = "brief"
    variant: int = 0

    def __post_init__(self):
        if self.kind not in ("brief", "detailed"):
            raise ValueError(f"kind must be 'brief' or 'detailed', got {self.kind!r}")
        if not 0 <= self.variant < N_VARIANTS:
            raise ValueError(f"prompt variant must be in [0, {N_VARIANTS}), got {self.variant}")
        if not self.ground_truth or not self.generated:
            raise ValueError("ground truth and generated text must be non-empty")


@lru_cache(maxsize=None)
def load_prompt_template(variant: int) -> tuple[str, str]:
    """(system, user) templates for one variant, read from package data."""
    if not 0 <= variant < N_VARIANTS:
        raise ValueError(f"prompt variant must be in [0, {N_VARIANTS}), got {variant}")
    raw = (
        resources.files("patentfig.data")
        .joinpath("judge_prompts", f"variant_{variant}.txt")
        .read_text(encoding="utf-8")
    )
    head, _, rest = raw.partition("[system]\n")
    system, _, user = rest.partition("\n[user]\n")
    if head.strip() or not system or not user:
        raise ValueError(f"prompt variant {variant} is not in [system]/[user] form")
    return system, user.removesuffix("\n")


def build_judge_prompt(req: JudgeRequest) -> tuple[str, str]:
    system, user = load_prompt_template(req.variant)
    if req.kind == "detailed":
        system = system.replace("brief", "detailed")
    values = {"img_url": req.image_ref, "gt_desc": req.ground_truth, "gen_desc": req.generated}
    return system, _PLACEHOLDER.sub(lambda m: values[m.group(1)], user)


def parse_judge_scores(response_text: str) -> JudgeScores:
    blocks = _RESULTS.findall(response_text)
    if not blocks:
        raise JudgeParseError("response has no <results> block", response_text)
    # The last block is the answer; earlier ones may echo the instructions.
    found: dict[str, int] = {}
    for name, value in _LINE.findall(blocks[-1]):
        name = name.lower()
        if name in found:
            continue
        if value not in ("0", "1", "2"):
            raise JudgeParseError(f"{name} score {value!r} is not one of 0, 1, 2", response_text)
        found[name] = int(value)
    missing = [c for c in CRITERIA if c not in found]
    if missing:
        raise JudgeParseError(f"missing criteria: {', '.join(missing)}", response_text)
    return JudgeScores(**found)


def format_judge_scores(scores: JudgeScores) -> str:
    lines = [f"{c.capitalize()}: {int(getattr(scores, c))}" for c in CRITERIA]
    return "<results>\n" + "\n".join(lines) + "\n</results>"


# -- transports ------------------------------------------------------------


@dataclass(frozen=True)
class ChatRequest:
    system: str
    user: str
    image_ref: str
    model: str
    temperature: float = 0.0
    variant: int = 0


class ChatTransport(Protocol):
    def complete(self, request: ChatRequest) -> str: ...


class RateLimiter:
    """Enforces a minimum interval between request starts across threads."""

    def __init__(self, min_interval: float = 0.0, clock=time.monotonic, sleep=time.sleep):
        self.min_interval = min_interval
        self._clock = clock
        self._sleep = sleep
        self._lock = threading.Lock()
        self._next = 0.0

    def wait(self) -> None:
        if self.min_interval <= 0:
            return
        with self._lock:
            now = self._clock()
            delay = self._next - now
            self._next = max(now, self._next) + self.min_interval
        if delay > 0:
            self._sleep(delay)


class HttpChatTransport:
    """OpenAI-compatible chat-completions client; the image is passed by reference."""

    def __init__(
        self,
        endpoint: str,
        api_key: str | None = None,
        timeout: float = 60.0,
        rate_limiter: RateLimiter | None = None,
        client=None,
    ):
        self.endpoint = endpoint
        self.api_key = api_key if api_key is not None else os.environ.get(CREDENTIAL_ENV)
        if not self.api_key:
            raise JudgeError(f"no credential: set {CREDENTIAL_ENV}")
        self.rate_limiter = rate_limiter or RateLimiter()
        self.client = client or httpx.Client(timeout=timeout)

    def payload(self, request: ChatRequest) -> dict:
        return {
            "model": request.model,
            "temperature": request.temperature,
            "messages": [
                {"role": "system", "content": request.system},
                {
                    "role": "user",
                    "content": [
                        {"type": "text", "text": request.user},
                        {"type": "image_url", "image_url": {"url": request.image_ref}},
                    ],
                },
            ],
        }

    def complete(self, request: ChatRequest) -> str:
        self.rate_limiter.wait()
        resp = self.client.post(
            self.endpoint,
            json=self.payload(request),
            headers={"Authorization": f"Bearer {self.api_key}"},
        )
        resp.raise_for_status()
        return resp.json()["choices"][0]["message"]["content"]


class ReplayTransport:
    """Offline transport returning scripted responses.

    ``script`` is either a callable taking the ChatRequest, or a mapping
    from ``(image_ref, variant)`` to a list of outcomes consumed in order.
    The last outcome in a list repeats once the others are used up. An
    outcome that is an exception instance is raised instead of returned.
    """

    def __init__(self, script: Callable[[ChatRequest], str] | Mapping[tuple[str, int], list]):
        self._lock = threading.Lock()
        self.calls: list[ChatRequest] = []
        if callable(script):
            self._fn = script
            self._queues = None
        else:
            self._fn = None
            self._queues = {k: list(v) for k, v in script.items()}

    def complete(self, request: ChatRequest) -> str:
        with self._lock:
            self.calls.append(request)
            if self._fn is not None:
                outcome = self._fn(request)
            else:
                queue = self._queues.get((request.image_ref, request.variant))
                if not queue:
                    raise JudgeError(f"no scripted response for {request.image_ref} variant {request.variant}")
                outcome = queue.pop(0) if len(queue) > 1 else queue[0]
        if isinstance(outcome, BaseException):
            raise outcome
        return outcome


# -- protocol --------------------------------------------------------------


@dataclass
class JudgeOutcome:
    scores: JudgeScores
    variants_ok: int
    failed_variants: list[int] = field(default_factory=list)
    errors: dict[int, str] = field(default_factory=dict)

    @property
    def flagged(self) -> bool:
        return bool(self.failed_variants)

    def to_record(self, sample_id: str) -> dict:
        return {
            "figure_id": sample_id,
            **self.scores.as_dict(),
            "variants_ok": self.variants_ok,
            "failed_variants": self.failed_variants,
            "flagged": self.flagged,
        }


def judge_sample(
    image_ref: str,
    ground_truth: str,
    generated: str,
    kind: str,
    transport: ChatTransport,
    model: str = DEFAULT_MODEL,
    max_retries: int = 2,
    backoff: float = 1.0,
    sleep: Callable[[float], None] = time.sleep,
) -> JudgeOutcome:
    """Score one sample with all prompt variants and average per criterion.

    A variant that keeps failing (transport error or unparseable reply)
    after ``max_retries`` retries is excluded from the average and the
    outcome is flagged. Raises JudgeError when every variant fails.
    """
    raw: list[JudgeScores] = []
    failed: list[int] = []
    errors: dict[int, str] = {}
    for variant in range(N_VARIANTS):
        req = JudgeRequest(image_ref, ground_truth, generated, kind, variant)
        system, user = build_judge_prompt(req)
        chat = ChatRequest(system, user, image_ref, model, 0.0, variant)
        for attempt in range(max_retries + 1):
            try:
                raw.append(parse_judge_scores(transport.complete(chat)))
                break
            except Exception as exc:  # transport and parse failures are retried alike
                errors[variant] = f"{type(exc).__name__}: {exc}"
                logger.debug("judge variant %d attempt %d failed: %s", variant, attempt, exc)
                if attempt < max_retries and backoff > 0:
                    sleep(backoff * 2**attempt)
        else:
            failed.append(variant)
    if not raw:
        raise JudgeError(f"all {N_VARIANTS} prompt variants failed for {image_ref}: {errors}")
    final_errors = {v: e for v, e in errors.items() if v in failed}
    return JudgeOutcome(JudgeScores.mean(raw), len(raw), failed, final_errors)


@dataclass(frozen=True)
class JudgeSample:
    sample_id: str
    image_ref: str
    ground_truth: str
    generated: str


def judge_corpus(
    samples: Sequence[JudgeSample],
    kind: str,
    transport: ChatTransport,
    max_workers: int = 4,
    **kwargs,
) -> list[JudgeOutcome | JudgeError]:
    """Judge samples concurrently; results keep the input order.

    A sample whose variants all fail yields its JudgeError in place of an
    outcome.
    """

    def one(s: JudgeSample):
        try:
            return judge_sample(s.image_ref, s.ground_truth, s.generated, kind, transport, **kwargs)
        except JudgeError as exc:
            return exc

    with ThreadPoolExecutor(max_workers=max(1, max_workers)) as pool:
        return list(pool.map(one, samples))


def corpus_mean_row(outcomes: Sequence[JudgeOutcome]) -> dict:
    ok = [o for o in outcomes if isinstance(o, JudgeOutcome)]
    row: dict = {"figure_id": None, "row": "mean", "sample_count": len(ok)}
    if ok:
        row.update({c: round(v, 2) for c, v in JudgeScores.mean([o.scores for o in ok]).as_dict().items()})
    return row


def select_samples(ids: Sequence[str], k: Optional[int], seed: int = 0) -> list[str]:
    """Seeded subset of ``k`` ids (all of them when k is None), in sorted order."""
    ordered = sorted(ids)
    if k is None or k >= len(ordered):
        return ordered
    return sorted(random.Random(seed).sample(ordered, k))
