"""Patch-grid geometry, mask planning and patch-classification targets.

Boxes arrive on the normalized 0-1000 grid and are rescaled to the resized
image (``x * W / 1000``). Patch and box rectangles are half-open and only
positive-area overlap counts, so a box that merely touches a patch edge
does not claim that patch. All geometry is done in exact integer
arithmetic.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .corpus import CATEGORY_ORDER, BoundingBox, ElementBox

DEFAULT_IMAGE_SIZE = 384
DEFAULT_PATCH_SIZE = 16
DEFAULT_TOKEN_RATIO = 0.30
DEFAULT_PATCH_RATIO = 0.40

# Independent random streams derived from one per-figure seed.
_TOKEN_STREAM = 0
_PATCH_STREAM = 1


@dataclass(frozen=True)
class PatchGrid:
    height: int
    width: int
    patch_size: int

    @property
    def rows(self) -> int:
        return self.height // self.patch_size

    @property
    def columns(self) -> int:
        return self.width // self.patch_size

    @property
    def patch_count(self) -> int:
        return self.rows * self.columns

    def index(self, row: int, column: int) -> int:
        return row * self.columns + column


def build_patch_grid(
    height: int = DEFAULT_IMAGE_SIZE,
    width: int = DEFAULT_IMAGE_SIZE,
    patch_size: int = DEFAULT_PATCH_SIZE,
) -> PatchGrid:
    if patch_size <= 0:
        raise ValueError("patch_size must be positive")
    if height <= 0 or height % patch_size:
        raise ValueError(f"height {height} is not divisible by patch size {patch_size}")
    if width <= 0 or width % patch_size:
        raise ValueError(f"width {width} is not divisible by patch size {patch_size}")
    return PatchGrid(height, width, patch_size)


def _span(lo: int, hi: int, extent: int, p: int, count: int) -> range:
    # Patches k with k*p < hi*extent/1000 and (k+1)*p > lo*extent/1000.
    unit = 1000 * p
    first = (lo * extent) // unit
    last = -((-hi * extent) // unit) - 1
    return range(max(first, 0), min(last, count - 1) + 1)


def patches_for_box(grid: PatchGrid, box: BoundingBox) -> set[int]:
    if box.x0 == box.x1 or box.y0 == box.y1:
        return set()
    cols = _span(box.x0, box.x1, grid.width, grid.patch_size, grid.columns)
    rows = _span(box.y0, box.y1, grid.height, grid.patch_size, grid.rows)
    return {grid.index(r, c) for r in rows for c in cols}


def eligible_patches(grid: PatchGrid, elements: Iterable[ElementBox]) -> set[int]:
    out: set[int] = set()
    for el in elements:
        out |= patches_for_box(grid, el.box)
    return out


def mask_count(n: int, ratio: float) -> int:
    """Round-half-up of ``ratio * n``, at least 1 when ``n > 0`` and ``ratio > 0``."""
    if not 0.0 <= ratio <= 1.0:
        raise ValueError(f"ratio must be in [0, 1], got {ratio}")
    if n == 0 or ratio == 0:
        return 0
    # Parse the decimal spelling so 0.3 * 5 rounds on 1.5 exactly.
    k = int(Fraction(repr(float(ratio))) * n + Fraction(1, 2))
    return min(n, max(1, k))


def figure_seed(global_seed: int, figure_id: str) -> int:
    """Per-figure 64-bit seed, independent of corpus order."""
    payload = f"{int(global_seed) & 0xFFFFFFFFFFFFFFFF}:{figure_id}".encode("utf-8")
    return int.from_bytes(hashlib.blake2b(payload, digest_size=8).digest(), "little")


def _sample(candidates: Sequence[int], k: int, seed: int, stream: int) -> list[int]:
    """Partial Fisher-Yates over the sorted candidates; returns a sorted sample."""
    pool = sorted(candidates)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, stream])))
    n = len(pool)
    for i in range(k):
        j = int(rng.integers(i, n))
        pool[i], pool[j] = pool[j], pool[i]
    return sorted(pool[:k])


def plan_lamim_mask(
    eligible: Iterable[int],
    ratio: float = DEFAULT_PATCH_RATIO,
    seed: int = 0,
    *,
    scope: str = "eligible",
    patch_count: int | None = None,
) -> list[int]:
    """Masked patch indices, always drawn from the element-bearing patches.

    ``scope="eligible"`` sizes the mask against the eligible set. With
    ``scope="all"`` the size is ``ratio * patch_count`` instead, capped at
    the number of eligible patches.
    """
    pool = sorted(set(eligible))
    if scope == "eligible":
        k = mask_count(len(pool), ratio)
    elif scope == "all":
        if patch_count is None:
            raise ValueError("scope='all' needs patch_count")
        k = min(mask_count(patch_count, ratio), len(pool))
    else:
        raise ValueError(f"unknown scope {scope!r}")
    return _sample(pool, k, seed, _PATCH_STREAM)


def plan_mlm_mask(tokens: Sequence[int], ratio: float = DEFAULT_TOKEN_RATIO, seed: int = 0) -> list[int]:
    """Indices into ``tokens`` selected for masked language modeling."""
    return _sample(range(len(tokens)), mask_count(len(tokens), ratio), seed, _TOKEN_STREAM)


@dataclass(frozen=True)
class MaskPlan:
    figure_id: str
    seed: int
    masked_token_indices: tuple[int, ...]
    masked_patch_indices: tuple[int, ...]
    token_ratio: float
    patch_ratio: float
    eligible_count: int
    token_count: int

    def to_record(self) -> dict:
        return {
            "figure_id": self.figure_id,
            "seed": self.seed,
            "t_m": list(self.masked_token_indices),
            "r_m": list(self.masked_patch_indices),
            "eligible_count": self.eligible_count,
            "token_count": self.token_count,
        }


def plan_figure(
    figure_id: str,
    token_ids: Sequence[int],
    eligible: Iterable[int],
    global_seed: int,
    token_ratio: float = DEFAULT_TOKEN_RATIO,
    patch_ratio: float = DEFAULT_PATCH_RATIO,
    scope: str = "eligible",
    patch_count: int | None = None,
) -> MaskPlan:
    eligible = sorted(set(eligible))
    seed = figure_seed(global_seed, figure_id)
    return MaskPlan(
        figure_id=figure_id,
        seed=seed,
        masked_token_indices=tuple(plan_mlm_mask(token_ids, token_ratio, seed)),
        masked_patch_indices=tuple(
            plan_lamim_mask(eligible, patch_ratio, seed, scope=scope, patch_count=patch_count)
        ),
        token_ratio=token_ratio,
        patch_ratio=patch_ratio,
        eligible_count=len(eligible),
        token_count=len(token_ids),
    )


@dataclass(frozen=True)
class PatchLabelGrid:
    """Binary patch x category targets; columns follow ``CATEGORY_ORDER``."""

    labels: np.ndarray

    @property
    def patch_count(self) -> int:
        return self.labels.shape[0]

    def to_record(self) -> dict:
        return {
            cat.value: np.flatnonzero(self.labels[:, j]).tolist()
            for j, cat in enumerate(CATEGORY_ORDER)
        }

    @classmethod
    def from_record(cls, record: dict, patch_count: int) -> "PatchLabelGrid":
        y = np.zeros((patch_count, len(CATEGORY_ORDER)), dtype=np.uint8)
        for j, cat in enumerate(CATEGORY_ORDER):
            y[record.get(cat.value, []), j] = 1
        return cls(y)


def build_patch_labels(grid: PatchGrid, elements: Iterable[ElementBox]) -> PatchLabelGrid:
    y = np.zeros((grid.patch_count, len(CATEGORY_ORDER)), dtype=np.uint8)
    for el in elements:
        idx = sorted(patches_for_box(grid, el.box))
        if idx:
            y[idx, el.category.column] = 1
    return PatchLabelGrid(y)
