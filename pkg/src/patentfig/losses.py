"""Reference kernels for the three pre-training objectives.

Reductions follow the objectives as written: the masked-token and
masked-patch losses sum over masked positions, the patch-classification
loss sums over categories and averages over patches. Pass
``reduction="mean"`` to the categorical losses to compare against
frameworks that average per position.

Everything is float64 and uses the natural log.
"""

from __future__ import annotations

import warnings

import numpy as np

EPS = 1e-7


class ClampWarning(RuntimeWarning):
    """Probabilities were clamped to [EPS, 1 - EPS] before taking logs."""


def _as_probs(probs, targets):
    p = np.asarray(probs, dtype=np.float64)
    t = np.asarray(targets, dtype=np.int64)
    if p.ndim != 2:
        raise ValueError(f"expected (positions, vocab) probabilities, got shape {p.shape}")
    if t.shape != (p.shape[0],):
        raise ValueError(f"expected {p.shape[0]} targets, got shape {t.shape}")
    if p.shape[0] == 0:
        raise ValueError("need at least one masked position")
    if np.any(t < 0) or np.any(t >= p.shape[1]):
        raise ValueError("target index outside vocabulary")
    return p, t


def categorical_nll(probs, targets, reduction: str = "sum") -> float:
    """Negative log-likelihood of ``targets`` under per-position distributions."""
    p, t = _as_probs(probs, targets)
    picked = p[np.arange(len(t)), t]
    n_clamped = int(np.count_nonzero(picked < EPS))
    if n_clamped:
        warnings.warn(f"{n_clamped} target probabilities clamped to {EPS}", ClampWarning, stacklevel=3)
        picked = np.maximum(picked, EPS)
    total = -np.sum(np.log(picked))
    if reduction == "sum":
        return float(total)
    if reduction == "mean":
        return float(total / len(t))
    raise ValueError(f"unknown reduction {reduction!r}")


def mlm_loss(probs, targets, reduction: str = "sum") -> float:
    """Masked-token loss; ``probs[i]`` is the distribution at the i-th masked token."""
    return categorical_nll(probs, targets, reduction)


def lamim_loss(probs, targets, reduction: str = "sum") -> float:
    """Masked-patch loss over image-tokenizer codebook indices."""
    return categorical_nll(probs, targets, reduction)


def _pc_arrays(y_hat, y):
    yh = np.asarray(y_hat, dtype=np.float64)
    yy = np.asarray(y, dtype=np.float64)
    if yh.ndim != 2 or yh.shape != yy.shape:
        raise ValueError(f"shape mismatch: predictions {yh.shape}, targets {yy.shape}")
    if yh.shape[0] == 0:
        raise ValueError("need at least one patch")
    if not np.all((yy == 0) | (yy == 1)):
        raise ValueError("patch targets must be 0/1")
    return yh, yy


def pc_loss(y_hat, y) -> float:
    """Multi-label patch classification loss, mean over patches of class-summed BCE."""
    yh, yy = _pc_arrays(y_hat, y)
    clamped = np.clip(yh, EPS, 1.0 - EPS)
    bce = yy * np.log(clamped) + (1.0 - yy) * np.log1p(-clamped)
    return float(-bce.sum() / yh.shape[0])


def log_softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(logits) -> np.ndarray:
    return np.exp(log_softmax(logits))


def sigmoid(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def categorical_loss_and_grad(logits, targets, reduction: str = "sum") -> tuple[float, np.ndarray]:
    """Loss and d(loss)/d(logits) for softmax predictions: ``p - onehot(target)`` per position."""
    z = np.asarray(logits, dtype=np.float64)
    t = np.asarray(targets, dtype=np.int64)
    logp = log_softmax(z)
    rows = np.arange(len(t))
    loss = -logp[rows, t].sum()
    grad = np.exp(logp)
    grad[rows, t] -= 1.0
    if reduction == "mean":
        loss, grad = loss / len(t), grad / len(t)
    elif reduction != "sum":
        raise ValueError(f"unknown reduction {reduction!r}")
    return float(loss), grad


def pc_from_logits(logits, y) -> float:
    z = np.asarray(logits, dtype=np.float64)
    return pc_loss(sigmoid(z), y)


def pc_loss_and_grad(logits, y) -> tuple[float, np.ndarray]:
    """Loss and d(loss)/d(logits) for logistic patch scores: ``(y_hat - y) / M``."""
    z = np.asarray(logits, dtype=np.float64)
    yh, yy = _pc_arrays(sigmoid(z), y)
    clamped = np.clip(yh, EPS, 1.0 - EPS)
    return pc_loss(yh, yy), (clamped - yy) / yh.shape[0]


def loss_gradients(kind: str, logits, targets) -> tuple[float, np.ndarray]:
    """Dispatch on ``kind`` in {"mlm", "lamim", "pc"}."""
    if kind in ("mlm", "lamim"):
        return categorical_loss_and_grad(logits, targets)
    if kind == "pc":
        return pc_loss_and_grad(logits, targets)
    raise ValueError(f"unknown loss kind {kind!r}")
