"""Loss primitives. Batched forms return ``(loss, grads...)``; scalar forms wrap them."""
from __future__ import annotations

import numpy as np

from timecl.model.arch import sigmoid


def bpr_batch(pred, pos, neg):
    """Per-row ``-log sigmoid(pred.pos - pred.neg)`` and gradients wrt the three inputs."""
    margin = np.sum(pred * (pos - neg), axis=-1)
    loss = np.logaddexp(0.0, -margin)
    dm = -sigmoid(-margin)[..., None]
    return loss, dm * (pos - neg), dm * pred, -dm * pred


def bpr_loss(pred, pos_emb, neg_emb) -> float:
    pred, pos_emb, neg_emb = (np.asarray(a, dtype=np.float64) for a in (pred, pos_emb, neg_emb))
    if not pred.shape == pos_emb.shape == neg_emb.shape:
        raise ValueError("bpr_loss inputs must have equal lengths")
    return float(bpr_batch(pred, pos_emb, neg_emb)[0])


def ce_batch(logits, labels):
    """Stable softmax cross-entropy per row, and the gradient wrt logits."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[-1]):
        raise IndexError("class index out of range")
    shifted = logits - logits.max(axis=-1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=-1))
    rows = np.arange(len(labels))
    loss = logz - shifted[rows, labels]
    dlogits = np.exp(shifted - logz[:, None])
    dlogits[rows, labels] -= 1.0
    return loss, dlogits


def ce_loss(logits, class_index: int) -> float:
    logits = np.asarray(logits, dtype=np.float64)
    if not 0 <= class_index < len(logits):
        raise IndexError(f"class index {class_index} out of range [0, {len(logits)})")
    if np.isinf(logits).any():
        top = np.isposinf(logits)
        if top[class_index]:
            return float(np.log(top.sum()))
        if top.any():
            return float("inf")
    return float(ce_batch(logits[None, :], np.array([class_index]))[0][0])


def mse_batch(a, b):
    diff = a - b
    return (diff * diff).mean(axis=-1), 2.0 * diff / a.shape[-1]


def mse_loss(a, b) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("mse_loss inputs must have equal lengths")
    return float(mse_batch(a, b)[0])


def _normalize(x):
    norm = np.maximum(np.linalg.norm(x, axis=-1, keepdims=True), 1e-12)
    return x / norm, norm


def contrastive_batch(reps_a1, reps_a2):
    """Mean InfoNCE over anchors ``reps_a1[l]`` with positive ``reps_a2[l]``.

    Negatives are the other ``2(N-1)`` views in the batch; similarities are
    plain cosines (no temperature).  Returns ``(loss, d_a1, d_a2)``.
    """
    a1 = np.asarray(reps_a1, dtype=np.float64)
    a2 = np.asarray(reps_a2, dtype=np.float64)
    N = len(a1)
    if N < 2:
        raise ValueError("contrastive loss needs N >= 2 (no negatives otherwise)")
    if a1.shape != a2.shape:
        raise ValueError("view batches must have equal shapes")
    x = np.concatenate([a1, a2])
    z, norm = _normalize(x)
    sim = z[:N] @ z.T  # (N, 2N)
    rows = np.arange(N)
    logits = sim.copy()
    logits[rows, rows] = -np.inf  # an anchor is not its own negative
    top = logits.max(axis=1, keepdims=True)
    w = np.exp(logits - top)
    lse = np.log(w.sum(axis=1)) + top[:, 0]
    loss = float(np.mean(lse - sim[rows, rows + N]))
    dsim = w / w.sum(axis=1, keepdims=True)
    dsim[rows, rows + N] -= 1.0
    dsim /= N
    dz = dsim.T @ z[:N]
    dz[:N] += dsim @ z
    dx = (dz - z * np.sum(dz * z, axis=-1, keepdims=True)) / norm
    return loss, dx[:N], dx[N:]


def contrastive_loss(reps_a1, reps_a2) -> float:
    return contrastive_batch(reps_a1, reps_a2)[0]
