"""Model-level objectives. Each returns ``(loss, Grads)`` with exact gradients."""
from __future__ import annotations

from typing import Callable

import numpy as np

from timecl.model.arch import ModelState, task_gates
from timecl.model.losses import bpr_batch, ce_batch, contrastive_batch, mse_batch
from timecl.model.network import Grads, encode, encode_backward

Objective = Callable[[ModelState], "tuple[float, Grads]"]


def _scatter_rows(model: ModelState, ids: np.ndarray, rows: np.ndarray) -> np.ndarray:
    out = np.zeros_like(model.params["item_emb"])
    np.add.at(out, ids.ravel(), rows.reshape(-1, rows.shape[-1]))
    out[0] = 0.0
    return out


def item_task_loss(model: ModelState, task_id: int, tokens, labels, negatives):
    """Mean BPR of the projected user representation against (label, negative) items."""
    tokens = np.asarray(tokens, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    negatives = np.asarray(negatives, dtype=np.int64)
    B = len(tokens)
    states, cache = encode(model, tokens, task_gates(model, task_id))
    rep = states.user_rep
    W, b = model.params[f"proj{task_id}.w"], model.params[f"proj{task_id}.b"]
    emb = model.params["item_emb"]
    losses, dpred, dpos, dneg = bpr_batch(rep @ W + b, emb[labels], emb[negatives])
    dpred /= B
    grads = Grads()
    grads.add(f"proj{task_id}.w", rep.T @ dpred)
    grads.add(f"proj{task_id}.b", dpred.sum(axis=0))
    grads.add("item_emb", _scatter_rows(model, np.concatenate([labels, negatives]),
                                        np.concatenate([dpos, dneg]) / B))
    d_out = np.zeros_like(states.layers[-1])
    d_out[:, -1] = dpred @ W.T
    encode_backward(model, cache, d_out, grads, task_id)
    return float(losses.mean()), grads


def profile_task_loss(model: ModelState, task_id: int, tokens, labels):
    """Mean cross-entropy of the task classifier."""
    tokens = np.asarray(tokens, dtype=np.int64)
    B = len(tokens)
    states, cache = encode(model, tokens, task_gates(model, task_id))
    rep = states.user_rep
    W, b = model.params[f"proj{task_id}.w"], model.params[f"proj{task_id}.b"]
    losses, dlogits = ce_batch(rep @ W + b, labels)
    dlogits /= B
    grads = Grads()
    grads.add(f"proj{task_id}.w", rep.T @ dlogits)
    grads.add(f"proj{task_id}.b", dlogits.sum(axis=0))
    d_out = np.zeros_like(states.layers[-1])
    d_out[:, -1] = dlogits @ W.T
    encode_backward(model, cache, d_out, grads, task_id)
    return float(losses.mean()), grads


def prediction_positions(tokens: np.ndarray, stride: int = 1) -> np.ndarray:
    """Boolean ``(B, n-1)``: position r predicts token r+1.

    Pads are never inputs or targets.  With ``stride`` > 1 only every
    stride-th position counted back from the last one is kept.
    """
    if stride < 1:
        raise ValueError("chunk stride must be >= 1")
    n = tokens.shape[1]
    valid = tokens[:, :-1] != 0
    r = np.arange(n - 1)
    return valid & (((n - 2 - r) % stride) == 0)[None, :]


def autoregressive_loss(model: ModelState, tokens, negatives, stride: int = 1, task_id: int = 1):
    """Next-item BPR at every (strided) position, averaged over all terms."""
    tokens = np.asarray(tokens, dtype=np.int64)
    negatives = np.asarray(negatives, dtype=np.int64)
    valid = prediction_positions(tokens, stride)
    count = int(valid.sum())
    if count == 0:
        return 0.0, Grads()
    states, cache = encode(model, tokens, task_gates(model, task_id))
    H = states.layers[-1][:, :-1]
    W, b = model.params[f"proj{task_id}.w"], model.params[f"proj{task_id}.b"]
    emb = model.params["item_emb"]
    targets = tokens[:, 1:]
    losses, dpred, dpos, dneg = bpr_batch(H @ W + b, emb[targets], emb[negatives])
    scale = valid[..., None] / count
    dpred = dpred * scale
    grads = Grads()
    grads.add(f"proj{task_id}.w", np.tensordot(H, dpred, axes=([0, 1], [0, 1])))
    grads.add(f"proj{task_id}.b", dpred.sum(axis=(0, 1)))
    grads.add("item_emb", _scatter_rows(model, np.concatenate([targets[valid], negatives[valid]]),
                                        np.concatenate([(dpos * scale)[valid],
                                                        (dneg * scale)[valid]])))
    d_out = np.zeros_like(states.layers[-1])
    d_out[:, :-1] = dpred @ W.T
    encode_backward(model, cache, d_out, grads, task_id)
    return float((losses * valid).sum() / count), grads


def representation_mse(model: ModelState, task_id: int, tokens, targets):
    """Mean over users of the MSE between live representations and fixed targets."""
    tokens = np.asarray(tokens, dtype=np.int64)
    targets = np.asarray(targets, dtype=np.float64)
    B = len(tokens)
    states, cache = encode(model, tokens, task_gates(model, task_id))
    losses, drep = mse_batch(states.user_rep, targets)
    d_out = np.zeros_like(states.layers[-1])
    d_out[:, -1] = drep / B
    grads = Grads()
    encode_backward(model, cache, d_out, grads, task_id)
    return float(losses.mean()), grads


def contrastive_views(model: ModelState, task_id: int, view_a, view_b, batch_size: int = 32):
    """Contrastive loss between two augmented views, averaged over batches of ``batch_size``.

    A trailing batch with fewer than two users is dropped.
    """
    if batch_size < 2:
        raise ValueError("contrastive batch size must be >= 2")
    view_a = np.asarray(view_a, dtype=np.int64)
    view_b = np.asarray(view_b, dtype=np.int64)
    starts = [s for s in range(0, len(view_a), batch_size) if len(view_a) - s >= 2]
    if not starts:
        return 0.0, Grads()
    gates = task_gates(model, task_id)
    total, grads = 0.0, Grads()
    for s in starts:
        a, b = view_a[s:s + batch_size], view_b[s:s + batch_size]
        N = len(a)
        states, cache = encode(model, np.concatenate([a, b]), gates)
        rep = states.user_rep
        loss, da, db = contrastive_batch(rep[:N], rep[N:])
        total += loss
        d_out = np.zeros_like(states.layers[-1])
        d_out[:, -1] = np.concatenate([da, db]) / len(starts)
        encode_backward(model, cache, d_out, grads, task_id)
    return total / len(starts), grads


def gradients(model: ModelState, objective: Objective) -> Grads:
    """Full gradient set for ``objective``: every parameter present, pad row zeroed."""
    _, grads = objective(model)
    full = Grads({name: np.zeros_like(value) for name, value in model.params.items()})
    full.merge(grads)
    full["item_emb"][0] = 0.0
    return full
