"""Central finite-difference checks of analytic gradients."""
from __future__ import annotations

import numpy as np

from timecl.model import gradients
from timecl import transfer
from timecl.model.objectives import (autoregressive_loss, contrastive_views, item_task_loss,
                                     profile_task_loss, representation_mse)

H = 1e-5


def max_relative_error(model, objective, h: float = H) -> tuple[float, str]:
    """Worst per-array normwise relative error between analytic and numeric gradients."""
    grads = gradients(model, objective)
    worst, where = 0.0, ""
    for name, arr in model.params.items():
        num = np.zeros_like(arr)
        flat = arr.reshape(-1)
        nflat = num.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            lp = objective(model)[0]
            flat[i] = old - h
            lm = objective(model)[0]
            flat[i] = old
            nflat[i] = (lp - lm) / (2 * h)
        if name == "item_emb":
            num[0] = 0.0
        scale = max(np.abs(num).max(), np.abs(grads[name]).max(), 1e-8)
        err = float(np.abs(num - grads[name]).max() / scale)
        if err > worst:
            worst, where = err, name
    return worst, where


def objectives(model, seed: int = 0):
    """Every loss composition used in training, as deterministic closures."""
    rng = np.random.default_rng(seed)
    I = model.num_items
    n = model.arch.n
    f = model.arch.f
    B = 5

    def toks(min_len=2):
        t = rng.integers(1, I + 1, size=(B, n))
        for r in range(B):
            t[r, :int(rng.integers(0, n - min_len + 1))] = 0
        return t

    tok, tok_b = toks(), toks()
    labels = rng.integers(1, I + 1, B)
    negs = rng.integers(1, I + 1, B)
    ar_negs = rng.integers(1, I + 1, (B, n - 1))
    classes = rng.integers(0, model.profile_classes["age"], B)
    targets = rng.normal(size=(B, f))
    space = np.arange(1, I + 1)
    aug = transfer.AugmentConfig(0.3, 0.3, model.mask_token)
    items = [t.id for t in model.tasks if t.is_item]
    profile = [t.id for t in model.tasks if not t.is_item][0]

    def composite(m):
        main, g = item_task_loss(m, items[-1], tok, labels, negs)
        fkt, g1 = transfer.fkt_objective(m, [(1, tok, targets), (2, tok_b, targets * 0.5)])
        b1, g2 = transfer.bkt1_tokens_loss(m, tok_b, space, np.random.default_rng(7), 1)
        b2, g3 = transfer.bkt2_objective(m, [(2, tok)], aug, space, np.random.default_rng(8), 3)
        g.merge(g1, 0.7)
        g.merge(g2, 1.3)
        g.merge(g3, 0.9)
        return main + 0.7 * fkt + 1.3 * b1 + 0.9 * b2, g

    return {
        "autoregressive": lambda m: autoregressive_loss(m, tok, ar_negs, 1),
        "autoregressive_chunked": lambda m: autoregressive_loss(m, tok, ar_negs, 2),
        "item_bpr": lambda m: item_task_loss(m, items[1], tok, labels, negs),
        "profile_ce": lambda m: profile_task_loss(m, profile, tok, classes),
        "fkt_mse": lambda m: representation_mse(m, 1, tok, targets),
        "contrastive": lambda m: contrastive_views(m, items[1], tok, tok_b, 3),
        "composite": composite,
    }
