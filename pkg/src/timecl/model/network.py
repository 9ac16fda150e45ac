"""Masked residual TCN: batched forward pass and its exact backward pass.

Shapes: tokens ``(B, n)``, activations ``(B, n, f)``, gates ``(K, L, f)``
with ``L`` = 1 (one gate per block) or 2 (one per conv layer).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from timecl.model.arch import ModelState, sigmoid, task_gates


class Grads(dict):
    """Parameter-name -> gradient array, accumulated in place."""

    def add(self, name: str, value: np.ndarray, weight: float = 1.0) -> None:
        if name in self:
            self[name] += weight * value
        else:
            self[name] = weight * np.asarray(value, dtype=np.float64).copy()

    def merge(self, other: "Grads", weight: float = 1.0) -> "Grads":
        for name, value in other.items():
            self.add(name, value, weight)
        return self

    def scaled(self, weight: float) -> "Grads":
        return Grads({k: v * weight for k, v in self.items()})


def layer_norm(x, g, b, eps):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    return xhat * g + b, (xhat, inv)


def layer_norm_backward(dy, g, cache):
    xhat, inv = cache
    dg = (dy * xhat).reshape(-1, dy.shape[-1]).sum(axis=0)
    db = dy.reshape(-1, dy.shape[-1]).sum(axis=0)
    dxhat = dy * g
    dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
    return dx, dg, db


def causal_conv(x, w, b, dilation):
    """``out[t] = b + sum_j x[t - (kw-1-j)*dilation] @ w[j]``, zero before the start."""
    n = x.shape[1]
    kw = w.shape[0]
    out = np.broadcast_to(b, x.shape[:2] + (w.shape[2],)).copy()
    taps = []
    for j in range(kw):
        shift = (kw - 1 - j) * dilation
        if shift >= n:
            taps.append(None)
            continue
        if shift == 0:
            xs = x
        else:
            xs = np.zeros_like(x)
            xs[:, shift:] = x[:, :n - shift]
        out += xs @ w[j]
        taps.append(xs)
    return out, taps


def causal_conv_backward(dout, w, taps, dilation):
    n = dout.shape[1]
    kw = w.shape[0]
    dx = np.zeros(dout.shape[:2] + (w.shape[1],))
    dw = np.zeros_like(w)
    db = dout.reshape(-1, dout.shape[-1]).sum(axis=0)
    for j, xs in enumerate(taps):
        if xs is None:
            continue
        shift = (kw - 1 - j) * dilation
        dw[j] = np.tensordot(xs, dout, axes=([0, 1], [0, 1]))
        dxs = dout @ w[j].T
        if shift == 0:
            dx += dxs
        else:
            dx[:, :n - shift] += dxs[:, shift:]
    return dx, dw, db


@dataclass
class HiddenStates:
    """Block outputs ``layers[0..K]`` (each ``(B, n, f)``) and the user representation."""

    layers: list[np.ndarray]

    @property
    def user_rep(self) -> np.ndarray:
        return self.layers[-1][..., -1, :]


def encode(model: ModelState, tokens: np.ndarray, gates: np.ndarray):
    """Run the backbone under explicit ``gates``; returns (HiddenStates, cache)."""
    arch, p = model.arch, model.params
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.ndim != 2 or tokens.shape[1] != arch.n:
        raise ValueError(f"tokens must have shape (B, {arch.n}), got {tokens.shape}")
    if tokens.size and (tokens.min() < 0 or tokens.max() >= model.vocab_size):
        raise IndexError(f"token id out of range [0, {model.vocab_size})")
    x = p["item_emb"][tokens]
    layers = [x]
    caches = []
    for k in range(arch.K):
        d = arch.dilations[k]
        g1 = gates[k, 0]
        g2 = gates[k, -1]
        pre = f"block{k}."
        h1, ln1 = layer_norm(x, p[pre + "ln1.g"], p[pre + "ln1.b"], arch.ln_eps)
        c1, taps1 = causal_conv(h1, p[pre + "conv1.w"], p[pre + "conv1.b"], d)
        r1 = np.maximum(c1, 0.0)
        a1 = r1 * g1
        h2, ln2 = layer_norm(a1, p[pre + "ln2.g"], p[pre + "ln2.b"], arch.ln_eps)
        c2, taps2 = causal_conv(h2, p[pre + "conv2.w"], p[pre + "conv2.b"], d)
        r2 = np.maximum(c2, 0.0)
        x = x + r2 * g2
        layers.append(x)
        caches.append((ln1, taps1, c1, r1, ln2, taps2, c2, r2))
    return HiddenStates(layers), (tokens, gates, caches)


def encode_backward(model: ModelState, cache, d_out: np.ndarray, grads: Grads,
                    task_id: int | None = None) -> np.ndarray:
    """Backprop ``d_out`` (gradient wrt the last block output) into ``grads``.

    Gate gradients are chained through the sigmoid into ``mask_emb[task_id]``
    when ``task_id`` is given; the raw gate gradient is always returned.
    """
    arch, p = model.arch, model.params
    tokens, gates, caches = cache
    d_gates = np.zeros_like(gates)
    dx = d_out
    for k in reversed(range(arch.K)):
        d = arch.dilations[k]
        pre = f"block{k}."
        ln1, taps1, c1, r1, ln2, taps2, c2, r2 = caches[k]
        g1, g2 = gates[k, 0], gates[k, -1]
        d_gates[k, -1] += np.einsum("btf,btf->f", dx, r2)
        dc2 = dx * g2 * (c2 > 0)
        dh2, dw, db = causal_conv_backward(dc2, p[pre + "conv2.w"], taps2, d)
        grads.add(pre + "conv2.w", dw)
        grads.add(pre + "conv2.b", db)
        da1, dg, db = layer_norm_backward(dh2, p[pre + "ln2.g"], ln2)
        grads.add(pre + "ln2.g", dg)
        grads.add(pre + "ln2.b", db)
        d_gates[k, 0] += np.einsum("btf,btf->f", da1, r1)
        dc1 = da1 * g1 * (c1 > 0)
        dh1, dw, db = causal_conv_backward(dc1, p[pre + "conv1.w"], taps1, d)
        grads.add(pre + "conv1.w", dw)
        grads.add(pre + "conv1.b", db)
        dxl, dg, db = layer_norm_backward(dh1, p[pre + "ln1.g"], ln1)
        grads.add(pre + "ln1.g", dg)
        grads.add(pre + "ln1.b", db)
        dx = dx + dxl
    emb = np.zeros_like(p["item_emb"])
    np.add.at(emb, tokens.ravel(), dx.reshape(-1, dx.shape[-1]))
    emb[0] = 0.0
    grads.add("item_emb", emb)
    if task_id is not None:
        s = arch.gate_scale
        dm = np.zeros_like(p["mask_emb"])
        dm[task_id - 1] = d_gates * s * gates * (1.0 - gates)
        grads.add("mask_emb", dm)
    return d_gates


def forward(model: ModelState, seq, task_id: int, gates: np.ndarray | None = None) -> HiddenStates:
    """Hidden states for one sequence ``(n,)`` or a batch ``(B, n)`` under task ``task_id``."""
    tokens = np.asarray(seq, dtype=np.int64)
    single = tokens.ndim == 1
    if single:
        tokens = tokens[None, :]
    g = task_gates(model, task_id) if gates is None else np.asarray(gates, dtype=np.float64)
    states, _ = encode(model, tokens, g)
    if single:
        states = HiddenStates([layer[0] for layer in states.layers])
    return states


def represent(model: ModelState, tokens: np.ndarray, task_id: int, batch: int = 512) -> np.ndarray:
    """User representations (last row of the top block) for many sequences."""
    tokens = np.asarray(tokens, dtype=np.int64)
    out = np.zeros((len(tokens), model.arch.f))
    g = task_gates(model, task_id)
    for s in range(0, len(tokens), batch):
        states, _ = encode(model, tokens[s:s + batch], g)
        out[s:s + batch] = states.user_rep
    return out


def project(model: ModelState, task_id: int, user_rep: np.ndarray) -> np.ndarray:
    """Task head: ``user_rep @ W + b`` (a length-f item query or class logits)."""
    model.task(task_id)
    user_rep = np.asarray(user_rep, dtype=np.float64)
    if user_rep.shape[-1] != model.arch.f:
        raise ValueError(f"user_rep must have length {model.arch.f}")
    return user_rep @ model.params[f"proj{task_id}.w"] + model.params[f"proj{task_id}.b"]


__all__ = ["Grads", "HiddenStates", "causal_conv", "encode", "encode_backward", "forward",
           "layer_norm", "project", "represent", "sigmoid"]
