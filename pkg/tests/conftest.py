from __future__ import annotations

import numpy as np
import pytest

from timecl.model import ArchConfig, init_model
from timecl.scenario import GenConfig, TaskSpec, generate_synthetic

SMALL_GEN = GenConfig(users=120, initial_items=40, new_items=(15, 15, 15), n=8, activity=14.0,
                      event_rate=0.3, categories=5)


@pytest.fixture(scope="session")
def small_bundle():
    return generate_synthetic(SMALL_GEN, 3)


@pytest.fixture
def tiny_arch():
    return ArchConfig(f=8, n=6, K=2, kernel_width=3, dilations=(1, 2))


TINY_TASKS = (TaskSpec(1, "item", "click", 1), TaskSpec(2, "item", "cart", 2),
              TaskSpec(3, "item", "buy", 3), TaskSpec(4, "profile", "age", 4))


def perturbed_model(arch, num_items=12, seed=0, scale=0.3):
    """A model with non-trivial masks and layer-norm parameters."""
    m = init_model(arch, num_items, TINY_TASKS, seed, {"age": 3})
    rng = np.random.default_rng(seed + 100)
    m.params["mask_emb"] = rng.normal(0.0, scale, m.params["mask_emb"].shape)
    for name in m.params:
        if ".ln" in name:
            m.params[name] = m.params[name] + rng.normal(0.0, 0.1, m.params[name].shape)
    return m


def random_tokens(rng, B, n, num_items, min_len=1):
    tok = rng.integers(1, num_items + 1, size=(B, n))
    for r in range(B):
        pads = int(rng.integers(0, n - min_len + 1))
        tok[r, :pads] = 0
    return tok


ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
