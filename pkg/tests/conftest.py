import itertools

import numpy as np
import pytest

from aepo_lab.env import Element, Task
from aepo_lab.geometry import BBox


def make_task(features, instruction=None, target=0, boxes=None, layout="grid", trap_gap=0.0):
    """Hand-built task; boxes default to 10x10 squares spaced along a diagonal."""
    features = np.asarray(features, dtype=float)
    m, d = features.shape
    if instruction is None:
        instruction = np.ones(d)
    if boxes is None:
        boxes = [BBox(20.0 * i, 20.0 * i + 5 * (i % 2), 20.0 * i + 10, 20.0 * i + 10 + 5 * (i % 2)) for i in range(m)]
    elements = tuple(Element(b, tuple(float(x) for x in f)) for b, f in zip(boxes, features))
    return Task(1000.0, 1000.0, elements, tuple(float(x) for x in instruction), target, layout, trap_gap)


def random_task(rng, m, d=3, scale=1.0):
    return make_task(rng.normal(size=(m, d)) * scale, rng.normal(size=d), target=int(rng.integers(m)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[ACCEPTANCE_LINES] = {}


@pytest.fixture
def criterion(request):
    """Record one pass/fail line per acceptance criterion for the terminal summary."""
    lines = request.config.stash[ACCEPTANCE_LINES]

    def record(key, ok, detail):
        lines[key] = f"[{'PASS' if ok else 'FAIL'}] criterion {key}: {detail}"
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_LINES, {})
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    number = lambda k: int("".join(c for c in k if c.isdigit()))
    for num, keys in itertools.groupby(sorted(lines, key=lambda k: (number(k), k)), key=number):
        keys = list(keys)
        if len(keys) > 1:
            # multi-part criterion: one verdict line, then its parts
            ok = all(lines[k].startswith("[PASS]") for k in keys)
            parts = ", ".join(f"{k} {lines[k][1:5]}" for k in keys)
            terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {num}: {parts}")
            for k in keys:
                terminalreporter.write_line("    " + lines[k])
        else:
            terminalreporter.write_line(lines[keys[0]])
