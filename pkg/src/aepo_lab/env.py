"""Synthetic grounding tasks with engineered confidence traps.

Each task is a screen of non-overlapping boxes. Every box carries a feature
vector and the instruction is a vector of the same size; the base similarity
of an element is the plain dot product of its feature with the instruction.

Feature dimensions come in two kinds. The first ``feature_dim - n_spurious``
carry the real semantic match: the instruction is a noisy copy of the target's
features there. The last ``n_spurious`` dimensions are unrelated to the target
and nearly silent on ordinary elements.
A trap turns ``n_decoys`` distractors into decoys: it copies the target's semantic
features up to noise, and their spurious features are pushed along the
instruction until it beats the target under the base similarity by exactly
``trap_gap``. ``Task.trap_gap`` records the smallest decoy lead. Nothing on ordinary tasks tells a policy to distrust the spurious
dimensions, so it only learns to once it samples the target on a trap.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import cached_property
from typing import IO, Iterable, Optional

import numpy as np

from .geometry import BBox, Point, bbox_center


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EnvConfig:
    n_elements: int = 5
    feature_dim: int = 8
    n_spurious: int = 4
    width: float = 1280.0
    height: float = 720.0
    row_prob: float = 0.3
    trap_prob: float = 0.3
    trap_gap: float = 4.0
    signal_strength: float = 1.0
    instruction_noise: float = 0.5
    # non-trap tasks keep the target ahead of every distractor by this much
    base_margin: float = 0.5
    # a decoy copies the target's semantic features up to this much noise
    decoy_noise: float = 0.1
    # spurious features of ordinary elements are this small; only decoys stand out there
    spurious_scale: float = 0.1
    n_decoys: int = 2
    box_fill: float = 0.6
    jitter: float = 0.15

    def validate(self) -> "EnvConfig":
        if self.n_elements < 2:
            raise ConfigError("n_elements must be >= 2")
        if self.feature_dim < 2:
            raise ConfigError("feature_dim must be >= 2")
        if not 0 <= self.n_spurious < self.feature_dim:
            raise ConfigError("n_spurious must leave at least one signal dimension")
        if self.trap_prob > 0 and self.n_spurious == 0:
            raise ConfigError("traps need at least one spurious dimension")
        if self.width < 100 or self.height < 100:
            raise ConfigError("screen must be at least 100x100")
        if not (0 <= self.row_prob <= 1 and 0 <= self.trap_prob <= 1):
            raise ConfigError("probabilities must lie in [0, 1]")
        if self.n_decoys < 1:
            raise ConfigError("a trap needs at least one decoy")
        if self.trap_gap <= 0:
            raise ConfigError("trap_gap must be positive")
        if not 0 < self.box_fill < 1 or not 0 <= self.jitter < 1:
            raise ConfigError("box_fill must lie in (0, 1) and jitter in [0, 1)")
        return self


@dataclass(frozen=True)
class Element:
    bbox: BBox
    feature: tuple[float, ...]

    @property
    def center(self) -> Point:
        return bbox_center(self.bbox)


@dataclass(frozen=True)
class Task:
    width: float
    height: float
    elements: tuple[Element, ...]
    instruction: tuple[float, ...]
    target: int
    layout: str
    trap_gap: float = 0.0

    def __post_init__(self):
        m = len(self.elements)
        if m < 1 or not 0 <= self.target < m:
            raise ValueError(f"target {self.target} out of range for {m} elements")
        if any(len(e.feature) != len(self.instruction) for e in self.elements):
            raise ValueError("feature and instruction sizes differ")

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @property
    def is_trap(self) -> bool:
        return self.trap_gap > 0

    @property
    def target_bbox(self) -> BBox:
        return self.elements[self.target].bbox

    @cached_property
    def features(self) -> np.ndarray:
        return np.array([e.feature for e in self.elements], dtype=float)

    @cached_property
    def match(self) -> np.ndarray:
        """Per-element, per-dimension products of instruction and feature (M x d)."""
        return self.features * np.asarray(self.instruction, dtype=float)

    @cached_property
    def centers(self) -> tuple[Point, ...]:
        return tuple(e.center for e in self.elements)

    def base_similarity(self) -> np.ndarray:
        return self.match.sum(axis=1)

    def to_dict(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "elements": [{"bbox": list(e.bbox), "feature": list(e.feature)} for e in self.elements],
            "instruction": list(self.instruction),
            "target": self.target,
            "layout": self.layout,
            "trap_gap": self.trap_gap,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Task":
        elements = tuple(
            Element(BBox(*map(float, e["bbox"])).validate(), tuple(float(x) for x in e["feature"]))
            for e in d["elements"]
        )
        return cls(
            width=float(d["width"]),
            height=float(d["height"]),
            elements=elements,
            instruction=tuple(float(x) for x in d["instruction"]),
            target=int(d["target"]),
            layout=str(d["layout"]),
            trap_gap=float(d.get("trap_gap", 0.0)),
        )


def _layout_cells(cfg: EnvConfig, layout: str) -> list[tuple[float, float, float, float]]:
    m = cfg.n_elements
    if layout == "row":
        cols, rows = m, 1
    else:
        cols = math.ceil(math.sqrt(m))
        rows = math.ceil(m / cols)
    cw, ch = cfg.width / cols, cfg.height / rows
    if cw * cfg.box_fill < 2 or ch * cfg.box_fill < 2:
        raise ConfigError(f"cannot place {m} elements on a {cfg.width}x{cfg.height} screen")
    return [((i % cols) * cw, (i // cols) * ch, cw, ch) for i in range(m)]


def _place_boxes(rng: np.random.Generator, cfg: EnvConfig, layout: str) -> list[BBox]:
    # one box per cell, so boxes never overlap
    cells = _layout_cells(cfg, layout)
    boxes = []
    for x0, y0, cw, ch in cells:
        bw, bh = cw * cfg.box_fill, ch * cfg.box_fill
        if layout == "row":
            bh = min(bh, 0.2 * cfg.height)
        slack_x, slack_y = (cw - bw) / 2, (ch - bh) / 2
        jx, jy = rng.uniform(-1, 1, size=2)
        dx = jx * slack_x * cfg.jitter
        # row layouts share one horizontal midline so their centers are collinear
        dy = 0.0 if layout == "row" else jy * slack_y * cfg.jitter
        cx, cy = x0 + cw / 2 + dx, y0 + ch / 2 + dy
        boxes.append(BBox(float(cx - bw / 2), float(cy - bh / 2), float(cx + bw / 2), float(cy + bh / 2)))
    return boxes


def generate_task(rng: np.random.Generator, cfg: EnvConfig, max_attempts: int = 1000) -> Task:
    cfg.validate()
    m, d, d_sp = cfg.n_elements, cfg.feature_dim, cfg.n_spurious
    d_sig = d - d_sp
    layout = "row" if rng.random() < cfg.row_prob else "grid"
    boxes = _place_boxes(rng, cfg, layout)
    target = int(rng.integers(m))
    trap = rng.random() < cfg.trap_prob

    for _ in range(max_attempts):
        feats = rng.standard_normal((m, d))
        feats[:, d_sig:] *= cfg.spurious_scale
        instr = np.empty(d)
        instr[:d_sig] = cfg.signal_strength * feats[target, :d_sig] + cfg.instruction_noise * rng.standard_normal(d_sig)
        instr[d_sig:] = rng.standard_normal(d_sp)
        sim = feats @ instr
        others = np.delete(sim, target)
        if sim[target] - others.max() >= cfg.base_margin:
            break
    else:
        raise ConfigError("could not draw a task whose target leads the base similarity")

    gap = 0.0
    if trap:
        sp = instr[d_sig:]
        decoys = rng.choice([j for j in range(m) if j != target], size=min(cfg.n_decoys, m - 1), replace=False)
        for decoy in decoys:
            feats[decoy, :d_sig] = feats[target, :d_sig] + cfg.decoy_noise * rng.standard_normal(d_sig)
            # overshoot slightly so the margin survives any summation order
            need = feats[target] @ instr - feats[decoy] @ instr + cfg.trap_gap * (1 + 1e-9) + 1e-12
            feats[decoy, d_sig:] += need * sp / (sp @ sp)
        sim = (feats * instr).sum(axis=1)
        gap = float(np.min(sim[decoys]) - sim[target])

    elements = tuple(Element(b, tuple(float(x) for x in f)) for b, f in zip(boxes, feats))
    return Task(
        width=float(cfg.width),
        height=float(cfg.height),
        elements=elements,
        instruction=tuple(float(x) for x in instr),
        target=target,
        layout=layout,
        trap_gap=gap,
    )


def task_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, index])


def generate_dataset(seed: int, n: int, cfg: EnvConfig) -> list[Task]:
    if n < 1:
        raise ValueError("n must be >= 1")
    return [generate_task(task_rng(seed, i), cfg) for i in range(n)]


def trap_fraction(tasks: Iterable[Task]) -> float:
    tasks = list(tasks)
    return sum(t.is_trap for t in tasks) / len(tasks)


def write_tasks(tasks: Iterable[Task], fh: IO[str]) -> int:
    count = 0
    for t in tasks:
        fh.write(json.dumps(t.to_dict(), separators=(",", ":")) + "\n")
        count += 1
    return count


def read_tasks(fh: IO[str]) -> list[Task]:
    return [Task.from_dict(json.loads(line)) for line in fh if line.strip()]


# -- difficulty labels ---------------------------------------------------------

DIFFICULTY_LEVELS = ("easy", "middle", "hard")


@dataclass(frozen=True)
class DifficultyLabel:
    label: str
    successes: int
    trials: int


def label_from_counts(successes: int, trials: int) -> DifficultyLabel:
    if successes == trials:
        return DifficultyLabel("easy", successes, trials)
    if successes == 0:
        return DifficultyLabel("hard", successes, trials)
    return DifficultyLabel("middle", successes, trials)


def label_difficulty(task: Task, base_policy, trials: int = 16, temperature: float = 1.0,
                     rng: Optional[np.random.Generator] = None) -> DifficultyLabel:
    """Label a task by how often single-answer sampling from ``base_policy`` hits it."""
    from .policy import first_answer_probs

    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = rng if rng is not None else np.random.default_rng()
    probs = first_answer_probs(base_policy, task, temperature)
    picks = rng.choice(task.n_elements, size=trials, p=probs)
    return label_from_counts(int(np.sum(picks == task.target)), trials)
