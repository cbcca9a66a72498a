"""Evaluation metrics: top-1 accuracy, exploration success, pass@k, difficulty splits."""

from __future__ import annotations

import csv
import io
import json
import statistics
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Mapping, Optional, Sequence

import numpy as np

from .env import DIFFICULTY_LEVELS, DifficultyLabel, Task
from .geometry import point_in_bbox
from .policy import PolicyParams, element_scores, first_answer_probs, greedy_first_answer, sample_batch

SCHEMA_VERSION = 1


class EmptyDataset(ValueError):
    pass


class TooFewRuns(ValueError):
    pass


def _nonempty(tasks: Sequence[Task]) -> Sequence[Task]:
    if len(tasks) == 0:
        raise EmptyDataset("no tasks to evaluate")
    return tasks


def accuracy(policy: PolicyParams, tasks: Sequence[Task]) -> float:
    """Share of tasks whose greedy first answer lands in the target box."""
    tasks = _nonempty(tasks)
    return sum(point_in_bbox(greedy_first_answer(policy, t), t.target_bbox) for t in tasks) / len(tasks)


def exploration_success_rate(policy: PolicyParams, tasks: Sequence[Task], temperature: float,
                             rng: np.random.Generator, fixed_n: Optional[int] = None,
                             greedy_head: bool = True) -> tuple[float, float]:
    """One multi-answer rollout per task; returns (share with any hit, mean N).

    With ``greedy_head`` the first candidate is the greedy answer and the
    remaining ones are sampled from the other elements, so the answer scored by
    :func:`accuracy` is a member of every evaluated candidate set. Without it
    the whole rollout is sampled.
    """
    tasks = _nonempty(tasks)
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    hits, total_n = 0, 0
    for t in tasks:
        ns, orders = sample_batch(policy, t, temperature, rng, 1, fixed_n)
        n = int(ns[0])
        picks = list(orders[0])
        if greedy_head:
            top = picks.index(int(np.argmax(element_scores(policy, t))))
            picks.insert(0, picks.pop(top))
        b = t.target_bbox
        hits += any(point_in_bbox(t.centers[j], b) for j in picks[:n])
        total_n += n
    return hits / len(tasks), total_n / len(tasks)


def pass_at_k_curve(policy: PolicyParams, tasks: Sequence[Task], ks: Iterable[int], temperature: float,
                    rng: np.random.Generator) -> dict[int, float]:
    """pass@k for several k from one shared draw of ``max(ks)`` single answers per task.

    Sharing the prefix makes the curve non-decreasing in k exactly.
    """
    ks = sorted(set(ks))
    if not ks or ks[0] < 1:
        raise ValueError("k must be >= 1")
    tasks = _nonempty(tasks)
    k_max = ks[-1]
    first_hit = np.empty(len(tasks))
    for i, t in enumerate(tasks):
        p = first_answer_probs(policy, t, temperature)
        draws = rng.choice(t.n_elements, size=k_max, p=p)
        hit = np.flatnonzero(draws == t.target)
        first_hit[i] = hit[0] + 1 if hit.size else np.inf
    return {k: float(np.mean(first_hit <= k)) for k in ks}


def pass_at_k(policy: PolicyParams, tasks: Sequence[Task], k: int, temperature: float,
              rng: np.random.Generator) -> float:
    return pass_at_k_curve(policy, tasks, [k], temperature, rng)[k]


def sampled_accuracy(policy: PolicyParams, tasks: Sequence[Task], temperature: float,
                     rng: np.random.Generator) -> float:
    return pass_at_k(policy, tasks, 1, temperature, rng)


def difficulty_breakdown(policy: PolicyParams, labeled: Iterable[tuple[Task, DifficultyLabel]]) -> dict[str, float]:
    """Accuracy per difficulty label; labels with no tasks are left out."""
    buckets: dict[str, list[Task]] = {}
    for task, lab in labeled:
        buckets.setdefault(lab.label, []).append(task)
    return {name: accuracy(policy, buckets[name]) for name in DIFFICULTY_LEVELS if buckets.get(name)}


def mean_and_sigma(values: Sequence[float]) -> tuple[float, float]:
    if len(values) < 2:
        raise TooFewRuns(f"need at least 2 runs, got {len(values)}")
    # exact rational arithmetic: identical runs give sigma == 0.0 exactly
    values = [float(v) for v in values]
    return statistics.mean(values), statistics.stdev(values)


def multi_run_sigma(experiment: Callable[[int], float], seeds: Sequence[int]) -> tuple[float, float]:
    """Run ``experiment(seed)`` per seed; mean and sample std of the results."""
    if len(seeds) < 2:
        raise TooFewRuns(f"need at least 2 seeds, got {len(seeds)}")
    return mean_and_sigma([experiment(s) for s in seeds])


def adaptive_n_correlation(policy: PolicyParams, datasets: Sequence[tuple[str, Sequence[Task]]],
                           temperature: float = 1.0, seed: int = 0) -> list[tuple[str, float, float]]:
    """Rows ``(name, accuracy, avg_n)``; every dataset sees the same RNG stream."""
    if len(datasets) < 2:
        raise ValueError("need at least two datasets")
    rows = []
    for name, tasks in datasets:
        _, avg_n = exploration_success_rate(policy, tasks, temperature, np.random.default_rng(seed))
        rows.append((name, accuracy(policy, tasks), avg_n))
    return rows


@dataclass
class EvalReport:
    accuracy: float
    expl_success: float
    avg_n: float
    sampled_accuracy: float
    per_difficulty: dict[str, float] = field(default_factory=dict)
    pass_at_k: dict[int, float] = field(default_factory=dict)
    runs: int = 1
    # sample std over runs; greedy accuracy only varies when the runs differ in tasks
    sigma: Optional[float] = None
    sigma_expl_success: Optional[float] = None
    schema: int = SCHEMA_VERSION

    def check(self) -> "EvalReport":
        fractions = [self.accuracy, self.expl_success, self.sampled_accuracy,
                     *self.per_difficulty.values(), *self.pass_at_k.values()]
        if not all(0.0 <= f <= 1.0 for f in fractions):
            raise ValueError("fractions must lie in [0, 1]")
        if self.expl_success < self.accuracy:
            raise ValueError("exploration success below top-1 accuracy")
        if self.avg_n < 1.0:
            raise ValueError("average answer count below 1")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pass_at_k"] = {str(k): v for k, v in sorted(self.pass_at_k.items())}
        for key in ("sigma", "sigma_expl_success"):
            if d[key] is None:
                del d[key]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: Mapping) -> "EvalReport":
        if d.get("schema") != SCHEMA_VERSION:
            raise ValueError(f"unsupported report schema {d.get('schema')!r}")
        d = dict(d)
        d["pass_at_k"] = {int(k): v for k, v in d.get("pass_at_k", {}).items()}
        return cls(**d)

    def csv_row(self) -> tuple[list[str], list[str]]:
        header = ["schema", "runs", "accuracy", "sigma", "expl_success", "sigma_expl_success", "avg_n", "sampled_accuracy"]
        row = [self.schema, self.runs, self.accuracy, "" if self.sigma is None else self.sigma,
               self.expl_success, "" if self.sigma_expl_success is None else self.sigma_expl_success,
               self.avg_n, self.sampled_accuracy]
        for name in DIFFICULTY_LEVELS:
            header.append(f"acc_{name}")
            row.append(self.per_difficulty.get(name, ""))
        for k in sorted(self.pass_at_k):
            header.append(f"pass@{k}")
            row.append(self.pass_at_k[k])
        return header, [v if isinstance(v, str) else repr(v) for v in row]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        for line in self.csv_row():
            w.writerow(line)
        return buf.getvalue()
