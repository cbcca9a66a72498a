"""Seeded train-and-evaluate runs shared by the CLI and the acceptance suite.

A run trains one variant on a generated dataset and evaluates it on held-out
tasks whose difficulty labels come from the untrained base policy.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from . import metrics
from .env import EnvConfig, Task, generate_dataset, label_difficulty
from .policy import PolicyParams
from .trainer import TrainConfig, train

# reward/config flags per ablation variant; the training code path is the same for all
VARIANTS: dict[str, dict] = {
    "full": {},
    "no_multi_answer": {"mode": "naive"},
    "no_aer": {"shaped": False},
    "no_rank_factor": {"rank_factor": False},
    "no_collinear": {"collinear_penalty": False},
}

TEST_SEED_OFFSET = 10_000
LABEL_STREAM = 7


def variant_config(base: TrainConfig, variant: str) -> TrainConfig:
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {sorted(VARIANTS)}")
    return replace(base, **VARIANTS[variant])


def thread_cap() -> int:
    try:
        return max(1, int(os.environ.get("AEPO_LAB_THREADS", "1")))
    except ValueError:
        return 1


def pmap(fn: Callable, items: Sequence, workers: Optional[int] = None) -> list:
    """Ordered map, in worker processes when more than one is allowed."""
    workers = thread_cap() if workers is None else workers
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(fn, items))


def label_tasks(tasks: Sequence[Task], base: PolicyParams, seed: int, trials: int = 16, temperature: float = 1.0):
    return [label_difficulty(t, base, trials, temperature, np.random.default_rng([seed, LABEL_STREAM, i]))
            for i, t in enumerate(tasks)]


@dataclass
class RunResult:
    variant: str
    seed: int
    accuracy: float
    expl_success: float
    avg_n: float
    sampled_accuracy: float
    pass_at_k: dict[int, float] = field(default_factory=dict)
    per_difficulty: dict[str, float] = field(default_factory=dict)
    extra_avg_n: dict[str, float] = field(default_factory=dict)
    params: Optional[dict] = None

    @property
    def gap(self) -> float:
        return self.expl_success - self.accuracy


def evaluate(policy: PolicyParams, tasks: Sequence[Task], *, multi_answer: bool, seed: int,
             temperature: float = 1.0, pass_k: Iterable[int] = (1, 2, 4), labels=None) -> dict:
    fixed_n = None if multi_answer else 1
    es, avg_n = metrics.exploration_success_rate(policy, tasks, temperature, np.random.default_rng([seed, 11]), fixed_n)
    out = {
        "accuracy": metrics.accuracy(policy, tasks),
        "expl_success": es,
        "avg_n": avg_n,
        "sampled_accuracy": metrics.sampled_accuracy(policy, tasks, temperature, np.random.default_rng([seed, 12])),
        "pass_at_k": metrics.pass_at_k_curve(policy, tasks, pass_k, temperature, np.random.default_rng([seed, 13])),
    }
    if labels is not None:
        out["per_difficulty"] = metrics.difficulty_breakdown(policy, zip(tasks, labels))
    return out


@dataclass(frozen=True)
class RunPlan:
    variant: str
    seed: int
    env: EnvConfig
    train: TrainConfig
    n_train: int = 2000
    n_test: int = 1000
    # extra held-out sets (name, env config) on which only avg N is measured
    probe_envs: tuple = ()
    # fixed training tasks; generated from (seed, env) when None
    tasks: Optional[tuple] = None
    init: Optional[tuple] = None  # (w_scale, count_decay)
    temperature: float = 1.0
    pass_k: tuple = (1, 2, 4)
    keep_params: bool = False


def run_one(plan: RunPlan) -> RunResult:
    env, seed = plan.env, plan.seed
    data = list(plan.tasks) if plan.tasks is not None else generate_dataset(seed, plan.n_train, env)
    test = generate_dataset(seed + TEST_SEED_OFFSET, plan.n_test, env)
    base = PolicyParams.init(env.feature_dim, plan.train.n_max, *(plan.init or ()))
    labels = label_tasks(test, base, seed)
    cfg = replace(variant_config(plan.train, plan.variant), seed=seed)
    policy, _ = train(cfg, data, base)
    multi = cfg.mode == "aepo"
    ev = evaluate(policy, test, multi_answer=multi, seed=seed, temperature=plan.temperature,
                  pass_k=plan.pass_k, labels=labels)
    extra = {}
    for name, probe_env in plan.probe_envs:
        probe = generate_dataset(seed + 2 * TEST_SEED_OFFSET, plan.n_test, probe_env)
        _, extra[name] = metrics.exploration_success_rate(
            policy, probe, plan.temperature, np.random.default_rng([seed, 14]), None if multi else 1)
    return RunResult(plan.variant, seed, ev["accuracy"], ev["expl_success"], ev["avg_n"], ev["sampled_accuracy"],
                     ev["pass_at_k"], ev["per_difficulty"], extra, policy.to_dict() if plan.keep_params else None)


def run_grid(variants: Sequence[str], seeds: Sequence[int], env: EnvConfig, train_cfg: TrainConfig,
             workers: Optional[int] = None, **plan_kw) -> list[RunResult]:
    plans = [RunPlan(v, s, env, train_cfg, **plan_kw) for v in variants for s in seeds]
    return pmap(run_one, plans, workers)


def median_by_variant(results: Sequence[RunResult], key: Callable[[RunResult], float]) -> dict[str, float]:
    grouped: dict[str, list[float]] = {}
    for r in results:
        grouped.setdefault(r.variant, []).append(key(r))
    return {v: float(np.median(xs)) for v, xs in grouped.items()}


def relative_improvement(new: float, old: float) -> float:
    if old == 0:
        return float("inf") if new > 0 else 0.0
    return (new - old) / old
