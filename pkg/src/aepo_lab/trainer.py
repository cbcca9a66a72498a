"""REINFORCE leave-one-out training on groups of rollouts.

Each batch holds ``batch_size`` tasks; each task gets a group of ``G``
rollouts, every rollout is turned into a response string and scored, and the
update is plain gradient ascent on the leave-one-out estimator. ``mode="naive"``
forces a single answer and scores it +1/-1 on top of the format reward.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from typing import IO, Optional, Sequence

import numpy as np

from .env import Task
from .geometry import point_in_bbox
from .policy import (
    PolicyParams,
    Rollout,
    batch_log_prob_and_grad,
    make_rollout,
    sample_batch,
)
from .protocol import FormatError, parse_response
from .reward import RewardBreakdown, RewardConfig, naive_reward

log = logging.getLogger(__name__)

MODES = ("aepo", "naive")


class GroupTooSmall(ValueError):
    pass


class EmptyAfterFilter(RuntimeError):
    pass


class NonFiniteGradient(FloatingPointError):
    def __init__(self, group_index: int, message: str = ""):
        self.group_index = group_index
        super().__init__(message or f"non-finite gradient in group {group_index}")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.2
    group_size: int = 8
    batch_size: int = 32
    epochs: int = 3
    temperature: float = 1.0
    n_max: int = 8
    eps_rel: float = 1e-3
    seed: int = 0
    mode: str = "aepo"
    # max L2 norm of a step's gradient; None leaves it unclipped
    clip_norm: Optional[float] = None
    filter_rollouts: int = 8
    shaped: bool = True
    rank_factor: bool = True
    collinear_penalty: bool = True

    def validate(self) -> "TrainConfig":
        if self.group_size < 2:
            raise GroupTooSmall("group_size must be >= 2")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.temperature <= 0 or self.batch_size < 1 or self.epochs < 0:
            raise ValueError("temperature, batch_size and epochs must be positive")
        return self

    @property
    def reward(self) -> RewardConfig:
        return RewardConfig(self.n_max, self.eps_rel, self.shaped, self.rank_factor, self.collinear_penalty)

    @property
    def fixed_n(self) -> Optional[int]:
        return 1 if self.mode == "naive" else None


@dataclass
class RolloutGroup:
    task: Task
    rollouts: list[Rollout]
    rewards: np.ndarray
    advantages: np.ndarray
    breakdowns: list[RewardBreakdown] = field(default_factory=list)
    # per-rollout (dw, du, dv) at the sampling parameters
    grads: Optional[tuple] = field(default=None, repr=False)

    @property
    def explored(self) -> np.ndarray:
        """Whether any candidate of each rollout lands in the target box."""
        b = self.task.target_bbox
        return np.array([any(point_in_bbox(p, b) for p in r.candidates) for r in self.rollouts])


def rloo_advantages(rewards: Sequence[float]) -> np.ndarray:
    r = np.asarray(rewards, dtype=float)
    g = len(r)
    if g < 2:
        raise GroupTooSmall(f"leave-one-out needs at least 2 rollouts, got {g}")
    return r - (r.sum() - r) / (g - 1)


def score_rollout(rollout: Rollout, task: Task, cfg: TrainConfig) -> RewardBreakdown:
    b = task.target_bbox
    if cfg.mode == "aepo":
        return cfg.reward.score(rollout.response, b)
    try:
        points = parse_response(rollout.response, 1).candidates
    except FormatError:
        return RewardBreakdown(0, 0.0, 0.0, False, None, 0, False)
    acc = naive_reward(points[0], b)
    hit = acc > 0
    return RewardBreakdown(1, acc, 1 + acc, False, 1 if hit else None, 1, hit)


def evaluate_group(policy: PolicyParams, task: Task, cfg: TrainConfig, rng: np.random.Generator) -> RolloutGroup:
    ns, orders = sample_batch(policy, task, cfg.temperature, rng, cfg.group_size, cfg.fixed_n)
    ranks = [orders[g, :n] for g, n in enumerate(ns)]
    logp, grads = batch_log_prob_and_grad(policy, task, ranks, ns, cfg.temperature, cfg.fixed_n)
    rollouts = [make_rollout(task, r, lp) for r, lp in zip(ranks, logp)]
    breakdowns = [score_rollout(r, task, cfg) for r in rollouts]
    rewards = np.array([b.total for b in breakdowns])
    return RolloutGroup(task, rollouts, rewards, rloo_advantages(rewards), breakdowns, grads)


def group_gradient(policy: PolicyParams, group: RolloutGroup, cfg: TrainConfig) -> np.ndarray:
    """``(1/G) sum_i A_i grad log pi(rollout_i)`` as a flat vector."""
    if group.grads is not None:
        dw, du, dv = group.grads
    else:
        ranks = [r.element_ranks for r in group.rollouts]
        ns = [r.n for r in group.rollouts]
        _, (dw, du, dv) = batch_log_prob_and_grad(policy, group.task, ranks, ns, cfg.temperature, cfg.fixed_n)
    a = group.advantages
    return np.concatenate([a @ dw, a @ du, a @ dv]) / len(a)


def policy_gradient_step(policy: PolicyParams, groups: Sequence[RolloutGroup], lr: float,
                         cfg: Optional[TrainConfig] = None) -> PolicyParams:
    cfg = cfg or TrainConfig()
    total = np.zeros_like(policy.flat())
    # fixed-order reduction keeps the update independent of evaluation order
    for i, group in enumerate(groups):
        g = group_gradient(policy, group, cfg)
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(i)
        total += g
    total /= max(len(groups), 1)
    if cfg.clip_norm is not None:
        norm = float(np.linalg.norm(total))
        if norm > cfg.clip_norm:
            total *= cfg.clip_norm / norm
    new = PolicyParams.from_flat(policy.flat() + lr * total, len(policy.w))
    if not new.is_finite():
        raise NonFiniteGradient(-1, "update produced non-finite parameters")
    return new


def filter_hits(tasks: Sequence[Task], base_policy: PolicyParams, cfg: TrainConfig,
                rng: np.random.Generator) -> np.ndarray:
    """Number of first-answer hits out of ``cfg.filter_rollouts`` draws, per task."""
    from .policy import first_answer_probs

    # only whether each draw hits matters, so compare uniforms against P(target)
    p_hit = np.array([first_answer_probs(base_policy, t, cfg.temperature)[t.target] for t in tasks])
    draws = rng.random((len(tasks), cfg.filter_rollouts))
    return np.sum(draws < p_hit[:, None], axis=1)


def filter_dataset(tasks: Sequence[Task], base_policy: PolicyParams, cfg: TrainConfig,
                   rng: np.random.Generator) -> list[Task]:
    """Drop tasks whose every filtering draw already hits the target."""
    hits = filter_hits(tasks, base_policy, cfg, rng)
    return [t for t, h in zip(tasks, hits) if h < cfg.filter_rollouts]


@dataclass(frozen=True)
class StepRecord:
    step: int
    epoch: int
    mean_reward: float
    mean_abs_adv: float
    expl_success: Optional[float]
    mean_n: float


@dataclass
class TrainingLog:
    steps: list[StepRecord] = field(default_factory=list)
    n_tasks: int = 0
    n_kept: int = 0

    COLUMNS = ("step", "epoch", "mean_reward", "mean_abs_adv", "expl_success", "mean_n")

    def write_csv(self, fh: IO[str]) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(self.COLUMNS)
        for s in self.steps:
            w.writerow([s.step, s.epoch, repr(s.mean_reward), repr(s.mean_abs_adv),
                        "" if s.expl_success is None else repr(s.expl_success), repr(s.mean_n)])


def _step_rng(seed: int, epoch: int, step: int, slot: int) -> np.random.Generator:
    return np.random.default_rng([seed, 2, epoch, step, slot])


def train(cfg: TrainConfig, dataset: Sequence[Task], init_policy: PolicyParams,
          filtered: bool = True) -> tuple[PolicyParams, TrainingLog]:
    cfg.validate()
    if init_policy.n_max != cfg.n_max:
        raise ValueError(f"policy count head has {init_policy.n_max} entries, config says n_max={cfg.n_max}")
    log_ = TrainingLog(n_tasks=len(dataset))
    tasks = list(dataset)
    if filtered:
        tasks = filter_dataset(tasks, init_policy, replace(cfg, temperature=1.0), np.random.default_rng([cfg.seed, 1]))
    log_.n_kept = len(tasks)
    if not tasks:
        raise EmptyAfterFilter(f"all {len(dataset)} tasks were filtered out")

    policy = init_policy
    step = 0
    for epoch in range(cfg.epochs):
        order = np.random.default_rng([cfg.seed, 3, epoch]).permutation(len(tasks))
        for start in range(0, len(tasks), cfg.batch_size):
            batch = [tasks[i] for i in order[start:start + cfg.batch_size]]
            groups = [evaluate_group(policy, t, cfg, _step_rng(cfg.seed, epoch, step, slot))
                      for slot, t in enumerate(batch)]
            for g in groups:
                if abs(float(g.advantages.sum())) > 1e-12:
                    raise RuntimeError("leave-one-out advantages do not sum to zero")
            policy = policy_gradient_step(policy, groups, cfg.learning_rate, cfg)
            rewards = np.concatenate([g.rewards for g in groups])
            advs = np.concatenate([g.advantages for g in groups])
            ns = [r.n for g in groups for r in g.rollouts]
            expl = None
            if cfg.mode == "aepo":
                expl = float(np.mean(np.concatenate([g.explored for g in groups])))
            log_.steps.append(StepRecord(step, epoch, float(rewards.mean()), float(np.abs(advs).mean()),
                                         expl, float(np.mean(ns))))
            step += 1
    log.info("trained %d steps on %d/%d tasks", step, log_.n_kept, log_.n_tasks)
    return policy, log_
