"""Independent reference computations shared by unit and acceptance tests."""

import itertools

import numpy as np

from aepo_lab.geometry import BBox
from aepo_lab.policy import PolicyParams, log_prob
from aepo_lab.protocol import Response, serialize_response
from aepo_lab.trainer import TrainConfig, evaluate_group, group_gradient

from conftest import make_task

# three separated boxes; no triple of centers is collinear
RLOO_BOXES = [BBox(0, 0, 10, 10), BBox(100, 0, 110, 10), BBox(40, 80, 50, 90)]


def rloo_instance():
    task = make_task(np.array([[1.0, 0.2], [0.8, 0.9], [0.1, 1.0]]), [1.0, 0.7], target=2, boxes=RLOO_BOXES)
    params = PolicyParams(np.array([0.9, -0.4]), np.array([0.3, -0.2]), np.array([-0.5, 0.6]))
    return task, params, TrainConfig(n_max=2, group_size=8)


def expected_reward(params, task, cfg):
    """Exact expected total reward by enumerating every (N, ordered selection)."""
    total = 0.0
    for n in range(1, min(cfg.n_max, task.n_elements) + 1):
        for ranks in itertools.permutations(range(task.n_elements), n):
            s = serialize_response(Response("", tuple(task.centers[i] for i in ranks)))
            total += np.exp(log_prob(params, task, ranks, cfg.temperature)) * cfg.reward.score(s, task.target_bbox).total
    return total


def exact_gradient(params, task, cfg, h=1e-6):
    """Central differences of the enumerated expectation; never touches the analytic gradient."""
    x = params.flat()
    d = len(params.w)
    g = np.empty_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (expected_reward(PolicyParams.from_flat(x + e, d), task, cfg)
                - expected_reward(PolicyParams.from_flat(x - e, d), task, cfg)) / (2 * h)
    return g


def rloo_estimates(params, task, cfg, n_groups, seed):
    """Per-group estimator values (n_groups x P) and the largest |sum of advantages|."""
    out = np.empty((n_groups, len(params.flat())))
    worst = 0.0
    for i in range(n_groups):
        group = evaluate_group(params, task, cfg, np.random.default_rng([seed, i]))
        worst = max(worst, abs(float(group.advantages.sum())))
        out[i] = group_gradient(params, group, cfg)
    return out, worst


def within_standard_errors(estimates, exact, k=3.0):
    mean = estimates.mean(axis=0)
    se = estimates.std(axis=0, ddof=1) / np.sqrt(len(estimates))
    return np.abs(mean - exact) <= k * se, mean, se
