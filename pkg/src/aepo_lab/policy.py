"""Multi-answer stochastic policy with exact log-probabilities and gradients.

A rollout first draws a count ``N`` from a count head, then draws ``N``
distinct elements by Plackett-Luce sampling over tempered element scores.
Candidates are the centers of the chosen elements, in draw order.

Element scores are ``s_j = sum_t w_t * instruction_t * feature_jt``. The count
head's logits are ``u_n + v_n * H`` where ``H`` is the entropy of the tempered
score softmax, so the policy can ask for more candidates when it is unsure.
The count support is ``1..min(n_max, M)``.

Everything is computed on batches of rollouts for one task; the single-rollout
functions are thin wrappers so training and testing share one code path.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import IO, Optional, Sequence

import numpy as np

from .env import Task
from .geometry import Point
from .protocol import Response, serialize_response


class DimensionError(ValueError):
    pass


class InfeasibleRollout(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class PolicyParams:
    """Parameters ``(w, u, v)``; the same container also carries gradients."""

    w: np.ndarray
    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        for name in ("w", "u", "v"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.u.shape != self.v.shape:
            raise DimensionError("u and v must have the same length")

    @property
    def n_max(self) -> int:
        return len(self.u)

    @classmethod
    def init(cls, feature_dim: int, n_max: int = 8, w_scale: float = 1.0, count_decay: float = 1.0) -> "PolicyParams":
        """Base policy: plain dot-product similarity, count head favouring small N."""
        return cls(np.full(feature_dim, w_scale), -count_decay * np.arange(n_max, dtype=float), np.zeros(n_max))

    def flat(self) -> np.ndarray:
        return np.concatenate([self.w, self.u, self.v])

    @classmethod
    def from_flat(cls, x: np.ndarray, feature_dim: int) -> "PolicyParams":
        n = (len(x) - feature_dim) // 2
        return cls(x[:feature_dim], x[feature_dim:feature_dim + n], x[feature_dim + n:])

    def __add__(self, other: "PolicyParams") -> "PolicyParams":
        return PolicyParams(self.w + other.w, self.u + other.u, self.v + other.v)

    def __mul__(self, c: float) -> "PolicyParams":
        return PolicyParams(self.w * c, self.u * c, self.v * c)

    __rmul__ = __mul__

    def __eq__(self, other) -> bool:
        if not isinstance(other, PolicyParams):
            return NotImplemented
        return all(np.array_equal(a, b) for a, b in zip((self.w, self.u, self.v), (other.w, other.u, other.v)))

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.flat())))

    def to_dict(self) -> dict:
        return {"w": self.w.tolist(), "u": self.u.tolist(), "v": self.v.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "PolicyParams":
        # in memory -inf count logits are allowed (they pin N); stored params must be finite
        params = cls(d["w"], d["u"], d["v"])
        if not params.is_finite():
            raise ValueError("stored parameters must be finite")
        return params

    def dump(self, fh: IO[str]) -> None:
        json.dump(self.to_dict(), fh)
        fh.write("\n")

    @classmethod
    def load(cls, fh: IO[str]) -> "PolicyParams":
        return cls.from_dict(json.load(fh))


@dataclass(frozen=True)
class Rollout:
    n: int
    element_ranks: tuple[int, ...]
    candidates: tuple[Point, ...]
    response: str
    logp: float


# -- scores and count head -----------------------------------------------------

def log_softmax(z: np.ndarray) -> np.ndarray:
    # the arrays here have a handful of entries; scipy's version is dominated by call overhead
    shifted = z - np.max(z)
    return shifted - np.log(np.sum(np.exp(shifted)))


def element_scores(params: PolicyParams, task: Task) -> np.ndarray:
    if params.w.shape[0] != task.match.shape[1]:
        raise DimensionError(f"policy has {params.w.shape[0]} weights, task has {task.match.shape[1]} features")
    return task.match @ params.w


def score_entropy(scores: np.ndarray, temperature: float) -> float:
    logq = log_softmax(scores / temperature)
    q = np.exp(logq)
    return float(-np.sum(q * logq))


def count_support(params: PolicyParams, task: Task) -> int:
    return min(params.n_max, task.n_elements)


def count_log_probs(params: PolicyParams, scores: np.ndarray, temperature: float, support: Optional[int] = None) -> np.ndarray:
    """Log P(N = n) for n = 1..support."""
    support = params.n_max if support is None else support
    h = score_entropy(scores, temperature)
    return log_softmax(params.u[:support] + params.v[:support] * h)


def sample_count(params: PolicyParams, scores: np.ndarray, temperature: float,
                 rng: np.random.Generator, support: Optional[int] = None) -> int:
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    p = np.exp(count_log_probs(params, scores, temperature, support))
    return int(rng.choice(len(p), p=p / p.sum())) + 1


def first_answer_probs(params: PolicyParams, task: Task, temperature: float = 1.0) -> np.ndarray:
    """Distribution of the first pick, i.e. of a forced single-answer rollout."""
    return np.exp(log_softmax(element_scores(params, task) / temperature))


def greedy_first_answer(params: PolicyParams, task: Task) -> Point:
    # np.argmax returns the lowest index on ties
    return task.centers[int(np.argmax(element_scores(params, task)))]


# -- batched Plackett-Luce core ------------------------------------------------

def _complete_orders(task: Task, ranks: Sequence[Sequence[int]], ns: Sequence[int], support: int) -> np.ndarray:
    m = task.n_elements
    orders = np.empty((len(ranks), m), dtype=np.int64)
    for g, (r, n) in enumerate(zip(ranks, ns)):
        r = list(r)
        if len(r) != n or not 1 <= n <= support:
            raise InfeasibleRollout(f"count {n} with ranks {r} (support 1..{support})")
        if len(set(r)) != n or any(not (isinstance(i, (int, np.integer)) and 0 <= i < m) for i in r):
            raise InfeasibleRollout(f"invalid or repeated element indices {r}")
        chosen = set(r)
        orders[g] = r + [j for j in range(m) if j not in chosen]
    return orders


def _pl_terms(z: np.ndarray, orders: np.ndarray, ns: np.ndarray):
    """PL log-probs of the first ``ns`` picks and their gradients w.r.t. ``z``."""
    g_count, m = orders.shape
    zs = z[orders]                                              # G x M, draw order
    lse = np.logaddexp.accumulate(zs[:, ::-1], axis=1)[:, ::-1]  # log-normalizer at each draw
    pos = np.arange(m)
    active = pos[None, :] < ns[:, None]                          # draws that happened
    logp = np.sum(np.where(active, zs - lse, 0.0), axis=1)

    # softmax over remaining items at draw i, for item in sorted slot j >= i
    with np.errstate(under="ignore", over="ignore"):  # overflowing entries are masked below
        rem = np.exp(zs[:, None, :] - lse[:, :, None])          # G x i x j
    mask = active[:, :, None] & (pos[None, None, :] >= pos[None, :, None])
    grad_sorted = active.astype(float) - np.sum(np.where(mask, rem, 0.0), axis=1)
    grad = np.empty_like(grad_sorted)
    np.put_along_axis(grad, orders, grad_sorted, axis=1)
    return logp, grad


def batch_log_prob_and_grad(params: PolicyParams, task: Task, ranks, ns, temperature: float = 1.0,
                            fixed_n: Optional[int] = None, need_grad: bool = True):
    """Log-probs (G,) and gradients ``(dw, du, dv)`` of shape (G, .) for a batch of rollouts.

    With ``fixed_n`` the count is not sampled, so it contributes nothing.
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    scores = element_scores(params, task)
    support = fixed_n if fixed_n is not None else count_support(params, task)
    ns = np.asarray(ns, dtype=np.int64)
    if fixed_n is not None and np.any(ns != fixed_n):
        raise InfeasibleRollout(f"rollout count differs from forced count {fixed_n}")
    if fixed_n is not None and fixed_n > task.n_elements:
        raise InfeasibleRollout("forced count exceeds the number of elements")
    orders = _complete_orders(task, ranks, ns, support if fixed_n is None else fixed_n)
    z = scores / temperature
    logp, dz = _pl_terms(z, orders, ns)
    ds = dz / temperature
    g = len(ns)
    du = np.zeros((g, params.n_max))
    dv = np.zeros((g, params.n_max))

    if fixed_n is None:
        logq = log_softmax(z)
        q = np.exp(logq)
        h = float(-np.sum(q * logq))
        logits = params.u[:support] + params.v[:support] * h
        log_pn = log_softmax(logits)
        logp = logp + log_pn[ns - 1]
        if need_grad:
            dl = -np.broadcast_to(np.exp(log_pn), (g, support)).copy()
            dl[np.arange(g), ns - 1] += 1.0
            du[:, :support] = dl
            dv[:, :support] = dl * h
            dh = dl @ params.v[:support]                         # (G,)
            dh_ds = -q * (logq + h) / temperature                # (M,)
            ds = ds + dh[:, None] * dh_ds[None, :]

    if not need_grad:
        return logp, None
    dw = ds @ task.match
    return logp, (dw, du, dv)


def sample_batch(params: PolicyParams, task: Task, temperature: float, rng: np.random.Generator,
                 size: int, fixed_n: Optional[int] = None):
    """Draw ``size`` rollouts; returns ``(ns, orders)`` with full draw orders (size x M).

    Element draws use Gumbel-top-k, which has the Plackett-Luce distribution.
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    scores = element_scores(params, task)
    z = scores / temperature
    if not np.all(np.isfinite(z)):
        raise FloatingPointError("element scores overflowed")
    if fixed_n is not None:
        if not 1 <= fixed_n <= task.n_elements:
            raise InfeasibleRollout("forced count out of range")
        ns = np.full(size, fixed_n, dtype=np.int64)
    else:
        p = np.exp(count_log_probs(params, scores, temperature, count_support(params, task)))
        if not np.all(np.isfinite(p)):
            raise FloatingPointError("count probabilities are not finite")
        ns = rng.choice(len(p), size=size, p=p / p.sum()) + 1
    perturbed = z[None, :] + rng.gumbel(size=(size, task.n_elements))
    orders = np.argsort(-perturbed, axis=1, kind="stable")
    return ns.astype(np.int64), orders


def make_rollout(task: Task, ranks: Sequence[int], logp: float, think: str = "") -> Rollout:
    ranks = tuple(int(i) for i in ranks)
    cands = tuple(task.centers[i] for i in ranks)
    return Rollout(len(ranks), ranks, cands, serialize_response(Response(think, cands)), float(logp))


def sample_rollouts(params: PolicyParams, task: Task, temperature: float, rng: np.random.Generator,
                    size: int, fixed_n: Optional[int] = None) -> list[Rollout]:
    ns, orders = sample_batch(params, task, temperature, rng, size, fixed_n)
    ranks = [orders[g, :n] for g, n in enumerate(ns)]
    logp, _ = batch_log_prob_and_grad(params, task, ranks, ns, temperature, fixed_n, need_grad=False)
    return [make_rollout(task, r, lp) for r, lp in zip(ranks, logp)]


def sample_rollout(params: PolicyParams, task: Task, temperature: float = 1.0,
                   rng: Optional[np.random.Generator] = None, fixed_n: Optional[int] = None) -> Rollout:
    rng = rng if rng is not None else np.random.default_rng()
    return sample_rollouts(params, task, temperature, rng, 1, fixed_n)[0]


def log_prob(params: PolicyParams, task: Task, rollout, temperature: float = 1.0, fixed_n: Optional[int] = None) -> float:
    ranks = rollout.element_ranks if isinstance(rollout, Rollout) else tuple(rollout)
    logp, _ = batch_log_prob_and_grad(params, task, [ranks], [len(ranks)], temperature, fixed_n, need_grad=False)
    return float(logp[0])


def grad_log_prob(params: PolicyParams, task: Task, rollout, temperature: float = 1.0,
                  fixed_n: Optional[int] = None) -> PolicyParams:
    ranks = rollout.element_ranks if isinstance(rollout, Rollout) else tuple(rollout)
    _, (dw, du, dv) = batch_log_prob_and_grad(params, task, [ranks], [len(ranks)], temperature, fixed_n)
    return PolicyParams(dw[0], du[0], dv[0])
