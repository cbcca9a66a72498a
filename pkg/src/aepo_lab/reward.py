"""Adaptive exploration reward, collinear override and the total reward.

The accuracy term rewards a hit at rank ``k`` among ``N`` candidates with
``1/sqrt(N*k)`` and a miss with ``-1/N``; a near-collinear candidate set is
overridden to ``-1``. The total adds a 0/1 format term.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from typing import IO, Iterable, Optional, Sequence

from .geometry import DEFAULT_EPS_REL, BBox, Point, is_collinear_set, point_in_bbox
from .protocol import DEFAULT_N_MAX, FormatError, parse_response


@dataclass(frozen=True)
class RewardBreakdown:
    format: int
    accuracy: float
    total: float
    collinear: bool
    rank: Optional[int]
    n: int
    success: bool

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class RewardConfig:
    """Knobs for the accuracy term.

    The three flags exist for ablations; the defaults are the full reward.
    ``shaped=False`` replaces the efficiency shaping with a flat +1/-1,
    ``rank_factor=False`` drops ``k`` from the success value, and
    ``collinear_penalty=False`` skips the override.
    """

    n_max: int = DEFAULT_N_MAX
    eps_rel: float = DEFAULT_EPS_REL
    shaped: bool = True
    rank_factor: bool = True
    collinear_penalty: bool = True

    def score(self, s: str, b: BBox) -> RewardBreakdown:
        return total_reward(
            s, b, self.n_max, self.eps_rel,
            shaped=self.shaped, rank_factor=self.rank_factor, collinear_penalty=self.collinear_penalty,
        )


def find_first_correct_rank(points: Sequence[Point], b: BBox) -> Optional[int]:
    for i, p in enumerate(points, start=1):
        if point_in_bbox(p, b):
            return i
    return None


def aer_value(n: int, rank: Optional[int]) -> float:
    if rank is None:
        return -1.0 / n
    return 1.0 / math.sqrt(n * rank)


def aer_accuracy(points: Sequence[Point], b: BBox) -> float:
    """Accuracy term without the collinear override."""
    return aer_value(len(points), find_first_correct_rank(points, b))


def naive_reward(p: Point, b: BBox) -> float:
    return 1.0 if point_in_bbox(p, b) else -1.0


def total_reward(
    s: str,
    b: BBox,
    n_max: int = DEFAULT_N_MAX,
    eps_rel: float = DEFAULT_EPS_REL,
    *,
    shaped: bool = True,
    rank_factor: bool = True,
    collinear_penalty: bool = True,
) -> RewardBreakdown:
    try:
        points = parse_response(s, n_max).candidates
    except FormatError:
        return RewardBreakdown(0, 0.0, 0.0, False, None, 0, False)
    n = len(points)
    if collinear_penalty and is_collinear_set(points, eps_rel):
        return RewardBreakdown(1, -1.0, 0.0, True, None, n, False)
    rank = find_first_correct_rank(points, b)
    if not shaped:
        accuracy = 1.0 if rank is not None else -1.0
    elif rank is not None and not rank_factor:
        accuracy = 1.0 / math.sqrt(n)
    else:
        accuracy = aer_value(n, rank)
    return RewardBreakdown(1, accuracy, 1 + accuracy, False, rank, n, rank is not None)


def reward_curve(n_values: Iterable[int], k_max: int) -> list[tuple[int, int, float]]:
    """Rows ``(N, k, reward)``; ``k == 0`` marks the failure value for ``N``."""
    n_values = list(n_values)
    if not n_values:
        raise ValueError("n_values must be nonempty")
    rows = []
    for n in n_values:
        if n < 1:
            raise ValueError(f"N must be >= 1, got {n}")
        rows.append((n, 0, aer_value(n, None)))
        rows.extend((n, k, aer_value(n, k)) for k in range(1, min(k_max, n) + 1))
    return rows


def write_reward_curve_csv(rows: Sequence[tuple[int, int, float]], fh: IO[str]) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["N", "k", "reward"])
    for n, k, r in rows:
        w.writerow([n, k, repr(r)])
