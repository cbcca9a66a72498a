"""Points, boxes, hit tests and the collinearity check used by the rewards."""

from __future__ import annotations

import itertools
import math
from typing import NamedTuple, Sequence

import numpy as np

DEFAULT_EPS_REL = 1e-3


class Point(NamedTuple):
    x: float
    y: float


class BBox(NamedTuple):
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def validate(self) -> "BBox":
        if not all(math.isfinite(c) for c in self):
            raise ValueError(f"non-finite bbox {self}")
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise ValueError(f"inverted bbox {self}")
        return self


def point_in_bbox(p: Point, b: BBox) -> bool:
    # edges inclusive
    return b.x_min <= p[0] <= b.x_max and b.y_min <= p[1] <= b.y_max


def bbox_center(b: BBox) -> Point:
    return Point((b.x_min + b.x_max) / 2, (b.y_min + b.y_max) / 2)


def triangle_area(p1: Point, p2: Point, p3: Point) -> float:
    cross = (p2[0] - p1[0]) * (p3[1] - p1[1]) - (p2[1] - p1[1]) * (p3[0] - p1[0])
    return abs(cross) / 2


def is_collinear_set(points: Sequence[Point], eps_rel: float = DEFAULT_EPS_REL) -> bool:
    """True when every triple of ``points`` is nearly degenerate.

    Triangle areas are normalized by the squared diameter of the set, so the
    test does not depend on screen resolution. Sets of fewer than three points
    are never collinear; a set whose points all coincide always is.
    """
    n = len(points)
    if n < 3:
        return False
    pts = np.asarray(points, dtype=float)
    diff = pts[:, None, :] - pts[None, :, :]
    d2 = float(np.max(np.einsum("ijk,ijk->ij", diff, diff)))
    if d2 == 0.0:
        return True
    i, j, k = np.array(list(itertools.combinations(range(n), 3))).T
    u = pts[j] - pts[i]
    v = pts[k] - pts[i]
    areas = np.abs(u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0]) / 2
    return bool(np.all(areas / d2 < eps_rel))


def has_degenerate_triple(points: Sequence[Point], eps_rel: float = DEFAULT_EPS_REL) -> bool:
    """The looser reading of the penalty: fires if *some* triple is degenerate.

    Not used by the reward; kept so the two readings can be compared.
    """
    n = len(points)
    if n < 3:
        return False
    d2 = max((a[0] - b[0]) ** 2 + (a[1] - b[1]) ** 2 for a, b in itertools.combinations(points, 2))
    if d2 == 0.0:
        return True
    return any(triangle_area(a, b, c) / d2 < eps_rel for a, b, c in itertools.combinations(points, 3))
