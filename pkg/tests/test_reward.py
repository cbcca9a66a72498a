import io
import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from aepo_lab.geometry import BBox, Point, is_collinear_set
from aepo_lab.protocol import Response, serialize_response
from aepo_lab.reward import (
    RewardConfig,
    aer_accuracy,
    aer_value,
    find_first_correct_rank,
    naive_reward,
    reward_curve,
    total_reward,
    write_reward_curve_csv,
)

B = BBox(0, 0, 10, 10)
HIT, MISS = Point(5, 5), Point(50, 50)


def answer(*pts):
    return serialize_response(Response("t", tuple(Point(*p) for p in pts)))


def test_first_correct_rank():
    assert find_first_correct_rank([MISS, HIT], B) == 2
    assert find_first_correct_rank([HIT], B) == 1
    assert find_first_correct_rank([MISS, Point(60, 60)], B) is None


def test_aer_examples():
    assert aer_value(1, 1) == 1.0
    assert aer_value(4, 2) == pytest.approx(0.35355339059327373, abs=1e-15)
    assert aer_value(4, None) == -0.25


def test_aer_grid_squaring_oracle():
    for n in range(1, 9):
        for k in range(1, n + 1):
            pts = [MISS] * (k - 1) + [HIT] + [MISS] * (n - k)
            r = aer_accuracy(pts, B)
            assert abs(r * r * n * k - 1) < 1e-12
        assert aer_accuracy([MISS] * n, B) == -1 / n


def test_total_reward_examples():
    b = total_reward("<think>t</think><answer>[[5,5]]</answer>", B)
    assert (b.format, b.accuracy, b.total) == (1, 1.0, 2.0)
    c = total_reward("<think>t</think><answer>[[0,0],[1,1],[2,2]]</answer>", B)
    assert (c.accuracy, c.total, c.collinear, c.success) == (-1.0, 0.0, True, False)
    g = total_reward("garbage", B)
    assert (g.format, g.accuracy, g.total) == (0, 0.0, 0.0)


def test_naive_reward():
    assert naive_reward(HIT, B) == 1
    assert naive_reward(MISS, B) == -1
    assert naive_reward(Point(10, 10), B) == 1


def test_reward_curve_rows():
    rows = reward_curve([2, 8], 8)
    assert (2, 1, pytest.approx(1 / math.sqrt(2))) in rows
    assert (2, 2, 0.5) in rows
    assert (8, 0, -0.125) in rows
    for n in (2, 8):
        succ = [r for (nn, k, r) in rows if nn == n and k > 0]
        assert all(a > b for a, b in zip(succ, succ[1:]))
    buf = io.StringIO()
    write_reward_curve_csv(reward_curve([2], 2), buf)
    assert buf.getvalue().splitlines() == ["N,k,reward", "2,0,-0.5", "2,1,0.7071067811865475", "2,2,0.5"]


def test_reward_curve_rejects_bad_input():
    with pytest.raises(ValueError):
        reward_curve([], 3)
    with pytest.raises(ValueError):
        reward_curve([0], 3)


def test_ablation_flags():
    s = answer((50, 50), (5, 5))
    assert RewardConfig(shaped=False).score(s, B).accuracy == 1.0
    assert RewardConfig(shaped=False).score(answer((50, 50)), B).accuracy == -1.0
    assert RewardConfig(rank_factor=False).score(s, B).accuracy == pytest.approx(1 / math.sqrt(2))
    line = answer((0, 0), (1, 1), (2, 2))
    assert RewardConfig(collinear_penalty=False).score(line, B).accuracy == pytest.approx(1 / math.sqrt(3))


def test_n_max_plumbed_to_parser():
    s = answer((5, 5), (30, 40), (80, 10))
    assert total_reward(s, B, n_max=2).format == 0
    assert total_reward(s, B, n_max=3).format == 1


def test_monotonicity_properties():
    for n in range(1, 9):
        for k in range(1, n):
            assert aer_value(n, k) > aer_value(n, k + 1)
        for k in range(1, n + 1):
            assert 0 < aer_value(n, k) <= 1
            if n < 8:
                assert aer_value(n, k) > aer_value(n + 1, k)
        if n < 8:
            assert aer_value(n, None) < aer_value(n + 1, None)
    assert min(aer_value(8, k) for k in range(1, 9)) > max(aer_value(n, None) for n in range(1, 9))
    assert [(n, k) for n in range(1, 9) for k in range(1, n + 1) if aer_value(n, k) == 1] == [(1, 1)]


coord = st.floats(min_value=0, max_value=100, allow_nan=False)
pts_st = st.lists(st.tuples(coord, coord), min_size=1, max_size=8)


@given(pts_st)
def test_breakdown_invariants(pts):
    s = answer(*pts)
    r = total_reward(s, B)
    assert r.total == r.format + r.accuracy
    assert r.total == 0 or 0 <= r.total <= 2
    if r.collinear:
        assert r.accuracy == -1
    elif r.success:
        assert r.accuracy == aer_value(r.n, r.rank)
    else:
        assert r.accuracy == -1 / r.n
    assert total_reward(s, B) == r


@given(st.lists(st.floats(0, 100), min_size=3, max_size=8), st.floats(0, 1), st.floats(0, 50))
def test_collinear_override_dominates(ts, slope, intercept):
    pts = [(t, slope * t + intercept) for t in ts]
    r = total_reward(answer(*pts), B)
    if is_collinear_set([Point(*p) for p in pts]):
        assert r.accuracy == -1 and r.total == 0


@given(st.text())
def test_format_failure_zeroes_everything(s):
    r = total_reward(s, B)
    if r.format == 0:
        assert r.accuracy == 0 and r.total == 0
