"""Response grammar, strict parser and the format reward.

A response looks like::

    <think>...</think><answer>[[x1,y1],[x2,y2],...]</answer>

Nothing may precede ``<think>`` or follow ``</answer>``. The think text is
opaque. Points come back in textual order, which is the rank order used by
the accuracy reward.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass
from typing import Sequence

from .geometry import Point

DEFAULT_N_MAX = 8

THINK_OPEN, THINK_CLOSE = "<think>", "</think>"
ANSWER_OPEN, ANSWER_CLOSE = "<answer>", "</answer>"


class FormatErrorKind(enum.Enum):
    MISSING_THINK = "MissingThink"
    MISSING_ANSWER = "MissingAnswer"
    BAD_NUMBER = "BadNumber"
    EMPTY_SET = "EmptySet"
    TOO_MANY = "TooMany"


class FormatError(ValueError):
    def __init__(self, kind: FormatErrorKind, detail: str = ""):
        self.kind = kind
        super().__init__(f"{kind.value}: {detail}" if detail else kind.value)


@dataclass(frozen=True)
class Response:
    think_text: str
    candidates: tuple[Point, ...]

    def __post_init__(self):
        if not self.candidates:
            raise ValueError("a response needs at least one candidate")
        if THINK_CLOSE in self.think_text:
            raise ValueError("think text may not contain the closing think tag")
        for p in self.candidates:
            if not (math.isfinite(p[0]) and math.isfinite(p[1])):
                raise ValueError(f"non-finite candidate {p}")

    @property
    def n(self) -> int:
        return len(self.candidates)


def _fmt(v: float) -> str:
    # integral values print without a fraction; everything else uses repr so
    # the decimal text round-trips to the identical float
    if float(v).is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(float(v))


def serialize_answer(points: Sequence[Point]) -> str:
    return "[" + ",".join(f"[{_fmt(p[0])},{_fmt(p[1])}]" for p in points) + "]"


def serialize_response(r: Response) -> str:
    return f"{THINK_OPEN}{r.think_text}{THINK_CLOSE}{ANSWER_OPEN}{serialize_answer(r.candidates)}{ANSWER_CLOSE}"


def _reject_constant(name: str):
    raise FormatError(FormatErrorKind.BAD_NUMBER, f"non-finite literal {name}")


def _number(v) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise FormatError(FormatErrorKind.BAD_NUMBER, f"not a number: {v!r}")
    try:
        f = float(v)
    except OverflowError:
        raise FormatError(FormatErrorKind.BAD_NUMBER, "number out of range") from None
    if not math.isfinite(f) or f < 0:
        raise FormatError(FormatErrorKind.BAD_NUMBER, f"coordinate out of range: {v!r}")
    return f


def parse_response(s: str, n_max: int = DEFAULT_N_MAX) -> Response:
    """Parse ``s`` strictly; raises :class:`FormatError` on any deviation."""
    if not isinstance(s, str) or not s.startswith(THINK_OPEN):
        raise FormatError(FormatErrorKind.MISSING_THINK)
    close = s.find(THINK_CLOSE, len(THINK_OPEN))
    if close < 0:
        raise FormatError(FormatErrorKind.MISSING_THINK, "unterminated think block")
    think = s[len(THINK_OPEN):close]
    rest = s[close + len(THINK_CLOSE):]
    if not (rest.startswith(ANSWER_OPEN) and rest.endswith(ANSWER_CLOSE)) or len(rest) < len(ANSWER_OPEN) + len(ANSWER_CLOSE):
        raise FormatError(FormatErrorKind.MISSING_ANSWER)
    body = rest[len(ANSWER_OPEN):-len(ANSWER_CLOSE)]
    if ANSWER_OPEN in body or ANSWER_CLOSE in body:
        raise FormatError(FormatErrorKind.MISSING_ANSWER, "nested answer tags")

    try:
        data = json.loads(body, parse_constant=_reject_constant)
    except FormatError:
        raise
    except (ValueError, RecursionError) as exc:
        raise FormatError(FormatErrorKind.BAD_NUMBER, str(exc)) from None
    if not isinstance(data, list):
        raise FormatError(FormatErrorKind.BAD_NUMBER, "answer is not an array")
    if not data:
        raise FormatError(FormatErrorKind.EMPTY_SET)
    if len(data) > n_max:
        raise FormatError(FormatErrorKind.TOO_MANY, f"{len(data)} > {n_max}")
    points = []
    for pair in data:
        if not isinstance(pair, list) or len(pair) != 2:
            raise FormatError(FormatErrorKind.BAD_NUMBER, f"not an [x,y] pair: {pair!r}")
        points.append(Point(_number(pair[0]), _number(pair[1])))
    return Response(think, tuple(points))


def format_reward(s: str, n_max: int = DEFAULT_N_MAX) -> int:
    try:
        parse_response(s, n_max)
    except FormatError:
        return 0
    return 1
