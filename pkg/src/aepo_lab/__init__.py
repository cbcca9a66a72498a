"""Multi-answer click-target policy optimization on a synthetic screen simulator."""

from .env import EnvConfig, Task, generate_dataset
from .geometry import BBox, Point
from .policy import PolicyParams
from .protocol import Response, parse_response, serialize_response
from .reward import RewardBreakdown, total_reward
from .trainer import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "BBox",
    "EnvConfig",
    "Point",
    "PolicyParams",
    "Response",
    "RewardBreakdown",
    "Task",
    "TrainConfig",
    "generate_dataset",
    "parse_response",
    "serialize_response",
    "total_reward",
    "train",
]
