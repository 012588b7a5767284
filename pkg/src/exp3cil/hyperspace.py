"""Hyperparameter tuples and the discretized action grid."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

from .errors import ActionNotFoundError, InvalidGridError

DEFAULT_GRID = {
    "beta": (0.0, 0.5, 1.0, 2.0),
    "gamma": (0.0, 1.0, 5.0),
    "lambda": (0.01, 0.05),
    "delta": (0, 1),
}


@dataclass(frozen=True, order=True)
class Action:
    """One setting of (logit-KD weight, feature-KD weight, learning rate, classifier flag).

    ``delta`` is 1 for the nearest-class-mean classifier and 0 for the cosine FC head.
    """

    beta: float
    gamma: float
    lam: float
    delta: int

    def __post_init__(self):
        if self.delta not in (0, 1):
            raise InvalidGridError(f"delta must be 0 or 1, got {self.delta!r}")
        if not self.lam > 0:
            raise InvalidGridError(f"learning rate must be positive, got {self.lam}")
        if self.beta < 0 or self.gamma < 0:
            raise InvalidGridError("KD weights must be nonnegative")
        object.__setattr__(self, "beta", float(self.beta))
        object.__setattr__(self, "gamma", float(self.gamma))
        object.__setattr__(self, "lam", float(self.lam))
        object.__setattr__(self, "delta", int(self.delta))

    def as_dict(self) -> dict:
        return {"beta": self.beta, "gamma": self.gamma, "lambda": self.lam, "delta": self.delta}

    @classmethod
    def from_dict(cls, d: dict) -> "Action":
        return cls(d["beta"], d["gamma"], d["lambda"], d["delta"])


@dataclass(frozen=True)
class ActionSpace:
    actions: tuple[Action, ...]
    grid_spec: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "_index", {a: i for i, a in enumerate(self.actions)})
        if len(self._index) != len(self.actions):
            raise InvalidGridError("action space contains duplicate actions")

    def __len__(self):
        return len(self.actions)

    def __iter__(self):
        return iter(self.actions)

    def to_list(self) -> list[dict]:
        return [a.as_dict() for a in self.actions]


def build_grid(
    beta_values: Sequence[float],
    gamma_values: Sequence[float],
    lambda_values: Sequence[float],
    delta_values: Sequence[int],
    *,
    min_size: int = 2,
) -> ActionSpace:
    """Cartesian product of the four value lists, beta outermost and delta innermost.

    ``min_size=1`` admits a single-action space, used for fixed-hyperparameter runs.
    """
    dims = {
        "beta": list(beta_values),
        "gamma": list(gamma_values),
        "lambda": list(lambda_values),
        "delta": list(delta_values),
    }
    for name, values in dims.items():
        if not values:
            raise InvalidGridError(f"empty value list for {name}")
        if len(set(values)) != len(values):
            raise InvalidGridError(f"duplicate values for {name}: {values}")
    if any(d not in (0, 1) for d in dims["delta"]):
        raise InvalidGridError(f"delta values must be a subset of {{0, 1}}, got {dims['delta']}")
    actions = tuple(Action(b, g, l, d) for b, g, l, d in itertools.product(*dims.values()))
    if len(actions) < min_size:
        raise InvalidGridError(f"action space has {len(actions)} action(s), need >= {min_size}")
    return ActionSpace(actions, {k: tuple(v) for k, v in dims.items()})


def default_space() -> ActionSpace:
    return build_grid(*DEFAULT_GRID.values())


def action_at(space: ActionSpace, index: int) -> Action:
    if not 0 <= index < len(space.actions):
        raise IndexError(f"action index {index} out of range [0, {len(space.actions)})")
    return space.actions[index]


def index_of(space: ActionSpace, action: Action) -> int:
    try:
        return space._index[action]
    except KeyError:
        raise ActionNotFoundError(f"{action} is not in the action space") from None
