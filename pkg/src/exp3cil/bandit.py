"""Exp3 policy over a finite action space.

Weights are kept in the log domain; ``w = exp(log_weights)``. The policy is
``p = w / sum(w)``, optionally mixed with a uniform distribution (``mix``,
default 0, i.e. plain normalization).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from .errors import (
    ImportanceWeightError,
    InvalidActionSpaceError,
    InvalidParameterError,
    RewardRangeError,
)

DEFAULT_XI = 0.1


@dataclass(frozen=True)
class PolicyState:
    """Exp3 weights (log domain), step size ``xi`` and number of updates applied.

    A log-weight of ``-inf`` marks an arm that is masked out (see
    :func:`forced_policy`); ``nan`` and ``+inf`` are never allowed.
    """

    log_weights: np.ndarray
    xi: float = DEFAULT_XI
    update_count: int = 0
    mix: float = 0.0

    def __post_init__(self):
        lw = np.array(self.log_weights, dtype=float)
        if lw.ndim != 1 or lw.size < 1:
            raise InvalidActionSpaceError("log_weights must be a nonempty vector")
        if np.any(np.isnan(lw)) or np.any(lw == np.inf) or not np.any(np.isfinite(lw)):
            raise InvalidParameterError("log_weights must be finite (or -inf masks)")
        if not self.xi > 0:
            raise InvalidParameterError(f"xi must be positive, got {self.xi}")
        if not 0.0 <= self.mix <= 1.0:
            raise InvalidParameterError(f"mix must lie in [0, 1], got {self.mix}")
        lw.setflags(write=False)
        object.__setattr__(self, "log_weights", lw)

    @property
    def num_actions(self) -> int:
        return self.log_weights.size

    def __eq__(self, other):
        if not isinstance(other, PolicyState):
            return NotImplemented
        return (
            self.xi == other.xi
            and self.update_count == other.update_count
            and self.mix == other.mix
            and np.array_equal(self.log_weights, other.log_weights)
        )

    def to_dict(self) -> dict:
        return {
            "xi": self.xi,
            "update_count": self.update_count,
            "mix": self.mix,
            # JSON has no -inf; masked arms are written as null
            "log_weights": [None if np.isneginf(v) else float(v) for v in self.log_weights],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PolicyState":
        lw = [-np.inf if v is None else float(v) for v in data["log_weights"]]
        return cls(
            log_weights=np.asarray(lw),
            xi=float(data["xi"]),
            update_count=int(data["update_count"]),
            mix=float(data.get("mix", 0.0)),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "PolicyState":
        return cls.from_dict(json.loads(text))


def init_policy(num_actions: int, xi: float = DEFAULT_XI, mix: float = 0.0) -> PolicyState:
    """Uniform policy: every weight starts at 1 (log-weight 0)."""
    if num_actions < 2:
        raise InvalidActionSpaceError(f"need at least 2 actions, got {num_actions}")
    if not xi > 0:
        raise InvalidParameterError(f"xi must be positive, got {xi}")
    return PolicyState(np.zeros(num_actions), xi=xi, mix=mix)


def forced_policy(num_actions: int, index: int, xi: float = DEFAULT_XI) -> PolicyState:
    """Delta policy that always selects ``index``; every other arm is masked with -inf."""
    if not 0 <= index < num_actions:
        raise IndexError(f"action index {index} out of range for {num_actions} actions")
    lw = np.full(num_actions, -np.inf)
    lw[index] = 0.0
    return PolicyState(lw, xi=xi)


def policy_distribution(policy: PolicyState) -> np.ndarray:
    lw = policy.log_weights
    w = np.exp(lw - lw.max())
    p = w / w.sum()
    if policy.mix > 0:
        p = (1.0 - policy.mix) * p + policy.mix / p.size
    return p


def sample_action(policy: PolicyState, rng: np.random.Generator) -> int:
    """Draw an arm index from the policy distribution using one uniform variate."""
    p = policy_distribution(policy)
    u = rng.random()
    cdf = np.cumsum(p)
    idx = int(np.searchsorted(cdf, u * cdf[-1], side="right"))
    idx = min(idx, p.size - 1)
    # never land on a zero-probability arm through rounding at the cdf tail
    while p[idx] == 0.0:
        idx -= 1
    return idx


def update_weight(policy: PolicyState, chosen: int, reward: float) -> PolicyState:
    """Exp3 importance-weighted update of the chosen arm.

    ``log w(chosen) += xi * reward / p(chosen)``. Rewards must already be
    normalized to [0, 1].
    """
    if not 0 <= chosen < policy.num_actions:
        raise IndexError(f"action index {chosen} out of range")
    if not (0.0 <= reward <= 1.0):
        raise RewardRangeError(f"reward {reward} outside [0, 1]")
    p = policy_distribution(policy)[chosen]
    if p <= np.finfo(float).tiny:
        raise ImportanceWeightError(f"p({chosen}) = {p} is zero; cannot importance-weight")
    lw = np.array(policy.log_weights)
    lw[chosen] += policy.xi * reward / p
    return replace(policy, log_weights=lw, update_count=policy.update_count + 1)
