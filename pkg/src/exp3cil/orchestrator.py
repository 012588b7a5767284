"""Per-phase policy learning and incremental training.

Every phase ``i >= 1`` runs two stages:

1. policy learning: ``T`` Exp3 iterations; each draws a class-balanced local
   validation split of the phase's training data, samples an action, trains a
   temporary copy of the previous model on the local split for ``n + 1``
   chained rounds of ``M1`` epochs and feeds the mean local accuracy back to
   the policy;
2. incremental training: one action drawn from the learned policy is used to
   train the real model for ``M2`` epochs on exemplars plus new data, after
   which the model is scored on the held-out test set and exemplars are herded.

Each phase derives independent random streams (policy learning, action
selection, training, head initialization) from one seed sequence, so the
policy-learning stage never perturbs the randomness of the final training.
"""

from __future__ import annotations

import contextlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import bandit
from .datastream import ExemplarStore, LabeledDataset, PhaseSchedule, split_local, update_exemplars
from .errors import EmptyRolloutError, Exp3CILError, InvalidParameterError, RewardRangeError
from .hyperspace import Action, ActionSpace, action_at
from .learner import (
    DEFAULT_ARCH,
    DEFAULT_SCALE,
    DEFAULT_TAU,
    ModelState,
    compute_class_means,
    evaluate_accuracy,
    grow_head,
    init_model,
    train_for_epochs,
)

log = logging.getLogger(__name__)

ONLINE = "online"
FIXED = "fixed"


@dataclass(frozen=True)
class OrchestratorConfig:
    T: int = 25
    n: int = 1
    M2: int = 20
    M1: Optional[int] = None  # None -> ceil(0.1 * M2)
    b: int = 2
    policy_update_period: int = 1
    batch_size: int = 16
    memory: int = 5
    tau: float = DEFAULT_TAU
    xi: float = bandit.DEFAULT_XI
    mix: float = 0.0
    phase0_epochs: int = 20
    phase0_lr: float = 0.05
    arch: tuple = DEFAULT_ARCH
    scale: float = DEFAULT_SCALE

    def __post_init__(self):
        if self.M1 is None:
            object.__setattr__(self, "M1", math.ceil(0.1 * self.M2))
        object.__setattr__(self, "arch", tuple(int(a) for a in self.arch))
        if self.T < 1 or self.n < 0 or self.b < 1 or self.policy_update_period < 1:
            raise InvalidParameterError("need T >= 1, n >= 0, b >= 1, policy_update_period >= 1")
        if not self.M2 >= self.M1 >= 1:
            raise InvalidParameterError(f"need M2 >= M1 >= 1, got M2={self.M2}, M1={self.M1}")
        if self.batch_size < 1 or self.memory < 1 or self.phase0_epochs < 1:
            raise InvalidParameterError("batch_size, memory and phase0_epochs must be >= 1")

    def as_dict(self) -> dict:
        d = asdict(self)
        d["arch"] = list(self.arch)
        return d


@dataclass(frozen=True)
class RewardLedger:
    """Test accuracies of completed phases 1..i-1 (append-only)."""

    rewards: tuple[float, ...] = ()

    def append(self, reward: float) -> "RewardLedger":
        if not 0.0 <= reward <= 1.0:
            raise RewardRangeError(f"phase reward {reward} outside [0, 1]")
        return RewardLedger(self.rewards + (float(reward),))

    def total(self) -> float:
        return float(sum(self.rewards))

    def __len__(self):
        return len(self.rewards)


@dataclass
class IterationRecord:
    iteration: int
    action_index: int
    prob: float
    rollout_rewards: list[float]
    reward: float  # value fed to Exp3
    reward_full: float  # historical + lookahead sum


@dataclass
class PhaseResult:
    phase: int
    action_index: Optional[int]
    action: dict
    accuracy: float
    num_classes: int
    policy: Optional[dict] = None
    trace: list[IterationRecord] = field(default_factory=list)
    test_reads_before_eval: int = 0
    policy_learned: bool = False

    def to_dict(self) -> dict:
        d = asdict(self)
        d["trace"] = [asdict(r) for r in self.trace]
        return d


class AuditedDataset:
    """Wraps a held-out set and counts every read of its arrays.

    Reads outside :meth:`evaluation` are tallied in ``premature_reads``.
    """

    def __init__(self, data: LabeledDataset):
        self._data = data
        self.reads = 0
        self.premature_reads = 0
        self._open = False

    def _touch(self):
        self.reads += 1
        if not self._open:
            self.premature_reads += 1

    @property
    def X(self):
        self._touch()
        return self._data.X

    @property
    def y(self):
        self._touch()
        return self._data.y

    def __len__(self):
        return len(self._data)

    @contextlib.contextmanager
    def evaluation(self):
        self._open = True
        try:
            yield self
        finally:
            self._open = False


def phase_streams(seed_seq: np.random.SeedSequence) -> dict[str, np.random.Generator]:
    names = ("policy", "select", "train", "init")
    return {n: np.random.default_rng(s) for n, s in zip(names, seed_seq.spawn(len(names)))}


def _reward_for(model, action, train: LabeledDataset, val: LabeledDataset) -> float:
    means = compute_class_means(model, train.X, train.y) if action.delta == 1 else None
    return evaluate_accuracy(model, val.X, val.y, action.delta, means)


def rollout(
    theta_prev: ModelState,
    action: Action,
    local: tuple[LabeledDataset, LabeledDataset],
    n: int,
    M1: int,
    rng: np.random.Generator,
    *,
    theta_init: Optional[ModelState] = None,
    batch_size: int = 16,
    tau: float = DEFAULT_TAU,
) -> list[float]:
    """Train on the local split for ``n + 1`` chained rounds and score each round.

    Round ``j`` starts from round ``j - 1``'s model and distills from it; round 0
    starts from ``theta_init`` (``theta_prev`` with its head grown for new
    classes) and distills from ``theta_prev``. Nothing here mutates ``theta_prev``.
    """
    local_train, local_val = local
    model = theta_prev if theta_init is None else theta_init
    teacher = theta_prev
    rewards = []
    for j in range(n + 1):
        try:
            trained = train_for_epochs(model, teacher, action, local_train.X, local_train.y, M1, batch_size, rng, tau)
            rewards.append(_reward_for(trained, action, local_train, local_val))
        except Exp3CILError as exc:
            raise type(exc)(f"rollout step {j} with {action}: {exc}") from exc
        teacher = model = trained
    return rewards


def decoupled_reward(rollout_rewards: Sequence[float], ledger: RewardLedger) -> float:
    """Exp3 input: mean lookahead reward. The historical part is a constant and is left out."""
    if len(rollout_rewards) == 0:
        raise EmptyRolloutError("rollout produced no rewards")
    r = np.asarray(rollout_rewards, dtype=float)
    if np.any(r < 0) or np.any(r > 1):
        raise RewardRangeError(f"rollout rewards must lie in [0, 1], got {r.tolist()}")
    return float(r.mean())


def full_decoupled_reward(rollout_rewards: Sequence[float], ledger: RewardLedger) -> float:
    """Historical phase rewards plus the summed lookahead rewards."""
    return ledger.total() + float(np.sum(rollout_rewards))


def policy_learning_round(
    theta_prev: ModelState,
    train_data: LabeledDataset,
    policy: bandit.PolicyState,
    space: ActionSpace,
    cfg: OrchestratorConfig,
    rng: np.random.Generator,
    *,
    theta_init: Optional[ModelState] = None,
    ledger: RewardLedger = RewardLedger(),
    rollout_fn: Callable = rollout,
) -> tuple[bandit.PolicyState, list[IterationRecord]]:
    trace = []
    for t in range(cfg.T):
        try:
            local = split_local(train_data, cfg.b, rng)
            p = bandit.policy_distribution(policy)
            idx = bandit.sample_action(policy, rng)
            rewards = rollout_fn(
                theta_prev, action_at(space, idx), local, cfg.n, cfg.M1, rng,
                theta_init=theta_init, batch_size=cfg.batch_size, tau=cfg.tau,
            )
            r_hat = decoupled_reward(rewards, ledger)
            policy = bandit.update_weight(policy, idx, r_hat)
        except Exp3CILError as exc:
            raise type(exc)(f"policy iteration {t}: {exc}") from exc
        trace.append(
            IterationRecord(t, idx, float(p[idx]), [float(r) for r in rewards], r_hat,
                            full_decoupled_reward(rewards, ledger))
        )
        log.debug("iteration %d: action %d p=%.3f reward=%.3f", t, idx, p[idx], r_hat)
    return policy, trace


def run_phase(
    i: int,
    theta_prev: ModelState,
    exemplars: ExemplarStore,
    new_data: LabeledDataset,
    test_set: AuditedDataset,
    policy: bandit.PolicyState,
    space: ActionSpace,
    cfg: OrchestratorConfig,
    seed_seq: np.random.SeedSequence,
    *,
    ledger: RewardLedger = RewardLedger(),
    learn_policy: bool = True,
) -> tuple[ModelState, ExemplarStore, bandit.PolicyState, PhaseResult]:
    """One incremental phase (``i >= 1``): policy learning, then training on the sampled action."""
    if i < 1:
        raise InvalidParameterError("phase 0 is plain pre-training; use pretrain()")
    streams = phase_streams(seed_seq)
    train_data = LabeledDataset.concat([exemplars.as_dataset(), new_data])
    num_new = max(train_data.classes) + 1 - theta_prev.num_classes
    theta_init = grow_head(theta_prev, num_new, streams["init"]) if num_new > 0 else theta_prev

    trace = []
    learned = learn_policy and i % cfg.policy_update_period == 0
    try:
        if learned:
            policy, trace = policy_learning_round(
                theta_prev, train_data, policy, space, cfg, streams["policy"],
                theta_init=theta_init, ledger=ledger,
            )
        idx = bandit.sample_action(policy, streams["select"])
        action = action_at(space, idx)
        theta_i = train_for_epochs(
            theta_init, theta_prev, action, train_data.X, train_data.y, cfg.M2, cfg.batch_size, streams["train"], cfg.tau
        )
        means = compute_class_means(theta_i, train_data.X, train_data.y) if action.delta == 1 else None
        premature = test_set.premature_reads
        with test_set.evaluation():
            acc = evaluate_accuracy(theta_i, test_set.X, test_set.y, action.delta, means)
        exemplars = update_exemplars(exemplars, theta_i, new_data)
    except Exp3CILError as exc:
        raise type(exc)(f"phase {i}: {exc}") from exc
    log.info("phase %d: action %d %s accuracy %.4f", i, idx, action.as_dict(), acc)
    result = PhaseResult(
        phase=i, action_index=idx, action=action.as_dict(), accuracy=acc, num_classes=theta_i.num_classes,
        policy=policy.to_dict(), trace=trace, test_reads_before_eval=premature, policy_learned=learned,
    )
    return theta_i, exemplars, policy, result


def pretrain(
    train_data: LabeledDataset,
    test_set: AuditedDataset,
    cfg: OrchestratorConfig,
    seed_seq: np.random.SeedSequence,
) -> tuple[ModelState, ExemplarStore, PhaseResult]:
    """Phase 0: cross-entropy training from scratch, FC classifier, no policy."""
    streams = phase_streams(seed_seq)
    num_classes = max(train_data.classes) + 1
    model = init_model(num_classes, streams["init"], cfg.arch, scale=cfg.scale)
    action = Action(0.0, 0.0, cfg.phase0_lr, 0)
    model = train_for_epochs(
        model, None, action, train_data.X, train_data.y, cfg.phase0_epochs, cfg.batch_size, streams["train"], cfg.tau
    )
    premature = test_set.premature_reads
    with test_set.evaluation():
        acc = evaluate_accuracy(model, test_set.X, test_set.y, 0)
    store = update_exemplars(ExemplarStore(cfg.memory), model, train_data)
    result = PhaseResult(
        phase=0, action_index=None, action=action.as_dict(), accuracy=acc,
        num_classes=num_classes, test_reads_before_eval=premature,
    )
    return model, store, result


@dataclass
class ExperimentResult:
    phases: list[PhaseResult]
    ledger: RewardLedger
    final_model: ModelState
    final_policy: bandit.PolicyState
    test_sets: list[AuditedDataset] = field(repr=False, default_factory=list)

    @property
    def accuracies(self) -> list[float]:
        return [p.accuracy for p in self.phases]

    @property
    def average_accuracy(self) -> float:
        return float(np.mean(self.accuracies))

    @property
    def premature_test_reads(self) -> int:
        return sum(t.premature_reads for t in self.test_sets)

    def summary(self) -> dict:
        return {
            "accuracies": self.accuracies,
            "average_accuracy": self.average_accuracy,
            "ledger": list(self.ledger.rewards),
            "premature_test_reads": self.premature_test_reads,
        }


def run_experiment(
    schedule: PhaseSchedule,
    datasets: tuple[Sequence[LabeledDataset], Sequence[LabeledDataset]],
    cfg: OrchestratorConfig,
    space: ActionSpace,
    seed: int,
    *,
    mode: str = ONLINE,
    checkpoint_dir=None,
) -> ExperimentResult:
    """Phase-0 pre-training followed by :func:`run_phase` for every later phase.

    ``mode="fixed"`` requires a single-action space and skips policy learning;
    ``"online"`` with a single-action space runs policy learning on a delta policy.
    Both share the same training path, so they produce identical models.
    """
    train_sets, test_sets = datasets
    if len(train_sets) != len(schedule.classes_per_phase) or len(test_sets) != len(train_sets):
        raise InvalidParameterError("need one train and one test set per scheduled phase")
    if mode not in (ONLINE, FIXED):
        raise InvalidParameterError(f"unknown mode {mode!r}")
    if mode == FIXED and len(space) != 1:
        raise InvalidParameterError("fixed mode needs a single-action space")

    root = np.random.SeedSequence(seed)
    phase_seeds = root.spawn(len(train_sets))
    # cumulative held-out sets Q_{0:i}, each behind its own access audit
    audited = [AuditedDataset(LabeledDataset.concat(test_sets[: i + 1])) for i in range(len(test_sets))]

    model, store, res0 = pretrain(train_sets[0], audited[0], cfg, phase_seeds[0])
    results = [res0]
    if len(space) == 1:
        policy = bandit.forced_policy(1, 0, cfg.xi)
    else:
        policy = bandit.init_policy(len(space), cfg.xi, cfg.mix)
    ledger = RewardLedger()
    _checkpoint(checkpoint_dir, res0, model, None)
    for i in range(1, len(train_sets)):
        model, store, policy, res = run_phase(
            i, model, store, train_sets[i], audited[i], policy, space, cfg, phase_seeds[i],
            ledger=ledger, learn_policy=(mode == ONLINE),
        )
        ledger = ledger.append(res.accuracy)
        results.append(res)
        _checkpoint(checkpoint_dir, res, model, policy)
    return ExperimentResult(results, ledger, model, policy, audited)


def _checkpoint(root, result: PhaseResult, model: ModelState, policy):
    if root is None:
        return
    d = Path(root) / f"phase_{result.phase}"
    d.mkdir(parents=True, exist_ok=True)
    (d / "model.json").write_text(model.to_json())
    if policy is not None:
        (d / "policy.json").write_text(policy.to_json())
    (d / "result.json").write_text(json.dumps(result.to_dict(), indent=2))
