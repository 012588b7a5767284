"""Class-incremental data streams, exemplar memory and local validation splits."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import BalanceError, BudgetError, InvalidParameterError, ParseError, ScheduleError, ShapeError
from .learner import ModelState, herding_select

TFH = "tfh"
TFS = "tfs"


def _as_rng(seed_or_rng) -> np.random.Generator:
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return np.random.default_rng(seed_or_rng)


@dataclass(frozen=True)
class LabeledDataset:
    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y, dtype=int)
        if X.ndim == 1 and X.size == 0:
            X = X.reshape(0, 0)
        if X.ndim != 2 or y.shape != (X.shape[0],):
            raise ShapeError(f"inconsistent dataset shapes {X.shape} and {y.shape}")
        if np.any(y < 0):
            raise ShapeError("class ids must be nonnegative")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    def __len__(self):
        return self.y.size

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    @property
    def classes(self) -> tuple[int, ...]:
        return tuple(sorted(set(self.y.tolist())))

    def subset(self, idx) -> "LabeledDataset":
        idx = np.asarray(idx, dtype=int)
        return LabeledDataset(self.X[idx], self.y[idx])

    def of_class(self, c: int) -> "LabeledDataset":
        return self.subset(np.flatnonzero(self.y == c))

    @staticmethod
    def concat(parts) -> "LabeledDataset":
        parts = [p for p in parts if len(p)]
        if not parts:
            return LabeledDataset(np.zeros((0, 0)), np.zeros(0, dtype=int))
        return LabeledDataset(np.vstack([p.X for p in parts]), np.concatenate([p.y for p in parts]))


@dataclass(frozen=True)
class PhaseSchedule:
    """Which classes arrive in which phase.

    Class ids are relabeled to arrival order (see :meth:`label_map`), so the head
    row of a class is its position in the stream.
    """

    total_classes: int
    num_phases: int
    mode: str
    classes_per_phase: tuple[tuple[int, ...], ...]

    @property
    def order(self) -> tuple[int, ...]:
        return tuple(c for phase in self.classes_per_phase for c in phase)

    def label_map(self) -> dict[int, int]:
        return {c: rank for rank, c in enumerate(self.order)}

    def phase_sizes(self) -> tuple[int, ...]:
        return tuple(len(p) for p in self.classes_per_phase)

    def provenance(self) -> dict:
        return {
            "total_classes": self.total_classes,
            "num_phases": self.num_phases,
            "mode": self.mode,
            "phase_sizes": list(self.phase_sizes()),
            "class_order": list(self.order),
            # TFH trains N+1 phases (half first); TFS trains N equal phases 0..N-1
            "phase_convention": "tfh: phase 0 = half, then N phases; tfs: N equal phases",
        }


def make_schedule(total_classes: int, num_phases: int, mode: str, order_seed=None) -> PhaseSchedule:
    mode = mode.lower()
    if total_classes < 1 or num_phases < 1:
        raise ScheduleError("total_classes and num_phases must be positive")
    if mode == TFH:
        first = math.ceil(total_classes / 2)
        rest = total_classes - first
        if rest % num_phases:
            raise ScheduleError(f"{rest} remaining classes do not split evenly over {num_phases} phases")
        sizes = [first] + [rest // num_phases] * num_phases
    elif mode == TFS:
        if total_classes % num_phases:
            raise ScheduleError(f"{total_classes} classes do not split evenly over {num_phases} phases")
        sizes = [total_classes // num_phases] * num_phases
    else:
        raise ScheduleError(f"unknown schedule mode {mode!r}")
    if min(sizes) < 1:
        raise ScheduleError(f"empty phase in schedule {sizes}")
    order = np.arange(total_classes)
    if order_seed is not None:
        order = np.random.default_rng(order_seed).permutation(total_classes)
    phases, start = [], 0
    for s in sizes:
        phases.append(tuple(int(c) for c in order[start : start + s]))
        start += s
    return PhaseSchedule(total_classes, num_phases, mode, tuple(phases))


def synth_generate(
    schedule: PhaseSchedule,
    per_class_train: int,
    per_class_test: int,
    dim: int,
    separation: float,
    seed: int,
) -> tuple[list[LabeledDataset], list[LabeledDataset]]:
    """Gaussian class clusters, returned as per-phase train and test sets.

    Each class has unit-variance isotropic noise around a mean placed uniformly on
    the sphere of radius ``separation``. A class's data depend only on
    ``(seed, class id)``, so TFH and TFS schedules over the same classes see the
    same distributions.
    """
    if per_class_train < 1 or per_class_test < 1 or dim < 1:
        raise InvalidParameterError("sample counts and dim must be >= 1")
    if separation < 0:
        raise InvalidParameterError("separation must be nonnegative")
    relabel = schedule.label_map()
    train_sets, test_sets = [], []
    for phase in schedule.classes_per_phase:
        tr, te = [], []
        for c in phase:
            rng = np.random.default_rng([seed, c])
            direction = rng.normal(size=dim)
            mean = separation * direction / np.linalg.norm(direction)
            label = relabel[c]
            tr.append(LabeledDataset(mean + rng.normal(size=(per_class_train, dim)), [label] * per_class_train))
            te.append(LabeledDataset(mean + rng.normal(size=(per_class_test, dim)), [label] * per_class_test))
        train_sets.append(LabeledDataset.concat(tr))
        test_sets.append(LabeledDataset.concat(te))
    return train_sets, test_sets


def load_csv(path, dim: int) -> LabeledDataset:
    """Read ``label,v1,...,vdim`` rows (no header). Row numbers in errors are 1-based."""
    X, y = [], []
    with open(Path(path), newline="", encoding="utf-8") as fh:
        for rownum, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            if len(row) != dim + 1:
                raise ShapeError(f"row {rownum}: expected {dim + 1} fields, got {len(row)}")
            try:
                label = int(row[0])
                values = [float(v) for v in row[1:]]
            except ValueError as exc:
                raise ParseError(f"row {rownum}: {exc}", row=rownum) from None
            if label < 0:
                raise ParseError(f"row {rownum}: negative label {label}", row=rownum)
            y.append(label)
            X.append(values)
    return LabeledDataset(np.asarray(X, dtype=float).reshape(len(y), dim), np.asarray(y, dtype=int))


def split_by_schedule(data: LabeledDataset, schedule: PhaseSchedule) -> list[LabeledDataset]:
    """Cut a flat dataset into per-phase sets, relabeling classes to arrival order."""
    relabel = schedule.label_map()
    out = []
    for phase in schedule.classes_per_phase:
        mask = np.isin(data.y, phase)
        part = data.subset(np.flatnonzero(mask))
        out.append(LabeledDataset(part.X, [relabel[int(c)] for c in part.y]))
    return out


def split_local(train: LabeledDataset, per_class_b: int, seed) -> tuple[LabeledDataset, LabeledDataset]:
    """Class-balanced validation subset of ``per_class_b`` samples per class; the rest is local train."""
    rng = _as_rng(seed)
    val_idx = []
    for c in train.classes:
        idx = np.flatnonzero(train.y == c)
        if idx.size <= per_class_b:
            raise BalanceError(
                f"class {c} has {idx.size} samples, need more than {per_class_b}", label=c
            )
        val_idx.append(np.sort(rng.choice(idx, size=per_class_b, replace=False)))
    val_idx = np.concatenate(val_idx) if val_idx else np.zeros(0, dtype=int)
    mask = np.ones(len(train), dtype=bool)
    mask[val_idx] = False
    return train.subset(np.flatnonzero(mask)), train.subset(val_idx)


@dataclass(frozen=True)
class ExemplarStore:
    budget: int
    per_class: Mapping[int, np.ndarray] = field(default_factory=dict)

    def __len__(self):
        return sum(len(v) for v in self.per_class.values())

    @property
    def classes(self) -> tuple[int, ...]:
        return tuple(sorted(self.per_class))

    def as_dataset(self) -> LabeledDataset:
        return LabeledDataset.concat(
            LabeledDataset(self.per_class[c], [c] * len(self.per_class[c])) for c in self.classes
        )


def update_exemplars(store: ExemplarStore, model: ModelState, new_data: LabeledDataset) -> ExemplarStore:
    """Herd ``store.budget`` exemplars for every class in ``new_data`` not yet stored."""
    per_class = dict(store.per_class)
    for c in new_data.classes:
        if c in per_class:
            continue
        Xc = new_data.of_class(c).X
        if len(Xc) < store.budget:
            raise BudgetError(f"class {c} has {len(Xc)} samples, budget is {store.budget}")
        chosen = herding_select(model, Xc, store.budget)
        kept = Xc[chosen].copy()
        kept.setflags(write=False)
        per_class[c] = kept
    return ExemplarStore(store.budget, per_class)
