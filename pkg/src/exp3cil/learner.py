"""Small incremental classifier with hand-written gradients.

The model is a two-layer extractor ``f(x) = W2 act(W1 x + b1) + b2`` followed by a
cosine-normalized head without bias: ``logit_k = s * cos(f(x), head_k)``.

Losses are the cross-entropy, a temperature-rescaled logit distillation term and a
cosine feature distillation term; :func:`overall_loss_and_grad` returns their
weighted batch mean together with exact gradients for every parameter.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import (
    BudgetError,
    DegenerateCosineError,
    DomainError,
    EmptyEvaluationError,
    InsufficientDataError,
    InvalidParameterError,
    LabelError,
    NumericError,
    ShapeError,
)
from .hyperspace import Action

PARAM_NAMES = ("W1", "b1", "W2", "b2", "head")
DEFAULT_ARCH = (16, 32, 8)
DEFAULT_SCALE = 10.0
DEFAULT_TAU = 2.0
_EPS = 1e-12


@dataclass(frozen=True)
class ModelState:
    W1: np.ndarray  # (hidden, input)
    b1: np.ndarray  # (hidden,)
    W2: np.ndarray  # (feature, hidden)
    b2: np.ndarray  # (feature,)
    head: np.ndarray  # (num_classes, feature)
    activation: str = "tanh"
    scale: float = DEFAULT_SCALE

    @property
    def num_classes(self) -> int:
        return self.head.shape[0]

    @property
    def arch(self) -> tuple[int, int, int]:
        return (self.W1.shape[1], self.W1.shape[0], self.W2.shape[0])

    def params(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def with_params(self, params: dict[str, np.ndarray]) -> "ModelState":
        return replace(self, **params)

    def copy(self) -> "ModelState":
        return self.with_params({k: v.copy() for k, v in self.params().items()})

    def equals(self, other: "ModelState") -> bool:
        """Bitwise equality of all parameters and settings."""
        return (
            self.activation == other.activation
            and self.scale == other.scale
            and all(np.array_equal(a, b) for a, b in zip(self.params().values(), other.params().values()))
        )

    def to_dict(self) -> dict:
        return {
            "arch": list(self.arch),
            "num_classes": self.num_classes,
            "activation": self.activation,
            "scale": self.scale,
            "params": {k: v.tolist() for k, v in self.params().items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelState":
        p = {k: np.asarray(d["params"][k], dtype=float) for k in PARAM_NAMES}
        if p["head"].size == 0:
            p["head"] = p["head"].reshape(0, d["arch"][2])
        return cls(**p, activation=d["activation"], scale=float(d["scale"]))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "ModelState":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class LossConfig:
    tau: float = DEFAULT_TAU
    beta: float = 0.0
    gamma: float = 0.0

    def __post_init__(self):
        if not self.tau > 1:
            raise InvalidParameterError(f"temperature must be > 1, got {self.tau}")
        if self.beta < 0 or self.gamma < 0:
            raise InvalidParameterError("KD weights must be nonnegative")


@dataclass(frozen=True)
class ClassMeans:
    classes: tuple[int, ...]
    means: np.ndarray = field(repr=False)  # (len(classes), feature), unit rows


def init_model(
    num_classes: int,
    rng: np.random.Generator,
    arch: tuple[int, int, int] = DEFAULT_ARCH,
    activation: str = "tanh",
    scale: float = DEFAULT_SCALE,
) -> ModelState:
    d_in, d_hid, d_feat = arch
    return ModelState(
        W1=rng.normal(0.0, 1.0 / np.sqrt(d_in), (d_hid, d_in)),
        b1=np.zeros(d_hid),
        W2=rng.normal(0.0, 1.0 / np.sqrt(d_hid), (d_feat, d_hid)),
        b2=np.zeros(d_feat),
        head=rng.normal(0.0, 1.0, (num_classes, d_feat)),
        activation=activation,
        scale=scale,
    )


def grow_head(model: ModelState, num_new: int, rng: np.random.Generator) -> ModelState:
    """Append ``num_new`` randomly initialized head rows; existing rows are copied as-is."""
    rows = rng.normal(0.0, 1.0, (num_new, model.head.shape[1]))
    return replace(model, head=np.vstack([model.head, rows]))


# -- forward passes -----------------------------------------------------------


def _act(model, a):
    if model.activation == "tanh":
        return np.tanh(a)
    if model.activation == "identity":
        return a
    raise InvalidParameterError(f"unknown activation {model.activation!r}")


def _as_batch(model, x):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != model.W1.shape[1]:
        raise ShapeError(f"expected input dim {model.W1.shape[1]}, got shape {x.shape}")
    return X, single


def _hidden_and_features(model, X):
    H = _act(model, X @ model.W1.T + model.b1)
    return H, H @ model.W2.T + model.b2


def _unit_rows(M, what):
    norms = np.linalg.norm(M, axis=1)
    if np.any(norms < _EPS):
        raise DegenerateCosineError(f"zero-norm {what} in cosine computation")
    return M / norms[:, None], norms


def forward_features(model: ModelState, x) -> np.ndarray:
    X, single = _as_batch(model, x)
    F = _hidden_and_features(model, X)[1]
    return F[0] if single else F


def _cosine_logits(model, F):
    Fn, _ = _unit_rows(F, "feature")
    Wn, _ = _unit_rows(model.head, "head row")
    return model.scale * (Fn @ Wn.T)


def forward_logits(model: ModelState, x) -> np.ndarray:
    X, single = _as_batch(model, x)
    Z = _cosine_logits(model, _hidden_and_features(model, X)[1])
    return Z[0] if single else Z


# -- losses -------------------------------------------------------------------


def softmax(z, axis=-1):
    z = np.asarray(z, dtype=float)
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(z, axis=-1):
    z = np.asarray(z, dtype=float)
    m = z.max(axis=axis, keepdims=True)
    return z - m - np.log(np.exp(z - m).sum(axis=axis, keepdims=True))


def rescale_eta(probabilities, tau: float) -> np.ndarray:
    """``v_k ** (1/tau) / sum_j v_j ** (1/tau)`` for a probability vector ``v``."""
    v = np.asarray(probabilities, dtype=float)
    if np.any(v < 0):
        raise DomainError("rescaling is defined for nonnegative inputs (apply softmax first)")
    if not tau > 1:
        raise InvalidParameterError(f"temperature must be > 1, got {tau}")
    r = v ** (1.0 / tau)
    return r / r.sum(axis=-1, keepdims=True)


def logit_kd_loss(cur_logits, old_logits, tau: float = DEFAULT_TAU) -> float:
    """Cross-entropy from the rescaled old prediction to the rescaled current one."""
    cur = np.asarray(cur_logits, dtype=float)
    old = np.asarray(old_logits, dtype=float)
    if cur.shape != old.shape:
        raise ShapeError(f"logit length mismatch: {cur.shape} vs {old.shape}")
    target = rescale_eta(softmax(old), tau)
    # rescale_eta(softmax(z), tau) == softmax(z / tau); the log form avoids log(0)
    return float(-(target * log_softmax(cur / tau)).sum())


def feature_kd_loss(cur_feat, old_feat) -> float:
    a = np.asarray(cur_feat, dtype=float)
    b = np.asarray(old_feat, dtype=float)
    if a.shape != b.shape:
        raise ShapeError(f"feature length mismatch: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na < _EPS or nb < _EPS:
        raise DegenerateCosineError("zero feature vector")
    return float(1.0 - np.clip(a @ b / (na * nb), -1.0, 1.0))


def overall_loss_and_grad(
    X,
    y,
    model: ModelState,
    old_model: Optional[ModelState],
    cfg: LossConfig,
) -> tuple[float, dict[str, np.ndarray]]:
    """Batch mean of ``CE + beta * logit_KD + gamma * feature_KD`` and its exact gradient.

    The old model is frozen; distillation gradients flow only into ``model``.
    Logit distillation covers the old model's classes only.
    """
    X, _ = _as_batch(model, X)
    y = np.asarray(y, dtype=int)
    B = X.shape[0]
    if B == 0:
        raise EmptyEvaluationError("empty batch")
    if y.shape != (B,):
        raise ShapeError("labels must be a vector matching the batch")
    C = model.num_classes
    if np.any(y < 0) or np.any(y >= C):
        raise LabelError(f"labels must lie in [0, {C})")
    if old_model is None and (cfg.beta > 0 or cfg.gamma > 0):
        raise InvalidParameterError("distillation weights need an old model")

    H, F = _hidden_and_features(model, X)
    Fn, fnorm = _unit_rows(F, "feature")
    Wn, wnorm = _unit_rows(model.head, "head row")
    cos = Fn @ Wn.T
    Z = model.scale * cos

    logp = log_softmax(Z)
    loss = -logp[np.arange(B), y].sum()
    dZ = np.exp(logp)
    dZ[np.arange(B), y] -= 1.0
    dF = np.zeros_like(F)

    if old_model is not None and (cfg.beta > 0 or cfg.gamma > 0):
        Fo = _hidden_and_features(old_model, X)[1]
        if cfg.beta > 0:
            K = old_model.num_classes
            Zo = _cosine_logits(old_model, Fo)
            target = softmax(Zo / cfg.tau)
            logq = log_softmax(Z[:, :K] / cfg.tau)
            loss += cfg.beta * -(target * logq).sum()
            dZ[:, :K] += cfg.beta * (np.exp(logq) - target) / cfg.tau
        if cfg.gamma > 0:
            Fon, _ = _unit_rows(Fo, "old feature")
            c = (Fn * Fon).sum(axis=1)
            loss += cfg.gamma * (1.0 - c).sum()
            dF -= cfg.gamma * (Fon - c[:, None] * Fn) / fnorm[:, None]

    # back through s * cos(f, w_k)
    G = model.scale * dZ
    GC = G * cos
    dF += (G @ Wn - GC.sum(axis=1)[:, None] * Fn) / fnorm[:, None]
    dhead = (G.T @ Fn - GC.sum(axis=0)[:, None] * Wn) / wnorm[:, None]

    dW2 = dF.T @ H
    db2 = dF.sum(axis=0)
    dA = dF @ model.W2
    if model.activation == "tanh":
        dA = dA * (1.0 - H**2)
    dW1 = dA.T @ X
    db1 = dA.sum(axis=0)

    grads = {"W1": dW1 / B, "b1": db1 / B, "W2": dW2 / B, "b2": db2 / B, "head": dhead / B}
    return float(loss / B), grads


def sgd_step(model: ModelState, grads: dict[str, np.ndarray], lam: float) -> ModelState:
    new = {}
    for name, p in model.params().items():
        g = np.asarray(grads[name])
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, expected {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name}")
        new[name] = p - lam * g
    return model.with_params(new)


# -- classifiers and evaluation -------------------------------------------------


def compute_class_means(model: ModelState, X, y, classes=None) -> ClassMeans:
    """Per-class mean of extracted features, L2-normalized.

    ``classes`` defaults to the labels present in ``y``; listing a class with no
    samples raises :class:`InsufficientDataError`.
    """
    y = np.asarray(y, dtype=int)
    classes = tuple(sorted(set(y.tolist()))) if classes is None else tuple(sorted(classes))
    if not classes:
        raise InsufficientDataError("no samples to compute class means")
    F = forward_features(model, np.atleast_2d(X))
    means = []
    for c in classes:
        mask = y == c
        if not mask.any():
            raise InsufficientDataError(f"class {c} has no samples")
        means.append(F[mask].mean(axis=0))
    M, _ = _unit_rows(np.array(means), "class mean")
    return ClassMeans(classes, M)


def predict_batch(model: ModelState, X, delta: int, means: Optional[ClassMeans] = None) -> np.ndarray:
    X, _ = _as_batch(model, X)
    if delta == 0:
        return np.argmax(forward_logits(model, X), axis=1)
    if delta != 1:
        raise InvalidParameterError(f"delta must be 0 or 1, got {delta}")
    if means is None:
        raise InsufficientDataError("class means are required for the NCM classifier")
    Fn, _ = _unit_rows(forward_features(model, X), "feature")
    d2 = ((Fn[:, None, :] - means.means[None, :, :]) ** 2).sum(axis=2)
    # classes are sorted ascending, so argmin's first-hit rule breaks ties to the lowest id
    return np.asarray(means.classes)[np.argmin(d2, axis=1)]


def predict(model: ModelState, x, delta: int, means: Optional[ClassMeans] = None) -> int:
    return int(predict_batch(model, np.atleast_2d(x), delta, means)[0])


def evaluate_accuracy(model: ModelState, X, y, delta: int, means: Optional[ClassMeans] = None) -> float:
    y = np.asarray(y, dtype=int)
    if y.size == 0:
        raise EmptyEvaluationError("cannot evaluate on an empty dataset")
    return float(np.mean(predict_batch(model, X, delta, means) == y))


# -- training -----------------------------------------------------------------


def train_for_epochs(
    model: ModelState,
    old_model: Optional[ModelState],
    action: Action,
    X,
    y,
    epochs: int,
    batch_size: int,
    rng: np.random.Generator,
    tau: float = DEFAULT_TAU,
) -> ModelState:
    """Mini-batch SGD on the overall loss with the action's KD weights and learning rate."""
    if epochs < 1:
        raise InvalidParameterError(f"epochs must be >= 1, got {epochs}")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    n = y.size
    if n == 0:
        raise EmptyEvaluationError("cannot train on an empty dataset")
    beta, gamma = (action.beta, action.gamma) if old_model is not None else (0.0, 0.0)
    cfg = LossConfig(tau=tau, beta=beta, gamma=gamma)
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            _, grads = overall_loss_and_grad(X[idx], y[idx], model, old_model, cfg)
            model = sgd_step(model, grads, action.lam)
    return model


def herding_select(model: ModelState, X_class, m: int) -> list[int]:
    """Greedy herding over L2-normalized features of one class.

    Step k picks the unchosen sample that brings the mean of the k chosen
    features closest to the mean of all features. Ties go to the lowest index.
    """
    X_class = np.atleast_2d(np.asarray(X_class, dtype=float))
    n = X_class.shape[0]
    if m < 1 or m > n:
        raise BudgetError(f"cannot select {m} exemplars from {n} samples")
    F, _ = _unit_rows(forward_features(model, X_class), "feature")
    return herding_from_features(F, m)


def herding_from_features(F: np.ndarray, m: int) -> list[int]:
    n = F.shape[0]
    if m < 1 or m > n:
        raise BudgetError(f"cannot select {m} exemplars from {n} samples")
    target = F.mean(axis=0)
    running = np.zeros_like(target)
    available = np.ones(n, dtype=bool)
    chosen = []
    for k in range(1, m + 1):
        candidate_means = (running + F) / k
        dist = np.linalg.norm(candidate_means - target, axis=1)
        dist[~available] = np.inf
        i = int(np.argmin(dist))
        chosen.append(i)
        available[i] = False
        running += F[i]
    return chosen
