"""Natural training, PGD adversarial training, and exact robust training for
linear models via the closed-form inner maximum.

All trainers are mini-batch SGD with momentum and weight decay on streams
derived from the hyperparameter seed:

    child(0) holdout split   child(1) init      child(2) shuffling
    child(3) inner-attack noise                 child(4) holdout-eval noise

Early stopping keeps the parameters from the epoch with the best holdout
metric (natural accuracy, or robust accuracy under a pinned PGD-10 at the
defense budget with step eps_d/4 and random init). Ties prefer the later
epoch, which runs at the lower end of the learning-rate schedule. With a
zero defense budget the adversarial trainer consumes exactly the same draw
sequence as the natural trainer, so the two produce byte-identical models
under a shared seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .attacks import AttackConfig, pgd
from .data import Dataset
from .errors import InputError, TrainingDivergedError
from .mixture import LinearClassifier
from .models import MlpClassifier, init_mlp, per_example_loss, predict, backprop, sigmoid, softplus
from .numerics import RngState


@dataclass(frozen=True)
class TrainHyper:
    """SGD schedule; defaults are the desk-scale recipe used everywhere here."""

    seed: RngState
    epochs: int = 30
    batch_size: int = 64
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 5e-4
    lr_drops: tuple = ((20, 0.1), (26, 0.1))  # lr *= factor entering these 1-based epochs
    holdout_fraction: float = 0.1

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise InputError("epochs must be >= 0 and batch_size >= 1")
        if self.lr <= 0:
            raise InputError("lr must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise InputError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise InputError("weight_decay must be nonnegative")
        if not 0.0 <= self.holdout_fraction < 1.0:
            raise InputError("holdout_fraction must lie in [0, 1)")


@dataclass(frozen=True)
class BudgetSet:
    """The three l_inf budgets: attack eps_a, crafting eps_c, defense eps_d.

    Defaults follow the standing ratios: eps_c = 0.25 * eps_a and
    eps_d = eps_a unless overridden.
    """

    eps_a: float
    eps_c: float = field(default=None)  # type: ignore[assignment]
    eps_d: float = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.eps_c is None:
            object.__setattr__(self, "eps_c", 0.25 * self.eps_a)
        if self.eps_d is None:
            object.__setattr__(self, "eps_d", self.eps_a)
        for name in ("eps_a", "eps_c", "eps_d"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise InputError(f"{name} must be finite and nonnegative")


def at_inner_config(eps_d: float, bounded: bool) -> AttackConfig:
    """The standing inner-maximization attack: PGD-10, step eps_d/4, random init."""
    if eps_d == 0:
        return AttackConfig(eps=0.0, steps=1, step_size=0.0, init="zero", mode="max", clamp=bounded)
    return AttackConfig(
        eps=eps_d, steps=10, step_size=eps_d / 4, init="random", mode="max", clamp=bounded
    )


def _loss_kind_for(arch, ds: Dataset) -> str:
    out = int(arch[-1])
    if out == 1:
        if ds.k != 2:
            raise InputError("single-logit architectures need binary data")
        return "logistic"
    if ds.k != out:
        raise InputError(f"architecture emits {out} logits but data has {ds.k} classes")
    return "softmax"


def _holdout_split(ds: Dataset, hyper: TrainHyper):
    n_hold = int(np.floor(ds.n * hyper.holdout_fraction))
    perm = hyper.seed.child(0).draws().permutation(ds.n)
    hold, train = perm[:n_hold], perm[n_hold:]
    if train.size < 1:
        raise InputError("holdout would consume the whole dataset")
    return train, hold


def _sgd_step(model: MlpClassifier, grads, vel, lr: float, momentum: float, wd: float):
    # Decay applies to weights only. Penalizing biases on inputs that are not
    # mean-centered leaves a common-mode gradient residual that drowns weakly
    # informative features, so biases follow the plain gradient.
    for (W, b), (dW, db), (vW, vb) in zip(
        zip(model.weights, model.biases), grads, vel
    ):
        np.add(dW, wd * W, out=dW)
        vW *= momentum
        vW += dW
        W -= lr * vW
        vb *= momentum
        vb += db
        b -= lr * vb


def _robust_holdout_accuracy(model, X, y, kind, attack_cfg, draws) -> float:
    """Fraction correct at the clean point and still correct after the attack."""
    clean_ok = predict(model, X) == y
    if attack_cfg is None or attack_cfg.eps == 0:
        return float(np.mean(clean_ok))
    xa = pgd(model, X, y, attack_cfg, draws)
    return float(np.mean(clean_ok & (predict(model, xa) == y)))


def _train_sgd(arch, ds: Dataset, hyper: TrainHyper, inner: AttackConfig | None) -> MlpClassifier:
    kind = _loss_kind_for(arch, ds)
    if int(arch[0]) != ds.m:
        raise InputError(f"architecture expects {arch[0]} features, data has {ds.m}")
    train_idx, hold_idx = _holdout_split(ds, hyper)
    Xtr, ytr = ds.features[train_idx], ds.labels[train_idx]
    Xho, yho = ds.features[hold_idx], ds.labels[hold_idx]

    model = init_mlp(arch, hyper.seed.child(1))
    if hyper.epochs == 0:
        return model
    shuffle = hyper.seed.child(2).draws()
    attack_draws = hyper.seed.child(3).draws()
    eval_draws = hyper.seed.child(4).draws()
    eval_cfg = None
    if inner is not None and inner.eps > 0:
        # pinned early-stopping metric: PGD-10 at the defense budget
        eval_cfg = at_inner_config(inner.eps, inner.clamp)

    vel = [
        (np.zeros_like(W), np.zeros_like(b)) for W, b in zip(model.weights, model.biases)
    ]
    lr = hyper.lr
    drops = dict(hyper.lr_drops)
    n = Xtr.shape[0]
    bs = min(hyper.batch_size, n)
    best_acc, best_model = -1.0, None

    for epoch in range(1, hyper.epochs + 1):
        if epoch in drops:
            lr *= drops[epoch]
        order = shuffle.permutation(n)
        for start in range(0, n, bs):
            idx = order[start : start + bs]
            xb, yb = Xtr[idx], ytr[idx]
            if inner is not None and inner.eps > 0:
                xb = pgd(model, xb, yb, inner, attack_draws)
            batch_loss = float(np.mean(per_example_loss(model, xb, yb, kind)))
            if not np.isfinite(batch_loss):
                raise TrainingDivergedError(epoch)
            grads, _ = backprop(model, xb, yb, kind)
            _sgd_step(model, grads, vel, lr, hyper.momentum, hyper.weight_decay)
        if hold_idx.size:
            acc = _robust_holdout_accuracy(model, Xho, yho, kind, eval_cfg, eval_draws)
            if acc >= best_acc:
                best_acc, best_model = acc, model.copy()
    return best_model if best_model is not None else model


def train_natural(arch, ds: Dataset, hyper: TrainHyper) -> MlpClassifier:
    """Plain SGD on clean batches; early stopping on holdout natural accuracy."""
    return _train_sgd(tuple(arch), ds, hyper, inner=None)


def train_pgd_at(
    arch, ds: Dataset, hyper: TrainHyper, eps_d: float, inner: AttackConfig | None = None
) -> MlpClassifier:
    """Adversarial training: every batch is replaced by its PGD maximizer
    before the gradient step. eps_d = 0 degenerates to natural training."""
    if eps_d < 0:
        raise InputError("eps_d must be nonnegative")
    if inner is None:
        inner = at_inner_config(eps_d, ds.bounded)
    if inner.mode != "max":
        raise InputError("the inner attack must maximize the loss")
    if inner.eps != eps_d:
        raise InputError("inner attack budget must equal eps_d")
    return _train_sgd(tuple(arch), ds, hyper, inner=inner if eps_d > 0 else None)


def _robust_margin(X, y, w, b, eps_d):
    return y * (X @ w + b) - eps_d * np.abs(w).sum()


def train_linear_robust_exact(ds: Dataset, eps_d: float, hyper: TrainHyper) -> LinearClassifier:
    """SGD on the exactly robustified logistic loss L(y(w.x+b) - eps_d ||w||_1).

    The objective is convex (logistic loss of a concave margin), so zero init
    plus the standard schedule converges without random restarts. With
    eps_d = 0 this is ordinary logistic regression.
    """
    if ds.k != 2:
        raise InputError("exact robust training is a binary-label procedure")
    if eps_d < 0:
        raise InputError("eps_d must be nonnegative")
    train_idx, hold_idx = _holdout_split(ds, hyper)
    Xtr = ds.features[train_idx]
    ytr = ds.labels[train_idx].astype(np.float64)
    Xho = ds.features[hold_idx]
    yho = ds.labels[hold_idx].astype(np.float64)

    m = ds.m
    w = np.zeros(m)
    b = 0.0
    vw = np.zeros(m)
    vb = 0.0
    shuffle = hyper.seed.child(2).draws()
    lr = hyper.lr
    drops = dict(hyper.lr_drops)
    n = Xtr.shape[0]
    bs = min(hyper.batch_size, n)
    best_acc, best_params = -1.0, None

    for epoch in range(1, hyper.epochs + 1):
        if epoch in drops:
            lr *= drops[epoch]
        order = shuffle.permutation(n)
        for start in range(0, n, bs):
            idx = order[start : start + bs]
            xb, yb = Xtr[idx], ytr[idx]
            margin = _robust_margin(xb, yb, w, b, eps_d)
            batch_loss = float(np.mean(softplus(-margin)))
            if not np.isfinite(batch_loss):
                raise TrainingDivergedError(epoch)
            s = sigmoid(-margin)  # dL/dmargin = -s
            nb = len(idx)
            # d margin / dw = y x - eps_d sign(w); subgradient 0 at w = 0
            gw = -(s * yb) @ xb / nb + eps_d * np.mean(s) * np.sign(w)
            gb = float(np.mean(-s * yb))  # intercept is not decayed
            gw += hyper.weight_decay * w
            vw = hyper.momentum * vw + gw
            vb = hyper.momentum * vb + gb
            w = w - lr * vw
            b = b - lr * vb
        if hold_idx.size:
            acc = float(np.mean(_robust_margin(Xho, yho, w, b, eps_d) > 0))
            if acc >= best_acc:
                best_acc, best_params = acc, (w.copy(), b)
    if best_params is not None:
        w, b = best_params
    return LinearClassifier(w, b)
