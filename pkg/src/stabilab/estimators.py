"""Estimator facade over the functional core.

The library itself is plain functions over Dataset/RngState; these wrappers
speak the fit/predict/get_params idiom for array-in, array-out callers and
notebooks. They hold no logic of their own beyond marshalling.

Binary labels may arrive as {-1, +1} or {0, 1}; predictions come back in
whatever convention fit() saw. Feature matrices are assumed bounded in
[0, 1] only when they actually are, unless `assume_bounded` pins it.
"""

from __future__ import annotations

import inspect

import numpy as np

from .data import Dataset
from .errors import InputError
from .evaluation import default_attack_suite, evaluate
from .models import as_mlp, forward, predict
from .numerics import RngState
from .poison import CraftConfig, craft, train_crafting_model
from .training import TrainHyper, train_linear_robust_exact, train_pgd_at
from .validation import as_matrix


class _ParamsMixin:
    """Just enough of the estimator protocol: constructor args are the
    parameters, nothing is nested."""

    @classmethod
    def _param_names(cls):
        sig = inspect.signature(cls.__init__)
        return [p for p in sig.parameters if p != "self"]

    def get_params(self, deep: bool = True) -> dict:
        return {name: getattr(self, name) for name in self._param_names()}

    def set_params(self, **params):
        valid = set(self._param_names())
        for key, value in params.items():
            if key not in valid:
                raise InputError(f"unknown parameter {key!r} for {type(self).__name__}")
            setattr(self, key, value)
        return self

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in self.get_params().items())
        return f"{type(self).__name__}({args})"


def _encode_labels(y):
    y = np.asarray(y)
    classes = np.unique(y)
    if classes.shape[0] != 2:
        raise InputError(f"need exactly two classes, got {classes.shape[0]}")
    encoded = np.where(y == classes[0], -1, 1).astype(np.int64)
    return encoded, classes


def _as_dataset(X, y, assume_bounded):
    X = as_matrix(X)
    encoded, classes = _encode_labels(y)
    if assume_bounded is None:
        bounded = bool(X.min() >= 0.0 and X.max() <= 1.0)
    else:
        bounded = bool(assume_bounded)
    return Dataset(X, encoded, 2, bounded, provenance="arrays"), classes


class RobustLogisticRegression(_ParamsMixin):
    """Linear model minimizing the exact worst-case logistic loss at l_inf
    radius eps_d. eps_d=0 reduces to ordinary logistic regression."""

    def __init__(self, eps_d: float = 0.0, epochs: int = 30, batch_size: int = 64,
                 lr: float = 0.05, weight_decay: float = 5e-4, seed: int = 0,
                 assume_bounded: bool | None = None):
        self.eps_d = eps_d
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.weight_decay = weight_decay
        self.seed = seed
        self.assume_bounded = assume_bounded

    def fit(self, X, y):
        ds, self.classes_ = _as_dataset(X, y, self.assume_bounded)
        hyper = TrainHyper(
            seed=RngState(self.seed, 0), epochs=self.epochs,
            batch_size=self.batch_size, lr=self.lr, weight_decay=self.weight_decay,
        )
        self.linear_ = train_linear_robust_exact(ds, self.eps_d, hyper)
        self.coef_ = self.linear_.w.copy()
        self.intercept_ = self.linear_.b
        self.n_features_in_ = ds.m
        return self

    def decision_function(self, X):
        return as_matrix(X) @ self.coef_ + self.intercept_

    def predict(self, X):
        side = (self.decision_function(X) >= 0).astype(np.int64)
        return self.classes_[side]

    def score(self, X, y):
        return float(np.mean(self.predict(X) == np.asarray(y)))


class AdversarialMlpClassifier(_ParamsMixin):
    """Small MLP trained with PGD adversarial training at budget eps_d."""

    def __init__(self, hidden=(32, 32), eps_d: float = 0.0, epochs: int = 30,
                 batch_size: int = 64, lr: float = 0.05, momentum: float = 0.9,
                 weight_decay: float = 5e-4, seed: int = 0,
                 assume_bounded: bool | None = None):
        self.hidden = hidden
        self.eps_d = eps_d
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.seed = seed
        self.assume_bounded = assume_bounded

    def fit(self, X, y):
        ds, self.classes_ = _as_dataset(X, y, self.assume_bounded)
        hyper = TrainHyper(
            seed=RngState(self.seed, 0), epochs=self.epochs,
            batch_size=self.batch_size, lr=self.lr, momentum=self.momentum,
            weight_decay=self.weight_decay,
        )
        arch = [ds.m, *self.hidden, 1]
        self.model_ = train_pgd_at(arch, ds, hyper, self.eps_d)
        self.n_features_in_ = ds.m
        return self

    def decision_function(self, X):
        return forward(self.model_, as_matrix(X)).ravel()

    def predict(self, X):
        side = ((predict(self.model_, as_matrix(X)) + 1) // 2).astype(np.int64)
        return self.classes_[side]

    def score(self, X, y):
        return float(np.mean(self.predict(X) == np.asarray(y)))

    def robust_score(self, X, y, eps: float, seed: int = 0) -> float:
        """Accuracy under the PGD-20 attack at radius eps."""
        ds, classes = _as_dataset(X, y, self.assume_bounded)
        if not np.array_equal(classes, self.classes_):
            raise InputError("labels do not match the classes seen during fit")
        report = evaluate(
            self.model_, ds, default_attack_suite(eps, ds.bounded),
            RngState(seed, 1),
        )
        return report.robust_acc["pgd20"]


class _BasePoisoner(_ParamsMixin):
    """Clean-label training-set perturbation within an l_inf ball of eps_a.

    fit() builds the crafting model (a slightly robust classifier trained at
    the reduced budget crafting_frac * eps_a); poison() perturbs a training
    set against it. Labels are never touched.
    """

    kind = ""

    def __init__(self, eps_a: float, crafting_frac: float = 0.25,
                 crafting_hidden=(), crafting_epochs: int = 10, seed: int = 0,
                 assume_bounded: bool | None = None):
        self.eps_a = eps_a
        self.crafting_frac = crafting_frac
        self.crafting_hidden = crafting_hidden
        self.crafting_epochs = crafting_epochs
        self.seed = seed
        self.assume_bounded = assume_bounded

    def _config(self) -> CraftConfig:
        return CraftConfig(
            eps_a=self.eps_a, kind=self.kind,
            crafting_eps_c=self.crafting_frac * self.eps_a,
            crafting_epochs=self.crafting_epochs,
        )

    def fit(self, X, y):
        ds, self.classes_ = _as_dataset(X, y, self.assume_bounded)
        cfg = self._config()
        hyper = TrainHyper(seed=RngState(self.seed, 0), epochs=self.crafting_epochs)
        if self.crafting_hidden:
            arch = [ds.m, *self.crafting_hidden, 1]
            self.crafting_model_ = train_crafting_model(arch, ds, cfg, hyper)
        else:
            # linear crafting models stay coherent on weakly informative
            # features where a short MLP run leaves them at init noise
            self.crafting_model_ = as_mlp(
                train_linear_robust_exact(ds, cfg.crafting_eps_c, hyper)
            )
        return self

    def poison(self, X, y) -> np.ndarray:
        if not hasattr(self, "crafting_model_"):
            raise InputError("fit the poisoner before calling poison")
        ds, _ = _as_dataset(X, y, self.assume_bounded)
        return craft(ds, self.crafting_model_, self._config()).features

    def fit_poison(self, X, y) -> np.ndarray:
        return self.fit(X, y).poison(X, y)


class HypocriticalPoisoner(_BasePoisoner):
    """Error-minimizing perturbations: poisoned data looks easier to learn
    but rewards exactly the features a test-time adversary can flip."""

    kind = "hyp"


class AdversarialPoisoner(_BasePoisoner):
    """Error-maximizing perturbations against the crafting model."""

    kind = "adv"
