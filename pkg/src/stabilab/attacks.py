"""l_inf perturbation engines: FGSM, PGD in maximize and minimize modes, and
the closed-form worst case for linear models.

PGD keeps the best iterate seen (including its start point) rather than the
last, which makes the monotonicity guarantees hold even with overshooting
step sizes. For a linear score the signed gradient never changes direction,
so PGD with enough steps saturates every coordinate at the box corner and
reproduces the closed form exactly.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .mixture import LinearClassifier
from .models import (
    MlpClassifier,
    as_mlp,
    backprop,
    per_example_loss,
    softplus,
)
from .numerics import Draws, RngState

INIT_KINDS = ("zero", "random")
MODE_KINDS = ("max", "min")


@dataclass(frozen=True)
class AttackConfig:
    """l_inf budget eps, iteration count, step size, init and direction."""

    eps: float
    steps: int = 10
    step_size: float = 0.0
    init: str = "zero"
    mode: str = "max"
    clamp: bool = False

    def __post_init__(self):
        if not np.isfinite(self.eps) or self.eps < 0:
            raise InputError("eps must be finite and nonnegative")
        if self.steps < 1:
            raise InputError("steps must be at least 1")
        if self.eps > 0 and self.step_size <= 0:
            raise InputError("step_size must be positive when eps > 0")
        if self.init not in INIT_KINDS:
            raise InputError(f"init must be one of {INIT_KINDS}")
        if self.mode not in MODE_KINDS:
            raise InputError(f"mode must be one of {MODE_KINDS}")
        if self.eps > 0 and self.step_size > 2 * self.eps:
            warnings.warn(
                f"step_size {self.step_size} exceeds twice the budget {self.eps}; "
                "every step will bounce between box corners",
                stacklevel=2,
            )


def _normalize_model(model) -> MlpClassifier:
    if isinstance(model, LinearClassifier):
        return as_mlp(model)
    if isinstance(model, MlpClassifier):
        return model
    raise InputError(f"cannot attack a {type(model).__name__}")


def infer_loss_kind(model: MlpClassifier) -> str:
    return "logistic" if model.out_dim == 1 else "softmax"


def fgsm(model, x, y, eps: float, mode: str = "max", clamp: bool = False) -> np.ndarray:
    """Single full-budget signed-gradient step; no iterate tracking."""
    if mode not in MODE_KINDS:
        raise InputError(f"mode must be one of {MODE_KINDS}")
    if not np.isfinite(eps) or eps < 0:
        raise InputError("eps must be finite and nonnegative")
    net = _normalize_model(model)
    X = np.asarray(x, dtype=np.float64)
    single = X.ndim == 1
    X2 = X.reshape(1, -1) if single else X
    if eps == 0:
        out = X2.copy()
    else:
        kind = infer_loss_kind(net)
        _, g = backprop(net, X2, np.asarray(y).reshape(-1), kind)
        direction = 1.0 if mode == "max" else -1.0
        out = X2 + direction * eps * np.sign(g)
        if clamp:
            np.clip(out, 0.0, 1.0, out=out)
    return out[0] if single else out


def pgd(model, x, y, cfg: AttackConfig, rng: RngState | Draws | None = None) -> np.ndarray:
    """Projected signed-gradient iteration returning the best iterate.

    Random init draws uniform in [-eps, eps]^m and needs an explicit rng,
    either an RngState (fresh stream) or a live Draws source that a caller
    loop consumes across calls; zero init is fully deterministic. The
    returned points satisfy ||x' - x||_inf <= eps exactly, and lie in [0, 1]
    as well when clamping.
    """
    net = _normalize_model(model)
    X = np.asarray(x, dtype=np.float64)
    single = X.ndim == 1
    X2 = np.ascontiguousarray(X.reshape(1, -1) if single else X)
    yv = np.asarray(y).reshape(-1)
    if cfg.eps == 0:
        out = X2.copy()
        return out[0] if single else out
    kind = infer_loss_kind(net)
    n, m = X2.shape

    if cfg.init == "random":
        if rng is None:
            raise InputError("random init needs an rng")
        draws = rng.draws() if isinstance(rng, RngState) else rng
        noise = (2.0 * draws.uniform((n, m)) - 1.0) * cfg.eps
        cur = X2 + noise
    else:
        cur = X2.copy()
    if cfg.clamp:
        np.clip(cur, 0.0, 1.0, out=cur)

    sign = 1.0 if cfg.mode == "max" else -1.0
    best = cur.copy()
    best_loss = per_example_loss(net, cur, yv, kind)
    for _ in range(cfg.steps):
        _, g = backprop(net, cur, yv, kind)
        cur = cur + sign * cfg.step_size * np.sign(g)
        delta = np.clip(cur - X2, -cfg.eps, cfg.eps)
        cur = X2 + delta
        if cfg.clamp:
            np.clip(cur, 0.0, 1.0, out=cur)
        cur_loss = per_example_loss(net, cur, yv, kind)
        better = cur_loss > best_loss if cfg.mode == "max" else cur_loss < best_loss
        if np.any(better):
            best[better] = cur[better]
            best_loss[better] = cur_loss[better]
    # x + clip(d) can land one ulp outside the ball when the addition rounds
    # up; nudge those entries back so the advertised budget holds as measured
    over = np.abs(best - X2) > cfg.eps
    while np.any(over):
        best[over] = np.nextafter(best[over], X2[over])
        over = np.abs(best - X2) > cfg.eps
    return best[0] if single else best


def linear_worst_case(f: LinearClassifier, x, y, eps: float, mode: str = "max") -> np.ndarray:
    """Exact l_inf optimizer of the logistic loss for a linear score:
    x - eps*y*sign(w) maximizes, x + eps*y*sign(w) minimizes."""
    if mode not in MODE_KINDS:
        raise InputError(f"mode must be one of {MODE_KINDS}")
    if not np.isfinite(eps) or eps < 0:
        raise InputError("eps must be finite and nonnegative")
    X = np.asarray(x, dtype=np.float64)
    single = X.ndim == 1
    X2 = X.reshape(1, -1) if single else X
    yv = np.asarray(y, dtype=np.float64).reshape(-1, 1)
    direction = -1.0 if mode == "max" else 1.0
    out = X2 + direction * eps * yv * np.sign(f.w)[None, :]
    return out[0] if single else out


def linear_worst_case_loss(f: LinearClassifier, x, y, eps: float) -> np.ndarray:
    """Per-example logistic loss at the exact inner maximum:
    L(y (w.x + b) - eps ||w||_1)."""
    if eps < 0:
        raise InputError("eps must be nonnegative")
    X = np.asarray(x, dtype=np.float64)
    X2 = X.reshape(1, -1) if X.ndim == 1 else X
    yv = np.asarray(y, dtype=np.float64).reshape(-1)
    margin = yv * (X2 @ f.w + f.b) - eps * np.abs(f.w).sum()
    return softplus(-margin)
