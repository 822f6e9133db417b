"""Gaussian-mixture theory engine: the synthetic distribution, analytic
adversarial risk of linear classifiers, and the optimal-robust-classifier
search.

The distribution
----------------
A label y is uniform on {-1, +1}. Features are independent Gaussians with
per-feature std sigma around a class mean y * mu. For the clean
distribution,

    mu = (1, eta, ..., eta)          (one strong feature, d weak ones),

with 0 < eta < 1. Training-time shifts move every feature mean by a budget
eps along the label direction:

    adversarial shift:   mu = (1 - eps, eta - eps, ..., eta - eps)
    hypocritical shift:  mu = (1 + eps, eta + eps, ..., eta + eps)

Analytic adversarial risk
-------------------------
For a linear classifier f(x) = w.x + b under worst-case l_inf perturbations
of radius eps_d, the misclassification probability decomposes per class into
Gaussian tails and collapses to

    risk = 1/2 Phi((eps_d ||w||_1 - w.mu - b) / (sigma ||w||_2))
         + 1/2 Phi((eps_d ||w||_1 - w.mu + b) / (sigma ||w||_2)),

because the worst perturbation against a linear score is the closed form
delta* = -eps_d * y * sign(w). With eps_d = 0 this is the natural risk.

The optimal-classifier search minimizes this risk over the symmetric family
w = (1, r, ..., r), b = 0 (the weak coordinates are exchangeable, so an
optimum exists in this family). Stationarity of the risk argument gives the
closed-form optimum r* = (mu_weak - eps_d) / (mu_strong - eps_d) clipped at
zero, which the numeric search must reproduce; the search exists so the
library does not have to trust that calculus.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .errors import InputError
from .numerics import RngState, check_probability, std_normal_cdf

# Rows per chunk when sampling or running Monte Carlo; bounds memory and is
# part of the pinned draw order (labels chunk first, then its feature block).
_CHUNK_ROWS = 8192

_SHIFT_KINDS = ("none", "adv", "hyp")


@dataclass(frozen=True)
class Shift:
    """Training-time mean shift: kind 'none', 'adv' or 'hyp' with budget eps."""

    kind: str = "none"
    eps: float = 0.0

    def __post_init__(self):
        if self.kind not in _SHIFT_KINDS:
            raise InputError(f"shift kind must be one of {_SHIFT_KINDS}")
        if not np.isfinite(self.eps) or self.eps < 0:
            raise InputError("shift eps must be finite and nonnegative")
        if self.kind == "none" and self.eps != 0.0:
            raise InputError("no-shift mode cannot carry a budget")

    @staticmethod
    def none() -> "Shift":
        return Shift("none", 0.0)

    @staticmethod
    def adversarial(eps: float) -> "Shift":
        return Shift("adv", float(eps))

    @staticmethod
    def hypocritical(eps: float) -> "Shift":
        return Shift("hyp", float(eps))


@dataclass(frozen=True)
class GaussMixSpec:
    """Mixture parameters: weak-feature magnitude eta, noise sigma, weak count d."""

    eta: float
    sigma: float
    d: int
    shift: Shift = field(default_factory=Shift.none)

    def __post_init__(self):
        if not 0 < self.eta < 1:
            raise InputError("eta must lie in (0, 1)")
        if self.sigma <= 0:
            raise InputError("sigma must be positive")
        if self.d < 1:
            raise InputError("d must be at least 1")

    @property
    def dim(self) -> int:
        return self.d + 1


def check_adversarial_moderation(spec: GaussMixSpec):
    """The zero-weak-weight result for adversarial shifts assumes a moderate
    budget eta/2 <= eps < 1/2; enforce that before using the shift in a
    structural check."""
    if spec.shift.kind != "adv":
        return
    eps = spec.shift.eps
    if not (spec.eta / 2 <= eps < 0.5):
        raise InputError(
            f"adversarial shift budget {eps} outside the moderate range "
            f"[{spec.eta / 2}, 0.5)"
        )


@dataclass(frozen=True)
class LinearClassifier:
    """Linear score w.x + b; predicts the sign for binary labels."""

    w: np.ndarray
    b: float = 0.0

    def __post_init__(self):
        w = np.ascontiguousarray(self.w, dtype=np.float64)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "b", float(self.b))
        if w.ndim != 1 or w.size < 1:
            raise InputError("w must be a nonempty vector")
        if not (np.all(np.isfinite(w)) and np.isfinite(self.b)):
            raise InputError("classifier parameters must be finite")

    def decision_function(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        return X @ self.w + self.b

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.where(self.decision_function(X) >= 0, 1, -1).astype(np.int64)


def natural_classifier(spec: GaussMixSpec) -> LinearClassifier:
    """Weights proportional to the clean class mean: (1, eta, ..., eta)."""
    w = np.concatenate([[1.0], np.full(spec.d, spec.eta)])
    return LinearClassifier(w, 0.0)


def robust_classifier(spec: GaussMixSpec) -> LinearClassifier:
    """Weight on the strong feature only: (1, 0, ..., 0)."""
    w = np.concatenate([[1.0], np.zeros(spec.d)])
    return LinearClassifier(w, 0.0)


def weight_ratio(f: LinearClassifier) -> float:
    """Mean weak weight over the strong weight, the quantity the structural
    results are stated in."""
    if f.w.size < 2 or f.w[0] == 0:
        raise InputError("weight ratio needs a nonzero strong weight and d >= 1")
    return float(np.mean(f.w[1:]) / f.w[0])


def per_class_mean(spec: GaussMixSpec) -> np.ndarray:
    """Mean of class +1; class -1 mirrors it through the origin."""
    mu = np.concatenate([[1.0], np.full(spec.d, spec.eta)])
    if spec.shift.kind == "adv":
        mu -= spec.shift.eps
    elif spec.shift.kind == "hyp":
        mu += spec.shift.eps
    return mu


def _label_chunk(draws, m: int) -> np.ndarray:
    u = draws.uniform(m)
    return np.where(u < 0.5, -1.0, 1.0)


def sample(spec: GaussMixSpec, n: int, rng: RngState) -> Dataset:
    """n labeled draws; unbounded features, so the Dataset bounded flag is off."""
    if n < 1:
        raise InputError("n must be at least 1")
    mu = per_class_mean(spec)
    draws = rng.draws()
    features = np.empty((n, spec.dim), dtype=np.float64)
    labels = np.empty(n, dtype=np.int64)
    done = 0
    while done < n:
        m = min(_CHUNK_ROWS, n - done)
        y = _label_chunk(draws, m)
        z = draws.normal((m, spec.dim))
        features[done : done + m] = spec.sigma * z + y[:, None] * mu[None, :]
        labels[done : done + m] = y
        done += m
    tag = f"mixture:{spec.shift.kind}"
    if spec.shift.kind != "none":
        tag += f":eps={spec.shift.eps:g}"
    tag += f":eta={spec.eta:g},sigma={spec.sigma:g},d={spec.d},n={n}"
    return Dataset(features, labels, k=2, bounded=False, provenance=tag)


def analytic_adv_risk_linear(f: LinearClassifier, spec: GaussMixSpec, eps_d: float) -> float:
    """Exact worst-case risk of a linear classifier at l_inf radius eps_d."""
    if eps_d < 0:
        raise InputError("eps_d must be nonnegative")
    w, b = f.w, f.b
    if w.size != spec.dim:
        raise InputError(f"classifier dimension {w.size} does not match spec {spec.dim}")
    l2 = float(np.linalg.norm(w))
    if l2 == 0.0:
        raise InputError("zero weight vector has no decision rule")
    l1 = float(np.abs(w).sum())
    wmu = float(w @ per_class_mean(spec))
    scale = spec.sigma * l2
    risk = 0.5 * std_normal_cdf((eps_d * l1 - wmu - b) / scale) + 0.5 * std_normal_cdf(
        (eps_d * l1 - wmu + b) / scale
    )
    return check_probability(risk, "analytic risk")


def natural_adv_accuracy_bound(eta: float, sigma: float, d: int) -> float:
    """Upper bound on the adversarial accuracy of the natural classifier when
    the attack budget equals twice the weak-feature magnitude."""
    spec = GaussMixSpec(eta, sigma, d)  # validates parameter ranges
    num = 1.0 - d * eta * eta
    den = sigma * np.sqrt(1.0 + d * eta * eta)
    return check_probability(std_normal_cdf(num / den), "accuracy bound")


def robust_adv_accuracy(eta: float, sigma: float) -> float:
    """Exact adversarial accuracy of the strong-feature-only classifier at
    attack budget 2*eta."""
    if not 0 < eta < 1:
        raise InputError("eta must lie in (0, 1)")
    if sigma <= 0:
        raise InputError("sigma must be positive")
    return check_probability(std_normal_cdf((1.0 - 2.0 * eta) / sigma), "accuracy")


@dataclass(frozen=True)
class SearchConfig:
    """Grid-then-golden-section search over the weak/strong weight ratio."""

    grid_points: int = 400
    tol: float = 1e-6
    r_max: float | None = None  # defaults to 2*eta, where all known optima live

    def __post_init__(self):
        if self.grid_points < 3:
            raise InputError("grid needs at least 3 points")
        if self.tol <= 0:
            raise InputError("tolerance must be positive")


def _ratio_classifier(r: float, d: int) -> LinearClassifier:
    return LinearClassifier(np.concatenate([[1.0], np.full(d, r)]), 0.0)


def optimal_linear_robust(
    spec: GaussMixSpec, eps_d: float, search: SearchConfig = SearchConfig()
) -> LinearClassifier:
    """Minimize the analytic adversarial risk over w = (1, r, ..., r), b = 0.

    Coarse grid over r in [0, r_max], then golden-section refinement inside
    the bracketing grid cell. The risk is unimodal in r whenever the strong
    mean exceeds eps_d, so the bracket around the grid argmin contains the
    true minimizer.
    """
    if eps_d < 0:
        raise InputError("eps_d must be nonnegative")
    r_max = search.r_max if search.r_max is not None else 2.0 * spec.eta

    def risk_at(r: float) -> float:
        return analytic_adv_risk_linear(_ratio_classifier(r, spec.d), spec, eps_d)

    grid = np.linspace(0.0, r_max, search.grid_points)
    risks = np.array([risk_at(r) for r in grid])
    i = int(np.argmin(risks))
    lo = grid[max(i - 1, 0)]
    hi = grid[min(i + 1, len(grid) - 1)]

    # golden-section shrink of [lo, hi] down to the tolerance
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d_pt = a + invphi * (b - a)
    fc, fd = risk_at(c), risk_at(d_pt)
    while b - a > search.tol:
        if fc <= fd:
            b, d_pt, fd = d_pt, c, fc
            c = b - invphi * (b - a)
            fc = risk_at(c)
        else:
            a, c, fc = c, d_pt, fd
            d_pt = a + invphi * (b - a)
            fd = risk_at(d_pt)
    r_star = 0.5 * (a + b)
    if r_star < search.tol and risk_at(0.0) <= risk_at(r_star):
        r_star = 0.0  # snap to the boundary when it is at least as good
    return _ratio_classifier(r_star, spec.d)


def monte_carlo_adv_risk(
    f: LinearClassifier, spec: GaussMixSpec, eps_d: float, n: int, rng: RngState
) -> float:
    """Fraction of n fresh samples misclassified after the exact worst-case
    perturbation delta* = -eps_d * y * sign(w)."""
    return monte_carlo_adv_risk_many([f], spec, eps_d, n, rng)[0]


def monte_carlo_adv_risk_many(
    fs: list[LinearClassifier], spec: GaussMixSpec, eps_d: float, n: int, rng: RngState
) -> list[float]:
    """Monte Carlo risks for several classifiers over one shared sample pass.

    Samples are drawn in the same pinned chunk order as :func:`sample`, so a
    single pass serves every classifier; this is what keeps the headline
    d=300, n=1e6 check inside its time budget on one core.
    """
    if n < 1:
        raise InputError("n must be at least 1")
    if eps_d < 0:
        raise InputError("eps_d must be nonnegative")
    if not fs:
        raise InputError("need at least one classifier")
    for f in fs:
        if f.w.size != spec.dim:
            raise InputError("classifier dimension does not match spec")
        if not np.any(f.w != 0.0):
            raise InputError("zero weight vector has no decision rule")
    mu = per_class_mean(spec)
    W = np.stack([f.w for f in fs], axis=1)
    bias = np.array([f.b for f in fs])
    penalty = eps_d * np.abs(W).sum(axis=0)  # eps_d * ||w||_1 per classifier
    draws = rng.draws()
    errors = np.zeros(len(fs), dtype=np.int64)
    done = 0
    while done < n:
        m = min(_CHUNK_ROWS, n - done)
        y = _label_chunk(draws, m)
        z = draws.normal((m, spec.dim))
        x = spec.sigma * z + y[:, None] * mu[None, :]
        # worst-case margin: y (w.x + b) - eps_d ||w||_1; nonpositive is an error
        margin = y[:, None] * (x @ W + bias[None, :]) - penalty[None, :]
        errors += (margin <= 0.0).sum(axis=0)
        done += m
    return [check_probability(e / n, "monte carlo risk") for e in errors]
