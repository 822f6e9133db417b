"""Training-set perturbation crafting.

The attack pipeline: adversarially train a slightly-robust crafting model
(budget eps_c, a quarter of the perturbation budget by default, for a few
epochs), then perturb every training example against it. Hypocritical
perturbations minimize the crafting model's loss (error-minimizing, makes
the set look easier while gutting downstream robustness); adversarial
perturbations maximize it. Labels are never touched.

Also builds label-randomized datasets whose only usable signal lives in the
features a bounded perturbation can steer, by pushing each example toward a
uniformly drawn target class.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .attacks import AttackConfig, pgd
from .data import Dataset
from .errors import InputError
from .numerics import RngState
from .training import TrainHyper, train_pgd_at

_CHUNK_ROWS = 4096

KINDS = ("hyp", "adv")


def craft_pgd_config(eps_a: float, kind: str, bounded: bool) -> AttackConfig:
    """The standing crafting attack: PGD-100, step eps_a/10, zero init."""
    if kind not in KINDS:
        raise InputError(f"kind must be one of {KINDS}")
    mode = "min" if kind == "hyp" else "max"
    if eps_a == 0:
        return AttackConfig(eps=0.0, steps=1, step_size=0.0, init="zero", mode=mode, clamp=bounded)
    return AttackConfig(
        eps=eps_a, steps=100, step_size=eps_a / 10, init="zero", mode=mode, clamp=bounded
    )


@dataclass(frozen=True)
class CraftConfig:
    """Perturbation budget, direction, inner PGD, and crafting-model recipe."""

    eps_a: float
    kind: str = "hyp"
    pgd: AttackConfig = field(default=None)  # type: ignore[assignment]
    crafting_eps_c: float = field(default=None)  # type: ignore[assignment]
    crafting_epochs: int = 10

    def __post_init__(self):
        if not np.isfinite(self.eps_a) or self.eps_a < 0:
            raise InputError("eps_a must be finite and nonnegative")
        if self.kind not in KINDS:
            raise InputError(f"kind must be one of {KINDS}")
        if self.crafting_eps_c is None:
            object.__setattr__(self, "crafting_eps_c", 0.25 * self.eps_a)
        if self.crafting_eps_c < 0:
            raise InputError("crafting_eps_c must be nonnegative")
        if self.crafting_epochs < 0:
            raise InputError("crafting_epochs must be nonnegative")
        if self.pgd is None:
            object.__setattr__(self, "pgd", craft_pgd_config(self.eps_a, self.kind, bounded=False))
        if self.pgd.eps != self.eps_a:
            raise InputError("crafting PGD budget must equal eps_a")
        wanted = "min" if self.kind == "hyp" else "max"
        if self.pgd.mode != wanted:
            raise InputError(f"{self.kind} crafting requires PGD mode '{wanted}'")


def train_crafting_model(arch, ds: Dataset, cfg: CraftConfig, hyper: TrainHyper):
    """Short adversarial training at the crafting budget; eps_c = 0 degenerates
    to a naturally trained crafting model."""
    if cfg.crafting_epochs < 1:
        raise InputError("crafting needs at least one epoch")
    short = replace(hyper, epochs=cfg.crafting_epochs)
    return train_pgd_at(arch, ds, short, eps_d=cfg.crafting_eps_c)


def craft(ds: Dataset, crafting_model, cfg: CraftConfig) -> Dataset:
    """Perturb every row against the crafting model within eps_a; labels and
    their order are preserved (clean-label contract)."""
    if cfg.eps_a == 0:
        return ds
    attack = replace(cfg.pgd, clamp=ds.bounded)
    out = np.empty_like(ds.features)
    for start in range(0, ds.n, _CHUNK_ROWS):
        stop = min(start + _CHUNK_ROWS, ds.n)
        out[start:stop] = pgd(
            crafting_model, ds.features[start:stop], ds.labels[start:stop], attack
        )
    prov = (
        f"{ds.provenance}|craft:{cfg.kind}:eps_a={cfg.eps_a:g},"
        f"eps_c={cfg.crafting_eps_c:g}"
    )
    return ds.with_features(out, provenance=prov)


def nonrobust_feature_dataset(ds: Dataset, model, eps: float, rng: RngState) -> Dataset:
    """Replace labels by uniform targets and steer each example toward its
    target within eps. Whatever a fresh model learns from the result, it
    learned from perturbation-reachable features."""
    if not np.isfinite(eps) or eps < 0:
        raise InputError("eps must be finite and nonnegative")
    draws = rng.draws()
    u = draws.uniform(ds.n)
    if ds.k == 2:
        targets = np.where(u < 0.5, -1, 1).astype(np.int64)
    else:
        targets = np.minimum((u * ds.k).astype(np.int64), ds.k - 1)
    if eps == 0:
        feats = ds.features.copy()
    else:
        attack = AttackConfig(
            eps=eps, steps=100, step_size=eps / 10, init="zero", mode="min", clamp=ds.bounded
        )
        feats = np.empty_like(ds.features)
        for start in range(0, ds.n, _CHUNK_ROWS):
            stop = min(start + _CHUNK_ROWS, ds.n)
            feats[start:stop] = pgd(
                model, ds.features[start:stop], targets[start:stop], attack
            )
    return Dataset(
        feats,
        targets,
        ds.k,
        ds.bounded,
        f"{ds.provenance}|nonrobust:eps={eps:g}",
    )
