"""Accuracy measurement under test-time attacks and the defense-budget sweep.

An example counts as robust for an attack only if the model is correct both
at the clean point and at the attacked point; the zero perturbation is
always feasible, so true robust accuracy can never exceed natural accuracy
and the reports preserve that ordering by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .attacks import AttackConfig, pgd
from .data import Dataset
from .errors import InputError, TrainingDivergedError
from .models import predict
from .numerics import RngState, check_probability
from .training import TrainHyper, train_pgd_at

_CHUNK_ROWS = 4096


def natural_accuracy(model, ds: Dataset) -> float:
    return float(np.mean(predict(model, ds.features) == ds.labels))


def default_attack_suite(eps: float, bounded: bool) -> dict:
    """The standing evaluation attacks: one full signed step (the fgsm column)
    plus PGD-20 and PGD-100 with random init and step eps/4."""
    if eps == 0:
        zero = AttackConfig(eps=0.0, steps=1, step_size=0.0, init="zero", mode="max", clamp=bounded)
        return {"fgsm": zero, "pgd20": zero, "pgd100": zero}
    return {
        "fgsm": AttackConfig(eps=eps, steps=1, step_size=eps, init="zero", mode="max", clamp=bounded),
        "pgd20": AttackConfig(
            eps=eps, steps=20, step_size=eps / 4, init="random", mode="max", clamp=bounded
        ),
        "pgd100": AttackConfig(
            eps=eps, steps=100, step_size=eps / 4, init="random", mode="max", clamp=bounded
        ),
    }


@dataclass
class EvalReport:
    natural_acc: float
    robust_acc: dict
    n_eval: int
    attacks: dict
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        check_probability(self.natural_acc, "natural accuracy")
        for name, acc in self.robust_acc.items():
            check_probability(acc, f"robust accuracy[{name}]")
            if acc > self.natural_acc + 1e-12:
                raise InputError(
                    f"robust accuracy under {name} exceeds natural accuracy"
                )


def evaluate(
    model, test: Dataset, attks: dict, rng: RngState | None = None, metadata: dict | None = None
) -> EvalReport:
    """Natural accuracy plus per-attack robust accuracy over the full test set.

    attks maps attack names to Maximize configs. rng feeds random-init
    attacks, one derived stream per attack, so adding an attack never
    perturbs another attack's draws.
    """
    for name, cfg in attks.items():
        if cfg.mode != "max":
            raise InputError(f"evaluation attack {name!r} must maximize the loss")
    clean_ok = predict(model, test.features) == test.labels
    robust = {}
    for i, (name, cfg) in enumerate(attks.items()):
        if cfg.eps == 0:
            robust[name] = float(np.mean(clean_ok))
            continue
        attack_rng = rng.child(i).draws() if rng is not None else None
        ok = np.zeros(test.n, dtype=bool)
        for start in range(0, test.n, _CHUNK_ROWS):
            stop = min(start + _CHUNK_ROWS, test.n)
            xa = pgd(
                model, test.features[start:stop], test.labels[start:stop], cfg, attack_rng
            )
            ok[start:stop] = predict(model, xa) == test.labels[start:stop]
        robust[name] = float(np.mean(clean_ok & ok))
    return EvalReport(
        natural_acc=float(np.mean(clean_ok)),
        robust_acc=robust,
        n_eval=test.n,
        attacks=dict(attks),
        metadata=metadata or {"provenance": test.provenance},
    )


@dataclass(frozen=True)
class SweepRow:
    eps_d: float
    kind: str
    natural_acc: float
    fgsm: float
    pgd20: float
    pgd100: float
    seed: int
    error: str | None = None


@dataclass
class SweepResult:
    rows: list

    def __post_init__(self):
        keys = [(r.eps_d, r.kind) for r in self.rows]
        if len(set(keys)) != len(keys):
            raise InputError("sweep rows must be uniquely keyed by (eps_d, kind)")

    def row(self, eps_d: float, kind: str) -> SweepRow:
        for r in self.rows:
            if r.eps_d == eps_d and r.kind == kind:
                return r
        raise KeyError((eps_d, kind))

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("eps_d,poison,natural_acc,fgsm,pgd20,pgd100,seed\n")
            for r in self.rows:
                fh.write(
                    f"{r.eps_d:.6f},{r.kind},{r.natural_acc:.6f},{r.fgsm:.6f},"
                    f"{r.pgd20:.6f},{r.pgd100:.6f},{r.seed}\n"
                )


def budget_sweep(
    arch,
    train_sets: dict,
    test: Dataset,
    hyper: TrainHyper,
    eps_a: float,
    eps_d_list,
    rng: RngState,
) -> SweepResult:
    """One adversarial training per (poison kind, eps_d) cell, all evaluated at
    the fixed attack budget eps_a.

    train_sets maps a poison-kind tag (e.g. 'none', 'hyp', 'adv') to the
    training set for that tag. Rows get independent streams derived from the
    master rng by row index; a diverging cell is recorded with NaN accuracies
    and its error text instead of aborting the remaining cells.
    """
    if not eps_d_list:
        raise InputError("eps_d_list must be nonempty")
    rows = []
    row_idx = 0
    for kind, ds in train_sets.items():
        for eps_d in eps_d_list:
            row_rng = rng.child(row_idx)
            row_hyper = replace(hyper, seed=row_rng.child(0))
            try:
                model = train_pgd_at(arch, ds, row_hyper, eps_d)
                report = evaluate(
                    model,
                    test,
                    default_attack_suite(eps_a, test.bounded),
                    row_rng.child(1),
                )
                rows.append(
                    SweepRow(
                        eps_d=float(eps_d),
                        kind=kind,
                        natural_acc=report.natural_acc,
                        fgsm=report.robust_acc["fgsm"],
                        pgd20=report.robust_acc["pgd20"],
                        pgd100=report.robust_acc["pgd100"],
                        seed=row_rng.stream,
                    )
                )
            except TrainingDivergedError as exc:
                rows.append(
                    SweepRow(
                        eps_d=float(eps_d),
                        kind=kind,
                        natural_acc=float("nan"),
                        fgsm=float("nan"),
                        pgd20=float("nan"),
                        pgd100=float("nan"),
                        seed=row_rng.stream,
                        error=str(exc),
                    )
                )
            row_idx += 1
    return SweepResult(rows)
