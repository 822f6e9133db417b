import numpy as np
import pytest

from stabilab.attacks import AttackConfig
from stabilab.data import Dataset
from stabilab.errors import InputError
from stabilab.evaluation import (
    EvalReport,
    SweepResult,
    SweepRow,
    budget_sweep,
    default_attack_suite,
    evaluate,
    natural_accuracy,
)
from stabilab.mixture import GaussMixSpec, LinearClassifier, sample
from stabilab.models import as_mlp
from stabilab.numerics import RngState
from stabilab.training import TrainHyper

SPEC = GaussMixSpec(eta=0.1, sigma=0.25, d=10)


def line_model():
    return as_mlp(LinearClassifier(np.array([1.0]), 0.0))


def three_points():
    # x=-0.5 clean-wrong; x=+0.3 clean-right but flips inside eps=1;
    # x=+2 robust at eps=1
    X = np.array([[-0.5], [0.3], [2.0]])
    y = np.array([1, 1, 1])
    return Dataset(X, y, k=2, bounded=False, provenance="hand")


def test_natural_accuracy_hand_case():
    assert natural_accuracy(line_model(), three_points()) == pytest.approx(2 / 3)


def test_robust_counts_clean_and_attacked():
    ds = three_points()
    atk = {"step": AttackConfig(eps=1.0, steps=1, step_size=1.0)}
    report = evaluate(line_model(), ds, atk)
    assert report.natural_acc == pytest.approx(2 / 3)
    assert report.robust_acc["step"] == pytest.approx(1 / 3)
    assert report.n_eval == 3
    assert report.metadata["provenance"] == "hand"


def test_default_suite_structure():
    suite = default_attack_suite(0.2, bounded=True)
    assert list(suite) == ["fgsm", "pgd20", "pgd100"]
    assert suite["fgsm"].steps == 1 and suite["fgsm"].step_size == 0.2
    assert suite["fgsm"].init == "zero"
    assert suite["pgd20"].steps == 20 and suite["pgd100"].steps == 100
    for cfg in suite.values():
        assert cfg.eps == 0.2 and cfg.mode == "max" and cfg.clamp
    zero = default_attack_suite(0.0, bounded=False)
    assert all(cfg.eps == 0.0 for cfg in zero.values())


def test_zero_eps_suite_reports_natural():
    ds = three_points()
    report = evaluate(line_model(), ds, default_attack_suite(0.0, False))
    for acc in report.robust_acc.values():
        assert acc == report.natural_acc


def test_eval_report_validation():
    with pytest.raises(InputError):
        EvalReport(natural_acc=0.5, robust_acc={"a": 0.6}, n_eval=10, attacks={})
    with pytest.raises(InputError):
        EvalReport(natural_acc=1.5, robust_acc={}, n_eval=10, attacks={})
    EvalReport(natural_acc=0.5, robust_acc={"a": 0.5}, n_eval=10, attacks={})


def test_evaluate_rejects_loss_minimizers():
    bad = {"helpful": AttackConfig(eps=0.1, steps=1, step_size=0.1, mode="min")}
    with pytest.raises(InputError):
        evaluate(line_model(), three_points(), bad)


def test_appending_attack_keeps_earlier_streams():
    ds = sample(SPEC, 300, RngState(1, 0))
    f = as_mlp(LinearClassifier(np.concatenate([[1.0], np.full(10, 0.1)])))
    pgd20 = default_attack_suite(0.2, False)["pgd20"]
    alone = evaluate(f, ds, {"pgd20": pgd20}, RngState(2, 0))
    joined = evaluate(
        f, ds, {"pgd20": pgd20, "extra": default_attack_suite(0.3, False)["pgd20"]},
        RngState(2, 0),
    )
    assert alone.robust_acc["pgd20"] == joined.robust_acc["pgd20"]


def sweep_inputs(n=300):
    train = {
        "none": sample(SPEC, n, RngState(5, 0)),
        "hyp": sample(SPEC, n, RngState(5, 1)),
    }
    test = sample(SPEC, n, RngState(5, 2))
    hyper = TrainHyper(seed=RngState(0, 0), epochs=2)
    return train, test, hyper


def test_budget_sweep_rows_and_seeds():
    train, test, hyper = sweep_inputs()
    rng = RngState(7, 3)
    res = budget_sweep((11, 1), train, test, hyper, 0.2, [0.0, 0.1], rng)
    assert len(res.rows) == 4
    assert [(r.kind, r.eps_d) for r in res.rows] == [
        ("none", 0.0), ("none", 0.1), ("hyp", 0.0), ("hyp", 0.1)
    ]
    for i, r in enumerate(res.rows):
        assert r.seed == rng.child(i).stream
        assert r.error is None
        assert r.pgd20 <= r.natural_acc + 1e-12


def test_budget_sweep_determinism():
    train, test, hyper = sweep_inputs()
    a = budget_sweep((11, 1), train, test, hyper, 0.2, [0.1], RngState(7, 3))
    b = budget_sweep((11, 1), train, test, hyper, 0.2, [0.1], RngState(7, 3))
    assert a.rows == b.rows


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_budget_sweep_records_divergence():
    train, test, hyper = sweep_inputs(n=200)
    blown = {
        kind: Dataset(ds.features * 1e200, ds.labels, 2, False, "blown")
        for kind, ds in train.items()
    }
    res = budget_sweep((11, 4, 1), blown, test, hyper, 0.2, [0.0], RngState(7, 3))
    assert len(res.rows) == 2
    for r in res.rows:
        assert r.error is not None
        assert np.isnan(r.natural_acc) and np.isnan(r.pgd20)


def test_budget_sweep_rejects_empty_grid():
    train, test, hyper = sweep_inputs(n=200)
    with pytest.raises(InputError):
        budget_sweep((11, 1), train, test, hyper, 0.2, [], RngState(0, 0))


def row(eps_d, kind, seed=1):
    return SweepRow(
        eps_d=eps_d, kind=kind, natural_acc=0.9, fgsm=0.8, pgd20=0.75, pgd100=0.7,
        seed=seed,
    )


def test_sweep_result_keying():
    with pytest.raises(InputError):
        SweepResult([row(0.1, "hyp"), row(0.1, "hyp")])
    res = SweepResult([row(0.1, "hyp"), row(0.1, "none")])
    assert res.row(0.1, "none").kind == "none"
    with pytest.raises(KeyError):
        res.row(0.2, "hyp")


def test_sweep_csv_golden(tmp_path):
    res = SweepResult(
        [
            SweepRow(0.0625, "none", 0.9975, 0.97, 0.9605, 0.96, 257),
            SweepRow(0.125, "hyp", 1.0, 0.5, 0.25, 0.125, 258),
        ]
    )
    path = tmp_path / "sweep.csv"
    res.to_csv(path)
    want = (
        "eps_d,poison,natural_acc,fgsm,pgd20,pgd100,seed\n"
        "0.062500,none,0.997500,0.970000,0.960500,0.960000,257\n"
        "0.125000,hyp,1.000000,0.500000,0.250000,0.125000,258\n"
    )
    assert path.read_text(encoding="utf-8") == want
