"""Command-line surface.

Every subcommand resolves its parameters the same way: built-in defaults,
then a flat `key = value` config file (`#` starts a comment, unknown keys
are rejected), then explicit command-line flags. The fully resolved set is
written as `resolved.cfg` next to the run's outputs so any run can be
replayed exactly.

Budgets accept either absolute values or multipliers of the attack budget
written with an `x` suffix (`--eps-d 1.5x` means 1.5 * eps_a; ratios
survive rescaling between pixel data and synthetic mixtures, absolutes do
not).

Exit codes: 0 success, 2 config error, 3 data error, 4 training divergence,
5 acceptance failure from `reproduce`.
"""

from __future__ import annotations

import argparse
import os
import sys
import time

import numpy as np

from . import mixture as mx
from .attacks import pgd
from .data import Dataset, dataset_digest, import_idx, load, save
from .errors import ConfigError, DataError, InputError, TrainingDivergedError
from .evaluation import budget_sweep, default_attack_suite, evaluate
from .experiments import run_gauss_suite, run_mlp_scenario
from .models import as_mlp, load_model, model_digest, predict, save_model
from .numerics import RngState
from .poison import CraftConfig, craft, train_crafting_model
from .training import TrainHyper, train_linear_robust_exact, train_natural, train_pgd_at

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4
EXIT_ACCEPTANCE = 5

_UNSET = object()


def parse_config(path) -> dict:
    """Read a flat `key = value` file; values stay strings for later coercion."""
    out = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    for lineno, line in enumerate(raw.splitlines(), start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ConfigError(f"{path}:{lineno}: expected `key = value`, got {line!r}")
        key, value = text.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"{path}:{lineno}: empty key")
        if key in out:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def parse_budget(text, eps_a: float | None = None) -> float:
    """A budget is a nonnegative real, or a multiplier like `1.5x` of eps_a."""
    if isinstance(text, (int, float)):
        value = float(text)
    else:
        text = str(text).strip()
        if text.endswith(("x", "X")):
            if eps_a is None:
                raise ConfigError(f"multiplier budget {text!r} needs eps_a to resolve")
            value = float(text[:-1]) * eps_a
        else:
            value = float(text)
    if not np.isfinite(value) or value < 0:
        raise ConfigError(f"budget {text!r} must be finite and nonnegative")
    return value


def parse_budget_list(text, eps_a: float | None = None) -> list:
    items = [t for t in str(text).split(",") if t.strip()]
    if not items:
        raise ConfigError("empty budget list")
    return [parse_budget(t, eps_a) for t in items]


def _coerce(value: str, kind):
    if kind is bool:
        low = value.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"expected a boolean, got {value!r}")
    try:
        return kind(value)
    except ValueError as exc:
        raise ConfigError(f"cannot parse {value!r} as {kind.__name__}") from exc


def resolve_options(args: argparse.Namespace, option_types: dict) -> dict:
    """defaults < config file < explicit flags, rejecting unknown config keys."""
    resolved = dict(option_types["defaults"])
    if getattr(args, "config", None):
        file_values = parse_config(args.config)
        unknown = sorted(set(file_values) - set(resolved))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        for key, raw in file_values.items():
            kind = option_types["types"][key]
            resolved[key] = raw if kind is str else _coerce(raw, kind)
    for key in resolved:
        flag_value = getattr(args, key, _UNSET)
        if flag_value is not _UNSET and flag_value is not None:
            resolved[key] = flag_value
    return resolved


def write_sidecar(outdir, resolved: dict) -> None:
    os.makedirs(outdir, exist_ok=True)
    lines = [f"{key} = {resolved[key]}" for key in sorted(resolved)]
    with open(os.path.join(outdir, "resolved.cfg"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def default_outdir(seed: int) -> str:
    stamp = time.strftime("%Y%m%d-%H%M%S")
    return os.path.join("runs", f"{stamp}-seed{seed}")


def _add_options(sub, spec: list):
    """spec rows: (name, type, default, help). Returns the dict used by
    resolve_options; argparse defaults stay None so explicit flags win."""
    defaults, types = {}, {}
    for name, kind, default, help_text in spec:
        flag = "--" + name.replace("_", "-")
        if kind is bool:
            sub.add_argument(flag, dest=name, action="store_const", const=True,
                             default=None, help=help_text)
        else:
            sub.add_argument(flag, dest=name, type=kind, default=None, help=help_text)
        defaults[name] = default
        types[name] = kind
    sub.add_argument("--config", default=None, help="flat key = value file")
    return {"defaults": defaults, "types": types}


def _parse_arch(text: str, in_dim: int | None = None) -> list:
    dims = []
    for part in str(text).split(","):
        part = part.strip()
        if part:
            dims.append(_coerce(part, int))
    if len(dims) < 2:
        raise ConfigError(f"architecture {text!r} needs at least input and output dims")
    if in_dim is not None and dims[0] != in_dim:
        raise ConfigError(f"architecture input dim {dims[0]} does not match data ({in_dim})")
    return dims


def _hyper(opts: dict, seed_stream: int = 0) -> TrainHyper:
    return TrainHyper(
        seed=RngState(opts["seed"], seed_stream),
        epochs=opts["epochs"],
        batch_size=opts["batch_size"],
        lr=opts["lr"],
        weight_decay=opts["weight_decay"],
    )


_TRAIN_OPTS = [
    ("epochs", int, 30, "training epochs"),
    ("batch_size", int, 64, "minibatch size"),
    ("lr", float, 0.05, "learning rate"),
    ("weight_decay", float, 5e-4, "l2 penalty on weights"),
    ("seed", int, 0, "master seed"),
]


# ---------------------------------------------------------------------------
# subcommands


def cmd_theory(opts) -> int:
    spec = mx.GaussMixSpec(opts["eta"], opts["sigma"], opts["d"])
    eps = parse_budget(opts["eps"]) if opts["eps"] is not None else 2.0 * opts["eta"]
    print(f"mixture: eta={spec.eta:g} sigma={spec.sigma:g} d={spec.d} eps={eps:g}")
    bound = mx.natural_adv_accuracy_bound(spec.eta, spec.sigma, spec.d)
    rob = mx.robust_adv_accuracy(spec.eta, spec.sigma)
    nat = 1.0 - mx.analytic_adv_risk_linear(mx.natural_classifier(spec), spec, eps)
    print(f"natural classifier adv accuracy: exact {nat:.6f}, bound {bound:.6f}")
    print(f"robust  classifier adv accuracy: exact {rob:.6f}")

    if opts["mc_n"] > 0:
        rng = RngState(opts["seed"], 0)
        risks = mx.monte_carlo_adv_risk_many(
            [mx.natural_classifier(spec), mx.robust_classifier(spec)],
            spec, eps, opts["mc_n"], rng,
        )
        print(
            f"monte carlo (n={opts['mc_n']}): natural {1 - risks[0]:.6f}, "
            f"robust {1 - risks[1]:.6f}"
        )

    if opts["shift"] != "none":
        shift = (mx.Shift.adversarial(eps) if opts["shift"] == "adv"
                 else mx.Shift.hypocritical(eps))
        shifted = mx.GaussMixSpec(spec.eta, spec.sigma, spec.d, shift)
        for eps_d in parse_budget_list(opts["eps_d"], eps):
            f = mx.optimal_linear_robust(shifted, eps_d)
            print(
                f"optimal robust weight ratio on {opts['shift']}-shifted data "
                f"at eps_d={eps_d:g}: {mx.weight_ratio(f):.6f}"
            )
    return EXIT_OK


def cmd_sample(opts) -> int:
    if opts["shift"] == "none":
        shift = mx.Shift.none()
    elif opts["shift"] == "adv":
        shift = mx.Shift.adversarial(parse_budget(opts["eps"]))
    else:
        shift = mx.Shift.hypocritical(parse_budget(opts["eps"]))
    spec = mx.GaussMixSpec(opts["eta"], opts["sigma"], opts["d"], shift)
    ds = mx.sample(spec, opts["n"], RngState(opts["seed"], 0))
    outdir = opts["outdir"] or default_outdir(opts["seed"])
    os.makedirs(outdir, exist_ok=True)
    path = os.path.join(outdir, opts["out"])
    save(ds, path)
    print(f"wrote {path} ({ds.n} x {ds.m}, sha256 {dataset_digest(ds)[:16]})")
    return EXIT_OK, outdir


def cmd_import_idx(opts) -> int:
    classes = [int(c) for c in str(opts["classes"]).split(",") if c.strip()]
    limit = opts["limit"] if opts["limit"] > 0 else None
    ds = import_idx(opts["images"], opts["labels"], classes, limit)
    if opts["center"]:
        ds = Dataset(ds.features - 0.5, ds.labels, ds.k, bounded=False,
                     provenance=f"{ds.provenance}|centered")
    outdir = opts["outdir"] or default_outdir(0)
    os.makedirs(outdir, exist_ok=True)
    path = os.path.join(outdir, opts["out"])
    save(ds, path)
    print(f"wrote {path} ({ds.n} x {ds.m}, k={ds.k}, sha256 {dataset_digest(ds)[:16]})")
    return EXIT_OK, outdir


def cmd_craft(opts) -> int:
    ds = load(opts["data"])
    eps_a = parse_budget(opts["eps_a"])
    cfg = CraftConfig(
        eps_a=eps_a, kind=opts["kind"],
        crafting_eps_c=parse_budget(opts["eps_c"], eps_a) if opts["eps_c"] else None,
        crafting_epochs=opts["epochs"],
    )
    hyper = TrainHyper(seed=RngState(opts["seed"], 0), epochs=opts["epochs"])
    if opts["crafter"]:
        crafter = load_model(opts["crafter"])
        if not hasattr(crafter, "weights"):
            crafter = as_mlp(crafter)
    elif opts["arch"]:
        arch = _parse_arch(opts["arch"], ds.m)
        crafter = train_crafting_model(arch, ds, cfg, hyper)
    else:
        crafter = as_mlp(train_linear_robust_exact(ds, cfg.crafting_eps_c, hyper))
    poisoned = craft(ds, crafter, cfg)
    outdir = opts["outdir"] or default_outdir(opts["seed"])
    os.makedirs(outdir, exist_ok=True)
    path = os.path.join(outdir, opts["out"])
    save(poisoned, path)
    save_model(crafter, os.path.join(outdir, "crafting-model.rslm"))
    print(f"wrote {path} ({cfg.kind}, eps_a={eps_a:g}, sha256 {dataset_digest(poisoned)[:16]})")
    return EXIT_OK, outdir


def cmd_train(opts) -> int:
    ds = load(opts["data"])
    hyper = _hyper(opts)
    eps_d = parse_budget(opts["eps_d"], parse_budget(opts["eps_a"]) if opts["eps_a"] else None)
    if opts["arch"] == "linear":
        model = train_linear_robust_exact(ds, eps_d, hyper)
    else:
        arch = _parse_arch(opts["arch"], ds.m)
        if eps_d == 0.0:
            model = train_natural(arch, ds, hyper)
        else:
            model = train_pgd_at(arch, ds, hyper, eps_d)
    outdir = opts["outdir"] or default_outdir(opts["seed"])
    os.makedirs(outdir, exist_ok=True)
    path = os.path.join(outdir, opts["out"])
    save_model(model, path)
    print(f"wrote {path} (eps_d={eps_d:g}, sha256 {model_digest(model)[:16]})")
    return EXIT_OK, outdir


def cmd_attack(opts) -> int:
    model = load_model(opts["model"])
    if not hasattr(model, "weights"):
        model = as_mlp(model)
    ds = load(opts["data"])
    eps = parse_budget(opts["eps"])
    rng = RngState(opts["seed"], 0)
    suite = default_attack_suite(eps, ds.bounded)
    if opts["attack"] not in suite:
        raise ConfigError(
            f"unknown attack {opts['attack']!r}; use one of {', '.join(sorted(suite))}"
        )
    adv = pgd(model, ds.features, ds.labels, suite[opts["attack"]], rng.draws())
    attacked = ds.with_features(adv, f"{ds.provenance}|{opts['attack']}:eps={eps:g}")
    clean_ok = predict(model, ds.features) == ds.labels
    adv_ok = predict(model, adv) == ds.labels
    robust = float(np.mean(clean_ok & adv_ok))
    outdir = opts["outdir"] or default_outdir(opts["seed"])
    os.makedirs(outdir, exist_ok=True)
    path = os.path.join(outdir, opts["out"])
    save(attacked, path)
    print(f"wrote {path}; robust accuracy under {opts['attack']} at eps={eps:g}: {robust:.6f}")
    return EXIT_OK, outdir


def cmd_eval(opts) -> int:
    model = load_model(opts["model"])
    if not hasattr(model, "weights"):
        model = as_mlp(model)
    ds = load(opts["data"])
    eps_a = parse_budget(opts["eps_a"])
    report = evaluate(
        model, ds, default_attack_suite(eps_a, ds.bounded), RngState(opts["seed"], 1)
    )
    lines = [f"natural accuracy: {report.natural_acc:.6f}"]
    for name in sorted(report.robust_acc):
        lines.append(f"{name} robust accuracy (eps={eps_a:g}): {report.robust_acc[name]:.6f}")
    text = "\n".join(lines)
    print(text)
    outdir = opts["outdir"] or default_outdir(opts["seed"])
    os.makedirs(outdir, exist_ok=True)
    with open(os.path.join(outdir, opts["out"]), "w", encoding="utf-8") as fh:
        fh.write(text + "\n")
    return EXIT_OK, outdir


def cmd_sweep(opts) -> int:
    train_sets = {}
    for item in str(opts["data"]).split(";"):
        item = item.strip()
        if not item:
            continue
        if "=" not in item:
            raise ConfigError(f"sweep data item {item!r} must be tag=path")
        tag, path = item.split("=", 1)
        train_sets[tag.strip()] = load(path.strip())
    if not train_sets:
        raise ConfigError("sweep needs at least one tag=path in --data")
    test = load(opts["test"])
    eps_a = parse_budget(opts["eps_a"])
    eps_d_list = parse_budget_list(opts["eps_d_list"], eps_a)
    arch = _parse_arch(opts["arch"], test.m)
    hyper = _hyper(opts)
    result = budget_sweep(
        arch, train_sets, test, hyper, eps_a, eps_d_list, RngState(opts["seed"], 0)
    )
    outdir = opts["outdir"] or default_outdir(opts["seed"])
    os.makedirs(outdir, exist_ok=True)
    path = os.path.join(outdir, opts["out"])
    result.to_csv(path)
    print(f"wrote {path} ({len(result.rows)} rows)")
    return EXIT_OK, outdir


def cmd_reproduce(opts) -> int:
    outdir = opts["outdir"] or default_outdir(opts["seed"])
    if opts["scenario"] == "gauss":
        checks = run_gauss_suite(RngState(opts["seed"], 0), mc_n=opts["mc_n"])
        os.makedirs(outdir, exist_ok=True)
        lines = [c.line() for c in checks]
        with open(os.path.join(outdir, "gauss-report.txt"), "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
        print("\n".join(lines))
        return (EXIT_OK if all(c.passed for c in checks) else EXIT_ACCEPTANCE), outdir
    result = run_mlp_scenario(outdir, master_seed=opts["seed"])
    print("\n".join(result.report_lines()))
    return (EXIT_OK if result.passed else EXIT_ACCEPTANCE), outdir


# ---------------------------------------------------------------------------
# wiring


def build_parser():
    parser = argparse.ArgumentParser(
        prog="stabilab",
        description="training-time stability attacks on adversarial training",
    )
    subs = parser.add_subparsers(dest="command", required=True)
    table = {}

    sub = subs.add_parser("theory", help="analytic mixture results and Monte Carlo checks")
    table["theory"] = (cmd_theory, _add_options(sub, [
        ("eta", float, 0.1, "weak-feature magnitude"),
        ("sigma", float, 0.25, "per-feature noise std"),
        ("d", int, 50, "number of weak features"),
        ("eps", str, None, "attack budget (default 2*eta)"),
        ("shift", str, "none", "training-time shift: none, adv or hyp"),
        ("eps_d", str, "1.0x", "defense budgets for the ratio report (comma list)"),
        ("mc_n", int, 100000, "Monte Carlo sample count (0 disables)"),
        ("seed", int, 0, "master seed"),
    ]))

    sub = subs.add_parser("sample", help="draw a mixture dataset to a RSLB file")
    table["sample"] = (cmd_sample, _add_options(sub, [
        ("eta", float, 0.1, "weak-feature magnitude"),
        ("sigma", float, 0.25, "per-feature noise std"),
        ("d", int, 50, "number of weak features"),
        ("shift", str, "none", "training-time shift: none, adv or hyp"),
        ("eps", str, "0.2", "shift budget"),
        ("n", int, 10000, "examples to draw"),
        ("seed", int, 0, "master seed"),
        ("out", str, "mixture.rslb", "output file name"),
        ("outdir", str, None, "run directory (default runs/<stamp>-seed<seed>)"),
    ]))

    sub = subs.add_parser("import-idx", help="convert an IDX image/label pair to RSLB")
    table["import-idx"] = (cmd_import_idx, _add_options(sub, [
        ("images", str, "", "IDX images file"),
        ("labels", str, "", "IDX labels file"),
        ("classes", str, "0,1", "classes to keep (comma list)"),
        ("limit", int, 0, "per-class cap (0 = no cap)"),
        ("center", bool, False, "shift features to +/-0.5 and drop the bounded flag"),
        ("out", str, "dataset.rslb", "output file name"),
        ("outdir", str, None, "run directory"),
    ]))

    sub = subs.add_parser("craft", help="craft a clean-label poisoned training set")
    table["craft"] = (cmd_craft, _add_options(sub, [
        ("data", str, "", "clean training set (RSLB)"),
        ("eps_a", str, "0.0625", "attack budget"),
        ("kind", str, "hyp", "perturbation kind: hyp or adv"),
        ("eps_c", str, None, "crafting-model budget (default 0.25x)"),
        ("crafter", str, None, "reuse an existing crafting model (RSLM)"),
        ("arch", str, None, "train an MLP crafting model with this layer list"),
        ("out", str, "poisoned.rslb", "output file name"),
        ("outdir", str, None, "run directory"),
        ("epochs", int, 10, "crafting-model epochs"),
        ("seed", int, 0, "master seed"),
    ]))

    sub = subs.add_parser("train", help="train a model, naturally or adversarially")
    table["train"] = (cmd_train, _add_options(sub, [
        ("data", str, "", "training set (RSLB)"),
        ("arch", str, "linear", "'linear' or comma layer dims, e.g. 144,32,32,1"),
        ("eps_d", str, "0", "defense budget (0 = natural training)"),
        ("eps_a", str, None, "attack budget, only to resolve x-suffixed eps_d"),
        ("out", str, "model.rslm", "output file name"),
        ("outdir", str, None, "run directory"),
    ] + _TRAIN_OPTS))

    sub = subs.add_parser("attack", help="attack a model and save the perturbed set")
    table["attack"] = (cmd_attack, _add_options(sub, [
        ("model", str, "", "model file (RSLM)"),
        ("data", str, "", "dataset to perturb (RSLB)"),
        ("attack", str, "pgd20", "fgsm, pgd20 or pgd100"),
        ("eps", str, "0.0625", "attack radius"),
        ("out", str, "attacked.rslb", "output file name"),
        ("outdir", str, None, "run directory"),
        ("seed", int, 0, "master seed"),
    ]))

    sub = subs.add_parser("eval", help="natural accuracy plus the fixed attack suite")
    table["eval"] = (cmd_eval, _add_options(sub, [
        ("model", str, "", "model file (RSLM)"),
        ("data", str, "", "evaluation set (RSLB)"),
        ("eps_a", str, "0.0625", "attack budget"),
        ("out", str, "eval.txt", "report file name"),
        ("outdir", str, None, "run directory"),
        ("seed", int, 0, "master seed"),
    ]))

    sub = subs.add_parser("sweep", help="adversarial training across a defense-budget grid")
    table["sweep"] = (cmd_sweep, _add_options(sub, [
        ("data", str, "", "semicolon list of tag=path training sets"),
        ("test", str, "", "evaluation set (RSLB)"),
        ("eps_a", str, "0.0625", "attack budget"),
        ("eps_d_list", str, "1.0x,1.25x,1.5x,1.75x,2.0x", "defense budgets (comma list)"),
        ("arch", str, "144,32,32,1", "victim architecture"),
        ("out", str, "sweep.csv", "output CSV name"),
        ("outdir", str, None, "run directory"),
    ] + _TRAIN_OPTS))

    sub = subs.add_parser("reproduce", help="run a canned scenario end to end")
    sub.add_argument("scenario", choices=["gauss", "mlp"])
    table["reproduce"] = (cmd_reproduce, _add_options(sub, [
        ("mc_n", int, 1000000, "Monte Carlo sample count for the gauss suite"),
        ("seed", int, 2024, "master seed"),
        ("outdir", str, None, "run directory"),
    ]))
    return parser, table


def main(argv=None) -> int:
    parser, table = build_parser()
    args = parser.parse_args(argv)
    handler, option_types = table[args.command]
    try:
        opts = resolve_options(args, option_types)
        if hasattr(args, "scenario"):
            opts["scenario"] = args.scenario
        for key in ("data", "test", "images", "labels", "model"):
            if key in opts and opts[key] == "":
                raise ConfigError(f"--{key.replace('_', '-')} is required")
        outcome = handler(opts)
        code, outdir = outcome if isinstance(outcome, tuple) else (outcome, None)
        if outdir is not None:
            sidecar = {k: v for k, v in opts.items() if v is not None}
            sidecar["command"] = args.command
            write_sidecar(outdir, sidecar)
        return code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InputError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDivergedError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
