"""Command-line entry point: preprocess -> train -> explain -> evaluate -> verify.

Every subcommand writes its artifacts plus ``provenance.json`` into
``--out``. Settings may come from a ``key = value`` file given with
``--config``; flags on the command line override it.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 runtime
failure (non-convergence, infeasibility, failed verification). On a
non-zero exit, ``error.json`` is written to ``--out`` when possible.
"""

from __future__ import annotations

import argparse
import logging
import math
import platform
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .data import Dataset, SplitSpec, fit_apply_preprocess, load_csv, load_schema, split
from .errors import ConfigError, KTooLarge, RocerfError, RuntimeFailure, exit_code_for
from .harness import (
    estimate_delta,
    evaluate_alphas,
    exhaustive_validity_oracle,
    k_sensitivity_sweep,
    removal_count,
)
from .influence import build_influence_cache, load_cache, save_cache
from .io import atomic_write_text, write_json
from .models import LogRegConfig, MlpConfig, build_hessian_factor, load_model, save_model, train_model
from .recourse import CfeResult, RocerfConfig, batch_explain, results_to_csv
from .surrogate import SurrogateConfig, batch_via_surrogate

logger = logging.getLogger("rocerf")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3


class VerificationFailed(RuntimeFailure):
    pass


# argument parsing -----------------------------------------------------------


def _csv_floats(text: str) -> list[float]:
    return [float(t) for t in text.split(",") if t.strip()]


def _csv_ints(text: str) -> list[int]:
    return [int(t) for t in text.split(",") if t.strip()]


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value file; flags override its entries")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--n-jobs", type=int, default=1, help="worker threads for retraining")
    p.add_argument("--log-level", default="WARNING")


def _add_model_inputs(p, train=True):
    p.add_argument("--model", required=True, help="model JSON written by 'train'")
    p.add_argument("--cache", help="influence cache (built from --train if omitted)")
    if train:
        p.add_argument("--train", required=True, help="standardized training CSV")


def _add_recourse(p) -> None:
    g = p.add_argument_group("recourse")
    g.add_argument("--k", type=int, help="removal budget (default: ceil(k-frac * n))")
    g.add_argument("--k-frac", type=float, default=0.005)
    g.add_argument("--delta", type=float, default=0.0)
    g.add_argument("--T", type=int, default=20, help="bisection steps on the multiplier")
    g.add_argument("--max-steps", type=int, default=1000)
    g.add_argument("--tol", type=float, default=1e-6)
    g.add_argument("--lambda-init", type=float, default=0.1)
    g.add_argument("--doubling-cap", type=int, default=60)
    g.add_argument("--surrogate", action="store_true",
                   help="explain through local linear surrogates (network models)")
    g.add_argument("--n-perturb", type=int, default=10_000)
    g.add_argument("--noise", type=float, default=0.1)
    g.add_argument("--noise-stddev", action="store_true",
                   help="read --noise as a standard deviation instead of a variance")
    g.add_argument("--max-samples", type=int, help="explain at most this many negatives")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rocerf", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="split a raw CSV and standardize it")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--label-column")
    p.add_argument("--positive-label")
    p.add_argument("--train-frac", type=float, default=0.7)
    p.add_argument("--val-frac", type=float, default=0.1)
    p.add_argument("--test-frac", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="train a model and its influence cache")
    _add_common(p)
    p.add_argument("--train", required=True)
    p.add_argument("--family", choices=("logreg", "mlp"), default="logreg")
    p.add_argument("--gamma", type=float, help="L2 strength (logreg default 1/n, mlp 0)")
    p.add_argument("--newton-tol", type=float, default=1e-10)
    p.add_argument("--max-iters", type=int, default=100)
    p.add_argument("--no-intercept", action="store_true")
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--damping", type=float, help="Hessian damping (logreg 0, mlp 1e-2)")
    p.add_argument("--no-cache", action="store_true", help="skip the influence cache")

    p = sub.add_parser("explain", help="counterfactuals for the negatives of a dataset")
    _add_common(p)
    _add_model_inputs(p, train=False)
    p.add_argument("--train", help="training CSV (needed without --cache or with --surrogate)")
    p.add_argument("--data", required=True, help="standardized CSV whose negatives are explained")
    p.add_argument("--method", choices=("scfe", "rocerf", "both"), default="rocerf")
    _add_recourse(p)

    p = sub.add_parser("evaluate", help="validity under random deletions")
    _add_common(p)
    _add_model_inputs(p)
    p.add_argument("--test", required=True)
    p.add_argument("--methods", default="scfe,rocerf")
    p.add_argument("--alphas", type=_csv_floats, default=[0.005, 0.01, 0.02, 0.03, 0.05])
    p.add_argument("--M", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    _add_recourse(p)

    p = sub.add_parser("oracle", help="worst-case validity over every size-k deletion")
    _add_common(p)
    _add_model_inputs(p)
    p.add_argument("--test", required=True)
    p.add_argument("--methods", default="scfe,rocerf")
    p.add_argument("--cap", type=int, default=20_000)
    _add_recourse(p)

    p = sub.add_parser("sweep-k", help="validity grid over budgets k and deletion fractions")
    _add_common(p)
    _add_model_inputs(p)
    p.add_argument("--test", required=True)
    p.add_argument("--k-values", type=_csv_ints, required=True)
    p.add_argument("--alphas", type=_csv_floats, default=[0.005, 0.01, 0.02, 0.03, 0.05])
    p.add_argument("--M", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    _add_recourse(p)

    p = sub.add_parser("estimate-delta", help="margin from simulated deletions")
    _add_common(p)
    _add_model_inputs(p)
    p.add_argument("--val", required=True)
    p.add_argument("--k", type=int)
    p.add_argument("--k-frac", type=float, default=0.005)
    p.add_argument("--n-sim", type=int, default=20)
    p.add_argument("--safety", type=float, default=1.5)
    p.add_argument("--targeted", action="store_true",
                   help="also retrain each validation row's worst-case deletion")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("verify", help="run the desk-scale property suite")
    _add_common(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--k", type=int, default=2, help="removal budget for the exhaustive check")
    p.add_argument("--cap", type=int, default=20_000)
    p.add_argument("--cache", help="also validate this influence cache file")
    return parser


def _config_argv(path: str, parser: argparse.ArgumentParser) -> list[str]:
    """Turn a ``key = value`` file into flags for ``parser`` (unknown keys rejected)."""
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    actions = {a.dest: a for a in parser._actions if a.option_strings}
    argv = []
    for lineno, line in enumerate(p.read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{p}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        dest = key.replace("-", "_")
        if dest in ("config", "help", "version") or dest not in actions:
            raise ConfigError(f"unknown config key {key!r} ({p}:{lineno})")
        action = actions[dest]
        flag = action.option_strings[-1]
        if isinstance(action, argparse._StoreTrueAction):
            if value.lower() in ("1", "true", "yes", "on"):
                argv.append(flag)
            elif value.lower() not in ("0", "false", "no", "off"):
                raise ConfigError(f"config key {key!r} expects a boolean, got {value!r}")
        else:
            argv += [flag, value]
    return argv


def _apply_config(parser: argparse.ArgumentParser, args: argparse.Namespace,
                  argv: list[str]) -> argparse.Namespace:
    if not args.config:
        return args
    subparser = parser._subparsers._group_actions[0].choices[args.command]
    # file entries first so explicit flags, parsed later, win
    return parser.parse_args([args.command] + _config_argv(args.config, subparser) + argv[1:])


def parse_args(argv: list[str]) -> argparse.Namespace:
    parser = build_parser()
    return _apply_config(parser, parser.parse_args(argv), argv)


# helpers --------------------------------------------------------------------


def _provenance(args: argparse.Namespace, argv: list[str], **extra) -> dict:
    import torch

    doc = {
        "command": args.command,
        "argv": argv,
        "config": {k: v for k, v in vars(args).items()},
        "versions": {"rocerf": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "torch": torch.__version__},
    }
    doc.update(extra)
    return doc


def _load_dataset(path: str) -> Dataset:
    return Dataset.from_csv(path)


def _model_and_cache(args, train: Dataset | None):
    model = load_model(args.model)
    if getattr(args, "cache", None):
        cache = load_cache(args.cache)
    elif train is not None:
        cache = build_influence_cache(model, train, build_hessian_factor(model, train))
    else:
        raise ConfigError("either --cache or --train is required")
    if train is not None and cache.n != train.n:
        raise ConfigError(f"cache covers {cache.n} rows but --train has {train.n}")
    return model, cache


def _resolve_k(args, n: int) -> int:
    k = args.k if args.k is not None else removal_count(args.k_frac, n)
    if k > n:
        raise KTooLarge(f"k={k} exceeds the training size n={n}")
    return k


def _rocerf_config(args, k: int, delta: float | None = None) -> RocerfConfig:
    return RocerfConfig(k=k, delta=args.delta if delta is None else delta, T=args.T,
                        max_steps=args.max_steps, tol=args.tol, lambda_init=args.lambda_init,
                        doubling_cap=args.doubling_cap)


def _surrogate_config(args) -> SurrogateConfig:
    return SurrogateConfig(n_perturb=args.n_perturb, noise=args.noise,
                           noise_is_variance=not args.noise_stddev)


def _negatives(model, data: Dataset, limit: int | None):
    idx = np.flatnonzero(model.scores(data.features) < 0)
    if limit is not None:
        idx = idx[:limit]
    return idx, data.features[idx]


def _explain(args, model, cache, train, X, method: str, k: int) -> list:
    if method == "scfe":
        cfg = _rocerf_config(args, 0, 0.0)
    else:
        cfg = _rocerf_config(args, k)
    if args.surrogate:
        if train is None:
            raise ConfigError("--surrogate needs --train")
        return batch_via_surrogate(model, train, X, cfg, _surrogate_config(args), args.n_jobs)
    return batch_explain(model, cache, X, "scfe" if method == "scfe" else "rocerf", cfg,
                         n_jobs=args.n_jobs)


def _methods(text: str) -> list[str]:
    methods = [m.strip() for m in text.split(",") if m.strip()]
    bad = [m for m in methods if m not in ("scfe", "rocerf")]
    if bad or not methods:
        raise ConfigError(f"methods must be drawn from scfe,rocerf; got {text!r}")
    return methods


# subcommands ------------------------------------------------------------------


def cmd_preprocess(args, out: Path) -> dict:
    if not Path(args.schema).is_file():
        raise ConfigError(f"schema file not found: {args.schema}")
    schema = load_schema(args.schema)
    raw = load_csv(args.data, schema, args.label_column, args.positive_label)
    spec = SplitSpec(args.train_frac, args.val_frac, args.test_frac, args.seed)
    tr, va, te = split(raw, spec)
    pre, (tr, va, te) = fit_apply_preprocess(tr, [va, te])
    tr.to_csv(out / "train.csv")
    va.to_csv(out / "val.csv")
    te.to_csv(out / "test.csv")
    write_json(out / "preprocessor.json", pre.to_dict())
    return {"dropped_rows": raw.dropped_rows, "sizes": [tr.n, va.n, te.n], "d": tr.d}


def cmd_train(args, out: Path) -> dict:
    train = _load_dataset(args.train)
    if args.family == "logreg":
        config = LogRegConfig(args.gamma, args.newton_tol, args.max_iters, not args.no_intercept)
    else:
        config = MlpConfig(learning_rate=args.lr, epochs=args.epochs, batch_size=args.batch_size,
                           seed=args.seed, gamma=args.gamma or 0.0)
    model = train_model(train, config)
    save_model(model, out / "model.json")
    info = {"family": model.family, "n_params": model.n_params,
            "train_accuracy": float(np.mean(model.predict(train.features) == train.labels))}
    if not args.no_cache:
        factor = build_hessian_factor(model, train, args.damping)
        save_cache(build_influence_cache(model, train, factor), out / "influence.cache")
        info["damping"] = factor.damping
    return info


def cmd_explain(args, out: Path) -> dict:
    train = _load_dataset(args.train) if args.train else None
    model, cache = _model_and_cache(args, train)
    data = _load_dataset(args.data)
    k = _resolve_k(args, cache.n)
    idx, X = _negatives(model, data, args.max_samples)
    methods = ["scfe", "rocerf"] if args.method == "both" else [args.method]
    rows, sidecar = [], []
    for method in methods:
        results = _explain(args, model, cache, train, X, method, k)
        for i, res in zip(idx, results):
            rows.append((int(i), method, res))
            sidecar.append({"sample_id": int(i), "method": method,
                            **(res.to_dict() if isinstance(res, CfeResult)
                               else {"error": type(res).__name__, "message": str(res)})})
    atomic_write_text(out / "cfe.csv", results_to_csv(rows))
    write_json(out / "cfe.json", sidecar)
    return {"k": k, "n_negatives": len(idx),
            "rocerf_config": asdict(_rocerf_config(args, k)),
            "surrogate": _surrogate_config(args).to_dict() if args.surrogate else None}


def cmd_evaluate(args, out: Path) -> dict:
    train = _load_dataset(args.train)
    test = _load_dataset(args.test)
    model, cache = _model_and_cache(args, train)
    k = _resolve_k(args, train.n)
    _, X = _negatives(model, test, args.max_samples)
    cfes = {m: _explain(args, model, cache, train, X, m, k) for m in _methods(args.methods)}
    report = evaluate_alphas(train, args.alphas, cfes, model.config, M=args.M, seed=args.seed,
                             n_jobs=args.n_jobs)
    write_json(out / "report.json", report.to_dict())
    atomic_write_text(out / "report.csv", report.to_csv())
    return {"k": k, "n_negatives": len(X)}


def cmd_oracle(args, out: Path) -> dict:
    train = _load_dataset(args.train)
    test = _load_dataset(args.test)
    model, cache = _model_and_cache(args, train)
    k = _resolve_k(args, train.n)
    _, X = _negatives(model, test, args.max_samples)
    cfes = {m: _explain(args, model, cache, train, X, m, k) for m in _methods(args.methods)}
    res = exhaustive_validity_oracle(train, k, cfes, model.config, cap=args.cap, n_jobs=args.n_jobs)
    doc = {name: {"k": r.k, "worst_validity": r.worst_validity,
                  "witness_mask": list(r.witness) if r.witness is not None else None,
                  "n_models": r.n_models,
                  "always_valid": r.per_sample_always_valid.tolist()}
           for name, r in res.items()}
    write_json(out / "oracle.json", doc)
    return {"k": k, "n_negatives": len(X)}


def cmd_sweep_k(args, out: Path) -> dict:
    train = _load_dataset(args.train)
    test = _load_dataset(args.test)
    model, cache = _model_and_cache(args, train)
    _, X = _negatives(model, test, args.max_samples)
    for k in args.k_values:
        if k > train.n:
            raise KTooLarge(f"k={k} exceeds the training size n={train.n}")
    k_results = {k: _explain(args, model, cache, train, X, "rocerf", k) for k in args.k_values}
    sweep = k_sensitivity_sweep(train, k_results, args.alphas, model.config, M=args.M,
                                seed=args.seed, n_jobs=args.n_jobs)
    write_json(out / "sweep.json", {"k_values": sweep.k_values, "alphas": sweep.alphas,
                                    "n_removed": sweep.n_removed, "grid": sweep.grid,
                                    "pattern_holds": sweep.pattern_holds,
                                    "violations": sweep.violations})
    lines = ["k," + ",".join(repr(a) for a in sweep.alphas)]
    lines += [f"{k}," + ",".join(repr(float(v)) for v in row)
              for k, row in zip(sweep.k_values, sweep.grid)]
    atomic_write_text(out / "sweep.csv", "\n".join(lines) + "\n")
    return {"pattern_holds": sweep.pattern_holds}


def cmd_estimate_delta(args, out: Path) -> dict:
    train = _load_dataset(args.train)
    val = _load_dataset(args.val)
    model, cache = _model_and_cache(args, train)
    k = _resolve_k(args, train.n)
    details: dict = {}
    delta = estimate_delta(train, val.features, model, cache, k, args.n_sim, seed=args.seed,
                           safety=args.safety, targeted=args.targeted, details=details)
    write_json(out / "delta.json", {"delta": delta, "k": k, **details})
    print(repr(delta))
    return {"delta": delta}


def cmd_verify(args, out: Path) -> dict:
    from .verify import CHECKS

    if args.cache:
        load_cache(args.cache)  # corrupt or truncated caches surface as data errors
    n = 40
    if args.k > n:
        raise KTooLarge(f"k={args.k} exceeds the synthetic training size n={n}")
    if math.comb(n, args.k) > args.cap:
        raise ConfigError(f"C({n},{args.k}) exceeds --cap {args.cap}")
    rows = []
    for check in CHECKS:
        if check.__name__ == "check_exhaustive":
            rows.append(check(args.seed, args.k))
        else:
            rows.append(check(args.seed))
    width = max(len(r[0]) for r in rows)
    for name, ok, detail in rows:
        print(f"{'PASS' if ok else 'FAIL'}  {name:<{width}}  {detail}")
    write_json(out / "verify.json", [{"check": n_, "passed": ok, "detail": d}
                                     for n_, ok, d in rows])
    failed = [r for r in rows if not r[1]]
    if failed:
        raise VerificationFailed(f"property failed: {failed[0][0]} ({failed[0][2]})")
    return {"checks": len(rows)}


COMMANDS = {
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "explain": cmd_explain,
    "evaluate": cmd_evaluate,
    "oracle": cmd_oracle,
    "sweep-k": cmd_sweep_k,
    "estimate-delta": cmd_estimate_delta,
    "verify": cmd_verify,
}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    out = None
    try:
        parser = build_parser()
        args = parser.parse_args(argv)
        out = Path(args.out)
        args = _apply_config(parser, args, argv)
        logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                            format="%(levelname)s %(name)s: %(message)s")
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        summary = COMMANDS[args.command](args, out)
        write_json(out / "provenance.json", _provenance(args, argv, summary=summary))
        return EXIT_OK
    except SystemExit as exc:  # argparse: --help, --version, bad flags
        code = exc.code if isinstance(exc.code, int) else EXIT_CONFIG
        return EXIT_OK if code == 0 else EXIT_CONFIG
    except (RocerfError, ValueError) as exc:
        code = exit_code_for(exc) if isinstance(exc, RocerfError) else EXIT_CONFIG
        print(f"error: {exc}", file=sys.stderr)
        if out is not None:
            try:
                out.mkdir(parents=True, exist_ok=True)
                write_json(out / "error.json", {"error": type(exc).__name__, "message": str(exc),
                                                "exit_code": code})
            except OSError:
                pass
        return code


if __name__ == "__main__":
    sys.exit(main())
