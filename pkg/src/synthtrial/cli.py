"""Command-line entry point: ``synthtrial <command> ...``.

Exit codes: 0 success, 1 domain error (bad data, missing file, failed fit),
2 usage error. No output file contains a timestamp, so reruns with the
same arguments and root seed are byte-identical.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .dataset import DatasetError, load_csv, read_manifest, save_csv, split_arms, write_manifest
from .seeding import child_seed

log = logging.getLogger("synthtrial")

DOMAIN_ERRORS = (DatasetError, ValueError, OSError, RuntimeError, KeyError, FloatingPointError, json.JSONDecodeError)


def _root_seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("SYNTHTRIAL_SEED")
    if env is None or env == "":
        return 0
    try:
        return int(env)
    except ValueError:
        raise ValueError(f"SYNTHTRIAL_SEED must be an integer, got {env!r}") from None


def _read_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def _write_json(path, obj) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n")


def _emit(obj, out=None) -> None:
    if out:
        _write_json(out, obj)
    print(json.dumps(obj, sort_keys=True, indent=1))


def _indexed(path: str, i: int, total: int) -> Path:
    p = Path(path)
    return p if total == 1 else p.with_name(f"{p.stem}_{i:03d}{p.suffix}")


# -- commands ---------------------------------------------------------------------------


def cmd_validate(args) -> int:
    data = load_csv(args.data, args.manifest)
    control, treated = split_arms(data)
    _emit(
        {
            "n": data.n,
            "n_control": control.n,
            "n_treated": treated.n,
            "censoring_fraction": data.censoring_fraction(),
            "kind_counts": data.schema.kind_counts(),
            "schema_digest": data.schema.digest(),
        }
    )
    return 0


def cmd_simulate(args) -> int:
    from .simulate import SimConfig, simulate_trial, with_fixed_censoring

    cfg = SimConfig.from_json(_read_json(args.config)) if args.config else SimConfig()
    if args.beta is not None:
        cfg = cfg.replace(beta=args.beta)
    if args.n is not None:
        cfg = cfg.replace(n=args.n)
    cfg = with_fixed_censoring(cfg)
    root = _root_seed(args)
    written = []
    for r in range(args.reps):
        data = simulate_trial(cfg.replace(seed=child_seed(root, "simulate", r)))
        path = _indexed(args.out, r, args.reps)
        path.parent.mkdir(parents=True, exist_ok=True)
        save_csv(data, path)
        written.append({"path": str(path), "n": data.n, "censoring_fraction": data.censoring_fraction()})
    if args.manifest:
        write_manifest(cfg.schema(), args.manifest)
    _emit({"lambda_c": cfg.lambda_c, "files": written})
    return 0


def cmd_fit(args) -> int:
    from .experiments import hyperparameter_search
    from .hivae import HiVaeConfig, train

    data = load_csv(args.data, args.manifest)
    if args.control_only:
        data = split_arms(data)[0]
    cfg = HiVaeConfig.from_json(_read_json(args.config)) if args.config else HiVaeConfig()
    if args.head:
        cfg = cfg.replace(survival_head=args.head)
    root = _root_seed(args)
    summary = {}
    if args.search_budget:
        res = hyperparameter_search(data, cfg, args.search_budget, args.search_method, args.search_n_gen, child_seed(root, "search"))
        cfg = res.best_config
        summary["search"] = res.to_json()
    if (data.treatment == 1).any() and not cfg.include_treatment:
        cfg = cfg.replace(include_treatment=True)
    result = train(data, cfg, seed=child_seed(root, "fit"))
    params_path = result.model.save(args.out)
    summary.update(
        {
            "model": str(args.out),
            "params": str(params_path),
            "epochs": result.epochs_run,
            "best_epoch": result.best_epoch,
            "best_elbo": result.best_elbo,
            "stop_reason": result.stop_reason,
            "trace": result.trace,
        }
    )
    trace_path = Path(args.out).with_name(Path(args.out).stem + ".trace.json")
    _write_json(trace_path, summary)
    print(json.dumps({k: v for k, v in summary.items() if k not in ("trace", "search")}, sort_keys=True, indent=1))
    return 0


def cmd_generate(args) -> int:
    from .hivae import HiVaeModel, sample_posterior, sample_prior

    model = HiVaeModel.load(args.model)
    source = None
    if args.mode == "posterior":
        if not args.data:
            raise ValueError("posterior sampling needs --data (the training rows)")
        source = load_csv(args.data, args.manifest or model.schema)
        if args.control_only:
            source = split_arms(source)[0]
    root = _root_seed(args)
    written = []
    for r in range(args.reps):
        seed = child_seed(root, "generate", r)
        arm = sample_posterior(model, source, args.n, seed) if args.mode == "posterior" else sample_prior(model, args.n, seed)
        path = _indexed(args.out, r, args.reps)
        path.parent.mkdir(parents=True, exist_ok=True)
        save_csv(arm.data, path)
        written.append({"path": str(path), **arm.provenance()})
    _emit({"files": written})
    return 0


def cmd_evaluate(args) -> int:
    from .metrics import evaluate

    schema = read_manifest(args.manifest)
    real = load_csv(args.real, schema)
    syn = load_csv(args.synthetic, schema)
    if args.control_only:
        real = split_arms(real)[0]
    qis = [q for q in (args.qis or "").split(",") if q]
    report = evaluate(real, syn, qis or None, seed=_root_seed(args), detection=not args.no_detection)
    _emit(report.to_json(), args.out)
    return 0


def cmd_stats(args) -> int:
    from . import survstats as ss

    data = load_csv(args.data, args.manifest)
    if args.cmd == "km":
        if args.arm is not None:
            data = split_arms(data)[args.arm]
        curve = ss.kaplan_meier(data.time, data.event)
        out = {
            "event_times": curve.event_times.tolist(),
            "at_risk": curve.at_risk.tolist(),
            "events": curve.events.tolist(),
            "survival": curve.survival.tolist(),
        }
    elif args.cmd == "logrank":
        control, treated = split_arms(data)
        res = ss.logrank_datasets(treated, control)
        out = {
            "statistic": res.statistic,
            "p_value": res.p_value,
            "observed": list(res.observed),
            "expected": list(res.expected),
            "variance": res.variance,
            "groups": ["treated", "control"],
        }
    else:
        cols = [c for c in (args.covariates or "").split(",") if c]
        if args.with_treatment:
            cols = [data.schema.treatment_column] + cols
        X, names = ss.design_matrix(data, cols)
        fit = ss.cox_fit_arrays(X, data.time, data.event, names)
        out = {
            "names": fit.names,
            "coef": fit.coef.tolist(),
            "se": fit.se.tolist(),
            "loglik": fit.loglik,
            "iterations": fit.iterations,
            "converged": fit.converged,
        }
    _emit(out, args.out)
    return 0


def cmd_study(args) -> int:
    from .experiments import StudyConfig, run_study, summarize_report

    cfg_json = _read_json(args.config)
    if args.seed is not None or os.environ.get("SYNTHTRIAL_SEED"):
        cfg_json["seed"] = _root_seed(args)
    study = StudyConfig.from_json(cfg_json)
    report = run_study(study, args.out, jobs=args.jobs)
    print(summarize_report(report))
    return 1 if report["failed_cells"] and args.strict else 0


def cmd_report(args) -> int:
    from .experiments import summarize_report

    report = _read_json(Path(args.input) / "report.json")
    if args.json:
        print(json.dumps(report, sort_keys=True, indent=1))
    else:
        print(summarize_report(report))
    return 0


# -- parser -------------------------------------------------------------------------------


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected an integer >= 1, got {text}")
    return v


def _common_options(suppress: bool) -> argparse.ArgumentParser:
    # subcommands repeat the global options; SUPPRESS keeps a value given before the command
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=d(None), help="root seed (default: $SYNTHTRIAL_SEED or 0)")
    common.add_argument("-v", "--verbose", action="count", default=d(0))
    common.add_argument("--json-errors", action="store_true", default=d(False), help="report domain errors as JSON on stderr")
    common.add_argument("--jobs", type=_positive_int, default=d(1), help="worker processes")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_options(suppress=True)

    p = argparse.ArgumentParser(prog="synthtrial", description=__doc__.splitlines()[0], parents=[_common_options(suppress=False)])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", metavar="command")
    sub.required = True

    s = sub.add_parser("validate", parents=[common], help="check a CSV against its manifest")
    s.add_argument("--data", required=True)
    s.add_argument("--manifest", required=True)
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("simulate", parents=[common], help="simulate ground-truth trials")
    s.add_argument("--config", help="SimConfig JSON (defaults if omitted)")
    s.add_argument("--out", required=True, help="CSV path; _NNN is appended when --reps > 1")
    s.add_argument("--manifest", help="write the schema manifest here")
    s.add_argument("--reps", type=_positive_int, default=1)
    s.add_argument("--beta", type=float)
    s.add_argument("--n", type=_positive_int)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("fit", parents=[common], help="train an HI-VAE")
    s.add_argument("--data", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--config", help="HiVaeConfig JSON")
    s.add_argument("--head", choices=("weibull", "piecewise"))
    s.add_argument("--control-only", action="store_true", help="train on the control arm only")
    s.add_argument("--search-budget", type=int, default=0)
    s.add_argument("--search-method", type=int, choices=(1, 2, 3), default=1)
    s.add_argument("--search-n-gen", type=_positive_int, default=5)
    s.add_argument("--out", required=True, help="model sidecar JSON path")
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("generate", parents=[common], help="sample synthetic control arms")
    s.add_argument("--model", required=True)
    s.add_argument("--mode", choices=("posterior", "prior"), default="posterior")
    s.add_argument("--data", help="source rows for posterior sampling")
    s.add_argument("--manifest")
    s.add_argument("--control-only", action="store_true")
    s.add_argument("--n", type=_positive_int, required=True)
    s.add_argument("--reps", type=_positive_int, default=1)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("evaluate", parents=[common], help="fidelity/utility/privacy metrics")
    s.add_argument("--real", required=True)
    s.add_argument("--synthetic", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--qis", help="comma-separated quasi-identifier columns")
    s.add_argument("--control-only", action="store_true", help="compare against the real control arm")
    s.add_argument("--no-detection", action="store_true")
    s.add_argument("--out")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("stats", parents=[common], help="classical survival statistics")
    s.add_argument("--cmd", choices=("km", "logrank", "cox"), required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--arm", type=int, choices=(0, 1), help="km: 0 control, 1 treated (default all)")
    s.add_argument("--covariates", help="cox: comma-separated covariates")
    s.add_argument("--with-treatment", action="store_true", help="cox: include the treatment flag")
    s.add_argument("--out")
    s.set_defaults(func=cmd_stats)

    s = sub.add_parser("study", parents=[common], help="run a calibration study")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--strict", action="store_true", help="exit 1 if any cell failed")
    s.set_defaults(func=cmd_study)

    s = sub.add_parser("report", parents=[common], help="summarize a study directory")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--json", action="store_true")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except DOMAIN_ERRORS as exc:
        if args.json_errors:
            diag = {"error": type(exc).__name__, "message": str(exc)}
            for attr in ("row", "column", "filename"):
                if getattr(exc, attr, None) is not None:
                    diag[attr] = getattr(exc, attr)
            print(json.dumps(diag, sort_keys=True), file=sys.stderr)
        else:
            print(f"synthtrial: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
