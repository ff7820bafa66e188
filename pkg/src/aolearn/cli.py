"""Command-line interface: ``aol <command> [options]``.

Commands: simulate, fit, predict, value, cv, bench, risk-check. Exit codes
are 0 on success, 2 on usage errors and 1 on runtime errors. Machine
output (CSV and ``--json``) prints numbers with 17 significant digits;
human-readable summaries use 4.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .data import OPTIMAL_VALUES, ScenarioSpec, load_covariates, load_dataset, oracle_mu, simulate_scenario, write_dataset
from .evaluate import (
    GSource,
    aipwe_value,
    cross_validate,
    default_grid,
    fit_regime,
    ipw_value,
    nested_cv,
    run_benchmark,
)
from .exceptions import AOLError, DataError
from .kernels import KernelSpec
from .learner import METHODS, FitConfig, LinearRule, load_rule, save_rule
from .losses import ConditionalRisk, LossKind, excess_bound_check, excess_bound_sweep
from .optimize import SolverOptions
from .residuals import G_ESTIMATORS, G_KINDS, GVariant, fit_g, with_estimated_propensity

PRESETS = ("table1", "table2-aol", "table3-aol")


def _fmt(x, machine: bool) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.17g}" if machine else f"{float(x):.4g}"
    return str(x)


def _write_csv(rows: list[dict], out, columns: list[str] | None = None) -> None:
    columns = columns or (list(rows[0]) if rows else [])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r[c], True) for c in columns])
    if out is None or str(out) == "-":
        sys.stdout.write(buf.getvalue())
    else:
        _write_text(out, buf.getvalue())


def _write_text(path, text: str) -> None:
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror or exc}") from exc


def _emit_json(obj, out=None) -> None:
    text = json.dumps(obj, indent=1) + "\n"
    if out is None or str(out) == "-":
        sys.stdout.write(text)
    else:
        _write_text(out, text)


def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


# -- shared pieces -----------------------------------------------------------------


def _add_data_options(p):
    p.add_argument("--data", required=True, help="trial CSV with columns x1..xp,a,r[,pi]")
    p.add_argument("--propensity", type=float, default=None,
                   help="P(A=+1) to assume when the file has no pi column")
    p.add_argument("--estimate-propensity", action="store_true",
                   help="replace propensities by a logistic fit of A on X")


def _add_fit_options(p):
    p.add_argument("--method", choices=METHODS, default="aol_linear")
    p.add_argument("--g", choices=G_KINDS, default="g_tilde", help="baseline for the residuals")
    p.add_argument("--g-estimator", choices=G_ESTIMATORS, default="pooled_weighted")
    p.add_argument("--loss", choices=[k.value for k in LossKind], default="huberized_hinge")
    p.add_argument("--lambda", dest="lam", type=float, default=None, help="penalty for aol_linear/aol_gaussian")
    p.add_argument("--lambda1", type=float, default=None, help="L1 penalty for the VS methods")
    p.add_argument("--lambda2", type=float, default=None, help="quadratic penalty for the VS methods")
    p.add_argument("--sigma", type=float, default=None, help="RBF width (default: median heuristic)")
    p.add_argument("--sigma-scale", type=float, default=1.0, help="multiplier on the median-heuristic width")
    p.add_argument("--kernel", choices=("rbf", "linear"), default="rbf", help="kernel for aol_gaussian")
    p.add_argument("--n-starts", type=int, default=1, help="restarts for aol_vs_gaussian")
    p.add_argument("--tune", action="store_true", help="tune over the default grid by cross-validation")
    p.add_argument("--lambda-grid", type=_floats, default=None,
                   help="comma-separated penalties to tune over (lambda, or lambda1 for VS methods)")
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--max-iter", type=int, default=500)
    p.add_argument("--tol", type=float, default=1e-6)


def _load(args):
    default = args.propensity
    if args.estimate_propensity and default is None:
        default = 0.5  # placeholder; replaced by the fitted model below
    try:
        ds = load_dataset(args.data, None, default)
    except DataError as exc:
        if "no 'pi' column" in str(exc):
            raise DataError(f"{args.data}: no 'pi' column; pass --propensity P or --estimate-propensity") from None
        raise
    if args.estimate_propensity:
        ds = with_estimated_propensity(ds)
    return ds


def _base_config(args, n: int) -> FitConfig:
    kernel = KernelSpec("linear") if args.method == "aol_gaussian" and args.kernel == "linear" else None
    params = dict(loss=args.loss, sigma=args.sigma, sigma_scale=args.sigma_scale, kernel=kernel,
                  n_starts=args.n_starts, seed=args.seed,
                  solver=SolverOptions(max_iterations=args.max_iter, gradient_tolerance=args.tol))
    if args.lam is not None:
        params["lam"] = args.lam
    else:
        params["lam"] = 1.0 / n
    if args.method.startswith("aol_vs"):
        params["lambda1"] = args.lambda1 if args.lambda1 is not None else 1.0 / n
        params["lambda2"] = args.lambda2 if args.lambda2 is not None else 1.0 / n
    return FitConfig(**params)


def _grid(args, n: int):
    if args.lambda_grid is not None:
        if args.method.startswith("aol_vs"):
            lambda2 = args.lambda2 if args.lambda2 is not None else 1.0 / n
            return [{"lambda1": v, "lambda2": lambda2} for v in args.lambda_grid]
        return [{"lam": v} for v in args.lambda_grid]
    if args.tune:
        grid = default_grid(args.method, n)
        if args.sigma is not None or args.kernel == "linear":
            grid = [{k: v for k, v in c.items() if k != "sigma_scale"} for c in grid]
            grid = [dict(t) for t in dict.fromkeys(tuple(sorted(c.items())) for c in grid)]
        return grid
    return None


def _source(args) -> GSource:
    return GSource("fitted", GVariant(args.g, args.g_estimator))


def _selected(rule) -> int:
    return int(len(rule.selected))


# -- commands ----------------------------------------------------------------------


def cmd_simulate(args) -> int:
    spec = ScenarioSpec(args.scenario, args.p, args.allocation, args.n, args.seed)
    ds = simulate_scenario(spec)
    write_dataset(ds, args.out)
    if not args.quiet:
        print(f"wrote {ds.n} rows (scenario {spec.scenario_id}, p = {spec.p}) to {args.out}", file=sys.stderr)
    return 0


def cmd_fit(args) -> int:
    ds = _load(args)
    base = _base_config(args, ds.n)
    source = _source(args)
    grid = _grid(args, ds.n)
    report = {"method": args.method, "g": args.g, "n": ds.n, "p": ds.p}
    cfg = base
    if grid is not None:
        cv = cross_validate(ds, source, args.method, grid, args.folds, args.seed, base, args.jobs)
        cfg = replace(base, **cv.chosen)
        report["chosen"] = cv.chosen
        report["cv_value"] = cv.best_value
    rule = fit_regime(ds, args.method, cfg, source)
    save_rule(rule, args.model_out)
    report.update(
        lam=cfg.lam if not args.method.startswith("aol_vs") else None,
        lambda1=cfg.lambda1, lambda2=cfg.lambda2,
        objective=rule.info["objective"], iterations=rule.info["n_iter"], status=rule.info["status"],
        selected=_selected(rule), model=str(args.model_out),
    )
    if isinstance(rule, LinearRule):
        report["w"] = rule.w.tolist()
        report["b"] = rule.b
    else:
        report["kernel"] = rule.kernel.to_dict()
    if args.json:
        _emit_json(report)
        return 0
    print(f"method      {args.method} (g = {args.g}, loss = {cfg.loss})")
    if "chosen" in report:
        chosen = ", ".join(f"{k} = {_fmt(v, False)}" for k, v in report["chosen"].items())
        print(f"cv choice   {chosen} (cv value {_fmt(report['cv_value'], False)})")
    print(f"objective   {_fmt(report['objective'], False)}  ({report['iterations']} iterations, {report['status']})")
    sel = report["selected"]
    print(f"selection   {sel} covariate{'s' if sel != 1 else ''} selected")
    print(f"model       {args.model_out}")
    return 0


def cmd_predict(args) -> int:
    rule = load_rule(args.model)
    X = load_covariates(args.data)
    if X.shape[1] != rule.p:
        raise DataError(f"{args.data}: model expects p = {rule.p} covariates, file has {X.shape[1]}")
    f = rule.decision_values(X)
    d = np.where(f > 0, 1, -1)
    _write_csv([{"f": float(fi), "d": int(di)} for fi, di in zip(f, d)], args.out, ["f", "d"])
    return 0


def _read_predictions(path, n: int) -> np.ndarray:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = [r for r in csv.reader(line for line in fh if line.strip() and not line.startswith("#"))]
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror or exc}") from exc
    if not rows or "d" not in [h.strip() for h in rows[0]]:
        raise DataError(f"{path}: expected a 'd' column of recommendations")
    j = [h.strip() for h in rows[0]].index("d")
    d = []
    for k, row in enumerate(rows[1:], start=2):
        try:
            v = float(row[j])
        except (ValueError, IndexError):
            raise DataError(f"{path}: row {k}: malformed recommendation") from None
        if v not in (1.0, -1.0):
            raise DataError(f"{path}: row {k}: recommendation must be +1 or -1")
        d.append(v)
    if len(d) != n:
        raise DataError(f"{path}: {len(d)} recommendations for {n} subjects")
    return np.array(d)


def cmd_value(args) -> int:
    ds = _load(args)
    d = _read_predictions(args.predictions, ds.n)
    out = {"estimator": args.estimator}
    if args.estimator == "aipwe":
        if args.scenario is not None:
            mu_p = oracle_mu(args.scenario, ds.covariates, 1.0)
            mu_m = oracle_mu(args.scenario, ds.covariates, -1.0)
        else:
            g = fit_g(ds, GVariant("g2", "armwise_plugin"))
            mu_p, mu_m = g.plus.predict(ds.covariates), g.minus.predict(ds.covariates)
        out["value"] = aipwe_value(ds, d, mu_p, mu_m)
        out["n_matched"] = int(np.sum(ds.treatments == d))
    else:
        est = ipw_value(ds, d, normalized=args.estimator == "ipw")
        out["value"], out["n_matched"] = est.value, est.n_matched
    if args.json:
        _emit_json(out)
    else:
        print(f"{args.estimator} value {_fmt(out['value'], False)} ({out['n_matched']} of {ds.n} matched)")
    return 0


def cmd_cv(args) -> int:
    ds = _load(args)
    base = _base_config(args, ds.n)
    grid = _grid(args, ds.n) or default_grid(args.method, ds.n)
    source = _source(args)
    if args.nested:
        est = nested_cv(ds, source, args.method, grid, args.folds, args.folds, args.seed, base, args.jobs)
        out = {"method": args.method, "nested_value": est.value, "n_matched": est.n_matched}
        if args.json:
            _emit_json(out)
        else:
            print(f"nested cv value {_fmt(est.value, False)} ({est.n_matched} of {ds.n} matched)")
        return 0
    rep = cross_validate(ds, source, args.method, grid, args.folds, args.seed, base, args.jobs)
    keys = sorted({k for c in rep.grid for k in c})
    rows = [{**{k: c.get(k, "") for k in keys}, "value": float(v), "chosen": i == rep.chosen_index}
            for i, (c, v) in enumerate(zip(rep.grid, rep.values))]
    if args.out:
        _write_csv(rows, args.out, keys + ["value", "chosen"])
    if args.json:
        _emit_json({"method": args.method, "folds": rep.folds, "seed": rep.seed, "chosen": rep.chosen,
                    "value": rep.best_value, "grid": rows})
    elif not args.out or str(args.out) != "-":
        chosen = ", ".join(f"{k} = {_fmt(v, False)}" for k, v in rep.chosen.items())
        print(f"chosen {chosen}; cv value {_fmt(rep.best_value, False)} over {len(grid)} configs")
    return 0


def _preset_runs(args):
    """(spec, methods, g source) triples for a bench preset."""
    s = args.scenario
    if args.preset == "table1":
        if s not in (1, 2):
            raise DataError("table1 covers scenarios 1 and 2")
        allocation = 0.75 if args.allocation is None else args.allocation
        spec = ScenarioSpec(s, args.p or 5, allocation, args.n)
        methods = args.methods or ["aol_linear"]
        return [(spec, methods, GSource("oracle", GVariant(k), s)) for k in ("g_tilde", "g1", "g2")]
    allocation = 0.5 if args.allocation is None else args.allocation
    if args.preset == "table2-aol":
        spec = ScenarioSpec(s, args.p or 5, allocation, args.n)
        default = ["aol_linear", "aol_gaussian"] if s in (1, 2) else ["aol_gaussian"]
    else:
        spec = ScenarioSpec(s, args.p or 25, allocation, args.n)
        default = ["aol_vs_linear", "aol_vs_gaussian"] if s in (1, 2) else ["aol_vs_gaussian"]
    source = GSource(args.g, GVariant("g_tilde"), s)
    return [(spec, args.methods or default, source)]


def cmd_bench(args) -> int:
    rows = []
    for spec, methods, source in _preset_runs(args):
        base = FitConfig(solver=SolverOptions(max_iterations=args.max_iter))
        rows.extend(run_benchmark(spec, methods, source, args.reps, args.test_n, args.seed, folds=args.folds,
                                  base=base, jobs=args.jobs))
    records = [r.record() for r in rows]
    if args.json:
        _emit_json(records, args.out)
    else:
        _write_csv(records, args.out)
    if args.figure:
        from .plotting import benchmark_figure

        benchmark_figure(rows, args.figure, OPTIMAL_VALUES.get(args.scenario),
                         f"{args.preset}: scenario {args.scenario}, n = {args.n}")
    if args.out and str(args.out) != "-":
        for r in rows:
            print(f"{r.method:16s} {r.g:16s} {_fmt(r.mean, False)} ({_fmt(r.sd, False)})", file=sys.stderr)
    return 0


def cmd_risk_check(args) -> int:
    losses = args.losses or [k.value for k in LossKind]
    if args.eta1 is not None or args.eta2 is not None:
        if args.eta1 is None or args.eta2 is None:
            raise DataError("single-point mode needs both --eta1 and --eta2")
        records = []
        for name in losses:
            lhs, rhs, holds = excess_bound_check(name, ConditionalRisk(args.eta1, args.eta2))
            records.append({"loss": name, "eta1": args.eta1, "eta2": args.eta2, "lhs": lhs, "rhs": rhs,
                            "holds": holds})
    else:
        records = excess_bound_sweep(losses, args.eta_max, args.grid_size)
        for r in records:
            r.pop("equality_gap")
    violations = sum(not r["holds"] for r in records)
    columns = ["loss", "eta1", "eta2", "lhs", "rhs", "holds"]
    if args.json:
        _emit_json({"violations": violations, "rows": records}, args.out)
    else:
        _write_csv(records, args.out, columns)
    if args.figure:
        from .plotting import risk_check_figure

        risk_check_figure(records, args.figure)
    print(f"{len(records)} checks, {violations} violations", file=sys.stderr)
    return 0 if violations == 0 else 1


# -- parser ------------------------------------------------------------------------


def _loss_list(text: str) -> list[str]:
    names = [t.strip() for t in text.split(",") if t.strip()]
    valid = {k.value for k in LossKind}
    bad = [t for t in names if t not in valid]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown loss {bad[0]!r}; expected some of {sorted(valid)}")
    return names


def _method_list(text: str) -> list[str]:
    names = [t.strip() for t in text.split(",") if t.strip()]
    bad = [t for t in names if t not in METHODS]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown method {bad[0]!r}; expected some of {list(METHODS)}")
    return names


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aol", description="Augmented outcome-weighted learning of treatment regimes.")
    parser.add_argument("--config", default=None, help="key=value file with default option values")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--json", action="store_true", help="machine-readable JSON output")
        p.set_defaults(func=func)
        return p

    p = add("simulate", cmd_simulate, "Simulate a trial from one of the four scenarios.")
    p.add_argument("--scenario", type=int, choices=(1, 2, 3, 4), default=1)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--p", type=int, default=5)
    p.add_argument("--allocation", type=float, default=0.5, help="P(A=+1)")
    p.add_argument("--out", required=True)
    p.add_argument("--quiet", action="store_true")

    p = add("fit", cmd_fit, "Fit a treatment rule and save it as JSON.")
    _add_data_options(p)
    _add_fit_options(p)
    p.add_argument("--model-out", required=True)
    p.add_argument("--jobs", type=int, default=1)

    p = add("predict", cmd_predict, "Decision values f and recommendations d for covariates in a CSV.")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True, help="CSV with columns x1..xp (other columns ignored)")
    p.add_argument("--out", default=None, help="output CSV (default: stdout)")

    p = add("value", cmd_value, "Estimate the value of recommendations on trial data.")
    _add_data_options(p)
    p.add_argument("--predictions", required=True, help="CSV with a 'd' column")
    p.add_argument("--estimator", choices=("ipw", "ipw-unnormalized", "aipwe"), default="ipw")
    p.add_argument("--scenario", type=int, choices=(1, 2, 3, 4), default=None,
                   help="for aipwe: use this scenario's true arm means instead of arm-wise regressions")

    p = add("cv", cmd_cv, "Cross-validate a method over a tuning grid.")
    _add_data_options(p)
    _add_fit_options(p)
    p.add_argument("--nested", action="store_true", help="report the nested cross-validation value")
    p.add_argument("--out", default=None, help="per-config CSV")
    p.add_argument("--jobs", type=int, default=1)

    p = add("bench", cmd_bench, "Simulation benchmark for a table preset.")
    p.add_argument("preset", choices=PRESETS)
    p.add_argument("--scenario", type=int, choices=(1, 2, 3, 4), default=1)
    p.add_argument("--n", type=int, default=400)
    p.add_argument("--p", type=int, default=None, help="covariates (default 5, or 25 for table3-aol)")
    p.add_argument("--allocation", type=float, default=None)
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--test-n", type=int, default=10_000)
    p.add_argument("--methods", type=_method_list, default=None, help="comma-separated method tags")
    p.add_argument("--g", choices=("fitted", "oracle", "zero"), default="fitted")
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--max-iter", type=int, default=5000,
                   help="solver iteration cap (the scaled-kernel fits often need a few thousand)")
    p.add_argument("--out", default=None, help="output CSV/JSON (default: stdout)")
    p.add_argument("--figure", default=None, help="write a PNG/PDF summary figure here")
    p.add_argument("--jobs", type=int, default=1)

    p = add("risk-check", cmd_risk_check, "Check the excess-risk relations of the surrogate losses.")
    p.add_argument("--losses", type=_loss_list, default=None, help="comma-separated loss names (default: all)")
    p.add_argument("--eta-max", type=float, default=10.0)
    p.add_argument("--grid-size", type=int, default=200)
    p.add_argument("--eta1", type=float, default=None)
    p.add_argument("--eta2", type=float, default=None)
    p.add_argument("--out", default=None, help="output CSV (default: stdout)")
    p.add_argument("--figure", default=None, help="write a PNG/PDF figure here")
    return parser


def _subparser(parser, command):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[command]
    raise KeyError(command)


def _apply_config(parser, sub, path) -> None:
    """Install key=value defaults from ``path`` on the subcommand parser."""
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        parser.error(f"--config {path}: {exc.strerror or exc}")
    actions = {a.dest: a for a in sub._actions if a.dest not in ("help", "func")}
    for lineno, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            parser.error(f"--config {path}: line {lineno}: expected key=value")
        key, value = (t.strip() for t in line.split("=", 1))
        dest = key.lstrip("-").replace("-", "_")
        dest = "lam" if dest == "lambda" else dest
        action = actions.get(dest)
        if action is None:
            parser.error(f"--config {path}: line {lineno}: unknown option {key!r} for this command")
        if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
            if value.lower() not in ("true", "false", "1", "0", "yes", "no"):
                parser.error(f"--config {path}: line {lineno}: {key} expects true or false")
            converted = value.lower() in ("true", "1", "yes")
        else:
            try:
                converted = action.type(value) if action.type else value
            except (ValueError, argparse.ArgumentTypeError) as exc:
                parser.error(f"--config {path}: line {lineno}: bad value for {key}: {exc}")
            if action.choices is not None and converted not in action.choices:
                parser.error(f"--config {path}: line {lineno}: {key} must be one of {list(action.choices)}")
        action.required = False
        sub.set_defaults(**{dest: converted})


COMMANDS = ("simulate", "fit", "predict", "value", "cv", "bench", "risk-check")


def main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", default=None)
    known, _ = pre.parse_known_args(argv)
    try:
        if known.config:
            command = next((tok for tok in argv if tok in COMMANDS), None)
            if command is None:
                parser.error("no command given")
            _apply_config(parser, _subparser(parser, command), known.config)
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (AOLError, ValueError, OSError) as exc:
        print(f"aol: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
