"""Command-line entry point: fit, predict, crossval and bench subcommands.

Configuration comes from an optional JSON file (--config) with
command-line flags taking precedence; the seed falls back to the
CPMFIT_SEED environment variable.  All artifact files are written
atomically (write-then-rename) after computation finishes.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import tempfile
from dataclasses import replace

import numpy as np

from .dataio import (
    _fmt,
    export_curve_svg,
    export_report,
    group_speedlines,
    normalize_map,
    parse_map_csv,
)
from .errors import CpmFitError, FitFailureError, InvalidPredictionError, ParseError
from .metrics import EvalMode, MetricKind, _clamped_prediction, evaluate_prediction
from .model import sample_curve
from .optimize import FitConfig, InitStrategy, LocalSolver, fit_speedline
from .predict import (
    BETA_FIELDS,
    PredictionConfig,
    _line_seed,
    aggregate_reports,
    fit_beta_polynomials,
    fit_map,
    holdout_predict,
    loo_crossval,
    predict_beta,
)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_PARTIAL = 2

_METRICS = {"rmse": MetricKind.RMSE, "mape": MetricKind.MAPE, "ortho": MetricKind.ORTHO}
_INITS = {"none": InitStrategy.NONE, "pso": InitStrategy.PSO, "de": InitStrategy.DE}
_SOLVERS = {"nm": LocalSolver.NELDER_MEAD, "qn": LocalSolver.QUASI_NEWTON}
_MODES = {"pressure": EvalMode.PRESSURE, "massflow": EvalMode.MASSFLOW}


def write_text_atomic(path: str, text: str) -> None:
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", text=True)
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    with open(path) as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise CpmFitError("config file must contain a JSON object")
    return cfg


def _resolve_seed(args, file_cfg: dict) -> int:
    if args.seed is not None:
        return args.seed
    if "seed" in file_cfg:
        return int(file_cfg["seed"])
    env = os.environ.get("CPMFIT_SEED")
    if env is not None:
        return int(env)
    return 0


def build_configs(args) -> tuple[FitConfig, PredictionConfig, dict]:
    """Merge defaults, config-file values and command-line flags."""
    file_cfg = _load_config_file(args.config)
    fit_kwargs = {}
    for name in ("de_population", "de_max_iters", "pso_particles", "pso_iters",
                 "local_max_iters", "objective_tol", "simplex_tol"):
        if name in file_cfg:
            fit_kwargs[name] = file_cfg[name]
    metric = args.metric or file_cfg.get("metric")
    if metric:
        fit_kwargs["metric"] = _METRICS[metric]
    init = args.init or file_cfg.get("init")
    if init:
        fit_kwargs["init_strategy"] = _INITS[init]
    solver = args.solver or file_cfg.get("solver")
    if solver:
        fit_kwargs["local_solver"] = _SOLVERS[solver]
    mode = args.mode or file_cfg.get("mode")
    if mode:
        fit_kwargs["mode"] = _MODES[mode]
    fit_kwargs["seed"] = _resolve_seed(args, file_cfg)
    fit_cfg = FitConfig(**fit_kwargs)

    pred_kwargs = {}
    degree = args.degree if args.degree is not None else file_cfg.get("degree")
    if degree is not None:
        pred_kwargs["degree"] = int(degree)
    norm = args.normalize_speed if args.normalize_speed is not None \
        else file_cfg.get("normalize_speed")
    if norm is not None:
        pred_kwargs["normalize_speed"] = _parse_bool(norm)
    if mode:
        pred_kwargs["eval_mode"] = _MODES[mode]
    for name in ("enforce_cur_min", "enforce_nonneg"):
        if name in file_cfg:
            pred_kwargs[name] = file_cfg[name]
    pred_cfg = PredictionConfig(**pred_kwargs)

    extras = {
        "normalize": _parse_bool(file_cfg.get("normalize", True)),
        "repeats": args.repeats if args.repeats is not None
                   else int(file_cfg.get("repeats", 10)),
    }
    return fit_cfg, pred_cfg, extras


def _parse_bool(v) -> bool:
    if isinstance(v, bool):
        return v
    return str(v).lower() in ("1", "true", "yes", "on")


def _load_map(path: str, normalize: bool):
    with open(path) as fh:
        records = parse_map_csv(fh.read())
    cpm = group_speedlines(records, map_id=os.path.basename(path))
    if normalize:
        cpm, scale = normalize_map(cpm)
    else:
        scale = None
    return cpm, scale


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


# ---------------------------------------------------------------------------
# Subcommands


def cmd_fit(args) -> int:
    fit_cfg, _, extras = build_configs(args)
    cpm, _ = _load_map(args.input, extras["normalize"])
    rows = []
    beta_rows = []
    predicted = []
    failures = 0
    for i, line in enumerate(cpm.speedlines):
        cfg = replace(fit_cfg, seed=_line_seed(fit_cfg.seed, line.speed))
        try:
            result = fit_speedline(line, cfg)
        except CpmFitError as exc:
            failures += 1
            rows.append([i, _fmt(line.speed), "", "", "", "FAILED", str(exc)])
            continue
        flags = []
        if result.used_fallback:
            flags.append("fallback")
        if result.underdetermined:
            flags.append("underdetermined")
        rows.append([i, _fmt(line.speed), _fmt(result.objective),
                     result.metric.value, result.seed, "OK", ";".join(flags)])
        beta_rows.append([_fmt(line.speed)] +
                         [_fmt(v) for v in result.beta.as_array()])
        predicted.append((line.speed, result.beta))
    write_text_atomic(os.path.join(args.out, "fit_results.csv"), _csv_text(
        ["index", "speed", "objective", "metric", "seed", "status", "flags"], rows))
    write_text_atomic(os.path.join(args.out, "beta_table.csv"), _csv_text(
        ["speed", *BETA_FIELDS], beta_rows))
    write_text_atomic(os.path.join(args.out, "curves.svg"),
                      export_curve_svg(cpm.speedlines, predicted))
    return EXIT_PARTIAL if failures else EXIT_OK


def cmd_crossval(args) -> int:
    fit_cfg, pred_cfg, extras = build_configs(args)
    cpm, _ = _load_map(args.input, extras["normalize"])
    if len(cpm.speedlines) < 3:
        print("error: leave-one-out needs >= 3 speedlines", file=sys.stderr)
        return EXIT_ERROR
    reports, summaries = loo_crossval(cpm, fit_cfg, pred_cfg)

    write_text_atomic(os.path.join(args.out, "report.csv"),
                      export_report(reports, "csv", pred_cfg.eval_mode))
    write_text_atomic(os.path.join(args.out, "report.json"),
                      export_report(reports, "json", pred_cfg.eval_mode))

    sum_rows = []
    for s in summaries:
        for metric in MetricKind:
            st = s.stats[metric]
            sum_rows.append([s.kind.value.upper(), metric.value, s.n_total, s.n_failed,
                             _fmt(st["mean"]), _fmt(st["sd"]), _fmt(st["median"])])
    write_text_atomic(os.path.join(args.out, "summary.csv"), _csv_text(
        ["kind", "metric", "n_total", "n_failed", "mean", "sd", "median"], sum_rows))

    # Beta evolution: fitted nodes plus the regression sampled at 100 speeds.
    table = fit_map(cpm, fit_cfg)
    model = fit_beta_polynomials(table, pred_cfg)
    node_rows = [[_fmt(s)] + [_fmt(v) for v in b.as_array()]
                 for s, b, _ in table.entries]
    write_text_atomic(os.path.join(args.out, "beta_nodes.csv"), _csv_text(
        ["speed", *BETA_FIELDS], node_rows))
    speeds = np.linspace(table.speeds().min(), table.speeds().max(), 100)
    raw = model.evaluate_raw(speeds)
    poly_rows = [[_fmt(float(speeds[i]))] + [_fmt(float(raw[j, i])) for j in range(5)]
                 for i in range(speeds.size)]
    write_text_atomic(os.path.join(args.out, "beta_poly.csv"), _csv_text(
        ["speed", *BETA_FIELDS], poly_rows))

    predicted = [(r.target_speed, r.predicted_beta)
                 for r in reports if r.status == "ok"]
    write_text_atomic(os.path.join(args.out, "curves.svg"),
                      export_curve_svg(cpm.speedlines, predicted))
    if any(r.status != "ok" for r in reports):
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_predict(args) -> int:
    fit_cfg, pred_cfg, extras = build_configs(args)
    cpm, _ = _load_map(args.input, extras["normalize"])
    target = args.target
    holdout = any(sl.speed == target for sl in cpm.speedlines)

    if holdout:
        report = holdout_predict(cpm, target, fit_cfg, pred_cfg)
        write_text_atomic(os.path.join(args.out, "report.csv"),
                          export_report([report], "csv", pred_cfg.eval_mode))
        write_text_atomic(os.path.join(args.out, "report.json"),
                          export_report([report], "json", pred_cfg.eval_mode))
        if report.status == "ok":
            write_text_atomic(os.path.join(args.out, "curves.svg"), export_curve_svg(
                cpm.speedlines, [(target, report.predicted_beta)]))
            return EXIT_OK
        return EXIT_PARTIAL

    # Pure prediction: no held-out measurements, hence no metrics.
    table = fit_map(cpm, fit_cfg)
    model = fit_beta_polynomials(table, pred_cfg)
    try:
        beta, repair = predict_beta(model, target, pred_cfg)
    except InvalidPredictionError as exc:
        payload = {"target_speed": target, "status": "FAILED",
                   "no_ground_truth": True, "raw_values": list(exc.raw_values or [])}
        write_text_atomic(os.path.join(args.out, "prediction.json"),
                          json.dumps(payload, indent=2) + "\n")
        return EXIT_PARTIAL
    payload = {
        "target_speed": target,
        "status": "OK",
        "no_ground_truth": True,
        "beta": dict(zip(BETA_FIELDS, (float(v) for v in beta.as_array()))),
        "flags": {"cur_clamped": repair.cur_clamped,
                  "nonneg_clamped": repair.nonneg_clamped,
                  "degree_reduced": repair.degree_reduced},
    }
    write_text_atomic(os.path.join(args.out, "prediction.json"),
                      json.dumps(payload, indent=2) + "\n")
    pts = sample_curve(beta, 200)
    write_text_atomic(os.path.join(args.out, "prediction_curve.csv"), _csv_text(
        ["m_dot", "pi"], [[_fmt(p.m_dot), _fmt(p.pi)] for p in pts]))
    write_text_atomic(os.path.join(args.out, "curves.svg"),
                      export_curve_svg(cpm.speedlines, [(target, beta)]))
    return EXIT_OK


def cmd_bench(args) -> int:
    fit_cfg, _, extras = build_configs(args)
    cpm, _ = _load_map(args.input, extras["normalize"])
    repeats = extras["repeats"]
    rows = []
    summary = []
    for strategy in (InitStrategy.NONE, InitStrategy.PSO, InitStrategy.DE):
        per_line_obj = {}
        finals = {"rmse": [], "max_err": [], "ortho": []}
        for line in cpm.speedlines:
            objs = []
            for r in range(repeats):
                seed = _line_seed(fit_cfg.seed + 7919 * r, line.speed)
                cfg = replace(fit_cfg, init_strategy=strategy, seed=seed)
                try:
                    result = fit_speedline(line, cfg)
                except CpmFitError:
                    rows.append([strategy.value, _fmt(line.speed), r, seed,
                                 "", "", "", "FAILED"])
                    continue
                pm = evaluate_prediction(result.beta, line.points, fit_cfg.mode)
                m, pi = line.m_array(), line.pi_array()
                rm = pm[MetricKind.RMSE].mean
                ortho = pm[MetricKind.ORTHO].mean
                t_arr, p_arr, _ = _clamped_prediction(result.beta, m, pi, fit_cfg.mode)
                max_err = float(np.max(np.abs(t_arr - p_arr)))
                rows.append([strategy.value, _fmt(line.speed), r, seed,
                             _fmt(rm), _fmt(max_err), _fmt(ortho), "OK"])
                finals["rmse"].append(rm)
                finals["max_err"].append(max_err)
                finals["ortho"].append(ortho)
                objs.append(result.objective)
            per_line_obj[line.speed] = objs
        for key, vals in finals.items():
            arr = np.asarray(vals)
            if arr.size == 0:
                continue
            sds = [np.std(v, ddof=1) for v in per_line_obj.values() if len(v) > 1]
            obj_sd = _fmt(float(np.mean(sds))) if repeats > 1 and sds else ""
            summary.append([strategy.value, key, arr.size,
                            _fmt(float(np.median(arr))), _fmt(float(np.mean(arr))),
                            _fmt(float(np.max(arr))), obj_sd,
                            "" if repeats > 1 else "sd_undefined"])
    write_text_atomic(os.path.join(args.out, "bench.csv"), _csv_text(
        ["strategy", "speed", "repeat", "seed", "rmse", "max_err", "ortho", "status"],
        rows))
    write_text_atomic(os.path.join(args.out, "bench_summary.csv"), _csv_text(
        ["strategy", "quantity", "n", "median", "mean", "max", "objective_sd", "flags"],
        summary))
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cpmfit",
        description="Fit compressor speedlines with superellipses and predict "
                    "unknown speedlines from the parameter trend over speed.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("input", help="input CSV (header: speed,m_dot,pi)")
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--metric", choices=sorted(_METRICS))
        p.add_argument("--init", choices=sorted(_INITS))
        p.add_argument("--solver", choices=sorted(_SOLVERS))
        p.add_argument("--degree", type=int, default=None)
        p.add_argument("--mode", choices=sorted(_MODES))
        p.add_argument("--normalize-speed", dest="normalize_speed", default=None)
        p.add_argument("--target", type=float, default=None)
        p.add_argument("--repeats", type=int, default=None)

    for name, fn in (("fit", cmd_fit), ("crossval", cmd_crossval),
                     ("predict", cmd_predict), ("bench", cmd_bench)):
        p = sub.add_parser(name)
        common(p)
        p.set_defaults(func=fn)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "predict" and args.target is None:
        print("error: predict requires --target", file=sys.stderr)
        return EXIT_ERROR
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except CpmFitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
