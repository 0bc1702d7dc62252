"""Experiment runner: preset registry, config ingestion, seeded execution,
trace/summary emission.

Exit codes: 0 success, 2 config error, 3 infeasibility, 4 divergence when
convergence was requested.
"""

from __future__ import annotations

import argparse
import json
import multiprocessing
import os
import sys

import numpy as np

from .core import gradients, grde, inner_riccati, objective
from .equiv import formulation_from_dict, verify_equivalence
from .errors import (
    AssumptionViolated,
    AttenuationFeasibility,
    ConfigError,
    InfeasibleGain,
    RiskFeasibility,
    SingularLambda,
    SingularMatrix,
)
from .exact import LoopConfig, RunTrace, double_loop, gda_variant
from .presets import PROVENANCE, get_preset, preset_names
from .system import GainSchedule, TimeVaryingSystem, compactify
from .zeroth import SeededStream, ZoConfig, zo_double_loop, zo_inner, zo_outer

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_DIVERGED = 4

_SOLVER_ERRORS = (
    InfeasibleGain,
    RiskFeasibility,
    AttenuationFeasibility,
    SingularLambda,
    SingularMatrix,
    AssumptionViolated,
)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    return obj


def _load_json(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"config parse error in {path} at line {exc.lineno} column {exc.colno}: {exc.msg}"
        ) from exc


def _resolve_config(args) -> dict:
    if bool(args.preset) == bool(args.config):
        raise ConfigError("provide exactly one of --preset or --config")
    cfg = get_preset(args.preset) if args.preset else _load_json(args.config)
    if args.scheme is not None:
        cfg["scheme"] = args.scheme
    if args.seed is not None:
        cfg["seed"] = int(args.seed)
        if isinstance(cfg.get("zo"), dict):
            cfg["zo"]["seed"] = int(args.seed)
    return cfg


def _apply_scheme(cfg: dict) -> dict:
    """Fold the selected scheme's overrides into the mode sub-config."""
    schemes = cfg.get("schemes")
    if not schemes:
        return cfg
    name = cfg.get("scheme")
    if name not in schemes:
        raise ConfigError(
            f"unknown scheme {name!r}; available: {', '.join(schemes)}"
        )
    overrides = dict(schemes[name])
    mode = cfg.get("mode")
    if mode == "double_loop":
        cfg["rules"] = overrides.pop("rules", cfg.get("rules"))
        cfg.setdefault("loop", {}).update(overrides)
    elif mode == "gda":
        cfg.setdefault("gda", {}).update(overrides)
    elif mode in ("zo_double_loop", "zo_inner"):
        if "rule" in overrides:
            cfg["rule"] = overrides.pop("rule")
        cfg.setdefault("zo", {}).update(overrides)
    elif mode == "zo_outer":
        cfg.setdefault("zo", {}).update(overrides)
    else:
        raise ConfigError(f"schemes are not supported for mode {mode!r}")
    return cfg


def _system_of(cfg: dict) -> TimeVaryingSystem:
    try:
        payload = cfg["system"]
    except KeyError:
        raise ConfigError("config is missing the system block") from None
    return TimeVaryingSystem.from_dict(payload)


def _gain_of(cfg: dict, key: str, required: bool = True) -> GainSchedule | None:
    gains = cfg.get("gains", {})
    if key not in gains:
        if required:
            raise ConfigError(f"config is missing gains.{key}")
        return None
    return GainSchedule.from_dict(gains[key])


def _loop_config(cfg: dict) -> LoopConfig:
    loop = cfg.get("loop")
    if not isinstance(loop, dict):
        raise ConfigError("config is missing the loop block")
    try:
        return LoopConfig(**loop)
    except TypeError as exc:
        raise ConfigError(f"bad loop block: {exc}") from exc


def _zo_config(cfg: dict) -> ZoConfig:
    zo = cfg.get("zo")
    if not isinstance(zo, dict):
        raise ConfigError("config is missing the zo block")
    return ZoConfig.from_dict(zo)


def _schedule_distance(a: GainSchedule, b: GainSchedule) -> float:
    return float(
        np.sqrt(
            sum(
                float(np.linalg.norm(x - y)) ** 2
                for x, y in zip(a.blocks, b.blocks)
            )
        )
    )


def _trace_metrics(trace: RunTrace) -> dict:
    summary = trace.summary()
    rows = trace.rows
    metrics = dict(summary)
    metrics.pop("warnings", None)
    if rows:
        lams = [r.lambda_min_H for r in rows if np.isfinite(r.lambda_min_H)]
        metrics["min_lambda_min_H"] = min(lams) if lams else float("nan")
        metrics["initial_objective"] = rows[0].objective
        metrics["objective_decreased"] = bool(
            rows[-1].objective < rows[0].objective
        )
        finite = [abs(r.objective) for r in rows if np.isfinite(r.objective)]
        metrics["max_abs_objective"] = max(finite) if finite else float("inf")
        base = abs(rows[0].objective)
        metrics["growth_factor"] = (
            float("inf") if base == 0.0 else metrics["max_abs_objective"] / base
        )
        if not np.isfinite(rows[-1].objective):
            metrics["objective_decreased"] = False
    return metrics


def _run_double_loop(cfg: dict):
    sys_ = _system_of(cfg)
    game = compactify(sys_)
    K0 = _gain_of(cfg, "K0")
    L0 = _gain_of(cfg, "L0", required=False)
    rules = cfg.get("rules")
    if not rules or len(rules) != 2:
        raise ConfigError("double_loop needs rules = [inner, outer]")
    lc = _loop_config(cfg)
    init = inner_riccati(game, K0)
    K, trace = double_loop(game, K0, (rules[0], rules[1]), lc, L0=L0)
    metrics = _trace_metrics(trace)
    metrics["initial_lambda_min_H"] = init.lambda_min_H
    nash = grde(sys_)
    metrics["assumption_ok"] = nash.assumption_ok
    metrics["nash_value"] = nash.value
    metrics["nash_gain_distance"] = _schedule_distance(K, nash.Kstar)
    return metrics, trace


def _run_gda(cfg: dict):
    sys_ = _system_of(cfg)
    game = compactify(sys_)
    K0 = _gain_of(cfg, "K0")
    L0 = _gain_of(cfg, "L0")
    gda = cfg.get("gda")
    if not isinstance(gda, dict):
        raise ConfigError("config is missing the gda block")
    try:
        trace = gda_variant(
            gda["scheme"],
            game,
            K0,
            L0,
            eta=float(gda["eta"]),
            alpha=float(gda["alpha"]),
            ascent_steps=int(gda.get("ascent_steps", 1)),
            iters=int(gda["iters"]),
            divergence_cap=float(gda.get("divergence_cap", 1e12)),
            trace_stride=int(gda.get("trace_stride", 1)),
        )
    except KeyError as exc:
        raise ConfigError(f"gda block is missing {exc}") from exc
    return _trace_metrics(trace), trace


def _run_zo_double_loop(cfg: dict):
    sys_ = _system_of(cfg)
    game = compactify(sys_)
    K0 = _gain_of(cfg, "K0")
    L0 = _gain_of(cfg, "L0")
    zc = _zo_config(cfg)
    rule = cfg.get("rule", "pg")
    init = inner_riccati(game, K0)
    K, trace = zo_double_loop(game, K0, L0, rule, zc, SeededStream(zc.seed))
    metrics = _trace_metrics(trace)
    metrics["initial_lambda_min_H"] = init.lambda_min_H
    return metrics, trace


def _run_zo_outer(cfg: dict):
    sys_ = _system_of(cfg)
    game = compactify(sys_)
    K0 = _gain_of(cfg, "K0")
    zc = _zo_config(cfg)
    init = inner_riccati(game, K0)
    K, trace = zo_outer(game, K0, zc, SeededStream(zc.seed))
    metrics = _trace_metrics(trace)
    metrics["initial_lambda_min_H"] = init.lambda_min_H
    return metrics, trace


def _run_zo_inner(cfg: dict):
    sys_ = _system_of(cfg)
    game = compactify(sys_)
    K0 = _gain_of(cfg, "K0")
    L0 = _gain_of(cfg, "L0")
    zc = _zo_config(cfg)
    rule = cfg.get("rule", "pg")
    ref = inner_riccati(game, K0)
    L, trace = zo_inner(game, K0, L0, rule, zc, SeededStream(zc.seed))
    metrics = _trace_metrics(trace)
    metrics["initial_lambda_min_H"] = ref.lambda_min_H
    metrics["best_response_gap"] = ref.value - objective(game, K0, L)
    cosines = [
        r.estimator_cosine
        for r in trace.rows
        if r.estimator_cosine is not None
    ]
    metrics["mean_estimator_cosine"] = (
        float(np.mean(cosines)) if cosines else None
    )
    return metrics, trace


def _midpoint(a: GainSchedule, b: GainSchedule) -> GainSchedule:
    return GainSchedule(
        a.player,
        tuple(0.5 * (x + y) for x, y in zip(a.blocks, b.blocks)),
    )


def _run_landscape(cfg: dict):
    sys_ = _system_of(cfg)
    game = compactify(sys_)
    scenes = cfg.get("scenes")
    if not scenes:
        raise ConfigError("landscape config needs a scenes list")
    metrics: dict = {}
    for scene in scenes:
        label = scene["label"]
        p1 = GainSchedule.from_dict(scene["points"][0])
        p2 = GainSchedule.from_dict(scene["points"][1])
        p3 = _midpoint(p1, p2)
        vary = scene["vary"]
        if vary == "L":
            K = GainSchedule.from_dict(scene["fixed"])
            values = [objective(game, K, Lp) for Lp in (p1, p2, p3)]
            metrics[f"margin_{label}"] = inner_riccati(game, K).lambda_min_H
        elif vary == "K":
            L = GainSchedule.from_dict(scene["fixed"])
            values = [objective(game, Kp, L) for Kp in (p1, p2, p3)]
        elif vary == "K_outer":
            values = []
            for i, Kp in enumerate((p1, p2, p3), start=1):
                sol = inner_riccati(game, Kp)
                values.append(sol.value)
                metrics[f"lambda_min_H_{label}_{i}"] = sol.lambda_min_H
        else:
            raise ConfigError(f"unknown landscape vary kind {vary!r}")
        metrics[f"{label}_values"] = values
        metrics[label] = 0.5 * (values[0] + values[1]) - values[2]
    return metrics, None


def _run_scan(cfg: dict):
    sys_ = _system_of(cfg)
    game = compactify(sys_)
    scan = cfg.get("scan")
    if not isinstance(scan, dict):
        raise ConfigError("scan config needs a scan block")
    base = float(scan["base_gain"])
    eps_list = [float(e) for e in scan["eps"]]
    values = []
    margins = []
    for eps in eps_list:
        block = np.full((sys_.d, sys_.m), base - eps)
        K = GainSchedule.constant("K", block, sys_.horizon)
        sol = inner_riccati(game, K)
        values.append(sol.value)
        margins.append(sol.lambda_min_H)
    metrics = {
        "scan_eps": eps_list,
        "scan_values": values,
        "scan_margins": margins,
        "limit_value": values[-1],
        "limit_margin": margins[-1],
    }
    return metrics, None


def _run_grde(cfg: dict):
    sys_ = _system_of(cfg)
    game = compactify(sys_)
    nash = grde(sys_)
    grads = gradients(game, nash.Kstar, nash.Lstar)
    stationarity = grads.F.norm() + grads.E.norm()
    metrics = {
        "value": nash.value,
        "assumption_ok": nash.assumption_ok,
        "min_margin": min(nash.margins),
        "stationarity": stationarity,
    }
    return metrics, None


def _run_equiv(cfg: dict):
    payload = cfg.get("formulation_system")
    if not isinstance(payload, dict):
        raise ConfigError("equiv config needs a formulation_system block")
    spec = formulation_from_dict(payload)
    report = verify_equivalence(spec, tol=float(cfg.get("tol", 1e-7)))
    metrics = {
        "formulation": report.formulation,
        "stationarity": report.stationarity,
        "max_gain_discrepancy": max(report.gain_discrepancies),
        "margins": list(report.margins),
        "equivalence_ok": report.ok,
    }
    return metrics, None


_RUNNERS = {
    "double_loop": _run_double_loop,
    "gda": _run_gda,
    "zo_double_loop": _run_zo_double_loop,
    "zo_outer": _run_zo_outer,
    "zo_inner": _run_zo_inner,
    "landscape": _run_landscape,
    "scan": _run_scan,
    "grde": _run_grde,
    "equiv": _run_equiv,
}


def _evaluate_checks(cfg: dict, metrics: dict) -> tuple[list, bool]:
    scheme = cfg.get("scheme")
    results = []
    all_ok = True
    for check in cfg.get("checks", []):
        wanted = check.get("schemes")
        if wanted is not None and scheme not in wanted:
            continue
        metric = check["metric"]
        achieved = metrics.get(metric)
        entry = {"metric": metric, "achieved": achieved}
        if achieved is None:
            passed = False
        elif "expected" in check and "tol" in check:
            expected = check["expected"]
            tol = check["tol"]
            entry.update(expected=expected, tol=tol)
            if check.get("relative"):
                passed = abs(achieved - expected) <= tol * abs(expected)
            else:
                passed = abs(achieved - expected) <= tol
        elif "equals" in check:
            entry.update(expected=check["equals"])
            passed = achieved == check["equals"]
        elif "op" in check:
            threshold = check["threshold"]
            entry.update(op=check["op"], threshold=threshold)
            if check["op"] == "le":
                passed = achieved <= threshold
            elif check["op"] == "ge":
                passed = achieved >= threshold
            else:
                raise ConfigError(f"unknown check op {check['op']!r}")
        else:
            raise ConfigError(f"check on {metric!r} has no comparison")
        entry["passed"] = bool(passed)
        all_ok &= bool(passed)
        results.append(entry)
    return results, all_ok


def _validate(cfg: dict) -> None:
    """Construct every runtime object the config references."""
    cfg = _apply_scheme(dict(cfg))
    mode = cfg.get("mode")
    if mode not in _RUNNERS:
        raise ConfigError(
            f"unknown mode {mode!r}; available: {', '.join(_RUNNERS)}"
        )
    if mode != "equiv":
        _system_of(cfg)
    if mode in ("double_loop", "gda", "zo_double_loop", "zo_outer", "zo_inner"):
        _gain_of(cfg, "K0")
    if mode in ("gda", "zo_double_loop", "zo_inner"):
        _gain_of(cfg, "L0")
    if mode == "double_loop":
        _loop_config(cfg)
        rules = cfg.get("rules")
        if not rules or len(rules) != 2:
            raise ConfigError("double_loop needs rules = [inner, outer]")
    if mode in ("zo_double_loop", "zo_outer", "zo_inner"):
        _zo_config(cfg)
    if mode == "equiv":
        payload = cfg.get("formulation_system")
        if not isinstance(payload, dict):
            raise ConfigError("equiv config needs a formulation_system block")
        formulation_from_dict(payload)


def run_experiment(cfg: dict, out_dir: str) -> int:
    """Execute one config, write trace.csv/summary.json, return exit code."""
    cfg = _apply_scheme(dict(cfg))
    mode = cfg.get("mode")
    if mode not in _RUNNERS:
        raise ConfigError(
            f"unknown mode {mode!r}; available: {', '.join(_RUNNERS)}"
        )
    os.makedirs(out_dir, exist_ok=True)
    summary = {
        "name": cfg.get("name"),
        "mode": mode,
        "scheme": cfg.get("scheme"),
        "seed": cfg.get("seed"),
        "error": None,
    }
    exit_code = EXIT_OK
    metrics: dict = {}
    trace = None
    try:
        metrics, trace = _RUNNERS[mode](cfg)
    except _SOLVER_ERRORS as exc:
        summary["error"] = {
            "type": type(exc).__name__,
            "message": str(exc),
        }
        step = getattr(exc, "step", None)
        if step is not None:
            summary["error"]["step"] = step
        iteration = getattr(exc, "iteration", None)
        if iteration is not None:
            summary["error"]["iteration"] = iteration
        exit_code = EXIT_INFEASIBLE
    if trace is not None:
        trace.to_csv(os.path.join(out_dir, "trace.csv"))
        summary["warnings"] = list(trace.warnings)
    checks, checks_ok = _evaluate_checks(cfg, metrics)
    summary["metrics"] = metrics
    summary["reference_checks"] = checks
    summary["checks_passed"] = checks_ok
    for key in ("status", "converged", "diverged", "iterations",
                "final_objective", "final_grad_norm", "final_lambda_min_H",
                "ir_ok"):
        if key in metrics:
            summary[key] = metrics[key]
    if (
        exit_code == EXIT_OK
        and cfg.get("expect") == "converged"
        and metrics.get("diverged")
    ):
        exit_code = EXIT_DIVERGED
    with open(os.path.join(out_dir, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(_jsonable(summary), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return exit_code


def _sweep_entry(payload: tuple[dict, str]) -> int:
    cfg, out_dir = payload
    try:
        return run_experiment(cfg, out_dir)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def _materialize(entry: dict) -> dict:
    if "preset" in entry:
        cfg = get_preset(entry["preset"])
        for key, value in entry.items():
            if key == "preset":
                continue
            if key == "zo" and isinstance(cfg.get("zo"), dict):
                cfg["zo"].update(value)
            elif key == "loop" and isinstance(cfg.get("loop"), dict):
                cfg["loop"].update(value)
            else:
                cfg[key] = value
        return cfg
    return entry


def _cmd_run(args) -> int:
    cfg = _resolve_config(args)
    if "sweep" in cfg:
        entries = [_materialize(e) for e in cfg["sweep"]]
        out_root = args.out or "runs"
        payloads = []
        for i, entry in enumerate(entries):
            label = entry.get("name") or f"entry{i}"
            payloads.append((entry, os.path.join(out_root, f"{i:02d}_{label}")))
        jobs = max(1, int(args.jobs))
        if jobs == 1:
            codes = [_sweep_entry(p) for p in payloads]
        else:
            with multiprocessing.Pool(jobs) as pool:
                codes = pool.map(_sweep_entry, payloads)
        return max(codes) if codes else EXIT_OK
    out_dir = args.out or os.path.join("runs", cfg.get("name") or "experiment")
    return run_experiment(cfg, out_dir)


def _cmd_list_presets(_args) -> int:
    for name in preset_names():
        print(f"{name:24} {PROVENANCE[name]}")
    return EXIT_OK


def _cmd_validate(args) -> int:
    cfg = _resolve_config(args)
    if "sweep" in cfg:
        for entry in cfg["sweep"]:
            _validate(_materialize(entry))
    else:
        _validate(cfg)
    print("config ok")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lqgames",
        description="Benchmark runner for two-player LQ policy optimization.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute one experiment or a sweep")
    run_p.add_argument("--preset", help="named preset to run")
    run_p.add_argument("--config", help="path to a JSON config")
    run_p.add_argument("--scheme", help="scheme selector override")
    run_p.add_argument("--seed", type=int, help="seed override")
    run_p.add_argument("--out", help="output directory")
    run_p.add_argument("--jobs", type=int, default=1,
                       help="parallel workers for sweep configs")
    run_p.set_defaults(func=_cmd_run)

    list_p = sub.add_parser("list-presets", help="list preset names")
    list_p.set_defaults(func=_cmd_list_presets)

    val_p = sub.add_parser("validate-config", help="check a config and exit")
    val_p.add_argument("--preset", help="named preset to validate")
    val_p.add_argument("--config", help="path to a JSON config")
    val_p.add_argument("--scheme", help="scheme selector override")
    val_p.add_argument("--seed", type=int, help="seed override")
    val_p.set_defaults(func=_cmd_validate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
