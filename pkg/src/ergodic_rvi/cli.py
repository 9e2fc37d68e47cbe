"""Command-line front end: ``validate``, ``solve`` and ``compare``.

Exit codes: 0 success, 1 validation failure, 2 config error, 3 solver
divergence, 4 comparison failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from ergodic_rvi import ctmc_rvi, discrete_rvi, pde_rvi
from ergodic_rvi.config import ConfigError, RunConfig, load_config
from ergodic_rvi.discrete_rvi import ReducibleChainError
from ergodic_rvi.model import SolveReport, StepRecord, ValueField, validate

EXIT_OK, EXIT_INVALID, EXIT_CONFIG, EXIT_DIVERGED, EXIT_COMPARE = 0, 1, 2, 3, 4
THREADS_ENV = "ERGODIC_RVI_THREADS"
TRACE_COLUMNS = ("stamp", "beta_estimate", "span", "sup_change", "hjb_residual")


def _fmt(x) -> str:
    return format(float(x), ".17g")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


def write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n")


def write_trace(path: Path, report: SolveReport) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        for rec in report.records:
            w.writerow([_fmt(getattr(rec, c)) for c in TRACE_COLUMNS])


def _write_chain_field(path: Path, report: SolveReport) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["state", "value", "policy"])
        pol = report.policy if report.policy is not None else [""] * len(report.terminal_value)
        for i, (v, p) in enumerate(zip(report.terminal_value.values, pol)):
            w.writerow([i, _fmt(v), p])


def _threads(n):
    if n is None:
        env = os.environ.get(THREADS_ENV)
        n = int(env) if env else None
    if not n:
        return nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=int(n))


# ---------------------------------------------------------------------------
# solver dispatch
# ---------------------------------------------------------------------------

def _pde_beta(cfg: RunConfig):
    if cfg.options.get("beta") is not None:
        return float(cfg.options["beta"])
    if cfg.builtin == "lq":
        return _lq_oracle(cfg).beta
    raise ConfigError("options.beta", "pde-vi needs beta (no closed form for this problem)")


def _lq_oracle(cfg: RunConfig):
    problem = cfg.model
    core = problem.half_width - _core_margin(cfg)
    return pde_rvi.lq_exact(float(np.max(np.abs(problem.actions))), core=core)


def _core_margin(cfg: RunConfig) -> float:
    m = cfg.options.get("core_margin")
    return 0.5 * cfg.model.half_width if m is None else float(m)


def run_solver(cfg: RunConfig):
    """Run the configured algorithm; returns ``(report, extra)`` with ``extra`` holding runs."""
    o, model = cfg.options, cfg.model
    alg = cfg.algorithm
    if alg == "white":
        return discrete_rvi.solve_white(model, o["tol"], int(o["max_iters"]), o["damping"],
                                        blowup=o["blowup"],
                                        record_every=int(o["record_every"])), {}
    if alg == "bertsekas":
        gamma = discrete_rvi.gamma_schedule(o["gamma"], o["gamma_schedule"])
        return discrete_rvi.solve_bertsekas(model, o["tol"], int(o["max_iters"]), gamma,
                                            blowup=o["blowup"],
                                            record_every=int(o["record_every"])), {}
    if alg in ("ctmc-rvi", "ctmc-vi"):
        mode = alg.split("-")[1]
        beta = None
        if mode == "vi":
            beta = o["beta"] if o.get("beta") is not None else ctmc_rvi.exact_ctmc(model).beta
        trace, report = ctmc_rvi.solve_ctmc(model, mode, beta, dt=o["dt"], T=o["T"],
                                            method=o["method"],
                                            record_every=int(o["record_every"]), tol=o["tol"],
                                            blowup=o["blowup"])
        return report, {"trace": trace}
    if alg in ("pde-rvi", "pde-vi"):
        mode = alg.split("-")[1]
        beta = _pde_beta(cfg) if mode == "vi" else None
        run, report = pde_rvi.solve_parabolic(
            model, None, mode, beta, T=o["T"], dt=o["dt"], record_every=o["record_every"],
            tol=o["tol"], core_margin=_core_margin(cfg), blowup=o["blowup"])
        return report, {"run": run}
    if alg == "oracle":
        sol = _oracle(cfg)
        value = sol["value"]
        report = SolveReport((StepRecord(0, sol["beta"], float(np.ptp(value.values)), 0.0,
                                         sol["residual"]),),
                             value, sol["beta"], "converged", 0, sol.get("policy"))
        return report, {}
    raise ConfigError("algorithm", f"unknown algorithm {alg!r}")


def _oracle(cfg: RunConfig) -> dict:
    model = cfg.model
    if cfg.kind == "mdp":
        sol = discrete_rvi.exact_ergodic(model)
    elif cfg.kind == "ctmc":
        sol = ctmc_rvi.exact_ctmc(model)
    else:
        if cfg.builtin != "lq":
            raise ConfigError("model", "no oracle available for this diffusion problem")
        lq = _lq_oracle(cfg)
        v = lq.value(model.x)
        value = ValueField(v - v[model.anchor], model.anchor)
        return {"value": value, "beta": lq.beta,
                "residual": pde_rvi.hjb_residual(model, value, lq.beta, _core_margin(cfg)),
                "policy": None}
    return {"value": sol.value, "beta": sol.beta, "residual": sol.residual, "policy": sol.policy}


def _terminal_residual(cfg: RunConfig, report: SolveReport) -> float:
    v, beta = report.terminal_value.values, report.terminal_beta
    if cfg.kind == "mdp":
        return discrete_rvi.poisson_residual(cfg.model, v - v[cfg.model.anchor], beta)
    if cfg.kind == "ctmc":
        return ctmc_rvi.ctmc_hjb_residual(cfg.model, v, beta)
    return pde_rvi.hjb_residual(cfg.model, v, beta, _core_margin(cfg))


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _load(path, err):
    try:
        return load_config(path)
    except ConfigError as exc:
        print(f"config error: {exc}", file=err)
        raise SystemExit(exc.code)


def cmd_validate(config_path, out=None, err=None) -> int:
    out, err = out or sys.stdout, err or sys.stderr
    cfg = _load(config_path, err)
    report = validate(cfg.model)
    if report.ok:
        print(f"{config_path}: ok ({cfg.kind})", file=out)
        return EXIT_OK
    for line in report.lines():
        print(f"{config_path}: {line}", file=out)
    return EXIT_INVALID


def cmd_solve(config_path, out_dir, out=None, err=None) -> int:
    out, err = out or sys.stdout, err or sys.stderr
    cfg = _load(config_path, err)
    report = validate(cfg.model)
    if not report.ok:
        for line in report.lines():
            print(f"{config_path}: {line}", file=err)
        return EXIT_INVALID
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        result, extra = run_solver(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=err)
        return exc.code
    except ReducibleChainError as exc:
        print(f"oracle error: {exc}", file=err)
        return EXIT_INVALID
    write_trace(out_dir / "trace.csv", result)
    if cfg.resolved["output"].get("field_csv"):
        if "run" in extra:
            pde_rvi.write_field_csv(extra["run"], cfg.model, out_dir / "field.csv")
        else:
            _write_chain_field(out_dir / "field.csv", result)
    finite = np.all(np.isfinite(result.terminal_value.values))
    summary = {
        "config": cfg.resolved,
        "status": result.status,
        "steps": result.steps,
        "terminal_beta": result.terminal_beta,
        "terminal_residual": _terminal_residual(cfg, result) if finite else None,
        "terminal_value": result.terminal_value.values,
        "policy": result.policy,
    }
    write_json(out_dir / "summary.json", summary)
    print(f"status={result.status} beta={_fmt(result.terminal_beta)}", file=out)
    return EXIT_DIVERGED if result.status == "diverged" else EXIT_OK


def compare(cfg: RunConfig) -> dict:
    """Run solver and oracle; return the machine-readable comparison."""
    result, extra = run_solver(cfg)
    oracle = _oracle(cfg)
    tol = cfg.compare
    v_hat = result.terminal_value.values - result.terminal_value.values[cfg.model.anchor]
    v_star = oracle["value"].values
    if cfg.kind == "diffusion":
        mask = cfg.model.core_mask(_core_margin(cfg))
    else:
        mask = np.ones(v_hat.size, dtype=bool)
    value_err = float(np.max(np.abs(v_hat[mask] - v_star[mask])))
    beta_err = abs(result.terminal_beta - oracle["beta"])
    if tol["relative"]:
        value_err /= max(float(np.max(np.abs(v_star[mask]))), np.finfo(float).tiny)
        beta_err /= abs(oracle["beta"])
    checks = {
        "beta": {"error": beta_err, "tol": tol["beta_tol"], "passed": beta_err <= tol["beta_tol"]},
        "value": {"error": value_err, "tol": tol["value_tol"],
                  "passed": value_err <= tol["value_tol"]},
    }
    if cfg.kind == "diffusion" and cfg.algorithm == "pde-rvi":
        checks.update(_pde_checks(cfg, extra["run"], oracle["beta"]))
    return {
        "config": cfg.resolved,
        "status": result.status,
        "beta_hat": result.terminal_beta,
        "beta_oracle": oracle["beta"],
        "checks": checks,
        "passed": all(c["passed"] for c in checks.values()) and result.status != "diverged",
    }


def _pde_checks(cfg: RunConfig, rvi_run, beta: float) -> dict:
    o, problem = cfg.options, cfg.model
    vi_run, _ = pde_rvi.solve_parabolic(problem, rvi_run.snapshots[0], "vi", beta, T=o["T"],
                                        dt=rvi_run.dt, record_every=o["record_every"],
                                        core_margin=_core_margin(cfg))
    ident = pde_rvi.check_vv_identity(rvi_run, vi_run, beta)
    checks = {"vv_identity": {"error": ident.exact_residual, "tol": 1e-9,
                              "continuum_residual": ident.continuum_residual,
                              "passed": ident.exact_residual <= 1e-9}}
    if problem.lyapunov is not None:
        term = rvi_run.snapshots[-1]
        bound = pde_rvi.check_bound(term - term[problem.anchor], vi_run, problem,
                                    _core_margin(cfg))
        checks["bound"] = {"worst_ratio": bound.worst_ratio, "violations": bound.n_violations,
                           "sup_weighted_norm": bound.sup_weighted_norm, "passed": bound.passed}
    return checks


def cmd_compare(config_path, out_dir=None, out=None, err=None) -> int:
    out, err = out or sys.stdout, err or sys.stderr
    cfg = _load(config_path, err)
    report = validate(cfg.model)
    if not report.ok:
        for line in report.lines():
            print(f"{config_path}: {line}", file=err)
        return EXIT_INVALID
    try:
        result = compare(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=err)
        return exc.code
    except ReducibleChainError as exc:
        print(f"oracle error: {exc}", file=err)
        return EXIT_INVALID
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        write_json(Path(out_dir) / "compare.json", result)
    for name, c in result["checks"].items():
        err_val = c.get("error", c.get("worst_ratio"))
        print(f"{name}: {'PASS' if c['passed'] else 'FAIL'} ({_fmt(err_val)})", file=out)
    print("PASS" if result["passed"] else "FAIL", file=out)
    if result["status"] == "diverged":
        return EXIT_DIVERGED
    return EXIT_OK if result["passed"] else EXIT_COMPARE


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ergodic-rvi", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("validate", "solve", "compare"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON problem/run configuration")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--threads", type=int, default=None,
                       help=f"worker threads (overrides ${THREADS_ENV})")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with _threads(args.threads):
            if args.command == "validate":
                return cmd_validate(args.config)
            if args.command == "solve":
                return cmd_solve(args.config, args.out)
            return cmd_compare(args.config, args.out)
    except SystemExit as exc:
        return int(exc.code)


if __name__ == "__main__":
    sys.exit(main())
