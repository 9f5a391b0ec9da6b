"""Batch command-line front end.

Subcommands: ``fit``, ``pivot``, ``equiv-check``, ``stability-check``,
``bartlett``, ``verify-order``, ``verify-stability``,
``verify-uniformity``.  Every run writes one JSON report (deterministic
bytes for a fixed config and seed; wall-clock metadata goes to a
sidecar ``.meta.json``), optional CSV tables for the per-n metrics, and
optional PNG figures with ``--plot``.

Exit status: 0 success, 2 configuration/validation error, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .fit import FitError, fit_constrained, fit_global
from .mc import bootstrap_pvalue
from .models import Dataset, DomainError, make_model, read_csv_dataset
from .pivots import (
    AdjustmentSpec,
    PivotKind,
    beta1,
    evaluate_pivot,
    expansion_coefficients,
)
from .rng import child_seed
from .tensors import derive, estimate_tensors_mc
from .theory import cf_pvalue, equivalence_check, stability_check
from .verify import (
    ExperimentConfig,
    bartlett_experiment,
    order_of_agreement,
    stability_experiment,
    uniformity_experiment,
)

REPORT_VERSION = "1"


def _json_safe(obj):
    if isinstance(obj, dict):
        return {str(k): _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _json_safe(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return None if not np.isfinite(f) else f
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def _write_report(path: Path, config: dict, results: dict, diagnostics: dict,
                  seeds: dict, started: float) -> None:
    report = {
        "version": REPORT_VERSION,
        "config": _json_safe(config),
        "seeds": _json_safe(seeds),
        "results": _json_safe(results),
        "diagnostics": _json_safe(diagnostics),
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report, sort_keys=True, indent=2) + "\n")
    meta = {"created_unix": time.time(), "runtime_s": time.time() - started}
    path.with_suffix(path.suffix + ".meta.json").write_text(
        json.dumps(meta, sort_keys=True, indent=2) + "\n"
    )


def _write_table(path: Path, header: list[str], rows: list[list]) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(repr(x) if isinstance(x, float) else str(x) for x in row))
    path.write_text("\n".join(lines) + "\n")


def _slope_table(report) -> tuple[list[str], list[list]]:
    header = ["n", "metric", "mc_se"]
    rows = [
        [int(n), float(m), float(s)]
        for n, m, s in zip(report.n_grid, report.metric, report.mc_se)
    ]
    return header, rows


# --------------------------------------------------------------------- #
# Argument handling
# --------------------------------------------------------------------- #


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=str, default=None,
                   help="JSON file with defaults; explicit flags override")
    p.add_argument("--model", type=str, default=None,
                   help="model family (exponential, normal-mv, gamma, "
                        "ls-normal, ls-logistic, ls-t, mvn-mean)")
    p.add_argument("--df", type=float, default=None, help="Student-t degrees of freedom")
    p.add_argument("--q", type=int, default=None, help="interest dimension for mvn-mean")
    p.add_argument("--seed", type=int, default=None, help="master seed (required)")
    p.add_argument("--threads", type=int, default=None, help="worker thread cap")
    p.add_argument("--out", type=str, default=None, help="report JSON path")
    p.add_argument("--plot", action="store_true", default=None,
                   help="render PNG figures next to the report")
    p.add_argument("--wec-variant", type=str, default=None,
                   choices=["derived", "printed", "printed-dedup"])


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="likpivot",
        description="Likelihood pivots, bootstrap p-values, and order-of-accuracy experiments",
    )
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="maximum likelihood fit")
    p_fit.add_argument("--data", type=str, default=None)
    p_fit.add_argument("--theta", type=str, default=None, help="simulation truth, comma-separated")
    p_fit.add_argument("--n", type=int, default=None, help="simulated sample size")
    p_fit.add_argument("--psi0", type=str, default=None, help="also run the constrained fit here")
    _add_common(p_fit)

    p_piv = sub.add_parser("pivot", help="pivot values with CF and bootstrap p-values")
    p_piv.add_argument("--data", type=str, default=None)
    p_piv.add_argument("--theta", type=str, default=None)
    p_piv.add_argument("--n", type=int, default=None)
    p_piv.add_argument("--psi0", type=float, default=None, required=False)
    p_piv.add_argument("--pivot", type=str, default=None,
                       help="comma-separated pivot kinds (r, wo, so, woc, soc, we, wec, se, sec, rbar, awo, aso)")
    p_piv.add_argument("--b", type=int, default=None, help="bootstrap replicates")
    p_piv.add_argument("--tensor-reps", type=int, default=None,
                       help="MC tensor replicates when no closed form exists")
    p_piv.add_argument("--adjustment", type=str, default=None, choices=["none", "tierney-kadane"])
    _add_common(p_piv)

    p_eq = sub.add_parser("equiv-check", help="two-part p-value agreement conditions for a pivot pair")
    p_eq.add_argument("--pair", type=str, default=None, help="e.g. r,wo")
    p_eq.add_argument("--theta", type=str, default=None)
    p_eq.add_argument("--n", type=int, default=None)
    p_eq.add_argument("--tensor-reps", type=int, default=None)
    _add_common(p_eq)

    p_st = sub.add_parser("stability-check", help="second-order stability condition per pivot kind")
    p_st.add_argument("--pivot", type=str, default=None, help="comma-separated kinds; default all unadjusted")
    p_st.add_argument("--theta", type=str, default=None)
    p_st.add_argument("--n", type=int, default=None)
    p_st.add_argument("--tensor-reps", type=int, default=None)
    _add_common(p_st)

    p_ba = sub.add_parser("bartlett", help="simulation Bartlett factor and chi-square fit")
    p_ba.add_argument("--theta", type=str, default=None)
    p_ba.add_argument("--n", type=int, default=None)
    p_ba.add_argument("--reps", type=int, default=None)
    p_ba.add_argument("--adjustment", type=str, default=None, choices=["none", "tierney-kadane"])
    _add_common(p_ba)

    p_vo = sub.add_parser("verify-order", help="order-of-agreement slope experiment")
    p_vo.add_argument("--pair", type=str, default=None)
    p_vo.add_argument("--theta", type=str, default=None)
    p_vo.add_argument("--n-grid", type=str, default=None, help="comma-separated sample sizes")
    p_vo.add_argument("--outer", type=int, default=None)
    p_vo.add_argument("--mode", type=str, default=None, choices=["cf", "bootstrap"])
    p_vo.add_argument("--b", type=int, default=None)
    p_vo.add_argument("--adjustment", type=str, default=None, choices=["none", "tierney-kadane"])
    p_vo.add_argument("--claim", type=float, default=None)
    _add_common(p_vo)

    p_vs = sub.add_parser("verify-stability", help="conditional-vs-unconditional stability slopes")
    p_vs.add_argument("--pivot", type=str, default=None)
    p_vs.add_argument("--theta", type=str, default=None)
    p_vs.add_argument("--n-grid", type=str, default=None)
    p_vs.add_argument("--configs", type=int, default=None, help="ancillary configs per n")
    p_vs.add_argument("--grid-points", type=int, default=None)
    p_vs.add_argument("--claim", type=float, default=None)
    _add_common(p_vs)

    p_vu = sub.add_parser("verify-uniformity", help="bootstrap p-value uniformity KS test")
    p_vu.add_argument("--pivot", type=str, default=None)
    p_vu.add_argument("--theta", type=str, default=None)
    p_vu.add_argument("--n", type=int, default=None)
    p_vu.add_argument("--outer", type=int, default=None)
    p_vu.add_argument("--b", type=int, default=None)
    p_vu.add_argument("--control", action="store_true", default=None,
                      help="run the unscaled-T1 negative control instead")
    _add_common(p_vu)
    return ap


def _resolve(args: argparse.Namespace) -> dict:
    """Merge CLI flags over the optional JSON config file."""
    cfg = {}
    if getattr(args, "config", None):
        cfg = json.loads(Path(args.config).read_text())
        if not isinstance(cfg, dict):
            raise DomainError("config file must hold a JSON object")
    merged = dict(cfg)
    for key, val in vars(args).items():
        if key in ("config",) or val is None:
            continue
        merged[key.replace("_", "-")] = val
    merged["command"] = args.command
    if merged.get("seed") is None:
        raise DomainError("--seed is required (no wall-clock default)")
    if merged.get("threads") is None:
        # the only supported environment override is the worker cap
        env = os.environ.get("LIKPIVOT_THREADS")
        merged["threads"] = int(env) if env else 1
    merged.setdefault("wec-variant", "derived")
    merged.setdefault("plot", False)
    return merged


def _parse_theta(cfg: dict) -> np.ndarray:
    theta = cfg.get("theta")
    if theta is None:
        raise DomainError("--theta is required for this subcommand")
    if isinstance(theta, str):
        return np.array([float(x) for x in theta.split(",")])
    return np.asarray(theta, dtype=float)


def _make_model(cfg: dict):
    family = cfg.get("model")
    if not family:
        raise DomainError("--model is required")
    hyper = {}
    if cfg.get("df") is not None:
        hyper["df"] = cfg["df"]
    if cfg.get("q") is not None:
        hyper["q"] = cfg["q"]
    return make_model(family, **hyper)


def _load_or_simulate(cfg: dict, model) -> tuple[Dataset, dict]:
    has_data = cfg.get("data") is not None
    has_sim = cfg.get("theta") is not None and cfg.get("n") is not None
    if has_data == has_sim:
        raise DomainError("provide exactly one of --data or (--theta and --n)")
    if has_data:
        data = read_csv_dataset(cfg["data"])
        return data, {"source": "csv", "path": cfg["data"], "n": data.n}
    theta = _parse_theta(cfg)
    sim_seed = child_seed(cfg["seed"], "simulate-input")
    data = model.simulate(model.param_point(theta), int(cfg["n"]), sim_seed)
    return data, {"source": "simulated", "theta": theta.tolist(), "n": data.n,
                  "sim_seed": sim_seed}


def _adjustment_from(cfg: dict):
    kind = cfg.get("adjustment", "none") or "none"
    if kind in ("none",):
        return None
    return AdjustmentSpec(kind="tierney_kadane")


def _tensors_at(model, theta_values, n, cfg):
    theta = model.param_point(theta_values)
    tens = model.exact_tensors(theta, n)
    how = "exact"
    if tens is None:
        reps = int(cfg.get("tensor-reps") or 100000)
        tens = estimate_tensors_mc(
            model, theta, n, reps, child_seed(cfg["seed"], "tensors")
        )
        how = f"mc[{reps}]"
    return tens, how


# --------------------------------------------------------------------- #
# Subcommand implementations
# --------------------------------------------------------------------- #


def _cmd_fit(cfg: dict) -> tuple[dict, dict]:
    model = _make_model(cfg)
    data, src = _load_or_simulate(cfg, model)
    f = fit_global(model, data)
    results = {
        "theta_hat": f.theta_hat.values.tolist(),
        "loglik": f.loglik,
        "converged": f.converged,
        "iterations": f.iterations,
        "grad_norm": f.grad_norm,
        "observed_info": f.observed_info.tolist(),
    }
    if cfg.get("psi0") is not None:
        psi0 = [float(x) for x in str(cfg["psi0"]).split(",")]
        prof = fit_constrained(model, data, psi0)
        results["constrained"] = {
            "psi0": psi0,
            "theta_tilde": prof.theta_tilde.values.tolist(),
            "profile_loglik": prof.profile_loglik,
            "M1": prof.M1.tolist(),
            "M11": prof.M11.tolist(),
        }
    return results, {"input": src}


def _cmd_pivot(cfg: dict) -> tuple[dict, dict]:
    model = _make_model(cfg)
    data, src = _load_or_simulate(cfg, model)
    if cfg.get("psi0") is None:
        raise DomainError("--psi0 is required")
    psi0 = float(cfg["psi0"])
    kinds = [PivotKind.from_string(s) for s in (cfg.get("pivot") or "r").split(",")]
    adjustment = _adjustment_from(cfg)
    b = int(cfg.get("b") or 2000)
    fitted = fit_global(model, data)
    profile = fit_constrained(model, data, psi0)
    tens, how = _tensors_at(model, profile.theta_tilde.values, data.n, cfg)
    dv = derive(tens)
    results = {"psi0": psi0, "tensors": how, "pivots": {}}
    for kind in kinds:
        pv = evaluate_pivot(kind, model, data, psi0, adjustment=adjustment,
                            fit=fitted, profile=profile)
        adj_info = None
        if kind.adjusted:
            adj_info = beta1(adjustment, tens, dv,
                             theta=profile.theta_tilde.values, mode="analytic")
        coeffs = expansion_coefficients(kind, tens, dv, adj_info=adj_info,
                                        wec_variant=cfg["wec-variant"])
        p_cf = cf_pvalue(pv, coeffs, tens, dv)
        p_boot, p_boot_se = bootstrap_pvalue(
            kind, model, data, psi0, B=b,
            seed=child_seed(cfg["seed"], f"boot-{kind.value}"),
            adjustment=adjustment,
        )
        results["pivots"][kind.value] = {
            "value": pv.value,
            "cf_pvalue": p_cf,
            "bootstrap_pvalue": p_boot,
            "bootstrap_mc_se": p_boot_se,
        }
    return results, {"input": src, "B": b}


def _cmd_equiv_check(cfg: dict) -> tuple[dict, dict]:
    model = _make_model(cfg)
    theta = _parse_theta(cfg)
    n = int(cfg.get("n") or 50)
    pair = (cfg.get("pair") or "r,wo").split(",")
    if len(pair) != 2:
        raise DomainError("--pair must name two pivots, e.g. r,wo")
    kind_a, kind_b = (PivotKind.from_string(s) for s in pair)
    tens, how = _tensors_at(model, theta, n, cfg)
    dv = derive(tens)
    from .pivots import AdjustmentInfo

    dummy = AdjustmentInfo(beta1=0.0, source="analytic_tk")
    ca = expansion_coefficients(kind_a, tens, dv,
                                adj_info=dummy if kind_a.adjusted else None,
                                wec_variant=cfg["wec-variant"])
    cb = expansion_coefficients(kind_b, tens, dv,
                                adj_info=dummy if kind_b.adjusted else None,
                                wec_variant=cfg["wec-variant"])
    r1, r2 = equivalence_check(ca, cb, tens, dv)
    results = {
        "pair": [kind_a.value, kind_b.value],
        "condition1": {"residual": r1.residual, "passed": r1.passed},
        "condition2": {"residual": r2.residual, "passed": r2.passed},
        "both_pass": r1.passed and r2.passed,
        "tensors": how,
    }
    return results, {"n": n, "theta": theta.tolist()}


def _cmd_stability_check(cfg: dict) -> tuple[dict, dict]:
    model = _make_model(cfg)
    theta = _parse_theta(cfg)
    n = int(cfg.get("n") or 50)
    if cfg.get("pivot"):
        kinds = [PivotKind.from_string(s) for s in cfg["pivot"].split(",")]
    else:
        kinds = [k for k in PivotKind if not k.adjusted]
    tens, how = _tensors_at(model, theta, n, cfg)
    dv = derive(tens)
    from .pivots import AdjustmentInfo

    dummy = AdjustmentInfo(beta1=0.0, source="analytic_tk")
    results = {"tensors": how, "kinds": {}}
    for kind in kinds:
        coeffs = expansion_coefficients(kind, tens, dv,
                                        adj_info=dummy if kind.adjusted else None,
                                        wec_variant=cfg["wec-variant"])
        rep = stability_check(coeffs, dv)
        results["kinds"][kind.value] = {
            "residual": rep.residual,
            "passed": rep.passed,
        }
    return results, {"n": n, "theta": theta.tolist()}


def _cmd_bartlett(cfg: dict, out_stem: Path) -> tuple[dict, dict]:
    model = _make_model(cfg)
    theta = _parse_theta(cfg)
    n = int(cfg.get("n") or 15)
    reps = int(cfg.get("reps") or 5000)
    adjustment = _adjustment_from(cfg)
    rep = bartlett_experiment(model, theta, n, reps=reps,
                              seed=cfg["seed"], adjusted=adjustment)
    if cfg["plot"]:
        from .mc import w_batch, adjusted_w_batch
        from .plots import plot_chi2_qq
        from .rng import replicate_seeds

        seeds = replicate_seeds(cfg["seed"], f"bartlett-w-{model.name}-n{n}", reps)
        ys = model.simulate_batch(theta, n, seeds)
        q = rep["q"]
        psi0 = theta[:q] if q > 1 else float(theta[0])
        if adjustment is not None:
            w, ok = adjusted_w_batch(model, ys, psi0, adjustment)
        else:
            w, ok = w_batch(model, ys, psi0)
        plot_chi2_qq(w[ok], q, rep["factor"], out_stem.with_name(out_stem.name + "_qq.png"))
    return rep, {"reps": reps}


def _slope_common(cfg: dict, kinds, mode: str) -> ExperimentConfig:
    model = _make_model(cfg)
    theta = _parse_theta(cfg)
    n_grid = [int(x) for x in str(cfg.get("n-grid") or "20,40,80,160").split(",")]
    return ExperimentConfig(
        model=model,
        theta0=theta,
        n_grid=n_grid,
        outer=int(cfg.get("outer") or 1000),
        kinds=kinds,
        mode=mode,
        b_inner=int(cfg.get("b") or 2000),
        seed=cfg["seed"],
        adjustment=_adjustment_from(cfg),
        threads=int(cfg.get("threads") or 1),
        wec_variant=cfg["wec-variant"],
        claim=cfg.get("claim"),
    )


def _cmd_verify_order(cfg: dict, out_stem: Path) -> tuple[dict, dict]:
    pair = (cfg.get("pair") or "r,wo").split(",")
    exp_cfg = _slope_common(cfg, [PivotKind.from_string(s) for s in pair],
                            cfg.get("mode") or "cf")
    rep = order_of_agreement(exp_cfg)
    results = {
        "experiment": rep.experiment, "n_grid": rep.n_grid, "metric": rep.metric,
        "mc_se": rep.mc_se, "slope": rep.slope, "slope_se": rep.slope_se,
        "claim": rep.claim, "tol": rep.tol, "verdict": rep.verdict,
        "details": rep.details,
    }
    header, rows = _slope_table(rep)
    _write_table(out_stem.with_name(out_stem.name + "_table.csv"), header, rows)
    if cfg["plot"]:
        from .plots import plot_slope_report

        plot_slope_report(results, out_stem.with_name(out_stem.name + "_slope.png"))
    return results, {"mode": exp_cfg.mode}


def _cmd_verify_stability(cfg: dict, out_stem: Path) -> tuple[dict, dict]:
    kinds = [PivotKind.from_string(s) for s in (cfg.get("pivot") or "r").split(",")]
    model = _make_model(cfg)
    theta = _parse_theta(cfg)
    n_grid = [int(x) for x in str(cfg.get("n-grid") or "10,20,40").split(",")]
    exp_cfg = ExperimentConfig(
        model=model, theta0=theta, n_grid=n_grid,
        outer=int(cfg.get("configs") or 200), kinds=kinds, seed=cfg["seed"],
        adjustment=_adjustment_from(cfg), threads=int(cfg.get("threads") or 1),
        claim=cfg.get("claim"),
    )
    reports = stability_experiment(exp_cfg, grid_points=int(cfg.get("grid-points") or 201))
    results = {}
    for key, rep in reports.items():
        results[key] = {
            "experiment": rep.experiment, "n_grid": rep.n_grid, "metric": rep.metric,
            "mc_se": rep.mc_se, "slope": rep.slope, "slope_se": rep.slope_se,
            "claim": rep.claim, "tol": rep.tol, "verdict": rep.verdict,
            "details": rep.details,
        }
        header, rows = _slope_table(rep)
        _write_table(out_stem.with_name(out_stem.name + f"_{key}_table.csv"), header, rows)
        if cfg["plot"]:
            from .plots import plot_slope_report

            plot_slope_report(results[key], out_stem.with_name(out_stem.name + f"_{key}_slope.png"))
    return results, {"configs": exp_cfg.outer}


def _cmd_verify_uniformity(cfg: dict, out_stem: Path) -> tuple[dict, dict]:
    model = _make_model(cfg)
    theta = _parse_theta(cfg)
    rep = uniformity_experiment(
        PivotKind.from_string(cfg.get("pivot") or "r"),
        model, theta, int(cfg.get("n") or 20),
        outer=int(cfg.get("outer") or 500), B=int(cfg.get("b") or 999),
        seed=cfg["seed"], control=bool(cfg.get("control")),
        threads=int(cfg.get("threads") or 1),
    )
    pvals = rep.pop("pvalues")
    _write_table(out_stem.with_name(out_stem.name + "_pvalues.csv"),
                 ["pvalue"], [[float(p)] for p in pvals])
    if cfg["plot"]:
        from .plots import plot_pvalue_ecdf

        plot_pvalue_ecdf(pvals, out_stem.with_name(out_stem.name + "_ecdf.png"),
                         title=f"bootstrap p-values: {rep['kind']}")
    return rep, {}


# --------------------------------------------------------------------- #
# Entry point
# --------------------------------------------------------------------- #


def run(argv=None) -> int:
    started = time.time()
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        cfg = _resolve(args)
        out = Path(cfg.get("out") or f"likpivot-{cfg['command']}.json")
        out_stem = out.with_suffix("")
        if cfg["command"] == "fit":
            results, diag = _cmd_fit(cfg)
        elif cfg["command"] == "pivot":
            results, diag = _cmd_pivot(cfg)
        elif cfg["command"] == "equiv-check":
            results, diag = _cmd_equiv_check(cfg)
        elif cfg["command"] == "stability-check":
            results, diag = _cmd_stability_check(cfg)
        elif cfg["command"] == "bartlett":
            results, diag = _cmd_bartlett(cfg, out_stem)
        elif cfg["command"] == "verify-order":
            results, diag = _cmd_verify_order(cfg, out_stem)
        elif cfg["command"] == "verify-stability":
            results, diag = _cmd_verify_stability(cfg, out_stem)
        elif cfg["command"] == "verify-uniformity":
            results, diag = _cmd_verify_uniformity(cfg, out_stem)
        else:  # pragma: no cover
            raise DomainError(f"unknown command {cfg['command']}")
    except (DomainError, FileNotFoundError, json.JSONDecodeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FitError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    seeds = {"master": cfg["seed"]}
    _write_report(out, cfg, results, diag, seeds, started)
    print(f"report written to {out}")
    return 0


def main() -> None:  # console entry point
    sys.exit(run())
