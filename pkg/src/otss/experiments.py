"""Config-driven experiment runners: benchmark panels, sweeps, theory checks
and runtime comparisons. Every runner writes delimited files whose content is
a pure function of the config."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import theorycheck as tc
from .benchgen import BenchConfig, TwoExpertTruth, generate_benchmark, stream
from .evaluation import SEED_COLUMNS, evaluate, gate_effective_experts, paired_bootstrap, time_fit
from .models import METHODS, EMMonotonicityError, FitConfig, fit_method

log = logging.getLogger(__name__)

SIMPLEX_TOL = 1e-12
HYPER_KEYS = ("K", "K_final", "k", "rank", "ridge", "restart")
SWEEP_AXES = ("n_train", "tau", "nuisance_scale", "rand_level")
TOP_KEYS = {"name", "kind", "benchmark", "variants", "methods", "K", "fit", "seeds", "bootstrap_resamples",
            "sweep", "theory", "plots"}


class ConfigError(ValueError):
    pass


# -- config -----------------------------------------------------------------------


def load_config(path):
    """Parse a JSON config, reporting the line and column of syntax errors."""
    text = Path(path).read_text()
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}:{e.lineno}:{e.colno}: {e.msg}") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be an object")
    unknown = set(cfg) - TOP_KEYS
    if unknown:
        line = _line_of(text, sorted(unknown)[0])
        raise ConfigError(f"{path}:{line}: unknown key(s) {sorted(unknown)}")
    return cfg


def _line_of(text, key):
    for i, line in enumerate(text.splitlines(), 1):
        if f'"{key}"' in line:
            return i
    return 0


def method_specs(cfg):
    specs = []
    for m in cfg.get("methods", []):
        spec = {"name": m} if isinstance(m, str) else dict(m)
        if "name" not in spec:
            raise ConfigError(f"method entry without a name: {m!r}")
        if spec["name"] not in METHODS:
            raise ConfigError(f"unknown method {spec['name']!r}; choose from {sorted(METHODS)}")
        spec.setdefault("label", spec["name"])
        spec.setdefault("fit", {})
        specs.append(spec)
    if not specs:
        raise ConfigError("config needs at least one method")
    labels = [s["label"] for s in specs]
    if len(set(labels)) != len(labels):
        raise ConfigError(f"duplicate method labels {labels}")
    return specs


def seeds_of(cfg, seed_offset=0):
    seeds = [int(s) + seed_offset for s in cfg.get("seeds", list(range(8)))]
    if len(set(seeds)) != len(seeds):
        raise ConfigError("seeds must be distinct")
    return seeds


def bench_variants(cfg):
    base = dict(cfg.get("benchmark", {}))
    variants = cfg.get("variants") or {cfg.get("name", "benchmark"): {}}
    out = {}
    for name, over in variants.items():
        merged = {**base, **over}
        try:
            BenchConfig(**merged)
        except TypeError as e:
            raise ConfigError(f"variant {name!r}: {e}") from None
        out[name] = merged
    return out


def config_hash(obj):
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


# -- csv ----------------------------------------------------------------------------


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (dict, list)):
        return json.dumps(v, sort_keys=True)
    return str(v)


def write_csv(path, columns, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in columns])
    Path(path).write_text(buf.getvalue(), newline="")


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# -- one seed ------------------------------------------------------------------------


def _selected(meta):
    return {k: meta[k] for k in HYPER_KEYS if k in meta}


def _simplex_ok(model, X):
    if not model.has_gate:
        return True
    A = model.gate(X)
    return bool(np.all(A >= 0) and np.all(np.abs(A.sum(axis=1) - 1) <= SIMPLEX_TOL))


def run_seed(task):
    """Generate one benchmark, fit and evaluate every method on it.

    Method failures become rows with a non-ok status; nothing here raises.
    """
    variant, bench, specs, fit_over, K_default, seed = task
    bcfg = BenchConfig(**{**bench, "seed": seed})
    b = generate_benchmark(bcfg)
    K_default = K_default or bcfg.K
    rows, timings, audits = [], [], []
    for spec in specs:
        fcfg = FitConfig(**{**fit_over, **spec["fit"], "seed": seed})
        K = int(spec.get("K", K_default))
        row = {"benchmark": variant, "seed": seed, "method": spec["label"]}
        try:
            model, secs = time_fit(lambda: fit_method(spec["name"], b.train, b.val, K, fcfg))
            metrics, out = evaluate(model, b.X_eval, b.W_eval, b.library)
            audit = tc.regret_transfer_audit(b.W_eval, model.predict_w(b.X_eval), b.library)
            ok_simplex = _simplex_ok(model, b.X_eval)
            status = "ok"
            if audit["violations"]:
                status = "transfer_violation"
            elif not ok_simplex:
                status = "simplex_violation"
            row.update(metrics)
            row.update({
                "status": status,
                "gate_entropy_eff": gate_effective_experts(model, b.X_eval),
                "transfer_violations": audit["violations"],
                "param_count": model.param_count,
                "selected_hypers": _selected(model.meta),
            })
            timings.append({"benchmark": variant, "seed": seed, "method": spec["label"], "seconds": secs})
            audits.append({"benchmark": variant, "seed": seed, "method": spec["label"], **audit})
        except EMMonotonicityError as e:
            row.update({"status": "em_monotonicity", "selected_hypers": {"error": str(e)}})
        except Exception as e:  # crash isolation: record and move on
            log.exception("method %s failed on seed %d", spec["label"], seed)
            row.update({"status": "error", "selected_hypers": {"error": f"{type(e).__name__}: {e}"}})
        rows.append(row)
    return rows, timings, audits


def _dispatch(tasks, jobs):
    if jobs <= 1:
        return [run_seed(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(run_seed, tasks))


HARD_FAILURES = {"transfer_violation", "simplex_violation", "em_monotonicity"}


# -- aggregation -----------------------------------------------------------------------

AGG_COLUMNS = ["benchmark", "method", "n_seeds", "regret_mean", "regret_sd", "mse_mean", "mse_sd",
               "match_rate_mean", "gate_entropy_eff_mean"]
BOOT_COLUMNS = ["benchmark", "metric", "method_a", "method_b", "mean_diff", "ci_lo", "ci_hi", "resamples"]
AUDIT_COLUMNS = ["benchmark", "seed", "method", "violations", "contexts", "mean_regret", "localized_bound", "eta"]


def _sd(v):
    return float(np.std(v, ddof=1)) if len(v) > 1 else 0.0


def aggregate(rows, methods):
    out = []
    for bench in dict.fromkeys(r["benchmark"] for r in rows):
        for m in methods:
            ok = [r for r in rows if r["benchmark"] == bench and r["method"] == m and r.get("status") == "ok"]
            if not ok:
                out.append({"benchmark": bench, "method": m, "n_seeds": 0})
                continue
            reg = [r["mean_regret"] for r in ok]
            mse = [r["weight_mse"] for r in ok]
            ge = [r["gate_entropy_eff"] for r in ok if r.get("gate_entropy_eff") is not None]
            out.append({
                "benchmark": bench, "method": m, "n_seeds": len(ok),
                "regret_mean": float(np.mean(reg)), "regret_sd": _sd(reg),
                "mse_mean": float(np.mean(mse)), "mse_sd": _sd(mse),
                "match_rate_mean": float(np.mean([r["match_rate"] for r in ok])),
                "gate_entropy_eff_mean": float(np.mean(ge)) if ge else None,
            })
    return out


def bootstrap_table(rows, methods, resamples=5000):
    """All ordered method pairs, for regret and MSE, over seeds where both succeeded."""
    out = []
    metric_col = {"regret": "mean_regret", "mse": "weight_mse"}
    for bench in dict.fromkeys(r["benchmark"] for r in rows):
        by = {(r["method"], r["seed"]): r for r in rows if r["benchmark"] == bench and r.get("status") == "ok"}
        for metric, col in metric_col.items():
            for a in methods:
                for b in methods:
                    if a == b:
                        continue
                    seeds = sorted(s for (m, s) in by if m == a and (b, s) in by)
                    if len(seeds) < 2:
                        continue
                    rng = stream(0, f"bootstrap/{bench}/{metric}/{a}/{b}")
                    res = paired_bootstrap([by[(a, s)][col] for s in seeds], [by[(b, s)][col] for s in seeds],
                                           resamples, rng, a, b)
                    out.append({"benchmark": bench, "metric": metric, **dataclasses.asdict(res)})
    return out


# -- panel ---------------------------------------------------------------------------------


def _resolved(cfg, seed_offset):
    return {k: v for k, v in cfg.items() if k != "plots"} | {"seed_offset": seed_offset}


def run_panel(cfg, outdir, jobs=1, seed_offset=0, plots=True):
    """Fit every method on every seed of every benchmark variant.

    Returns ``(result_dirs, ok)``; ``ok`` is False if any hard invariant
    (simplex, regret transfer, EM monotonicity) failed.
    """
    specs = method_specs(cfg)
    labels = [s["label"] for s in specs]
    seeds = seeds_of(cfg, seed_offset)
    variants = bench_variants(cfg)
    h = config_hash(_resolved(cfg, seed_offset))
    tasks = [(v, bench, specs, cfg.get("fit", {}), cfg.get("K"), s) for v, bench in variants.items() for s in seeds]
    results = _dispatch(tasks, jobs)
    dirs, ok = {}, True
    for v in variants:
        rows, timings, audits = [], [], []
        for t, (r, tm, au) in zip(tasks, results):
            if t[0] == v:
                rows += r
                timings += tm
                audits += au
        d = Path(outdir) / v / h
        d.mkdir(parents=True, exist_ok=True)
        write_csv(d / "seed_rows.csv", SEED_COLUMNS, rows)
        agg = aggregate(rows, labels)
        write_csv(d / "aggregate.csv", AGG_COLUMNS, agg)
        write_csv(d / "bootstrap.csv", BOOT_COLUMNS, bootstrap_table(rows, labels, cfg.get("bootstrap_resamples", 5000)))
        write_csv(d / "audit.csv", AUDIT_COLUMNS, audits)
        # wall-clock numbers are not reproducible, so they stay out of the CSVs
        (d / "timing.json").write_text(json.dumps(timings, indent=1))
        (d / "config.json").write_text(json.dumps(_resolved(cfg, seed_offset), indent=1, sort_keys=True))
        if plots:
            from .plotting import plot_panel

            plot_panel(agg, d / "regret.png", title=v)
        ok &= not any(r.get("status") in HARD_FAILURES for r in rows)
        dirs[v] = d
    return dirs, ok


# -- sweep -------------------------------------------------------------------------------------

SWEEP_COLUMNS = ["axis", "value", "benchmark", "method", "seed", "status", "mean_regret", "weight_mse"]


def run_sweep(cfg, outdir, jobs=1, seed_offset=0, plots=True):
    """Long-format curve data over one benchmark axis.

    For ``n_train`` sweeps the evaluation set size is pinned so the test set
    does not move with the training prefix.
    """
    sw = cfg.get("sweep") or {}
    axis, values = sw.get("axis"), sw.get("values")
    if axis not in SWEEP_AXES:
        raise ConfigError(f"sweep axis must be one of {SWEEP_AXES}, got {axis!r}")
    if not values:
        raise ConfigError("sweep needs a nonempty 'values' list")
    specs = method_specs(cfg)
    seeds = seeds_of(cfg, seed_offset)
    (vname, base), = bench_variants({**cfg, "variants": None}).items()
    if axis == "n_train":
        base = dict(base)
        bc = BenchConfig(**base)
        base.setdefault("n_eval", bc.eval_size)
        base["n_total"] = max(values) + base["n_eval"]
    tasks = []
    for val in values:
        bench = {**base, axis: val}
        for s in seeds:
            tasks.append((f"{axis}={val!r}", bench, specs, cfg.get("fit", {}), cfg.get("K"), s))
    results = _dispatch(tasks, jobs)
    rows, ok = [], True
    for t, (r, _, _) in zip(tasks, results):
        val = t[1][axis]
        for row in r:
            rows.append({"axis": axis, "value": val, **row})
            ok &= row.get("status") not in HARD_FAILURES
    d = Path(outdir) / f"sweep_{axis}" / config_hash(_resolved(cfg, seed_offset))
    d.mkdir(parents=True, exist_ok=True)
    write_csv(d / "sweep.csv", SWEEP_COLUMNS, rows)
    (d / "config.json").write_text(json.dumps(_resolved(cfg, seed_offset), indent=1, sort_keys=True))
    if plots:
        from .plotting import plot_sweep

        plot_sweep(rows, axis, d / "sweep.png")
    return d, ok


# -- theory ------------------------------------------------------------------------------------

THEORY_DEFAULTS = {
    "floor": {"M_list": [1, 2, 4, 8, 16], "delta_beta_sq": 4.0, "tau": 1.2, "G": 10_000, "kappa_scale": 1.0},
    "mc_samples": 200_000,
    "tau": 1.2,
    "eps_grid": [0.05, 0.1, 0.2, 0.3, 0.4],
    "decomposition_instances": 1000,
    "triples": 10_000,
    "rate": {"c_M": 0.5, "tau": 4.0},
    "rate_bands": {"hard": [-0.80, -0.55], "soft": [-1.20, -0.85]},
    "mc_rtol": 0.02,
}

THEORY_COLUMNS = ["estimator", "n", "seed", "mse", "M", "bins", "merged", "transfer_violations"]


def theory_settings(cfg):
    th = cfg.get("theory", {})
    s = {**THEORY_DEFAULTS, **th}
    s["floor"] = {**THEORY_DEFAULTS["floor"], **th.get("floor", {})}
    s["rate"] = {**THEORY_DEFAULTS["rate"], **th.get("rate", {})}
    return s


def theory_records(cfg, seed_offset=0):
    """Run every theory check; returns (records, rate sweep rows)."""
    s = theory_settings(cfg)
    # validate the sweep grid before spending time on the other checks
    try:
        rcfg = tc.RateSweepConfig(**s["rate"])
    except TypeError as e:
        raise ConfigError(f"theory.rate: {e}") from None
    recs = []
    seed = seed_offset
    fl = s["floor"]
    for label, (alpha, kappa, L) in (("linear", tc.linear_profile()), ("sigmoid", tc.sigmoid_profile(fl["tau"]))):
        recs += tc.verify_floor(alpha, kappa, L, fl["delta_beta_sq"], fl["M_list"], G=fl["G"],
                                label=label, kappa_scale=fl["kappa_scale"])
    lin = tc.best_step_fits(lambda t: t, max(fl["M_list"]), fl["G"])
    for M in fl["M_list"]:
        target = 1.0 / (12 * M * M)
        recs.append(tc._rec(f"dp_linear_exact[M={M}]", target, lin[M - 1], abs(lin[M - 1] / target - 1) <= 0.01))

    # pooled and aligned-hard formulas on a Panel-A-like truth
    rng = stream(seed, "theory/truth")
    J, d_sig = 6, 4
    u = rng.standard_normal(d_sig)
    truth = TwoExpertTruth(rng.standard_normal(J), rng.standard_normal(J), s["tau"], u / np.linalg.norm(u),
                           np.zeros(d_sig + 1), d_sig)
    X = stream(seed, "theory/contexts").standard_normal((s["mc_samples"], d_sig))
    quad = tc.pooled_oracle_error_quadrature(truth)
    emp = tc.best_constant_error(truth.weights(X))
    recs.append(tc._rec("pooled_formula_vs_projection", quad, emp, abs(emp / quad - 1) <= s["mc_rtol"],
                        "Gauss-Hermite formula vs Monte-Carlo best-constant fit"))
    ah = tc.aligned_hard_upper(truth, X, s["eps_grid"])
    recs.append(tc._rec("aligned_hard_formula_vs_mc", ah["bound_quadrature"], ah["bound"],
                        abs(ah["bound"] / ah["bound_quadrature"] - 1) <= s["mc_rtol"]))
    recs.append(tc._rec("aligned_hard_threshold", ah["bound"], ah["threshold_error"],
                        ah["threshold_error"] <= ah["bound"] * (1 + tc.EQ_RTOL)))
    recs.append(tc._rec("aligned_hard_best_in_class", ah["bound"], ah["best_in_class_error"],
                        ah["best_in_class_error"] <= ah["bound"] * (1 + tc.EQ_RTOL)))
    for eps, bnd in ah["eps_bounds"].items():
        recs.append(tc._rec(f"aligned_hard_eps[{eps}]", bnd, ah["threshold_error"], ah["threshold_error"] <= bnd))

    # decomposition identities
    drng = stream(seed, "theory/decomposition")
    worst = 0.0
    for _ in range(s["decomposition_instances"]):
        n = int(drng.integers(5, 200))
        W = drng.standard_normal((n, int(drng.integers(1, 8)))) * drng.uniform(0.1, 10)
        labels = drng.integers(0, int(drng.integers(1, 10)), n)
        worst = max(worst, tc.hard_partition_decomposition_check(W, labels, drng)["max_rel_error"])
    recs.append(tc._rec("hard_partition_identity", 1e-8, worst, worst <= 1e-8))
    eg = tc.expert_gate_identity_check(drng, s["decomposition_instances"])
    recs.append(tc._rec("expert_gate_identity", 1e-8, eg["max_rel_error"], eg["max_rel_error"] <= 1e-8))
    recs.append(tc._rec("expert_gate_quadratic_bound", 0, 0, eg["bound_holds"]))

    # rate separation
    hard = tc.hard_rate_sweep(rcfg, seed_offset)
    soft = tc.soft_rate_sweep(rcfg, seed_offset)
    lo, hi = s["rate_bands"]["hard"]
    recs.append(tc._rec("hard_rate_slope", -2 / 3, hard["slope"], lo <= hard["slope"] <= hi, f"band [{lo}, {hi}]"))
    lo, hi = s["rate_bands"]["soft"]
    recs.append(tc._rec("soft_rate_slope", -1.0, soft["slope"], lo <= soft["slope"] <= hi, f"band [{lo}, {hi}]"))
    recs.append(tc._rec("soft_below_hard_at_max_n", hard["mean_mse"][-1], soft["mean_mse"][-1],
                        soft["mean_mse"][-1] < hard["mean_mse"][-1]))

    v = sum(r["transfer_violations"] for r in hard["rows"] + soft["rows"])
    recs.append(tc._rec("regret_transfer_rate_sweeps", 0, v, v == 0, "all rate-sweep test predictions"))

    # regret transfer on random triples
    v = tc.random_transfer_triples(stream(seed, "theory/triples"), s["triples"])
    recs.append(tc._rec("regret_transfer_random_triples", 0, v, v == 0, f"{s['triples']} triples"))
    return recs, hard["rows"] + soft["rows"], (rcfg, hard, soft)


def run_theory(cfg, outdir, jobs=1, seed_offset=0, plots=True):
    recs, rate_rows, (rcfg, hard, soft) = theory_records(cfg, seed_offset)
    d = Path(outdir) / "theory" / config_hash(_resolved(cfg, seed_offset))
    d.mkdir(parents=True, exist_ok=True)
    tc.write_report(recs, d / "theory_report.txt")
    write_csv(d / "rate_sweep.csv", THEORY_COLUMNS, rate_rows)
    if plots:
        from .plotting import plot_rates

        plot_rates(rcfg.n_grid, hard["mean_mse"], soft["mean_mse"], d / "rates.png")
    return d, all(r.passed for r in recs)


# -- runtime ----------------------------------------------------------------------------------

RUNTIME_COLUMNS = ["benchmark", "method", "n_seeds", "seconds_mean", "seconds_sd", "ratio_to_last"]


def run_runtime(cfg, outdir, jobs=1, seed_offset=0, plots=True):
    """Wall-clock of each method (selection included) per benchmark variant.

    ``ratio_to_last`` divides each method's mean time by that of the last
    listed method (EM/OTSS with the default method order). Timing runs are
    always sequential so they do not compete for cores.
    """
    specs = method_specs(cfg)
    labels = [s["label"] for s in specs]
    seeds = seeds_of(cfg, seed_offset)
    variants = bench_variants(cfg)
    tasks = [(v, bench, specs, cfg.get("fit", {}), cfg.get("K"), s) for v, bench in variants.items() for s in seeds]
    results = [run_seed(t) for t in tasks]
    rows = []
    for v in variants:
        tm = [x for t, (_, timings, _) in zip(tasks, results) if t[0] == v for x in timings]
        means = {}
        for m in labels:
            secs = [x["seconds"] for x in tm if x["method"] == m]
            means[m] = float(np.mean(secs)) if secs else float("nan")
            rows.append({"benchmark": v, "method": m, "n_seeds": len(secs), "seconds_mean": means[m],
                         "seconds_sd": _sd(secs)})
        for r in rows:
            if r["benchmark"] == v:
                r["ratio_to_last"] = r["seconds_mean"] / means[labels[-1]]
    d = Path(outdir) / "runtime" / config_hash(_resolved(cfg, seed_offset))
    d.mkdir(parents=True, exist_ok=True)
    write_csv(d / "runtime.csv", RUNTIME_COLUMNS, rows)
    if plots:
        from .plotting import plot_runtime

        plot_runtime(rows, d / "runtime.png")
    return d, rows
