"""Experiment driver: seeded runs, CSV trial records, JSON summaries.

Every command reads an optional JSON config (unknown keys rejected), applies
the global flag overrides, and writes records.csv plus summary.json into the
output directory.  CSV content is a pure function of the resolved config, so
rerunning a command reproduces the file byte for byte; timings live only in
the summary.  Exit status: 0 success, 1 usage error, 2 model failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time

import numpy as np

from . import __version__
from .cumulants import analytic_ica_cumulant
from .distributions import (
    GmmParams,
    SeededRng,
    certified_tail_threshold,
    empirical_poisson_tv,
    poisson_pmf,
    poisson_tail_threshold,
    truncated_poisson_tv,
)
from .gmm_learner import FeasibilityError, MeanBounds, derive_bounds, learn_means
from .ica import IllConditionedError, align_columns, recover_from_cumulants
from .lowdim_hardness import (
    PointSet,
    build_close_pair,
    equispaced_interleaved,
    pair_to_json,
    pigeonhole_pair,
    random_points,
)
from .poissonization import poisson_split
from .records import TrialRecord, write_records, write_summary
from .smoothed_analysis import FAMILIES, run_smoothed
from .tensor_linalg import khatri_rao_power, sigma_min

__all__ = ["main", "UsageError"]


class UsageError(Exception):
    """Bad invocation or config; reported on stderr with exit status 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _load_config(path):
    try:
        with open(path) as handle:
            text = handle.read()
    except OSError as exc:
        raise UsageError(f"cannot read config: {exc}")
    try:
        config = json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}")
    if not isinstance(config, dict):
        raise UsageError("config must be a JSON object")
    return config


def _check_keys(config, allowed, where="config"):
    unknown = sorted(set(config) - set(allowed))
    if unknown:
        raise UsageError(f"unknown {where} keys: {', '.join(unknown)}")


def _require(condition, message):
    if not condition:
        raise UsageError(message)


# ---------------------------------------------------------------------------
# learn
# ---------------------------------------------------------------------------

_GENERATOR_DEFAULTS = {
    "n": 6,
    "m": 6,
    "norm_low": 1.0,
    "norm_high": 2.0,
    "min_angle_deg": 30.0,
    "noise": 0.01,
}


def _random_separated_means(n, m, norm_low, norm_high, min_angle_deg, rng, tries=20000):
    """Random means with norms in [norm_low, norm_high] and pairwise angles
    above the threshold (angles between signed vectors, not lines)."""
    cos_bound = math.cos(math.radians(min_angle_deg))
    directions = []
    for _ in range(tries):
        v = rng.unit_vector(n)
        if all(float(v @ u) < cos_bound for u in directions):
            directions.append(v)
            if len(directions) == m:
                break
    else:
        raise UsageError("could not draw separated mean directions")
    norms = rng.uniform(norm_low, norm_high, size=m)
    return np.column_stack(directions) * norms


def _gmm_from_config(block):
    means = np.asarray(block["means"], dtype=float)
    if means.ndim != 2:
        raise UsageError("gmm means must be a list of mean vectors")
    weights = np.asarray(block["weights"], dtype=float)
    covariance = np.asarray(block["covariance"], dtype=float)
    return GmmParams(means.T, weights, covariance)


def _cmd_learn(config, out_dir):
    allowed = {
        "gmm", "generator", "d", "delta", "eps", "samples", "tau", "bounds",
        "trials", "seed", "with_weights", "chunk", "out",
    }
    _check_keys(config, allowed)
    _require(not ("gmm" in config and "generator" in config),
             "give either gmm or generator, not both")
    seed = int(config.get("seed", 0))
    trials = int(config.get("trials", 1))
    d = int(config.get("d", 4))
    delta = float(config.get("delta", 0.1))
    eps = float(config.get("eps", 0.25))
    samples = int(config.get("samples", 1_000_000))
    with_weights = bool(config.get("with_weights", True))
    chunk = int(config.get("chunk", 1 << 17))
    tau_setting = config.get("tau", "certified")

    generator = dict(_GENERATOR_DEFAULTS)
    if "generator" in config:
        _check_keys(config["generator"], _GENERATOR_DEFAULTS, where="generator")
        generator.update(config["generator"])

    fixed_gmm = None
    if "gmm" in config:
        _check_keys(config["gmm"], {"means", "weights", "covariance"}, where="gmm")
        fixed_gmm = _gmm_from_config(config["gmm"])

    resolved = {
        "d": d, "delta": delta, "eps": eps, "samples": samples,
        "trials": trials, "seed": seed, "with_weights": with_weights,
        "tau": tau_setting, "chunk": chunk,
    }
    resolved["gmm" if fixed_gmm is not None else "generator"] = (
        config.get("gmm") if fixed_gmm is not None else generator
    )
    if "bounds" in config:
        _check_keys(config["bounds"], {"w", "u", "r", "b"}, where="bounds")
        resolved["bounds"] = config["bounds"]

    root = SeededRng(seed)
    records = []
    timings = []
    errors = []
    status = 0
    for trial in range(trials):
        rng = root.derive(trial)
        if fixed_gmm is not None:
            gmm = fixed_gmm
        else:
            means = _random_separated_means(
                generator["n"], generator["m"], generator["norm_low"],
                generator["norm_high"], generator["min_angle_deg"], rng,
            )
            m = generator["m"]
            gmm = GmmParams(
                means,
                np.full(m, 1.0 / m),
                generator["noise"] * np.eye(generator["n"]),
            )
        bounds = (
            MeanBounds(**config["bounds"]) if "bounds" in config
            else derive_bounds(gmm, d)
        )
        if tau_setting == "certified":
            tau = certified_tail_threshold(0.5 * delta / samples, float(gmm.m))
        elif tau_setting == "schedule":
            tau = None
        else:
            tau = float(tau_setting)
        started = time.time()
        row = {
            "trial": trial, "seed": rng.seed, "failed": False, "reason": "",
            "aligned_error": None, "weight_max_error": None, "weight_sum": None,
            "tv_gap": None, "lam": None, "tau": None, "eigengap": None,
            "samples_used": 0,
        }
        try:
            report = learn_means(
                gmm, gmm.m, d, delta, eps, bounds, rng, samples,
                tau=tau, with_weights=with_weights, chunk=chunk,
            )
            diag = report.diagnostics
            row.update(
                failed=report.failed,
                reason="truncation-abort" if report.failed else "",
                aligned_error=report.aligned_error,
                weight_max_error=diag.get("weight_max_error"),
                weight_sum=diag.get("weight_sum"),
                tv_gap=diag.get("tv_gap"),
                lam=report.params.lam,
                tau=report.params.tau,
                eigengap=diag.get("eigengap"),
                samples_used=report.samples_used,
            )
            if report.failed:
                status = 2
        except (FeasibilityError, IllConditionedError) as exc:
            row.update(failed=True, reason=f"{type(exc).__name__}: {exc}")
            errors.append(row["reason"])
            status = 2
        timings.append(time.time() - started)
        records.append(TrialRecord(row))

    aligned = [r.values["aligned_error"] for r in records
               if r.values["aligned_error"] is not None]
    extra = {
        "success_count": sum(1 for r in records if not r.values["failed"]),
        "failure_count": sum(1 for r in records if r.values["failed"]),
        "aligned_errors": aligned,
        "median_aligned_error": float(np.median(aligned)) if aligned else None,
        "trial_seconds": timings,
        "errors": errors,
    }
    return records, None, resolved, extra, status


# ---------------------------------------------------------------------------
# smoothed
# ---------------------------------------------------------------------------

_SMOOTHED_COLUMNS = [
    "family", "n", "sigma", "seed",
    "sigma_min_kr2", "sigma_min_kr_odot2", "bound", "passed",
]


def _cmd_smoothed(config, out_dir):
    allowed = {"families", "n", "sigma", "trials", "seed", "out"}
    _check_keys(config, allowed)
    families = list(config.get("families", FAMILIES))
    unknown = sorted(set(families) - set(FAMILIES))
    _require(not unknown, f"unknown families: {', '.join(unknown)}")
    n = int(config.get("n", 10))
    sigma = float(config.get("sigma", 0.1))
    trials = int(config.get("trials", 50))
    seed = int(config.get("seed", 0))
    resolved = {
        "families": families, "n": n, "sigma": sigma,
        "trials": trials, "seed": seed,
    }
    results = run_smoothed(families, n, sigma, trials, SeededRng(seed))
    records = [TrialRecord(r.to_dict()) for r in results]
    per_family = {
        family: sum(1 for r in results if r.family == family and r.passed)
        for family in families
    }
    extra = {
        "passed_per_family": per_family,
        "trials_per_family": trials,
        "odot_dominates": bool(
            all(r.sigma_min_kr_odot2 >= r.sigma_min_kr2 for r in results)
        ),
    }
    return records, _SMOOTHED_COLUMNS, resolved, extra, 0


# ---------------------------------------------------------------------------
# hardness
# ---------------------------------------------------------------------------


def _cmd_hardness(config, out_dir):
    allowed = {
        "mode", "h_values", "k", "dimension", "instances",
        "l1_samples", "seed", "trials", "out",
    }
    _check_keys(config, allowed)
    mode = config.get("mode", "decay")
    seed = int(config.get("seed", 0))
    l1_samples = int(config.get("l1_samples", 200_000))
    root = SeededRng(seed)
    status = 0
    if mode == "decay":
        h_values = [float(h) for h in config.get("h_values", [0.1, 0.05, 0.025])]
        resolved = {"mode": mode, "h_values": h_values, "seed": seed}
        records = []
        for index, h in enumerate(h_values):
            x_set, y_set = equispaced_interleaved(h)
            pair = build_close_pair(x_set, y_set, rng=root.derive(index))
            records.append(TrialRecord({
                "h": h,
                "points_per_set": x_set.size,
                "components_p": pair.p.m,
                "components_q": pair.q.m,
                "l1_distance": pair.l1_distance,
                "min_center_distance": pair.min_center_distance,
                "alpha": pair.alpha,
                "beta": pair.beta,
                "fill": pair.fill,
                "kernel_condition": pair.kernel_condition,
            }))
            _write_pair(out_dir, f"pair_decay_{index}.json", pair)
        extra = {"pairs_written": len(records)}
    elif mode == "pigeonhole":
        k = int(config.get("k", 5))
        dimension = int(config.get("dimension", 1))
        instances = int(config.get("instances", config.get("trials", 10)))
        resolved = {
            "mode": mode, "k": k, "dimension": dimension,
            "instances": instances, "l1_samples": l1_samples, "seed": seed,
        }
        records = []
        failures = []
        for index in range(instances):
            rng = root.derive(index)
            row = {
                "instance": index, "seed": rng.seed, "built": False,
                "components_p": None, "components_q": None,
                "equal_counts": None, "l1_distance": None,
                "min_center_distance": None, "fill": None,
                "kernel_condition": None,
            }
            points = random_points(4 * k * k, dimension, rng)
            try:
                pair = pigeonhole_pair(points, rng, l1_samples=l1_samples)
                row.update(
                    built=True,
                    components_p=pair.p.m,
                    components_q=pair.q.m,
                    equal_counts=bool(pair.p.m == pair.q.m),
                    l1_distance=pair.l1_distance,
                    min_center_distance=pair.min_center_distance,
                    fill=pair.fill,
                    kernel_condition=pair.kernel_condition,
                )
                _write_pair(out_dir, f"pair_{index}.json", pair)
            except RuntimeError as exc:
                failures.append(f"instance {index}: {exc}")
                status = 2
            records.append(TrialRecord(row))
        extra = {"failures": failures,
                 "built_count": sum(1 for r in records if r.values["built"])}
    else:
        raise UsageError("mode must be 'decay' or 'pigeonhole'")
    return records, None, resolved, extra, status


def _write_pair(out_dir, name, pair):
    with open(os.path.join(out_dir, name), "w") as handle:
        handle.write(pair_to_json(pair))
        handle.write("\n")


# ---------------------------------------------------------------------------
# ica-bench
# ---------------------------------------------------------------------------


def _random_conditioned_mixing(n, m, d, floor, rng, tries=200):
    for _ in range(tries):
        a = rng.standard_normal((n, m))
        a /= np.linalg.norm(a, axis=0)
        if sigma_min(khatri_rao_power(a, d // 2)) > floor:
            return a
    raise UsageError(f"no mixing matrix with sigma_min above {floor} found")


def _cmd_ica_bench(config, out_dir):
    allowed = {
        "n", "m", "d", "trials", "sigma_floor", "cum_low", "cum_high",
        "seed", "out",
    }
    _check_keys(config, allowed)
    n = int(config.get("n", 4))
    m = int(config.get("m", 6))
    d = int(config.get("d", 4))
    trials = int(config.get("trials", 20))
    floor = float(config.get("sigma_floor", 1e-3))
    cum_low = float(config.get("cum_low", 1.0))
    cum_high = float(config.get("cum_high", 2.0))
    seed = int(config.get("seed", 0))
    resolved = {
        "n": n, "m": m, "d": d, "trials": trials, "sigma_floor": floor,
        "cum_low": cum_low, "cum_high": cum_high, "seed": seed,
    }
    root = SeededRng(seed)
    records = []
    for trial in range(trials):
        rng = root.derive(trial)
        mixing = _random_conditioned_mixing(n, m, d, floor, rng)
        cums_d = rng.uniform(cum_low, cum_high, size=m)
        cums_next = rng.uniform(cum_low, cum_high, size=m)
        m0 = analytic_ica_cumulant(mixing, cums_d, d).as_matrix()
        k_next = analytic_ica_cumulant(mixing, cums_next, d + 1).data
        estimate = recover_from_cumulants(m0, k_next, m, d, rng)
        _, _, max_error = align_columns(estimate.columns, mixing)
        records.append(TrialRecord({
            "trial": trial,
            "seed": rng.seed,
            "n": n, "m": m, "d": d,
            "sigma_min_kr": float(sigma_min(khatri_rao_power(mixing, d // 2))),
            "aligned_error": max_error,
            "eigengap": estimate.eigengap,
        }))
    worst = max(r.values["aligned_error"] for r in records)
    extra = {"max_aligned_error": worst, "all_below_1e-6": bool(worst < 1e-6)}
    return records, None, resolved, extra, 0


# ---------------------------------------------------------------------------
# reduction-check
# ---------------------------------------------------------------------------


def _brute_truncation_tv(lam, tau):
    """Half-sum of absolute density differences, by direct enumeration."""
    limit = int(tau + 10 * lam + 200)
    ks = np.arange(limit + 1)
    pmf = poisson_pmf(ks, lam)
    kept = pmf[: tau + 1]
    mass = float(kept.sum())
    truncated = np.zeros_like(pmf)
    truncated[: tau + 1] = kept / mass
    beyond = max(0.0, 1.0 - float(pmf.sum()))
    return 0.5 * (float(np.abs(truncated - pmf).sum()) + beyond)


def _cmd_reduction_check(config, out_dir):
    allowed = {
        "lam", "probs", "samples", "delta", "marginal_tol", "corr_tol",
        "grid_lams", "grid_taus", "seed", "trials", "out",
    }
    _check_keys(config, allowed)
    lam = float(config.get("lam", 5.0))
    probs = [float(p) for p in config.get("probs", [0.2, 0.3, 0.5])]
    samples = int(config.get("samples", 100_000))
    delta = float(config.get("delta", 1e-6))
    marginal_tol = float(config.get("marginal_tol", 0.02))
    corr_tol = float(config.get("corr_tol", 0.02))
    grid_lams = [float(v) for v in config.get("grid_lams", range(1, 9))]
    grid_taus = [int(v) for v in config.get("grid_taus", range(0, 21))]
    seed = int(config.get("seed", 0))
    resolved = {
        "lam": lam, "probs": probs, "samples": samples, "delta": delta,
        "marginal_tol": marginal_tol, "corr_tol": corr_tol,
        "grid_lams": grid_lams, "grid_taus": grid_taus, "seed": seed,
    }
    rng = SeededRng(seed)
    records = []

    split = poisson_split(lam, probs, rng, samples)
    for i, p in enumerate(probs):
        tv = empirical_poisson_tv(split[:, i], p * lam)
        records.append(TrialRecord({
            "check": "marginal_tv", "index": str(i), "value": tv,
            "bound": marginal_tol, "passed": bool(tv < marginal_tol),
        }))
    correlations = np.corrcoef(split, rowvar=False)
    for i in range(len(probs)):
        for j in range(i + 1, len(probs)):
            rho = float(correlations[i, j])
            records.append(TrialRecord({
                "check": "pair_correlation", "index": f"{i}-{j}", "value": rho,
                "bound": corr_tol, "passed": bool(abs(rho) < corr_tol),
            }))

    worst_gap = max(
        abs(truncated_poisson_tv(g_lam, g_tau) - _brute_truncation_tv(g_lam, g_tau))
        for g_lam in grid_lams
        for g_tau in grid_taus
    )
    records.append(TrialRecord({
        "check": "truncation_identity_max_gap", "index": "", "value": worst_gap,
        "bound": 1e-12, "passed": bool(worst_gap < 1e-12),
    }))

    lemma_tau = poisson_tail_threshold(delta, lam)
    lemma_tail = truncated_poisson_tv(lam, lemma_tau)
    records.append(TrialRecord({
        "check": "tail_threshold", "index": "lemma", "value": float(lemma_tau),
        "bound": delta, "passed": bool(lemma_tail < delta),
    }))
    certified_tau = certified_tail_threshold(delta, lam)
    certified_tail = truncated_poisson_tv(lam, certified_tau)
    records.append(TrialRecord({
        "check": "tail_threshold", "index": "certified",
        "value": float(certified_tau), "bound": delta,
        "passed": bool(certified_tail < delta),
    }))

    extra = {
        "all_passed": bool(all(r.values["passed"] for r in records)),
        "lemma_tail": lemma_tail,
        "certified_tail": certified_tail,
    }
    return records, None, resolved, extra, 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

_COMMANDS = {
    "learn": _cmd_learn,
    "smoothed": _cmd_smoothed,
    "hardness": _cmd_hardness,
    "ica-bench": _cmd_ica_bench,
    "reduction-check": _cmd_reduction_check,
}


def _build_parser():
    parser = _Parser(prog="poissonize", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--seed", type=int, help="root seed (overrides config)")
    parser.add_argument("--out", help="output directory (overrides config)")
    parser.add_argument("--trials", type=int, help="trial count (overrides config)")
    return parser


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        config = _load_config(args.config) if args.config else {}
        if args.seed is not None:
            config["seed"] = args.seed
        if args.trials is not None:
            config["trials"] = args.trials
        out_dir = args.out or config.get("out") or "."
        os.makedirs(out_dir, exist_ok=True)
        started = time.time()
        records, columns, resolved, extra, status = _COMMANDS[args.command](
            config, out_dir
        )
        csv_path = os.path.join(out_dir, "records.csv")
        write_records(csv_path, records, columns)
        summary = {
            "command": args.command,
            "version": __version__,
            "seed": resolved.get("seed"),
            "config": resolved,
            "wall_seconds": time.time() - started,
            "exit_status": status,
        }
        summary.update(extra)
        write_summary(os.path.join(out_dir, "summary.json"), summary)
        print(f"wrote {csv_path} ({len(records)} rows), exit status {status}")
        return status
    except UsageError as exc:
        print(f"poissonize: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
