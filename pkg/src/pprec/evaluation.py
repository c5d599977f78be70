"""Metrics, similarity-error statistics, stage timing and k-sweep orchestration."""

from __future__ import annotations

import csv
import gc
import json
import logging
import math
import random
import statistics
import time
from dataclasses import dataclass, field

import numpy as np

from pprec import kernels
from pprec.dataset import split_train_test
from pprec.recommender import recommend_all
from pprec.similarity import (
    chernoff_delta,
    estimate_matrix_from_rounds,
    exact_similarity_matrix,
)
from pprec.walksim import Population, WalkConfig, run_protocol

_log = logging.getLogger(__name__)

DEFAULT_ALPHAS = (0.03, 0.04, 0.05)
TIMING_COLUMNS = ("sim_time_s", "baseline_time_s")
# absorbs float noise in |a - b| so that e.g. |0.55 - 0.5| counts as <= 0.05
_AE_EPS = 1e-12


class UndefinedMetric(ValueError):
    pass


def precision_at_n(recommended, test_likes):
    recommended = list(recommended)
    if not recommended:
        raise UndefinedMetric("empty recommendation list")
    test_likes = set(test_likes)
    return sum(1 for i in recommended if i in test_likes) / len(recommended)


def precision_loss(pp_precision, baseline_precision):
    """Relative precision loss in percent; negative when the private method wins."""
    if baseline_precision <= 0:
        raise UndefinedMetric("baseline precision is zero")
    return 100.0 * (baseline_precision - pp_precision) / baseline_precision


@dataclass
class AEStats:
    n_samples: int
    alphas: tuple
    coverage: dict
    mean: float
    quantiles: dict
    hist_edges: np.ndarray = field(repr=False)
    hist_counts: np.ndarray = field(repr=False)
    bound: dict = field(default_factory=dict)


def absolute_errors(estimated, exact):
    """AE over the union of pairs stored in either matrix (absent pairs are 0)."""
    if estimated.n_items != exact.n_items:
        raise ValueError("similarity matrices cover different item universes")
    m = exact.n_items
    ke = estimated.rows * m + estimated.cols
    kx = exact.rows * m + exact.cols
    keys = np.union1d(ke, kx)
    a = np.zeros(len(keys))
    b = np.zeros(len(keys))
    a[np.searchsorted(keys, ke)] = estimated.values
    b[np.searchsorted(keys, kx)] = exact.values
    return np.abs(a - b)


def ae_statistics(estimated, exact, alphas=DEFAULT_ALPHAS, k=None, bins=50):
    return ae_summary(absolute_errors(estimated, exact), alphas, k, bins)


def ae_summary(errors, alphas=DEFAULT_ALPHAS, k=None, bins=50):
    errors = np.asarray(errors, dtype=np.float64)
    alphas = tuple(sorted(alphas))
    n = len(errors)
    coverage = {a: (float(np.mean(errors <= a + _AE_EPS)) if n else 1.0) for a in alphas}
    qs = (0.5, 0.9, 0.99)
    quantiles = {q: (float(np.quantile(errors, q)) if n else 0.0) for q in qs}
    counts, edges = np.histogram(errors, bins=bins, range=(0.0, 1.0))
    bound = {}
    if k:
        bound = {a: max(0.0, 1.0 - chernoff_delta(k, a)) for a in alphas}
    return AEStats(n, alphas, coverage, float(errors.mean()) if n else 0.0, quantiles,
                   edges, counts, bound)


def ibtn_stage(train, threads=1):
    return exact_similarity_matrix(train, threads=threads)


def ppibtn_stage(train, k, mode="union-normalized", seed=0, rho=0.5, threads=1):
    pop = Population.from_dataset(train, rho)
    _, counts = run_protocol(pop, WalkConfig(k_rounds=k, seed=seed), threads=threads)
    return estimate_matrix_from_rounds(counts, mode)


def _stage_fn(method, train, k, mode, seed, rho, threads):
    if method == "IBTN":
        return lambda: ibtn_stage(train, threads)
    if method == "PP-IBTN":
        if k is None:
            raise ValueError("PP-IBTN timing needs k")
        return lambda: ppibtn_stage(train, k, mode, seed, rho, threads)
    raise ValueError(f"unknown method {method!r}")


def _timed(fn):
    # like timeit: keep the cyclic collector out of the measured region
    enabled = gc.isenabled()
    gc.disable()
    try:
        t0 = time.perf_counter()
        fn()
        return time.perf_counter() - t0
    finally:
        if enabled:
            gc.enable()


def time_similarity_stage(method, train, k=None, mode="union-normalized", seed=0,
                          rho=0.5, repeats=5, threads=1, warmup=True):
    """Median wall time (seconds) of the similarity-construction stage alone."""
    if repeats < 3:
        raise ValueError("timing needs at least 3 repetitions")
    fn = _stage_fn(method, train, k, mode, seed, rho, threads)
    if warmup:
        fn()
    return statistics.median([_timed(fn) for _ in range(repeats)])


def compare_stage_times(train, ks, mode="union-normalized", seed=0, rho=0.5, repeats=5,
                        threads=1, order_seed=0):
    """Median stage times for IBTN and PP-IBTN at each k, measured interleaved.

    Every repetition runs all stages once in a freshly shuffled order so drift
    in machine load hits every method alike. Returns ``{"IBTN": t, k: t, ...}``.
    """
    if repeats < 3:
        raise ValueError("timing needs at least 3 repetitions")
    fns = {"IBTN": _stage_fn("IBTN", train, None, mode, seed, rho, threads)}
    for k in ks:
        fns[k] = _stage_fn("PP-IBTN", train, k, mode, seed, rho, threads)
    for fn in fns.values():
        fn()
    times = {key: [] for key in fns}
    order = list(fns)
    shuffler = random.Random(order_seed)
    for _ in range(repeats):
        shuffler.shuffle(order)
        for key in order:
            times[key].append(_timed(fns[key]))
    return {key: statistics.median(v) for key, v in times.items()}


@dataclass
class PrecisionSummary:
    mean: float
    evaluated: int
    skipped: tuple  # user ids without test likes or with an empty list
    cold_start: int


def evaluate_precision(train, test, sims, n=10, include_cold_start=True, pad=True, target="test"):
    """Mean precision@n over users with at least one target like.

    ``target="test"`` scores lists of unliked items against held-out likes.
    ``target="train"`` is a sensitivity variant: lists may contain liked
    items and are scored against the train likes.
    """
    if target not in ("test", "train"):
        raise ValueError(f"unknown precision target {target!r}")
    recs = recommend_all(train, sims, n=n, pad=pad, exclude_liked=target == "test")
    truth = test if target == "test" else train
    values, skipped, cold = [], [], 0
    for rec in recs:
        u = rec.user
        target_likes = truth.likes(u)
        is_cold = train.likes_indptr[u + 1] == train.likes_indptr[u]
        if len(target_likes) == 0 or (is_cold and not include_cold_start) or len(rec) == 0:
            skipped.append(u)
            continue
        cold += int(is_cold)
        values.append(precision_at_n(rec.items, target_likes.tolist()))
    mean = float(np.mean(values)) if values else 0.0
    return PrecisionSummary(mean, len(values), tuple(skipped), cold)


def report_columns(alphas=DEFAULT_ALPHAS):
    base = ["dataset", "method", "mode", "k", "k_frac", "n_users", "n_items", "N", "seeds",
            "precision", "baseline_precision", "precision_loss_pct", "sim_time_s",
            "baseline_time_s", "ae_mean", "ae_q50", "ae_q90", "ae_q99"]
    base += [f"cov_{a:g}" for a in sorted(alphas)]
    base += [f"bound_{a:g}" for a in sorted(alphas)]
    base += ["completed_rounds", "evaluated_users", "skipped_users", "cold_start_users"]
    return base


@dataclass
class EvalReport:
    alphas: tuple
    rows: list
    meta: dict = field(default_factory=dict)
    ae: dict = field(default_factory=dict, repr=False)  # (k, mode) -> AEStats

    @property
    def columns(self):
        return report_columns(self.alphas)

    def select(self, method=None, mode=None):
        return [r for r in self.rows
                if (method is None or r["method"] == method) and (mode is None or r["mode"] == mode)]

    def non_timing(self):
        return [{c: v for c, v in r.items() if c not in TIMING_COLUMNS} for r in self.rows]


def _fmt(v):
    if isinstance(v, float):
        if math.isnan(v):
            return ""
        return f"{v:.10g}"
    if v is None:
        return ""
    return str(v)


def write_report_csv(report, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(report.columns)
        for row in report.rows:
            w.writerow([_fmt(row.get(c)) for c in report.columns])


def write_report_json(report, path):
    def clean(v):
        if isinstance(v, float):
            return None if math.isnan(v) else float(f"{v:.10g}")
        return v

    payload = {
        "columns": report.columns,
        "rows": [{c: clean(r.get(c)) for c in report.columns} for r in report.rows],
        "meta": report.meta,
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=False)
        fh.write("\n")


def write_ae_histogram_csv(stats, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("bin_low,bin_high,count\n")
        for lo, hi, c in zip(stats.hist_edges[:-1], stats.hist_edges[1:], stats.hist_counts):
            fh.write(f"{lo:.10g},{hi:.10g},{int(c)}\n")


def walk_seed(split_seed, k):
    """Protocol seed for one (split, k) cell; independent of sweep order."""
    return kernels.mix64((kernels.mix64(split_seed & kernels.MASK64) ^ (k * kernels.GOLDEN)) & kernels.MASK64)


def resolve_k(n_users, fraction=None, absolute=None):
    if (fraction is None) == (absolute is None):
        raise ValueError("give exactly one of a k fraction or an absolute k")
    if absolute is not None:
        if absolute < 1:
            raise ValueError("k must be >= 1")
        return int(absolute), absolute / n_users
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"k fraction must be in (0, 1], got {fraction}")
    return max(1, math.ceil(fraction * n_users - 1e-9)), fraction


def sweep_k(ds, k_fractions=None, n=10, seeds=(0,), modes=("union-normalized",),
            alphas=DEFAULT_ALPHAS, k_absolute=None, ratio=0.8, rho=0.5, threads=1,
            dataset_name="dataset", include_cold_start=True, time_stages=True,
            on_cell=None, precision_target="test"):
    """Baseline plus PP-IBTN rows for every (k, mode), averaged over split seeds.

    Each seed gives one train/test split shared by the baseline and every
    PP-IBTN cell, so precision loss isolates the similarity estimation error.
    """
    seeds = tuple(seeds)
    if not seeds:
        raise ValueError("need at least one seed")
    if k_fractions is not None and k_absolute is not None:
        raise ValueError("give k fractions or absolute k values, not both")
    if k_absolute is not None:
        ks = [resolve_k(ds.n_users, absolute=k) for k in k_absolute]
    else:
        ks = [resolve_k(ds.n_users, fraction=f) for f in (k_fractions or (1.0,))]
    alphas = tuple(sorted(alphas))

    base_prec, base_time, base_eval = [], [], []
    cell_prec = {(k, m): [] for k, _ in ks for m in modes}
    cell_time = {k: [] for k, _ in ks}
    cell_err = {(k, m): [] for k, _ in ks for m in modes}
    cell_rounds = {k: [] for k, _ in ks}
    cell_eval = {(k, m): [] for k, _ in ks for m in modes}
    skipped_total, cold_total = set(), 0

    for seed in seeds:
        split = split_train_test(ds, ratio, seed)
        t0 = time.perf_counter()
        exact = exact_similarity_matrix(split.train, threads=threads)
        base_time.append(time.perf_counter() - t0)
        summary = evaluate_precision(split.train, split.test, exact, n, include_cold_start,
                                     target=precision_target)
        base_prec.append(summary.mean)
        base_eval.append(summary)
        skipped_total.update(summary.skipped)
        cold_total = max(cold_total, summary.cold_start)
        pop = Population.from_dataset(split.train, rho)
        for k, _frac in ks:
            t0 = time.perf_counter()
            _, counts = run_protocol(pop, WalkConfig(k_rounds=k, seed=walk_seed(seed, k)), threads=threads)
            protocol_time = time.perf_counter() - t0
            cell_rounds[k].append(counts.k_rounds)
            for mode in modes:
                t0 = time.perf_counter()
                est = estimate_matrix_from_rounds(counts, mode)
                elapsed = protocol_time + time.perf_counter() - t0
                if mode == modes[0]:
                    cell_time[k].append(elapsed)
                s = evaluate_precision(split.train, split.test, est, n, include_cold_start,
                                     target=precision_target)
                cell_prec[(k, mode)].append(s.mean)
                cell_eval[(k, mode)].append(s.evaluated)
                cell_err[(k, mode)].append(absolute_errors(est, exact))
                if on_cell is not None:
                    on_cell(seed, k, mode, s.mean)
        _log.info("seed %s done: baseline precision %.4f", seed, summary.mean)

    seed_str = ";".join(str(s) for s in seeds)
    common = {"dataset": dataset_name, "n_users": ds.n_users, "n_items": ds.n_items,
              "N": n, "seeds": seed_str}
    baseline = float(np.mean(base_prec))
    nan = float("nan")
    rows = [{
        **common, "method": "IBTN", "mode": "exact", "k": None, "k_frac": None,
        "precision": baseline, "baseline_precision": baseline, "precision_loss_pct": 0.0,
        "sim_time_s": float(np.median(base_time)) if time_stages else nan,
        "baseline_time_s": float(np.median(base_time)) if time_stages else nan,
        "ae_mean": 0.0, "ae_q50": 0.0, "ae_q90": 0.0, "ae_q99": 0.0,
        **{f"cov_{a:g}": 1.0 for a in alphas}, **{f"bound_{a:g}": nan for a in alphas},
        "completed_rounds": None,
        "evaluated_users": int(round(np.mean([b.evaluated for b in base_eval]))),
        "skipped_users": len(skipped_total), "cold_start_users": cold_total,
    }]
    ae = {}
    for k, frac in ks:
        for mode in modes:
            prec = float(np.mean(cell_prec[(k, mode)]))
            stats_ = ae_summary(np.concatenate(cell_err[(k, mode)]), alphas, k)
            ae[(k, mode)] = stats_
            try:
                loss = precision_loss(prec, baseline)
            except UndefinedMetric:
                loss = nan
            rows.append({
                **common, "method": "PP-IBTN", "mode": mode, "k": k, "k_frac": float(frac),
                "precision": prec, "baseline_precision": baseline, "precision_loss_pct": loss,
                "sim_time_s": float(np.median(cell_time[k])) if time_stages else nan,
                "baseline_time_s": float(np.median(base_time)) if time_stages else nan,
                "ae_mean": stats_.mean, "ae_q50": stats_.quantiles[0.5],
                "ae_q90": stats_.quantiles[0.9], "ae_q99": stats_.quantiles[0.99],
                **{f"cov_{a:g}": stats_.coverage[a] for a in alphas},
                **{f"bound_{a:g}": stats_.bound[a] for a in alphas},
                "completed_rounds": int(round(np.mean(cell_rounds[k]))),
                "evaluated_users": int(round(np.mean(cell_eval[(k, mode)]))),
                "skipped_users": len(skipped_total), "cold_start_users": cold_total,
            })
    meta = {"ratio": ratio, "rho": rho, "seeds": list(seeds), "modes": list(modes),
            "alphas": list(alphas), "N": n, "kernel_backend": kernels.BACKEND,
            "include_cold_start": include_cold_start, "precision_target": precision_target,
            "per_seed_baseline_precision": [float(f"{p:.10g}") for p in base_prec]}
    return EvalReport(alphas, rows, meta, ae)


def linear_fit_r2(x, y):
    """Slope, intercept and coefficient of determination of a least-squares line."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), r2

