"""Monte-Carlo harness comparing simulated fluctuations with the Gaussian limit.

Replicate ``i`` of an experiment with master seed ``s`` uses the random
stream ``(s, i)``, and per-replicate results are written into a preallocated
array, so reports do not depend on the number of worker threads.  Standard
errors come from ``N_BATCHES`` contiguous batches of replicates, and every
tolerance is a multiple of such a standard error.
"""

from __future__ import annotations

import csv
import enum
import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from .errors import BadGrid, ConfigError, DomainError, InsufficientN0, OracleMismatch
from .limit import check_grid, limit_covariance
from .measure import DrivingMeasure, validate
from .rates import RateFunctional
from .sim import (
    Backend,
    SimConfig,
    chain_counts_at,
    chain_tables,
    simulate,
)
from .speed import SpeedFunction, Variant, A_from_ratio, drift_constant

N_BATCHES = 40
#: required ratio n0 / v(epsilon * max(grid))
N0_GUARD_RATIO = 20.0
KS_LEVEL = 0.01
SE_MULTIPLE = 3.0
TV_LIMIT = 0.02
A_AGREEMENT = 0.02
MIN_REPLICATES = 1000
THREADS_ENV = "KINGMIX_THREADS"


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


class Normalization(str, enum.Enum):
    V = "v"
    V_STAR = "v_star"
    W = "w"
    KINGMAN_HALF_T = "kingman_half_t"


@dataclass
class FluctuationSample:
    """``X_eps(t) = eps^{-1/2} (N_{eps t} / speed(eps t) - 1)`` per replicate.

    ``values`` has shape ``(replicates, len(grid))``; ``counts`` holds the
    raw block counts and ``speeds`` the normalising speeds at ``eps * grid``.
    """

    epsilon: float
    grid: np.ndarray
    normalization: Normalization
    counts: np.ndarray
    speeds: np.ndarray
    values: np.ndarray = field(init=False)

    def __post_init__(self):
        self.normalization = Normalization(self.normalization)
        self.values = (self.counts / self.speeds - 1.0) / math.sqrt(self.epsilon)

    def renormalized(self, normalization, speed_table: dict) -> "FluctuationSample":
        """Same paths under another normalisation (``speed_table`` maps each
        :class:`Normalization` to its speeds on the grid)."""
        norm = Normalization(normalization)
        return FluctuationSample(self.epsilon, self.grid, norm, self.counts, speed_table[norm])

    def with_origin(self):
        """Grid and values with the convention ``X_eps(0) = 0`` prepended."""
        zeros = np.zeros((self.values.shape[0], 1))
        return np.concatenate([[0.0], self.grid]), np.hstack([zeros, self.values])


def normalizing_speeds(rf: RateFunctional, normalization, times) -> np.ndarray:
    norm = Normalization(normalization)
    times = np.asarray(times, float)
    if norm is Normalization.KINGMAN_HALF_T:
        return 2.0 / times
    if norm is Normalization.W:
        return 2.0 / (rf.c * times)
    variant = Variant.V if norm is Normalization.V else Variant.V_STAR
    return SpeedFunction(rf, variant).many(times)


@dataclass
class Criterion:
    name: str
    value: float
    target: float
    tolerance: float
    passed: bool
    detail: str = ""


@dataclass
class ExperimentReport:
    name: str
    config: dict
    stats: dict
    criteria: list
    meta: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.criteria)

    def to_dict(self, with_meta: bool = True) -> dict:
        out = {
            "name": self.name,
            "config": self.config,
            "stats": self.stats,
            "criteria": [asdict(c) for c in self.criteria],
            "passed": self.passed,
        }
        if with_meta:
            out["meta"] = self.meta
        return out

    def to_json(self, with_meta: bool = True) -> str:
        return json.dumps(_plain(self.to_dict(with_meta)), indent=2, sort_keys=True)

    def fingerprint(self) -> str:
        """JSON without the timing metadata; equal for repeated seeded runs."""
        return self.to_json(with_meta=False)

    def to_text(self) -> str:
        rows = [("criterion", "value", "target", "tol", "result")]
        for c in self.criteria:
            rows.append(
                (c.name, f"{c.value:.6g}", f"{c.target:.6g}", f"{c.tolerance:.3g}",
                 "PASS" if c.passed else "FAIL")
            )
        widths = [max(len(r[i]) for r in rows) for i in range(5)]
        lines = [f"# {self.name}"]
        for r in rows:
            lines.append("  ".join(s.ljust(w) for s, w in zip(r, widths)).rstrip())
        for key in ("replicates", "seed", "runtime_s"):
            if key in self.meta:
                lines.append(f"{key}: {self.meta[key]}")
        return "\n".join(lines)


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, enum.Enum):
        return obj.value
    return obj


# -- batched statistics ------------------------------------------------------------


def batch_se(per_batch: np.ndarray) -> float:
    """Standard error of the mean of ``per_batch`` estimates."""
    return float(np.std(per_batch, ddof=1) / math.sqrt(len(per_batch)))


def _batches(x: np.ndarray, n_batches: int = N_BATCHES):
    n_batches = min(n_batches, len(x) // 2)
    return np.array_split(x, n_batches)


def mean_var_se(x: np.ndarray):
    parts = _batches(x)
    means = np.array([p.mean() for p in parts])
    variances = np.array([p.var(ddof=1) for p in parts])
    return float(x.mean()), batch_se(means), float(x.var(ddof=1)), batch_se(variances)


def cov_se(x: np.ndarray, y: np.ndarray):
    parts = _batches(np.column_stack([x, y]))
    covs = np.array([np.cov(p[:, 0], p[:, 1])[0, 1] for p in parts])
    return float(np.cov(x, y)[0, 1]), batch_se(covs)


def _within(name, value, target, se, detail=""):
    tol = SE_MULTIPLE * se
    return Criterion(name, value, target, tol, bool(abs(value - target) <= tol), detail)


# -- simulation driver --------------------------------------------------------------


def entrance_time(rf: RateFunctional, n0: int) -> float:
    """Time at which the speed ``v`` equals ``n0``; chains start there."""
    if rf.measure.is_pure_kingman:
        return -2.0 / rf.c * math.log1p(-1.0 / n0)
    return SpeedFunction(rf, Variant.V).speed_integral(float(n0))


def simulate_counts(rf: RateFunctional, n0: int, times, replicates: int, seed: int,
                    threads: int | None = None, t_start: float | None = None) -> np.ndarray:
    """Block counts at ``times`` for replicates ``0..replicates-1`` of the chain."""
    times = np.asarray(times, float)
    if t_start is None:
        t_start = entrance_time(rf, n0)
    tab = chain_tables(rf, n0)
    out = np.empty((replicates, len(times)), np.int64)

    def work(lo, hi):
        for i in range(lo, hi):
            out[i] = chain_counts_at(rf, n0, times, seed, i, t_start, tab)

    threads = threads or default_threads()
    if threads == 1:
        work(0, replicates)
    else:
        edges = np.linspace(0, replicates, 4 * threads + 1).astype(int)
        with ThreadPoolExecutor(threads) as pool:
            list(pool.map(work, edges[:-1], edges[1:]))
    return out


def write_replicates_csv(path, sample: FluctuationSample):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["replicate", "t", "value"])
        for i, row in enumerate(sample.values):
            for t, x in zip(sample.grid, row):
                wr.writerow([i, f"{t:.17g}", f"{x:.17g}"])


def check_n0(rf: RateFunctional, n0: int, epsilon: float, grid) -> float:
    v = SpeedFunction(rf, Variant.V).solve_v(epsilon * float(np.max(grid)))
    if n0 < N0_GUARD_RATIO * v:
        raise InsufficientN0(
            f"n0={n0} is below {N0_GUARD_RATIO:g} * v = {N0_GUARD_RATIO * v:.6g}"
        )
    return v


def marginal_criteria(sample: FluctuationSample, scale_c: float, mean_target=None,
                      check_mean: bool = True):
    """Moment, covariance and KS comparisons with ``sqrt(scale_c) Z``."""
    grid = sample.grid
    n_grid = len(grid)
    crit, per_time = [], []
    ks_level = KS_LEVEL / n_grid
    for j, t in enumerate(grid):
        x = sample.values[:, j]
        mean, mean_se, var, var_se = mean_var_se(x)
        target_var = limit_covariance(t, t, scale_c)
        mu = 0.0 if mean_target is None else mean_target(t)
        ks = stats.kstest(x - mu, "norm", args=(0.0, math.sqrt(target_var)))
        per_time.append(
            {"t": t, "mean": mean, "mean_se": mean_se, "var": var, "var_se": var_se,
             "target_var": target_var, "target_mean": mu,
             "ks_stat": float(ks.statistic), "ks_p": float(ks.pvalue)}
        )
        crit.append(_within(f"var[t={t:g}]", var, target_var, var_se))
        if check_mean:
            crit.append(_within(f"mean[t={t:g}]", mean, mu, mean_se))
        crit.append(
            Criterion(f"ks[t={t:g}]", float(ks.pvalue), ks_level, 0.0,
                      bool(ks.pvalue > ks_level), "Bonferroni-corrected p-value floor")
        )
    covs = []
    for a in range(n_grid):
        for b in range(a + 1, n_grid):
            cv, se = cov_se(sample.values[:, a], sample.values[:, b])
            target = limit_covariance(grid[a], grid[b], scale_c)
            covs.append({"s": grid[a], "t": grid[b], "cov": cv, "cov_se": se, "target": target})
            crit.append(_within(f"cov[{grid[a]:g},{grid[b]:g}]", cv, target, se))
    return crit, {"marginals": per_time, "covariances": covs}


def run_fclt_experiment(measure: DrivingMeasure, epsilon: float, grid, normalization,
                        replicates: int = 2000, n0: int = 100_000, seed: int = 0,
                        threads: int | None = None, csv_path=None, check_mean: bool = True,
                        name: str = "fclt") -> ExperimentReport:
    """Fluctuations ``X_eps`` at ``grid`` against ``sqrt(c) Z``."""
    started = time.perf_counter()
    grid = check_grid(grid)
    if replicates < MIN_REPLICATES:
        raise DomainError(f"need at least {MIN_REPLICATES} replicates")
    if not epsilon > 0:
        raise DomainError("epsilon must be positive")
    rf = RateFunctional(measure)
    v_top = check_n0(rf, n0, epsilon, grid)
    t_start = entrance_time(rf, n0)
    times = epsilon * grid
    if times[0] <= t_start:
        raise BadGrid("first query time precedes the entrance time of n0")
    counts = simulate_counts(rf, n0, times, replicates, seed, threads, t_start)
    speeds = normalizing_speeds(rf, normalization, times)
    sample = FluctuationSample(epsilon, grid, normalization, counts, speeds)
    if csv_path is not None:
        write_replicates_csv(csv_path, sample)
    crit, st = marginal_criteria(sample, measure.c, check_mean=check_mean)
    st["speeds"] = speeds
    st["v_at_max_grid"] = v_top
    cfg = {
        "measure": measure.to_dict(), "epsilon": epsilon, "grid": grid,
        "normalization": Normalization(normalization), "replicates": replicates,
        "n0": n0, "seed": seed, "t_start": t_start,
    }
    meta = {"replicates": replicates, "seed": seed, "threads": threads or default_threads(),
            "runtime_s": round(time.perf_counter() - started, 3)}
    report = ExperimentReport(name, _plain(cfg), _plain(st), crit, meta)
    report.sample = sample
    return report


# -- sharpness ----------------------------------------------------------------------

A_GRID = (1e3, 1e5, 1e7)
RATIO_TIMES = (1e-2, 1e-3, 1e-4, 1e-5)


def richardson_sqrt(f_coarse: float, f_fine: float, scale: float) -> float:
    """Limit of ``f`` assuming an error ``~ h^{1/2}`` and a step ratio ``scale``."""
    r = math.sqrt(scale)
    return (r * f_fine - f_coarse) / (r - 1.0)


def sharpness_constants(rf: RateFunctional):
    """A from the rate functional and from the speed function, with diagnostics."""
    est = rf.estimate_A(A_GRID)
    a_rates = richardson_sqrt(est.values[-2], est.values[-1], A_GRID[-1] / A_GRID[-2])
    sf = SpeedFunction(rf, Variant.V)
    ratios = [sf.drift_ratio(t) for t in RATIO_TIMES]
    a_speed_raw = A_from_ratio(rf.c, ratios[-1])
    a_speed = richardson_sqrt(
        A_from_ratio(rf.c, ratios[-3]), a_speed_raw, RATIO_TIMES[-3] / RATIO_TIMES[-1]
    )
    return {
        "A_rates": a_rates, "A_rates_values": list(est.values), "A_grid": list(A_GRID),
        "A_speed": a_speed, "A_speed_raw": a_speed_raw,
        "ratio_times": list(RATIO_TIMES), "ratios": ratios,
        "drift_constant": drift_constant(rf.c, a_rates),
    }


def run_sharpness_experiment(measure: DrivingMeasure, epsilon_list=(1e-3,), replicates: int = 2000,
                             seed: int = 0, n0: int = 100_000, threads: int | None = None,
                             name: str = "sharpness") -> ExperimentReport:
    """Drift of ``X^w_eps(1)`` towards the critical constant, ``X^v`` driftless."""
    started = time.perf_counter()
    rf = RateFunctional(measure)
    consts = sharpness_constants(rf)
    a1, a2 = consts["A_rates"], consts["A_speed"]
    gap = abs(a1 - a2) / abs(a1) if a1 else abs(a2)
    if gap > A_AGREEMENT:
        raise OracleMismatch(f"A estimates disagree: {a1!r} vs {a2!r}")
    limit = consts["drift_constant"]
    crit = [Criterion("A_agreement", gap, 0.0, A_AGREEMENT, True, "relative gap of two A oracles")]
    errs = [abs(r - limit) for r in consts["ratios"]]
    crit.append(
        Criterion("ratio_converges", errs[-1], 0.0, errs[0],
                  bool(all(b < a for a, b in zip(errs, errs[1:]))),
                  "distance of the speed ratio to the drift constant shrinks as t decreases")
    )
    per_eps = []
    grid = np.array([1.0])
    sf_v = SpeedFunction(rf, Variant.V)
    for k, eps in enumerate(epsilon_list):
        check_n0(rf, n0, eps, grid)
        t_start = entrance_time(rf, n0)
        counts = simulate_counts(rf, n0, eps * grid, replicates, seed + k, threads, t_start)
        v = np.array([sf_v.solve_v(eps)])
        w = normalizing_speeds(rf, Normalization.W, eps * grid)
        xv = FluctuationSample(eps, grid, Normalization.V, counts, v).values[:, 0]
        xw = FluctuationSample(eps, grid, Normalization.W, counts, w).values[:, 0]
        mv, mv_se, var_v, var_v_se = mean_var_se(xv)
        mw, mw_se, var_w, var_w_se = mean_var_se(xw)
        per_eps.append(
            {"epsilon": eps, "mean_w": mw, "mean_w_se": mw_se, "var_w": var_w,
             "var_w_se": var_w_se, "mean_v": mv, "mean_v_se": mv_se, "var_v": var_v,
             "var_v_se": var_v_se,
             "deterministic_offset": sf_v.drift_ratio(eps)}
        )
        crit.append(_within(f"mean_w[eps={eps:g}]", mw, limit, mw_se))
        crit.append(_within(f"mean_v[eps={eps:g}]", mv, 0.0, mv_se))
        crit.append(_within(f"var_v[eps={eps:g}]", var_v, measure.c / 6.0, var_v_se))
    cfg = {"measure": measure.to_dict(), "epsilon_list": list(epsilon_list),
           "replicates": replicates, "n0": n0, "seed": seed}
    meta = {"replicates": replicates, "seed": seed, "threads": threads or default_threads(),
            "runtime_s": round(time.perf_counter() - started, 3)}
    return ExperimentReport(name, _plain(cfg), _plain({**consts, "per_epsilon": per_eps}), crit, meta)


# -- cross-backend checks ---------------------------------------------------------------


def backend_counts(measure: DrivingMeasure, backend, n: int, times, replicates: int, seed: int,
                   rf: RateFunctional | None = None):
    """Counts at ``times`` and the count after the first jump, for one backend."""
    backend = Backend(backend)
    rf = rf or RateFunctional(measure)
    times = np.asarray(times, float)
    at = np.empty((replicates, len(times)), np.int64)
    first = np.empty(replicates, np.int64)
    for i in range(replicates):
        path = simulate(SimConfig(measure, n, math.inf, backend, (seed, i)), rf)
        at[i] = path.count_at(times)
        first[i] = path.counts[0]
    return at, first


def total_variation(a: np.ndarray, b: np.ndarray, n: int) -> float:
    ha = np.bincount(a, minlength=n + 1) / len(a)
    hb = np.bincount(b, minlength=n + 1) / len(b)
    return 0.5 * float(np.abs(ha - hb).sum())


def two_sample_chi2(a: np.ndarray, b: np.ndarray, n: int) -> float:
    table = np.vstack([np.bincount(a, minlength=n + 1), np.bincount(b, minlength=n + 1)])
    table = table[:, table.sum(axis=0) > 0]
    if table.shape[1] < 2:
        return 1.0
    return float(stats.chi2_contingency(table)[1])


def first_jump_law(rf: RateFunctional, n: int) -> np.ndarray:
    """Exact law of the count after the first jump from ``n``, indexed by count."""
    row = rf.transition_row(n)
    law = np.zeros(n + 1)
    law[n - row.ks + 1] = row.rates / row.total
    return law


def run_oracle_equivalence(measure: DrivingMeasure, n: int, t_grid, replicates: int = 100_000,
                           seed: int = 0, name: str = "oracle_equivalence") -> ExperimentReport:
    """Compare ``N_t`` histograms across the chain and the two oracles."""
    started = time.perf_counter()
    if n > 30:
        raise DomainError("oracle equivalence runs need n <= 30")
    t_grid = check_grid(t_grid)
    rf = RateFunctional(measure)
    backends = [Backend.CHAIN, Backend.PARTITION_ORACLE]
    if measure.atoms_only:
        backends.insert(1, Backend.PAINTBOX_ORACLE)
    results = {}
    for k, be in enumerate(backends):
        # distinct seeds per backend: the comparisons are two-sample tests
        results[be] = backend_counts(measure, be, n, t_grid, replicates, seed + k, rf)
    law = first_jump_law(rf, n)
    crit, hist, pairs = [], {}, []
    n_pairs = len(backends) * (len(backends) - 1) // 2
    chi_level = KS_LEVEL / (n_pairs * len(t_grid))
    for be in backends:
        at, first = results[be]
        hist[be.value] = {f"{t:g}": np.bincount(at[:, j], minlength=n + 1) for j, t in enumerate(t_grid)}
        observed = np.bincount(first, minlength=n + 1)
        support = law > 0
        p = float(stats.chisquare(observed[support], law[support] * replicates).pvalue) if support.sum() > 1 else 1.0
        crit.append(Criterion(f"first_jump[{be.value}]", p, KS_LEVEL / len(backends), 0.0,
                              bool(p > KS_LEVEL / len(backends)), "chi-square vs exact row"))
        direct = float(np.mean(first == 1))
        hist[be.value]["direct_to_one"] = direct
    for i in range(len(backends)):
        for j in range(i + 1, len(backends)):
            a, b = backends[i], backends[j]
            for m, t in enumerate(t_grid):
                tv = total_variation(results[a][0][:, m], results[b][0][:, m], n)
                p = two_sample_chi2(results[a][0][:, m], results[b][0][:, m], n)
                pairs.append({"a": a.value, "b": b.value, "t": t, "tv": tv, "chi2_p": p})
                crit.append(Criterion(f"tv[{a.value},{b.value},t={t:g}]", tv, 0.0, TV_LIMIT,
                                      bool(tv < TV_LIMIT)))
                crit.append(Criterion(f"chi2[{a.value},{b.value},t={t:g}]", p, chi_level, 0.0,
                                      bool(p > chi_level), "Bonferroni-corrected p-value floor"))
    st = {"histograms": hist, "pairs": pairs, "first_jump_law": law,
          "direct_to_one_exact": float(law[1])}
    cfg = {"measure": measure.to_dict(), "n": n, "t_grid": t_grid, "replicates": replicates,
           "seed": seed, "backends": [b.value for b in backends]}
    meta = {"replicates": replicates, "seed": seed,
            "runtime_s": round(time.perf_counter() - started, 3)}
    return ExperimentReport(name, _plain(cfg), _plain(st), crit, meta)


def run_config(cfg: dict, seed: int | None = None, threads: int | None = None) -> ExperimentReport:
    """Run an experiment described by a JSON-style mapping.

    ``kind`` selects ``fclt`` (default), ``sharpness`` or ``oracle``; an
    explicit ``seed`` overrides the one stored in ``cfg``.
    """
    kind = cfg.get("kind", "fclt")
    try:
        measure = validate(cfg["measure"])
        seed = int(cfg.get("seed", 0)) if seed is None else seed
        name = cfg.get("name", kind)
        if kind == "fclt":
            return run_fclt_experiment(
                measure, float(cfg["epsilon"]), cfg["grid"], cfg["normalization"],
                int(cfg.get("replicates", 2000)), int(cfg.get("n0", 100_000)), seed, threads,
                check_mean=bool(cfg.get("check_mean", True)), name=name,
            )
        if kind == "sharpness":
            return run_sharpness_experiment(
                measure, cfg.get("epsilon_list", [1e-3]), int(cfg.get("replicates", 2000)),
                seed, int(cfg.get("n0", 100_000)), threads, name=name,
            )
        if kind == "oracle":
            return run_oracle_equivalence(
                measure, int(cfg["n"]), cfg["t_grid"], int(cfg.get("replicates", 100_000)),
                seed, name=name,
            )
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed experiment config: {exc!r}") from exc
    raise ConfigError(f"unknown experiment kind {kind!r}")
