"""Monte Carlo engine: paired trials, network MSE, and the statistical checks."""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import csv
import json
import logging
import os
from pathlib import Path

import numpy as np
from scipy import stats

from .filters import make_filter
from .linalg import NumericalError
from .model import simulate_batch
from .weights import fused_p_order_check

log = logging.getLogger(__name__)

ORDER = ("ckf", "table1", "cdkf-adaptive", "cdkf-constant")


class ExperimentError(RuntimeError):
    """A filter failed numerically; the message carries filter, trials and step."""


@dataclass
class FilterRun:
    name: str
    errors: np.ndarray          # (K+1, T, N, n) estimate minus truth
    P: np.ndarray               # (K+1, N, n, n), identical across trials
    weight_log: list = field(default_factory=list)
    _consistency: dict = field(default_factory=dict, repr=False)

    def consistency(self, n_boot=200, seed=0):
        key = (n_boot, seed)
        if key not in self._consistency:
            self._consistency[key] = consistency_report(self.errors, self.P, n_boot, seed=seed)
        return self._consistency[key]

    @property
    def sq_err(self):
        """(K+1, T, N) squared error norms."""
        return np.einsum("ktin,ktin->kti", self.errors, self.errors)

    @property
    def per_trial(self):
        """(K+1, T) network-average squared error."""
        return self.sq_err.mean(axis=2)

    @property
    def mse(self):
        return self.per_trial.mean(axis=1)

    @property
    def mse_se(self):
        T = self.errors.shape[1]
        return self.per_trial.std(axis=1, ddof=1) / np.sqrt(T) if T > 1 else np.zeros(len(self.P))

    @property
    def trace_sum(self):
        """``tr(sum_i P_{k,i})`` per step."""
        return np.einsum("kinn->k", self.P)

    @property
    def fallbacks(self):
        return sum(1 for e in self.weight_log if e["fallback"])


@dataclass
class TrialMetrics:
    scenario: object
    trials: int
    seed: int
    runs: dict

    @property
    def horizon(self):
        return self.scenario.horizon


def _run_chunk(scenario, names, seed, first, count):
    K = scenario.horizon
    states, meas = simulate_batch(scenario.model, scenario.sensors, K, seed, count,
                                  scenario.P0, first_trial=first)
    out = {}
    for name in names:
        flt = make_filter(name, scenario.model, scenario.sensors, scenario.topology,
                          scenario.weight_settings)
        if name == "table1" and "table1_fusion" in scenario.extra:
            flt.fusion = scenario.extra["table1_fusion"]
        st = flt.init(scenario.P0, (count,), scenario.P0_inflation)
        N = len(scenario.sensors)
        n = scenario.model.state_dim
        err = np.empty((K + 1, count, N, n))
        P = np.empty((K + 1, N, n, n))
        for k in range(K + 1):
            if k > 0:
                try:
                    st = flt.step(st, [m[:, k] for m in meas])
                except NumericalError as exc:
                    raise ExperimentError(
                        f"filter {name}, trials {first}..{first + count - 1}, k={k}: {exc}") from exc
            x, Pk = flt.node_view(st)
            err[k] = x - states[:, k, None, :]
            P[k] = Pk
        out[name] = (err, P, getattr(flt, "weight_log", []))
    return out


def run_experiment(scenario, filters=None, trials=None, seed=None, workers=None) -> TrialMetrics:
    """Run every filter on the same simulated trials (common random numbers).

    Trials are split into ``workers`` contiguous chunks run in threads
    (default from ``DKFSIM_THREADS``, else 1) and merged by trial index.
    """
    names = list(filters or scenario.filters)
    T = scenario.trials if trials is None else trials
    seed = scenario.seed if seed is None else seed
    workers = workers or int(os.environ.get("DKFSIM_THREADS", "1"))
    workers = max(1, min(workers, T))
    bounds = np.linspace(0, T, workers + 1).astype(int)
    chunks = [(int(a), int(b - a)) for a, b in zip(bounds[:-1], bounds[1:])]
    if workers == 1:
        parts = [_run_chunk(scenario, names, seed, *chunks[0])]
    else:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(lambda c: _run_chunk(scenario, names, seed, *c), chunks))
    runs = {}
    for name in names:
        err = np.concatenate([p[name][0] for p in parts], axis=1)
        runs[name] = FilterRun(name, err, parts[0][name][1], parts[0][name][2])
    return TrialMetrics(scenario, T, seed, runs)


# --- statistics -------------------------------------------------------------

@dataclass
class ConsistencyReport:
    min_eig: np.ndarray     # (K+1, N) min eig of P - sample covariance
    band: np.ndarray        # (K+1, N) 3-SE bootstrap band
    passed: bool

    @property
    def worst(self):
        slack = self.min_eig + self.band
        k, i = np.unravel_index(np.argmin(slack), slack.shape)
        return int(k), int(i), float(self.min_eig[k, i]), float(self.band[k, i])


def sample_covariance(errors, weights=None):
    """Zero-mean second moment over the trial axis (axis 1 of ``(K+1, T, N, n)``)."""
    T = errors.shape[1]
    w = np.full(T, 1.0 / T) if weights is None else weights
    return np.einsum("t,ktia,ktib->kiab", w, errors, errors)


def _min_eig(M):
    return np.linalg.eigvalsh(0.5 * (M + np.swapaxes(M, -1, -2)))[..., 0]


def consistency_report(errors, P, n_boot=200, n_se=3.0, seed=0) -> ConsistencyReport:
    """Per-(k, i) ``min eig(P_{k,i} - E[e e^T])`` with a bootstrap band.

    The expectation uses the known zero mean. The band is ``n_se`` times the
    bootstrap standard deviation over trial resamples.
    """
    T = errors.shape[1]
    me = _min_eig(P - sample_covariance(errors))
    rng = np.random.default_rng(seed)
    counts = rng.multinomial(T, np.full(T, 1.0 / T), size=n_boot) / T
    boot = np.array([_min_eig(P - sample_covariance(errors, c)) for c in counts])
    band = n_se * boot.std(axis=0, ddof=1)
    return ConsistencyReport(me, band, bool((me >= -band).all()))


@dataclass
class GaussianityResult:
    mean: np.ndarray
    mean_se: np.ndarray
    skew: np.ndarray
    skew_se: float
    kurtosis: np.ndarray
    kurtosis_se: float
    mean_ok: bool
    skew_ok: bool
    kurtosis_ok: bool

    @property
    def passed(self):
        return self.mean_ok and self.skew_ok and self.kurtosis_ok


def gaussianity_check(samples, n_se=3.0) -> GaussianityResult:
    """Moment checks on ``(T, d)`` samples: zero mean, zero skewness, zero
    excess kurtosis, each componentwise within ``n_se`` standard errors."""
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    T = len(x)
    mean = x.mean(axis=0)
    mean_se = x.std(axis=0, ddof=1) / np.sqrt(T)
    skew = stats.skew(x, axis=0, bias=False)
    kurt = stats.kurtosis(x, axis=0, bias=False)
    skew_se = np.sqrt(6.0 * T * (T - 1) / ((T - 2) * (T + 1) * (T + 3)))
    kurt_se = 2 * skew_se * np.sqrt((T * T - 1) / ((T - 3) * (T + 5)))
    return GaussianityResult(mean, mean_se, skew, skew_se, kurt, kurt_se,
                             bool((np.abs(mean) <= n_se * mean_se).all()),
                             bool((np.abs(skew) <= n_se * skew_se).all()),
                             bool((np.abs(kurt) <= n_se * kurt_se).all()))


def dominance_trace(P_adaptive, P_constant):
    """(K+1, N) min eig of ``P_a - P_w``."""
    K1, N = P_adaptive.shape[:2]
    return np.array([[fused_p_order_check(P_adaptive[k, i], P_constant[k, i])
                      for i in range(N)] for k in range(K1)])


def steady_slice(K):
    """Last 25% of steps ``0..K``."""
    return slice(K - K // 4, K + 1)


def paired_gap(run_lo, run_hi, K):
    """Mean and SE of per-trial steady-state ``MSE(hi) - MSE(lo)``."""
    ss = steady_slice(K)
    d = run_hi.per_trial[ss].mean(axis=0) - run_lo.per_trial[ss].mean(axis=0)
    se = d.std(ddof=1) / np.sqrt(len(d)) if len(d) > 1 else 0.0
    return float(d.mean()), float(se)


def boundedness(P, factor=1.05):
    """``(passed, last_quartile_max, mid_quartile_max)`` on ``tr(P_{k,i})``."""
    tr = np.einsum("kinn->ki", P)
    if not np.isfinite(tr).all():
        return False, np.inf, np.inf
    K1 = len(tr)
    q = K1 // 4
    mid = tr[q:3 * q].max()
    last = tr[3 * q:].max()
    return bool(last <= factor * mid), float(last), float(mid)


# --- acceptance-style checks over one experiment -----------------------------

def evaluate_checks(res: TrialMetrics, gauss_k=50, n_boot=200):
    """Pass/fail per applicable check; checks needing more trials are skipped."""
    K, T = res.horizon, res.trials
    checks = {}
    for name, run in res.runs.items():
        if name.startswith("cdkf") and T >= 100:
            rep = run.consistency(n_boot, res.seed)
            k, i, me, band = rep.worst
            checks[f"consistency[{name}]"] = {
                "passed": rep.passed,
                "detail": f"worst k={k} sensor={i + 1}: min_eig={me:.4g}, band={band:.4g}"}
            slack = run.mse - run.trace_sum / run.P.shape[1] - 3 * run.mse_se
            checks[f"mse_within_trace[{name}]"] = {
                "passed": bool((slack <= 0).all()),
                "detail": f"max MSE - mean tr(P) - 3SE = {slack.max():.4g}"}
        if name.startswith("cdkf") and T >= 200 and K >= 1:
            kk = min(gauss_k, K)
            g = gaussianity_check(run.errors[kk].reshape(T, -1))
            checks[f"gaussianity[{name}]"] = {
                "passed": g.passed,
                "detail": f"k={kk}: mean_ok={g.mean_ok} skew_ok={g.skew_ok} kurtosis_ok={g.kurtosis_ok}"}
        if name.startswith("cdkf") and K >= 8:
            ok, last, mid = boundedness(run.P)
            checks[f"boundedness[{name}]"] = {
                "passed": ok, "detail": f"last-quartile max {last:.4g}, mid-quartile max {mid:.4g}"}

    if {"cdkf-adaptive", "cdkf-constant"} <= res.runs.keys():
        dom = dominance_trace(res.runs["cdkf-adaptive"].P, res.runs["cdkf-constant"].P)
        checks["dominance"] = {"passed": bool((dom >= -1e-9).all()),
                               "detail": f"min over k, i of min_eig(P_a - P_w) = {dom.min():.3g}"}

    if T >= 2:
        present = [f for f in ORDER if f in res.runs]
        for lo, hi in zip(present, present[1:]):
            gap, se = paired_gap(res.runs[lo], res.runs[hi], K)
            checks[f"ordering[{lo}<={hi}]"] = {
                "passed": gap >= -2 * se,
                "detail": f"steady-state MSE gap {gap:.4g} (2SE {2 * se:.4g})"}
    return checks


# --- output -----------------------------------------------------------------

def _fmt(x):
    return f"{x:.10g}"


def write_outputs(res: TrialMetrics, out_dir, checks=None, verbose_weights=False,
                  dump_states=False, extra_summary=None):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    K = res.horizon
    with open(out / "mse.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["k", "filter", "mse", "se", "trace_P_sum"])
        for name, run in res.runs.items():
            mse, se, tr = run.mse, run.mse_se, run.trace_sum
            for k in range(K + 1):
                w.writerow([k, name, _fmt(mse[k]), _fmt(se[k]), _fmt(tr[k])])

    if res.trials >= 2:
        with open(out / "consistency.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["k", "filter", "sensor", "min_eig", "band"])
            for name, run in res.runs.items():
                if not name.startswith("cdkf"):
                    continue
                rep = run.consistency(seed=res.seed)
                for k in range(K + 1):
                    for i in range(run.P.shape[1]):
                        w.writerow([k, name, i + 1, _fmt(rep.min_eig[k, i]), _fmt(rep.band[k, i])])

    if {"cdkf-adaptive", "cdkf-constant"} <= res.runs.keys():
        dom = dominance_trace(res.runs["cdkf-adaptive"].P, res.runs["cdkf-constant"].P)
        with open(out / "dominance.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["k", "sensor", "min_eig"])
            for k in range(K + 1):
                for i in range(dom.shape[1]):
                    w.writerow([k, i + 1, _fmt(dom[k, i])])

    if verbose_weights:
        with open(out / "weights.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["filter", "k", "sensor", "neighbors", "w", "fallback", "iterations"])
            for name, run in res.runs.items():
                for e in run.weight_log:
                    w.writerow([name, e["k"], e["sensor"] + 1,
                                " ".join(str(j + 1) for j in e["neighbors"]),
                                " ".join(_fmt(x) for x in e["w"]), int(e["fallback"]),
                                e["iterations"]])

    if dump_states:
        for name, run in res.runs.items():
            with open(out / f"states_{name}.csv", "w", newline="") as f:
                w = csv.writer(f)
                n = run.errors.shape[-1]
                w.writerow(["k", "sensor"] + [f"err{c}" for c in range(n)] + ["trace_P", "min_eig_P"])
                for k in range(K + 1):
                    for i in range(run.P.shape[1]):
                        P = run.P[k, i]
                        w.writerow([k, i + 1] + [_fmt(v) for v in run.errors[k, 0, i]]
                                   + [_fmt(np.trace(P)), _fmt(np.linalg.eigvalsh(P)[0])])

    checks = evaluate_checks(res) if checks is None else checks
    summary = {
        "scenario": res.scenario.name,
        "horizon": K,
        "trials": res.trials,
        "seed": res.seed,
        "filters": list(res.runs),
        "fallbacks": {n: r.fallbacks for n, r in res.runs.items() if r.weight_log},
        "steady_state_mse": {n: float(r.mse[steady_slice(K)].mean()) for n, r in res.runs.items()},
        "checks": checks,
        "passed": all(c["passed"] for c in checks.values()),
    }
    summary.update(res.scenario.extra)
    summary.update(extra_summary or {})
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary
