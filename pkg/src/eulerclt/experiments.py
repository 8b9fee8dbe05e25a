"""Monte-Carlo harness: CLT, mean formula and variance-series experiments.

Replicate ``r`` at side length ``m`` uses the field seed

    seed(base, m, r) = int.from_bytes(blake2b(f"{base}:{m!r}:{r}", digest_size=8), "little")

so replicates are independent streams and any single one can be rerun alone.
Replicates may run on a thread pool; results are collected in index order, so
every array in a report is independent of the thread count.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict
import csv
import datetime
import hashlib
import json
import math
import os

import numpy as np
from scipy import stats

from . import chaos, euler
from ._accel import default_threads
from .covariance import model_from_config, tameness_report
from .fieldgen import GridSpec, sample_field


class ReplicateError(RuntimeError):
    def __init__(self, m, r, cause):
        super().__init__("replicate m=%g r=%d failed: %s" % (m, r, cause))
        self.m, self.r, self.cause = m, r, cause


def derive_seed(base, m, r):
    digest = hashlib.blake2b(("%d:%r:%d" % (int(base), float(m), int(r))).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


@dataclass
class ExperimentConfig:
    model: dict = field(default_factory=lambda: {"kind": "gaussian", "scale": 1.0, "dim": 1})
    n: int = 1
    m_values: list = field(default_factory=lambda: [25.0, 50.0, 100.0])
    h: float = 0.1
    R: int = 500
    base_seed: int = 0
    Q: int = 8
    out_dir: str = None
    threads: int = None
    faces: bool = True  # per-face Morse decomposition in the mean experiment

    def __post_init__(self):
        self.n = int(self.n)
        self.R = int(self.R)
        self.m_values = [float(m) for m in self.m_values]
        if self.R < 2:
            raise ValueError("need R >= 2 replicates")
        if not self.m_values or any(b <= a for a, b in zip(self.m_values, self.m_values[1:])):
            raise ValueError("m_values must be nonempty and strictly increasing")
        cfg = dict(self.model)
        cfg.setdefault("dim", self.n)
        if int(cfg["dim"]) != self.n:
            raise ValueError("model dim %s does not match n=%d" % (cfg["dim"], self.n))
        self.model = cfg

    def covariance(self):
        return model_from_config(self.model)

    def to_dict(self):
        return asdict(self)

    def digest(self):
        """Hash of everything that determines the report arrays."""
        keep = {k: v for k, v in self.to_dict().items() if k not in ("out_dir", "threads")}
        return hashlib.sha256(json.dumps(keep, sort_keys=True).encode()).hexdigest()


def summary_stats(values, loc=0.0, scale=None):
    """Moments and a one-sample KS test against ``N(loc, scale^2)`` (scale defaults to the sample sd)."""
    x = np.asarray(values, dtype=np.float64)
    if x.size < 2:
        raise ValueError("need at least 2 values")
    mean = float(math.fsum(x) / x.size)
    var = float(np.var(x, ddof=1))
    out = {"count": int(x.size), "mean": mean, "variance": var,
           "skewness": None, "excess_kurtosis": None,
           "ks_statistic": None, "ks_pvalue": None, "ks_undefined": False}
    if var == 0.0 or not np.isfinite(var):
        out["ks_undefined"] = True
        return out
    out["skewness"] = float(stats.skew(x, bias=False))
    out["excess_kurtosis"] = float(stats.kurtosis(x, fisher=True, bias=False))
    sd = math.sqrt(var) if scale is None else float(scale)
    ks = stats.kstest(x, "norm", args=(loc, sd))
    out["ks_statistic"] = float(ks.statistic)
    out["ks_pvalue"] = float(ks.pvalue)
    out["ks_scale"] = sd
    return out


def _check(value, threshold, ok):
    return {"value": value, "threshold": threshold, "pass": bool(ok)}


@dataclass
class ExperimentReport:
    kind: str
    config: dict
    m_values: list
    psi: dict
    normalized: dict
    summary: dict
    checks: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    @property
    def passed(self):
        return all(c["pass"] for c in self.checks.values())

    def to_dict(self):
        key = lambda m: repr(float(m))
        return {
            "kind": self.kind, "config": self.config, "passed": self.passed,
            "m_values": self.m_values,
            "psi": {key(m): [float(v) for v in self.psi[m]] for m in self.m_values},
            "normalized": {key(m): [float(v) for v in self.normalized[m]] for m in self.m_values},
            "summary": {key(m): self.summary[m] for m in self.m_values},
            "checks": self.checks, "extra": self.extra, "provenance": self.provenance,
        }

    def write(self, out_dir):
        os.makedirs(os.path.join(out_dir, "plots"), exist_ok=True)
        with open(os.path.join(out_dir, "report.json"), "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True, default=_json_default)
        with open(os.path.join(out_dir, "samples.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["m", "replicate", "psi", "psi_normalized"])
            for m in self.m_values:
                for r, (p, z) in enumerate(zip(self.psi[m], self.normalized[m])):
                    w.writerow([repr(m), r, repr(float(p)), repr(float(z))])
        names = []
        for m in self.m_values:
            tag = ("%g" % m).replace(".", "p")
            write_histogram_csv(self.normalized[m], os.path.join(out_dir, "plots", "hist_m%s.csv" % tag))
            write_qq_csv(self.normalized[m], os.path.join(out_dir, "plots", "qq_m%s.csv" % tag))
            names.append(tag)
        with open(os.path.join(out_dir, "plots", "render.gp"), "w") as fh:
            fh.write(render_script(names))


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(type(obj))


def write_histogram_csv(values, path, bins=30):
    x = np.asarray(values, dtype=np.float64)
    counts, edges = np.histogram(x, bins=bins)
    sd = float(np.std(x, ddof=1)) if x.size > 1 else 0.0
    width = edges[1] - edges[0]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_left", "bin_right", "count", "density", "normal_density"])
        for lo, hi, c in zip(edges[:-1], edges[1:], counts):
            mid = 0.5 * (lo + hi)
            nd = stats.norm.pdf(mid, 0.0, sd) if sd > 0 else 0.0
            w.writerow([repr(float(lo)), repr(float(hi)), int(c), repr(float(c / (x.size * width))), repr(float(nd))])


def write_qq_csv(values, path):
    x = np.sort(np.asarray(values, dtype=np.float64))
    sd = float(np.std(x, ddof=1)) if x.size > 1 else 0.0
    probs = (np.arange(1, x.size + 1) - 0.5) / x.size
    theo = stats.norm.ppf(probs) * sd
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["theoretical", "sample"])
        for t, s in zip(theo, x):
            w.writerow([repr(float(t)), repr(float(s))])


def render_script(tags):
    lines = ["# gnuplot -e \"set term pngcairo\" render.gp", "set datafile separator ','", "set key top left"]
    for tag in tags:
        lines += [
            "set output 'hist_m%s.png'" % tag,
            "plot 'hist_m%s.csv' every ::1 using (($1+$2)/2):4 with boxes title 'm=%s', "
            "'' every ::1 using (($1+$2)/2):5 with lines title 'normal'" % (tag, tag),
            "set output 'qq_m%s.png'" % tag,
            "plot 'qq_m%s.csv' every ::1 using 1:2 with points title 'QQ m=%s', x with lines notitle" % (tag, tag),
        ]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------


def _map_ordered(fn, items, threads):
    threads = default_threads() if threads is None else max(1, int(threads))
    if threads == 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _psi_replicate(model, spec, base, m, r):
    try:
        f = sample_field(model, spec, derive_seed(base, m, r))
        return euler.upper_euler_integral(euler.ec_curve(f))
    except Exception as exc:  # attach (m, r) context
        raise ReplicateError(m, r, exc) from exc


def _now():
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def _provenance(config, started):
    return {"config_hash": config.digest(), "seed_rule": "blake2b-64('base:m:r')",
            "rng": "numpy Philox", "started": started, "finished": _now(),
            "seeds_first": {repr(m): derive_seed(config.base_seed, m, 0) for m in config.m_values}}


def run_clt_experiment(config, threads=None, check_tameness=True, variance_series=True):
    """Euler integrals of R fields per side length, normalized by the analytic mean and ``m^{n/2}``."""
    started = _now()
    model = config.covariance()
    if check_tameness:
        rep = tameness_report(model)
        if not rep.checkable_pass:
            raise ValueError("model fails checkable tameness conditions: %s" % rep.conditions)
    threads = config.threads if threads is None else threads
    n = config.n
    psi, normalized, summary = {}, {}, {}
    for m in config.m_values:
        spec = GridSpec(n, m, config.h)
        vals = np.array(_map_ordered(lambda r: _psi_replicate(model, spec, config.base_seed, m, r),
                                     range(config.R), threads))
        mu = chaos.mean_euler_integral(model, n, m)
        z = (vals - mu) / m ** (n / 2.0)
        psi[m], normalized[m] = vals, z
        summary[m] = summary_stats(z, loc=0.0)
        summary[m]["analytic_mean"] = mu
        summary[m]["psi_mean"] = float(math.fsum(vals) / vals.size)
        summary[m]["psi_mean_se"] = float(np.std(vals, ddof=1) / math.sqrt(vals.size))
    report = ExperimentReport("clt", config.to_dict(), list(config.m_values), psi, normalized, summary)
    top = summary[config.m_values[-1]]
    if top["ks_undefined"]:
        report.checks["ks_pvalue"] = _check(None, 0.01, False)
    else:
        report.checks["ks_pvalue"] = _check(top["ks_pvalue"], 0.01, top["ks_pvalue"] > 0.01)
        report.checks["skewness"] = _check(top["skewness"], 0.25, abs(top["skewness"]) < 0.25)
        report.checks["excess_kurtosis"] = _check(top["excess_kurtosis"], 0.5, abs(top["excess_kurtosis"]) < 0.5)
    if len(config.m_values) > 1:
        report.checks["variance_stability"] = _check(variance_stability(summary), 0.15,
                                                     variance_stability(summary) < 0.15)
    if variance_series:
        series = chaos.truncated_variance(model, config.Q)
        emp = top["variance"]
        rel = abs(series.sigma2 - emp) / emp
        tol = 0.10 if n == 1 else 0.20
        report.extra["variance_series"] = series.to_dict()
        report.checks["variance_series"] = _check(rel, tol, rel < tol)
    report.provenance = _provenance(config, started)
    return report


def variance_stability(summary):
    """Largest relative deviation of the per-m normalized variances from their average."""
    v = np.array([s["variance"] for s in summary.values()])
    return float(np.abs(v / v.mean() - 1.0).max())


def _mean_replicate(model, spec, base, m, r, faces):
    try:
        f = sample_field(model, spec, derive_seed(base, m, r))
        psi = euler.upper_euler_integral(euler.ec_curve(f))
        parts = euler.morse_euler_integral(f, by_face_dim=True) if faces else None
        return psi, parts
    except Exception as exc:
        raise ReplicateError(m, r, exc) from exc


def run_mean_experiment(config, threads=None):
    """MC mean of the Euler integral per side length against ``-sqrt(lambda_2) n m / sqrt(2 pi)``.

    With ``config.faces`` the Morse representation is split by face dimension
    (0 = vertices, 1 = edges, ..., n = interior) for every replicate.
    """
    started = _now()
    model = config.covariance()
    threads = config.threads if threads is None else threads
    n = config.n
    psi, normalized, summary, faces = {}, {}, {}, {}
    report = ExperimentReport("mean", config.to_dict(), list(config.m_values), psi, normalized, summary)
    for m in config.m_values:
        spec = GridSpec(n, m, config.h)
        out = _map_ordered(lambda r: _mean_replicate(model, spec, config.base_seed, m, r, config.faces),
                           range(config.R), threads)
        vals = np.array([o[0] for o in out])
        mu = chaos.mean_euler_integral(model, n, m)
        psi[m] = vals
        normalized[m] = (vals - mu) / m ** (n / 2.0)
        se = float(np.std(vals, ddof=1) / math.sqrt(vals.size))
        mc = float(math.fsum(vals) / vals.size)
        summary[m] = summary_stats(normalized[m], loc=0.0)
        summary[m].update({"analytic_mean": mu, "psi_mean": mc, "psi_mean_se": se,
                           "z": (mc - mu) / se if se > 0 else None})
        report.checks["mean_m%g" % m] = _check(abs(mc - mu), 3.0 * se, abs(mc - mu) < 3.0 * se)
        if config.faces:
            expect = chaos.mean_factorization(model, n, m)
            rows = {}
            for k in range(n + 1):
                v = np.array([o[1][k] for o in out])
                km, kse = float(math.fsum(v) / v.size), float(np.std(v, ddof=1) / math.sqrt(v.size))
                rows[str(k)] = {"mc_mean": km, "se": kse, "expected": expect[k]["total"]}
            faces[repr(m)] = rows
            inner = rows[str(n)]
            if n > 1:
                report.checks["interior_zero_m%g" % m] = _check(abs(inner["mc_mean"]), 3.0 * inner["se"],
                                                                abs(inner["mc_mean"]) < 3.0 * inner["se"])
    report.extra["faces"] = faces
    ms = config.m_values
    ratios = []
    for a in ms:
        if 2 * a in ms:
            r = summary[2 * a]["psi_mean"] / summary[a]["psi_mean"]
            # delta-method error of the ratio
            ea = summary[a]["psi_mean_se"] / abs(summary[a]["psi_mean"])
            eb = summary[2 * a]["psi_mean_se"] / abs(summary[2 * a]["psi_mean"])
            err = abs(r) * math.hypot(ea, eb)
            ratios.append({"m": a, "ratio": r, "se": err})
            report.checks["doubling_m%g" % a] = _check(abs(r - 2.0), 3.0 * err, abs(r - 2.0) < 3.0 * err)
    report.extra["doubling"] = ratios
    report.provenance = _provenance(config, started)
    return report


def write_mean_csv(report, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["m", "mc_mean", "se", "analytic_mean", "pass"])
        for m in report.m_values:
            s = report.summary[m]
            w.writerow([repr(m), repr(s["psi_mean"]), repr(s["psi_mean_se"]), repr(s["analytic_mean"]),
                        int(report.checks["mean_m%g" % m]["pass"])])
