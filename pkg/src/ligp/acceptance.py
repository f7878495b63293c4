"""Acceptance checks: one function per criterion, each returning a :class:`CriterionResult`.

Tolerances are module constants.  The cheap checks (1-4 and 9) run in
seconds; the reproduction experiments (5-8) run many seeds and are normally
driven by ``scripts/run_acceptance.py``, which stores each result as JSON so
that the test suite can re-check the recorded measurements.
"""

import json
import os
import tempfile
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.integrate import nquad
from scipy.stats import spearmanr

from ligp.kernel import JitterPolicy

# criterion 1
WOODBURY_INSTANCES = 200
WOODBURY_ABS, WOODBURY_REL = 1e-8, 1e-9
WOODBURY_SECONDS = 30.0
# criterion 2
GRADIENT_POINTS = 50
GRADIENT_REL = 1e-4
GRADIENT_SECONDS = 10.0
# criterion 3
TAU2_INSTANCES = 100
TAU2_REL = 1e-9
TAU2_SECONDS = 10.0
# criterion 4
WIMSE_INSTANCES = 20
WIMSE_REL = 1e-5
WIMSE_SECONDS = 60.0
# criterion 5
BERMUDAN_2D_BAND = (7.85, 8.15)
BERMUDAN_2D_SECONDS_8CORE = 300.0
# criterion 6
BERMUDAN_5D_REFERENCE, BERMUDAN_5D_HALFWIDTH, BERMUDAN_5D_FLOOR = 11.83, 0.25, 11.55
BERMUDAN_5D_SECONDS_8CORE = 900.0
BERMUDAN_SEEDS = 5
BERMUDAN_PATHS = 25000
# criterion 7
HERBIE_RATIO = 1.25
HERBIE_SEEDS = 10
HERBIE_DENSE_SUBSET = 1000
HERBIE_SECONDS = 600.0
# criterion 8
SIR_RHO = 0.5
SIR_SEEDS = 10
SIR_SECONDS = 600.0

TIGHT = JitterPolicy(eps_K=1e-8, eps_Q=1e-14)


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    summary: str
    details: dict = field(default_factory=dict)
    runtime: float = 0.0
    cores: int = 1

    def line(self):
        return f"criterion {self.number} [{self.name}]: {'PASS' if self.passed else 'FAIL'} - {self.summary}"

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def _cores():
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else os.cpu_count()


def _scaled_budget(seconds_on_8, cores):
    """A wall-clock budget stated for eight cores, rescaled to the cores available."""
    return seconds_on_8 * 8.0 / max(1, min(cores, 8))


# ---------------------------------------------------------------------------
# 1-4: numerical identities


def woodbury_suite(n_instances=WOODBURY_INSTANCES, seed=0):
    from ligp.selfcheck import compare, random_instance

    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst = {}
    failures = 0
    for i in range(n_instances):
        inst = random_instance(rng, max_n=40, max_m=5, max_a=4, max_d=3, force_mixed=i % 4 == 0)
        res = compare(inst, TIGHT, rng)
        for name, (a, r, ok) in res.items():
            if name == "tau2_decomposition":
                continue
            prev = worst.get(name, (0.0, 0.0))
            worst[name] = (max(prev[0], a), max(prev[1], r))
            failures += not ok
    runtime = time.perf_counter() - t0
    passed = failures == 0 and runtime < WOODBURY_SECONDS
    summary = (f"{failures} mismatches over {n_instances} instances "
               f"(tol {WOODBURY_ABS:g} abs or {WOODBURY_REL:g} rel); {runtime:.1f}s "
               f"(limit {WOODBURY_SECONDS:.0f}s)")
    return CriterionResult(1, "woodbury equivalence", passed, summary,
                           {"worst_abs_rel": worst, "failures": failures}, runtime, _cores())


def gradient_suite(n_points=GRADIENT_POINTS, seed=1, h=1e-6):
    from ligp.selfcheck import random_instance
    from ligp.woodbury import concentrated_nll, concentrated_nll_grad

    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    errors = []
    for _ in range(n_points):
        inst = random_instance(rng)
        des = inst.design
        neigh = np.arange(des.nbar)
        theta, g = inst.theta, inst.g
        grad = np.array(concentrated_nll_grad(des, neigh, inst.Psi, theta, g, TIGHT))
        f = lambda t, gg: concentrated_nll(des, neigh, inst.Psi, t, gg, TIGHT)  # noqa: E731
        ht, hg = h * theta, h * g
        fd = np.array([(f(theta + ht, g) - f(theta - ht, g)) / (2 * ht),
                       (f(theta, g + hg) - f(theta, g - hg)) / (2 * hg)])
        errors.append(float(np.linalg.norm(grad - fd) / max(np.linalg.norm(fd), 1e-12)))
    runtime = time.perf_counter() - t0
    worst = max(errors)
    passed = worst < GRADIENT_REL and runtime < GRADIENT_SECONDS
    summary = (f"worst relative error {worst:.2e} over {n_points} points "
               f"(limit {GRADIENT_REL:g}); {runtime:.1f}s (limit {GRADIENT_SECONDS:.0f}s)")
    return CriterionResult(2, "analytic gradient", passed, summary,
                           {"worst": worst, "median": float(np.median(errors))}, runtime,
                           _cores())


def tau2_suite(n_instances=TAU2_INSTANCES, seed=2):
    from ligp.selfcheck import random_instance
    from ligp.woodbury import build_system, tau2_decomposition, tau2_mle

    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst = 0.0
    mixed = 0
    for i in range(n_instances):
        inst = random_instance(rng, force_mixed=i % 2 == 0)
        des = inst.design
        mixed += bool(des.A.min() == 1 and des.A.max() >= 2)
        sys = build_system(des, np.arange(des.nbar), inst.Psi, inst.theta, inst.g, TIGHT)
        t_hat, _, _ = tau2_decomposition(sys)
        ref = tau2_mle(sys)
        worst = max(worst, abs(t_hat - ref) / abs(ref))
    runtime = time.perf_counter() - t0
    passed = worst <= TAU2_REL and mixed > 0 and runtime < TAU2_SECONDS
    summary = (f"worst relative error {worst:.2e} over {n_instances} instances, {mixed} with "
               f"mixed replication (limit {TAU2_REL:g}); {runtime:.1f}s "
               f"(limit {TAU2_SECONDS:.0f}s)")
    return CriterionResult(3, "tau2 decomposition", passed, summary,
                           {"worst": worst, "mixed": mixed}, runtime, _cores())


def wimse_suite(n_instances=WIMSE_INSTANCES, seed=3):
    from ligp.design import ReplicatedDesign
    from ligp.model import LigpConfig, build_template
    from ligp.templates import normalized_variance, wimse_value

    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for i in range(n_instances):
        d = 1 + i % 2
        Xn = rng.uniform(size=(int(rng.integers(5, 16)), d))
        Psi = rng.uniform(-0.2, 1.2, size=(int(rng.integers(1, 5)), d))
        x = rng.uniform(size=d)
        theta = float(rng.uniform(0.05, 0.5))
        g = 1e-4
        box = np.stack([np.zeros(d), np.ones(d)])
        val = wimse_value(Xn, Psi, x, theta, g, box)

        def integrand(*z):
            z = np.array(z)
            return (normalized_variance(z[None], Xn, Psi, theta, g)[0]
                    * np.exp(-np.sum((z - x) ** 2) / theta))

        ref = nquad(integrand, box.T.tolist(), opts={"epsabs": 0.0, "epsrel": 1e-10,
                                                    "limit": 200})[0]
        worst = max(worst, abs(val - ref) / abs(ref))

    # the greedy design must not depend on replicate counts or responses
    Xbar = rng.uniform(size=(40, 2))
    cfg = LigpConfig(nbar=30, m=5, template="wimse", wimse_multistart=5)
    one = ReplicatedDesign(Xbar, np.ones(40, dtype=np.int64), rng.normal(size=40),
                           np.full(40, 2.0))
    many = ReplicatedDesign(Xbar, rng.integers(1, 10, size=40), rng.normal(size=40),
                            np.full(40, 50.0))
    same = np.array_equal(build_template(one, cfg).Psi, build_template(many, cfg).Psi)
    runtime = time.perf_counter() - t0
    passed = worst < WIMSE_REL and same and runtime < WIMSE_SECONDS
    summary = (f"worst relative error vs quadrature {worst:.2e} over {n_instances} instances "
               f"(limit {WIMSE_REL:g}); replicate-invariant design: {same}; {runtime:.1f}s "
               f"(limit {WIMSE_SECONDS:.0f}s)")
    return CriterionResult(4, "wIMSE", passed, summary, {"worst": worst, "bitwise_same": same},
                           runtime, _cores())


# ---------------------------------------------------------------------------
# 5-6: Bermudan pricing


def _bermudan(preset, seeds, n_paths, workers, log):
    from dataclasses import replace

    from ligp.bermudan import european_price, fit_chain, preset_2d, preset_5d, price, \
        scenario_paths

    make = preset_2d if preset == "2d" else preset_5d
    runs = []
    for s in seeds:
        t0 = time.perf_counter()
        model, p, spec, cfg = make(s)
        cfg = replace(cfg, workers=workers)
        chain = fit_chain(model, p, spec, cfg, seed=s, log=log)
        paths = scenario_paths(model, n_paths, s)
        res = price(chain, model, p, paths=paths)
        euro = european_price(model, p, paths=paths)
        runs.append({"seed": s, "price": res.price, "stderr": res.stderr,
                     "european": euro.price, "seconds": time.perf_counter() - t0})
        if log:
            log(f"{preset} seed {s}: price {res.price:.4f} (se {res.stderr:.4f}), "
                f"european {euro.price:.4f}, {runs[-1]['seconds']:.0f}s")
    return runs


def bermudan_2d(seeds=range(BERMUDAN_SEEDS), n_paths=BERMUDAN_PATHS, workers=None, log=None):
    cores = _cores()
    workers = workers or cores
    t0 = time.perf_counter()
    runs = _bermudan("2d", list(seeds), n_paths, workers, log)
    return judge_bermudan_2d({"runs": runs, "n_paths": n_paths},
                             time.perf_counter() - t0, cores)


def judge_bermudan_2d(details, runtime, cores):
    prices = [r["price"] for r in details["runs"]]
    med = float(np.median(prices))
    lo, hi = BERMUDAN_2D_BAND
    budget = _scaled_budget(BERMUDAN_2D_SECONDS_8CORE, cores)
    ok_price = lo <= med <= hi
    ok_setup = len(prices) >= BERMUDAN_SEEDS and details["n_paths"] >= BERMUDAN_PATHS
    passed = ok_price and ok_setup and runtime < budget
    summary = (f"median price {med:.4f} over {len(prices)} seeds (band [{lo}, {hi}]); "
               f"{runtime:.0f}s on {cores} core(s) (limit 300s on 8 cores, {budget:.0f}s "
               f"scaled)")
    return CriterionResult(5, "bermudan 2d", passed, summary, {**details, "median": med},
                           runtime, cores)


def bermudan_5d(seeds=range(BERMUDAN_SEEDS), n_paths=BERMUDAN_PATHS, workers=None, log=None):
    cores = _cores()
    workers = workers or cores
    t0 = time.perf_counter()
    runs = _bermudan("5d", list(seeds), n_paths, workers, log)
    return judge_bermudan_5d({"runs": runs, "n_paths": n_paths},
                             time.perf_counter() - t0, cores)


def judge_bermudan_5d(details, runtime, cores):
    prices = [r["price"] for r in details["runs"]]
    med = float(np.median(prices))
    budget = _scaled_budget(BERMUDAN_5D_SECONDS_8CORE, cores)
    ok_price = (med >= BERMUDAN_5D_FLOOR
                and abs(med - BERMUDAN_5D_REFERENCE) <= BERMUDAN_5D_HALFWIDTH)
    ok_setup = len(prices) >= BERMUDAN_SEEDS and details["n_paths"] >= BERMUDAN_PATHS
    passed = ok_price and ok_setup and runtime < budget
    summary = (f"median price {med:.4f} over {len(prices)} seeds (need >= "
               f"{BERMUDAN_5D_FLOOR} and within {BERMUDAN_5D_HALFWIDTH} of "
               f"{BERMUDAN_5D_REFERENCE}); {runtime:.0f}s on {cores} core(s) (limit 900s on 8 "
               f"cores, {budget:.0f}s scaled)")
    return CriterionResult(6, "bermudan 5d", passed, summary, {**details, "median": med},
                           runtime, cores)


# ---------------------------------------------------------------------------
# 7-8: benchmark properties


def herbie(seeds=range(HERBIE_SEEDS), workers=None, log=None):
    from dataclasses import replace

    from ligp.bench import BenchmarkSpec, run_benchmark
    from ligp.model import LigpConfig

    cores = _cores()
    cfg = LigpConfig(workers=workers or cores)
    t0 = time.perf_counter()
    runs = []
    for s in seeds:
        spec = BenchmarkSpec("herbie", n_unique=2000, a=10, replication="uniform", n_test=2000,
                             seed=s)
        est = run_benchmark(spec, cfg, dense_subset=HERBIE_DENSE_SUBSET)
        pinned = run_benchmark(spec, replace(cfg, estimate_nugget=False))
        runs.append({"seed": s, "ligp_rmse": est["metrics"].rmse,
                     "dense_rmse": est["dense_metrics"].rmse,
                     "score_estimated": est["metrics"].score,
                     "score_pinned": pinned["metrics"].score})
        if log:
            log(f"herbie seed {s}: {runs[-1]}")
    return judge_herbie({"runs": runs}, time.perf_counter() - t0, cores)


def judge_herbie(details, runtime, cores):
    runs = details["runs"]
    med = {k: float(np.median([r[k] for r in runs]))
           for k in ("ligp_rmse", "dense_rmse", "score_estimated", "score_pinned")}
    ratio = med["ligp_rmse"] / med["dense_rmse"]
    ok_rmse = ratio <= HERBIE_RATIO
    ok_score = med["score_estimated"] > med["score_pinned"]
    passed = ok_rmse and ok_score and len(runs) >= HERBIE_SEEDS and runtime < HERBIE_SECONDS
    summary = (f"median RMSE ratio {ratio:.3f} (limit {HERBIE_RATIO}; LIGP "
               f"{med['ligp_rmse']:.5f}, dense {med['dense_rmse']:.5f}); median score "
               f"estimated {med['score_estimated']:.1f} vs pinned {med['score_pinned']:.1f}; "
               f"{len(runs)} seeds; {runtime:.0f}s (limit {HERBIE_SECONDS:.0f}s)")
    return CriterionResult(7, "herbie", passed, summary, {**details, "medians": med,
                                                          "ratio": ratio}, runtime, cores)


def sir_noise_correlation(spec, cfg):
    """Spearman rho between binned LIGP noise estimates and binned replicate variances."""
    from ligp.bench import binned_variances, replicate_variances, run_benchmark

    res = run_benchmark(spec, cfg)
    batch = res["batch"]
    Xv, v = replicate_variances(res["design"])
    emp = binned_variances(Xv, v, spec.bounds)
    est = binned_variances(batch.sites, batch.noise_variance, spec.bounds)
    ok = np.isfinite(emp) & np.isfinite(est)
    return float(spearmanr(emp[ok], est[ok]).statistic), int(ok.sum())


def sir(seeds=range(SIR_SEEDS), workers=None, log=None):
    from ligp.bench import BenchmarkSpec
    from ligp.model import LigpConfig

    cores = _cores()
    cfg = LigpConfig(workers=workers or cores)
    t0 = time.perf_counter()
    runs = []
    for s in seeds:
        spec = BenchmarkSpec("sir", n_unique=2000, a=10, replication="fixed", n_test=2000,
                             seed=s)
        rho, cells = sir_noise_correlation(spec, cfg)
        runs.append({"seed": s, "rho": rho, "cells": cells})
        if log:
            log(f"sir seed {s}: rho {rho:.3f} over {cells} cells")
    return judge_sir({"runs": runs}, time.perf_counter() - t0, cores)


def judge_sir(details, runtime, cores):
    rhos = [r["rho"] for r in details["runs"]]
    med = float(np.median(rhos))
    passed = med > SIR_RHO and len(rhos) >= SIR_SEEDS and runtime < SIR_SECONDS
    summary = (f"median Spearman rho {med:.3f} over {len(rhos)} seeds (limit > {SIR_RHO}); "
               f"{runtime:.0f}s (limit {SIR_SECONDS:.0f}s)")
    return CriterionResult(8, "sir noise", passed, summary, {**details, "median": med},
                           runtime, cores)


# ---------------------------------------------------------------------------
# 9: determinism of CLI runs


def determinism(workdir=None, worker_counts=(2, 3)):
    from ligp.bench import BenchmarkSpec, make_design
    from ligp.cli import main, replay
    from ligp.design import RawDesign, write_csv

    t0 = time.perf_counter()
    tmp = tempfile.TemporaryDirectory() if workdir is None else None
    root = Path(workdir or tmp.name)
    raw = make_design(BenchmarkSpec("herbie", n_unique=400, a=3, seed=9))
    write_csv(root / "train.csv", raw)
    sites = np.random.default_rng(9).uniform(-2, 2, size=(300, 2))
    write_csv(root / "test.csv", RawDesign(sites, np.zeros(300)))
    runs = {
        "predict": ["predict", "--train", str(root / "train.csv"), "--test",
                    str(root / "test.csv"), "--nbar", "30", "--m", "6", "--set",
                    "chunk_size=32"],
        "benchmark": ["benchmark", "herbie", "--n-unique", "300", "--n-test", "200",
                      "--nbar", "30", "--m", "6", "--set", "chunk_size=32"],
        "price": ["price", "--preset", "2d", "--K-steps", "3", "--n-paths", "2000",
                  "--set", "n_candidates=300", "--set", "a=5", "--set", "grid=11",
                  "--set", "chunk_size=32"],
    }
    mismatches = {}
    for name, argv in runs.items():
        out = root / name
        code = main(argv + ["--workers", "1", "--out-dir", str(out)])
        if code != 0:
            mismatches[name] = f"exit code {code}"
            continue
        for w in worker_counts:
            rcode, bad = replay(out / "manifest.json", root / f"{name}_w{w}", workers=w)
            if bad or rcode != code:
                mismatches[f"{name}@{w}"] = bad or f"exit code {rcode}"
    runtime = time.perf_counter() - t0
    if tmp is not None:
        tmp.cleanup()
    passed = not mismatches
    summary = (f"predict, benchmark and price replayed at {list(worker_counts)} workers: "
               f"{'all outputs identical' if passed else mismatches}")
    return CriterionResult(9, "determinism", passed, summary, {"mismatches": mismatches},
                           runtime, _cores())


# ---------------------------------------------------------------------------
# Records

RECORD_NAMES = {5: "bermudan_2d", 6: "bermudan_5d", 7: "herbie", 8: "sir"}
JUDGES = {5: judge_bermudan_2d, 6: judge_bermudan_5d, 7: judge_herbie, 8: judge_sir}


def save_record(result, directory):
    path = Path(directory) / f"criterion_{result.number}_{RECORD_NAMES[result.number]}.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(result.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def load_record(number, directory):
    """Re-judge a stored experiment from its raw measurements; ``None`` if absent."""
    path = Path(directory) / f"criterion_{number}_{RECORD_NAMES[number]}.json"
    if not path.exists():
        return None
    with open(path, encoding="utf-8") as fh:
        stored = CriterionResult.from_dict(json.load(fh))
    return JUDGES[number](stored.details, stored.runtime, stored.cores)
