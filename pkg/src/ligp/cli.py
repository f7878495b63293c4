"""Command-line interface: predict, benchmark, price, selfcheck and replay.

Every run writes ``manifest.json`` next to its outputs.  The manifest holds
the fully resolved configuration and SHA-256 digests of all inputs and
outputs; ``ligp replay manifest.json`` re-runs the command and compares.
Timing fields (``wall_time``, ``timings``, ``fit_times``) vary between runs
and are left out of JSON digests.

Exit codes: 0 success, 1 input error, 2 numerical failure, 3 completed with
fallback predictions.
"""

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

import ligp
from ligp.errors import FittingError, InputError, NumericalError

EXIT_OK, EXIT_INPUT, EXIT_NUMERICAL, EXIT_PARTIAL = 0, 1, 2, 3
VOLATILE_KEYS = frozenset({"wall_time", "timings", "fit_times"})

log = logging.getLogger("ligp")


# ---------------------------------------------------------------------------
# Typed flat configuration


def _parse_bool(s):
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _parse_floats(s):
    if isinstance(s, (list, tuple)):
        return [float(v) for v in s]
    return [float(v) for v in str(s).split(",") if v.strip()]


def _optional(parse):
    def inner(s):
        if s is None or str(s).strip().lower() in ("none", ""):
            return None
        return parse(s)
    return inner


LIGP_KEYS = {
    "nbar": int, "m": _optional(int), "template": str, "estimate_nugget": _parse_bool,
    "g_fixed": float, "theta": _optional(float), "eps_K": float, "eps_Q": float,
    "theta_bound_factor": float, "g_bounds": _parse_floats, "priors": _parse_bool,
    "prior_shape": float, "g_init_fallback": float, "maxiter": int,
    "wimse_multistart": int, "wimse_tol": float, "wimse_gradient": str, "wimse_g": float,
    "chunk_size": int, "workers": int, "seed": int,
}

COMMAND_KEYS = {
    "predict": {"train": str, "test": str, "prescale": int},
    "benchmark": {"simulator": str, "n_unique": int, "a": int, "replication": str,
                  "n_test": int, "noise_sd": float, "dense_subset": int,
                  "log_score": _parse_bool, "prescale": int},
    "price": {"preset": str, "d": int, "r": float, "delta": _parse_floats,
              "sigma": _parse_floats, "dt": float, "K_steps": int, "X0": _parse_floats,
              "strike": float, "method": str, "n_unique": int, "n_candidates": int, "a": int,
              "bounds_lo": _parse_floats, "bounds_hi": _parse_floats, "prescale_size": int,
              "n_paths": int, "grid": int, "dry_run": _parse_bool},
}

COMMAND_DEFAULTS = {
    "predict": {"prescale": 0},
    "benchmark": {"simulator": "herbie", "n_unique": 2000, "a": 10, "replication": "uniform",
                  "n_test": 2000, "noise_sd": 0.02, "dense_subset": 0, "log_score": False,
                  "prescale": 0},
    "price": {"preset": "2d", "n_paths": 25000, "grid": 41, "dry_run": False},
}


def read_config(path):
    """Parse a flat ``key = value`` file; ``#`` starts a comment."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InputError(f"{path}:{lineno}: expected key = value")
            key, value = (t.strip() for t in line.split("=", 1))
            out[key] = value
    return out


def resolve(command, file_values, flag_values):
    """Merge defaults, config-file and flag values with type checking."""
    schema = {**LIGP_KEYS, **COMMAND_KEYS[command]}
    defaults = {k: v for k, v in dataclasses.asdict(ligp.LigpConfig()).items()}
    defaults["g_bounds"] = list(defaults["g_bounds"])
    merged = {**defaults, **COMMAND_DEFAULTS[command]}
    for source in (file_values, flag_values):
        for key, value in source.items():
            if value is None:
                continue
            if key not in schema:
                raise InputError(f"unknown configuration key {key!r} for {command}")
            try:
                merged[key] = schema[key](value) if isinstance(value, str) else value
            except ValueError as exc:
                raise InputError(f"configuration key {key!r}: {exc}") from None
    return merged


def ligp_config(values):
    kw = {k: values[k] for k in LIGP_KEYS if k in values}
    kw["g_bounds"] = tuple(kw["g_bounds"])
    return ligp.LigpConfig(**kw)


# ---------------------------------------------------------------------------
# Output helpers


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _strip_volatile(obj):
    if isinstance(obj, dict):
        return {k: _strip_volatile(v) for k, v in obj.items() if k not in VOLATILE_KEYS}
    if isinstance(obj, list):
        return [_strip_volatile(v) for v in obj]
    return obj


def write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def digest(path):
    """SHA-256 of a file; JSON files are hashed without timing fields."""
    path = Path(path)
    if path.suffix == ".json":
        with open(path, encoding="utf-8") as fh:
            data = _strip_volatile(json.load(fh))
        blob = json.dumps(data, sort_keys=True).encode()
    else:
        blob = path.read_bytes()
    return hashlib.sha256(blob).hexdigest()


def write_table(path, header, columns):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in zip(*columns):
            w.writerow([v if isinstance(v, str) else repr(float(v)) for v in row])


def write_predictions(path, batch):
    d = batch.sites.shape[1]
    header = [f"x{i + 1}" for i in range(d)] + ["mu", "sigma2", "status", "theta", "g", "tau2"]
    cols = [batch.sites[:, i] for i in range(d)] + [
        batch.mu, batch.sigma2, [str(s) for s in batch.status], batch.theta, batch.g, batch.tau2]
    write_table(path, header, cols)


def write_manifest(out_dir, command, values, inputs, outputs, timings, extra=None):
    manifest = {
        "command": command,
        "version": ligp.__version__,
        "config": values,
        "seed": values.get("seed"),
        "inputs": {str(Path(p).resolve()): digest(p) for p in inputs},
        "outputs": {Path(p).name: digest(p) for p in outputs},
        "timings": timings,
        **(extra or {}),
    }
    write_json(Path(out_dir) / "manifest.json", manifest)
    return manifest


# ---------------------------------------------------------------------------
# Commands


def cmd_predict(values, out_dir):
    from ligp.design import read_csv, read_sites_csv
    from ligp.model import LigpSurrogate

    if not values.get("train") or not values.get("test"):
        raise InputError("predict needs --train and --test")
    t0 = time.perf_counter()
    raw = read_csv(values["train"])
    sites = read_sites_csv(values["test"])
    if sites.shape[1] != raw.d:
        raise InputError(f"test sites are {sites.shape[1]}-d but training inputs are {raw.d}-d")
    cfg = ligp_config(values)
    sur = LigpSurrogate(raw, cfg, prescale=values["prescale"] or None)
    t1 = time.perf_counter()
    batch = sur.predict(sites)
    t2 = time.perf_counter()
    pred = Path(out_dir) / "predictions.csv"
    write_predictions(pred, batch)
    timings = {"setup": t1 - t0, "predict": t2 - t1}
    write_manifest(out_dir, "predict", values, [values["train"], values["test"]], [pred], timings)
    log.info("predicted %d sites, %d fallback", sites.shape[0], batch.n_fallback)
    return EXIT_PARTIAL if batch.n_fallback else EXIT_OK


def cmd_benchmark(values, out_dir):
    from ligp.bench import BenchmarkSpec, run_benchmark
    from ligp.design import write_csv

    spec = BenchmarkSpec(simulator=values["simulator"], n_unique=values["n_unique"],
                         a=values["a"], replication=values["replication"],
                         n_test=values["n_test"], seed=values["seed"],
                         noise_sd=values["noise_sd"])
    cfg = ligp_config(values)
    t0 = time.perf_counter()
    res = run_benchmark(spec, cfg, prescale=values["prescale"] or None,
                        dense_subset=values["dense_subset"] or None,
                        log_variance=values["log_score"])
    wall = time.perf_counter() - t0
    out = Path(out_dir)
    files = [out / "design.csv", out / "predictions.csv", out / "metrics.json",
             out / "plotdata.csv"]
    write_csv(files[0], res["design"])
    batch = res["batch"]
    write_predictions(files[1], batch)
    m = res["metrics"].to_dict()
    m["wall_time"] = wall
    m["n_fallback"] = batch.n_fallback
    if "dense_metrics" in res:
        m["dense"] = res["dense_metrics"].to_dict()
    write_json(files[2], m)
    truth = res["truth"] if res["truth"] is not None else np.full(batch.mu.size, np.nan)
    write_table(files[3], ["site", "mean", "truth", "variance"],
                [np.arange(batch.mu.size), batch.mu, truth, batch.sigma2])
    write_manifest(out_dir, "benchmark", values, [], files, {"total": wall})
    log.info("rmse %.6g score %.6g", m["rmse"], m["score"])
    return EXIT_PARTIAL if batch.n_fallback else EXIT_OK


def pricing_setup(values):
    """Model, payoff, design spec and LIGP config for the price command."""
    from ligp.bermudan import DesignSpec, GbmModel, MaxCallPayoff, preset_2d, preset_5d

    preset = values.get("preset", "none")
    if preset == "2d":
        model, p, spec, cfg = preset_2d(values["seed"])
    elif preset == "5d":
        model, p, spec, cfg = preset_5d(values["seed"])
    elif preset == "none":
        model = p = spec = cfg = None
    else:
        raise InputError(f"unknown preset {preset!r}")
    mk = {}
    for key in ("d", "r", "delta", "sigma", "dt", "K_steps", "X0"):
        if key in values:
            mk[key] = values[key]
    if model is not None:
        base = {f.name: getattr(model, f.name) for f in dataclasses.fields(model)}
        mk = {**base, **mk}
    missing = [k for k in ("d", "r", "delta", "sigma", "dt", "K_steps", "X0") if k not in mk]
    if missing:
        raise InputError(f"model parameters missing: {', '.join(missing)}")
    model = GbmModel(**mk)
    strike = values.get("strike", p.strike if p is not None else None)
    if strike is None:
        raise InputError("strike is required")
    p = MaxCallPayoff(strike, model.r, model.dt)
    sk = {}
    for key in ("method", "n_unique", "n_candidates", "a", "prescale_size"):
        if key in values:
            sk[key] = values[key]
    if "bounds_lo" in values or "bounds_hi" in values:
        sk["bounds"] = np.array([values["bounds_lo"], values["bounds_hi"]])
    if spec is not None:
        base = {f.name: getattr(spec, f.name) for f in dataclasses.fields(spec)}
        sk = {**base, **sk}
    spec = DesignSpec(**sk)
    if spec.bounds is not None and np.asarray(spec.bounds).shape != (2, model.d):
        raise InputError("bounds_lo and bounds_hi must have one entry per asset")
    # preset LIGP settings apply unless a key was set in the file or by a flag
    ligp_values = dict(values)
    if cfg is not None:
        explicit = set(values.get("_explicit", ()))
        for key, val in dataclasses.asdict(cfg).items():
            if key not in explicit:
                ligp_values[key] = list(val) if isinstance(val, tuple) else val
    return model, p, spec, ligp_config(ligp_values)


def cmd_price(values, out_dir):
    from ligp.bermudan import european_price, fit_chain, price, scenario_paths, timing_grid

    model, p, spec, cfg = pricing_setup(values)
    if values.get("dry_run"):
        log.info("configuration valid: d=%d K=%d", model.d, model.K_steps)
        return EXIT_OK
    t0 = time.perf_counter()
    chain = fit_chain(model, p, spec, cfg, seed=values["seed"], log=log.info)
    t1 = time.perf_counter()
    paths = scenario_paths(model, values["n_paths"], values["seed"])
    res = price(chain, model, p, paths=paths)
    euro = european_price(model, p, paths=paths)
    t2 = time.perf_counter()
    out = Path(out_dir)
    files = [out / "pricing.json"]
    body = res.to_dict()
    body["european_price"] = euro.price
    body["european_stderr"] = euro.stderr
    body["design_sizes"] = {str(k): v for k, v in chain.design_sizes.items()}
    write_json(files[0], body)
    if model.d == 2 and spec.bounds is not None:
        rows_k, rows_x, rows_t = [], [], []
        for k in sorted(chain.surrogates):
            G, T = timing_grid(chain, k, spec.bounds, values["grid"])
            rows_k.append(np.full(G.shape[0], k))
            rows_x.append(G)
            rows_t.append(T)
        if rows_k:
            G = np.vstack(rows_x)
            files.append(out / "boundary.csv")
            write_table(files[-1], ["step", "x1", "x2", "timing_value"],
                        [np.concatenate(rows_k), G[:, 0], G[:, 1], np.concatenate(rows_t)])
    write_manifest(out_dir, "price", values, [], files, {"fit": t1 - t0, "price": t2 - t1},
                   extra={"resolved_ligp": cfg.to_dict()})
    log.info("price %.4f (se %.4f), european %.4f", res.price, res.stderr, euro.price)
    return EXIT_OK


def cmd_selfcheck(values, out_dir, n_instances=20):
    """Compare the Woodbury route against dense oracles on random instances."""
    from ligp.selfcheck import run_selfcheck

    report = run_selfcheck(n_instances=n_instances, seed=values.get("seed", 0))
    for name, (err, ok) in report.items():
        print(f"{'PASS' if ok else 'FAIL'} {name}: max error {err:.3g}")
    return EXIT_OK if all(ok for _, ok in report.values()) else EXIT_NUMERICAL


COMMANDS = {"predict": cmd_predict, "benchmark": cmd_benchmark, "price": cmd_price}


def replay(manifest_path, out_dir=None, workers=None):
    """Re-run a manifest; returns ``(exit_code, mismatched_output_names)``."""
    with open(manifest_path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    values = dict(manifest["config"])
    for path, want in manifest.get("inputs", {}).items():
        if not Path(path).exists() or digest(path) != want:
            raise InputError(f"input {path} is missing or has changed since the run")
    if workers is not None:
        values["workers"] = workers
    out_dir = Path(out_dir) if out_dir else Path(manifest_path).parent / "replay"
    out_dir.mkdir(parents=True, exist_ok=True)
    code = COMMANDS[manifest["command"]](values, out_dir)
    bad = [name for name, want in manifest["outputs"].items()
           if digest(out_dir / name) != want]
    return code, bad


def build_parser():
    parser = argparse.ArgumentParser(prog="ligp", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat key=value configuration file")
        p.add_argument("--out-dir", default=".", help="directory for outputs")
        p.add_argument("--nbar", type=int)
        p.add_argument("--m", type=int)
        p.add_argument("--template", choices=("qnorm", "wimse"))
        p.add_argument("--seed", type=int)
        p.add_argument("--workers", type=int)
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override any configuration key")

    p = sub.add_parser("predict", help="local GP predictions for test sites")
    common(p)
    p.add_argument("--train", help="training CSV with columns x1..xd,y")
    p.add_argument("--test", help="CSV of prediction sites with columns x1..xd")
    p.add_argument("--prescale", type=int, help="fit input scaling on this many unique sites")

    p = sub.add_parser("benchmark", help="run a benchmark experiment")
    common(p)
    p.add_argument("simulator", choices=("herbie", "sir"))
    p.add_argument("--n-unique", type=int, dest="n_unique")
    p.add_argument("--a", type=int)
    p.add_argument("--replication", choices=("fixed", "uniform"))
    p.add_argument("--n-test", type=int, dest="n_test")

    p = sub.add_parser("price", aliases=["price-maxcall"], help="price a Bermudan max-call")
    common(p)
    p.add_argument("--preset", choices=("2d", "5d", "none"))
    p.add_argument("--n-paths", type=int, dest="n_paths")
    p.add_argument("--K-steps", type=int, dest="K_steps")
    p.add_argument("--dry-run", action="store_true", default=None, dest="dry_run")

    p = sub.add_parser("selfcheck", help="dense-oracle consistency checks")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--instances", type=int, default=20)

    p = sub.add_parser("replay", help="re-run a manifest and compare output digests")
    p.add_argument("manifest")
    p.add_argument("--out-dir")
    p.add_argument("--workers", type=int)
    return parser


_FLAG_KEYS = ("nbar", "m", "template", "seed", "workers", "train", "test", "prescale",
              "n_unique", "a", "replication", "n_test", "preset", "n_paths", "K_steps",
              "dry_run")


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    try:
        if args.command == "selfcheck":
            return cmd_selfcheck({"seed": args.seed}, None, args.instances)
        if args.command == "replay":
            code, bad = replay(args.manifest, args.out_dir, args.workers)
            if bad:
                print("outputs differ: " + ", ".join(bad))
                return EXIT_NUMERICAL
            print("all outputs reproduced")
            return code
        command = "price" if args.command == "price-maxcall" else args.command
        file_values = read_config(args.config) if args.config else {}
        flags = {k: getattr(args, k) for k in _FLAG_KEYS if getattr(args, k, None) is not None}
        if command == "benchmark":
            flags["simulator"] = args.simulator
        for key in ("train", "test"):
            if key in flags:
                flags[key] = str(Path(flags[key]).resolve())
        for item in args.set:
            if "=" not in item:
                raise InputError(f"--set expects KEY=VALUE, got {item!r}")
            k, v = item.split("=", 1)
            flags[k.strip()] = v.strip()
        if "workers" not in flags and "workers" not in file_values:
            flags["workers"] = ligp.model.available_workers()
        values = resolve(command, file_values, flags)
        values["_explicit"] = sorted(set(file_values) | set(flags))
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        return COMMANDS[command](values, out_dir)
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (NumericalError, FittingError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
