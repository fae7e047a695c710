"""Batch command-line entry point.

    symcoal <command> [--config FILE] [--seed S] [--replicates R] [--workers W]
                      [--output-dir DIR] [--set KEY=JSON ...]

A run is described by one JSON document (see schema/config.schema.json);
flags override its keys and --set overrides entries of "params".  Every run
writes results.json, results.csv and manifest.json (config, seed, library
versions and a sha256 of every output file) into the output directory, which
defaults to $SYMCOAL_OUTPUT_DIR or ./symcoal-out.

Exit codes: 0 success, 1 runtime error or failed embedded check, 2 invalid
configuration.

Replicates are simulated in fixed-size chunks; chunk c draws from the stream
derive_stream(master_seed, c), so results do not depend on the worker count.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import platform
import sys
from concurrent.futures import ProcessPoolExecutor
from importlib import metadata, resources
from pathlib import Path

import jsonschema
import numpy as np
from scipy import stats

COMMANDS = ("rates", "simulate-coalescent", "simulate-forward", "simulate-sde",
            "duality", "metric", "asymptotics", "mohle")
ENV_OUTPUT = "SYMCOAL_OUTPUT_DIR"
DEFAULT_SEED = 20240101
CHUNK = {"simulate-coalescent": 1000, "simulate-forward": 100, "simulate-sde": 10_000, "duality": 10_000}
DEFAULT_REPLICATES = {"simulate-coalescent": 1000, "simulate-forward": 100, "simulate-sde": 10_000,
                      "duality": 100_000}


class ConfigError(Exception):
    pass


def derive_stream(master_seed: int, replicate_index: int, purpose: int = 0) -> int:
    """128-bit seed of stream replicate_index under master_seed.

    The pair is hashed by numpy's SeedSequence (spawn key (index, purpose)),
    a counter-based construction: the same inputs always give the same seed
    and distinct inputs collide with probability about 2^-128."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(int(replicate_index), int(purpose)))
    lo, hi = ss.generate_state(2, np.uint64)
    return int(lo) | (int(hi) << 64)


def stream(master_seed: int, index: int, purpose: int = 0) -> np.random.Generator:
    return np.random.default_rng(derive_stream(master_seed, index, purpose))


# config

def load_schema() -> dict:
    return json.loads(resources.files("symcoal").joinpath("schema/config.schema.json").read_text())


def validate_config(cfg: dict) -> dict:
    try:
        jsonschema.validate(cfg, load_schema())
    except jsonschema.ValidationError as e:
        where = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {e.message}") from None
    return cfg


def build_config(args: argparse.Namespace) -> dict:
    cfg: dict = {}
    if args.config:
        try:
            cfg = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {args.config}: {e}") from None
        if not isinstance(cfg, dict):
            raise ConfigError("config must be a JSON object")
    if cfg.get("command", args.command) != args.command:
        raise ConfigError(f"config is for {cfg['command']!r}, not {args.command!r}")
    cfg["command"] = args.command
    for key, val in (("master_seed", args.seed), ("replicates", args.replicates),
                     ("workers", args.workers), ("output_dir", args.output_dir)):
        if val is not None:
            cfg[key] = val
    params = dict(cfg.get("params", {}))
    for item in args.set or []:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        try:
            params[key] = json.loads(raw)
        except json.JSONDecodeError:
            params[key] = raw
    cfg["params"] = params
    return validate_config(cfg)


# parameter decoding

def _discrete(d):
    from .measures import DiscreteLaw
    return DiscreteLaw.from_dict(d)


def _positive(d):
    from .measures import PositiveLaw
    return PositiveLaw.from_dict(d)


def _measure(d):
    from .measures import CoagulationMeasure
    return CoagulationMeasure.from_dict(d)


def _step_path(v):
    from .metric import StepPath
    if isinstance(v, str):
        return StepPath.from_csv(Path(v).read_text())
    return StepPath(float(v["T"]), np.array(v["times"], dtype=float), np.array(v["values"], dtype=float))


def _model_params(p: dict) -> dict:
    out = {"alpha": float(p["alpha"])}
    for key, dec in (("F0", _discrete), ("L", _discrete), ("Lgamma", _positive)):
        if key in p:
            out[key] = dec(p[key])
    for key in ("eta", "a"):
        if key in p:
            out[key] = float(p[key])
    return out


def _demography(p: dict):
    from .forward import IIDSizes, LongDrastic, LongSoft, ShortDrastic
    kind = p["type"]
    if kind == "short_drastic":
        return ShortDrastic(float(p["alpha"]), _discrete(p["F0"]), p.get("gamma"))
    if kind == "long_drastic":
        return LongDrastic(float(p["alpha"]), float(p["eta"]), _discrete(p["F0"]), _discrete(p["L"]))
    if kind == "long_soft":
        return LongSoft(float(p["alpha"]), float(p["eta"]), _positive(p["Lgamma"]))
    return IIDSizes(_uniform_sampler)


def _uniform_sampler(rng, n):
    return rng.random(n)


def _chunks(total: int, size: int):
    return [(c, min(size, total - c * size)) for c in range(math.ceil(total / size))]


def _map(fn, jobs, workers: int):
    if workers <= 1 or len(jobs) <= 1:
        return [fn(*j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, *zip(*jobs)))


def _mean_se(v) -> dict:
    v = np.asarray(v, dtype=float)
    se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
    return {"mean": float(v.mean()), "se": se, "reps": int(v.size)}


# commands; each returns (results dict, csv text, extra files, ok)

def cmd_rates(cfg):
    from .rates import CollisionSignature, arrangements_count, collision_rate, integer_partitions, total_rate
    p = cfg["params"]
    F = _measure(p["measure"]).check()
    bs = p["b"] if isinstance(p["b"], list) else [p["b"]]
    rows, out = [], []
    for b in bs:
        for parts in integer_partitions(b):
            if len(parts) == b:
                continue
            rate = collision_rate(F, CollisionSignature(b, parts))
            rows.append((b, parts, rate))
            out.append({"b": b, "parts": list(parts), "rate": rate,
                        "arrangements": arrangements_count(b, parts)})
    totals = {str(b): total_rate(F, b).value for b in bs}
    # parts are written as (k1,...,kr) unquoted, e.g. 3,(2,1),0.25
    text = "b,parts,rate\n" + "".join(f"{b},({','.join(map(str, parts))}),{rate!r}\n" for b, parts, rate in rows)
    return {"signatures": out, "total_rate": totals}, text, {}, True


def _coalescent_chunk(params, seed, index, count):
    from .coalescent import (simulate_drastic_bottleneck_coalescent, simulate_subordinated_kingman,
                             tree_stats_samples)
    rng = stream(seed, index)
    n = int(params["n"])
    model = params["model"]
    if model == "symmetric":
        L, t, e = tree_stats_samples(_measure(params["measure"]), n, count, rng)
        return list(zip(L.tolist(), t.tolist(), e.tolist()))
    out = []
    for _ in range(count):
        if model == "drastic":
            g = simulate_drastic_bottleneck_coalescent(_discrete(params["F0"]), _discrete(params["L"]),
                                                       float(params["eta"]), float(params.get("a", 0.0)), n, rng)
        else:
            g = simulate_subordinated_kingman(_positive(params["Lgamma"]), float(params["eta"]),
                                              float(params.get("a", 0.0)), n, rng)
        out.append((g.stats.length, g.stats.tmrca, g.stats.n_events))
    return out


def _example_genealogy(params, seed):
    from .coalescent import (simulate_drastic_bottleneck_coalescent, simulate_s_coalescent,
                             simulate_subordinated_kingman)
    rng = stream(seed, 0, purpose=1)
    n = int(params["n"])
    if params["model"] == "symmetric":
        return simulate_s_coalescent(_measure(params["measure"]), n, rng)
    if params["model"] == "drastic":
        return simulate_drastic_bottleneck_coalescent(_discrete(params["F0"]), _discrete(params["L"]),
                                                      float(params["eta"]), float(params.get("a", 0.0)), n, rng)
    return simulate_subordinated_kingman(_positive(params["Lgamma"]), float(params["eta"]),
                                         float(params.get("a", 0.0)), n, rng)


def cmd_simulate_coalescent(cfg):
    p, seed = cfg["params"], cfg["master_seed"]
    if p["model"] == "symmetric" and "measure" not in p:
        raise ConfigError("params: symmetric model needs 'measure'")
    jobs = [(p, seed, c, k) for c, k in _chunks(cfg["replicates"], CHUNK["simulate-coalescent"])]
    rows = [r for part in _map(_coalescent_chunk, jobs, cfg["workers"]) for r in part]
    L, t, e = (np.array(col) for col in zip(*rows))
    res = {"tree_length": _mean_se(L), "tmrca": _mean_se(t), "events": _mean_se(e)}
    text = _csv(["replicate", "tree_length", "tmrca", "events"],
                [(i, repr(a), repr(b), int(c)) for i, (a, b, c) in enumerate(rows)])
    return res, text, {"genealogy.jsonl": _example_genealogy(p, seed).to_jsonl()}, True


def _forward_chunk(params, seed, index, count):
    from .forward import simulate_forward
    rng = stream(seed, index)
    d = _demography(params["demography"])
    out = []
    for _ in range(count):
        tr = simulate_forward(d, int(params["N"]), float(params["x0"]), int(params["generations"]), rng)
        out.append((float(tr.frequencies[-1]), int(tr.in_bottleneck.sum())))
    return out


def cmd_simulate_forward(cfg):
    from .forward import simulate_forward
    p, seed = cfg["params"], cfg["master_seed"]
    jobs = [(p, seed, c, k) for c, k in _chunks(cfg["replicates"], CHUNK["simulate-forward"])]
    rows = [r for part in _map(_forward_chunk, jobs, cfg["workers"]) for r in part]
    x = np.array([r[0] for r in rows])
    res = {"final_frequency": _mean_se(x), "x0": round(float(p["x0"]) * p["N"]) / p["N"],
           "fixed": float(np.mean(x == 1.0)), "lost": float(np.mean(x == 0.0))}
    text = _csv(["replicate", "final_frequency", "bottleneck_generations"],
                [(i, repr(a), b) for i, (a, b) in enumerate(rows)])
    tr = simulate_forward(_demography(p["demography"]), int(p["N"]), float(p["x0"]), int(p["generations"]),
                          stream(seed, 0, purpose=1))
    return res, text, {"trajectory.csv": tr.to_csv()}, True


def _sde_spec(p):
    from .sde import SDE1, SDE2, SDE3, JumpDiffusionSpec
    m = _model_params(p)
    v = p["variant"]
    if v == "SDE1":
        model = SDE1(m["F0"], m["alpha"])
    elif v == "SDE2":
        model = SDE2(m["F0"], m["L"], m["eta"], m["alpha"])
    else:
        model = SDE3(m["Lgamma"], m["eta"], m["alpha"])
    return JumpDiffusionSpec(model, float(p["x0"]), float(p["T"]), float(p.get("dt", 1e-3)))


def _sde_chunk(params, seed, index, count, checkpoints):
    from .sde import simulate_ensemble
    return simulate_ensemble(_sde_spec(params), count, stream(seed, index), checkpoints).X


def cmd_simulate_sde(cfg):
    from .sde import Ensemble, moment_estimate, simulate_sde
    p, seed = cfg["params"], cfg["master_seed"]
    try:
        spec = _sde_spec(p)
    except KeyError as e:
        raise ConfigError(f"params: {p['variant']} needs {e.args[0]!r}") from None
    cps = sorted(set(p.get("checkpoints", [spec.T])))
    jobs = [(p, seed, c, k, cps) for c, k in _chunks(cfg["replicates"], CHUNK["simulate-sde"])]
    X = np.concatenate(_map(_sde_chunk, jobs, cfg["workers"]), axis=0)
    ens = Ensemble(np.array(cps), X, spec.dt)
    rows, res = [], []
    for t in cps:
        for n in p.get("moments", [1, 2]):
            m = moment_estimate(ens, n, t)
            rows.append((repr(float(t)), n, repr(m.mean), repr(m.se)))
            res.append({"t": t, "n": n, "mean": m.mean, "se": m.se, "reps": m.reps})
    path = simulate_sde(spec, stream(seed, 0, purpose=1))
    return ({"moments": res}, _csv(["t", "n", "mean", "se"], rows),
            {"path.jsonl": path.to_jsonl(dt_out=max(spec.dt, spec.T / 1000))}, True)


def _duality_chunk(params, seed, index, count, x, t, dt):
    from .duality import model_pair
    from .sde import JumpDiffusionSpec, simulate_ensemble
    variant, _ = model_pair(params["model"], _model_params(params), 1)
    return simulate_ensemble(JumpDiffusionSpec(variant, x, t, dt), count, stream(seed, index), [t]).X[:, 0]


def cmd_duality(cfg):
    from .duality import bias_allowance, compare_moments, exact_chain_moment, model_pair
    from .sde import Ensemble, moment_estimate
    p, seed = cfg["params"], cfg["master_seed"]
    t, dt = float(p["t"]), float(p.get("dt", 1e-3))
    threshold = float(p.get("threshold", 3.0))
    try:
        variant, Q = model_pair(p["model"], _model_params(p), max(p["n"]))
    except KeyError as e:
        raise ConfigError(f"params: {p['model']} needs {e.args[0]!r}") from None
    except ValueError as e:
        raise ConfigError(f"params: {e}") from None
    allowance = bias_allowance(dt, variant.alpha == 1)
    chunks = _chunks(cfg["replicates"], CHUNK["duality"])
    reports = []
    for xi, x in enumerate(p["x"]):
        # chunk streams are offset per x so each grid point has its own paths
        jobs = [(p, seed, xi * len(chunks) + c, k, float(x), t, dt) for c, k in chunks]
        col = np.concatenate(_map(_duality_chunk, jobs, cfg["workers"]))
        ens = Ensemble(np.array([t]), col[:, None], dt)
        for n in p["n"]:
            reports.append(compare_moments(p["model"], float(x), int(n), t, moment_estimate(ens, n, t),
                                           exact_chain_moment(Q, int(n), float(x), t), allowance, dt))
    ok = all(r.passed(threshold) for r in reports)
    cols = ["model", "x", "n", "t", "lhs", "lhs_se", "rhs", "z_raw", "allowance", "z", "pass"]
    rows = [(r.model, r.x, r.n, r.t, repr(r.lhs), repr(r.lhs_se), repr(r.rhs), repr(r.z_raw),
             repr(r.allowance), repr(r.z), int(r.passed(threshold))) for r in reports]
    res = {"threshold": threshold, "all_passed": ok, "reports": [r.to_dict() for r in reports]}
    return res, _csv(cols, rows), {}, ok


def cmd_metric(cfg):
    from .metric import convergence_in_measure_stat, d_lambda_upper, j1_alignment, uniform_distance
    p = cfg["params"]
    x, y = _step_path(p["x"]), _step_path(p["y"])
    if x.T != y.T:
        raise ConfigError("params: paths x and y must share T")
    j1 = j1_alignment(x, y)
    b = d_lambda_upper(x, y, budget=int(p.get("budget", 10_000)), refine=bool(p.get("refine", False)))
    stat = convergence_in_measure_stat(x, y)
    w = b.witness
    res = {"j1": j1.value, "j1_exact": j1.exact, "uniform": uniform_distance(x, y),
           "d_lambda_upper": b.value,
           "terms": {"sup": b.terms.sup, "shift": b.terms.shift, "excluded": b.terms.excluded,
                     "final": b.terms.final},
           "witness": {"direction": w.direction, "A": [list(iv) for iv in w.A.intervals],
                       "f_knots": [w.f.xs.tolist(), w.f.ys.tolist()]},
           "convergence_in_measure": stat.tolist()}
    rows = [("j1", repr(j1.value)), ("uniform", repr(res["uniform"])), ("d_lambda_upper", repr(b.value))]
    rows += [(f"cim_{i}", repr(float(s))) for i, s in enumerate(stat)]
    return res, _csv(["quantity", "value"], rows), {}, True


def cmd_asymptotics(cfg):
    from .rates import total_rate, total_rate_asymptotic
    from .measures import CoagulationMeasure
    p = cfg["params"]
    beta = float(p["beta"])
    F = CoagulationMeasure.power_law(beta)
    rows, out = [], []
    for n in p["ns"]:
        tr = total_rate(F, int(n), c=float(p.get("c", 50.0)), tail=p.get("tail", "series"))
        norm = tr.value / math.log(n) if beta == 1 else tr.value * n ** (2 * (beta - 1))
        limit = 2.0 if beta == 1 else total_rate_asymptotic(beta, 1.0)
        out.append({"n": n, "total_rate": tr.value, "error_bound": tr.error_bound, "normalized": norm,
                    "limit": limit, "ratio": norm / limit})
        rows.append((n, repr(tr.value), repr(norm), repr(norm / limit)))
    ratios = [abs(o["ratio"] - 1) for o in out]
    res = {"beta": beta, "rows": out,
           "monotone_approach": all(a > b for a, b in zip(ratios, ratios[1:]))}
    return res, _csv(["n", "total_rate", "normalized", "ratio_to_limit"], rows), {}, True


def _size_cdf(R):
    if R == "uniform":
        R = {"type": "uniform"}
    kind = R["type"]
    if kind == "uniform":
        lo, hi = float(R.get("low", 0.0)), float(R.get("high", 1.0))
        return lambda u: np.clip((u - lo) / (hi - lo), 0.0, 1.0)
    if kind == "beta":
        return stats.beta(float(R["a"]), float(R["b"]), loc=float(R.get("low", 0.0)),
                          scale=1.0 - float(R.get("low", 0.0))).cdf
    r = float(R["r"])
    return lambda u: (np.asarray(u) > r).astype(float)


def cmd_mohle(cfg):
    from .forward import discretize_size_law, mohle_coefficients
    p = cfg["params"]
    Ns = p["N"] if isinstance(p["N"], list) else [p["N"]]
    cdf = _size_cdf(p["R"])
    out, rows = [], []
    for N in Ns:
        m = mohle_coefficients(discretize_size_law(cdf, int(N)), int(N))
        rec = {"N": N, "C_N": m.C, "D_N": m.D, "ratio": m.ratio,
               "N_C_over_logN": N * m.C / math.log(N) if N > 1 else None}
        out.append(rec)
        rows.append((N, repr(m.C), repr(m.D), repr(m.ratio)))
    return {"rows": out}, _csv(["N", "C_N", "D_N", "D_over_C"], rows), {}, True


HANDLERS = {"rates": cmd_rates, "simulate-coalescent": cmd_simulate_coalescent,
            "simulate-forward": cmd_simulate_forward, "simulate-sde": cmd_simulate_sde,
            "duality": cmd_duality, "metric": cmd_metric, "asymptotics": cmd_asymptotics,
            "mohle": cmd_mohle}


# output

def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _versions() -> dict:
    out = {"python": platform.python_version()}
    for pkg in ("symcoal", "numpy", "scipy", "numba", "mpmath", "jsonschema"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = None
    return out


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serializable: {type(o).__name__}")


def write_outputs(outdir: Path, cfg: dict, results: dict, table: str, extra: dict) -> dict:
    outdir.mkdir(parents=True, exist_ok=True)
    files = {"results.json": json.dumps(results, sort_keys=True, indent=2, default=_json_default) + "\n",
             "results.csv": table}
    files.update(extra)
    hashes = {}
    for name, text in files.items():
        data = text.encode()
        (outdir / name).write_bytes(data)
        hashes[name] = hashlib.sha256(data).hexdigest()
    manifest = {"config": cfg, "master_seed": cfg["master_seed"], "versions": _versions(),
                "files": hashes}
    (outdir / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return hashes


def run(cfg: dict) -> int:
    """Execute a validated config; returns the exit status."""
    cfg = dict(cfg)
    cfg.setdefault("master_seed", DEFAULT_SEED)
    cfg.setdefault("replicates", DEFAULT_REPLICATES.get(cfg["command"], 1))
    cfg.setdefault("workers", 1)
    cfg.setdefault("params", {})
    outdir = Path(cfg.get("output_dir") or os.environ.get(ENV_OUTPUT) or "symcoal-out")
    cfg["output_dir"] = str(outdir)
    results, table, extra, ok = HANDLERS[cfg["command"]](cfg)
    write_outputs(outdir, cfg, results, table, extra)
    if not ok:
        print(f"{cfg['command']}: embedded check failed; see {outdir / 'results.json'}", file=sys.stderr)
    return 0 if ok else 1


def parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="symcoal", description="Symmetric coalescents and bottleneck diffusions.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="JSON run configuration")
    ap.add_argument("--seed", type=int, help="master seed (64-bit unsigned)")
    ap.add_argument("--replicates", type=int)
    ap.add_argument("--workers", type=int)
    ap.add_argument("--output-dir", help=f"output directory (default ${ENV_OUTPUT} or ./symcoal-out)")
    ap.add_argument("--set", action="append", metavar="KEY=JSON", help="override an entry of params")
    return ap


def main(argv=None) -> int:
    try:
        args = parser().parse_args(argv)
    except SystemExit as e:
        return 2 if e.code else 0
    try:
        cfg = build_config(args)
        return run(cfg)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001 - any runtime failure maps to exit 1
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
