"""Command-line entry point: ``python -m radialflow <command> [key=value ...]``.

Parameters come from command defaults, then an optional JSON ``--config``
file, then ``key=value`` flags.  Every run writes its data files and a
``manifest.json`` into ``<out>/<command>-<config hash>/``.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import platform
import shutil
import sys
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial

import numpy as np

from . import __version__

OUT_ENV = "RADIALFLOW_OUT"


class UsageError(Exception):
    pass


_FLOW = {"n": 2, "F": 0.0, "region": "halfspace", "level": 1.0, "m": 8.0, "radius": 1.0,
         "a": [1.0, 0.0], "delta": 0.5, "N": 100.0, "T": 1.0, "dt": 1e-4, "budget": 256,
         "max_level": 10}

SCHEMAS: dict[str, dict] = {
    "flow": {**_FLOW, "path": 0, "downsample": 1},
    "hitprob": {**_FLOW, "T": 10.0, "paths": 1000, "near_factor": 3.0, "max_rounds": 8,
                "horizons": [0.0]},
    "sweep": {"ns": [2, 4, 8], "cs": [0.1, 1.0], "alphas": [0.75, 1.0], "paths": 100,
              "T": 10.0, "dt": 1e-4, "N": 100.0, "m": 8.0, "budget": 256},
    "ladder": {"kind": "hitting", "n": 2, "F": 0.0, "stages": 1, "paths": 1000, "dt": 1e-4,
               "N": 100.0, "m": 8.0, "budget": 0, "horizon": 100.0, "max_level": 8,
               "reset": True},
    "bessel": {"nu": 1.0, "start": 1.0, "T": 10.0, "dt": 1e-3, "floor": 1e-3, "paths": 10000},
    "ct-check": {"n": 2, "samples": 10000, "dt": 1e-4},
    "cover": {"ns": [4, 16, 64], "radii": [math.e, math.e ** 2], "T": 100.0, "paths": 200},
    "occupation": {"n": 4, "r": 1.0, "trials": 10000, "dt": 0.0, "s": [0.0]},
    "drift-accum": {"n": 16, "c": 0.05, "alpha": 0.75, "paths": 1000, "dt": 1e-4, "N": 100.0,
                    "m": 8.0, "threshold": 0.125},
}

HELP = {
    "flow": "one tracer-cloud flow realization",
    "hitprob": "Monte Carlo hitting probability with near-miss refinement",
    "sweep": "hitting estimates over F = c n^alpha",
    "ladder": "regime-ladder ensemble (kind = hitting | not-hitting; reset=false flows the original region)",
    "bessel": "Bessel hit frequency of the floor",
    "ct-check": "exit time vs total occupation (Ciesielski-Taylor)",
    "cover": "sequential cover-count scaling table",
    "occupation": "occupation-tail curve and fitted decay rate",
    "drift-accum": "drift accumulators along the first hitting stage",
}


@dataclass
class RunConfig:
    command: str
    params: dict
    seed: int = 0
    workers: int = 1
    out: str = field(default_factory=lambda: os.environ.get(OUT_ENV, "radialflow-out"))

    def to_dict(self) -> dict:
        return {"command": self.command, "params": dict(self.params), "seed": self.seed,
                "workers": self.workers, "out": self.out}

    def canonical(self) -> str:
        """Hash input: everything that determines the data (not ``out`` or ``workers``)."""
        return json.dumps({"command": self.command, "params": self.params, "seed": self.seed},
                          sort_keys=True)

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()


# ---------------------------------------------------------------------------
# parsing

def _reject_duplicates(pairs):
    out = {}
    for k, v in pairs:
        if k in out:
            raise UsageError(f"duplicate key {k!r} in config file")
        out[k] = v
    return out


def _coerce(path: str, value, default):
    """Coerce ``value`` (JSON value or flag string) to the type of ``default``."""
    try:
        if isinstance(default, bool):
            if isinstance(value, bool):
                return value
            if isinstance(value, str) and value.lower() in ("true", "1", "yes", "false", "0", "no"):
                return value.lower() in ("true", "1", "yes")
            raise ValueError
        if isinstance(default, int):
            if isinstance(value, bool):
                raise ValueError
            if isinstance(value, float) and not value.is_integer():
                raise ValueError
            return int(value)
        if isinstance(default, float):
            if isinstance(value, bool):
                raise ValueError
            return float(value)
        if isinstance(default, str):
            if not isinstance(value, str):
                raise ValueError
            return value
        if isinstance(default, list):
            items = value.split(",") if isinstance(value, str) else value
            if not isinstance(items, list) or not items:
                raise ValueError
            return [_coerce(path, v.strip() if isinstance(v, str) else v, default[0])
                    for v in items]
    except (TypeError, ValueError):
        pass
    raise UsageError(f"{path}: cannot read {value!r} as {type(default).__name__}")


def _apply(cfg: RunConfig, tree: dict, where: str) -> None:
    for k, v in tree.items():
        if k in ("seed", "workers"):
            setattr(cfg, k, _coerce(f"{where}{k}", v, 0))
        elif k == "out":
            cfg.out = _coerce(f"{where}out", v, "")
        elif k == "params":
            if not isinstance(v, dict):
                raise UsageError(f"{where}params must be an object")
            _apply_params(cfg, v, f"{where}params.")
        elif k == "command":
            if v != cfg.command:
                raise UsageError(f"{where}command is {v!r} but {cfg.command!r} was requested")
        else:
            raise UsageError(f"unknown key {where}{k}")


def _apply_params(cfg: RunConfig, tree: dict, where: str) -> None:
    schema = SCHEMAS[cfg.command]
    for k, v in tree.items():
        if k not in schema:
            raise UsageError(f"unknown key {where}{k}")
        cfg.params[k] = _coerce(f"{where}{k}", v, schema[k])


def _validate(cfg: RunConfig) -> None:
    p = cfg.params
    if cfg.workers < 1:
        raise UsageError("workers must be >= 1")
    if not 0 <= cfg.seed < 2 ** 63:
        raise UsageError("seed must be in [0, 2^63)")
    for k in ("paths", "samples", "trials", "n", "budget", "stages"):
        if k in p and p[k] < (0 if k == "budget" else 1):
            raise UsageError(f"params.{k} must be positive")
    for k in ("dt", "T", "N", "m", "r", "radius", "delta", "horizon"):
        if k in p and not p[k] > 0 and not (k == "dt" and cfg.command == "occupation"):
            raise UsageError(f"params.{k} must be > 0")
    if "F" in p and p["F"] < 0:
        raise UsageError("params.F must be >= 0")
    if "region" in p and p["region"] not in ("halfspace", "ball", "disc", "cylinder"):
        raise UsageError("params.region must be halfspace, ball, disc or cylinder")
    if cfg.command == "ladder" and p["kind"] not in ("hitting", "not-hitting"):
        raise UsageError("params.kind must be hitting or not-hitting")
    if cfg.command == "occupation" and p["n"] < 4:
        raise UsageError("params.n must be >= 4")


def parse_config(command: str, assignments=(), config_file: str | None = None,
                 seed=None, workers=None, out=None) -> RunConfig:
    if command not in SCHEMAS:
        raise UsageError(f"unknown command {command!r}")
    cfg = RunConfig(command, {k: (list(v) if isinstance(v, list) else v)
                              for k, v in SCHEMAS[command].items()})
    if config_file:
        try:
            with open(config_file) as fp:
                text = fp.read()
        except OSError as e:
            raise UsageError(f"cannot read config file: {e}") from None
        if text.strip():
            try:
                tree = json.loads(text, object_pairs_hook=_reject_duplicates)
            except json.JSONDecodeError as e:
                raise UsageError(f"config file is not valid JSON: {e}") from None
            if not isinstance(tree, dict):
                raise UsageError("config file must hold an object")
            _apply(cfg, tree, "")
    flags = {}
    for a in assignments:
        if "=" not in a:
            raise UsageError(f"expected key=value, got {a!r}")
        k, v = a.split("=", 1)
        if k in flags:
            raise UsageError(f"duplicate key {k!r} on the command line")
        flags[k] = v
    top = {k: flags.pop(k) for k in ("seed", "workers", "out") if k in flags}
    _apply(cfg, top, "")
    _apply_params(cfg, flags, "params.")
    for k, v in (("seed", seed), ("workers", workers), ("out", out)):
        if v is not None:
            _apply(cfg, {k: v}, "")
    _validate(cfg)
    return cfg


# ---------------------------------------------------------------------------
# commands

def _region(p):
    from .geometry import BallComplement, Cylinder, HalfSpace, LateralDisc
    n = p["n"]
    if p["region"] == "halfspace":
        return HalfSpace(n, p["level"], p["m"])
    if p["region"] == "disc":
        return LateralDisc(n, p["level"], p["m"])
    if p["region"] == "ball":
        return BallComplement(n, p["radius"])
    a = tuple(p["a"])
    if len(a) != n:
        raise UsageError(f"params.a has {len(a)} coordinates, expected {n}")
    return Cylinder(a, p["delta"])


def _flow_config(p, seed, T=None):
    from .flow import FlowConfig
    from .geometry import DriftField
    return FlowConfig(p["n"], DriftField.constant(p["F"]), _region(p), N=p["N"],
                      T=T or p["T"], dt=p["dt"], budget=p["budget"], seed=seed,
                      max_level=p["max_level"])


def _header(cfg: RunConfig) -> str:
    return f"# radialflow {cfg.command} config_sha256={cfg.digest()} seed={cfg.seed}\n"


def _blocks(total: int, workers: int):
    edges = np.linspace(0, total, min(workers, total) + 1).astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]


def _pmap(fn, total, workers):
    """Run ``fn(lo, hi)`` over contiguous blocks; results concatenated in order."""
    blocks = _blocks(total, workers)
    if workers <= 1 or len(blocks) <= 1:
        parts = [fn(a, b) for a, b in blocks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(fn, *zip(*blocks)))
    return [x for part in parts for x in part]


def _ladders(cfg_dict, reset, lo, hi):
    from .geometry import DriftField
    from .regime import LadderConfig, run_ladder, run_unreset_ladder
    d = dict(cfg_dict)
    d["drift"] = DriftField.from_dict(d["drift"])
    lc = LadderConfig(**d)
    run = run_ladder if reset else run_unreset_ladder
    return [run(lc, i) for i in range(lo, hi)]


def _accums(cfg_dict, lo, hi):
    from .geometry import DriftField
    from .regime import LadderConfig, drift_accumulators
    d = dict(cfg_dict)
    d["drift"] = DriftField.from_dict(d["drift"])
    lc = LadderConfig(**d)
    return [drift_accumulators(lc, i) for i in range(lo, hi)]


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1) + "\n"


def run_command(cfg: RunConfig, workdir: str) -> dict:
    """Write data files into ``workdir``; return a small JSON-able summary."""
    p, seed, w = cfg.params, cfg.seed, cfg.workers
    meta = {"run_config": cfg.to_dict() | {"out": None, "workers": None},
            "config_sha256": cfg.digest(), "run_seed": seed}

    def write(name, text):
        with open(os.path.join(workdir, name), "w") as fp:
            fp.write(text)

    if cfg.command == "flow":
        from .flow import run_flow
        fc = _flow_config(p, seed)
        res = run_flow(fc, fc.stream(p["path"]))
        d = res.to_dict(p["downsample"]) | meta
        write("result.json", _dump(d))
        return {"hit": res.hit, "tau": res.tau, "closest": res.closest[0]}

    if cfg.command == "hitprob":
        from .harness import simulate_paths, summarize
        hs = sorted(t for t in p["horizons"] if t > 0) or [p["T"]]
        fc = _flow_config(p, seed, T=max(hs + [p["T"]]))
        recs = simulate_paths(fc, p["paths"], 0, w, near_factor=p["near_factor"],
                              max_rounds=p["max_rounds"])
        ests = [summarize(fc, recs, 0, t) for t in sorted(set(hs + [fc.T]))]
        write("estimate.json", _dump({"estimates": [e.to_dict() for e in ests]} | meta))
        write("paths.jsonl", "".join(json.dumps(r.__dict__, sort_keys=True) + "\n" for r in recs))
        return {"T": [e.config["T"] for e in ests], "p": [e.p for e in ests]}

    if cfg.command == "sweep":
        import io
        from .harness import phase_sweep
        tab = phase_sweep(p["ns"], p["cs"], p["alphas"], p["paths"], seed, T=p["T"], dt=p["dt"],
                          N=p["N"], m=p["m"], budget=p["budget"], workers=w)
        buf = io.StringIO()
        tab.to_csv(buf)
        write("sweep.csv", _header(cfg) + buf.getvalue())
        write("trend.json", _dump({"nonincreasing_in_c": tab.trend()} | meta))
        return {"cells": len(tab.cells), "trend": tab.trend()}

    if cfg.command == "ladder":
        from .geometry import DriftField
        from .regime import LadderConfig, mean_step, step_probability
        lc = LadderConfig(p["n"], DriftField.constant(p["F"]), p["kind"], 1.0, p["stages"],
                          p["dt"], p["N"], p["budget"] or None, p["m"], p["horizon"],
                          p["max_level"], seed=seed)
        lads = _pmap(partial(_ladders, lc.to_dict(), p["reset"]), p["paths"], w)
        write("ladders.jsonl", "".join(json.dumps(l.to_dict(), sort_keys=True) + "\n" for l in lads))
        summ = {"terminations": {t: sum(l.termination == t for l in lads)
                                 for t in sorted({l.termination for l in lads})}}
        try:
            sp = step_probability(lads)
            summ["step_probability"] = sp.interval.to_dict() | {"verdict": sp.verdict}
            summ["mean_step"] = list(mean_step(lads))
        except ValueError as e:
            summ["step_probability"] = str(e)
        write("summary.json", _dump(summ | meta))
        return summ

    if cfg.command == "bessel":
        from .bessel import BesselSpec, bessel_hit_frequency
        pr = bessel_hit_frequency(BesselSpec(p["nu"], p["start"], p["T"], p["dt"], p["floor"]),
                                  p["paths"], seed)
        write("bessel.json", _dump({"hit_frequency": pr.to_dict()} | meta))
        return pr.to_dict()

    if cfg.command == "ct-check":
        import io
        from .occupation import ct_identity_check
        s, _, _ = ct_identity_check(p["n"], p["samples"], p["dt"], seed)
        buf = io.StringIO()
        s.to_csv(buf)
        write("ct.csv", _header(cfg) + buf.getvalue())
        return {"ks": s.ks, "mean_tau": s.mean_tau, "mean_L": s.mean_L}

    if cfg.command == "cover":
        import io
        from .pathcover import cover_scaling_study
        tab = cover_scaling_study(p["ns"], p["T"], p["radii"], p["paths"], seed)
        buf = io.StringIO()
        tab.to_csv(buf)
        write("cover.csv", _header(cfg) + buf.getvalue())
        fits = {"slope_log_count_vs_log_r": {str(k): v for k, v in tab.slopes.items()},
                "count_per_unit_n": {repr(k): v for k, v in tab.n_coefficients.items()}}
        write("fits.json", _dump(fits | meta))
        return fits

    if cfg.command == "occupation":
        import io
        from .occupation import occupation_tail
        s = [v for v in p["s"] if v > 0] or None
        tc = occupation_tail(p["n"], p["r"], s, p["trials"], seed, p["dt"] or None)
        buf = io.StringIO()
        tc.to_csv(buf)
        write("tail.csv", _header(cfg) + buf.getvalue())
        fit = {"rate": tc.rate, "fit_points": tc.fit_points, "capped": tc.capped, "dt": tc.dt}
        write("fit.json", _dump(fit | meta))
        return fit

    if cfg.command == "drift-accum":
        from .geometry import DriftField
        from .regime import HITTING, LadderConfig
        F = p["c"] * p["n"] ** p["alpha"]
        lc = LadderConfig(p["n"], DriftField.constant(F), HITTING, dt=p["dt"], N=p["N"],
                          m=p["m"], seed=seed)
        acc = _pmap(partial(_accums, lc.to_dict()), p["paths"], w)
        write("accumulators.jsonl",
              "".join(json.dumps(a.to_dict(), sort_keys=True) + "\n" for a in acc))
        frac = sum(a.vertical <= p["threshold"] for a in acc) / len(acc)
        summ = {"F": F, "fraction_vertical_within_threshold": frac,
                "unresolved": sum(not a.resolved for a in acc)}
        write("summary.json", _dump(summ | meta))
        return summ

    raise UsageError(f"unknown command {cfg.command!r}")


def _versions() -> dict:
    import numba
    import scipy
    return {"radialflow": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__, "numba": numba.__version__}


def dispatch(cfg: RunConfig) -> tuple[int, str]:
    """Run ``cfg``; returns (status, output directory).  Partial outputs are removed."""
    target = os.path.join(cfg.out, f"{cfg.command}-{cfg.digest()[:12]}")
    os.makedirs(cfg.out, exist_ok=True)
    work = tempfile.mkdtemp(prefix=".partial-", dir=cfg.out)
    t0 = time.perf_counter()
    try:
        summary = run_command(cfg, work)
    except UsageError:
        shutil.rmtree(work, ignore_errors=True)
        raise
    except Exception as e:  # noqa: BLE001 - any module error is a runtime failure
        shutil.rmtree(work, ignore_errors=True)
        print(f"radialflow {cfg.command}: error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1, ""
    files = {}
    for name in sorted(os.listdir(work)):
        with open(os.path.join(work, name), "rb") as fp:
            files[name] = hashlib.sha256(fp.read()).hexdigest()
    manifest = {"command": cfg.command, "config": cfg.to_dict(), "config_sha256": cfg.digest(),
                "seed": cfg.seed, "wall_time": time.perf_counter() - t0,
                "versions": _versions(), "files": files}
    with open(os.path.join(work, "manifest.json"), "w") as fp:
        fp.write(_dump(manifest))
    if os.path.exists(target):
        shutil.rmtree(target)
    os.replace(work, target)
    print(json.dumps({"out": target, "summary": summary}, sort_keys=True, default=str))
    return 0, target


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="radialflow",
                                 description="Radial-drift Brownian flow experiments.")
    sub = ap.add_subparsers(dest="command", metavar="command")
    sub.required = True
    for name, schema in SCHEMAS.items():
        defaults = " ".join(f"{k}={','.join(map(str, v)) if isinstance(v, list) else v}"
                            for k, v in schema.items())
        sp = sub.add_parser(name, help=HELP[name],
                            description=f"{HELP[name]}.  Defaults: {defaults}")
        sp.add_argument("assignments", nargs="*", metavar="key=value")
        sp.add_argument("--config", help="JSON config file (flags override it)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--workers", type=int)
        sp.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./radialflow-out)")
        sp.add_argument("--emit-config", action="store_true",
                        help="print the resolved config as JSON and exit")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)  # exits with status 2 on usage errors
    try:
        cfg = parse_config(args.command, args.assignments, args.config, args.seed,
                           args.workers, args.out)
        if args.emit_config:
            sys.stdout.write(_dump(cfg.to_dict()))
            return 0
        status, _ = dispatch(cfg)
        return status
    except UsageError as e:
        ap.print_usage(sys.stderr)
        print(f"radialflow: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
