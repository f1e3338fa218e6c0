"""Command-line runner: ``exactdiff bench|simulate|validate --config FILE``."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import itertools
import logging
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
try:
    import tomllib
except ImportError:
    import tomli as tomllib

from . import exact_engine as eng
from .errors import DomainError, NumericError, ResourceCapExceeded
from .rng import CountingRNG
from .sde_model import (
    BESSEL,
    BROWNIAN,
    GROWTH_BOUNDS,
    GrowthModelParams,
    UnitDiffusionSpec,
    growth_model_spec,
    jacobi_toy_spec,
    sine_spec,
    wide_sense_bessel_spec,
    zero_drift_spec,
)

log = logging.getLogger("exactdiff")

EXIT_OK, EXIT_VALIDATION, EXIT_CONFIG = 0, 2, 3
ALGORITHMS = (eng.EA1, eng.EA2, eng.BESSEL_EA1, eng.EA3)
MODELS = ("growth", "sine", "zero", "wide-bessel", "jacobi")
SWEEPABLE = ("kappa", "omega", "tau", "nu", "rho", "y0", "yT", "T", "c")


class ConfigError(ValueError):
    pass


# -- configuration ------------------------------------------------------------------------
@dataclass
class ExperimentConfig:
    algorithm: str = eng.BESSEL_EA1
    model: str = "growth"
    kappa: float = 1.0
    omega: float = 3.0
    tau: float = 1.0
    nu: float = 0.0
    rho: float = 0.0
    delta: Optional[float] = None
    c: float = 2.0
    y0: float = 1.0
    yT: Optional[float] = None
    T: float = 0.15
    n_paths: int = 100
    seed: int = 1
    bounds: Optional[str] = None
    positivity: bool = True
    layer_first: float = 0.25
    max_variates: Optional[int] = eng.DEFAULT_MAX_VARIATES
    max_attempts: Optional[int] = None
    grid: int = 10
    times: Optional[List[float]] = None
    sweep: Dict[str, List[float]] = field(default_factory=dict)
    suites: List[str] = field(default_factory=list)
    validate_n: int = 5000

    def validate(self) -> None:
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if self.model not in MODELS:
            raise ConfigError(f"model must be one of {MODELS}, got {self.model!r}")
        if self.bounds is not None and self.bounds not in GROWTH_BOUNDS:
            raise ConfigError(f"bounds must be one of {GROWTH_BOUNDS}")
        if not self.T > 0:
            raise ConfigError("T must be positive")
        if self.n_paths < 0:
            raise ConfigError("n_paths must be >= 0")
        if not 0 < self.layer_first < 1:
            raise ConfigError("layers.first must lie in (0, 1)")
        if self.max_variates is not None and self.max_variates <= 0:
            raise ConfigError("caps.max_variates must be positive")
        for key, vals in self.sweep.items():
            if key not in SWEEPABLE:
                raise ConfigError(f"cannot sweep over {key!r}; sweepable keys are {SWEEPABLE}")
            if not isinstance(vals, list) or not vals:
                raise ConfigError(f"sweep.{key} must be a non-empty list")
        for cell in self.cells():
            build_spec(cell)

    def cells(self) -> List["ExperimentConfig"]:
        if not self.sweep:
            return [self]
        keys = sorted(self.sweep)
        out = []
        for combo in itertools.product(*(self.sweep[k] for k in keys)):
            out.append(dataclasses.replace(self, sweep={}, **dict(zip(keys, combo))))
        return out

    def key(self) -> Dict:
        return {"algorithm": self.algorithm, "model": self.model, "kappa": self.kappa,
                "omega": self.omega, "tau": self.tau, "y0": self.y0, "yT": self.yT, "T": self.T}


_SECTION_KEYS = {
    "layers": {"first": "layer_first"},
    "caps": {"max_variates": "max_variates", "max_attempts": "max_attempts"},
    "simulate": {"grid": "grid", "times": "times"},
    "validate": {"suites": "suites", "n": "validate_n"},
}


def load_config(path: str, seed: Optional[int] = None) -> ExperimentConfig:
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: invalid TOML: {exc}") from exc
    return config_from_dict(raw, seed)


def config_from_dict(raw: Dict, seed: Optional[int] = None) -> ExperimentConfig:
    fields = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
    kw = {}
    for key, val in raw.items():
        if key in _SECTION_KEYS:
            if not isinstance(val, dict):
                raise ConfigError(f"[{key}] must be a table")
            for sub, sval in val.items():
                if sub not in _SECTION_KEYS[key]:
                    raise ConfigError(f"unknown key {key}.{sub}")
                kw[_SECTION_KEYS[key][sub]] = sval
        elif key == "sweep":
            if not isinstance(val, dict):
                raise ConfigError("[sweep] must be a table")
            kw["sweep"] = {k: list(v) if isinstance(v, list) else v for k, v in val.items()}
        elif key in fields and key not in ("sweep", "layer_first", "validate_n"):
            kw[key] = val
        else:
            raise ConfigError(f"unknown config key {key!r}")
    if seed is not None:
        kw["seed"] = seed
    try:
        cfg = ExperimentConfig(**kw)
        for name in ("kappa", "omega", "tau", "nu", "rho", "c", "y0", "T", "layer_first"):
            setattr(cfg, name, float(getattr(cfg, name)))
        for name in ("yT", "delta"):
            if getattr(cfg, name) is not None:
                setattr(cfg, name, float(getattr(cfg, name)))
        for name in ("n_paths", "seed", "grid", "validate_n"):
            val = getattr(cfg, name)
            if isinstance(val, bool) or int(val) != val:
                raise ConfigError(f"{name} must be an integer, got {val!r}")
            setattr(cfg, name, int(val))
        cfg.validate()
    except (TypeError, ValueError, DomainError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def build_spec(cfg: ExperimentConfig) -> UnitDiffusionSpec:
    candidate = BESSEL if cfg.algorithm == eng.BESSEL_EA1 else BROWNIAN
    if cfg.model == "growth":
        if cfg.algorithm == eng.EA3:
            raise ConfigError("the growth model has one finite boundary; use ea2 or bessel-ea1")
        if cfg.delta is not None and cfg.delta != 4.0:
            raise ConfigError("the growth model uses a Bessel(4) candidate")
        spec = growth_model_spec(GrowthModelParams(cfg.kappa, cfg.omega, cfg.tau), candidate, cfg.bounds)
    elif cfg.model == "wide-bessel":
        if candidate != BESSEL:
            raise ConfigError("the wide-sense Bessel model runs with bessel-ea1")
        spec = wide_sense_bessel_spec(cfg.nu, cfg.rho)
        if cfg.delta is not None and cfg.delta != spec.delta:
            raise ConfigError(f"delta must equal 2 nu + 2 = {spec.delta}")
    elif candidate == BESSEL:
        raise ConfigError(f"model {cfg.model!r} has no Bessel candidate")
    elif cfg.model == "sine":
        spec = sine_spec()
    elif cfg.model == "zero":
        spec = zero_drift_spec(0.0, 1.0) if cfg.algorithm == eng.EA3 else zero_drift_spec()
    else:
        spec = jacobi_toy_spec(cfg.c)
    if cfg.algorithm == eng.EA3 and not (math.isfinite(spec.lower_boundary) and math.isfinite(spec.upper_boundary)):
        raise ConfigError("ea3 needs a model with two finite boundaries")
    if not spec.interior(cfg.y0) or (cfg.yT is not None and not spec.interior(cfg.yT)):
        raise ConfigError("y0 and yT must lie inside the state space")
    if cfg.algorithm in (eng.EA1, eng.BESSEL_EA1) and not _globally_bounded(spec):
        raise ConfigError(f"{cfg.algorithm} needs phi bounded on the whole state space; model "
                          f"{cfg.model!r} is not")
    return spec


def _globally_bounded(spec: UnitDiffusionSpec) -> bool:
    try:
        return math.isfinite(spec.sup_phi())
    except (NumericError, DomainError):
        return False


# -- running replicates ----------------------------------------------------------------------
def _run_one(cfg: ExperimentConfig, spec: UnitDiffusionSpec, rng: CountingRNG) -> eng.Skeleton:
    kw = {}
    if cfg.algorithm == eng.EA2:
        kw["positivity"] = cfg.positivity and math.isfinite(spec.lower_boundary)
    if cfg.algorithm == eng.EA3:
        first = cfg.layer_first
        kw["layers"] = lambda br: eng.default_layers(br, spec.lower_boundary, spec.upper_boundary, first)
    skel = eng.run(cfg.algorithm, spec, cfg.y0, cfg.T, rng, z=cfg.yT, max_variates=cfg.max_variates, **kw)
    if cfg.max_attempts is not None and skel.attempts > cfg.max_attempts:
        raise ResourceCapExceeded(f"path needed {skel.attempts} attempts", skel.stats.variates)
    return skel


def _bench_chunk(args):
    cfg, cell_index, reps = args
    spec = build_spec(cfg)
    rows = []
    for rep in reps:
        rng = CountingRNG(cfg.seed, cell_index, rep)
        try:
            s = _run_one(cfg, spec, rng).stats
        except ResourceCapExceeded as exc:
            return rep, None, str(exc)
        rows.append((s.attempts, s.poisson_points, s.skeleton_points, s.variates, s.uniforms, s.wall_time))
    return reps[0], rows, None


def _chunks(n: int, size: int) -> List[range]:
    return [range(i, min(i + size, n)) for i in range(0, n, size)]


def _map(fn, jobs: Sequence, n_workers: int):
    if n_workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n_workers) as pool:
        return list(pool.map(fn, jobs))


@dataclass
class RunStats:
    attempts: float
    poisson_points: float
    skeleton_points: float
    random_variables: float
    uniforms: float
    total_time_s: float
    n_accepted: int
    rng_seed: int
    status: str = "ok"


def bench_cell(cfg: ExperimentConfig, cell_index: int, jobs: int = 1, chunk: int = 250) -> RunStats:
    parts = _map(_bench_chunk, [(cfg, cell_index, r) for r in _chunks(cfg.n_paths, chunk)], jobs)
    rows, failure = [], None
    for _, chunk_rows, err in sorted(parts, key=lambda p: p[0]):
        if err is not None:
            failure = err
            break
        rows.extend(chunk_rows)
    if failure is not None:
        log.warning("cell %s marked incomplete: %s", cfg.key(), failure)
        return RunStats(*([math.nan] * 6), 0, cfg.seed, "incomplete")
    if not rows:
        return RunStats(*([math.nan] * 6), 0, cfg.seed, "ok")
    a = np.array(rows, dtype=float)
    m = a.mean(axis=0)
    return RunStats(float(m[0]), float(m[1]), float(m[2]), float(m[3]), float(m[4]),
                    float(a[:, 5].sum()), len(rows), cfg.seed)


def _num(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return "--" if math.isnan(x) else repr(x)
    return str(x)


BENCH_COLUMNS = ["algorithm", "model", "kappa", "omega", "tau", "y0", "yT", "T", "n_accepted",
                 "attempts", "poisson_points", "skeleton_points", "random_variables", "uniforms",
                 "rng_seed", "status"]


def cmd_bench(cfg: ExperimentConfig, out: str, jobs: int = 1) -> List[Dict]:
    os.makedirs(out, exist_ok=True)
    rows, timing = [], []
    for idx, cell in enumerate(cfg.cells()):
        stats = bench_cell(cell, idx, jobs)
        row = dict(cell.key())
        row.update({k: v for k, v in dataclasses.asdict(stats).items() if k != "total_time_s"})
        rows.append(row)
        timing.append({**cell.key(), "total_time_s": stats.total_time_s})
    order = sorted(range(len(rows)), key=lambda i: tuple(str(rows[i][k]) for k in BENCH_COLUMNS[:8]))
    rows = [rows[i] for i in order]
    with open(os.path.join(out, "bench.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BENCH_COLUMNS)
        for r in rows:
            w.writerow([_num(r[c]) for c in BENCH_COLUMNS])
    with open(os.path.join(out, "bench.json"), "w") as fh:
        fh.write(eng.dump_json({"config": _config_dict(cfg), "rows": [_nan_to_none(r) for r in rows]}, indent=1))
        fh.write("\n")
    with open(os.path.join(out, "bench_timing.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BENCH_COLUMNS[:8] + ["total_time_s"])
        for t in (timing[i] for i in order):
            w.writerow([_num(t[c]) for c in BENCH_COLUMNS[:8]] + [_num(t["total_time_s"])])
    return rows


def _nan_to_none(d: Dict) -> Dict:
    return {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in d.items()}


def _config_dict(cfg: ExperimentConfig) -> Dict:
    return {k: v for k, v in dataclasses.asdict(cfg).items() if v is not None}


# -- simulate ----------------------------------------------------------------------------------
def _fill_times(cfg: ExperimentConfig) -> List[float]:
    if cfg.times is not None:
        ts = sorted({0.0, cfg.T, *(float(t) for t in cfg.times)})
        if ts[0] < 0 or ts[-1] > cfg.T:
            raise ConfigError("simulate.times must lie in [0, T]")
        return ts
    return [cfg.T * k / cfg.grid for k in range(cfg.grid)] + [cfg.T]


def _simulate_chunk(args):
    cfg, reps = args
    spec = build_spec(cfg)
    times = _fill_times(cfg)
    out = []
    for rep in reps:
        rng = CountingRNG(cfg.seed, 0, rep)
        skel = _run_one(cfg, spec, rng)
        record = skel.to_dict()
        fill_rng = CountingRNG(cfg.seed, 1, rep)
        pts = eng.fill_in(skel, times, fill_rng, update=False)
        out.append((rep, record, pts))
    return out


def cmd_simulate(cfg: ExperimentConfig, out: str, jobs: int = 1) -> int:
    os.makedirs(out, exist_ok=True)
    parts = _map(_simulate_chunk, [(cfg, r) for r in _chunks(cfg.n_paths, 100)], jobs)
    results = sorted((r for p in parts for r in p), key=lambda r: r[0])
    skel_path = os.path.join(out, "skeletons.json")
    paths_path = os.path.join(out, "paths.csv")
    try:
        with open(skel_path, "w") as fh:
            records = [{"replicate": rep, **rec} for rep, rec, _ in results]
            fh.write(eng.dump_json(records, indent=1))
            fh.write("\n")
        with open(paths_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["replicate", "t", "y"])
            for rep, _, pts in results:
                for t, v in pts:
                    w.writerow([rep, repr(float(t)), repr(float(v))])
    except OSError as exc:
        raise OSError(f"writing simulation output in {out}: {exc}") from exc
    return len(results)


# -- validate ----------------------------------------------------------------------------------
def cmd_validate(cfg: ExperimentConfig, out: str) -> Dict:
    from . import validation

    suites = cfg.suites or list(validation.SUITES)
    report = {"seed": cfg.seed, "n": cfg.validate_n, "suites": []}
    for name in suites:
        if name not in validation.SUITES:
            raise ConfigError(f"unknown validation suite {name!r}; known: {sorted(validation.SUITES)}")
        res = validation.SUITES[name](cfg.validate_n, cfg.seed)
        res["suite"] = name
        report["suites"].append(res)
    report["passed"] = all(r["passed"] for r in report["suites"])
    report["underpowered"] = any(r.get("underpowered") for r in report["suites"])
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "validate.json"), "w") as fh:
        fh.write(eng.dump_json(report, indent=1))
        fh.write("\n")
    return report


# -- entry point --------------------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="exactdiff", description="Exact simulation of one-dimensional diffusions.")
    p.add_argument("command", choices=["bench", "simulate", "validate"])
    p.add_argument("--config", required=True, help="TOML experiment file")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.command == "bench":
            cmd_bench(cfg, args.out, args.jobs)
        elif args.command == "simulate":
            cmd_simulate(cfg, args.out, args.jobs)
        else:
            report = cmd_validate(cfg, args.out)
            for r in report["suites"]:
                flag = "PASS" if r["passed"] else "FAIL"
                extra = " (underpowered)" if r.get("underpowered") else ""
                print(f"{flag} {r['suite']}: {r['statistic']:.6g} vs {r['tolerance']:.6g}{extra}")
            if report["underpowered"]:
                log.warning("some suites ran with too few samples to be informative")
            if not report["passed"]:
                return EXIT_VALIDATION
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
