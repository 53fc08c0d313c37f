"""Command-line front end: ``rasp-evt {density,orbit,evt,diagnose,validate}``.

Exit codes: 0 success, 1 analysis error, 2 configuration error, 3 I/O error,
4 acceptance failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import acceptance
from .config import ExperimentConfig, load, serialize
from .density import (
    Grid,
    boundary_cells,
    closed_form_cell_masses,
    empirical_density,
    stationary_density_series,
    ulam_operator,
)
from .diagnostics import (
    Indicator,
    cluster_probability_ratio,
    cluster_return_sum,
    correlation_table,
    dprime_sum,
    dprime_sum_analytic,
    write_table,
)
from .errors import ConfigError, LevelError, RaspError
from .evt import (
    DistToOrbit,
    DistToPoint,
    attractor_orbit,
    level_sequence_analytic,
    level_sequence_empirical,
    level_sequence_exact,
    run_evt,
)
from .boxes import Box, Region
from .rasp import NoiseParams, initial_uniform, orbit, sample_stationary_many
from .rng import StreamBatch

ENV_OUTPUT = "RASP_EVT_OUTPUT"
EXIT_OK, EXIT_ANALYSIS, EXIT_CONFIG, EXIT_IO, EXIT_ACCEPTANCE = 0, 1, 2, 3, 4


# ------------------------------------------------------------------ output
class RunDir:
    """Output directory named by the config hash; every file starts with the header line."""

    def __init__(self, cfg: ExperimentConfig, base: str):
        self.cfg = cfg
        self.path = Path(base) / cfg.hash()
        self.path.mkdir(parents=True, exist_ok=True)
        self.write_text("config.txt", serialize(cfg))

    @property
    def header(self) -> str:
        return self.cfg.header()

    def write_text(self, name: str, text: str):
        with open(self.path / name, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.header + "\n" + text)

    def write_csv(self, name: str, columns, rows):
        with open(self.path / name, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.header + "\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(columns)
            w.writerows(rows)

    def write_json(self, name: str, data: dict):
        body = {"header": self.header.lstrip("# ")} | data
        with open(self.path / name, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(json.dumps(body, indent=2, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def _fmt(v) -> str:
    return repr(float(v))


# ---------------------------------------------------------------- commands
def cmd_density(cfg: ExperimentConfig, out: RunDir, workers: int, quick: bool) -> int:
    fmap = cfg.map.build()
    eps, g = cfg.epsilon, cfg.grid_level
    grid = Grid(fmap.dim, g)
    masses, cf_err = closed_form_cell_masses(fmap, eps, g, node_tol=1e-8 if fmap.kind == "baker" else 0.0)
    cf = masses / grid.cell_measure
    P = ulam_operator(fmap, g)
    ulam = stationary_density_series(P, eps, 1e-13)
    budget = max(cfg.run.budget // (10 if quick else 1), 1)
    X = sample_stationary_many(fmap, NoiseParams(eps), budget, cfg.run.burn_in, cfg.seed, workers=workers)
    hist = empirical_density(X, g)
    edge = boundary_cells(fmap, g, 64) if fmap.dim == 1 else np.zeros(grid.n_cells, dtype=bool)
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.abs(ulam.values - cf) / cf
        z = np.abs(hist.values - cf) / hist.stderr
    centers = grid.centers()
    cc = [f"center_{d}" for d in range(fmap.dim)]
    for name, prof in (("ulam.csv", ulam.values), ("histogram.csv", hist.values)):
        se = hist.stderr if name == "histogram.csv" else np.full(grid.n_cells, np.nan)
        out.write_csv(name, cc + ["density", "stderr"], [(*map(_fmt, c), _fmt(v), _fmt(s)) for c, v, s in zip(centers, prof, se)])
    out.write_csv("closed_form.csv", cc + ["density", "stderr"], [(*map(_fmt, c), _fmt(v), "nan") for c, v in zip(centers, cf)])
    out.write_csv(
        "density.csv",
        cc + ["closed_form", "ulam", "histogram", "histogram_stderr", "ulam_relative_error", "histogram_z", "boundary_cell"],
        [
            (*map(_fmt, c), _fmt(a), _fmt(b), _fmt(h), _fmt(s), _fmt(r), _fmt(zz), int(e))
            for c, a, b, h, s, r, zz, e in zip(centers, cf, ulam.values, hist.values, hist.stderr, rel, z, edge)
        ],
    )
    coo = P.matrix.tocoo()
    out.write_text("ulam_triplets.txt", "".join(f"{i} {j} {float(v)!r}\n" for i, j, v in zip(coo.row, coo.col, coo.data)))
    ok = ~edge & np.isfinite(rel)
    summary = {
        "map": fmap.to_dict(),
        "epsilon": eps,
        "grid_level": g,
        "samples": budget,
        "closed_form_error_bound": cf_err,
        "ulam_sup_relative_error_off_boundary": float(np.max(rel[ok])) if ok.any() else None,
        "histogram_max_abs_z": float(np.nanmax(z[np.isfinite(z)])) if np.isfinite(z).any() else None,
        "ulam_residual_l1": ulam.info["residual_l1"],
    }
    out.write_json("summary.json", summary)
    print(json.dumps(summary, default=_json_default))
    return EXIT_OK


def cmd_orbit(cfg: ExperimentConfig, out: RunDir, workers: int, quick: bool) -> int:
    fmap = cfg.map.build()
    x0 = initial_uniform(fmap, StreamBatch(cfg.seed, [0]))[0]
    o = orbit(fmap, NoiseParams(cfg.epsilon), x0, cfg.run.n, cfg.seed)
    out.write_csv("orbit.csv", ["step"] + [f"x_{d + 1}" for d in range(fmap.dim)] + ["event"], o.to_rows())
    summary = {"n": o.n, "resets": int(o.resets.sum()), "reset_fraction": float(o.resets.mean()) if o.n else 0.0}
    out.write_json("orbit.json", summary)
    print(json.dumps(summary))
    return EXIT_OK


def _observable(cfg: ExperimentConfig, fmap):
    if cfg.observable.kind == "point":
        return DistToPoint(cfg.observable.z), None
    orbits = attractor_orbit(fmap)
    return DistToOrbit(orbits[0].points), orbits


def _level(cfg: ExperimentConfig, fmap, obs, n: int, workers: int):
    mode, tau = cfg.levels.mode, cfg.levels.tau
    if mode == "analytic":
        if not isinstance(obs, DistToPoint):
            raise ConfigError("analytic levels need a point observable; use exact or empirical", "levels.mode")
        return level_sequence_analytic(fmap, cfg.epsilon, obs.z, n, tau)
    if mode == "exact":
        return level_sequence_exact(fmap, cfg.epsilon, obs, n, tau)
    return level_sequence_empirical(
        fmap, NoiseParams(cfg.epsilon), obs, n, tau, cfg.run.budget, cfg.seed + 1, cfg.run.burn_in, workers
    )


def cmd_evt(cfg: ExperimentConfig, out: RunDir, workers: int, quick: bool) -> int:
    fmap = cfg.map.build()
    obs, orbits = _observable(cfg, fmap)
    lev = _level(cfg, fmap, obs, cfg.run.n, workers)
    blocks = max(cfg.run.blocks // (10 if quick else 1), 1)
    rep = run_evt(
        fmap, NoiseParams(cfg.epsilon), obs, lev, blocks, cfg.seed, workers,
        burn_in=cfg.run.burn_in, rate_budget=max(cfg.run.budget // (10 if quick else 1), 1),
    )
    if orbits is not None:
        rep.info["attractor_orbits"] = [o.points.tolist() for o in orbits]
        rep.info["theta_reference"] = cfg.epsilon
    data = rep.scalars()
    out.write_json("report.json", data)
    out.write_csv("maxima.csv", ["block_index", "M_n", "rescaled"], [(b, _fmt(m), _fmt(r)) for b, m, r in rep.maxima_rows()])
    out.write_csv("cdf.csv", ["y", "empirical_cdf", "gumbel_cdf"], [tuple(map(_fmt, row)) for row in rep.cdf_rows()])
    print(json.dumps({k: data[k] for k in ("ks_distance", "p_no_exceedance", "theta_analytic")} | {"theta": data.get("theta")}, default=_json_default))
    return EXIT_OK


def cmd_diagnose(cfg: ExperimentConfig, out: RunDir, workers: int, quick: bool) -> int:
    fmap = cfg.map.build()
    eps = cfg.epsilon
    budget = max(cfg.run.budget // (10 if quick else 1), 2)
    lo = [cfg.diagnose.set_lo] + [0.0] * (fmap.dim - 1)
    hi = [cfg.diagnose.set_hi] + [1.0] * (fmap.dim - 1)
    closed = (False,) + (True,) * (fmap.dim - 1)
    A = Indicator(Region(fmap.dim, [Box(tuple(lo), tuple(hi), closed, closed)]))
    rows = []
    for r in correlation_table(fmap, eps, A, A, range(1, cfg.diagnose.lags + 1), budget, cfg.seed, cfg.run.burn_in, workers):
        rows.append(("correlation", f"lag={r.n}", _fmt(r.estimate), _fmt(r.stderr), _fmt(r.bound)))
    obs, _ = _observable(cfg, fmap)
    for n in cfg.diagnose.n_grid:
        k = math.sqrt(n)
        if isinstance(obs, DistToPoint):
            lev = level_sequence_analytic(fmap, eps, obs.z, n, cfg.levels.tau)
            try:
                ref = _fmt(dprime_sum_analytic(fmap, eps, obs.z, math.exp(-lev.u_n), n, k).value)
            except LevelError:
                ref = "nan"
            s = dprime_sum(fmap, eps, obs, lev.u_n, n, k, budget, cfg.seed, workers)
            rows.append(("dprime_sum", f"n={n};k_n={k:.6g}", _fmt(s.value), _fmt(s.stderr), ref))
        else:
            lev = level_sequence_exact(fmap, eps, obs, n, cfg.levels.tau)
            region = obs.region(lev.u_n)
            s = cluster_return_sum(fmap, eps, region, n, k, budget, cfg.seed, workers)
            rows.append(("cluster_return_sum", f"n={n};k_n={k:.6g}", _fmt(s.value), _fmt(s.stderr), "nan"))
            c = cluster_probability_ratio(fmap, eps, region, budget, cfg.seed, cfg.run.burn_in, workers)
            rows.append(("cluster_ratio", f"n={n}", _fmt(c.ratio), _fmt(c.stderr), _fmt(c.reference)))
    write_table(out.path / "diagnostics.csv", rows, out.header)
    print(f"wrote {len(rows)} rows to {out.path / 'diagnostics.csv'}")
    return EXIT_OK


def cmd_validate(cfg: ExperimentConfig, out: RunDir, workers: int, quick: bool, only=None, fault_epsilon=None) -> int:
    def report(res):
        print(res.line(), flush=True)

    print(f"acceptance suite ({'quick' if quick else 'full'} scale, seed {cfg.seed})")
    results = acceptance.run_all(cfg.seed, quick, workers, only, fault_epsilon, report)
    out.write_csv(
        "acceptance.csv",
        ["criterion", "name", "passed", "seconds", "failed_checks"],
        [(r.number, r.name, int(r.passed), f"{r.seconds:.2f}", "; ".join(f"{c.label} {c.detail}" for c in r.failures())) for r in results],
    )
    passed = all(r.passed for r in results)
    print(f"{sum(r.passed for r in results)}/{len(results)} criteria passed")
    return EXIT_OK if passed else EXIT_ACCEPTANCE


COMMANDS = {
    "density": cmd_density,
    "orbit": cmd_orbit,
    "evt": cmd_evt,
    "diagnose": cmd_diagnose,
    "validate": cmd_validate,
}


# -------------------------------------------------------------------- main
def _u64(text: str) -> int:
    v = int(text, 0)
    if not (0 <= v < 1 << 64):
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="flat key = value config file")
    common.add_argument("--seed", type=_u64, help="master seed (overrides the config)")
    common.add_argument("--workers", type=int, default=1, help="worker processes")
    common.add_argument("--output", help=f"output base directory (overrides ${ENV_OUTPUT} and the config)")
    common.add_argument("--quick", action="store_true", help="ten times smaller Monte Carlo budgets")
    parser = argparse.ArgumentParser(prog="rasp-evt", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "validate":
            p.add_argument("--only", help="comma separated criterion numbers")
            p.add_argument("--fault-epsilon", type=float, help="simulate the extremal-index runs at this noise level")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load(args.config) if args.config else ExperimentConfig()
        output = args.output or os.environ.get(ENV_OUTPUT) or None
        cfg = cfg.with_overrides(args.seed, output).validate()
        if args.workers < 1:
            raise ConfigError("must be at least 1", "--workers")
        extra = {}
        if args.command == "validate":
            if args.only:
                try:
                    extra["only"] = {int(t) for t in args.only.split(",")}
                except ValueError:
                    raise ConfigError("expected comma separated integers", "--only") from None
            if args.fault_epsilon is not None:
                NoiseParams(args.fault_epsilon)
                extra["fault_epsilon"] = args.fault_epsilon
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        out = RunDir(cfg, cfg.output)
        return COMMANDS[args.command](cfg, out, args.workers, args.quick, **extra)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except RaspError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ANALYSIS


if __name__ == "__main__":
    sys.exit(main())
