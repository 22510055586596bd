"""Configuration-driven command line front end.

One JSON config file describes one reproducible experiment; every output
embeds the fully resolved configuration (defaults included) plus the
package version, with the wall-clock timestamp isolated in the metadata
block so reruns are byte-identical elsewhere.

Exit codes: 0 success/pass, 1 check failed, 2 configuration error,
3 numerical unreliability.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .estimators import (
    GridSpec,
    ObservableSpec,
    solve_harmonic,
    solve_parabolic,
    survival_probability,
    transition_density,
)
from .exprlang import (
    BoxPredicate,
    Const,
    ExprError,
    TruePredicate,
    parse,
    parse_predicate,
)
from .fields import DiffusionSpec
from .hormander import generate_basis, rank_at
from .paths import PathConfig, simulate_dense, simulate_paths, write_path_csv
from .sle import SLEConfig, bpz_residual, covariant_observable, sle_spec
from .verify import (
    GriddedField,
    VerifyError,
    bump_space_time,
    martingale_drift_test,
    oracle_interval_bm,
    strong_residual,
    weak_residual,
)

SCHEMA_VERSION = 1

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_UNRELIABLE = 3


class ConfigError(ValueError):
    pass


_NUMERICS_DEFAULTS = {
    "dt": 1e-3,
    "T": None,
    "n_paths": 10000,
    "seed": 0,
    "collision_guard": 1e-4,
    "max_steps": 10_000_000,
    "bridge_correction": False,
    "threads": None,
    "depth": None,
    "tol": 1e-9,
}


def _load_config(path: str, overrides: argparse.Namespace) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be an object")
    numerics = dict(_NUMERICS_DEFAULTS)
    numerics.update(cfg.get("numerics", {}))
    unknown = set(numerics) - set(_NUMERICS_DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown numerics fields: {sorted(unknown)}")
    if overrides.seed is not None:
        numerics["seed"] = overrides.seed
    if overrides.threads is not None:
        numerics["threads"] = overrides.threads
    cfg["numerics"] = numerics
    cfg.setdefault("task", {})
    cfg["schema_version"] = SCHEMA_VERSION
    return cfg


def _build_spec(cfg: dict) -> DiffusionSpec:
    prob = cfg.get("problem")
    if not isinstance(prob, dict):
        raise ConfigError("missing problem block")
    kind = prob.get("kind", "sde")
    try:
        if kind == "sle":
            sle_cfg = _build_sle_config(cfg)
            return sle_spec(sle_cfg)
        n = int(prob["n"])
        d = int(prob["d"])
        sigma = tuple(
            tuple(parse(src, n) for src in row) for row in prob["sigma"]
        )
        drift = tuple(parse(src, n) for src in prob["drift"])
        dom = prob.get("domain", {"type": "all"})
        dtype = dom.get("type", "all")
        if dtype == "all":
            domain = TruePredicate()
            box = None
        elif dtype == "box":
            lows = tuple(float(v) for v in dom["lows"])
            highs = tuple(float(v) for v in dom["highs"])
            domain = BoxPredicate(lows, highs)
            box = (lows, highs)
        elif dtype == "predicate":
            domain = parse_predicate(dom["source"], n)
            box = None
        else:
            raise ConfigError(f"unknown domain type {dtype!r}")
        pairs = tuple(tuple(int(v) for v in p) for p in prob.get("collision_pairs", []))
        return DiffusionSpec(n=n, d=d, sigma=sigma, drift=drift, domain=domain,
                             collision_pairs=pairs, box=box)
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError, ExprError) as exc:
        raise ConfigError(f"bad problem block: {exc}") from exc


def _build_sle_config(cfg: dict) -> SLEConfig:
    prob = cfg["problem"]
    try:
        x0 = tuple(float(v) for v in prob["x0"])
        return SLEConfig(
            kappa=float(prob["kappa"]),
            x0=x0,
            weights=tuple(float(v) for v in prob.get("weights", [])),
            b1=parse(prob.get("b1", "0"), len(x0)),
            delta_c=float(cfg["numerics"]["collision_guard"]),
        )
    except (KeyError, TypeError, ValueError, ExprError) as exc:
        raise ConfigError(f"bad sle problem block: {exc}") from exc


def _build_obs(cfg: dict, n: int) -> ObservableSpec:
    block = cfg.get("observable", {})
    try:
        return ObservableSpec(
            g=parse(block.get("g", "0"), n),
            h=parse(block.get("h", "0"), n),
            psi=parse(block.get("psi", "0"), n),
        )
    except ExprError as exc:
        raise ConfigError(f"bad observable block: {exc}") from exc


def _path_config(cfg: dict) -> PathConfig:
    num = cfg["numerics"]
    try:
        return PathConfig(
            dt=float(num["dt"]),
            horizon=None if num["T"] is None else float(num["T"]),
            seed=int(num["seed"]),
            collision_guard=float(num["collision_guard"]),
            max_steps=int(num["max_steps"]),
            bridge_correction=bool(num["bridge_correction"]),
            threads=None if num["threads"] is None else int(num["threads"]),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad numerics block: {exc}") from exc


def _write_json(out_dir: Path, name: str, command: str, cfg: dict, results,
                runtime: float | None = None) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    metadata = {"timestamp": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())}
    if runtime is not None:
        metadata["runtime_s"] = runtime
    payload = {
        "command": command,
        "version": __version__,
        "config": cfg,
        "results": results,
        "metadata": metadata,
    }
    path = out_dir / name
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _write_field_csv(path: Path, n: int, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{i + 1}" for i in range(n)] + ["t", "mean", "std_error"])
        for x, t, mean, se in rows:
            writer.writerow([repr(float(v)) for v in x]
                            + [repr(float(t)), repr(float(mean)), repr(float(se))])


def _estimate_dict(est) -> dict:
    return {
        "mean": est.mean,
        "std_error": est.std_error,
        "n_paths": est.n_paths,
        "n_censored_by_cap": est.n_censored_by_cap,
        "seed": est.seed,
        "unreliable": est.unreliable,
        "divergence_suspected": est.divergence_suspected,
    }


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_check_hormander(cfg: dict, out_dir: Path) -> int:
    spec = _build_spec(cfg)
    task = cfg["task"]
    depth = task.get("depth", cfg["numerics"]["depth"])
    if depth is None:
        depth = spec.n + 2
    tol = float(task.get("tol", cfg["numerics"]["tol"]))
    points = task.get("points")
    if not points:
        raise ConfigError("check-hormander task needs points")
    basis = generate_basis(spec, int(depth))
    reports = []
    all_ok = True
    for x in points:
        rep = rank_at(basis, [float(v) for v in x], tol=tol)
        reports.append({
            "point": list(rep.point),
            "depth": rep.depth,
            "rank": rep.rank,
            "satisfied": rep.satisfied,
            "singular_values": list(rep.singular_values),
        })
        all_ok &= rep.satisfied
        print(f"point {list(rep.point)}: rank {rep.rank} "
              f"{'satisfied' if rep.satisfied else 'NOT satisfied'}")
    results = {"basis_size": len(basis.entries), "reports": reports,
               "all_satisfied": all_ok}
    _write_json(out_dir, "check_hormander.json", "check-hormander", cfg, results)
    return EXIT_OK if all_ok else EXIT_CHECK_FAILED


def _launch_nodes(task: dict, n: int):
    launch = task.get("launch", {})
    if "axes" in launch:
        axes = [np.asarray([float(v) for v in ax]) for ax in launch["axes"]]
        times = np.asarray([float(v) for v in launch.get("times", [0.0])])
        grids = np.meshgrid(*axes, times, indexing="ij")
        pts = np.stack([g.ravel() for g in grids[:-1]], axis=-1)
        ts = grids[-1].ravel()
        meta = {"axes": [list(map(float, ax)) for ax in axes],
                "times": [float(v) for v in times]}
        return pts, ts, meta
    points = launch.get("points")
    if not points:
        raise ConfigError("solve task needs launch.points or launch.axes")
    times = launch.get("times", [0.0])
    pts, ts = [], []
    for x in points:
        for t in times:
            pts.append([float(v) for v in x])
            ts.append(float(t))
    return np.asarray(pts), np.asarray(ts), None


def cmd_solve(cfg: dict, out_dir: Path) -> int:
    spec = _build_spec(cfg)
    obs = _build_obs(cfg, spec.n)
    pcfg = _path_config(cfg)
    task = cfg["task"]
    mode = task.get("mode")
    n_paths = int(cfg["numerics"]["n_paths"])
    antithetic = bool(task.get("antithetic", False))
    started = time.perf_counter()

    if mode == "density":
        grid = GridSpec(
            lows=tuple(float(v) for v in task["grid"]["lows"]),
            highs=tuple(float(v) for v in task["grid"]["highs"]),
            shape=tuple(int(v) for v in task["grid"]["shape"]),
        )
        dens = transition_density(spec, [float(v) for v in task["w"]],
                                  [float(v) for v in task["times"]],
                                  grid, pcfg, n_paths)
        results = {
            "times": list(dens.times),
            "slice_masses": [dens.slice_mass(j) for j in range(len(dens.times))],
            "grid": {"lows": list(grid.lows), "highs": list(grid.highs),
                     "shape": list(grid.shape)},
        }
        out_dir.mkdir(parents=True, exist_ok=True)
        np.save(out_dir / "density.npy", dens.masses)
        _write_json(out_dir, "solve.json", "solve", cfg, results,
                    runtime=time.perf_counter() - started)
        return EXIT_OK

    pts, ts, grid_meta = _launch_nodes(task, spec.n)
    rows = []
    flagged = False
    for i in range(len(pts)):
        offset = i * n_paths
        if mode == "parabolic":
            est = solve_parabolic(spec, obs, pts[i], float(ts[i]), pcfg, n_paths,
                                  path_offset=offset, antithetic=antithetic)
        elif mode == "harmonic":
            est = solve_harmonic(spec, obs, pts[i], pcfg, n_paths,
                                 criterion=task.get("criterion"),
                                 path_offset=offset, antithetic=antithetic)
        elif mode == "survival":
            if pcfg.horizon is None:
                raise ConfigError("survival mode needs numerics.T")
            est = survival_probability(spec, pts[i], float(ts[i]), pcfg.horizon,
                                       pcfg, n_paths, path_offset=offset)
        else:
            raise ConfigError(f"unknown solve mode {mode!r}")
        flagged |= est.unreliable or est.divergence_suspected
        rows.append((pts[i], ts[i], est.mean, est.std_error))

    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "solve.csv"
    _write_field_csv(csv_path, spec.n, rows)
    results = {
        "mode": mode,
        "csv": csv_path.name,
        "n_nodes": len(rows),
        "estimates": [
            {"x": [float(v) for v in x], "t": float(t), "mean": float(m),
             "std_error": float(se)}
            for x, t, m, se in rows
        ],
        "flagged_unreliable": flagged,
    }
    if grid_meta:
        results["grid"] = grid_meta
    _write_json(out_dir, "solve.json", "solve", cfg, results,
                runtime=time.perf_counter() - started)
    print(f"solve[{mode}]: {len(rows)} nodes -> {csv_path}")
    return EXIT_UNRELIABLE if flagged else EXIT_OK


def _load_field(solve_json: Path) -> tuple[GriddedField, dict]:
    with open(solve_json) as fh:
        payload = json.load(fh)
    results = payload["results"]
    grid_meta = results.get("grid")
    if not grid_meta:
        raise ConfigError("referenced solve output has no tensor grid")
    axes = [np.asarray(ax) for ax in grid_meta["axes"]]
    times = np.asarray(grid_meta["times"])
    shape = tuple(len(a) for a in axes) + (len(times),)
    means = np.array([e["mean"] for e in results["estimates"]]).reshape(shape)
    ses = np.array([e["std_error"] for e in results["estimates"]]).reshape(shape)
    fld = GriddedField(axes=tuple(axes) + (times,), values=means, std_errors=ses)
    return fld, payload["config"]


def cmd_verify(cfg: dict, out_dir: Path) -> int:
    task = cfg["task"]
    mode = task.get("mode")
    results: dict = {"mode": mode}
    ok = True

    if mode == "strong":
        spec = _build_spec(cfg)
        obs = _build_obs(cfg, spec.n)
        f = parse(task["f"], spec.n)
        xs = np.asarray(task["points"], dtype=float)
        ts = np.asarray(task.get("times", [0.0] * len(xs)), dtype=float)
        rep = strong_residual(spec, obs, f, xs, ts, tol=float(task.get("tol", 1e-12)))
        results.update({"max_residual": rep.value, "tolerance": rep.tolerance,
                        "passed": rep.passed})
        ok = rep.passed
    elif mode == "weak":
        fld, solve_cfg = _load_field(Path(task["field"]))
        spec = _build_spec(solve_cfg)
        obs = _build_obs(solve_cfg, spec.n)
        bump_reports = []
        for b in task["bumps"]:
            phi = bump_space_time(b["centers"], b["halfwidths"],
                                  b["t_center"], b["t_halfwidth"])
            rep = weak_residual(spec, obs, fld, phi,
                                tolerance=task.get("tolerance"),
                                tol_factor=float(task.get("tol_factor", 3.0)))
            bump_reports.append({
                "bump": b, "integral": rep.value, "budget": rep.tolerance,
                "mc_error": rep.mc_error, "quad_error": rep.quad_error,
                "passed": rep.passed,
            })
            ok &= rep.passed
        results["bumps"] = bump_reports
    elif mode == "drift":
        spec = _build_spec(cfg)
        obs = _build_obs(cfg, spec.n)
        pcfg = _path_config(cfg)
        f = parse(task["f"], spec.n)
        rep = martingale_drift_test(
            spec, obs, f, [float(v) for v in task["x0"]],
            float(task.get("t0", 0.0)), [float(v) for v in task["probes"]],
            pcfg, int(cfg["numerics"]["n_paths"]),
            confidence=float(task.get("confidence", 0.99)),
        )
        results.update({
            "probe_pairs": [list(p) for p in rep.probe_pairs],
            "mean_increments": list(rep.mean_increments),
            "std_errors": list(rep.std_errors),
            "z_scores": list(rep.z_scores),
            "n_alive": list(rep.n_alive),
            "quantile": rep.quantile,
            "passed": rep.passed,
        })
        ok = rep.passed
    else:
        raise ConfigError(f"unknown verify mode {mode!r}")

    _write_json(out_dir, "verify.json", "verify", cfg, results)
    print(f"verify[{mode}]: {'pass' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def cmd_sle_sim(cfg: dict, out_dir: Path) -> int:
    sle_cfg = _build_sle_config(cfg)
    spec = sle_spec(sle_cfg)
    pcfg = _path_config(cfg)
    if pcfg.horizon is None:
        raise ConfigError("sle-sim needs numerics.T")
    task = cfg["task"]
    n_paths = int(cfg["numerics"]["n_paths"])
    f_src = task.get("observable_f")
    f = parse(f_src, spec.n) if f_src else None
    obs = covariant_observable(sle_cfg, f if f is not None else Const(0.0))
    res = simulate_paths(spec, obs, sle_cfg.x0, 0.0, pcfg, n_paths)
    from .engine import CAUSE_COLLISION, CAUSE_HORIZON

    survived = res.cause == CAUSE_HORIZON
    collided = res.cause == CAUSE_COLLISION
    results = {
        "n_paths": n_paths,
        "collision_fraction": float(np.mean(collided)),
        "survival_fraction": float(np.mean(survived)),
        "mean_gamma_surviving": float(np.mean(res.gamma[survived])) if survived.any() else None,
        "final_state_mean": [float(v) for v in res.state[survived].mean(axis=0)] if survived.any() else None,
    }
    if f is not None and survived.any():
        from .exprlang import compile_numpy

        m_vals = res.gamma[survived] * compile_numpy(f)(res.state[survived], pcfg.horizon)
        results["observable"] = {
            "f": f_src,
            "mean_M_T_surviving": float(np.mean(m_vals)),
            "M_0": float(compile_numpy(f)(np.asarray(sle_cfg.x0)[None, :], 0.0)[0]),
        }
    n_dump = int(task.get("dump_paths", 0))
    if n_dump > 0:
        out_dir.mkdir(parents=True, exist_ok=True)
        n_steps = int(round(pcfg.horizon / pcfg.dt))
        dense = simulate_dense(spec, obs, sle_cfg.x0, 0.0, pcfg, n_steps, n_dump)
        for i in range(n_dump):
            with open(out_dir / f"path_{i:04d}.csv", "w") as fh:
                write_path_csv(dense, i, fh)
    _write_json(out_dir, "sle_sim.json", "sle-sim", cfg, results)
    print(f"sle-sim: {n_paths} paths, collision fraction "
          f"{results['collision_fraction']:.4f}")
    return EXIT_OK


def cmd_bpz_check(cfg: dict, out_dir: Path) -> int:
    sle_cfg = _build_sle_config(cfg)
    task = cfg["task"]
    f = parse(task["f"], sle_cfg.n)
    points = np.asarray(task["points"], dtype=float)
    tol = float(task.get("tol", 1e-10))
    rep = bpz_residual(sle_cfg, f, points, tol=tol)
    results = {"max_residual": rep.value, "tolerance": rep.tolerance,
               "passed": rep.passed, "n_points": len(points)}
    _write_json(out_dir, "bpz_check.json", "bpz-check", cfg, results)
    print(f"bpz-check: max residual {rep.value:.3e} "
          f"({'pass' if rep.passed else 'FAIL'})")
    return EXIT_OK if rep.passed else EXIT_CHECK_FAILED


def cmd_oracle(cfg: dict, out_dir: Path) -> int:
    task = cfg["task"]
    kind = task.get("kind")
    params = task.get("params", {})
    if kind is None:
        raise ConfigError("oracle task needs kind")
    try:
        value = oracle_interval_bm(kind, **params)
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"bad oracle request: {exc}") from exc
    results = {"kind": kind, "params": params, "value": value,
               "divergent": math.isinf(value)}
    _write_json(out_dir, "oracle.json", "oracle", cfg, results)
    print(f"oracle {kind}({params}) = {value}")
    return EXIT_OK


_COMMANDS = {
    "check-hormander": cmd_check_hormander,
    "solve": cmd_solve,
    "verify": cmd_verify,
    "sle-sim": cmd_sle_sim,
    "bpz-check": cmd_bpz_check,
    "oracle": cmd_oracle,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="hypofk",
        description="Monte Carlo boundary-value solvers and bracket-rank "
                    "checks for degenerate diffusions",
    )
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("--config", required=True, help="JSON experiment file")
    parser.add_argument("--seed", type=int, default=None, help="override numerics.seed")
    parser.add_argument("--threads", type=int, default=None, help="override numerics.threads")
    parser.add_argument("--out", default=".", help="output directory")
    args = parser.parse_args(argv)

    try:
        cfg = _load_config(args.config, args)
        return _COMMANDS[args.command](cfg, Path(args.out))
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ExprError, VerifyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
