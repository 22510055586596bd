"""Path-level API: stopped trajectories, accumulated weight functionals,
smooth cutoffs, the slowed-down diffusion and its time change.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from . import engine
from .engine import (
    CAUSE_COLLISION,
    CAUSE_EXIT,
    CAUSE_HORIZON,
    CAUSE_MAX_STEPS,
    DenseResult,
    SimResult,
)
from .exprlang import (
    Const,
    Expr,
    TruePredicate,
    Var,
    _mul,
    _sub,
    bump_window,
    compile_numpy,
    predicate_holds,
    simplify,
    smooth_step,
)
from .fields import DiffusionSpec

__all__ = [
    "PathConfig",
    "PathSample",
    "CutoffSpec",
    "simulate_path",
    "simulate_paths",
    "simulate_dense",
    "gamma_multiplicativity_check",
    "make_slowed_spec",
    "time_change",
    "TimeChangeResult",
    "x_regularity_probe",
    "write_path_csv",
    "CAUSE_NAMES",
]

CAUSE_NAMES = {
    CAUSE_EXIT: "exit",
    CAUSE_HORIZON: "horizon",
    CAUSE_MAX_STEPS: "max_steps",
    CAUSE_COLLISION: "collision",
}


@dataclass(frozen=True)
class PathConfig:
    """Numerical controls for path simulation.

    ``horizon`` is the absolute termination time T (None for open-ended
    runs capped by ``max_steps``).  ``collision_guard`` stops a path when
    any guarded coordinate pair approaches within that distance.  The
    bridge correction resamples within-step boundary crossings and is only
    available for axis-aligned box domains.
    """

    dt: float
    horizon: float | None = None
    seed: int = 0
    collision_guard: float = 1e-4
    max_steps: int = 10_000_000
    bridge_correction: bool = False
    threads: int | None = None

    def __post_init__(self) -> None:
        if self.dt <= 0.0:
            raise ValueError("dt must be positive")
        if self.horizon is not None and self.horizon <= 0.0:
            raise ValueError("horizon must be positive")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")

    def validate_coverage(self, t0: float) -> None:
        if self.horizon is not None:
            needed = (self.horizon - t0) / self.dt
            if self.max_steps < needed - 1e-9:
                raise ValueError(
                    f"max_steps={self.max_steps} cannot cover horizon "
                    f"{self.horizon} from t0={t0} at dt={self.dt}"
                )


@dataclass(frozen=True)
class PathSample:
    """Exit data of one simulated path.

    ``censored`` is True when the path was stopped by the time horizon, the
    step cap or the collision guard instead of leaving the domain; in the
    uncensored case ``exit_state`` is the first sampled point outside.
    """

    exit_time: float
    exit_state: tuple[float, ...]
    gamma: float
    H: float
    censored: bool
    cause: str
    steps: int


def _obs_parts(obs) -> tuple[Expr | None, Expr | None]:
    if obs is None:
        return None, None
    return obs.g, obs.h


def simulate_paths(
    spec: DiffusionSpec,
    obs,
    x0: Sequence[float],
    t0: float,
    cfg: PathConfig,
    n_paths: int,
    path_offset: int = 0,
    checkpoint_times=None,
    antithetic: bool = False,
) -> SimResult:
    """Batch simulation; the RNG stream of path i depends only on
    (cfg.seed, path_offset + i), so any batching yields identical paths."""
    cfg.validate_coverage(t0)
    g, h = _obs_parts(obs)
    return engine.run_paths(
        spec, g, h, x0, t0, cfg.dt, n_paths, cfg.seed,
        horizon=cfg.horizon, max_steps=cfg.max_steps,
        delta_c=cfg.collision_guard if spec.collision_pairs else 0.0,
        bridge=cfg.bridge_correction, checkpoint_times=checkpoint_times,
        path_offset=path_offset, antithetic=antithetic, threads=cfg.threads,
    )


def sample_from_result(res: SimResult, i: int) -> PathSample:
    cause = CAUSE_NAMES[int(res.cause[i])]
    return PathSample(
        exit_time=float(res.tau[i]),
        exit_state=tuple(float(v) for v in res.state[i]),
        gamma=float(res.gamma[i]),
        H=float(res.H[i]),
        censored=cause != "exit",
        cause=cause,
        steps=int(res.steps[i]),
    )


def simulate_path(
    spec: DiffusionSpec,
    obs,
    x0: Sequence[float],
    t0: float,
    cfg: PathConfig,
    path_index: int = 0,
) -> PathSample:
    res = simulate_paths(spec, obs, x0, t0, cfg, 1, path_offset=path_index)
    return sample_from_result(res, 0)


def simulate_dense(
    spec: DiffusionSpec,
    obs,
    x0: Sequence[float],
    t0: float,
    cfg: PathConfig,
    n_steps: int,
    n_paths: int,
    path_offset: int = 0,
) -> DenseResult:
    """Simulate recording every step (t, x, log gamma, H) for each path."""
    g, h = _obs_parts(obs)
    return engine.run_paths_dense(
        spec, g, h, x0, t0, cfg.dt, n_steps, n_paths, cfg.seed,
        delta_c=cfg.collision_guard if spec.collision_pairs else 0.0,
        path_offset=path_offset, threads=cfg.threads,
    )


# ---------------------------------------------------------------------------
# Semigroup consistency of the accumulated weights
# ---------------------------------------------------------------------------

def _accumulate(times, states, g_fn, h_fn, a: int, b: int) -> tuple[float, float]:
    """Trapezoid gamma/H over [times[a], times[b]] along stored states."""
    ts = times[a:b + 1]
    xs = states[a:b + 1]
    gv = g_fn(xs, ts)
    dt = np.diff(ts)
    incr = 0.5 * dt * (gv[:-1] + gv[1:])
    lg = np.concatenate([[0.0], np.cumsum(incr)])
    gam = np.exp(lg)
    hv = h_fn(xs, ts)
    hterm = gam * hv
    H = float(np.sum(0.5 * dt * (hterm[:-1] + hterm[1:])))
    return float(gam[-1]), H


def gamma_multiplicativity_check(
    dense: DenseResult,
    obs,
    path: int,
    split_time: float,
) -> tuple[float, float]:
    """Deviations of the pathwise identities gamma_{0,tau} = gamma_{0,t} *
    gamma_{t,tau} and H_{0,tau} = H_{0,t} + gamma_{0,t} H_{t,tau}, computed by
    re-accumulating both factorizations on the same realized trajectory.
    """
    stop = int(dense.stop_index[path])
    times = dense.times
    m = int(round((split_time - times[0]) / (times[1] - times[0])))
    if not 0 <= m <= stop:
        raise ValueError("split time outside the path's lifetime")
    g_fn = compile_numpy(obs.g if obs is not None else Const(0.0))
    h_fn = compile_numpy(obs.h if obs is not None else Const(0.0))
    states = dense.states[path]
    g_full, h_full = _accumulate(times, states, g_fn, h_fn, 0, stop)
    g_head, h_head = _accumulate(times, states, g_fn, h_fn, 0, m)
    g_tail, h_tail = _accumulate(times, states, g_fn, h_fn, m, stop)
    return (
        abs(g_full - g_head * g_tail),
        abs(h_full - (h_head + g_head * h_tail)),
    )


# ---------------------------------------------------------------------------
# Smooth cutoffs and the slowed-down process
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CutoffSpec:
    """Smooth cutoff supported on a box or ball, equal to 1 on the
    margin-interior; built from exp(-1/v) profiles so all derivatives exist
    and are available symbolically."""

    kind: str  # "box" | "ball"
    lows: tuple[float, ...] = ()
    highs: tuple[float, ...] = ()
    center: tuple[float, ...] = ()
    radius: float = 0.0
    margin: float = 0.0

    @staticmethod
    def box(lows: Sequence[float], highs: Sequence[float], margin: float) -> "CutoffSpec":
        lows = tuple(float(v) for v in lows)
        highs = tuple(float(v) for v in highs)
        if len(lows) != len(highs):
            raise ValueError("lows/highs length mismatch")
        if any(hi - lo <= 2 * margin for lo, hi in zip(lows, highs)) or margin <= 0:
            raise ValueError("box needs hi - lo > 2*margin > 0 on every axis")
        return CutoffSpec(kind="box", lows=lows, highs=highs, margin=float(margin))

    @staticmethod
    def ball(center: Sequence[float], radius: float, margin: float) -> "CutoffSpec":
        if not 0 < margin < radius:
            raise ValueError("ball needs 0 < margin < radius")
        return CutoffSpec(kind="ball", center=tuple(float(v) for v in center),
                          radius=float(radius), margin=float(margin))

    @property
    def n(self) -> int:
        return len(self.lows) if self.kind == "box" else len(self.center)

    @property
    def theta_expr(self) -> Expr:
        if self.kind == "box":
            theta: Expr = Const(1.0)
            for i, (lo, hi) in enumerate(zip(self.lows, self.highs), start=1):
                theta = _mul(theta, bump_window(Var(i), lo, hi, self.margin))
            return simplify(theta)
        # ball: ramp in squared radius, 1 inside radius - margin, 0 outside
        r2: Expr = Const(0.0)
        for i, c in enumerate(self.center, start=1):
            d = _sub(Var(i), Const(c))
            r2 = simplify(_sub(r2, _mul(Const(-1.0), _mul(d, d))))
        R2 = self.radius ** 2
        inner2 = (self.radius - self.margin) ** 2
        u = _mul(Const(1.0 / (R2 - inner2)), _sub(Const(R2), r2))
        return simplify(smooth_step(u))

    def support_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        if self.kind == "box":
            return np.asarray(self.lows), np.asarray(self.highs)
        c = np.asarray(self.center)
        return c - self.radius, c + self.radius

    def interior_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Bounds of the region where theta is identically 1."""
        if self.kind == "box":
            return (np.asarray(self.lows) + self.margin,
                    np.asarray(self.highs) - self.margin)
        c = np.asarray(self.center)
        r = self.radius - self.margin
        return c - r / math.sqrt(self.n), c + r / math.sqrt(self.n)

    def in_support(self, x: Sequence[float]) -> bool:
        if self.kind == "box":
            return all(lo <= xi <= hi for xi, lo, hi in zip(x, self.lows, self.highs))
        return float(np.sum((np.asarray(x) - np.asarray(self.center)) ** 2)) <= self.radius ** 2


def _support_probe_points(cut: CutoffSpec, per_axis: int = 7) -> np.ndarray:
    lo, hi = cut.support_bounds()
    axes = [np.linspace(lo[i], hi[i], per_axis) for i in range(len(lo))]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=-1)
    if cut.kind == "ball":
        keep = np.sum((pts - np.asarray(cut.center)) ** 2, axis=1) <= cut.radius ** 2
        pts = pts[keep]
    return pts


def make_slowed_spec(spec: DiffusionSpec, cut: CutoffSpec) -> DiffusionSpec:
    """Coefficients scaled by the cutoff: sigma -> theta*sigma, b -> theta^2*b;
    the returned spec lives on all of R^n (the dynamics freeze outside the
    cutoff's support, so no boundary is ever reached)."""
    if cut.n != spec.n:
        raise ValueError("cutoff dimension mismatch")
    for pt in _support_probe_points(cut):
        if not predicate_holds(spec.domain, pt):
            raise ValueError(f"cutoff support is not inside the domain (violated at {tuple(pt)})")
    theta = cut.theta_expr
    theta2 = simplify(_mul(theta, theta))
    sigma_hat = tuple(
        tuple(simplify(_mul(theta, spec.sigma[i][q])) for q in range(spec.d))
        for i in range(spec.n)
    )
    drift_hat = tuple(simplify(_mul(theta2, spec.drift[i])) for i in range(spec.n))
    lo, hi = cut.support_bounds()
    return DiffusionSpec(
        n=spec.n, d=spec.d, sigma=sigma_hat, drift=drift_hat,
        domain=TruePredicate(), collision_pairs=(),
        box=(tuple(float(v) for v in lo), tuple(float(v) for v in hi)),
    )


# ---------------------------------------------------------------------------
# Time change
# ---------------------------------------------------------------------------

@dataclass
class TimeChangeResult:
    s_grid: np.ndarray          # (m,)
    beta: np.ndarray            # (n_paths, m) inner clock t = beta(s)
    values: np.ndarray          # (n_paths, m, n) resampled states X_{beta(s)}
    stalled: np.ndarray         # (n_paths,) clock ended before the last s


def time_change(
    dense: DenseResult,
    cut,
    s_grid: Sequence[float],
    substep: float | None = None,
    bridge_seed: int | None = None,
) -> TimeChangeResult:
    """Reparametrize stored paths by the cutoff clock.

    The inner clock is marched in the new time s by the defining integral
    beta(s) = integral_0^s theta(Z_zeta)^2 dzeta with Z_s = X_{beta(s)}, so
    the integrand stays bounded even where theta vanishes (the clock simply
    freezes there).  Paths whose stored segment is exhausted before the
    clock reaches a requested s are frozen at the last sample and flagged.

    Positions between stored samples are interpolated linearly by default.
    A linear read under-disperses sub-cell moves; for distribution-accurate
    resampling pass ``bridge_seed`` to draw the in-cell values from the
    conditional (Brownian-bridge) law instead, with a unit diffusion scale
    per axis (exact for standard Brownian coordinates).
    """
    theta_fn = compile_numpy(cut.theta_expr)
    s_grid = np.asarray(s_grid, dtype=float)
    times = dense.times
    dt = float(times[1] - times[0])
    ds = dt if substep is None else float(substep)
    states = dense.states
    n_paths, n_nodes, dim = states.shape
    stop = dense.stop_index
    t_end = times[stop]
    if bridge_seed is not None and ds > dt * (1 + 1e-9):
        raise ValueError("bridge resampling needs substep <= the stored dt")

    rec_idx = np.rint(s_grid / ds).astype(int)
    if np.any(np.abs(rec_idx * ds - s_grid) > 1e-9 * np.maximum(1.0, np.abs(s_grid))):
        raise ValueError("s_grid values must be multiples of the marching substep")
    rec_of = {int(j): k for k, j in enumerate(rec_idx)}

    def cell_of(u: np.ndarray) -> np.ndarray:
        return np.minimum((u / dt + 1e-9).astype(np.int64), n_nodes - 2)

    def node_vals(idx: np.ndarray) -> np.ndarray:
        return np.take_along_axis(states, idx[:, None, None], axis=1)[:, 0]

    def positions_linear(beta: np.ndarray) -> np.ndarray:
        idx = np.minimum((beta / dt).astype(np.int64), n_nodes - 2)
        frac = np.clip(beta / dt - idx, 0.0, 1.0)
        lo = node_vals(idx)
        return lo + (node_vals(idx + 1) - lo) * frac[:, None]

    m = len(s_grid)
    beta_out = np.empty((n_paths, m))
    values = np.empty((n_paths, m, dim))
    stalled = np.zeros(n_paths, dtype=bool)
    ids = np.arange(n_paths, dtype=np.uint64)

    beta = np.zeros(n_paths)
    z = states[:, 0].copy()
    last = int(rec_idx.max())
    for j in range(last + 1):
        k = rec_of.get(j)
        if k is not None:
            beta_out[:, k] = beta
            values[:, k] = z
        if j == last:
            break
        th = theta_fn(z, beta)
        advance = th * th * ds
        proposed = beta + advance
        over = proposed > t_end + 1e-12
        stalled |= over & (advance > 1e-15)
        beta_new = np.minimum(proposed, t_end)
        if bridge_seed is None:
            z = positions_linear(beta_new)
        else:
            cell_old = cell_of(beta)
            cell_new = cell_of(beta_new)
            crossed = cell_new > cell_old
            right_t = times[cell_new + 1]
            right_x = node_vals(cell_new + 1)
            left_t = np.where(crossed, times[cell_new], beta)
            left_x = np.where(crossed[:, None], node_vals(cell_new), z)
            span = np.maximum(right_t - left_t, 1e-300)
            frac = np.clip((beta_new - left_t) / span, 0.0, 1.0)
            mean = left_x + (right_x - left_x) * frac[:, None]
            var = np.maximum((beta_new - left_t) * (right_t - beta_new) / span, 0.0)
            from .rng import normals as _normals

            xi = np.stack(
                [_normals(bridge_seed, ids, np.uint64(j * dim + c)) for c in range(dim)],
                axis=-1,
            )
            z = mean + np.sqrt(var)[:, None] * xi
        beta = beta_new
    return TimeChangeResult(s_grid=s_grid, beta=beta_out, values=values, stalled=stalled)


# ---------------------------------------------------------------------------
# Boundary-regularity probe
# ---------------------------------------------------------------------------

def x_regularity_probe(
    spec: DiffusionSpec,
    x_boundary: Sequence[float],
    delta: float,
    approach_points: Iterable[Sequence[float]],
    cfg: PathConfig,
    n_paths: int,
) -> list[dict]:
    """For each launch point w, estimate P_w[|X_tau - x| < delta and tau < delta].

    The trend toward 1 along the approach sequence is reported, not asserted.
    """
    xb = np.asarray(x_boundary, dtype=float)
    out = []
    probe_cfg = replace(cfg, horizon=float(delta))
    for k, w in enumerate(approach_points):
        res = simulate_paths(
            spec, None, w, 0.0, probe_cfg, n_paths, path_offset=k * n_paths
        )
        hit = (res.cause == CAUSE_EXIT) & (
            np.linalg.norm(res.state - xb[None, :], axis=1) < delta
        )
        p = float(np.mean(hit))
        se = float(np.std(hit.astype(float), ddof=1) / math.sqrt(n_paths)) if n_paths > 1 else 0.0
        out.append({"point": tuple(float(v) for v in w), "estimate": p, "std_error": se})
    return out


def write_path_csv(dense: DenseResult, path: int, fileobj) -> None:
    """One record per step: t, x1..xn, gamma, H."""
    dim = dense.states.shape[2]
    header = "t," + ",".join(f"x{i + 1}" for i in range(dim)) + ",gamma,H\n"
    fileobj.write(header)
    stop = int(dense.stop_index[path])
    for k in range(stop + 1):
        cols = [repr(float(dense.times[k]))]
        cols += [repr(float(v)) for v in dense.states[path, k]]
        cols.append(repr(float(math.exp(dense.log_gamma[path, k]))))
        cols.append(repr(float(dense.H[path, k])))
        fileobj.write(",".join(cols) + "\n")
