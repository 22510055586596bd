"""Monte Carlo estimators: stopped-expectation solvers for parabolic and
time-invariant boundary-value problems, survival probabilities, transition
density histograms and the conditioned drift.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .engine import CAUSE_HORIZON, CAUSE_MAX_STEPS, SimResult
from .exprlang import Const, Expr, compile_numpy, diff, eval_expr, max_var_index, uses_time
from .fields import DiffusionSpec
from .paths import PathConfig, simulate_paths

__all__ = [
    "ObservableSpec",
    "MCEstimate",
    "GridSpec",
    "DensityEstimate",
    "EstimatorError",
    "solve_parabolic",
    "solve_harmonic",
    "survival_probability",
    "transition_density",
    "h_transform_drift",
    "exit_time_moment",
    "field_solve_parabolic",
]

# running-mean stabilization test (divergence detection)
_STAB_CHECKPOINTS = 50
_STAB_WINDOW = 0.2      # monitor the trailing 80% of the path order
_STAB_TOL = 0.05


class EstimatorError(RuntimeError):
    pass


@dataclass(frozen=True)
class ObservableSpec:
    """Order-zero rate g (space only), source h (space-time) and boundary
    data psi, evaluated at the sampled exit state (which can overshoot the
    boundary slightly, so psi must make sense on a neighborhood)."""

    g: Expr = field(default_factory=lambda: Const(0.0))
    h: Expr = field(default_factory=lambda: Const(0.0))
    psi: Expr = field(default_factory=lambda: Const(0.0))
    weights: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if uses_time(self.g):
            raise ValueError("g must not depend on t")

    def validate_dim(self, n: int) -> None:
        for name in ("g", "h", "psi"):
            e = getattr(self, name)
            if max_var_index(e) > n:
                raise ValueError(f"{name} references x beyond dimension {n}")


@dataclass(frozen=True)
class MCEstimate:
    mean: float
    std_error: float
    n_paths: int
    n_censored_by_cap: int
    seed: int
    unreliable: bool = False
    divergence_suspected: bool = False
    stabilization_dev: float = 0.0


def _reduce(values: np.ndarray, seed: int, n_cap: int, antithetic: bool,
            **flags) -> MCEstimate:
    n = len(values)
    if antithetic:
        if n % 2:
            raise ValueError("antithetic estimation needs an even path count")
        pair_means = 0.5 * (values[0::2] + values[1::2])
        mean = float(np.mean(pair_means))
        se = float(np.std(pair_means, ddof=1) / math.sqrt(len(pair_means))) if len(pair_means) > 1 else 0.0
    else:
        mean = float(np.mean(values))
        se = float(np.std(values, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    if not math.isfinite(mean):
        raise EstimatorError("estimate is not finite")
    return MCEstimate(mean=mean, std_error=se, n_paths=n,
                      n_censored_by_cap=n_cap, seed=seed, **flags)


def _payoff(res: SimResult, obs: ObservableSpec) -> np.ndarray:
    psi_fn = compile_numpy(obs.psi)
    y = res.gamma * psi_fn(res.state, res.tau) + res.H
    bad = np.nonzero(~np.isfinite(y))[0]
    if bad.size:
        raise EstimatorError(f"non-finite sample (first at path index {int(bad[0])})")
    return y


def _stabilization(values: np.ndarray) -> tuple[bool, float]:
    """Cauchy stabilization of the running mean over the path order.

    Compares running means at checkpoints in the trailing window to the
    final mean; a relative excursion above the tolerance marks the
    estimator as non-stabilizing (divergence suspected).
    """
    n = len(values)
    if n < 100:
        return False, 0.0
    csum = np.cumsum(values)
    ks = np.unique(np.linspace(int(n * _STAB_WINDOW), n, _STAB_CHECKPOINTS).astype(int))
    ks = ks[ks >= 1]
    running = csum[ks - 1] / ks
    final = csum[-1] / n
    scale = max(abs(final), 1e-300)
    dev = float(np.max(np.abs(running - final)) / scale)
    return dev > _STAB_TOL, dev


def solve_parabolic(
    spec: DiffusionSpec,
    obs: ObservableSpec,
    x: Sequence[float],
    t: float,
    cfg: PathConfig,
    n_paths: int,
    path_offset: int = 0,
    antithetic: bool = False,
) -> MCEstimate:
    """Estimate E[gamma_{t,tau} psi(X_tau, tau) + H_{t,tau}] launched at (x, t)
    with tau the earlier of the boundary exit and the horizon T."""
    if cfg.horizon is None:
        raise ValueError("parabolic solve needs cfg.horizon (the terminal time T)")
    obs.validate_dim(spec.n)
    res = simulate_paths(spec, obs, x, t, cfg, n_paths,
                         path_offset=path_offset, antithetic=antithetic)
    y = _payoff(res, obs)
    n_cap = int(np.sum(res.cause == CAUSE_MAX_STEPS))
    if n_cap == n_paths:
        raise EstimatorError("all paths were censored by the step cap")
    return _reduce(y, cfg.seed, n_cap, antithetic)


def solve_harmonic(
    spec: DiffusionSpec,
    obs: ObservableSpec,
    x: Sequence[float],
    cfg: PathConfig,
    n_paths: int,
    criterion: str | None = None,
    path_offset: int = 0,
    antithetic: bool = False,
) -> MCEstimate:
    """Estimate E[gamma_tau psi(X_tau) + H_tau] with no time horizon.

    The step cap stands in for localization; exhausting it on more than 1%
    of paths flags the estimate unreliable.  The result also carries a
    running-mean stabilization verdict: with sup g above the generator's
    spectral threshold the expectation is infinite and the running mean
    keeps drifting, which this test picks up.

    ``criterion`` records which integrability assumption the caller asserts
    ('a': sup g < 0, 'b': g = h = 0, 'c': user-checked moment condition).
    """
    obs.validate_dim(spec.n)
    if cfg.horizon is not None:
        cfg = replace(cfg, horizon=None)
    _warn_on_positive_rate(spec, obs, criterion)
    res = simulate_paths(spec, obs, x, 0.0, cfg, n_paths,
                         path_offset=path_offset, antithetic=antithetic)
    y = _payoff(res, obs)
    n_cap = int(np.sum(res.cause == CAUSE_MAX_STEPS))
    if n_cap == n_paths:
        raise EstimatorError("all paths were censored by the step cap")
    unreliable = n_cap > 0.01 * n_paths
    if unreliable:
        warnings.warn(f"step cap exhausted on {n_cap}/{n_paths} paths; estimate unreliable")
    diverged, dev = _stabilization(y)
    return _reduce(y, cfg.seed, n_cap, antithetic, unreliable=unreliable,
                   divergence_suspected=diverged, stabilization_dev=dev)


def _warn_on_positive_rate(spec: DiffusionSpec, obs: ObservableSpec,
                           criterion: str | None) -> None:
    if spec.box is None:
        return
    lo, hi = np.asarray(spec.box[0]), np.asarray(spec.box[1])
    rng = np.random.default_rng(0)
    pts = lo + (hi - lo) * rng.random((512, spec.n))
    g_fn = compile_numpy(obs.g)
    with np.errstate(all="ignore"):
        vals = g_fn(pts, 0.0)
    vals = vals[np.isfinite(vals)]
    if vals.size == 0:
        return
    c_sup = float(np.max(vals))
    c_sup += 0.1 * abs(c_sup)
    if c_sup >= 0.0 and criterion != "c" and not (criterion == "b" and c_sup == 0.0):
        warnings.warn(
            f"sup g is approximately {c_sup:.4g} >= 0 and criterion (c) was not "
            "asserted; the stopped expectation may fail to be integrable"
        )


def survival_probability(
    spec: DiffusionSpec,
    x: Sequence[float],
    t: float,
    T: float,
    cfg: PathConfig,
    n_paths: int,
    path_offset: int = 0,
) -> MCEstimate:
    """Fraction of paths launched at (x, t) that stay in the domain past T."""
    cfg = replace(cfg, horizon=float(T))
    res = simulate_paths(spec, None, x, t, cfg, n_paths, path_offset=path_offset)
    y = (res.cause == CAUSE_HORIZON).astype(float)
    return _reduce(y, cfg.seed, int(np.sum(res.cause == CAUSE_MAX_STEPS)), False)


@dataclass(frozen=True)
class GridSpec:
    """Axis-aligned box partition used for density histograms."""

    lows: tuple[float, ...]
    highs: tuple[float, ...]
    shape: tuple[int, ...]

    def edges(self) -> list[np.ndarray]:
        return [np.linspace(lo, hi, m + 1)
                for lo, hi, m in zip(self.lows, self.highs, self.shape)]

    def centers(self) -> list[np.ndarray]:
        return [0.5 * (e[:-1] + e[1:]) for e in self.edges()]

    def cell_volume(self) -> float:
        return float(np.prod([(hi - lo) / m
                              for lo, hi, m in zip(self.lows, self.highs, self.shape)]))


@dataclass
class DensityEstimate:
    """Sub-probability histogram per time slice; mass deficits are killed
    paths.  ``masses[j]`` sums to the surviving fraction at times[j]."""

    grid: GridSpec
    times: tuple[float, ...]
    masses: np.ndarray          # (n_slices, *shape)
    n_launched: int
    seed: int
    bandwidth: tuple[float, ...] | None = None

    def slice_mass(self, j: int) -> float:
        return float(self.masses[j].sum())

    def slice_mass_std_error(self, j: int) -> float:
        p = self.slice_mass(j)
        return math.sqrt(max(p * (1.0 - p), 0.0) / self.n_launched)

    def density_values(self, j: int) -> np.ndarray:
        return self.masses[j] / self.grid.cell_volume()

    def smoothed(self, j: int, positions: np.ndarray | None = None) -> np.ndarray:
        """Gaussian-kernel smoothing with Silverman bandwidth per axis.

        ``positions`` (the surviving samples of slice j) sets the bandwidth;
        when omitted a histogram-based spread estimate is used.
        """
        from scipy.ndimage import gaussian_filter

        n_surv = max(self.masses[j].sum() * self.n_launched, 2.0)
        widths = [(hi - lo) / m
                  for lo, hi, m in zip(self.grid.lows, self.grid.highs, self.grid.shape)]
        if positions is not None:
            sds = np.std(positions, axis=0, ddof=1)
        else:
            sds = []
            for ax, centers in enumerate(self.grid.centers()):
                marg = self.masses[j].sum(axis=tuple(i for i in range(len(self.grid.shape))
                                                     if i != ax))
                tot = marg.sum()
                if tot <= 0:
                    sds.append(widths[ax])
                    continue
                mu = float(np.sum(centers * marg) / tot)
                sds.append(math.sqrt(max(np.sum((centers - mu) ** 2 * marg) / tot, 0.0)))
            sds = np.asarray(sds)
        h = 1.06 * np.asarray(sds) * n_surv ** (-0.2)
        sigmas = [max(hb / w, 1e-12) for hb, w in zip(h, widths)]
        return gaussian_filter(self.masses[j], sigma=sigmas, mode="constant")


def transition_density(
    spec: DiffusionSpec,
    w: Sequence[float],
    times: Sequence[float],
    grid: GridSpec,
    cfg: PathConfig,
    n_paths: int,
    path_offset: int = 0,
) -> DensityEstimate:
    """Histogram of surviving-path positions at the requested time slices,
    normalized by the number of launched paths."""
    times = sorted(float(v) for v in times)
    cfg = replace(cfg, horizon=times[-1])
    res = simulate_paths(spec, None, w, 0.0, cfg, n_paths,
                         path_offset=path_offset, checkpoint_times=times)
    edges = grid.edges()
    masses = np.zeros((len(times),) + tuple(grid.shape))
    for j in range(len(times)):
        alive = res.cp_alive[j]
        if np.any(alive):
            hist, _ = np.histogramdd(res.cp_state[j][alive], bins=edges)
            masses[j] = hist / n_paths
    return DensityEstimate(grid=grid, times=tuple(times), masses=masses,
                           n_launched=n_paths, seed=cfg.seed)


def h_transform_drift(
    spec: DiffusionSpec,
    f: Expr,
    x: Sequence[float],
    t: float = 0.0,
) -> np.ndarray:
    """Drift of the process conditioned via the positive space-time harmonic
    function f: a(x) grad f / f + b(x), evaluated at (x, t)."""
    fval = eval_expr(f, x, t)
    if fval == 0.0:
        raise EstimatorError("h-transform undefined where f = 0")
    grad = np.array([eval_expr(diff(f, i + 1), x, t) for i in range(spec.n)])
    a = spec.a_eval(x)
    b = np.array([eval_expr(bi, x, t) for bi in spec.drift])
    return a @ grad / fval + b


def exit_time_moment(
    spec: DiffusionSpec,
    x: Sequence[float],
    k: int,
    cfg: PathConfig,
    n_paths: int,
    path_offset: int = 0,
) -> MCEstimate:
    """Plain Monte Carlo estimate of E[tau^k] for the open-ended exit time."""
    cfg = replace(cfg, horizon=None)
    res = simulate_paths(spec, None, x, 0.0, cfg, n_paths, path_offset=path_offset)
    n_cap = int(np.sum(res.cause == CAUSE_MAX_STEPS))
    if n_cap:
        warnings.warn(f"{n_cap} paths hit the step cap before exiting")
    return _reduce(res.tau ** k, cfg.seed, n_cap, False, unreliable=n_cap > 0.01 * n_paths)


def field_solve_parabolic(
    spec: DiffusionSpec,
    obs: ObservableSpec,
    xs: np.ndarray,
    ts: np.ndarray,
    cfg: PathConfig,
    n_paths: int,
    mask: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Solve at every (xs[i], ts[i]) launch point with disjoint path-index
    blocks (node estimates are therefore independent).  Masked-out nodes
    get value 0 with std_error 0."""
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    ts = np.asarray(ts, dtype=float)
    m = len(xs)
    values = np.zeros(m)
    errors = np.zeros(m)
    for i in range(m):
        if mask is not None and not mask[i]:
            continue
        est = solve_parabolic(spec, obs, xs[i], float(ts[i]), cfg, n_paths,
                              path_offset=i * n_paths)
        values[i] = est.mean
        errors[i] = est.std_error
    return values, errors
