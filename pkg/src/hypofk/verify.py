"""Closing the loop between simulation and the PDEs: strong and weak
residuals, martingale drift tests, two-sample distribution tests, and the
closed-form library for Brownian motion on the unit interval.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np
from scipy.stats import norm

from .estimators import ObservableSpec
from .exprlang import (
    BumpExp,
    Const,
    Expr,
    TimeVar,
    Var,
    _add,
    _mul,
    _sub,
    compile_numpy,
    diff,
    simplify,
)
from .fields import DiffusionSpec, apply_G, apply_G_dual
from .paths import PathConfig, simulate_paths

__all__ = [
    "ResidualReport",
    "DriftTestReport",
    "GriddedField",
    "VerifyError",
    "bump_space",
    "bump_space_time",
    "strong_residual",
    "grid_residual",
    "weak_residual",
    "duality_gap",
    "martingale_drift_test",
    "ks_two_sample",
    "oracle_interval_bm",
]


class VerifyError(RuntimeError):
    pass


@dataclass(frozen=True)
class ResidualReport:
    mode: str  # strong-symbolic | strong-grid | weak
    value: float  # max |residual| (strong) or the integral (weak)
    tolerance: float
    passed: bool
    mc_error: float = 0.0
    quad_error: float = 0.0


@dataclass(frozen=True)
class DriftTestReport:
    probe_pairs: tuple[tuple[float, float], ...]
    mean_increments: tuple[float, ...]
    std_errors: tuple[float, ...]
    z_scores: tuple[float, ...]
    n_alive: tuple[int, ...]
    confidence: float
    quantile: float
    passed: bool


# ---------------------------------------------------------------------------
# Smooth compactly-supported test functions
# ---------------------------------------------------------------------------

def _bump1(u: Expr) -> Expr:
    """exp(-1/(1-u^2)) on |u| < 1, zero outside; C^infinity."""
    return BumpExp(0, _sub(Const(1.0), _mul(u, u)))


def bump_space(centers: Sequence[float], halfwidths: Sequence[float]) -> Expr:
    phi: Expr = Const(1.0)
    for i, (c, w) in enumerate(zip(centers, halfwidths), start=1):
        u = _mul(Const(1.0 / w), _sub(Var(i), Const(c)))
        phi = _mul(phi, _bump1(u))
    return simplify(phi)


def bump_space_time(
    centers: Sequence[float],
    halfwidths: Sequence[float],
    t_center: float,
    t_halfwidth: float,
) -> Expr:
    ut = _mul(Const(1.0 / t_halfwidth), _sub(TimeVar(), Const(t_center)))
    return simplify(_mul(bump_space(centers, halfwidths), _bump1(ut)))


# ---------------------------------------------------------------------------
# Strong residuals
# ---------------------------------------------------------------------------

def strong_residual(
    spec: DiffusionSpec,
    obs: ObservableSpec,
    f: Expr,
    xs,
    ts=None,
    tol: float = 1e-12,
) -> ResidualReport:
    """max |G f + d_t f + g f + h| over the points, evaluated symbolically."""
    residual = simplify(
        _add(
            _add(apply_G(spec, f), diff(f, "t")),
            _add(_mul(obs.g, f), obs.h),
        )
    )
    fn = compile_numpy(residual)
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    ts = np.zeros(len(xs)) if ts is None else np.asarray(ts, dtype=float)
    vals = fn(xs, ts)
    worst = float(np.max(np.abs(vals)))
    return ResidualReport(mode="strong-symbolic", value=worst, tolerance=tol,
                          passed=worst <= tol)


@dataclass(frozen=True)
class GriddedField:
    """Values (and optional Monte Carlo standard errors) on a tensor grid;
    the last axis is time."""

    axes: tuple[np.ndarray, ...]      # spatial axes then the time axis
    values: np.ndarray
    std_errors: np.ndarray | None = None

    def __post_init__(self) -> None:
        expect = tuple(len(a) for a in self.axes)
        if self.values.shape != expect:
            raise ValueError(f"values shape {self.values.shape} != grid {expect}")

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        grids = np.meshgrid(*self.axes, indexing="ij")
        pts = np.stack([m.ravel() for m in grids[:-1]], axis=-1)
        return pts, grids[-1].ravel()


def grid_residual(
    spec: DiffusionSpec,
    obs: ObservableSpec,
    fld: GriddedField,
    tol: float,
) -> ResidualReport:
    """Finite-difference residual of G f + d_t f + g f + h for a gridded f;
    the maximum is taken over nodes two layers away from every grid edge."""
    n = spec.n
    if len(fld.axes) != n + 1:
        raise ValueError("field must have n spatial axes plus time")
    f = fld.values
    spacing = [ax[1] - ax[0] for ax in fld.axes]
    first = [np.gradient(f, sp, axis=i, edge_order=2) for i, sp in enumerate(spacing)]
    pts, tv = fld.mesh()
    shape = f.shape

    def at_nodes(e: Expr) -> np.ndarray:
        return compile_numpy(e)(pts, tv).reshape(shape)

    res = first[-1].copy()  # d_t f
    for i in range(n):
        res += at_nodes(spec.drift[i]) * first[i]
        for j in range(n):
            d2 = np.gradient(first[i], spacing[j], axis=j, edge_order=2)
            res += 0.5 * at_nodes(spec.a_entry(i, j)) * d2
    res += at_nodes(obs.g) * f + at_nodes(obs.h)
    interior = tuple(slice(2, -2) for _ in shape)
    worst = float(np.max(np.abs(res[interior])))
    return ResidualReport(mode="strong-grid", value=worst, tolerance=tol,
                          passed=worst <= tol)


# ---------------------------------------------------------------------------
# Weak residual (Simpson quadrature against smooth bumps)
# ---------------------------------------------------------------------------

def _simpson_weights(m: int, h: float) -> np.ndarray:
    if m < 3 or m % 2 == 0:
        raise ValueError("Simpson quadrature needs an odd node count >= 3")
    w = np.ones(m)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w * (h / 3.0)


def _tensor_weights(axes: Sequence[np.ndarray]) -> np.ndarray:
    w = None
    for ax in axes:
        wa = _simpson_weights(len(ax), ax[1] - ax[0])
        w = wa if w is None else np.multiply.outer(w, wa)
    return w


def _weak_integral(spec, obs, fld: GriddedField, phi: Expr,
                   stride: int = 1) -> tuple[float, float]:
    axes = [ax[::stride] for ax in fld.axes]
    vals = fld.values[tuple(slice(None, None, stride) for _ in fld.axes)]
    errs = (fld.std_errors[tuple(slice(None, None, stride) for _ in fld.axes)]
            if fld.std_errors is not None else None)
    grids = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in grids[:-1]], axis=-1)
    tv = grids[-1].ravel()
    coef_expr = simplify(
        _add(_sub(apply_G_dual(spec, phi), diff(phi, "t")), _mul(obs.g, phi))
    )
    coef = compile_numpy(coef_expr)(pts, tv).reshape(vals.shape)
    phiv = compile_numpy(phi)(pts, tv).reshape(vals.shape)
    hv = compile_numpy(obs.h)(pts, tv).reshape(vals.shape)
    w = _tensor_weights(axes)
    integral = float(np.sum(w * (vals * coef + hv * phiv)))
    mc = float(np.sqrt(np.sum((w * coef * errs) ** 2))) if errs is not None else 0.0
    return integral, mc


def weak_residual(
    spec: DiffusionSpec,
    obs: ObservableSpec,
    fld: GriddedField,
    phi: Expr,
    tolerance: float | None = None,
    tol_factor: float = 3.0,
) -> ResidualReport:
    """Quadrature of integral f (G* - d_t + g) phi + h phi over the grid.

    phi must vanish identically on the grid boundary (compact support inside
    the grid).  When no explicit tolerance is given, the verdict compares
    against tol_factor * (propagated MC error + Richardson quadrature
    estimate); the latter needs node counts congruent to 1 mod 4.
    """
    phiv_fn = compile_numpy(phi)
    pts, tv = fld.mesh()
    phiv = phiv_fn(pts, tv).reshape(fld.values.shape)
    for axis in range(phiv.ndim):
        for edge in (0, -1):
            sl = [slice(None)] * phiv.ndim
            sl[axis] = edge
            if float(np.max(np.abs(phiv[tuple(sl)]))) != 0.0:
                raise VerifyError("test function leaks outside the quadrature grid")

    integral, mc = _weak_integral(spec, obs, fld, phi, stride=1)
    quad = 0.0
    if tolerance is None:
        if any((len(ax) - 1) % 8 for ax in fld.axes):
            raise VerifyError(
                "budget mode needs node counts = 8k+1 per axis for grid refinement"
            )
        # plain grid-difference ladder, not the Richardson /15 estimate: the
        # second difference keeps the bound honest outside the asymptotic
        # regime (where coarse values can agree by accident)
        coarse2, _ = _weak_integral(spec, obs, fld, phi, stride=2)
        coarse4, _ = _weak_integral(spec, obs, fld, phi, stride=4)
        quad = abs(integral - coarse2) + abs(coarse2 - coarse4)
        budget = tol_factor * (mc + quad)
    else:
        budget = tolerance
    return ResidualReport(mode="weak", value=integral, tolerance=budget,
                          passed=abs(integral) <= budget, mc_error=mc, quad_error=quad)


def duality_gap(
    spec: DiffusionSpec,
    phi: Expr,
    psi: Expr,
    lows: Sequence[float],
    highs: Sequence[float],
    nodes: int = 129,
) -> float:
    """|integral (G phi) psi - integral phi (G* psi)| over a box, by Simpson
    quadrature; both integrands are compactly supported inside the box."""
    axes = [np.linspace(lo, hi, nodes) for lo, hi in zip(lows, highs)]
    grids = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in grids], axis=-1)
    w = _tensor_weights(axes).ravel()
    lhs = compile_numpy(simplify(_mul(apply_G(spec, phi), psi)))(pts, 0.0)
    rhs = compile_numpy(simplify(_mul(phi, apply_G_dual(spec, psi))))(pts, 0.0)
    return float(abs(np.sum(w * lhs) - np.sum(w * rhs)))


# ---------------------------------------------------------------------------
# Martingale drift test
# ---------------------------------------------------------------------------

def martingale_drift_test(
    spec: DiffusionSpec,
    obs: ObservableSpec,
    f: Expr,
    x0: Sequence[float],
    t0: float,
    probe_times: Sequence[float],
    cfg: PathConfig,
    n_paths: int,
    confidence: float = 0.99,
    path_offset: int = 0,
) -> DriftTestReport:
    """First-moment martingale test of M_t = gamma_t f(X_t, t) + H_t.

    Stopped paths contribute their value at the stopping time (the stopped
    process is the martingale being tested), so increments have exact mean
    zero under the null up to discretization error.  Probes are consecutive
    increments over (t0, probe_times...).  Fails when any |z| exceeds the
    two-sided normal quantile at the stated confidence.
    """
    probe_times = [float(v) for v in probe_times]
    if cfg.horizon is None or cfg.horizon < probe_times[-1]:
        from dataclasses import replace

        cfg = replace(cfg, horizon=probe_times[-1])
    res = simulate_paths(spec, obs, x0, t0, cfg, n_paths,
                         path_offset=path_offset, checkpoint_times=probe_times)
    f_fn = compile_numpy(f)
    m_stopped = res.gamma * f_fn(res.state, res.tau) + res.H

    m_at = [np.full(n_paths, float(f_fn(np.asarray(x0)[None, :], t0)[0]))]
    n_alive = []
    for j, tj in enumerate(probe_times):
        alive = res.cp_alive[j]
        mj = np.where(
            alive,
            np.exp(res.cp_log_gamma[j]) * f_fn(res.cp_state[j], tj) + res.cp_H[j],
            m_stopped,
        )
        m_at.append(mj)
        n_alive.append(int(np.sum(alive)))
        if n_alive[-1] < 100:
            raise VerifyError(f"only {n_alive[-1]} survivors at probe t={tj}")

    pairs, means, ses, zs = [], [], [], []
    times_all = [t0] + probe_times
    for j in range(len(probe_times)):
        inc = m_at[j + 1] - m_at[j]
        mu = float(np.mean(inc))
        se = float(np.std(inc, ddof=1) / math.sqrt(n_paths))
        pairs.append((times_all[j], times_all[j + 1]))
        means.append(mu)
        ses.append(se)
        zs.append(mu / se if se > 0 else 0.0)
    q = float(norm.ppf(0.5 + confidence / 2.0))
    passed = all(abs(z) < q for z in zs)
    return DriftTestReport(
        probe_pairs=tuple(pairs), mean_increments=tuple(means),
        std_errors=tuple(ses), z_scores=tuple(zs), n_alive=tuple(n_alive),
        confidence=confidence, quantile=q, passed=passed,
    )


# ---------------------------------------------------------------------------
# Two-sample Kolmogorov-Smirnov
# ---------------------------------------------------------------------------

def ks_two_sample(a: np.ndarray, b: np.ndarray) -> tuple[float, float]:
    """Classic two-sample KS statistic with the asymptotic p-value
    (Kolmogorov distribution with the small-sample scale correction).
    p-values are floored at 1e-16."""
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    n, m = len(a), len(b)
    if n < 50 or m < 50:
        raise VerifyError("ks_two_sample needs at least 50 samples per side")
    allv = np.concatenate([a, b])
    cdf_a = np.searchsorted(a, allv, side="right") / n
    cdf_b = np.searchsorted(b, allv, side="right") / m
    d = float(np.max(np.abs(cdf_a - cdf_b)))
    if d == 0.0:
        return 0.0, 1.0
    en = math.sqrt(n * m / (n + m))
    lam = (en + 0.12 + 0.11 / en) * d
    terms = [2.0 * (-1.0) ** (j - 1) * math.exp(-2.0 * j * j * lam * lam)
             for j in range(1, 101)]
    p = max(min(float(np.sum(terms)), 1.0), 1e-16)
    return d, p


# ---------------------------------------------------------------------------
# Closed forms for Brownian motion on (-1, 1)
# ---------------------------------------------------------------------------

_PI2_OVER_8 = math.pi ** 2 / 8.0


def _sech_series_coeffs(kmax: int) -> list[Fraction]:
    """Taylor coefficients a_{2k} of 1/cosh at 0, exact rationals."""
    a = [Fraction(1)]
    for k in range(1, kmax + 1):
        s = Fraction(0)
        for j in range(k):
            s += a[j] / math.factorial(2 * (k - j))
        a.append(-s)
    return a


def oracle_interval_bm(kind: str, **params) -> float:
    """Closed-form references for standard Brownian motion exiting (-1, 1).

    kinds:
      laplace(s, x=0):   E_x[e^{-s tau}]
      fs(s, x=0):        the bounded solution of the resolvent problem
      moment(k):         E_0[tau^k]
      expC(C):           E_0[e^{C tau}] (+inf at and above pi^2/8)
      survival(t, x=0):  P_x[tau > t] by the eigenfunction series
    """
    if kind == "laplace":
        s = float(params["s"])
        x = float(params.get("x", 0.0))
        return math.cosh(x * math.sqrt(2 * s)) / math.cosh(math.sqrt(2 * s))
    if kind == "fs":
        s = float(params["s"])
        x = float(params.get("x", 0.0))
        return (1.0 - math.cosh(x * math.sqrt(2 * s)) / math.cosh(math.sqrt(2 * s))) / s
    if kind == "moment":
        k = int(params["k"])
        a = _sech_series_coeffs(k)
        return float(Fraction((-1) ** k * math.factorial(k) * 2 ** k) * a[k])
    if kind == "expC":
        c = float(params["C"])
        if c >= _PI2_OVER_8:
            return math.inf
        if c == 0.0:
            return 1.0
        if c < 0.0:
            return 1.0 / math.cosh(math.sqrt(-2.0 * c))
        return 1.0 / math.cos(math.sqrt(2.0 * c))
    if kind == "survival":
        t = float(params["t"])
        x = float(params.get("x", 0.0))
        if t <= 0.0:
            return 1.0
        total = 0.0
        k = 1
        while k < 4001:
            lam = k * k * _PI2_OVER_8
            term = (4.0 / (k * math.pi)) * (-1.0) ** ((k - 1) // 2) \
                * math.cos(k * math.pi * x / 2.0) * math.exp(-lam * t)
            total += term
            if abs(term) < 1e-14 and k > 3:
                break
            k += 2
        return total
    raise ValueError(f"unknown oracle kind {kind!r}")
