"""Marked-point diffusions of Loewner type, conformal-weight observables and
the characterizing second-order operator with singular coefficients.

Only the SDE view is implemented: the driving coordinate x1 diffuses with
variance kappa while each marked coordinate x_i follows dx_i = 2 dt/(x_i - x1).
Map-derivative weight factors are accumulated through the exponential
identity prod_i g'(x_i)^{D_i} = exp(-integral sum_i 2 D_i/(X^i - X^1)^2 ds),
never by differentiating a numerically solved map.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
import numpy as np

from .estimators import ObservableSpec
from .exprlang import (
    And,
    Comparison,
    Const,
    Expr,
    Predicate,
    TruePredicate,
    Unary,
    Var,
    _add,
    _div,
    _mul,
    _sub,
    compile_numpy,
    simplify,
)
from .fields import DiffusionSpec
from .hormander import RankReport, generate_basis, rank_at
from .verify import ResidualReport

__all__ = ["SLEConfig", "sle_spec", "covariant_observable", "bpz_residual",
           "sle_hormander_report"]


@dataclass(frozen=True)
class SLEConfig:
    """kappa >= 0; n marked coordinates (x1 drives); weights for x2..xn."""

    kappa: float
    x0: tuple[float, ...]
    weights: tuple[float, ...] = ()
    b1: Expr = field(default_factory=lambda: Const(0.0))
    delta_c: float = 1e-4

    def __post_init__(self) -> None:
        if self.kappa < 0:
            raise ValueError("kappa must be >= 0")
        n = len(self.x0)
        if n < 1:
            raise ValueError("need at least the driving coordinate")
        if len(set(self.x0)) != n:
            raise ValueError("launch coordinates must be pairwise distinct")
        if self.weights and len(self.weights) != n - 1:
            raise ValueError("need one weight per marked coordinate x2..xn")

    @property
    def n(self) -> int:
        return len(self.x0)

    def weight(self, i: int) -> float:
        """Conformal weight at x_i (i >= 2)."""
        return self.weights[i - 2] if self.weights else 0.0


def _gap(i: int) -> Expr:
    return _sub(Var(i), Var(1))


def _require_pairwise_distinct(x) -> None:
    x = np.asarray(x, dtype=float)
    n = len(x)
    for i in range(n):
        for j in range(i + 1, n):
            if x[i] == x[j]:
                raise ValueError(f"collision point supplied (x{i + 1} == x{j + 1})")


def sle_spec(cfg: SLEConfig) -> DiffusionSpec:
    """n-dimensional, single-noise diffusion with sigma = (sqrt(kappa),0,...)
    and drift (b1, 2/(x2-x1), ..., 2/(xn-x1)).

    The domain keeps every marked coordinate at distance > delta_c from the
    driving one; the same pairs are registered with the engine's collision
    guard, so paths stop with the distinct 'collision' cause.
    """
    n = cfg.n
    sigma = tuple(
        (Const(math.sqrt(cfg.kappa)),) if i == 0 else (Const(0.0),)
        for i in range(n)
    )
    drift = (simplify(cfg.b1),) + tuple(
        _div(Const(2.0), _gap(i)) for i in range(2, n + 1)
    )
    if n == 1:
        domain: Predicate = TruePredicate()
        pairs: tuple[tuple[int, int], ...] = ()
    else:
        comparisons = tuple(
            Comparison(">", Unary("abs", _gap(i)), Const(cfg.delta_c))
            for i in range(2, n + 1)
        )
        domain = comparisons[0] if len(comparisons) == 1 else And(comparisons)
        pairs = tuple((i, 1) for i in range(2, n + 1))
    return DiffusionSpec(n=n, d=1, sigma=sigma, drift=drift, domain=domain,
                         collision_pairs=pairs)


def covariant_observable(cfg: SLEConfig, f: Expr) -> ObservableSpec:
    """Weight accumulation as an order-zero rate: g = -sum_i 2 D_i/(x_i-x1)^2,
    h = 0, so gamma_t equals the product of map-derivative factors and
    gamma_t f(X_t) is the covariant observable."""
    g: Expr = Const(0.0)
    for i in range(2, cfg.n + 1):
        di = cfg.weight(i)
        if di == 0.0:
            continue
        gap2 = _mul(_gap(i), _gap(i))
        g = _sub(g, _div(Const(2.0 * di), gap2))
    return ObservableSpec(g=simplify(g), h=Const(0.0), psi=simplify(f),
                          weights=tuple(cfg.weight(i) for i in range(2, cfg.n + 1)))


def bpz_operator(cfg: SLEConfig, f: Expr) -> Expr:
    """(kappa/2) d_11 f + sum_i 2/(x_i-x1) d_i f + b1 d_1 f
    - sum_i 2 D_i/(x_i-x1)^2 f, simplified."""
    from .exprlang import diff

    out = _mul(Const(cfg.kappa / 2.0), diff(diff(f, 1), 1))
    out = _add(out, _mul(cfg.b1, diff(f, 1)))
    for i in range(2, cfg.n + 1):
        out = _add(out, _mul(_div(Const(2.0), _gap(i)), diff(f, i)))
        di = cfg.weight(i)
        if di != 0.0:
            out = _sub(out, _mul(_div(Const(2.0 * di), _mul(_gap(i), _gap(i))), f))
    return simplify(out)


def bpz_residual(
    cfg: SLEConfig,
    f: Expr,
    points,
    tol: float = 1e-10,
) -> ResidualReport:
    """max |L f| over non-collision points for the weighted operator L."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    for x in pts:
        _require_pairwise_distinct(x)
    fn = compile_numpy(bpz_operator(cfg, f))
    vals = fn(pts, 0.0)
    worst = float(np.max(np.abs(vals)))
    return ResidualReport(mode="strong-symbolic", value=worst, tolerance=tol,
                          passed=worst <= tol)


def sle_hormander_report(
    cfg: SLEConfig,
    points,
    depth: int,
    tol: float = 1e-9,
) -> list[RankReport]:
    spec = sle_spec(cfg)
    basis = generate_basis(spec, depth)
    reports = []
    for x in np.atleast_2d(np.asarray(points, dtype=float)):
        _require_pairwise_distinct(x)
        reports.append(rank_at(basis, x, tol=tol))
    return reports
