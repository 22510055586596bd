"""Differential-geometric objects of a diffusion: a = sigma*sigma^T, the
noise/drift vector fields, the generator and its formal dual.

All operators act symbolically on expression trees, so residual checks
downstream are exact up to floating-point evaluation.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .exprlang import (
    Const,
    Expr,
    Predicate,
    TruePredicate,
    _add,
    _mul,
    _sub,
    compile_numpy,
    diff,
    eval_expr,
    max_var_index,
    simplify,
    to_string,
    uses_time,
)

__all__ = [
    "DiffusionSpec",
    "VectorField",
    "make_U",
    "apply_G",
    "apply_G_dual",
    "check_generator_identity",
    "psd_spot_check",
]


@dataclass(frozen=True)
class DiffusionSpec:
    """Time-homogeneous Ito diffusion dX = sigma(X) dB + b(X) dt on a domain.

    ``sigma`` is an n x d matrix of expressions, ``drift`` an n-vector.
    ``collision_pairs`` lists (i, j) coordinate pairs (1-based) that the path
    engine guards against approaching within ``delta_c`` (singular drifts).
    ``box`` optionally bounds the domain for sampling-based diagnostics.
    """

    n: int
    d: int
    sigma: tuple[tuple[Expr, ...], ...]
    drift: tuple[Expr, ...]
    domain: Predicate = field(default_factory=TruePredicate)
    collision_pairs: tuple[tuple[int, int], ...] = ()
    box: tuple[tuple[float, ...], tuple[float, ...]] | None = None

    def __post_init__(self) -> None:
        if len(self.sigma) != self.n or any(len(row) != self.d for row in self.sigma):
            raise ValueError(f"sigma must be {self.n}x{self.d}")
        if len(self.drift) != self.n:
            raise ValueError(f"drift must have length {self.n}")
        for e in [c for row in self.sigma for c in row] + list(self.drift):
            if max_var_index(e) > self.n:
                raise ValueError(f"coefficient {to_string(e)} references x beyond n={self.n}")
            if uses_time(e):
                raise ValueError(f"coefficient {to_string(e)} must be time-homogeneous")
        for i, j in self.collision_pairs:
            if not (1 <= i <= self.n and 1 <= j <= self.n and i != j):
                raise ValueError(f"bad collision pair ({i}, {j})")

    def a_entry(self, i: int, j: int) -> Expr:
        """Symbolic a_{ij} = sum_q sigma_{iq} sigma_{jq} (0-based indices)."""
        acc: Expr = Const(0.0)
        for q in range(self.d):
            acc = _add(acc, _mul(self.sigma[i][q], self.sigma[j][q]))
        return simplify(acc)

    def a_matrix(self) -> tuple[tuple[Expr, ...], ...]:
        return tuple(tuple(self.a_entry(i, j) for j in range(self.n)) for i in range(self.n))

    def a_eval(self, x: Sequence[float]) -> np.ndarray:
        a = np.empty((self.n, self.n))
        for i in range(self.n):
            for j in range(i, self.n):
                a[i, j] = a[j, i] = eval_expr(self.a_entry(i, j), x)
        return a


@dataclass(frozen=True)
class VectorField:
    """First-order operator sum_i c_i(x) d/dx_i."""

    coeffs: tuple[Expr, ...]

    @property
    def n(self) -> int:
        return len(self.coeffs)

    def apply(self, f: Expr) -> Expr:
        acc: Expr = Const(0.0)
        for i, c in enumerate(self.coeffs, start=1):
            acc = _add(acc, _mul(c, diff(f, i)))
        return simplify(acc)

    def eval_at(self, x: Sequence[float], t: float = 0.0) -> np.ndarray:
        return np.array([eval_expr(c, x, t) for c in self.coeffs])

    def is_zero(self) -> bool:
        return all(c == Const(0.0) for c in (simplify(c) for c in self.coeffs))


def make_U(spec: DiffusionSpec, q: int) -> VectorField:
    """Noise field (q >= 1) or the Ito-corrected drift field (q = 0).

    For q >= 1 the coefficients are the q-th column of sigma.  For q = 0 they
    are b_i - (1/2) sum_q sum_j sigma_{jq} d(sigma_{iq})/dx_j.
    """
    if not 0 <= q <= spec.d:
        raise ValueError(f"q must be in 0..{spec.d}, got {q}")
    if q >= 1:
        return VectorField(tuple(simplify(spec.sigma[i][q - 1]) for i in range(spec.n)))
    coeffs = []
    for i in range(spec.n):
        corr: Expr = Const(0.0)
        for qq in range(spec.d):
            for j in range(spec.n):
                corr = _add(corr, _mul(spec.sigma[j][qq], diff(spec.sigma[i][qq], j + 1)))
        coeffs.append(simplify(_sub(spec.drift[i], _mul(Const(0.5), corr))))
    return VectorField(tuple(coeffs))


def apply_G(spec: DiffusionSpec, f: Expr) -> Expr:
    """Spatial generator: (1/2) sum_ij a_ij d_ij f + sum_i b_i d_i f."""
    acc: Expr = Const(0.0)
    for i in range(spec.n):
        di = diff(f, i + 1)
        for j in range(spec.n):
            acc = _add(acc, _mul(Const(0.5), _mul(spec.a_entry(i, j), diff(di, j + 1))))
        acc = _add(acc, _mul(spec.drift[i], di))
    return simplify(acc)


def apply_G_dual(spec: DiffusionSpec, f: Expr) -> Expr:
    """Formal dual: (1/2) sum_ij d_ij(a_ij f) - sum_i d_i(b_i f)."""
    acc: Expr = Const(0.0)
    for i in range(spec.n):
        for j in range(spec.n):
            term = _mul(spec.a_entry(i, j), f)
            acc = _add(acc, _mul(Const(0.5), diff(diff(term, i + 1), j + 1)))
        acc = _sub(acc, diff(_mul(spec.drift[i], f), i + 1))
    return simplify(acc)


def check_generator_identity(
    spec: DiffusionSpec,
    f: Expr,
    points: Iterable[Sequence[float]],
    t: float = 0.0,
) -> float:
    """Max over points of |G f - ((1/2) sum_q U_q(U_q f) + U_0 f)|.

    The identity holds symbolically, so the deviation is pure roundoff.
    """
    lhs = apply_G(spec, f)
    rhs: Expr = Const(0.0)
    for q in range(1, spec.d + 1):
        uq = make_U(spec, q)
        rhs = _add(rhs, _mul(Const(0.5), uq.apply(uq.apply(f))))
    rhs = _add(rhs, make_U(spec, 0).apply(f))
    residual = compile_numpy(simplify(_sub(lhs, rhs)))
    pts = np.atleast_2d(np.asarray(list(points), dtype=float))
    return float(np.max(np.abs(residual(pts, t))))


def psd_spot_check(
    spec: DiffusionSpec,
    points: Iterable[Sequence[float]],
    tol: float = -1e-10,
) -> float:
    """Smallest eigenvalue of a(x) over sampled points; warns when below tol.

    A violation is a configuration warning only: the user-provided sigma
    defines a = sigma*sigma^T, which is PSD in exact arithmetic.
    """
    worst = np.inf
    for x in points:
        eig = np.linalg.eigvalsh(spec.a_eval(x))
        worst = min(worst, float(eig[0]))
    if worst < tol:
        warnings.warn(f"a(x) has eigenvalue {worst:.3e} below {tol:.1e} at sampled points")
    return worst
