"""Bracket-generation and numerical rank checks for the spanning condition.

The checker decides, at given points, whether the Lie algebra generated by
the noise fields U_1..U_d together with the brackets [U_q, U_0] spans R^n.
A positive answer at a finite depth is conclusive; a negative one only means
the cap was reached (the span can still grow at higher depth).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .exprlang import simplify, _add, _sub, _mul, Const, Expr, diff
from .fields import DiffusionSpec, VectorField, make_U

__all__ = ["lie_bracket", "BracketBasis", "generate_basis", "rank_at", "RankReport"]

DEFAULT_TOL = 1e-9


def lie_bracket(v: VectorField, w: VectorField) -> VectorField:
    """[V, W] as a vector field: component i is sum_j (v_j d_j w_i - w_j d_j v_i)."""
    if v.n != w.n:
        raise ValueError(f"dimension mismatch: {v.n} vs {w.n}")
    coeffs = []
    for i in range(v.n):
        acc: Expr = Const(0.0)
        for j in range(v.n):
            acc = _add(acc, _mul(v.coeffs[j], diff(w.coeffs[i], j + 1)))
            acc = _sub(acc, _mul(w.coeffs[j], diff(v.coeffs[i], j + 1)))
        coeffs.append(simplify(acc))
    return VectorField(tuple(coeffs))


@dataclass(frozen=True)
class BracketBasis:
    """Generated fields with their derivation words, duplicate-free."""

    depth: int
    entries: tuple[tuple[VectorField, str], ...]

    @property
    def fields(self) -> tuple[VectorField, ...]:
        return tuple(f for f, _ in self.entries)


def _key(f: VectorField) -> str:
    return repr(f.coeffs)


def generate_basis(spec: DiffusionSpec, depth: int) -> BracketBasis:
    """Seed with {U_q} and {[U_q, U_0]}, then close under brackets up to depth.

    Each generation brackets the newest fields against everything collected
    so far; results are simplified and deduplicated structurally.  Zero
    fields are dropped.
    """
    if depth < 0:
        raise ValueError("depth must be >= 0")
    u0 = make_U(spec, 0)
    entries: list[tuple[VectorField, str]] = []
    seen: set[str] = set()

    def push(f: VectorField, word: str) -> bool:
        if f.is_zero():
            return False
        k = _key(f)
        if k in seen:
            return False
        seen.add(k)
        entries.append((f, word))
        return True

    frontier: list[tuple[VectorField, str]] = []
    for q in range(1, spec.d + 1):
        uq = make_U(spec, q)
        if push(uq, f"U{q}"):
            frontier.append(entries[-1])
    for q in range(1, spec.d + 1):
        uq = make_U(spec, q)
        br = lie_bracket(uq, u0)
        if push(br, f"[U{q},U0]"):
            frontier.append(entries[-1])

    for _ in range(depth):
        if not frontier:
            break
        current = list(entries)
        new_frontier: list[tuple[VectorField, str]] = []
        for f_new, w_new in frontier:
            for f_old, w_old in current:
                if f_old is f_new:
                    continue
                br = lie_bracket(f_old, f_new)
                if push(br, f"[{w_old},{w_new}]"):
                    new_frontier.append(entries[-1])
        frontier = new_frontier

    return BracketBasis(depth=depth, entries=tuple(entries))


@dataclass(frozen=True)
class RankReport:
    point: tuple[float, ...]
    depth: int
    singular_values: tuple[float, ...]
    rank: int
    satisfied: bool


def rank_at(
    basis: BracketBasis,
    x: Sequence[float],
    tol: float = DEFAULT_TOL,
    n: int | None = None,
) -> RankReport:
    """Evaluate the basis fields at x, stack as rows, count singular values
    above ``tol`` times the largest one.

    Raises the underlying evaluation error when a coefficient is undefined
    at x (e.g. a coordinate collision).
    """
    if not basis.entries:
        dim = n if n is not None else len(x)
        return RankReport(tuple(float(v) for v in x), basis.depth, (), 0, False)
    rows = np.array([f.eval_at(x) for f in basis.fields])
    dim = rows.shape[1]
    sv = np.linalg.svd(rows, compute_uv=False)
    if sv.size == 0 or sv[0] == 0.0:
        rank = 0
    else:
        rank = int(np.sum(sv > tol * sv[0]))
    return RankReport(
        point=tuple(float(v) for v in x),
        depth=basis.depth,
        singular_values=tuple(float(s) for s in sv),
        rank=rank,
        satisfied=rank == dim,
    )
