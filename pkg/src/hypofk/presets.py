"""Ready-made diffusion specs used across the docs, CLI examples and tests."""

from __future__ import annotations

from .exprlang import BoxPredicate, Const, TruePredicate, Var
from .fields import DiffusionSpec

__all__ = ["bm_interval", "free_bm", "embedded_bm", "langevin"]


def bm_interval(lo: float = -1.0, hi: float = 1.0) -> DiffusionSpec:
    """Standard 1-D Brownian motion killed at the ends of (lo, hi)."""
    return DiffusionSpec(
        n=1, d=1, sigma=((Const(1.0),),), drift=(Const(0.0),),
        domain=BoxPredicate((float(lo),), (float(hi),)),
        box=((float(lo),), (float(hi),)),
    )


def free_bm(n: int = 1) -> DiffusionSpec:
    """n independent Brownian coordinates on all of R^n."""
    sigma = tuple(
        tuple(Const(1.0) if i == j else Const(0.0) for j in range(n)) for i in range(n)
    )
    return DiffusionSpec(n=n, d=n, sigma=sigma, drift=(Const(0.0),) * n,
                         domain=TruePredicate())


def embedded_bm() -> DiffusionSpec:
    """One-dimensional Brownian motion embedded in the plane: (B_t, 0).

    The stock non-example for the spanning condition: the generated algebra
    has rank 1 everywhere.
    """
    return DiffusionSpec(
        n=2, d=1, sigma=((Const(1.0),), (Const(0.0),)),
        drift=(Const(0.0), Const(0.0)), domain=TruePredicate(),
    )


def langevin() -> DiffusionSpec:
    """Kinetic toy model: dx1 = x2 dt, dx2 = dB (noise only in velocity)."""
    return DiffusionSpec(
        n=2, d=1, sigma=((Const(0.0),), (Const(1.0),)),
        drift=(Var(2), Const(0.0)), domain=TruePredicate(),
    )
