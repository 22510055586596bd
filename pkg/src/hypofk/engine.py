"""Euler-Maruyama path kernels, generated per problem and JIT-compiled.

For each (diffusion, observable, feature-set) combination a scalar stepping
loop is emitted as Python source with every coefficient expression inlined,
then compiled with numba in nopython/parallel mode.  Paths are independent
(`prange` over the path index) and all randomness is counter-based, so the
results are bit-identical for any thread count or batch split.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit, prange, get_num_threads, set_num_threads

from .exprlang import (
    BoxPredicate,
    Const,
    Expr,
    ScalarEmitter,
    TruePredicate,
)
from .fields import DiffusionSpec

__all__ = [
    "SimulationError",
    "SimResult",
    "DenseResult",
    "run_paths",
    "run_paths_dense",
    "CAUSE_EXIT",
    "CAUSE_HORIZON",
    "CAUSE_MAX_STEPS",
    "CAUSE_COLLISION",
    "CAUSE_ERROR",
]

CAUSE_EXIT = 0
CAUSE_HORIZON = 1
CAUSE_MAX_STEPS = 2
CAUSE_COLLISION = 3
CAUSE_ERROR = 4

# skip the bridge-crossing draw when d1*d2 > GATE * a_ii * dt (p < 4e-12)
_BRIDGE_GATE = 13.0


class SimulationError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# JIT helpers shared by all kernels
# ---------------------------------------------------------------------------

@njit(inline="always")
def _mix(z):
    z = z + np.uint64(0x9E3779B97F4A7C15)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@njit(inline="always")
def _u01(seed_mixed, path, draw):
    h = _mix(seed_mixed ^ (path * np.uint64(0xA24BAED4963EE407)))
    h = _mix(h + draw * np.uint64(0x9FB21C651E98DF25))
    return (np.float64(h >> np.uint64(11)) + 0.5) * (1.0 / 9007199254740992.0)


@njit(inline="always")
def _ndtri(p):
    # Wichura's PPND16 rational approximations (abs err < 1e-15)
    q = p - 0.5
    if abs(q) <= 0.425:
        r = 0.180625 - q * q
        num = (((((((2.5090809287301226727e3 * r + 3.3430575583588128105e4) * r
                    + 6.7265770927008700853e4) * r + 4.5921953931549871457e4) * r
                  + 1.3731693765509461125e4) * r + 1.9715909503065514427e3) * r
                + 1.3314166789178437745e2) * r + 3.3871328727963666080e0)
        den = (((((((5.2264952788528545610e3 * r + 2.8729085735721942674e4) * r
                    + 3.9307895800092710610e4) * r + 2.1213794301586595867e4) * r
                  + 5.3941960214247511077e3) * r + 6.8718700749205790830e2) * r
                + 4.2313330701600911252e1) * r + 1.0)
        return q * num / den
    r = p if q < 0.0 else 1.0 - p
    r = math.sqrt(-math.log(r))
    if r <= 5.0:
        r = r - 1.6
        num = (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r
                    + 2.41780725177450611770e-1) * r + 1.27045825245236838258e0) * r
                  + 3.64784832476320460504e0) * r + 5.76949722146069140550e0) * r
                + 4.63033784615654529590e0) * r + 1.42343711074968357734e0)
        den = (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r
                    + 1.51986665636164571966e-2) * r + 1.48103976427480074590e-1) * r
                  + 6.89767334985100004550e-1) * r + 1.67638483018380384940e0) * r
                + 2.05319162663775882187e0) * r + 1.0)
    else:
        r = r - 5.0
        num = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r
                    + 1.24266094738807843860e-3) * r + 2.65321895265761230930e-2) * r
                  + 2.96560571828504891230e-1) * r + 1.78482653991729133580e0) * r
                + 5.46378491116411436990e0) * r + 6.65790464350110377720e0)
        den = (((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r
                    + 1.84631831751005468180e-5) * r + 7.86869131145613259100e-4) * r
                  + 1.48753612908506148525e-2) * r + 1.36929880922735805310e-1) * r
                + 5.99832206555887937690e-1) * r + 1.0)
    val = num / den
    return -val if q < 0.0 else val


# ---------------------------------------------------------------------------
# Source generation
# ---------------------------------------------------------------------------

def _coeff_info(obs_g: Expr | None, obs_h: Expr | None):
    """Constant coefficients become runtime scalars so kernels are reusable."""
    if obs_g is None:
        obs_g = Const(0.0)
    if obs_h is None:
        obs_h = Const(0.0)
    g_const = isinstance(obs_g, Const)
    h_const = isinstance(obs_h, Const)
    return obs_g, obs_h, g_const, h_const


def _emit_step_core(spec: DiffusionSpec, g: Expr, h: Expr, g_const: bool, h_const: bool,
                    bridge_capable: bool, lines: list[str], ind: str, slots: int) -> None:
    """Shared stepping body: draws, SDE update, finite check, gamma/H, domain."""
    n, d = spec.n, spec.d
    add = lines.append

    add(f"{ind}dk = np.uint64(k) * np.uint64({slots})")
    for q in range(d):
        add(f"{ind}z_{q} = _ndtri(_u01(seedm, prx, dk + np.uint64({q}))) * sgn")
    add(f"{ind}sdt = math.sqrt(dtk)")

    em = ScalarEmitter([f"x_{i}" for i in range(n)], t_name="tc", prefix="vc")
    sig_names = [[em.emit(spec.sigma[i][q]) for q in range(d)] for i in range(n)]
    b_names = [em.emit(spec.drift[i]) for i in range(n)]
    for ln in em.lines:
        add(ind + ln)
    for i in range(n):
        noise = " + ".join(f"{sig_names[i][q]} * z_{q}" for q in range(d)) or "0.0"
        add(f"{ind}xn_{i} = x_{i} + ({noise}) * sdt + ({b_names[i]}) * dtk")

    finite = " and ".join(f"(-1e300 < xn_{i} < 1e300)" for i in range(n))
    add(f"{ind}if not ({finite}):")
    add(f"{ind}    tau = tc + dtk")
    add(f"{ind}    cause = {CAUSE_ERROR}")
    add(f"{ind}    break")
    add(f"{ind}tn = tc + dtk")

    # gamma/H trapezoid on the step [tc, tn]
    if g_const:
        add(f"{ind}g_new = g0")
    else:
        emg = ScalarEmitter([f"xn_{i}" for i in range(n)], t_name="tn", prefix="vg")
        gname = emg.emit(g)
        for ln in emg.lines:
            add(ind + ln)
        add(f"{ind}g_new = {gname}")
    add(f"{ind}lg_prev = lg")
    add(f"{ind}lg = lg + 0.5 * dtk * (g_old + g_new)")
    add(f"{ind}g_old = g_new")
    if h_const:
        add(f"{ind}h_new = h0")
    else:
        emh = ScalarEmitter([f"xn_{i}" for i in range(n)], t_name="tn", prefix="vh")
        hname = emh.emit(h)
        for ln in emh.lines:
            add(ind + ln)
        add(f"{ind}h_new = {hname}")
    add(f"{ind}if h_old != 0.0 or h_new != 0.0:")
    add(f"{ind}    Hacc = Hacc + 0.5 * dtk * (math.exp(lg_prev) * h_old + math.exp(lg) * h_new)")
    add(f"{ind}h_old = h_new")

    # guarded pairs crossing the threshold within the step stop with the
    # distinct collision cause (checked before the domain predicate)
    if spec.collision_pairs:
        add(f"{ind}if delta_c > 0.0:")
        add(f"{ind}    hit2 = False")
        for i, j in spec.collision_pairs:
            add(f"{ind}    if abs(xn_{i - 1} - xn_{j - 1}) < delta_c:")
            add(f"{ind}        hit2 = True")
        add(f"{ind}    if hit2:")
        add(f"{ind}        tau = tn")
        add(f"{ind}        cause = {CAUSE_COLLISION}")
        for i in range(n):
            add(f"{ind}        x_{i} = xn_{i}")
        add(f"{ind}        break")

    # domain membership of the new state
    dom = spec.domain
    if isinstance(dom, TruePredicate):
        add(f"{ind}inside = True")
    elif isinstance(dom, BoxPredicate):
        checks = " and ".join(
            f"(xn_{i} > blo[{i}]) and (xn_{i} < bhi[{i}])" for i in range(n)
        )
        add(f"{ind}inside = {checks}")
    else:
        emp = ScalarEmitter([f"xn_{i}" for i in range(n)], t_name="tn", prefix="vp")
        cond = emp.emit_predicate(dom)
        for ln in emp.lines:
            add(ind + ln)
        add(f"{ind}inside = {cond}")
    add(f"{ind}if not inside:")
    add(f"{ind}    tau = tn")
    add(f"{ind}    cause = {CAUSE_EXIT}")
    for i in range(n):
        add(f"{ind}    x_{i} = xn_{i}")
    add(f"{ind}    break")

    if bridge_capable:
        add(f"{ind}if bridge:")
        bi = ind + "    "
        add(f"{bi}psurv = 1.0")
        add(f"{bi}pmax = 0.0")
        add(f"{bi}bax = -1")
        add(f"{bi}bval = 0.0")
        ema = ScalarEmitter([f"x_{i}" for i in range(n)], t_name="tc", prefix="vaii")
        aii_names = [ema.emit(spec.a_entry(i, i)) for i in range(n)]
        for ln in ema.lines:
            add(bi + ln)
        for i in range(n):
            aii = aii_names[i]
            add(f"{bi}if bhi[{i}] < 1e300 and {aii} > 0.0:")
            add(f"{bi}    d1 = bhi[{i}] - x_{i}")
            add(f"{bi}    d2 = bhi[{i}] - xn_{i}")
            add(f"{bi}    if d1 * d2 < {_BRIDGE_GATE} * {aii} * dtk:")
            add(f"{bi}        pc = math.exp(-2.0 * d1 * d2 / ({aii} * dtk))")
            add(f"{bi}        psurv = psurv * (1.0 - pc)")
            add(f"{bi}        if pc > pmax:")
            add(f"{bi}            pmax = pc")
            add(f"{bi}            bax = {i}")
            add(f"{bi}            bval = bhi[{i}]")
            add(f"{bi}if blo[{i}] > -1e300 and {aii} > 0.0:")
            add(f"{bi}    d1 = x_{i} - blo[{i}]")
            add(f"{bi}    d2 = xn_{i} - blo[{i}]")
            add(f"{bi}    if d1 * d2 < {_BRIDGE_GATE} * {aii} * dtk:")
            add(f"{bi}        pc = math.exp(-2.0 * d1 * d2 / ({aii} * dtk))")
            add(f"{bi}        psurv = psurv * (1.0 - pc)")
            add(f"{bi}        if pc > pmax:")
            add(f"{bi}            pmax = pc")
            add(f"{bi}            bax = {i}")
            add(f"{bi}            bval = blo[{i}]")
        add(f"{bi}if pmax > 0.0:")
        add(f"{bi}    ub = _u01(seedm, prx, dk + np.uint64({d}))")
        add(f"{bi}    if ub > psurv:")
        add(f"{bi}        tau = tc + 0.5 * dtk")
        add(f"{bi}        cause = {CAUSE_EXIT}")
        for i in range(n):
            add(f"{bi}        x_{i} = xn_{i}")
        for i in range(n):
            add(f"{bi}        if bax == {i}:")
            add(f"{bi}            x_{i} = bval")
        add(f"{bi}        break")

    for i in range(n):
        add(f"{ind}x_{i} = xn_{i}")


def _build_exit_source(spec: DiffusionSpec, g: Expr, h: Expr,
                       g_const: bool, h_const: bool) -> str:
    n, d = spec.n, spec.d
    slots = d + 1
    bridge_capable = isinstance(spec.domain, BoxPredicate)
    L: list[str] = []
    add = L.append
    add("def kernel(n_paths, offset, antithetic, seed, x0, t0, dt, horizon, max_steps,")
    add("           delta_c, g0, h0, blo, bhi, bridge, cp_steps,")
    add("           out_tau, out_state, out_gamma, out_H, out_cause, out_steps,")
    add("           cp_x, cp_lg, cp_H, cp_alive):")
    add("    seedm = _mix(np.uint64(seed) ^ np.uint64(0x6A09E667F3BCC909))")
    add("    ncp = cp_steps.shape[0]")
    add("    for p in prange(n_paths):")
    add("        pr = p")
    add("        sgn = 1.0")
    add("        if antithetic:")
    add("            pr = p - (p & 1)")
    add("            if p & 1:")
    add("                sgn = -1.0")
    add("        prx = np.uint64(pr + offset)")
    for i in range(n):
        add(f"        x_{i} = x0[{i}]")
    add("        lg = 0.0")
    add("        Hacc = 0.0")
    # g_old/h_old at the launch point
    if g_const:
        add("        g_old = g0")
    else:
        em = ScalarEmitter([f"x_{i}" for i in range(n)], t_name="t0", prefix="vg0")
        name = em.emit(g)
        for ln in em.lines:
            add("        " + ln)
        add(f"        g_old = {name}")
    if h_const:
        add("        h_old = h0")
    else:
        em = ScalarEmitter([f"x_{i}" for i in range(n)], t_name="t0", prefix="vh0")
        name = em.emit(h)
        for ln in em.lines:
            add("        " + ln)
        add(f"        h_old = {name}")
    add(f"        tau = t0 + max_steps * dt")
    add(f"        cause = {CAUSE_MAX_STEPS}")
    add("        cpi = 0")
    add("        k = 0")
    add("        while k < max_steps:")
    add("            tc = t0 + k * dt")
    add("            if horizon >= 0.0:")
    add("                rem = horizon - tc")
    add("                if rem <= 1e-15:")
    add("                    tau = horizon")
    add(f"                    cause = {CAUSE_HORIZON}")
    add("                    break")
    add("                dtk = dt if dt <= rem else rem")
    add("            else:")
    add("                dtk = dt")
    if spec.collision_pairs:
        add("            hit = False")
        add("            if delta_c > 0.0:")
        for i, j in spec.collision_pairs:
            add(f"                if abs(x_{i - 1} - x_{j - 1}) < delta_c:")
            add("                    hit = True")
        add("            if hit:")
        add("                tau = tc")
        add(f"                cause = {CAUSE_COLLISION}")
        add("                break")
    _emit_step_core(spec, g, h, g_const, h_const, bridge_capable, L, "            ", slots)
    add("            if cpi < ncp and (k + 1) == cp_steps[cpi]:")
    for i in range(n):
        add(f"                cp_x[cpi, p, {i}] = x_{i}")
    add("                cp_lg[cpi, p] = lg")
    add("                cp_H[cpi, p] = Hacc")
    add("                cp_alive[cpi, p] = True")
    add("                cpi = cpi + 1")
    add("            k = k + 1")
    add("        out_tau[p] = tau")
    for i in range(n):
        add(f"        out_state[p, {i}] = x_{i}")
    add("        out_gamma[p] = math.exp(lg)")
    add("        out_H[p] = Hacc")
    add("        out_cause[p] = cause")
    add(f"        out_steps[p] = k + 1 if (cause == {CAUSE_EXIT} or cause == {CAUSE_ERROR}) else k")
    add("        while cpi < ncp:")
    for i in range(n):
        add(f"            cp_x[cpi, p, {i}] = x_{i}")
    add("            cp_lg[cpi, p] = lg")
    add("            cp_H[cpi, p] = Hacc")
    add("            cp_alive[cpi, p] = False")
    add("            cpi = cpi + 1")
    return "\n".join(L) + "\n"


def _build_dense_source(spec: DiffusionSpec, g: Expr, h: Expr,
                        g_const: bool, h_const: bool) -> str:
    n, d = spec.n, spec.d
    slots = d + 1
    L: list[str] = []
    add = L.append
    add("def kernel(n_paths, offset, antithetic, seed, x0, t0, dt, n_steps,")
    add("           delta_c, g0, h0, blo, bhi,")
    add("           out_x, out_lg, out_H, out_stop, out_cause):")
    add("    seedm = _mix(np.uint64(seed) ^ np.uint64(0x6A09E667F3BCC909))")
    add("    for p in prange(n_paths):")
    add("        pr = p")
    add("        sgn = 1.0")
    add("        if antithetic:")
    add("            pr = p - (p & 1)")
    add("            if p & 1:")
    add("                sgn = -1.0")
    add("        prx = np.uint64(pr + offset)")
    for i in range(n):
        add(f"        x_{i} = x0[{i}]")
    add("        lg = 0.0")
    add("        Hacc = 0.0")
    if g_const:
        add("        g_old = g0")
    else:
        em = ScalarEmitter([f"x_{i}" for i in range(n)], t_name="t0", prefix="vg0")
        name = em.emit(g)
        for ln in em.lines:
            add("        " + ln)
        add(f"        g_old = {name}")
    if h_const:
        add("        h_old = h0")
    else:
        em = ScalarEmitter([f"x_{i}" for i in range(n)], t_name="t0", prefix="vh0")
        name = em.emit(h)
        for ln in em.lines:
            add("        " + ln)
        add(f"        h_old = {name}")
    for i in range(n):
        add(f"        out_x[p, 0, {i}] = x_{i}")
    add("        out_lg[p, 0] = 0.0")
    add("        out_H[p, 0] = 0.0")
    add(f"        cause = {CAUSE_HORIZON}")
    add("        stop = n_steps")
    add("        k = 0")
    add("        while k < n_steps:")
    add("            tc = t0 + k * dt")
    add("            dtk = dt")
    if spec.collision_pairs:
        add("            hit = False")
        add("            if delta_c > 0.0:")
        for i, j in spec.collision_pairs:
            add(f"                if abs(x_{i - 1} - x_{j - 1}) < delta_c:")
            add("                    hit = True")
        add("            if hit:")
        add("                stop = k")
        add(f"                cause = {CAUSE_COLLISION}")
        add("                break")
    _emit_step_core(spec, g, h, g_const, h_const, False, L, "            ", slots)
    for i in range(n):
        add(f"            out_x[p, k + 1, {i}] = x_{i}")
    add("            out_lg[p, k + 1] = lg")
    add("            out_H[p, k + 1] = Hacc")
    add("            k = k + 1")
    # early stop: record the exit sample, then freeze the remaining slots
    # (a collision that still has stop == n_steps was detected post-step,
    # so the overshoot sample belongs to the record)
    add("        if k < n_steps:")
    add(f"            if cause == {CAUSE_EXIT} or cause == {CAUSE_ERROR} or (cause == {CAUSE_COLLISION} and stop == n_steps):")
    add("                stop = k + 1")
    for i in range(n):
        add(f"                out_x[p, k + 1, {i}] = x_{i}")
    add("                out_lg[p, k + 1] = lg")
    add("                out_H[p, k + 1] = Hacc")
    add("            j = stop")
    add("            while j < n_steps:")
    for i in range(n):
        add(f"                out_x[p, j + 1, {i}] = x_{i}")
    add("                out_lg[p, j + 1] = lg")
    add("                out_H[p, j + 1] = Hacc")
    add("                j = j + 1")
    add("        out_stop[p] = stop")
    add("        out_cause[p] = cause")
    return "\n".join(L) + "\n"


# A dense path that breaks out of the loop did so either via the collision
# guard (stop = k, state frozen at the pre-step value) or via exit/error at
# step k (stop = k + 1: the overshoot sample at index k+1 is the exit state).


_KERNEL_CACHE: dict[str, object] = {}


def _compile(src: str):
    fn = _KERNEL_CACHE.get(src)
    if fn is None:
        ns = {"np": np, "math": math, "prange": prange,
              "_mix": _mix, "_u01": _u01, "_ndtri": _ndtri}
        exec(src, ns)
        fn = njit(parallel=True)(ns["kernel"])
        fn._hypofk_source = src
        _KERNEL_CACHE[src] = fn
    return fn


def _box_arrays(spec: DiffusionSpec) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(spec.domain, BoxPredicate):
        return (np.asarray(spec.domain.lows, dtype=float),
                np.asarray(spec.domain.highs, dtype=float))
    return (np.full(spec.n, -np.inf), np.full(spec.n, np.inf))


@dataclass
class SimResult:
    tau: np.ndarray
    state: np.ndarray
    gamma: np.ndarray
    H: np.ndarray
    cause: np.ndarray
    steps: np.ndarray
    t0: float
    checkpoint_times: np.ndarray | None = None
    cp_state: np.ndarray | None = None
    cp_log_gamma: np.ndarray | None = None
    cp_H: np.ndarray | None = None
    cp_alive: np.ndarray | None = None


@dataclass
class DenseResult:
    times: np.ndarray          # (n_steps + 1,)
    states: np.ndarray         # (n_paths, n_steps + 1, n)
    log_gamma: np.ndarray      # (n_paths, n_steps + 1)
    H: np.ndarray              # (n_paths, n_steps + 1)
    stop_index: np.ndarray     # (n_paths,) last valid sample index
    cause: np.ndarray


class _ThreadScope:
    def __init__(self, threads: int | None):
        self.threads = threads
        self.saved = None

    def __enter__(self):
        if self.threads is not None:
            self.saved = get_num_threads()
            import numba

            limit = numba.config.NUMBA_NUM_THREADS
            set_num_threads(min(max(1, int(self.threads)), limit))
        return self

    def __exit__(self, *exc):
        if self.saved is not None:
            set_num_threads(self.saved)


def run_paths(
    spec: DiffusionSpec,
    g: Expr | None,
    h: Expr | None,
    x0,
    t0: float,
    dt: float,
    n_paths: int,
    seed: int,
    horizon: float | None = None,
    max_steps: int = 10_000_000,
    delta_c: float = 0.0,
    bridge: bool = False,
    checkpoint_times=None,
    path_offset: int = 0,
    antithetic: bool = False,
    threads: int | None = None,
) -> SimResult:
    """Simulate ``n_paths`` stopped paths; see module docstring for contracts."""
    g, h, g_const, h_const = _coeff_info(g, h)
    if bridge and not isinstance(spec.domain, BoxPredicate):
        raise ValueError("bridge correction requires an axis-aligned box domain")
    src = _build_exit_source(spec, g, h, g_const, h_const)
    fn = _compile(src)
    blo, bhi = _box_arrays(spec)
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (spec.n,):
        raise ValueError(f"x0 must have shape ({spec.n},)")

    if checkpoint_times is not None:
        cpt = np.asarray(checkpoint_times, dtype=float)
        steps_f = (cpt - t0) / dt
        cp_steps = np.rint(steps_f).astype(np.int64)
        if np.any(np.abs(steps_f - cp_steps) > 1e-6) or np.any(cp_steps < 1):
            raise ValueError("checkpoint times must be positive multiples of dt from t0")
        if np.any(np.diff(cp_steps) <= 0):
            raise ValueError("checkpoint times must be strictly increasing")
    else:
        cpt = None
        cp_steps = np.empty(0, dtype=np.int64)
    ncp = len(cp_steps)

    out_tau = np.empty(n_paths)
    out_state = np.empty((n_paths, spec.n))
    out_gamma = np.empty(n_paths)
    out_H = np.empty(n_paths)
    out_cause = np.empty(n_paths, dtype=np.int8)
    out_steps = np.empty(n_paths, dtype=np.int64)
    cp_x = np.empty((ncp, n_paths, spec.n))
    cp_lg = np.empty((ncp, n_paths))
    cp_H = np.empty((ncp, n_paths))
    cp_alive = np.zeros((ncp, n_paths), dtype=np.bool_)

    with _ThreadScope(threads):
        fn(
            n_paths, path_offset, antithetic, np.uint64(seed), x0, float(t0), float(dt),
            -1.0 if horizon is None else float(horizon), int(max_steps),
            float(delta_c),
            float(g.value) if g_const else 0.0,
            float(h.value) if h_const else 0.0,
            blo, bhi, bridge, cp_steps,
            out_tau, out_state, out_gamma, out_H, out_cause, out_steps,
            cp_x, cp_lg, cp_H, cp_alive,
        )

    bad = np.nonzero(out_cause == CAUSE_ERROR)[0]
    if bad.size:
        raise SimulationError(
            f"coefficient evaluation produced a non-finite state "
            f"(first at path index {path_offset + int(bad[0])})"
        )
    return SimResult(
        tau=out_tau, state=out_state, gamma=out_gamma, H=out_H,
        cause=out_cause, steps=out_steps, t0=float(t0),
        checkpoint_times=cpt, cp_state=cp_x if ncp else None,
        cp_log_gamma=cp_lg if ncp else None, cp_H=cp_H if ncp else None,
        cp_alive=cp_alive if ncp else None,
    )


def run_paths_dense(
    spec: DiffusionSpec,
    g: Expr | None,
    h: Expr | None,
    x0,
    t0: float,
    dt: float,
    n_steps: int,
    n_paths: int,
    seed: int,
    delta_c: float = 0.0,
    path_offset: int = 0,
    antithetic: bool = False,
    threads: int | None = None,
) -> DenseResult:
    """Simulate paths recording every step (for time changes and dumps)."""
    g, h, g_const, h_const = _coeff_info(g, h)
    src = _build_dense_source(spec, g, h, g_const, h_const)
    fn = _compile(src)
    blo, bhi = _box_arrays(spec)
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (spec.n,):
        raise ValueError(f"x0 must have shape ({spec.n},)")

    out_x = np.empty((n_paths, n_steps + 1, spec.n))
    out_lg = np.empty((n_paths, n_steps + 1))
    out_H = np.empty((n_paths, n_steps + 1))
    out_stop = np.empty(n_paths, dtype=np.int64)
    out_cause = np.empty(n_paths, dtype=np.int8)

    with _ThreadScope(threads):
        fn(
            n_paths, path_offset, antithetic, np.uint64(seed), x0, float(t0), float(dt),
            int(n_steps), float(delta_c),
            float(g.value) if g_const else 0.0,
            float(h.value) if h_const else 0.0,
            blo, bhi,
            out_x, out_lg, out_H, out_stop, out_cause,
        )
    bad = np.nonzero(out_cause == CAUSE_ERROR)[0]
    if bad.size:
        raise SimulationError(
            f"coefficient evaluation produced a non-finite state "
            f"(first at path index {path_offset + int(bad[0])})"
        )
    times = float(t0) + dt * np.arange(n_steps + 1)
    return DenseResult(
        times=times, states=out_x, log_gamma=out_lg, H=out_H,
        stop_index=out_stop, cause=out_cause,
    )
