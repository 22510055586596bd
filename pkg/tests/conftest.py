import numpy as np
import pytest

from hypofk.paths import CutoffSpec, PathConfig, make_slowed_spec, simulate_dense, simulate_paths, time_change
from hypofk.presets import bm_interval, embedded_bm, free_bm, langevin


def timechange_sample_pair(seed, n_paths, s_target=0.3, dt=5e-4):
    """Samples of the directly simulated slowed process at clock time s,
    and of the original process resampled through the inverse clock."""
    base = free_bm(1)
    cut = CutoffSpec.box((-0.9,), (0.9,), margin=0.3)
    slowed = make_slowed_spec(base, cut)
    n_steps = int(round(s_target / dt))
    cfg_hat = PathConfig(dt=dt, horizon=s_target, seed=2 * seed)
    res_hat = simulate_paths(slowed, None, (0.0,), 0.0, cfg_hat, n_paths)
    xhat = res_hat.state[:, 0]
    cfg_x = PathConfig(dt=dt, seed=2 * seed + 1)
    dense = simulate_dense(base, None, (0.0,), 0.0, cfg_x, n_steps, n_paths)
    tc = time_change(dense, cut, [s_target], bridge_seed=7 * seed + 3)
    return xhat, tc.values[:, 0, 0]


@pytest.fixture(scope="session")
def bm():
    return bm_interval()


@pytest.fixture(scope="session")
def all_presets():
    return {
        "bm_interval": bm_interval(),
        "free_bm": free_bm(1),
        "embedded_bm": embedded_bm(),
        "langevin": langevin(),
    }


@pytest.fixture
def quick_cfg():
    return PathConfig(dt=1e-3, horizon=None, seed=12345)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240817)
