import numpy as np
import pytest

from rnnhvac.dataset import Scaler
from rnnhvac.plant import PlantConfig, ScheduleSet


def quiet_plant(n_zones=1, **kw) -> PlantConfig:
    """Noise-free plant without internal gains; single zone unless told otherwise."""
    base = dict(
        n_zones=n_zones,
        C=[4.0e6] * n_zones,
        R_out=[0.0135] * n_zones,
        R_adj=np.full((n_zones, n_zones), np.inf),
        noise_std=0.0,
        power_noise_std=0.0,
        occupancy_heat=0.0,
        solar_aperture=0.0,
    )
    base.update(kw)
    return PlantConfig(**base)


def flat_schedules(n, n_zones, outdoor=10.0, dt=600.0) -> ScheduleSet:
    return ScheduleSet(np.full(n, float(outdoor)), np.zeros(n), np.zeros((n, n_zones)),
                       np.zeros((n, n_zones)), dt)


def identity_scaler(n_features) -> Scaler:
    return Scaler(np.zeros(n_features), np.ones(n_features), 0.0, 1.0)


def central_fd(fun, x, h=1e-6, order=2):
    """Central finite differences of a scalar function over every entry of x.

    ``order=4`` uses the five-point stencil, whose truncation error is small
    enough at h ~ 1e-4 that roundoff stays far below tiny gradient entries.
    """
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])

    def at(i, d):
        xd = x.copy()
        xd[i] += d
        return fun(xd)

    for _ in it:
        i = it.multi_index
        if order == 4:
            g[i] = (8 * (at(i, h) - at(i, -h)) - (at(i, 2 * h) - at(i, -2 * h))) / (12 * h)
        else:
            g[i] = (at(i, h) - at(i, -h)) / (2 * h)
    return g


def adaptive_fd(fun, x, steps=(1e-2, 3e-3, 1e-3, 3e-4, 1e-4)):
    """Five-point FD with per-entry step selection.

    Each entry keeps the estimate whose neighbouring step sizes agree best,
    which avoids both ReLU kinks (large steps) and roundoff (small steps).
    """
    est = np.stack([central_fd(fun, x, h, order=4) for h in steps])
    gaps = np.abs(np.diff(est, axis=0))
    best = np.argmin(gaps, axis=0)
    return np.take_along_axis(est[1:], best[None], axis=0)[0]


def max_rel_err(analytic, fd):
    analytic, fd = np.asarray(analytic), np.asarray(fd)
    return float(np.max(np.abs(analytic - fd) / (np.abs(analytic) + 1e-8)))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
