import numpy as np
import pytest

from mvwarp.objective import UnmixingSet
from mvwarp.warpsig import MultiViewData, WarpParams


def random_instance(rng, m=3, p=2, n=64, n_epochs=1, tau_frac=0.1, rho_max=1.2):
    """Random data, unmixing matrices and in-bound warps; time unit = record length."""
    N = n * n_epochs
    X = MultiViewData(rng.laplace(size=(m, p, N)), 1.0 / n, n_epochs)
    W = UnmixingSet(np.eye(p) + 0.3 * rng.standard_normal((m, p, p)))
    tau_max = tau_frac * X.epoch_duration
    tau = rng.uniform(-tau_max, tau_max, (m, p))
    rho = np.exp(rng.uniform(-np.log(rho_max), np.log(rho_max), (m, p)))
    return X, W, WarpParams(tau, rho, tau_max, rho_max)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
