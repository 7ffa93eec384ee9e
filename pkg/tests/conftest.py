import warnings

import numpy as np
import pytest

from ngnf.benes import rotated_benes_model
from ngnf.flow import FlowConfig, ParamVector, param_count
from ngnf.sde import brownian


def random_theta(cfg: FlowConfig, rng, scale=0.5) -> ParamVector:
    M, layout = param_count(cfg)
    return ParamVector(scale * rng.standard_normal(M), layout)


def fd_generator(model, t, x, p, h=1e-3):
    """Oracle: div(-b p + 1/2 div(Sigma p)) entirely by central differences of ``p``."""
    d = x.size
    E = h * np.eye(d)
    bp = lambda y, i: model.drift(t, y[None])[0, i] * p(y)
    Sp = lambda y, i, j: model.diffusion(t, y[None])[0, i, j] * p(y)
    out = 0.0
    for i in range(d):
        out -= (bp(x + E[i], i) - bp(x - E[i], i)) / (2 * h)
        for j in range(d):
            if i == j:
                out += 0.5 * (Sp(x + E[i], i, i) - 2 * Sp(x, i, i) + Sp(x - E[i], i, i)) / h**2
            else:
                out += 0.5 * (
                    Sp(x + E[i] + E[j], i, j)
                    - Sp(x + E[i] - E[j], i, j)
                    - Sp(x - E[i] + E[j], i, j)
                    + Sp(x - E[i] - E[j], i, j)
                ) / (4 * h * h)
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def cfg2():
    return FlowConfig(dim=2, layers=4, split=1, beta=0.9, hidden=3)


@pytest.fixture
def cfg3():
    return FlowConfig(dim=3, layers=4, split=1, beta=0.8, hidden=2)


@pytest.fixture
def ref_flow():
    return FlowConfig(dim=2, layers=10, split=1, beta=0.9, hidden=4)


@pytest.fixture
def benes():
    return rotated_benes_model()


@pytest.fixture
def bm():
    return brownian(2)


@pytest.fixture(autouse=True)
def _quiet_sample_count_warning():
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message="n_samples=")
        yield


def _generic_model():
    """Two-dimensional model with state-dependent, non-diagonal diffusion and no analytic divergence."""
    from ngnf.sde import SdeModel

    def drift(t, x):
        return np.column_stack([-x[:, 0] + 0.5 * np.sin(x[:, 1]), -0.5 * x[:, 1] + 0.2 * x[:, 0] ** 2])

    def sqrt_diffusion(t, x):
        S = np.zeros((x.shape[0], 2, 2))
        S[:, 0, 0] = 1.0 + 0.3 * np.sin(x[:, 0])
        S[:, 1, 0] = 0.2 * np.cos(x[:, 1])
        S[:, 1, 1] = 0.8 + 0.1 * x[:, 0] ** 2 / (1.0 + x[:, 0] ** 2)
        return S

    return SdeModel("generic", 2, drift, sqrt_diffusion)


@pytest.fixture
def generic():
    return _generic_model()


TINY_CONFIG = """\
model.name = "benes_rot"
flow.layers = 2
flow.hidden = 2
galerkin.n_samples = 200
horizon.T = 0.4
integrator.h_max = 0.1
integrator.rtol = 0.01
seed = 5
"""


@pytest.fixture(scope="session")
def tiny_config_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "tiny.toml"
    path.write_text(TINY_CONFIG)
    return path


@pytest.fixture(scope="session")
def tiny_ckpt(tiny_config_file):
    """A few-second training run on a small flow, shared across tests."""
    from ngnf.config import RunConfig
    from ngnf.training import train

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return train(RunConfig.load(tiny_config_file))


# acceptance results, filled by tests/test_acceptance.py and echoed after the run
ACCEPTANCE_RESULTS: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(ACCEPTANCE_RESULTS[n])
