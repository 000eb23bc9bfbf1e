import sys
from pathlib import Path

import pytest

import worldflow as wf

sys.path.insert(0, str(Path(__file__).parent))  # make `oracles` importable


@pytest.fixture(scope="session")
def free_params():
    return wf.PhysicsParams(hbar=1.0, masses=(1.0,), potential=wf.Potential(kind="free"))


@pytest.fixture(scope="session")
def ho_params():
    return wf.PhysicsParams(
        hbar=1.0, masses=(1.0,), potential=wf.Potential(kind="harmonic", omega=1.0)
    )


@pytest.fixture(scope="session")
def grid512():
    return wf.make_grid([[-10.0, 10.0]], [512])


@pytest.fixture(scope="session")
def free_store(grid512, free_params):
    """Spreading sigma0=1 packet evolved to t=2, frames every 0.02."""
    psi = wf.make_state(grid512, {"kind": "gaussian", "center": [0.0], "sigma": [1.0]})
    return wf.evolve(psi, free_params, dt_step=0.004, n_steps=500, frame_stride=5)


@pytest.fixture(scope="session")
def coherent_store(ho_params):
    """Displaced ground state swinging through one and a half periods."""
    grid = wf.make_grid([[-10.0, 10.0]], [512])
    sigma = float(1.0 / 2.0**0.5)
    psi = wf.make_state(grid, {"kind": "gaussian", "center": [2.0], "sigma": [sigma]})
    return wf.evolve(psi, ho_params, dt_step=0.001, n_steps=3000, frame_stride=20)


@pytest.fixture(scope="session")
def scenario_results(tmp_path_factory):
    """Run bundled scenarios at most once per session, keyed by name."""
    cache: dict[str, wf.RunResult] = {}
    base = tmp_path_factory.mktemp("scenario_runs")

    def run(name: str) -> wf.RunResult:
        if name not in cache:
            config = wf.load_scenario(wf.bundled_scenario_path(name))
            cache[name] = wf.run_scenario(config, base / name)
        return cache[name]

    return run
