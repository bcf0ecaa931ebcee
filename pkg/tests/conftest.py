import os

import numpy as np
import pytest
from hypothesis import settings

from bellsim.bell_dynamics import StepPolicy, run_ensemble, tabulate_rates
from bellsim.fr_experiment import FR_JOINT_EVENTS, build_scenario, scenario_from_config
from bellsim.tensor_core import make_space
from utils.data_loader import load_scenario_config

settings.register_profile("default", max_examples=50, deadline=None)
settings.register_profile("thorough", max_examples=500, deadline=None)
settings.load_profile(os.environ.get("BELLSIM_HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def fr():
    return build_scenario(0.5)


@pytest.fixture(scope="session")
def rotation():
    return scenario_from_config(load_scenario_config("rotation"))


@pytest.fixture(scope="session")
def idle():
    return scenario_from_config(load_scenario_config("idle"))


@pytest.fixture
def qubit_qutrit():
    return make_space([("a", ["0", "1"]), ("b", ["x", "y", "z"])])


@pytest.fixture(scope="session")
def coarse_policy():
    """A coarser grid than the default, for tests that do not measure discretisation error."""
    return StepPolicy(dt_divisor=400)


def random_state(dim: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    v = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    return v / np.linalg.norm(v)


def random_hermitian(dim: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    m = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    return (m + m.conj().T) / 2


@pytest.fixture(scope="session")
def fr_table(fr):
    return tabulate_rates(fr.schedule, fr.initial_state, fr.spec, StepPolicy())


@pytest.fixture(scope="session")
def fr_stats(fr, fr_table):
    return run_ensemble(
        2000,
        fr.schedule,
        fr.spec,
        fr_table.policy,
        seed=42,
        checkpoints=fr.checkpoints,
        initial_pilot=fr.initial_state,
        joint_events=FR_JOINT_EVENTS,
        table=fr_table,
    )


@pytest.fixture(scope="session", params=[0.2, 0.5, 0.9], ids=lambda tau: f"tau={tau}")
def fr_stats_by_tau(request):
    """A smaller ensemble for each sampled measurement duration."""
    scenario = build_scenario(request.param)
    table = tabulate_rates(scenario.schedule, scenario.initial_state, scenario.spec, StepPolicy())
    stats = run_ensemble(
        1000,
        scenario.schedule,
        scenario.spec,
        table.policy,
        seed=11,
        checkpoints=scenario.checkpoints,
        initial_pilot=scenario.initial_state,
        joint_events=FR_JOINT_EVENTS,
        table=table,
    )
    return scenario, stats
