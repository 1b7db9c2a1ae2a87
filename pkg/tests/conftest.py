import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from tslim import netcase
from tslim.netcase import Branch, Bus, Generator, NetworkCase

settings.register_profile("tslim", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("tslim")


@pytest.fixture(scope="session")
def case39():
    return netcase.builtin_case()


@pytest.fixture(scope="session")
def pf39(case39):
    return netcase.solve_powerflow(case39)


def two_bus(p_load=0.5, q_load=0.0, x=0.05, r=0.0, rating=1.0, load_model=None, n_lines=1):
    """Slack generator feeding one load bus over ``n_lines`` identical lines."""
    buses = (Bus(1, "Slack"), Bus(2, "PQ", p_load=p_load, q_load=q_load))
    lines = tuple(Branch(1, 2, r * n_lines, x * n_lines, rating=rating) for _ in range(n_lines))
    gens = (Generator(1, p_load, h=5.0, xdp=0.2, d=5.0, name="G1"),)
    models = {} if load_model is None else {2: load_model}
    return NetworkCase(buses, lines, gens, load_models=models)


def three_bus():
    """Slack, PV and PQ bus in a triangle (small power-flow fixture)."""
    buses = (
        Bus(1, "Slack", v_mag=1.02),
        Bus(2, "PV"),
        Bus(3, "PQ", p_load=1.2, q_load=0.4),
    )
    branches = (
        Branch(1, 2, 0.01, 0.08, b_charging=0.02),
        Branch(1, 3, 0.02, 0.10, b_charging=0.02),
        Branch(2, 3, 0.015, 0.09, b_charging=0.02, tap=1.02),
    )
    gens = (
        Generator(1, 0.6, v_set=1.02, h=6.0, xdp=0.25, d=2.0, name="G1"),
        Generator(2, 0.7, v_set=1.01, q_min=-0.5, q_max=0.5, h=4.0, xdp=0.3, d=2.0, name="G2"),
    )
    return NetworkCase(buses, branches, gens)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
