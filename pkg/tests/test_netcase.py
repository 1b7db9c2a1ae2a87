import dataclasses
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import root

from tslim import netcase
from tslim.errors import IslandingError, NonConvergence, ParseError, ValidationError
from tslim.netcase import Branch, Bus, Generator, NetworkCase

from conftest import three_bus


def primitive_ybus(case):
    """Bus admittance matrix assembled from 2x2 branch primitives."""
    idx = case.bus_index()
    y = np.zeros((case.n_bus, case.n_bus), dtype=complex)
    for br in case.branches:
        if not br.in_service:
            continue
        ys = 1 / (br.r + 1j * br.x)
        half = 1j * br.b_charging / 2
        a = br.tap
        prim = np.array([[(ys + half) / a**2, -ys / a], [-ys / a, ys + half]])
        ij = [idx[br.from_bus], idx[br.to_bus]]
        y[np.ix_(ij, ij)] += prim
    y[np.diag_indices(case.n_bus)] += 1j * np.array([b.shunt_b for b in case.buses])
    return y


def scipy_powerflow(case):
    """Independent solve: rectangular unknowns, scipy's hybrid root finder."""
    y = primitive_ybus(case)
    idx = case.bus_index()
    n = case.n_bus
    p_sched = np.array([-b.p_load for b in case.buses])
    q_sched = np.array([-b.q_load for b in case.buses])
    v_set = np.ones(n)
    for g in case.generators:
        p_sched[idx[g.bus]] += g.p_set
        v_set[idx[g.bus]] = g.v_set
    kinds = [b.kind for b in case.buses]
    slack = kinds.index("Slack")

    def resid(z):
        e, f = z[:n], z[n:]
        v = e + 1j * f
        s = v * np.conj(y @ v)
        out = []
        for i in range(n):
            if i == slack:
                out += [e[i] - v_set[i], f[i]]
            elif kinds[i] == "PV":
                out += [s[i].real - p_sched[i], abs(v[i]) ** 2 - v_set[i] ** 2]
            else:
                out += [s[i].real - p_sched[i], s[i].imag - q_sched[i]]
        return np.array(out)

    z0 = np.concatenate([v_set, np.zeros(n)])
    sol = root(resid, z0, method="hybr", tol=1e-13)
    assert sol.success, sol.message
    return sol.x[:n] + 1j * sol.x[n:]


def test_builtin_case_shape(case39):
    assert case39.n_bus == 39
    assert len(case39.branches) == 46
    assert len(case39.generators) == 10
    total = sum(b.p_load for b in case39.buses) * 100
    assert total == pytest.approx(6254.23, abs=0.01)
    assert case39.areas == (1, 2, 3)


def test_ybus_matches_primitive_assembly(case39):
    assert np.allclose(netcase.build_ybus(case39), primitive_ybus(case39), atol=1e-12)


def test_ybus_symmetric_without_phase_shift(case39):
    y = netcase.build_ybus(case39)
    assert np.allclose(y, y.T)


def test_ybus_rows_sum_to_shunts_without_taps_or_charging():
    case = NetworkCase(
        (Bus(1, "Slack", shunt_b=0.1), Bus(2, "PQ"), Bus(3, "PQ", shunt_b=-0.05)),
        (Branch(1, 2, 0.01, 0.1), Branch(2, 3, 0.02, 0.2), Branch(1, 3, 0.0, 0.3)),
        (Generator(1, 0.0),),
    )
    y = netcase.build_ybus(case)
    assert np.allclose(y.sum(axis=1), [0.1j, 0, -0.05j])


def test_powerflow_39_matches_scipy_root(case39):
    pf = netcase.solve_powerflow(case39, enforce_q_limits=False)
    assert pf.converged
    assert np.max(np.abs(pf.voltage - scipy_powerflow(case39))) < 1e-9


def test_powerflow_39_holds_bus_37_at_its_q_floor(case39, pf39):
    # G8 at bus 37 has q_min = 0 and would absorb vars at its set-point
    idx = case39.bus_index()
    assert pf39.bus_kinds[idx[37]] == "PQ"
    k = [g.bus for g in case39.generators].index(37)
    assert pf39.q_gen[k] == pytest.approx(0.0, abs=1e-8)


def test_powerflow_39_matches_published_solution(pf39, case39):
    # bus 39 and bus 1 of the widely circulated 39-bus solution (slack at bus 31)
    idx = case39.bus_index()
    assert pf39.v_mag[idx[1]] == pytest.approx(1.0394, abs=2e-4)
    assert np.degrees(pf39.v_ang[idx[1]]) == pytest.approx(-13.54, abs=0.02)
    assert pf39.v_mag[idx[39]] == pytest.approx(1.03, abs=1e-6)


def test_powerflow_three_bus_matches_scipy_root():
    case = three_bus()
    pf = netcase.solve_powerflow(case, enforce_q_limits=False)
    assert np.max(np.abs(pf.voltage - scipy_powerflow(case))) < 1e-8


def test_power_balance_equals_losses(case39, pf39):
    s_from, s_to = netcase.branch_flows(case39, pf39.voltage)
    losses = (s_from + s_to).real.sum()
    gen = pf39.p_gen.sum()
    load = sum(b.p_load for b in case39.buses)
    assert gen - load == pytest.approx(losses, abs=1e-8)


def test_mismatch_trace_is_recorded(pf39):
    assert pf39.trace[-1] < 1e-8
    assert pf39.iterations == len(pf39.trace) - 1 or pf39.iterations <= len(pf39.trace)


def test_q_limit_switches_pv_bus_to_pq():
    case = three_bus()
    gens = list(case.generators)
    gens[1] = dataclasses.replace(gens[1], q_min=-0.05, q_max=0.05, v_set=1.08)
    case = case.replace(generators=tuple(gens))
    free = netcase.solve_powerflow(case, enforce_q_limits=False)
    assert free.q_gen[1] > 0.05
    held = netcase.solve_powerflow(case)
    assert held.q_gen[1] == pytest.approx(0.05, abs=1e-8)
    assert held.bus_kinds[1] == "PQ"
    assert held.v_mag[1] < 1.08


def test_nonconvergence_carries_trace():
    case = NetworkCase(
        (Bus(1, "Slack"), Bus(2, "PQ", p_load=30.0, q_load=10.0)),
        (Branch(1, 2, 0.01, 0.1),),
        (Generator(1, 0.0),),
    )
    with pytest.raises(NonConvergence) as err:
        netcase.solve_powerflow(case, max_iter=15)
    assert len(err.value.trace) >= 2


@pytest.mark.parametrize(
    "mutate, error",
    [
        (lambda d: d.pop("buses"), ParseError),
        (lambda d: d["system"].update(units="furlongs"), ParseError),
        (lambda d: d["buses"][0].update(kind="Slack"), ValidationError),
        (lambda d: d["branches"][0].update({"to": 99}), ValidationError),
        (lambda d: d["buses"].append(dict(d["buses"][0])), ValidationError),
        (lambda d: d["branches"][0].update(x="abc"), ParseError),
    ],
)
def test_case_validation_errors(case39, mutate, error):
    doc = json.loads(json.dumps(netcase.case_to_dict(case39)))
    mutate(doc)
    with pytest.raises(error):
        netcase.case_from_dict(doc)


def test_disconnected_case_rejected():
    doc = {
        "system": {"mva_base": 100},
        "buses": [{"id": 1, "kind": "Slack"}, {"id": 2, "kind": "PQ"}, {"id": 3, "kind": "PQ"}],
        "branches": [{"from": 1, "to": 2, "x": 0.1}],
        "generators": [{"bus": 1, "p_set": 0}],
    }
    with pytest.raises(ValidationError, match="islands"):
        netcase.case_from_dict(doc)


def test_json_round_trip(case39, tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps(netcase.case_to_dict(case39)))
    again = netcase.load_case(path)
    assert again == case39


def test_physical_units_scale_to_per_unit():
    doc = {
        "system": {"mva_base": 100, "units": "physical"},
        "buses": [{"id": 1, "kind": "Slack"}, {"id": 2, "kind": "PQ", "p_load": 50, "q_load": 20}],
        "branches": [{"from": 1, "to": 2, "x": 0.1, "rating": 120}],
        "generators": [{"bus": 1, "p_set": 50, "p_max": 200}],
    }
    case = netcase.case_from_dict(doc)
    assert case.buses[1].p_load == pytest.approx(0.5)
    assert case.branches[0].rating == pytest.approx(1.2)
    assert case.generators[0].p_max == pytest.approx(2.0)


def test_contingency_islanding_and_labels(case39):
    with pytest.raises(IslandingError):
        netcase.apply_contingency(case39, "2-30")
    post = netcase.apply_contingency(case39, "16-17")
    k = netcase.resolve_branch(case39, "17-16")
    assert not post.branches[k].in_service
    assert case39.branches[k].in_service  # original untouched
    with pytest.raises(ValidationError):
        netcase.resolve_branch(case39, "1-5")
    with pytest.raises(ParseError):
        netcase.resolve_branch(case39, "one-two")


def test_islands_of_radial_spur(case39):
    k = netcase.resolve_branch(case39, "20-34")
    islands = netcase.find_islands(case39, out_of_service=[k])
    assert sorted(map(len, islands)) == [1, 38]


@given(st.floats(0.05, 2.0), st.floats(-0.5, 0.5))
def test_two_bus_receiving_voltage_closed_form(p, q):
    # lossless line: V^4 + (2 q x - 1) V^2 + x^2 (p^2 + q^2) = 0, upper root
    x = 0.1
    disc = (2 * q * x - 1) ** 2 - 4 * x**2 * (p * p + q * q)
    if disc <= 0.05:
        return
    v2 = np.sqrt((1 - 2 * q * x + np.sqrt(disc)) / 2)
    case = NetworkCase(
        (Bus(1, "Slack"), Bus(2, "PQ", p_load=p, q_load=q)),
        (Branch(1, 2, 0.0, x),),
        (Generator(1, p),),
    )
    pf = netcase.solve_powerflow(case)
    assert pf.v_mag[1] == pytest.approx(v2, abs=1e-9)
