import json

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from tslim import netcase, tdsim
from tslim.errors import ParseError, ValidationError
from tslim.loadmodels import ZipCoeffs, ZipModel, default_model
from tslim.loadmodels.motor import OMEGA_BASE
from tslim.netcase import Branch, Bus, Generator, NetworkCase
from tslim.tdsim import (
    BranchTrip,
    FaultClear,
    SimulationConfig,
    StabilityCriteria,
    ThreePhaseFault,
    Trajectory,
    check_stability,
)


def two_machine():
    buses = (Bus(1, "Slack"), Bus(2, "PV"), Bus(3, "PQ", p_load=1.5, q_load=0.5))
    branches = (
        Branch(1, 3, 0.01, 0.10),
        Branch(2, 3, 0.01, 0.15),
        Branch(1, 2, 0.02, 0.20),
    )
    gens = (
        Generator(1, 0.8, v_set=1.02, mva_base=100.0, h=5.0, xdp=0.3, d=2.0, name="A"),
        Generator(2, 0.7, v_set=1.01, mva_base=100.0, h=3.0, xdp=0.25, d=1.0, name="B"),
    )
    return NetworkCase(buses, branches, gens)


def reduced_swing_oracle(case, t_fault, t_clear, t_end, y_fault=-1e5j, fault_bus=3):
    """Classical two-machine model on Kron-reduced internal nodes, solved by solve_ivp."""
    pf = netcase.solve_powerflow(case)
    n = case.n_bus
    gens = case.generators
    gb = [case.bus_index()[g.bus] for g in gens]
    xd = np.array([g.xdp for g in gens])
    vg = pf.voltage[gb]
    sg = pf.p_gen + 1j * pf.q_gen
    e = vg + 1j * xd * np.conj(sg / vg)
    pm = np.real(e * np.conj((e - vg) / (1j * xd)))
    y_load = np.array([(b.p_load - 1j * b.q_load) / abs(pf.voltage[i]) ** 2 for i, b in enumerate(case.buses)])

    def reduced(faulted):
        y = netcase.build_ybus(case) + np.diag(y_load)
        for k, i in enumerate(gb):
            y[i, i] += 1 / (1j * xd[k])
        if faulted:
            y[fault_bus - 1, fault_bus - 1] += y_fault
        ygn = np.zeros((len(gens), n), dtype=complex)
        for k, i in enumerate(gb):
            ygn[k, i] = -1 / (1j * xd[k])
        ygg = np.diag(1 / (1j * xd))
        return ygg - ygn @ np.linalg.solve(y, ygn.T)

    h = np.array([g.h for g in gens])
    dmp = np.array([g.d for g in gens])

    def rhs(yred):
        def f(t, z):
            delta, w = z[:2], z[2:]
            ee = np.abs(e) * np.exp(1j * delta)
            pe = np.real(ee * np.conj(yred @ ee))
            return np.concatenate([OMEGA_BASE * (w - 1), (pm - pe - dmp * (w - 1)) / (2 * h)])
        return f

    z0 = np.concatenate([np.angle(e), np.ones(2)])
    ts = np.arange(0, t_end + 1e-9, 1 / 120)
    out = []
    spans = [(0, t_fault, False), (t_fault, t_clear, True), (t_clear, t_end, False)]
    z = z0
    for a, b, faulted in spans:
        grid = ts[(ts >= a) & (ts <= b)]
        sol = solve_ivp(rhs(reduced(faulted)), (a, b), z, t_eval=grid, rtol=1e-11, atol=1e-12, method="DOP853")
        out.append((grid, sol.y.T))
        z = sol.y[:, -1]
    return out


def test_two_machine_fault_matches_reduced_oracle():
    case = two_machine()
    t_f, t_c = 0.1, 0.1 + 5 / 60
    cfg = SimulationConfig(t_end=1.5, monitored=(3,))
    traj, verdict = tdsim.simulate(case, tdsim.fault_events(3, t_f, 5 / 60), cfg)
    assert verdict.stable
    worst = 0.0
    for grid, z in reduced_swing_oracle(case, t_f, t_c, 1.5):
        for t, row in zip(grid, z):
            # skip the instants of switching, where the recorded sample is post-event
            if min(abs(t - t_f), abs(t - t_c)) < 1e-9:
                continue
            k = int(round(t * 120))
            worst = max(worst, float(np.max(np.abs(traj.delta[k] - row[:2]))))
    assert worst < 1e-5


def test_two_machine_long_fault_is_angle_unstable():
    case = two_machine()
    traj, verdict = tdsim.simulate(case, tdsim.fault_events(2, 0.1, 0.8), SimulationConfig(t_end=3.0))
    assert verdict.kind == "AngleUnstable"
    assert traj.times[-1] < 3.0  # stopped early


def test_flat_run_without_events_stays_at_equilibrium():
    case = two_machine()
    case = case.replace(load_models={3: ZipModel(ZipCoeffs(0.3, 0.3, 0.3, 0.3))})
    traj, verdict = tdsim.simulate(case, [], SimulationConfig(t_end=2.0))
    assert verdict.stable
    for arr in (traj.v, traj.p, traj.q, traj.delta, traj.omega):
        assert np.max(np.abs(arr - arr[0])) < 1e-9


def test_recorded_load_matches_power_flow(case39, pf39):
    model = default_model("zip_im")
    case = case39.replace(load_models={20: model})
    traj, _ = tdsim.simulate(case, [], SimulationConfig(t_end=0.05))
    v, p, q = traj.bus_series(20)
    idx = case39.bus_index()[20]
    assert v[0] == pytest.approx(pf39.v_mag[idx], abs=1e-9)
    assert p[0] == pytest.approx(case39.buses[idx].p_load, abs=1e-9)
    assert q[0] == pytest.approx(case39.buses[idx].q_load, abs=1e-9)


def test_branch_trip_changes_steady_flow():
    case = two_machine()
    events = [BranchTrip(0.2, "1-2")]
    traj, verdict = tdsim.simulate(case, events, SimulationConfig(t_end=1.0, monitored=(3,)))
    assert verdict.stable
    assert traj.v[-1, 0] != pytest.approx(traj.v[0, 0], abs=1e-6)


def test_uncleared_fault_rejected():
    with pytest.raises(ValidationError, match="never cleared"):
        tdsim.simulate(two_machine(), [ThreePhaseFault(0.1, 3)])
    with pytest.raises(ValidationError):
        tdsim.simulate(two_machine(), [ThreePhaseFault(0.1, 9), FaultClear(0.2, 9)])


def test_events_json_round_trip():
    events = [BranchTrip(0.18, "16-17"), ThreePhaseFault(0.1, 16), FaultClear(0.18, 16)]
    doc = json.loads(json.dumps(tdsim.events_to_json(events)))
    again = tdsim.events_from_json(doc)
    assert again == tdsim.sort_events(events)
    assert isinstance(again[0], ThreePhaseFault) and isinstance(again[-1], BranchTrip)
    with pytest.raises(ParseError):
        tdsim.events_from_json([{"kind": "Lightning", "time": 0}])


def test_trajectory_csv_round_trip():
    case = two_machine().replace(load_models={3: ZipModel()})
    traj, _ = tdsim.simulate(case, tdsim.fault_events(3), SimulationConfig(t_end=0.3))
    again = Trajectory.from_csv(traj.to_csv())
    assert again.buses == traj.buses and again.gens == traj.gens
    for name in ("times", "v", "p", "q", "delta", "omega", "ang"):
        assert np.array_equal(getattr(again, name), getattr(traj, name))
    with pytest.raises(ParseError):
        Trajectory.from_csv("x,1:v\n0,1\n")


def test_record_grid_and_event_sample_is_post_event():
    case = two_machine().replace(load_models={3: ZipModel()})
    traj, _ = tdsim.simulate(case, tdsim.fault_events(3, 0.1, 0.05), SimulationConfig(t_end=0.5))
    assert np.allclose(np.diff(traj.times), 1 / 120)
    k = int(round(0.1 * 120))
    assert traj.v[k, 0] < 0.05 < traj.v[k - 1, 0]


def _synthetic(times, v, delta):
    return Trajectory(times=times, buses=(5,), v=v[:, None], p=np.zeros((len(times), 1)),
                      q=np.zeros((len(times), 1)), gens=("a", "b"), delta=delta)


def test_check_stability_rules():
    t = np.linspace(0, 4, 401)
    flat = np.column_stack([np.zeros_like(t), 0.5 * np.ones_like(t)])
    ok = _synthetic(t, np.ones_like(t), flat)
    assert check_stability(ok, t_clear=0.2).stable
    sag = _synthetic(t, np.where(t > 1.0, 0.75, 1.0), flat)
    verdict = check_stability(sag, t_clear=0.2)
    assert verdict.kind == "VoltageUnstable"
    assert verdict.time == pytest.approx(2.2, abs=0.011)
    assert check_stability(sag, StabilityCriteria(check_voltage=False), t_clear=0.2).stable
    swing = _synthetic(t, np.ones_like(t), np.column_stack([np.zeros_like(t), t]))
    verdict = check_stability(swing, t_clear=0.2)
    assert verdict.kind == "AngleUnstable"
    assert verdict.time == pytest.approx(np.pi, abs=0.011)
    both = _synthetic(t, np.where(t > 1.0, 0.75, 1.0), np.column_stack([np.zeros_like(t), t]))
    assert check_stability(both, t_clear=0.2).kind == "VoltageUnstable"  # earliest violation wins


def test_simulation_config_validation():
    with pytest.raises(ValidationError):
        SimulationConfig(dt=0.02, record_dt=0.01)
    with pytest.raises(ParseError):
        SimulationConfig.from_json({"step": 0.01})
    assert SimulationConfig.from_json({"monitored": [3, 4]}).monitored == (3, 4)


def test_clm_lite_fault_runs_and_stalls_motors(case39):
    case = case39.replace(load_models={20: default_model("clm_lite")})
    traj, verdict = tdsim.simulate(case, tdsim.fault_events(20, 0.1, 5 / 60), SimulationConfig(t_end=1.0))
    assert verdict.kind in ("Stable", "VoltageUnstable")
    v, p, _ = traj.bus_series(20)
    assert v.min() < 0.1  # bolted fault at the load bus
    assert np.all(np.isfinite(p))
