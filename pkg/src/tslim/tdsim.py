"""Fixed-step transient-stability simulation.

Generators use the classical model (constant EMF behind the transient
reactance).  Loads without a dynamic model are converted to constant
impedance at the initial voltage; loads with a model are solved as nonlinear
current injections.  The network is Kron-reduced onto the nonlinear nodes
once per topology, so each algebraic solve is a Newton iteration over a
handful of complex voltages.

Time stepping is classical RK4 for the differential states with a full
network solve in every stage.  Discrete load logic (single-phase motor
stall timers) advances once per accepted step.
"""
from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import AlgebraicDivergence, InitError, ParseError, ValidationError
from .loadmodels.composite import LoadInstance, instantiate
from .loadmodels.motor import OMEGA_BASE
from .netcase import NetworkCase, PowerFlowSolution, build_ybus, resolve_branch, solve_powerflow

DEFAULT_FAULT_ADMITTANCE = -1e5j
FIVE_CYCLES = 5 / 60


# --------------------------------------------------------------------------
# events and configuration


@dataclass(frozen=True)
class ThreePhaseFault:
    time: float
    bus: int
    admittance: complex = DEFAULT_FAULT_ADMITTANCE


@dataclass(frozen=True)
class FaultClear:
    """Removes the fault at ``bus`` (every active fault when ``bus`` is None)."""

    time: float
    bus: int | None = None


@dataclass(frozen=True)
class BranchTrip:
    time: float
    branch: int | str


Event = ThreePhaseFault | FaultClear | BranchTrip


def sort_events(events) -> list:
    """Stable time order; at equal times faults come before clears and trips."""
    rank = {ThreePhaseFault: 0, FaultClear: 1, BranchTrip: 2}
    return sorted(events, key=lambda e: (e.time, rank[type(e)]))


def validate_events(case: NetworkCase, events) -> list:
    events = sort_events(events)
    ids = {b.id for b in case.buses}
    active: set[int] = set()
    for ev in events:
        if ev.time < 0:
            raise ValidationError("event times must be non-negative")
        if isinstance(ev, ThreePhaseFault):
            if ev.bus not in ids:
                raise ValidationError(f"fault at unknown bus {ev.bus}")
            active.add(ev.bus)
        elif isinstance(ev, FaultClear):
            if ev.bus is None:
                active.clear()
            else:
                active.discard(ev.bus)
        else:
            resolve_branch(case, ev.branch)
    if active:
        raise ValidationError(f"fault(s) at {sorted(active)} never cleared")
    return events


def fault_events(bus: int, t_fault: float = 0.1, t_clear: float = FIVE_CYCLES, trip=None,
                 admittance: complex = DEFAULT_FAULT_ADMITTANCE) -> list:
    """Fault at ``bus``, cleared after ``t_clear`` seconds, optionally tripping a branch."""
    events = [ThreePhaseFault(t_fault, bus, admittance), FaultClear(t_fault + t_clear, bus)]
    if trip is not None:
        events.append(BranchTrip(t_fault + t_clear, trip))
    return events


def events_from_json(doc) -> list:
    if isinstance(doc, dict):
        doc = doc.get("events", [])
    out = []
    for rec in doc:
        kind = rec.get("kind")
        try:
            if kind == "ThreePhaseFault":
                y = rec.get("fault_admittance", [0.0, DEFAULT_FAULT_ADMITTANCE.imag])
                out.append(ThreePhaseFault(float(rec["time"]), int(rec["bus"]), complex(y[0], y[1])))
            elif kind == "FaultClear":
                out.append(FaultClear(float(rec["time"]), None if rec.get("bus") is None else int(rec["bus"])))
            elif kind == "BranchTrip":
                out.append(BranchTrip(float(rec["time"]), rec["branch"]))
            else:
                raise ParseError(f"unknown event kind {kind!r}")
        except KeyError as exc:
            raise ParseError(f"event {rec} lacks field {exc}") from exc
    return sort_events(out)


def events_to_json(events) -> list:
    out = []
    for ev in sort_events(events):
        if isinstance(ev, ThreePhaseFault):
            out.append({"kind": "ThreePhaseFault", "time": ev.time, "bus": ev.bus,
                        "fault_admittance": [ev.admittance.real, ev.admittance.imag]})
        elif isinstance(ev, FaultClear):
            out.append({"kind": "FaultClear", "time": ev.time, "bus": ev.bus})
        else:
            out.append({"kind": "BranchTrip", "time": ev.time, "branch": ev.branch})
    return out


def clearing_time(events) -> float:
    """Time of the last disturbance-ending event (0 when there is none)."""
    times = [e.time for e in events if isinstance(e, (FaultClear, BranchTrip))]
    return max(times, default=0.0)


@dataclass(frozen=True)
class SimulationConfig:
    dt: float = 1 / 240
    t_end: float = 10.0
    record_dt: float = 1 / 120
    solver_tol: float = 1e-9
    max_alg_iter: int = 25
    monitored: tuple[int, ...] | None = None
    stop_on_instability: bool = True

    def __post_init__(self):
        if not (0 < self.dt <= self.record_dt + 1e-15):
            raise ValidationError("need 0 < dt <= record_dt")
        if self.t_end <= 0:
            raise ValidationError("t_end must be positive")

    @classmethod
    def from_json(cls, doc):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - names
        if unknown:
            raise ParseError(f"unknown simulation config fields {sorted(unknown)}")
        doc = dict(doc)
        if doc.get("monitored") is not None:
            doc["monitored"] = tuple(int(b) for b in doc["monitored"])
        return cls(**doc)


@dataclass(frozen=True)
class StabilityCriteria:
    max_angle_spread: float = math.pi
    v_recovery_floor: float = 0.8
    v_recovery_deadline: float = 2.0
    check_angle: bool = True
    check_voltage: bool = True

    def __post_init__(self):
        if min(self.max_angle_spread, self.v_recovery_floor, self.v_recovery_deadline) <= 0:
            raise ValidationError("stability thresholds must be positive")


@dataclass(frozen=True)
class Verdict:
    kind: str  # Stable | AngleUnstable | VoltageUnstable | NumericalFailure
    time: float | None = None
    detail: str = ""

    @property
    def stable(self) -> bool:
        return self.kind == "Stable"


# --------------------------------------------------------------------------
# trajectories


@dataclass
class Trajectory:
    times: np.ndarray
    buses: tuple[int, ...]
    v: np.ndarray  # (T, n_bus)
    p: np.ndarray
    q: np.ndarray
    gens: tuple[str, ...] = ()
    delta: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    omega: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    t_clear: float = 0.0
    ang: np.ndarray | None = None  # bus voltage angles (rad); optional

    def column(self, bus: int) -> int:
        try:
            return self.buses.index(bus)
        except ValueError:
            raise KeyError(f"bus {bus} is not in the trajectory") from None

    def bus_series(self, bus: int):
        """(v, p, q) series of one monitored bus."""
        k = self.column(bus)
        return self.v[:, k], self.p[:, k], self.q[:, k]

    def bus_voltage(self, bus: int) -> np.ndarray:
        """Complex voltage series (angle zero when angles were not recorded)."""
        k = self.column(bus)
        ang = np.zeros(len(self.times)) if self.ang is None else self.ang[:, k]
        return self.v[:, k] * np.exp(1j * ang)

    def to_csv(self, path=None) -> str:
        header = ["t"]
        with_ang = self.ang is not None
        for b in self.buses:
            header += [f"{b}:v", f"{b}:p", f"{b}:q"] + ([f"{b}:a"] if with_ang else [])
        for g in self.gens:
            header += [f"{g}:delta", f"{g}:omega"]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for i, t in enumerate(self.times):
            row = [repr(float(t))]
            for k in range(len(self.buses)):
                row += [repr(float(self.v[i, k])), repr(float(self.p[i, k])), repr(float(self.q[i, k]))]
                if with_ang:
                    row.append(repr(float(self.ang[i, k])))
            for k in range(len(self.gens)):
                row += [repr(float(self.delta[i, k])), repr(float(self.omega[i, k]))]
            w.writerow(row)
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, path_or_text) -> "Trajectory":
        text = str(path_or_text)
        if "\n" not in text:
            text = Path(text).read_text()
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or rows[0][0] != "t":
            raise ParseError("trajectory CSV must start with a 't' column")
        header = rows[0]
        data = np.array([[float(x) for x in r] for r in rows[1:] if r], dtype=float).reshape(-1, len(header))
        buses, gens = [], []
        for name in header[1:]:
            key, _, chan = name.rpartition(":")
            if chan == "v":
                buses.append(int(key))
            elif chan == "delta":
                gens.append(key)
            elif chan not in ("p", "q", "a", "omega"):
                raise ParseError(f"unknown trajectory column {name!r}")
        pos = {name: i for i, name in enumerate(header)}

        def grab(names):
            if not names:
                return np.zeros((len(data), 0))
            return np.column_stack([data[:, pos[n]] for n in names])

        try:
            return cls(
                times=data[:, 0].copy(),
                buses=tuple(buses),
                v=grab([f"{b}:v" for b in buses]),
                p=grab([f"{b}:p" for b in buses]),
                q=grab([f"{b}:q" for b in buses]),
                gens=tuple(gens),
                delta=grab([f"{g}:delta" for g in gens]),
                omega=grab([f"{g}:omega" for g in gens]),
                ang=grab([f"{b}:a" for b in buses]) if all(f"{b}:a" in pos for b in buses) and buses else None,
            )
        except KeyError as exc:
            raise ParseError(f"trajectory CSV lacks column {exc}") from exc


def check_stability(traj: Trajectory, criteria: StabilityCriteria = StabilityCriteria(),
                    t_clear: float | None = None) -> Verdict:
    """Angle-spread and voltage-recovery verdict for a finished trajectory."""
    t_clear = traj.t_clear if t_clear is None else t_clear
    first = []
    if criteria.check_angle and traj.delta.size:
        spread = traj.delta.max(axis=1) - traj.delta.min(axis=1)
        bad = np.nonzero(spread > criteria.max_angle_spread)[0]
        if bad.size:
            first.append((traj.times[bad[0]], "AngleUnstable", f"angle spread {spread[bad[0]]:.3f} rad"))
    if criteria.check_voltage and traj.v.size:
        late = traj.times >= t_clear + criteria.v_recovery_deadline - 1e-9
        low = late[:, None] & (traj.v < criteria.v_recovery_floor)
        rows = np.nonzero(low.any(axis=1))[0]
        if rows.size:
            k = int(np.argmax(low[rows[0]]))
            first.append((traj.times[rows[0]], "VoltageUnstable",
                          f"bus {traj.buses[k]} at {traj.v[rows[0], k]:.3f} p.u."))
    if not first:
        return Verdict("Stable")
    t, kind, detail = min(first, key=lambda x: x[0])
    return Verdict(kind, float(t), detail)


# --------------------------------------------------------------------------
# dynamic model


@dataclass
class _LoadNode:
    bus: int
    bus_idx: int
    node: int  # network node carrying the nonlinear injection
    tap: float
    inst: LoadInstance
    span: slice  # position of the load states in the state vector


@dataclass
class DynamicState:
    t: float
    x: np.ndarray  # [delta (ng), omega (ng), load states...]
    d: list  # discrete state per load node
    v: np.ndarray  # node voltages consistent with x and d


class DynamicSystem:
    """Initialised dynamic model of a case around a power-flow solution."""

    def __init__(self, case: NetworkCase, pf: PowerFlowSolution):
        if not pf.converged:
            raise InitError("power flow did not converge")
        self.case = case
        self.idx = case.bus_index()
        n = case.n_bus
        v0 = pf.voltage
        gens = case.generators
        ng = len(gens)
        self.ng = ng
        self.gen_bus = np.array([self.idx[g.bus] for g in gens], dtype=int)
        self.xdp = np.array([g.xdp * 100.0 / g.mva_base for g in gens])
        self.h = np.array([g.h * g.mva_base / 100.0 for g in gens])
        self.damp = np.array([g.d * g.mva_base / 100.0 for g in gens])
        s_gen = pf.p_gen + 1j * pf.q_gen
        vg = v0[self.gen_bus]
        e = vg + 1j * self.xdp * np.conj(s_gen / vg)
        self.e_mag = np.abs(e)
        if np.any(self.e_mag <= 0):
            raise InitError("generator internal voltage must be positive")
        self.pm = np.real(e * np.conj((e - vg) / (1j * self.xdp)))

        # loads: nonlinear nodes for modelled buses, constant impedance elsewhere
        y_extra: list[tuple[int, int, complex]] = []  # (i, j, admittance) series/shunt pieces
        y_shunt = np.zeros(n, dtype=complex)
        self.loads: list[_LoadNode] = []
        self.const_y = np.zeros(n, dtype=complex)
        n_nodes = n
        pos = 2 * ng
        v_nodes0 = list(v0)
        for i, b in enumerate(case.buses):
            model = case.load_models.get(b.id)
            if model is None:
                self.const_y[i] = (b.p_load - 1j * b.q_load) / abs(v0[i]) ** 2
                continue
            inst = instantiate(model, v0[i], b.p_load, b.q_load)
            tap = inst.feeder.tap if inst.feeder is not None else 1.0
            node = i
            if inst.feeder is not None:
                fd = inst.feeder
                y_shunt[i] += 1j * fd.b / tap**2
                if np.all(fd.z == 0):
                    node = i
                else:
                    node = n_nodes
                    n_nodes += 1
                    y_extra.append((i, node, 1.0 / (tap**2 * complex(fd.z))))
                    v_nodes0.append(tap * complex(inst.v_end0))
            k = int(np.asarray(inst.x0).shape[0])
            self.loads.append(_LoadNode(b.id, i, node, tap, inst, slice(pos, pos + k)))
            pos += k
        self.n_nodes = n_nodes
        self.n_state = pos
        self.y_shunt = y_shunt
        self.y_extra = y_extra
        self.l_nodes = np.array([ld.node for ld in self.loads], dtype=int)
        self.v_nodes0 = np.array(v_nodes0, dtype=complex)
        self._zcache: dict = {}
        self._jac: dict = {}

        x0 = np.zeros(pos)
        x0[:ng] = np.angle(e)
        x0[ng : 2 * ng] = 1.0
        for ld in self.loads:
            x0[ld.span] = np.asarray(ld.inst.x0, dtype=float).reshape(-1)
        self.x0 = x0
        self.d0 = [ld.inst.d0 for ld in self.loads]

    # network ---------------------------------------------------------------

    def admittance(self, tripped=frozenset(), faults=()) -> np.ndarray:
        case = self.case
        if tripped:
            branches = tuple(dataclasses.replace(br, in_service=False) if k in tripped else br
                             for k, br in enumerate(case.branches))
            case = case.replace(branches=branches)
        n, m = case.n_bus, self.n_nodes
        y = np.zeros((m, m), dtype=complex)
        y[:n, :n] = build_ybus(case)
        y[np.arange(n), np.arange(n)] += self.const_y + self.y_shunt
        for i, j, ys in self.y_extra:
            y[i, i] += ys
            y[j, j] += ys
            y[i, j] -= ys
            y[j, i] -= ys
        for gb, x in zip(self.gen_bus, self.xdp):
            y[gb, gb] += 1.0 / (1j * x)
        for bus, adm in faults:
            y[self.idx[bus], self.idx[bus]] += adm
        return y

    def impedance(self, topo):
        """Inverse admittance plus the reduced blocks used by the Newton solve."""
        if topo not in self._zcache:
            tripped, faults = topo
            y = self.admittance(tripped, faults)
            try:
                z = np.linalg.inv(y)
            except np.linalg.LinAlgError as exc:
                raise AlgebraicDivergence(f"singular network admittance: {exc}") from exc
            zg = z[:, self.gen_bus] / (1j * self.xdp)  # node voltage per unit EMF
            zl = z[:, self.l_nodes]
            self._zcache[topo] = (zg, zl, zg[self.l_nodes], zl[self.l_nodes])
        return self._zcache[topo]

    def _load_current(self, x, d, vl):
        """Injected current (negative of consumption) at every load node."""
        out = np.empty(len(self.loads), dtype=complex)
        for k, ld in enumerate(self.loads):
            s = ld.inst.end_power(x[ld.span], d[k], vl[k] / ld.tap)
            out[k] = -np.conj(s / vl[k])
        return out

    def solve_network(self, x, d, topo, guess, tol, max_iter):
        zg, zl, zg_l, zl_l = self.impedance(topo)
        ng = self.ng
        emf = self.e_mag * np.exp(1j * x[:ng])
        if not len(self.loads):
            return zg @ emf
        base = zg_l @ emf
        vl = np.asarray(guess, dtype=complex).copy()

        def resid(v):
            return v - base - zl_l @ self._load_current(x, d, v)

        r = resid(vl)
        nl = len(vl)
        h = 1e-7

        def jacobian():
            jac = np.empty((2 * nl, 2 * nl))
            for k in range(nl):
                for c, step in enumerate((h, 1j * h)):
                    dv = np.zeros(nl, dtype=complex)
                    dv[k] = step
                    col = (resid(vl + dv) - r) / h
                    jac[:nl, 2 * k + c] = col.real
                    jac[nl:, 2 * k + c] = col.imag
            return jac

        # chord iterations on the last Jacobian of this topology; refresh it
        # whenever the contraction is poor
        jac = self._jac.get(topo)
        fresh = False
        for _ in range(max_iter):
            err = np.max(np.abs(r))
            if err <= tol:
                break
            if jac is None:
                jac, fresh = jacobian(), True
                self._jac[topo] = jac
            try:
                dx = np.linalg.solve(jac, -np.concatenate([r.real, r.imag]))
            except np.linalg.LinAlgError as exc:
                raise AlgebraicDivergence(f"singular network Jacobian: {exc}") from exc
            step = dx.reshape(nl, 2)[:, 0] + 1j * dx.reshape(nl, 2)[:, 1]
            trial = vl + step
            rt = resid(trial) if np.all(np.abs(trial) > 1e-6) else np.full(nl, np.inf)
            err_t = np.max(np.abs(rt))
            if np.isfinite(err_t) and err_t < 0.25 * err:
                vl, r = trial, rt
                continue
            if not fresh:
                jac = None
                continue
            # fresh Jacobian and still poor progress: damp the step
            lam = 1.0
            while not (np.isfinite(err_t) and err_t < err):
                lam *= 0.5
                if lam < 1 / 1024:
                    raise AlgebraicDivergence("network solve failed to reduce the residual")
                trial = vl + lam * step
                rt = resid(trial) if np.all(np.abs(trial) > 1e-6) else np.full(nl, np.inf)
                err_t = np.max(np.abs(rt))
            vl, r = trial, rt
            jac, fresh = None, False
        else:
            if np.max(np.abs(r)) > tol:
                raise AlgebraicDivergence(f"network solve residual {np.max(np.abs(r)):.2e} after {max_iter} iterations")
        return zg @ emf + zl @ self._load_current(x, d, vl)

    # dynamics --------------------------------------------------------------

    def derivatives(self, x, d, v):
        ng = self.ng
        dx = np.zeros_like(x)
        emf = self.e_mag * np.exp(1j * x[:ng])
        i_gen = (emf - v[self.gen_bus]) / (1j * self.xdp)
        pe = np.real(emf * np.conj(i_gen))
        slip = x[ng : 2 * ng] - 1.0
        dx[:ng] = OMEGA_BASE * slip
        dx[ng : 2 * ng] = (self.pm - pe - self.damp * slip) / (2 * self.h)
        for k, ld in enumerate(self.loads):
            if ld.span.stop > ld.span.start:
                vn = v[ld.node] / ld.tap
                dx[ld.span] = ld.inst.end_derivatives(x[ld.span], d[k], vn)
        return dx

    def update_discrete(self, d, v, dt):
        out = []
        for k, ld in enumerate(self.loads):
            out.append(ld.inst.update_discrete(d[k], v[ld.node] / ld.tap, dt))
        return out

    def bus_consumption(self, x, d, v):
        """Complex consumption of the load at every case bus."""
        n = self.case.n_bus
        s = np.conj(self.const_y) * np.abs(v[:n]) ** 2
        for k, ld in enumerate(self.loads):
            vs = v[ld.bus_idx]
            p, q = ld.inst.injection(x[ld.span], d[k], vs, v_end=v[ld.node] / ld.tap)
            s[ld.bus_idx] = p + 1j * q
        return s

    def initial_state(self) -> DynamicState:
        topo = (frozenset(), ())
        v = self.solve_network(self.x0, self.d0, topo, self.v_nodes0[self.l_nodes], 1e-12, 50)
        return DynamicState(0.0, self.x0.copy(), list(self.d0), v)


def initialize_dynamics(case: NetworkCase, pf: PowerFlowSolution | None = None) -> DynamicSystem:
    """Back-solve generator EMFs and initialise every load model."""
    if pf is None:
        pf = solve_powerflow(case)
    return DynamicSystem(case, pf)


def _running(d):
    return [None if s is None else np.asarray(s.running).copy() for s in d]


def _same(a, b):
    return all((x is None and y is None) or np.array_equal(x, y) for x, y in zip(a, b))


def simulate(case: NetworkCase, events=(), config: SimulationConfig = SimulationConfig(),
             criteria: StabilityCriteria = StabilityCriteria(), pf: PowerFlowSolution | None = None,
             system: DynamicSystem | None = None):
    """Run one event sequence; returns ``(Trajectory, Verdict)``.

    Numerical failures end the run early with a NumericalFailure verdict;
    when ``config.stop_on_instability`` is set, runs also stop as soon as the
    angle criterion is violated.
    """
    events = validate_events(case, events)
    sysm = system if system is not None else initialize_dynamics(case, pf)
    idx = sysm.idx
    monitored = config.monitored
    if monitored is None:
        monitored = tuple(sorted(case.load_models))
    mon_idx = np.array([idx[b] for b in monitored], dtype=int)
    t_clear = clearing_time(events)

    state = sysm.initial_state()
    tripped: set[int] = set()
    faults: dict[int, complex] = {}

    def topo():
        return frozenset(tripped), tuple(sorted(faults.items()))

    n_rec = int(math.floor(config.t_end / config.record_dt + 1e-9)) + 1
    rec_times = np.arange(n_rec) * config.record_dt
    T = []
    V, A, P, Q, D, W = [], [], [], [], [], []
    ng = sysm.ng

    def record(st):
        s = sysm.bus_consumption(st.x, st.d, st.v)
        T.append(st.t)
        V.append(np.abs(st.v[mon_idx]))
        A.append(np.angle(st.v[mon_idx]))
        P.append(s.real[mon_idx])
        Q.append(s.imag[mon_idx])
        D.append(st.x[:ng].copy())
        W.append(st.x[ng : 2 * ng].copy())

    tol, max_it = config.solver_tol, config.max_alg_iter
    verdict = None
    ev_pos = 0
    # integration breakpoints: record instants plus event instants, with
    # event times snapped onto the record grid when they coincide with it
    marks: dict[float, bool] = {float(t): True for t in rec_times}
    for e in events:
        if e.time <= config.t_end and not np.any(np.isclose(e.time, rec_times, atol=1e-9, rtol=0)):
            marks[float(e.time)] = False
    breakpoints = sorted(marks.items())
    x, d, v = state.x, state.d, state.v
    t = 0.0
    try:
        for tb, is_record in breakpoints:
            # integrate from t to tb in equal sub-steps no longer than dt
            span = tb - t
            if span > 1e-12:
                n_sub = max(1, int(math.ceil(span / config.dt - 1e-9)))
                h = span / n_sub
                for _ in range(n_sub):
                    x, d, v = _rk4(sysm, x, d, v, topo(), h, tol, max_it)
            t = tb
            # events at this instant
            changed = False
            while ev_pos < len(events) and events[ev_pos].time <= t + 1e-9:
                ev = events[ev_pos]
                if isinstance(ev, ThreePhaseFault):
                    faults[ev.bus] = faults.get(ev.bus, 0) + ev.admittance
                elif isinstance(ev, FaultClear):
                    if ev.bus is None:
                        faults.clear()
                    else:
                        faults.pop(ev.bus, None)
                else:
                    tripped.add(resolve_branch(case, ev.branch))
                ev_pos += 1
                changed = True
            if changed:
                v = sysm.solve_network(x, d, topo(), v[sysm.l_nodes], tol, max_it)
            if not np.all(np.isfinite(x)):
                raise AlgebraicDivergence("non-finite state")
            if is_record:
                record(DynamicState(t, x, d, v))
                if config.stop_on_instability and criteria.check_angle:
                    spread = x[:ng].max() - x[:ng].min() if ng else 0.0
                    if spread > criteria.max_angle_spread:
                        verdict = Verdict("AngleUnstable", t, f"angle spread {spread:.3f} rad")
                        break
    except AlgebraicDivergence as exc:
        verdict = Verdict("NumericalFailure", t, str(exc))

    traj = Trajectory(
        times=np.array(T),
        buses=tuple(monitored),
        v=np.array(V).reshape(len(T), len(monitored)),
        p=np.array(P).reshape(len(T), len(monitored)),
        q=np.array(Q).reshape(len(T), len(monitored)),
        gens=tuple(case.gen_names()),
        delta=np.array(D).reshape(len(T), ng),
        omega=np.array(W).reshape(len(T), ng),
        t_clear=t_clear,
        ang=np.array(A).reshape(len(T), len(monitored)),
    )
    if verdict is None:
        verdict = check_stability(traj, criteria)
    return traj, verdict


def _rk4(sysm: DynamicSystem, x, d, v, topo, h, tol, max_it):
    lg = sysm.l_nodes
    k1 = sysm.derivatives(x, d, v)
    x2 = x + 0.5 * h * k1
    v2 = sysm.solve_network(x2, d, topo, v[lg], tol, max_it)
    k2 = sysm.derivatives(x2, d, v2)
    x3 = x + 0.5 * h * k2
    v3 = sysm.solve_network(x3, d, topo, v2[lg], tol, max_it)
    k3 = sysm.derivatives(x3, d, v3)
    x4 = x + h * k3
    v4 = sysm.solve_network(x4, d, topo, v3[lg], tol, max_it)
    k4 = sysm.derivatives(x4, d, v4)
    x_new = x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    v_new = sysm.solve_network(x_new, d, topo, v4[lg], tol, max_it)
    d_new = sysm.update_discrete(d, v_new, h)
    if not _same(_running(d_new), _running(d)):
        v_new = sysm.solve_network(x_new, d_new, topo, v_new[lg], tol, max_it)
    return x_new, d_new, v_new


def load_config(path) -> SimulationConfig:
    return SimulationConfig.from_json(json.loads(Path(path).read_text()))
