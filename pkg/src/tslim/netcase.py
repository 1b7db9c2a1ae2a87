"""Network cases: data model, JSON ingest, admittance matrix, Newton power flow.

Everything inside a :class:`NetworkCase` is per unit on the 100 MVA system
base.  Case files may be written in physical units (MW, MVAr, MVA); they are
converted on load.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import IslandingError, NonConvergence, ParseError, ValidationError

SYSTEM_MVA_BASE = 100.0
BUS_KINDS = ("Slack", "PV", "PQ")


@dataclass(frozen=True)
class Bus:
    id: int
    kind: str
    v_mag: float = 1.0
    v_ang: float = 0.0
    p_load: float = 0.0
    q_load: float = 0.0
    shunt_b: float = 0.0
    area: int = 1


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    r: float
    x: float
    b_charging: float = 0.0
    rating: float = 9999.0
    tap: float = 1.0
    in_service: bool = True

    @property
    def label(self) -> str:
        return f"{self.from_bus}-{self.to_bus}"


@dataclass(frozen=True)
class Generator:
    bus: int
    p_set: float
    v_set: float = 1.0
    q_min: float = -9999.0
    q_max: float = 9999.0
    mva_base: float = SYSTEM_MVA_BASE
    h: float = 5.0
    xdp: float = 0.3
    d: float = 0.0
    name: str = ""
    p_max: float | None = None


@dataclass(frozen=True)
class NetworkCase:
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    generators: tuple[Generator, ...]
    load_models: Mapping[int, object] = field(default_factory=dict)
    areas: tuple[int, ...] = (1,)
    name: str = ""
    seed_profile: bool = False
    system_mva_base: float = SYSTEM_MVA_BASE

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    def bus_index(self) -> dict[int, int]:
        return {b.id: i for i, b in enumerate(self.buses)}

    def gen_names(self) -> list[str]:
        return [g.name or f"gen{g.bus}" for g in self.generators]

    def replace(self, **changes) -> "NetworkCase":
        return dataclasses.replace(self, **changes)


@dataclass
class PowerFlowSolution:
    v_mag: np.ndarray
    v_ang: np.ndarray
    p_gen: np.ndarray
    q_gen: np.ndarray
    converged: bool
    max_mismatch: float
    iterations: int
    bus_kinds: tuple[str, ...]
    trace: list[float] = field(default_factory=list)

    @property
    def voltage(self) -> np.ndarray:
        return self.v_mag * np.exp(1j * self.v_ang)


# --------------------------------------------------------------------------
# ingest


def _require(rec: Mapping, key: str, where: str):
    try:
        return rec[key]
    except KeyError:
        raise ParseError(f"{where}: missing field '{key}'") from None


def case_from_dict(doc: Mapping) -> NetworkCase:
    """Build and validate a case from the parsed JSON document."""
    from .loadmodels import parse_load_model

    for key in ("system", "buses", "branches", "generators"):
        if key not in doc:
            raise ParseError(f"case document lacks top-level key '{key}'")
    system = doc["system"]
    units = system.get("units", "pu")
    if units not in ("pu", "physical"):
        raise ParseError(f"system.units must be 'pu' or 'physical', got {units!r}")
    base = float(system.get("mva_base", SYSTEM_MVA_BASE))
    if base != SYSTEM_MVA_BASE:
        raise ValidationError(f"system.mva_base must be {SYSTEM_MVA_BASE:g}, got {base:g}")
    scale = 1.0 / base if units == "physical" else 1.0
    unbounded = 1e4 / scale / base  # 1e4 MVA expressed in the file's units

    try:
        buses = tuple(
            Bus(
                id=int(_require(b, "id", "bus")),
                kind=str(_require(b, "kind", f"bus {b.get('id')}")),
                v_mag=float(b.get("v_mag", 1.0)),
                v_ang=float(b.get("v_ang", 0.0)),
                p_load=float(b.get("p_load", 0.0)) * scale,
                q_load=float(b.get("q_load", 0.0)) * scale,
                shunt_b=float(b.get("shunt_b", 0.0)),
                area=int(b.get("area", 1)),
            )
            for b in doc["buses"]
        )
        branches = tuple(
            Branch(
                from_bus=int(_require(br, "from", "branch")),
                to_bus=int(_require(br, "to", "branch")),
                r=float(br.get("r", 0.0)),
                x=float(_require(br, "x", f"branch {br.get('from')}-{br.get('to')}")),
                b_charging=float(br.get("b_charging", 0.0)),
                rating=float(br.get("rating", unbounded)) * scale,
                tap=float(br.get("tap", 1.0)) or 1.0,
                in_service=bool(br.get("in_service", True)),
            )
            for br in doc["branches"]
        )
        generators = tuple(
            Generator(
                bus=int(_require(g, "bus", "generator")),
                p_set=float(_require(g, "p_set", f"generator at {g.get('bus')}")) * scale,
                v_set=float(g.get("v_set", 1.0)),
                q_min=float(g.get("q_min", -unbounded)) * scale,
                q_max=float(g.get("q_max", unbounded)) * scale,
                mva_base=float(g.get("mva_base", SYSTEM_MVA_BASE)),
                h=float(g.get("h", 5.0)),
                xdp=float(g.get("xdp", 0.3)),
                d=float(g.get("d", 0.0)),
                name=str(g.get("name", "")),
                p_max=None if g.get("p_max") is None else float(g["p_max"]) * scale,
            )
            for g in doc["generators"]
        )
    except (TypeError, ValueError) as exc:
        raise ParseError(f"malformed record: {exc}") from exc

    load_models = {int(k): parse_load_model(v) for k, v in (doc.get("load_models") or {}).items()}
    areas = tuple(int(a) for a in system.get("areas", sorted({b.area for b in buses})))
    case = NetworkCase(
        buses=buses,
        branches=branches,
        generators=generators,
        load_models=load_models,
        areas=areas,
        name=str(system.get("name", "")),
        seed_profile=bool(system.get("seed_profile", False)),
    )
    validate_case(case)
    return case


def load_case(path) -> NetworkCase:
    """Read a JSON case file (see README for the schema)."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return case_from_dict(doc)


def case_to_dict(case: NetworkCase) -> dict:
    """Inverse of :func:`case_from_dict`, always written in per-unit."""
    from .loadmodels import dump_load_model

    return {
        "system": {
            "name": case.name,
            "mva_base": case.system_mva_base,
            "units": "pu",
            "areas": list(case.areas),
            "seed_profile": case.seed_profile,
        },
        "buses": [dataclasses.asdict(b) for b in case.buses],
        "branches": [
            {
                "from": br.from_bus,
                "to": br.to_bus,
                "r": br.r,
                "x": br.x,
                "b_charging": br.b_charging,
                "rating": br.rating,
                "tap": br.tap,
                "in_service": br.in_service,
            }
            for br in case.branches
        ],
        "generators": [dataclasses.asdict(g) for g in case.generators],
        "load_models": {str(k): dump_load_model(v) for k, v in case.load_models.items()},
    }


def builtin_case(name: str = "ieee39") -> NetworkCase:
    """Load a case shipped in ``tslim/data``."""
    return load_case(Path(__file__).parent / "data" / f"{name}.json")


def validate_case(case: NetworkCase) -> None:
    ids = [b.id for b in case.buses]
    if len(set(ids)) != len(ids):
        raise ValidationError("duplicate bus ids")
    slack = [b.id for b in case.buses if b.kind == "Slack"]
    if len(slack) != 1:
        raise ValidationError(f"exactly one Slack bus required, found {slack or 'none'}")
    for b in case.buses:
        if b.kind not in BUS_KINDS:
            raise ValidationError(f"bus {b.id}: unknown kind {b.kind!r}")
        if not b.v_mag > 0:
            raise ValidationError(f"bus {b.id}: v_mag must be positive")
        if b.area not in case.areas:
            raise ValidationError(f"bus {b.id}: area {b.area} not declared")
    known = set(ids)
    for k, br in enumerate(case.branches):
        tag = f"branch {k} ({br.label})"
        if br.from_bus not in known or br.to_bus not in known:
            raise ValidationError(f"{tag}: endpoint not a bus")
        if br.from_bus == br.to_bus:
            raise ValidationError(f"{tag}: from == to")
        if br.x == 0:
            raise ValidationError(f"{tag}: zero reactance")
        if not br.rating > 0:
            raise ValidationError(f"{tag}: rating must be positive")
    kinds = {b.id: b.kind for b in case.buses}
    for g in case.generators:
        tag = f"generator at bus {g.bus}"
        if g.bus not in known:
            raise ValidationError(f"{tag}: bus does not exist")
        if kinds[g.bus] == "PQ":
            raise ValidationError(f"{tag}: bus is PQ")
        if not (g.h > 0 and g.xdp > 0):
            raise ValidationError(f"{tag}: h and xdp must be positive")
        if g.q_min > g.q_max:
            raise ValidationError(f"{tag}: q_min > q_max")
    for b in case.buses:
        if b.kind != "PQ" and not any(g.bus == b.id for g in case.generators):
            raise ValidationError(f"bus {b.id}: {b.kind} bus without a generator")
    for bus_id in case.load_models:
        if bus_id not in known:
            raise ValidationError(f"load model attached to unknown bus {bus_id}")
    islands = find_islands(case)
    if len(islands) > 1:
        raise ValidationError(f"network is not connected: {len(islands)} islands")


def resolve_branch(case: NetworkCase, ref) -> int:
    """Branch index from an int index or a ``"from-to"`` label (``"from-to#k"`` for parallels)."""
    if isinstance(ref, (int, np.integer)):
        if not 0 <= ref < len(case.branches):
            raise ValidationError(f"branch index {ref} out of range")
        return int(ref)
    text = str(ref)
    label, _, nth = text.partition("#")
    try:
        f, t = (int(p) for p in label.split("-"))
    except ValueError:
        raise ParseError(f"cannot parse branch reference {text!r}") from None
    hits = [k for k, br in enumerate(case.branches) if {br.from_bus, br.to_bus} == {f, t}]
    if not hits:
        raise ValidationError(f"no branch {text}")
    k = int(nth) if nth else 0
    if k >= len(hits):
        raise ValidationError(f"no parallel branch #{k} for {label}")
    return hits[k]


# --------------------------------------------------------------------------
# network matrices


def build_ybus(case: NetworkCase) -> np.ndarray:
    """Dense complex bus admittance matrix in case bus order."""
    idx = case.bus_index()
    n = case.n_bus
    y = np.zeros((n, n), dtype=complex)
    for br in case.branches:
        if not br.in_service:
            continue
        f, t = idx[br.from_bus], idx[br.to_bus]
        ys = 1.0 / complex(br.r, br.x)
        bc = 0.5j * br.b_charging
        tap = br.tap
        y[f, f] += (ys + bc) / tap**2
        y[t, t] += ys + bc
        y[f, t] -= ys / tap
        y[t, f] -= ys / tap
    for i, b in enumerate(case.buses):
        y[i, i] += 1j * b.shunt_b
    return y


def find_islands(case: NetworkCase, out_of_service: Sequence[int] = ()) -> list[set[int]]:
    """Connected components (sets of bus ids) over in-service branches."""
    skip = set(out_of_service)
    adj: dict[int, list[int]] = {b.id: [] for b in case.buses}
    for k, br in enumerate(case.branches):
        if br.in_service and k not in skip:
            adj[br.from_bus].append(br.to_bus)
            adj[br.to_bus].append(br.from_bus)
    seen: set[int] = set()
    islands = []
    for start in adj:
        if start in seen:
            continue
        comp = {start}
        stack = [start]
        while stack:
            for nb in adj[stack.pop()]:
                if nb not in comp:
                    comp.add(nb)
                    stack.append(nb)
        seen |= comp
        islands.append(comp)
    return islands


def apply_contingency(case: NetworkCase, branch) -> NetworkCase:
    """Copy of ``case`` with one branch taken out of service.

    Raises IslandingError when the outage splits the network.
    """
    k = resolve_branch(case, branch)
    br = case.branches[k]
    if not br.in_service:
        raise ValidationError(f"branch {br.label} is already out of service")
    islands = find_islands(case, out_of_service=[k])
    if len(islands) > 1:
        small = min(islands, key=len)
        raise IslandingError(f"outage of {br.label} islands buses {sorted(small)}")
    branches = list(case.branches)
    branches[k] = dataclasses.replace(br, in_service=False)
    return case.replace(branches=tuple(branches))


# --------------------------------------------------------------------------
# power flow


def bus_injections(case: NetworkCase, p_gen: np.ndarray, q_gen: np.ndarray) -> np.ndarray:
    """Scheduled complex injection per bus (generation minus constant-power load)."""
    idx = case.bus_index()
    s = np.array([-complex(b.p_load, b.q_load) for b in case.buses])
    for g, p, q in zip(case.generators, p_gen, q_gen):
        s[idx[g.bus]] += complex(p, q)
    return s


def power_mismatch(ybus: np.ndarray, v: np.ndarray, s_sched: np.ndarray) -> np.ndarray:
    """Complex mismatch ``S_calc - S_sched`` at every bus."""
    return v * np.conj(ybus @ v) - s_sched


def _dsbus_dv(ybus, v):
    ibus = ybus @ v
    diag_v = np.diag(v)
    diag_i = np.diag(ibus)
    diag_vn = np.diag(v / np.abs(v))
    ds_dvm = diag_v @ np.conj(ybus @ diag_vn) + np.conj(diag_i) @ diag_vn
    ds_dva = 1j * diag_v @ np.conj(diag_i - ybus @ diag_v)
    return ds_dvm, ds_dva


def solve_powerflow(
    case: NetworkCase,
    tol: float = 1e-8,
    max_iter: int = 30,
    enforce_q_limits: bool = True,
    flat_start: bool | None = None,
) -> PowerFlowSolution:
    """Full Newton-Raphson on the polar mismatch equations.

    PV buses whose reactive output leaves ``[q_min, q_max]`` are switched to
    PQ at the violated limit (one switching pass per iteration once the
    mismatch is below 1e-3); a switched bus returns to PV if its voltage
    drifts back across the set point.  Raises NonConvergence with the mismatch
    trace when ``max_iter`` is exhausted.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if not any(b.kind == "Slack" for b in case.buses) or any(b.kind not in BUS_KINDS for b in case.buses):
        validate_case(case)
    idx = case.bus_index()
    n = case.n_bus
    ybus = build_ybus(case)
    kinds = [b.kind for b in case.buses]
    if flat_start is None:
        flat_start = not case.seed_profile

    gens_at: dict[int, list[int]] = {}
    for k, g in enumerate(case.generators):
        gens_at.setdefault(idx[g.bus], []).append(k)

    vm = np.ones(n) if flat_start else np.array([b.v_mag for b in case.buses])
    va = np.zeros(n) if flat_start else np.array([b.v_ang for b in case.buses])
    for i, ks in gens_at.items():
        vm[i] = case.generators[ks[0]].v_set

    p_sched = -np.array([b.p_load for b in case.buses])
    q_sched = -np.array([b.q_load for b in case.buses])
    for i, ks in gens_at.items():
        p_sched[i] += sum(case.generators[k].p_set for k in ks)
    q_gen_bus = np.zeros(n)  # generator Q at buses held at a limit
    q_lo = np.full(n, -np.inf)
    q_hi = np.full(n, np.inf)
    for i, ks in gens_at.items():
        q_lo[i] = sum(case.generators[k].q_min for k in ks)
        q_hi[i] = sum(case.generators[k].q_max for k in ks)
    v_set = vm.copy()
    switched: dict[int, str] = {}  # bus index -> "max"/"min"
    switch_passes = 0

    trace: list[float] = []
    iterations = 0
    while True:
        v = vm * np.exp(1j * va)
        s_calc = v * np.conj(ybus @ v)
        pv = [i for i in range(n) if kinds[i] == "PV" and i not in switched]
        pq = [i for i in range(n) if kinds[i] == "PQ" or i in switched]
        non_slack = [i for i in range(n) if kinds[i] != "Slack"]
        dp = s_calc.real[non_slack] - p_sched[non_slack]
        q_target = q_sched[pq] + q_gen_bus[pq]
        dq = s_calc.imag[pq] - q_target
        mis = np.concatenate([dp, dq])
        max_mis = float(np.max(np.abs(mis))) if mis.size else 0.0
        trace.append(max_mis)

        if enforce_q_limits and max_mis < 1e-3 and switch_passes < 4 * n:
            changed = False
            q_net = s_calc.imag - q_sched  # generator Q needed at each bus
            for i in pv:
                if q_net[i] > q_hi[i] + 1e-9:
                    switched[i], q_gen_bus[i] = "max", q_hi[i]
                    changed = True
                elif q_net[i] < q_lo[i] - 1e-9:
                    switched[i], q_gen_bus[i] = "min", q_lo[i]
                    changed = True
            for i, side in list(switched.items()):
                if (side == "max" and vm[i] > v_set[i]) or (side == "min" and vm[i] < v_set[i]):
                    del switched[i]
                    vm[i] = v_set[i]
                    changed = True
            if changed:
                switch_passes += 1
                continue

        if max_mis <= tol:
            break
        if iterations >= max_iter or not np.isfinite(max_mis):
            raise NonConvergence(
                f"power flow did not converge in {max_iter} iterations (mismatch {max_mis:.3e})", trace
            )
        ds_dvm, ds_dva = _dsbus_dv(ybus, v)
        jac = np.block(
            [
                [ds_dva.real[np.ix_(non_slack, non_slack)], ds_dvm.real[np.ix_(non_slack, pq)]],
                [ds_dva.imag[np.ix_(pq, non_slack)], ds_dvm.imag[np.ix_(pq, pq)]],
            ]
        )
        try:
            dx = np.linalg.solve(jac, -mis)
        except np.linalg.LinAlgError as exc:
            raise NonConvergence(f"singular Jacobian: {exc}", trace) from exc
        va[non_slack] += dx[: len(non_slack)]
        vm[pq] += dx[len(non_slack):]
        iterations += 1

    v = vm * np.exp(1j * va)
    s_calc = v * np.conj(ybus @ v)
    s_gen_bus = s_calc + np.array([complex(b.p_load, b.q_load) for b in case.buses])
    p_gen = np.zeros(len(case.generators))
    q_gen = np.zeros(len(case.generators))
    for i, ks in gens_at.items():
        gs = [case.generators[k] for k in ks]
        if kinds[i] == "Slack":
            weights = np.array([g.mva_base for g in gs])
            p_share = s_gen_bus[i].real * weights / weights.sum()
        else:
            p_share = [g.p_set for g in gs]
        q_span = np.array([max(g.q_max - g.q_min, 1e-9) for g in gs])
        q_share = s_gen_bus[i].imag * q_span / q_span.sum()
        for k, p, q in zip(ks, p_share, q_share):
            p_gen[k], q_gen[k] = p, q
    final_kinds = tuple("PQ" if i in switched else kinds[i] for i in range(n))
    return PowerFlowSolution(
        v_mag=vm,
        v_ang=va,
        p_gen=p_gen,
        q_gen=q_gen,
        converged=True,
        max_mismatch=trace[-1],
        iterations=iterations,
        bus_kinds=final_kinds,
        trace=trace,
    )


def branch_flows(case: NetworkCase, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Complex power entering each branch at its from and to ends (zero when out of service)."""
    idx = case.bus_index()
    s_from = np.zeros(len(case.branches), dtype=complex)
    s_to = np.zeros(len(case.branches), dtype=complex)
    for k, br in enumerate(case.branches):
        if not br.in_service:
            continue
        f, t = idx[br.from_bus], idx[br.to_bus]
        ys = 1.0 / complex(br.r, br.x)
        bc = 0.5j * br.b_charging
        i_f = (ys + bc) / br.tap**2 * v[f] - ys / br.tap * v[t]
        i_t = (ys + bc) * v[t] - ys / br.tap * v[f]
        s_from[k] = v[f] * np.conj(i_f)
        s_to[k] = v[t] * np.conj(i_t)
    return s_from, s_to


def branch_loading(case: NetworkCase, v: np.ndarray) -> np.ndarray:
    """Apparent power flow per branch (max of both ends) divided by rating."""
    s_from, s_to = branch_flows(case, v)
    ratings = np.array([br.rating for br in case.branches])
    return np.maximum(np.abs(s_from), np.abs(s_to)) / ratings
