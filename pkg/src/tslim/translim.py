"""Transfer limits between areas under N-1 static and dynamic screening.

The sink bus load is raised in steps of ``delta_p`` from its base value while
source generators pick up the increase in proportion to their set points.
At each level every single-branch outage is checked statically (post-outage
power flow and branch ratings) and dynamically (fault at one end of the
branch, branch tripped at clearing).  The transfer limit is the last level at
which every contingency passes.
"""
from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BaseInfeasible,
    IslandingError,
    NonConvergence,
    SourceCapacityExceeded,
    ValidationError,
)
from .netcase import NetworkCase, apply_contingency, branch_loading, resolve_branch, solve_powerflow
from .tdsim import (
    FIVE_CYCLES,
    BranchTrip,
    FaultClear,
    SimulationConfig,
    StabilityCriteria,
    ThreePhaseFault,
    initialize_dynamics,
    simulate,
)

log = logging.getLogger(__name__)

CRITERIA = ("PowerFlowDiverged", "Thermal", "AngleUnstable", "VoltageUnstable", "NumericalFailure")
_RANK = {c: i for i, c in enumerate(CRITERIA)}


@dataclass(frozen=True)
class FaultTemplate:
    """Fault applied per contingency; ``end`` picks the faulted branch terminal."""

    t_fault: float = 0.1
    clearing: float = FIVE_CYCLES
    admittance: complex = -1e5j
    end: str = "from"
    t_end: float = 3.0
    dt: float = 1.0 / 240.0
    record_dt: float = 1.0 / 120.0

    def __post_init__(self):
        if self.end not in ("from", "to"):
            raise ValidationError("fault end must be 'from' or 'to'")
        if self.clearing <= 0 or self.t_fault < 0 or self.t_end <= self.t_fault + self.clearing:
            raise ValidationError("fault template times are inconsistent")

    def events(self, case: NetworkCase, branch: int):
        br = case.branches[branch]
        bus = br.from_bus if self.end == "from" else br.to_bus
        t_clear = self.t_fault + self.clearing
        return [
            ThreePhaseFault(self.t_fault, bus, self.admittance),
            FaultClear(t_clear, bus),
            BranchTrip(t_clear, br.label),
        ]

    def config(self) -> SimulationConfig:
        return SimulationConfig(dt=self.dt, t_end=self.t_end, record_dt=self.record_dt)


@dataclass(frozen=True)
class TransferStudy:
    source_gens: tuple  # generator names or generator bus ids
    sink_bus: int
    delta_p: float  # MW
    p_cap: float  # MW
    p_base: float | None = None  # MW; None takes the case's sink load
    tie_lines: tuple = ()
    contingencies: tuple | None = None  # None: every single-branch outage
    fault: FaultTemplate = FaultTemplate()
    criteria: StabilityCriteria = StabilityCriteria()
    static_check: bool = True
    dynamic_check: bool = True
    exclude_islanding: bool = True
    assume_monotone: bool = False
    name: str = ""

    def __post_init__(self):
        if not self.delta_p > 0:
            raise ValidationError("delta_p must be positive")
        if not self.source_gens:
            raise ValidationError("at least one source generator is required")

    @classmethod
    def from_json(cls, doc) -> "TransferStudy":
        doc = dict(doc)
        if "fault" in doc:
            f = dict(doc["fault"])
            if "admittance" in f:
                f["admittance"] = _complex(f["admittance"])
            doc["fault"] = FaultTemplate(**f)
        if "criteria" in doc:
            doc["criteria"] = StabilityCriteria(**doc["criteria"])
        for key in ("source_gens", "tie_lines"):
            if key in doc:
                doc[key] = tuple(doc[key])
        if doc.get("contingencies") is not None:
            doc["contingencies"] = tuple(doc["contingencies"])
        return cls(**doc)

    def to_json(self) -> dict:
        doc = dataclasses.asdict(self)
        doc["fault"]["admittance"] = [self.fault.admittance.real, self.fault.admittance.imag]
        for key in ("source_gens", "tie_lines"):
            doc[key] = list(doc[key])
        if doc["contingencies"] is not None:
            doc["contingencies"] = list(doc["contingencies"])
        return doc


def _complex(x) -> complex:
    if isinstance(x, (list, tuple)):
        return complex(float(x[0]), float(x[1]))
    return complex(x)


def load_study(path) -> TransferStudy:
    with open(path) as fh:
        return TransferStudy.from_json(json.load(fh))


@dataclass
class ContingencyOutcome:
    branch: str
    static: str  # "ok", "Thermal", "PowerFlowDiverged", "Islanding", "skipped"
    dynamic: str  # a verdict kind, "Islanding" or "skipped"
    detail: str = ""
    max_loading: float = 0.0
    time: float | None = None  # instability time for dynamic failures

    @property
    def passed(self) -> bool:
        return self.static in ("ok", "skipped") and self.dynamic in ("Stable", "skipped")

    @property
    def criterion(self) -> str | None:
        if self.static in ("Thermal", "PowerFlowDiverged"):
            return self.static
        if self.dynamic in ("AngleUnstable", "VoltageUnstable", "NumericalFailure"):
            return self.dynamic
        return None


@dataclass
class StepRecord:
    p_level: float
    static_ok: bool
    dynamic_ok: bool
    feasible: bool
    worst_contingency: str | None
    binding_criterion: str | None
    outcomes: dict = field(default_factory=dict)  # branch label -> ContingencyOutcome
    excluded: tuple = ()  # islanding outages left out of the verdict

    @property
    def verdicts(self) -> dict:
        return {k: (o.static, o.dynamic) for k, o in self.outcomes.items()}


@dataclass
class LimitResult:
    p_max: float
    binding_contingency: str | None
    binding_criterion: str | None
    steps: list
    at_cap: bool = False
    nonmonotone: list = field(default_factory=list)  # feasible levels above an infeasible one
    study: str = ""
    below_base: bool = False  # the base level itself failed; p_max is then that level

    @classmethod
    def from_base_failure(cls, err: BaseInfeasible, study: str = "") -> "LimitResult":
        """Record of a search that stopped at an infeasible base level."""
        rec = err.record
        return cls(rec.p_level, rec.worst_contingency, rec.binding_criterion, [rec], study=study, below_base=True)

    def as_dict(self) -> dict:
        return {
            "study": self.study,
            "p_max_mw": self.p_max,
            "binding_contingency": self.binding_contingency,
            "binding_criterion": self.binding_criterion,
            "at_cap": self.at_cap,
            "below_base": self.below_base,
            "nonmonotone_levels_mw": list(self.nonmonotone),
            "levels_assessed": len(self.steps),
        }


# --------------------------------------------------------------------------
# operating point


def _source_indices(case: NetworkCase, study: TransferStudy) -> list[int]:
    names = case.gen_names()
    out = []
    for ref in study.source_gens:
        if isinstance(ref, str) and ref in names:
            out.append(names.index(ref))
            continue
        try:
            bus = int(ref)
        except (TypeError, ValueError):
            raise ValidationError(f"unknown source generator {ref!r}") from None
        hits = [k for k, g in enumerate(case.generators) if g.bus == bus]
        if not hits:
            raise ValidationError(f"no generator at bus {bus}")
        out.extend(hits)
    return sorted(set(out))


def _sink(case: NetworkCase, study: TransferStudy):
    for k, b in enumerate(case.buses):
        if b.id == study.sink_bus:
            return k, b
    raise ValidationError(f"sink bus {study.sink_bus} not in case")


def base_level(case: NetworkCase, study: TransferStudy) -> float:
    """Base sink load in MW (the study's value, checked against the case)."""
    _, bus = _sink(case, study)
    actual = bus.p_load * case.system_mva_base
    if study.p_base is None:
        return actual
    if abs(study.p_base - actual) > 1e-6 * max(1.0, abs(actual)):
        raise ValidationError(f"study p_base {study.p_base} MW differs from the case sink load {actual} MW")
    return float(study.p_base)


def scale_operating_point(case: NetworkCase, study: TransferStudy, p_level: float) -> NetworkCase:
    """Sink load raised to ``p_level`` MW at constant power factor.

    The increase is shared by the source generators in proportion to their
    set points (equally if all set points are zero).
    """
    p_base = base_level(case, study)
    if p_level < p_base - 1e-9:
        raise ValidationError(f"level {p_level} MW is below the base {p_base} MW")
    if p_level == p_base:
        return case
    base = case.system_mva_base
    k, bus = _sink(case, study)
    p_new = p_level / base
    q_new = bus.q_load * (p_new / bus.p_load) if bus.p_load != 0 else bus.q_load
    buses = list(case.buses)
    buses[k] = dataclasses.replace(bus, p_load=p_new, q_load=q_new)
    src = _source_indices(case, study)
    gens = list(case.generators)
    weights = np.array([max(gens[i].p_set, 0.0) for i in src])
    if weights.sum() <= 0:
        weights = np.ones(len(src))
    share = (p_new - bus.p_load) * weights / weights.sum()
    for i, dp in zip(src, share):
        g = gens[i]
        p_set = g.p_set + float(dp)
        if g.p_max is not None and p_set > g.p_max + 1e-12:
            raise SourceCapacityExceeded(
                f"{case.gen_names()[i]} would need {p_set * base:.1f} MW (ceiling {g.p_max * base:.1f} MW)"
            )
        gens[i] = dataclasses.replace(g, p_set=p_set)
    return case.replace(buses=tuple(buses), generators=tuple(gens))


# --------------------------------------------------------------------------
# screening


def contingency_list(case: NetworkCase, study: TransferStudy) -> list[int]:
    if study.contingencies is None:
        return [k for k, br in enumerate(case.branches) if br.in_service]
    return sorted({resolve_branch(case, ref) for ref in study.contingencies})


def _label(case: NetworkCase, k: int) -> str:
    br = case.branches[k]
    same = [j for j, b in enumerate(case.branches) if {b.from_bus, b.to_bus} == {br.from_bus, br.to_bus}]
    return br.label if len(same) == 1 else f"{br.label}#{same.index(k)}"


def _overloaded(case: NetworkCase, v) -> float:
    loading = branch_loading(case, v)
    live = np.array([br.in_service for br in case.branches])
    return float(loading[live].max()) if live.any() else 0.0


def assess_contingency(case: NetworkCase, study: TransferStudy, k: int, pf, system=None) -> ContingencyOutcome:
    """Static and dynamic checks of one outage at an already scaled point."""
    label = _label(case, k)
    try:
        post = apply_contingency(case, k)
    except IslandingError as exc:
        return ContingencyOutcome(label, "Islanding", "Islanding", str(exc))
    static, detail, loading = "skipped", "", 0.0
    if study.static_check:
        try:
            post_pf = solve_powerflow(post)
        except NonConvergence as exc:
            post_pf = None
            static, detail = "PowerFlowDiverged", str(exc)
        if post_pf is not None:
            loading = _overloaded(post, post_pf.voltage)
            static = "Thermal" if loading > 1.0 + 1e-12 else "ok"
            if static == "Thermal":
                detail = f"post-outage loading {loading:.3f}"
    dynamic, t_bad = "skipped", None
    if study.dynamic_check:
        events = study.fault.events(case, k)
        cfg = dataclasses.replace(study.fault.config(), monitored=tuple(b.id for b in case.buses))
        _, verdict = simulate(case, events, cfg, study.criteria, pf=pf, system=system)
        dynamic, t_bad = verdict.kind, verdict.time
        if not verdict.stable and not detail:
            detail = verdict.detail
    return ContingencyOutcome(label, static, dynamic, detail, loading, t_bad)


def level_trajectories(case: NetworkCase, study: TransferStudy, p_level: float) -> dict:
    """Dynamic run of every non-islanding contingency at one level, by branch label."""
    scaled = scale_operating_point(case, study, p_level)
    try:
        pf = solve_powerflow(scaled)
    except NonConvergence:
        return {}
    system = initialize_dynamics(scaled, pf)
    cfg = dataclasses.replace(study.fault.config(), monitored=tuple(b.id for b in case.buses))
    out = {}
    for k in contingency_list(scaled, study):
        try:
            apply_contingency(scaled, k)
        except IslandingError:
            continue
        traj, _ = simulate(scaled, study.fault.events(scaled, k), cfg, study.criteria, pf=pf, system=system)
        out[_label(scaled, k)] = traj
    return out


def _severity(o: ContingencyOutcome):
    # most severe first: criterion order, then heavier overload or earlier
    # instability, then branch label for a stable tie-break
    t = o.time if o.time is not None else math.inf
    return (_RANK[o.criterion], -o.max_loading, t, o.branch)


def assess_point(case: NetworkCase, study: TransferStudy, p_level: float, workers: int = 1) -> StepRecord:
    """Full N-1 screening at one sink level; failures are recorded, not raised."""
    scaled = scale_operating_point(case, study, p_level)
    try:
        pf = solve_powerflow(scaled)
    except NonConvergence as exc:
        o = ContingencyOutcome("base", "PowerFlowDiverged", "skipped", str(exc))
        return StepRecord(p_level, False, False, False, "base", "PowerFlowDiverged", {"base": o})
    outcomes = {}
    if study.static_check:
        loading = _overloaded(scaled, pf.voltage)
        if loading > 1.0 + 1e-12:
            outcomes["base"] = ContingencyOutcome("base", "Thermal", "skipped", f"base loading {loading:.3f}", loading)
    ks = contingency_list(scaled, study)
    if workers > 1 and len(ks) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(assess_contingency, [scaled] * len(ks), [study] * len(ks), ks, [pf] * len(ks)))
    else:
        system = initialize_dynamics(scaled, pf) if study.dynamic_check else None
        results = [assess_contingency(scaled, study, k, pf, system) for k in ks]
    for o in results:
        outcomes[o.branch] = o
    excluded = []
    considered = []
    for key in sorted(outcomes):
        o = outcomes[key]
        if o.static == "Islanding":
            if study.exclude_islanding:
                excluded.append(key)
                continue
            o = dataclasses.replace(o, static="Thermal", detail="islanding outage " + o.detail)
            outcomes[key] = o
        considered.append(o)
    failed = [o for o in considered if not o.passed]
    static_ok = not any(o.static not in ("ok", "skipped") for o in considered)
    dynamic_ok = not any(o.dynamic not in ("Stable", "skipped") for o in considered)
    worst = min(failed, key=_severity) if failed else None
    return StepRecord(
        p_level=float(p_level),
        static_ok=static_ok,
        dynamic_ok=dynamic_ok,
        feasible=not failed,
        worst_contingency=None if worst is None else worst.branch,
        binding_criterion=None if worst is None else worst.criterion,
        outcomes={k: outcomes[k] for k in sorted(outcomes)},
        excluded=tuple(excluded),
    )


def _levels(p_base: float, study: TransferStudy) -> list[float]:
    n = int(math.floor((study.p_cap - p_base) / study.delta_p + 1e-9))
    return [p_base + i * study.delta_p for i in range(max(n, 0) + 1)]


def find_limit(case: NetworkCase, study: TransferStudy, bisect: bool = False, workers: int = 1,
               progress=None) -> LimitResult:
    """Largest feasible sink level on the ``delta_p`` grid from the base.

    The default is an ascending sweep.  With ``bisect`` the boundary is found
    by binary search on the same grid, which presumes feasibility is monotone
    in the level.  ``progress`` is called with each StepRecord.
    """
    p_base = base_level(case, study)
    levels = _levels(p_base, study)
    memo: dict[int, StepRecord] = {}

    def at(i: int) -> StepRecord:
        if i not in memo:
            memo[i] = assess_point(case, study, levels[i], workers)
            if progress is not None:
                progress(memo[i])
        return memo[i]

    if not at(0).feasible:
        rec = at(0)
        raise BaseInfeasible(
            f"base level {p_base} MW fails: {rec.binding_criterion} on {rec.worst_contingency}", record=rec
        )
    nonmono: list[float] = []
    if bisect:
        last = len(levels) - 1
        if at(last).feasible:
            first_bad = None
        else:
            lo, hi = 0, last  # lo feasible, hi infeasible
            while hi - lo > 1:
                mid = (lo + hi) // 2
                if at(mid).feasible:
                    lo = mid
                else:
                    hi = mid
            first_bad = hi
    else:
        first_bad = None
        for i in range(1, len(levels)):
            rec = at(i)
            if not rec.feasible and first_bad is None:
                first_bad = i
                if study.assume_monotone:
                    break
            elif rec.feasible and first_bad is not None:
                nonmono.append(levels[i])
                log.warning("level %.1f MW feasible above the infeasible level %.1f MW", levels[i], levels[first_bad])
    steps = [memo[i] for i in sorted(memo)]
    if first_bad is None:
        return LimitResult(levels[-1], None, None, steps, at_cap=True, nonmonotone=nonmono, study=study.name)
    bad = memo[first_bad]
    return LimitResult(
        p_max=levels[first_bad - 1],
        binding_contingency=bad.worst_contingency,
        binding_criterion=bad.binding_criterion,
        steps=steps,
        nonmonotone=nonmono,
        study=study.name,
    )


# --------------------------------------------------------------------------
# reporting


def steps_csv(result: LimitResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["p_level_mw", "feasible", "static_ok", "dynamic_ok", "worst_contingency", "binding_criterion", "n_failed"])
    for s in result.steps:
        n_failed = sum(1 for k, o in s.outcomes.items() if k not in s.excluded and not o.passed)
        w.writerow([f"{s.p_level:.6g}", int(s.feasible), int(s.static_ok), int(s.dynamic_ok),
                    s.worst_contingency or "", s.binding_criterion or "", n_failed])
    return buf.getvalue()


def limit_json(result: LimitResult) -> str:
    return json.dumps(result.as_dict(), indent=2, sort_keys=True) + "\n"


@dataclass
class TrendTable:
    studies: list  # row names
    models: list  # column names
    p_max: dict  # (study, model) -> MW
    at_cap: dict
    below_base: dict = field(default_factory=dict)

    def cell(self, study: str, model: str, fmt: str) -> str | None:
        val = self.p_max.get((study, model))
        if val is None:
            return None
        if self.below_base.get((study, model)):
            return "<" + format(val, fmt)
        return format(val, fmt) + ("+" if self.at_cap.get((study, model)) else "")

    def ordering(self, study: str) -> list[list[str]]:
        """Models grouped by equal P_max, lowest first."""
        groups: dict[float, list[str]] = {}
        for m in self.models:
            if (study, m) in self.p_max:
                # a limit below base ranks under any feasible result at that level
                key = (round(self.p_max[(study, m)], 6), not self.below_base.get((study, m), False))
                groups.setdefault(key, []).append(m)
        return [groups[k] for k in sorted(groups)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["study", *self.models, "ordering"])
        for s in self.studies:
            row = [s]
            for m in self.models:
                val = self.cell(s, m, ".6g")
                row.append("" if val is None else val)
            row.append(" < ".join(" = ".join(g) for g in self.ordering(s)))
            w.writerow(row)
        return buf.getvalue()

    def to_text(self) -> str:
        head = ["study", *self.models]
        rows = []
        for s in self.studies:
            row = [s]
            for m in self.models:
                val = self.cell(s, m, ".0f")
                row.append("-" if val is None else val)
            rows.append(row)
        widths = [max(len(str(r[i])) for r in [head, *rows]) for i in range(len(head))]
        fmt = "  ".join("{:>%d}" % w for w in widths)
        lines = ["Transfer limit (MW)", fmt.format(*head), fmt.format(*["-" * w for w in widths])]
        lines += [fmt.format(*r) for r in rows]
        lines.append("")
        for s in self.studies:
            groups = self.ordering(s)
            lines.append(f"{s}: " + " < ".join(" = ".join(g) for g in groups))
            for g in groups:
                if len(g) > 1:
                    lines.append(f"{s}: tie between {', '.join(g)}")
        lines.append("'+' marks a limit that reached the search ceiling; '<' a base level that already fails")
        return "\n".join(lines) + "\n"


def trend_report(results: dict) -> TrendTable:
    """Table of P_max per study and model.

    ``results`` maps model name to LimitResult, or study name to such a map.
    """
    if results and all(isinstance(v, LimitResult) for v in results.values()):
        results = {next(iter(results.values())).study or "study": results}
    studies = list(results)
    models: list[str] = []
    for per in results.values():
        for m in per:
            if m not in models:
                models.append(m)
    p_max = {(s, m): r.p_max for s, per in results.items() for m, r in per.items()}
    at_cap = {(s, m): r.at_cap for s, per in results.items() for m, r in per.items()}
    below = {(s, m): r.below_base for s, per in results.items() for m, r in per.items()}
    return TrendTable(studies, models, p_max, at_cap, below)
