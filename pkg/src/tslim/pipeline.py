"""File-level jobs and the three-step workflow.

Step one simulates a reference event with a known load model, step two fits
the recorded load response into each target family, and step three finds the
transfer limit with every fitted model (and every fixed static preset) placed
at the sink bus.  Every artifact is written in a fixed order from values that
depend only on the inputs and the seed, so reruns produce identical bytes.
"""
from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import netcase, tdsim, translim
from .ddqnfit import FitProblem, HyperParams, LossConfig, PinballConfig, fit, rank_candidates
from .ddqnfit.problem import CandidateSolution, CompositionEvaluator, family_name
from .errors import BaseInfeasible, TslimError, ValidationError
from .loadmodels import StaticPreset, dump_load_model, parse_load_model
from .loadmodels.presets import load_ranges

log = logging.getLogger(__name__)


class StageError(TslimError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


def sub_seed(seed: int, *stream: int) -> int:
    """Deterministic child seed for one stream of work."""
    return int(np.random.SeedSequence([int(seed), *stream]).generate_state(1)[0])


def _path(ref, base: Path) -> Path:
    p = Path(ref)
    return p if p.is_absolute() else base / p


def resolve_case(ref, base: Path = Path(".")) -> netcase.NetworkCase:
    """A case file path, or the name of a shipped case."""
    if isinstance(ref, dict):
        return netcase.case_from_dict(ref)
    if str(ref) in ("ieee39",):
        return netcase.builtin_case(str(ref))
    return netcase.load_case(_path(ref, base))


def _load_json_or_path(ref, base: Path):
    if isinstance(ref, (str, Path)):
        return json.loads(_path(ref, base).read_text())
    return ref


def dumps(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


# --------------------------------------------------------------------------
# power flow and simulation outputs


def powerflow_csv(case: netcase.NetworkCase, pf: netcase.PowerFlowSolution) -> str:
    base = case.system_mva_base
    s = pf.voltage * np.conj(netcase.build_ybus(case) @ pf.voltage)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["bus", "v_mag", "v_ang_deg", "p_inj_mw", "q_inj_mvar"])
    for b, vm, va, si in zip(case.buses, pf.v_mag, pf.v_ang, s):
        w.writerow([b.id, repr(float(vm)), repr(float(np.degrees(va))), repr(float(si.real * base)),
                    repr(float(si.imag * base))])
    return buf.getvalue()


# --------------------------------------------------------------------------
# fitting jobs


@dataclass
class FitJob:
    family: str
    reference: tdsim.Trajectory
    bus: int | None = None
    events: list = field(default_factory=list)
    ranges: dict | None = None  # full range table
    hp: HyperParams = HyperParams()
    loss: LossConfig = LossConfig()
    pinball: PinballConfig = PinballConfig()
    seed: int = 0
    n_draws: int = 64
    doc: dict = field(default_factory=dict)  # job as read, for provenance

    @classmethod
    def from_json(cls, doc: dict, base: Path = Path(".")) -> "FitJob":
        doc = dict(doc)
        try:
            family = family_name(doc["family"])
            ref = tdsim.Trajectory.from_csv(str(_path(doc["reference"], base)))
        except KeyError as exc:
            raise ValidationError(f"fit job lacks {exc}") from None
        events = tdsim.events_from_json(_load_json_or_path(doc.get("events", []), base))
        ranges = load_ranges(_path(doc["ranges"], base)) if doc.get("ranges") else load_ranges()
        return cls(
            family=family,
            reference=ref,
            bus=doc.get("bus"),
            events=events,
            ranges=ranges,
            hp=HyperParams.from_json(doc.get("hyperparams", {})),
            loss=LossConfig(**doc.get("loss", {})),
            pinball=PinballConfig(**doc.get("pinball", {})),
            seed=int(doc.get("seed", 0)),
            n_draws=int(doc.get("n_draws", 64)),
            doc=doc,
        )

    def problem(self) -> FitProblem:
        return FitProblem.from_trajectory(self.family, self.reference, self.bus, self.events,
                                          ranges=self.ranges, loss=self.loss)


def rewards_csv(log_) -> str:
    """Episode, return and running best return."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["episode", "reward", "running_best"])
    for i, (r, b) in enumerate(zip(log_.episode_return, log_.running_best())):
        w.writerow([i, repr(float(r)), repr(float(b))])
    return buf.getvalue()


def fit_series_csv(problem: FitProblem, p, q) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "v", "p_ref", "q_ref", "p_fit", "q_fit"])
    v = np.abs(problem.voltage)
    for row in zip(problem.times, v, problem.p_ref, problem.q_ref, p, q):
        w.writerow([repr(float(x)) for x in row])
    return buf.getvalue()


def write_fit(out: Path, job: FitJob, problem: FitProblem, result) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    cands = {
        "family": problem.family,
        "bus": problem.bus,
        "seed": job.seed,
        "job": job.doc,
        "candidates": [c.as_dict() for c in result.candidates],
        "best": result.best.as_dict(),
        "rmse_p": result.rmse_p,
        "rmse_q": result.rmse_q,
        "n_simulations": result.n_simulations,
    }
    (out / "candidates.json").write_text(dumps(cands))
    (out / "rewards.csv").write_text(rewards_csv(result.log))
    (out / "model.json").write_text(dumps(dump_load_model(result.model)))
    (out / "fit.csv").write_text(fit_series_csv(problem, result.p_fit, result.q_fit))
    return cands


def run_fit_job(job: FitJob, out: Path | None = None):
    problem = job.problem()
    result = fit(problem, job.hp, job.seed, job.n_draws, job.pinball)
    if out is not None:
        write_fit(out, job, problem, result)
    return problem, result


def rank_file(path, tau: float = 0.5, quantile: float = 0.5) -> list[CandidateSolution]:
    """Re-rank a candidates file by pinball score under new settings."""
    path = Path(path)
    doc = json.loads(path.read_text())
    job_doc = doc.get("job")
    if not job_doc:
        raise ValidationError("candidates file carries no fit job; cannot resample trajectories")
    base = Path(job_doc.get("_base", path.parent))
    job = FitJob.from_json(job_doc, base)
    problem = job.problem()
    ev = CompositionEvaluator(problem, job.hp.m_samples, job.seed)
    cands = []
    for c in doc["candidates"]:
        comp = tuple(float(c["composition"][k]) for k in problem.labels)
        cands.append(CandidateSolution(comp, float(c["mean_loss"]), problem.labels))
    return rank_candidates(cands, problem, PinballConfig(tau, quantile), ev)


def table_text(title: str, head: list[str], rows: list[list[str]]) -> str:
    widths = [max(len(str(r[i])) for r in [head, *rows]) for i in range(len(head))]
    fmt = "  ".join("{:>%d}" % w for w in widths)
    lines = [title, fmt.format(*head), fmt.format(*["-" * w for w in widths])]
    lines += [fmt.format(*r) for r in rows]
    return "\n".join(lines) + "\n"


def fit_table(rows) -> tuple[str, str]:
    """``rows`` of (model, rmse_p, rmse_q) as CSV and aligned text."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", "rmse_p", "rmse_q"])
    for name, rp, rq in rows:
        w.writerow([name, repr(float(rp)), repr(float(rq))])
    text = table_text("P & Q fitting RMSE (p.u.)", ["model", "RMSE_P", "RMSE_Q"],
                      [[n, f"{rp:.4g}", f"{rq:.4g}"] for n, rp, rq in rows])
    return buf.getvalue(), text


# --------------------------------------------------------------------------
# transfer limits


def write_limit(out: Path, case, study: translim.TransferStudy, result: translim.LimitResult,
                trajectories: bool = True):
    out.mkdir(parents=True, exist_ok=True)
    (out / "limit.json").write_text(translim.limit_json(result))
    (out / "steps.csv").write_text(translim.steps_csv(result))
    if trajectories and result.binding_contingency is not None:
        level = result.p_max if result.below_base else result.p_max + study.delta_p
        for label, traj in translim.level_trajectories(case, study, level).items():
            (out / f"traj_{level:.0f}MW_{label}.csv").write_text(traj.to_csv())


def limit_from_dir(path) -> translim.LimitResult:
    doc = json.loads((Path(path) / "limit.json").read_text())
    return translim.LimitResult(
        p_max=float(doc["p_max_mw"]),
        binding_contingency=doc["binding_contingency"],
        binding_criterion=doc["binding_criterion"],
        steps=[],
        at_cap=bool(doc["at_cap"]),
        nonmonotone=list(doc.get("nonmonotone_levels_mw", [])),
        study=doc.get("study", ""),
        below_base=bool(doc.get("below_base", False)),
    )


# --------------------------------------------------------------------------
# pipeline


@dataclass
class Target:
    name: str
    family: str | None = None  # fitted family
    preset: str | None = None  # fixed static preset
    hyperparams: dict = field(default_factory=dict)  # overrides of the shared fit settings

    @classmethod
    def from_json(cls, doc) -> "Target":
        if isinstance(doc, str):
            if doc in ("40Z60P", "30Z30I40P"):
                return cls(doc, preset=doc)
            return cls(doc, family=family_name(doc))
        t = cls(doc["name"], doc.get("family"), doc.get("preset"), dict(doc.get("hyperparams", {})))
        if (t.family is None) == (t.preset is None):
            raise ValidationError(f"target {t.name}: give exactly one of family or preset")
        if t.family is not None:
            t.family = family_name(t.family)
        return t


@dataclass
class PipelineSpec:
    case: object  # path, shipped case name, or case document
    reference_bus: int
    reference_model: object  # load model document
    events: list
    targets: list
    study: translim.TransferStudy
    simulation: tdsim.SimulationConfig = tdsim.SimulationConfig(t_end=3.0)
    hp: HyperParams = HyperParams()
    loss: LossConfig = LossConfig()
    pinball: PinballConfig = PinballConfig()
    n_draws: int = 64
    ranges: object = None
    preset_v_break: float = 0.7
    seed: int = 0
    base: Path = Path(".")
    doc: dict = field(default_factory=dict)

    @classmethod
    def from_json(cls, doc: dict, base: Path = Path(".")) -> "PipelineSpec":
        try:
            fitcfg = doc.get("fit", {})
            return cls(
                case=doc.get("case", "ieee39"),
                reference_bus=int(doc["reference_bus"]),
                reference_model=_load_json_or_path(doc["reference_model"], base),
                events=tdsim.events_from_json(_load_json_or_path(doc["events"], base)),
                targets=[Target.from_json(t) for t in doc["targets"]],
                study=translim.TransferStudy.from_json(_load_json_or_path(doc["study"], base)),
                simulation=tdsim.SimulationConfig.from_json(doc.get("simulation", {"t_end": 3.0})),
                hp=HyperParams.from_json(fitcfg.get("hyperparams", {})),
                loss=LossConfig(**fitcfg.get("loss", {})),
                pinball=PinballConfig(**fitcfg.get("pinball", {})),
                n_draws=int(fitcfg.get("n_draws", 64)),
                ranges=fitcfg.get("ranges"),
                preset_v_break=float(doc.get("preset_v_break", 0.7)),
                seed=int(doc.get("seed", 0)),
                base=base,
                doc=doc,
            )
        except KeyError as exc:
            raise ValidationError(f"pipeline spec lacks {exc}") from None


def load_pipeline_spec(path) -> PipelineSpec:
    path = Path(path)
    return PipelineSpec.from_json(json.loads(path.read_text()), path.parent)


def _stage(name):
    def wrap(fn):
        def inner(*a, **kw):
            try:
                return fn(*a, **kw)
            except StageError:
                raise
            except (TslimError, ValueError, OSError) as exc:
                raise StageError(name, str(exc)) from exc

        return inner

    return wrap


@_stage("reference")
def _reference(spec: PipelineSpec, case, out: Path):
    model = parse_load_model(spec.reference_model)
    ref_case = case.replace(load_models={**case.load_models, spec.reference_bus: model})
    cfg = dataclasses.replace(spec.simulation, monitored=(spec.reference_bus,))
    traj, verdict = tdsim.simulate(ref_case, spec.events, cfg)
    if verdict.kind == "NumericalFailure":
        raise StageError("reference", f"reference simulation failed: {verdict.detail}")
    traj.to_csv(out / "reference.csv")
    (out / "reference_model.json").write_text(dumps(dump_load_model(model)))
    (out / "events.json").write_text(dumps(tdsim.events_to_json(spec.events)))
    (out / "reference_verdict.json").write_text(dumps(dataclasses.asdict(verdict)))
    # fitting reads the file back so that it sees exactly what a user would
    return tdsim.Trajectory.from_csv(str(out / "reference.csv"))


@_stage("fit")
def _fit_target(spec: PipelineSpec, i: int, target: Target, ref, out: Path):
    ranges = load_ranges(_path(spec.ranges, spec.base)) if spec.ranges else load_ranges()
    hp = HyperParams.from_json({**_hp_doc(spec.hp), **target.hyperparams})
    job = FitJob(
        family=target.family,
        reference=ref,
        bus=spec.reference_bus,
        events=spec.events,
        ranges=ranges,
        hp=hp,
        loss=spec.loss,
        pinball=spec.pinball,
        seed=sub_seed(spec.seed, 1, i),
        n_draws=spec.n_draws,
        doc={
            "family": target.family,
            "reference": "../../reference.csv",
            "bus": spec.reference_bus,
            "events": "../../events.json",
            "hyperparams": _hp_doc(hp),
            "loss": dataclasses.asdict(spec.loss),
            "pinball": dataclasses.asdict(spec.pinball),
            "seed": sub_seed(spec.seed, 1, i),
            "n_draws": spec.n_draws,
            **({"ranges": str(_path(spec.ranges, spec.base).resolve())} if spec.ranges else {}),
        },
    )
    problem, result = run_fit_job(job, out / "fits" / target.name)
    return result


def _hp_doc(hp: HyperParams) -> dict:
    doc = dataclasses.asdict(hp)
    doc["hidden"] = list(hp.hidden)
    return doc


def preset_model(name: str, v_break: float):
    return StaticPreset(name, v_break=v_break)


@_stage("assess")
def _assess(spec: PipelineSpec, case, name: str, model, out: Path, workers: int, bisect: bool):
    study_case = case.replace(load_models={**case.load_models, spec.study.sink_bus: model})
    try:
        result = translim.find_limit(study_case, spec.study, bisect=bisect, workers=workers)
    except BaseInfeasible as exc:
        log.warning("  %s: %s", name, exc)
        result = translim.LimitResult.from_base_failure(exc, spec.study.name)
    write_limit(out / "limits" / name, study_case, spec.study, result)
    (out / "limits" / name / "model.json").write_text(dumps(dump_load_model(model)))
    return result


def run_pipeline(spec: PipelineSpec, out, workers: int = 1, bisect: bool = False) -> dict:
    """Run all three steps; returns a summary and writes the artifact tree."""
    out = Path(out)
    (out / "tables").mkdir(parents=True, exist_ok=True)
    try:
        case = resolve_case(spec.case, spec.base)
    except (TslimError, OSError) as exc:
        raise StageError("input", str(exc)) from exc
    (out / "spec.json").write_text(dumps(spec.doc))

    log.info("step 1: reference event")
    ref = _reference(spec, case, out)

    log.info("step 2: fitting %d target(s)", sum(t.family is not None for t in spec.targets))
    models: dict[str, object] = {}
    fit_rows = []
    for i, target in enumerate(spec.targets):
        if target.preset is not None:
            models[target.name] = preset_model(target.preset, spec.preset_v_break)
            continue
        result = _fit_target(spec, i, target, ref, out)
        models[target.name] = result.model
        fit_rows.append((target.name, result.rmse_p, result.rmse_q))
        log.info("  %s: RMSE_P %.4g RMSE_Q %.4g", target.name, result.rmse_p, result.rmse_q)
    fit_csv, fit_txt = fit_table(fit_rows)
    (out / "tables" / "fit_rmse.csv").write_text(fit_csv)
    (out / "tables" / "fit_rmse.txt").write_text(fit_txt)

    log.info("step 3: transfer limits")
    limits = {}
    for name, model in models.items():
        limits[name] = _assess(spec, case, name, model, out, workers, bisect)
        log.info("  %s: P_max %.1f MW (%s on %s)", name, limits[name].p_max,
                 limits[name].binding_criterion, limits[name].binding_contingency)
    table = translim.trend_report({spec.study.name or "study": limits})
    (out / "tables" / "transfer_limits.csv").write_text(table.to_csv())
    (out / "tables" / "transfer_limits.txt").write_text(table.to_text())
    summary = {
        "fit_rmse": {n: {"rmse_p": rp, "rmse_q": rq} for n, rp, rq in fit_rows},
        "p_max_mw": {n: r.p_max for n, r in limits.items()},
        "binding": {n: [r.binding_criterion, r.binding_contingency] for n, r in limits.items()},
        "below_base": sorted(n for n, r in limits.items() if r.below_base),
    }
    (out / "summary.json").write_text(dumps(summary))
    return summary
