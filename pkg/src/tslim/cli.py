"""Command-line entry point: ``tslim <command> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__, netcase, pipeline, tdsim, translim
from .errors import BaseInfeasible, TslimError
from .loadmodels import parse_load_model

log = logging.getLogger("tslim")


def _out(args, default=None):
    out = args.out or default
    if out is None:
        raise TslimError("an output location is required (--out)")
    return Path(out)


def _write(path: Path, text: str):
    if path.parent:
        path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def cmd_powerflow(args):
    case = pipeline.resolve_case(args.case)
    pf = netcase.solve_powerflow(case, tol=args.tol, max_iter=args.max_iter)
    text = pipeline.powerflow_csv(case, pf)
    if args.out:
        _write(_out(args), text)
    else:
        sys.stdout.write(text)
    log.info("converged in %d iterations, mismatch %.3g", pf.iterations, pf.max_mismatch)


def cmd_simulate(args):
    case = pipeline.resolve_case(args.case)
    if args.load_model:
        if args.load_bus is None:
            raise TslimError("--load-model needs --load-bus")
        model = parse_load_model(json.loads(Path(args.load_model).read_text()))
        case = case.replace(load_models={**case.load_models, args.load_bus: model})
    events = tdsim.events_from_json(json.loads(Path(args.events).read_text())) if args.events else []
    cfg = tdsim.load_config(args.config) if args.config else tdsim.SimulationConfig()
    if args.monitor:
        cfg = tdsim.SimulationConfig(**{**cfg.__dict__, "monitored": tuple(args.monitor)})
    traj, verdict = tdsim.simulate(case, events, cfg)
    _write(_out(args), traj.to_csv())
    print(f"{verdict.kind}" + (f" at t={verdict.time:.4f} s: {verdict.detail}" if verdict.time is not None else ""))
    return 0


def cmd_fit(args):
    job_path = Path(args.job)
    doc = json.loads(job_path.read_text())
    if args.seed is not None:
        doc["seed"] = args.seed
    doc["_base"] = str(job_path.parent.resolve())
    job = pipeline.FitJob.from_json(doc, job_path.parent)
    out = Path(args.out_dir) if args.out_dir else _out(args)
    _, result = pipeline.run_fit_job(job, out)
    best = result.best
    comp = ", ".join(f"{k}={v:.3f}" for k, v in zip(best.labels, best.composition))
    print(f"{job.family}: {comp}; RMSE_P {result.rmse_p:.4g}, RMSE_Q {result.rmse_q:.4g}")


def cmd_rank(args):
    ranked = pipeline.rank_file(args.candidates, args.tau, args.quantile)
    doc = [c.as_dict() for c in ranked]
    text = pipeline.dumps(doc)
    if args.out:
        _write(_out(args), text)
    else:
        sys.stdout.write(text)


def cmd_assess(args):
    case = pipeline.resolve_case(args.case)
    study = translim.load_study(args.study)
    if args.load_model:
        model = parse_load_model(json.loads(Path(args.load_model).read_text()))
        case = case.replace(load_models={**case.load_models, study.sink_bus: model})
    out = _out(args)

    def progress(rec):
        log.info("%.1f MW: %s", rec.p_level, "feasible" if rec.feasible else
                 f"infeasible ({rec.binding_criterion} on {rec.worst_contingency})")

    try:
        result = translim.find_limit(case, study, bisect=args.bisect, workers=args.threads, progress=progress)
    except BaseInfeasible as exc:
        result = translim.LimitResult.from_base_failure(exc, study.name)
    pipeline.write_limit(out, case, study, result)
    cap = " (search ceiling reached)" if result.at_cap else ""
    cap = " (base level already fails)" if result.below_base else cap
    print(f"P_max = {result.p_max:.1f} MW{cap}; binding: {result.binding_criterion} on {result.binding_contingency}")


def cmd_trend_report(args):
    results = {}
    for d in args.inputs:
        path = Path(d)
        res = pipeline.limit_from_dir(path)
        results.setdefault(res.study or "study", {})[path.name] = res
    table = translim.trend_report(results)
    out = _out(args)
    _write(out, table.to_csv())
    _write(out.with_suffix(".txt"), table.to_text())
    sys.stdout.write(table.to_text())


def cmd_pipeline(args):
    spec = pipeline.load_pipeline_spec(args.spec)
    if args.seed is not None:
        spec.seed = args.seed
    summary = pipeline.run_pipeline(spec, _out(args), workers=args.threads, bisect=args.bisect)
    sys.stdout.write((_out(args) / "tables" / "transfer_limits.txt").read_text())
    return summary


def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    # the subcommand copy must not overwrite values given before the subcommand
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    glob = argparse.ArgumentParser(add_help=False)
    glob.add_argument("--seed", type=int, default=d(None), help="base seed for every random stream")
    glob.add_argument("--threads", type=int, default=d(1), help="worker processes for contingency screening")
    glob.add_argument("--out", default=d(None), help="output file or directory")
    glob.add_argument("--verbose", "-v", action="store_true", default=d(False), help="progress logging")
    return glob


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tslim", parents=[_global_flags(False)],
                                description="Load-model fitting and transfer-limit assessment.")
    p.add_argument("--version", action="version", version=f"tslim {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, parents=[_global_flags(True)], help=help_, description=help_)
        sp.set_defaults(func=fn)
        return sp

    sp = add("powerflow", cmd_powerflow, "solve the AC power flow of a case")
    sp.add_argument("--case", default="ieee39", help="case file or shipped case name")
    sp.add_argument("--tol", type=float, default=1e-8)
    sp.add_argument("--max-iter", type=int, default=30)

    sp = add("simulate", cmd_simulate, "run a time-domain simulation and write the trajectory CSV")
    sp.add_argument("--case", default="ieee39")
    sp.add_argument("--events", default=None, help="event list JSON")
    sp.add_argument("--config", default=None, help="simulation config JSON")
    sp.add_argument("--monitor", type=int, nargs="*", default=None, help="buses to record")
    sp.add_argument("--load-model", default=None, help="load model JSON placed at --load-bus")
    sp.add_argument("--load-bus", type=int, default=None)

    sp = add("fit", cmd_fit, "fit a reference trajectory into a load-model family")
    sp.add_argument("--job", required=True, help="fit job JSON")
    sp.add_argument("--out-dir", default=None)

    sp = add("rank", cmd_rank, "re-rank fitted candidates by pinball score")
    sp.add_argument("--candidates", required=True)
    sp.add_argument("--tau", type=float, default=0.5)
    sp.add_argument("--quantile", type=float, default=0.5)

    sp = add("assess", cmd_assess, "find the transfer limit of a study")
    sp.add_argument("--case", default="ieee39")
    sp.add_argument("--study", required=True)
    sp.add_argument("--load-model", default=None, help="load model JSON placed at the sink bus")
    sp.add_argument("--bisect", action="store_true", help="binary search instead of the linear sweep")

    sp = add("trend-report", cmd_trend_report, "tabulate transfer limits of several assessments")
    sp.add_argument("--in", dest="inputs", nargs="+", required=True, help="assessment output directories")

    sp = add("pipeline", cmd_pipeline, "reference event, fits and transfer limits in one run")
    sp.add_argument("--spec", required=True)
    sp.add_argument("--bisect", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except pipeline.StageError as exc:
        print(f"tslim {args.command}: stage '{exc.stage}' failed: {exc}", file=sys.stderr)
        return 2
    except (TslimError, OSError, ValueError, KeyError) as exc:
        print(f"tslim {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
