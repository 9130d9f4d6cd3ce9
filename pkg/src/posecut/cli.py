"""Command-line entry point: synth, train, solve, eval, render, pipeline.

All randomness flows from the --seed flag through named streams, so a fixed
configuration reproduces byte-identical solution and report files.  Timing
and per-stage diagnostics go to standard error as key=value lines; the run
manifest (which records wall-clock timings) is the only output file that
varies between repeats.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .candidates import NmsParams, nms, refine_locations, select_top, split_detections
from .costs import DEFAULT_EPS, build_costs, dump_costs, objective
from .errors import PosecutError
from .evaluation import ApReport, assemble_poses, evaluate_ap
from .logutil import log_kv
from .model import (
    ProblemInstance,
    Solution,
    load_instance,
    load_solution,
    save_instance,
    save_solution,
)
from .pairwise import (
    FeatureMode,
    build_training_set,
    fit_logistic,
    load_model,
    save_model,
)
from .solver import (
    SearchParams,
    named_schedule,
    schedule_from_json,
    solve_heuristic,
    solve_incremental,
)
from .synth import (
    SynthParams,
    generate,
    render_pairwise_scoremap,
    skeleton_svg,
    write_pgm,
)


def _thread_count(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get("POSECUT_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise PosecutError(f"POSECUT_THREADS is not an integer: {env!r}") from None
    return 1


def _read(path: str) -> bytes:
    p = Path(path)
    if not p.is_file():
        raise PosecutError(f"no such file: {path}")
    return p.read_bytes()


def _schedule(arg: str, classes):
    if arg in ("1stage", "2stage", "3stage"):
        return named_schedule(arg, classes)
    doc = json.loads(_read(arg))
    return schedule_from_json(doc, classes)


def _preprocess(instance: ProblemInstance, args) -> ProblemInstance:
    params = NmsParams(
        radius=args.nms_radius,
        max_total=args.max_candidates,
        refine_before_nms=not args.no_refine,
    )
    if params.refine_before_nms:
        instance = refine_locations(instance)
    instance = nms(instance, params)
    instance = split_detections(instance, args.split_threshold)
    return select_top(instance, params.max_total, per_part=args.per_part_budget)


def _add_preprocess_flags(sub) -> None:
    sub.add_argument("--nms-radius", type=float, default=24.0)
    sub.add_argument("--max-candidates", type=int, default=100)
    sub.add_argument("--split-threshold", type=float, default=0.4)
    sub.add_argument("--no-refine", action="store_true",
                     help="skip location refinement before NMS")
    sub.add_argument("--per-part-budget", type=int, default=None,
                     help="per-class candidate budget instead of the global one")


def _add_solver_flags(sub) -> None:
    sub.add_argument("--schedule", default="1stage",
                     help="1stage | 2stage | 3stage | custom schedule JSON path")
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--restarts", type=int, default=8)
    sub.add_argument("--max-moves", type=int, default=None)
    sub.add_argument("--stage-budget", type=int, default=20,
                     help="per-part candidate budget inside each solver stage")
    sub.add_argument("--eps", type=float, default=DEFAULT_EPS)


def _solve(instance: ProblemInstance, model, args, threads: int):
    schedule = _schedule(args.schedule, instance.classes)
    params = SearchParams(seed=args.seed, restarts=args.restarts, max_moves=args.max_moves)
    if len(schedule.stages) == 1:
        t0 = time.perf_counter()
        costs = build_costs(instance, model, args.eps)
        solution = solve_heuristic(instance, costs, params, threads=threads)
        millis = (time.perf_counter() - t0) * 1000.0
        log_kv(stage=1, objective=solution.objective_value, millis=millis)
        return solution, costs
    solution = solve_incremental(
        instance,
        model,
        schedule,
        params,
        eps=args.eps,
        per_part_budget=args.stage_budget,
        threads=threads,
    )
    return solution, None


def _report_doc(report: ApReport, instance: ProblemInstance) -> dict:
    doc: dict = {}
    for cls in sorted(report.per_class):
        doc[instance.class_name(cls)] = report.per_class[cls]
    doc["mAP"] = report.mean_ap
    doc["counts"] = report.counts
    return doc


def _write_json(path: Path, doc: dict) -> None:
    path.write_bytes((json.dumps(doc, indent=2) + "\n").encode("utf-8"))


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def _cmd_synth(args) -> int:
    params = SynthParams(
        persons=args.persons,
        jitter_sigma=args.jitter,
        clutter_rate=args.clutter,
        unary_sharpness=args.sharpness,
        offset_noise_sigma=args.offset_noise,
        seed=args.seed,
        frame=args.frame,
    )
    instance = generate(params)
    Path(args.out).write_bytes(save_instance(instance))
    if args.svg:
        Path(args.svg).write_text(skeleton_svg(instance))
    log_kv(command="synth", candidates=len(instance.candidates), out=args.out)
    return 0


def _cmd_train(args) -> int:
    paths = sorted(Path(args.instances).glob(args.glob))
    if not paths:
        raise PosecutError(f"no instance files match {args.glob!r} in {args.instances}")
    instances = []
    for path in paths:
        inst = load_instance(path.read_bytes())
        if not args.no_refine:
            inst = refine_locations(inst)
        instances.append(inst)
    samples = build_training_set(instances, tau_match=args.tau)
    t0 = time.perf_counter()
    model, infos = fit_logistic(
        samples,
        l2=args.l2,
        max_iter=args.max_iter,
        tol=args.tol,
        mode=FeatureMode(args.mode),
    )
    millis = (time.perf_counter() - t0) * 1000.0
    Path(args.out).write_bytes(
        save_model(model, l2=args.l2, max_iter=args.max_iter, tol=args.tol)
    )
    n_degenerate = sum(1 for info in infos.values() if info.degenerate)
    log_kv(
        command="train",
        pairs=len(infos),
        degenerate_pairs=n_degenerate,
        millis=millis,
        out=args.out,
    )
    return 0


def _cmd_solve(args) -> int:
    threads = _thread_count(args)
    instance = load_instance(_read(args.instance))
    model = load_model(_read(args.model))
    instance = _preprocess(instance, args)
    if args.save_preprocessed:
        Path(args.save_preprocessed).write_bytes(save_instance(instance))
    if args.dump_costs:
        costs = build_costs(instance, model, args.eps)
        _write_json(Path(args.dump_costs), dump_costs(instance, costs))
    solution, _ = _solve(instance, model, args, threads)
    Path(args.out).write_bytes(save_solution(solution, instance))
    log_kv(command="solve", objective=solution.objective_value, out=args.out)
    return 0


def _cmd_eval(args) -> int:
    instance = load_instance(_read(args.instance))
    if not instance.ground_truth:
        raise PosecutError("instance has no ground_truth to evaluate against")
    solution = load_solution(_read(args.pred), instance)
    poses = assemble_poses(instance, solution)
    report = evaluate_ap(poses, instance.ground_truth, tau=args.tau)
    doc = _report_doc(report, instance)
    if args.out:
        _write_json(Path(args.out), doc)
    else:
        print(json.dumps(doc, indent=2))
    log_kv(command="eval", mAP=report.mean_ap)
    return 0


def _cmd_render(args) -> int:
    instance = load_instance(_read(args.instance))
    model = load_model(_read(args.model))
    if not instance.ground_truth:
        raise PosecutError("instance has no ground_truth poses to anchor on")
    try:
        anchor = next(
            p for p in instance.ground_truth if p.person_id == args.person
        )
    except StopIteration:
        raise PosecutError(f"no ground-truth person with id {args.person}") from None
    raster = render_pairwise_scoremap(
        instance,
        model,
        target=instance.class_id(args.target),
        anchor_pose=anchor,
        grid_step=args.grid_step,
        per_source=args.per_source_dir is not None,
    )
    Path(args.out).write_bytes(write_pgm(raster.values))
    if args.per_source_dir:
        out_dir = Path(args.per_source_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        for cls, values in (raster.per_source or {}).items():
            name = instance.class_name(cls)
            (out_dir / f"{args.target}_from_{name}.pgm").write_bytes(write_pgm(values))
    log_kv(command="render", out=args.out, rows=raster.values.shape[0],
           cols=raster.values.shape[1])
    return 0


def _cmd_pipeline(args) -> int:
    threads = _thread_count(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    timings: dict[str, float] = {}

    instance = load_instance(_read(args.instance))
    model = load_model(_read(args.model))

    t0 = time.perf_counter()
    instance = _preprocess(instance, args)
    timings["preprocess_millis"] = (time.perf_counter() - t0) * 1000.0
    (out_dir / "preprocessed.json").write_bytes(save_instance(instance))

    t0 = time.perf_counter()
    solution, costs = _solve(instance, model, args, threads)
    timings["solve_millis"] = (time.perf_counter() - t0) * 1000.0
    (out_dir / "solution.json").write_bytes(save_solution(solution, instance))

    t0 = time.perf_counter()
    poses = assemble_poses(instance, solution)
    report_doc: dict = {"poses": len(poses.poses)}
    mean_ap = None
    if instance.ground_truth:
        report = evaluate_ap(poses, instance.ground_truth, tau=args.tau)
        report_doc = _report_doc(report, instance)
        mean_ap = report.mean_ap
    timings["eval_millis"] = (time.perf_counter() - t0) * 1000.0
    _write_json(out_dir / "report.json", report_doc)

    manifest = {
        "posecut_version": __version__,
        "numpy_version": np.__version__,
        "python_version": sys.version.split()[0],
        "seed": args.seed,
        "threads": threads,
        "config": {
            "instance": args.instance,
            "model": args.model,
            "schedule": args.schedule,
            "nms_radius": args.nms_radius,
            "max_candidates": args.max_candidates,
            "split_threshold": args.split_threshold,
            "refine": not args.no_refine,
            "per_part_budget": args.per_part_budget,
            "stage_budget": args.stage_budget,
            "restarts": args.restarts,
            "eps": args.eps,
            "tau": args.tau,
        },
        "candidates_after_preprocess": len(instance.candidates),
        "objective": solution.objective_value,
        "mAP": mean_ap,
        "timings": timings,
    }
    _write_json(out_dir / "manifest.json", manifest)
    log_kv(
        command="pipeline",
        objective=solution.objective_value,
        mAP=mean_ap if mean_ap is not None else "n/a",
        out_dir=str(out_dir),
    )
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="posecut",
        description="Assemble multi-person poses from body-part detection candidates.",
    )
    parser.add_argument("--threads", type=int, default=None,
                        help="worker threads (default: POSECUT_THREADS or 1)")
    parser.add_argument("--verbose", "-v", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic instance")
    p.add_argument("--persons", type=int, default=3)
    p.add_argument("--clutter", type=float, default=0.0)
    p.add_argument("--jitter", type=float, default=0.0)
    p.add_argument("--offset-noise", type=float, default=0.0)
    p.add_argument("--sharpness", type=float, default=18.0)
    p.add_argument("--frame", type=float, default=512.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--svg", default=None, help="also write a skeleton overlay SVG")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train", help="fit the pairwise logistic model")
    p.add_argument("--instances", required=True, help="directory of instance files")
    p.add_argument("--glob", default="*.json")
    p.add_argument("--l2", type=float, default=1e-4)
    p.add_argument("--max-iter", type=int, default=300)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--tau", type=float, default=0.5,
                   help="match radius as a fraction of head size")
    p.add_argument("--mode", choices=[m.value for m in FeatureMode], default="full")
    p.add_argument("--no-refine", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("solve", help="preprocess and solve one instance")
    p.add_argument("--instance", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--save-preprocessed", default=None)
    p.add_argument("--dump-costs", default=None)
    _add_preprocess_flags(p)
    _add_solver_flags(p)
    p.set_defaults(func=_cmd_solve)

    p = sub.add_parser("eval", help="score a solution against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--instance", required=True)
    p.add_argument("--tau", type=float, default=0.5)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("render", help="render combined pairwise scoremaps")
    p.add_argument("--instance", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--target", required=True, help="target class name")
    p.add_argument("--person", type=int, default=0)
    p.add_argument("--grid-step", type=float, default=8.0)
    p.add_argument("--out", required=True)
    p.add_argument("--per-source-dir", default=None)
    p.set_defaults(func=_cmd_render)

    p = sub.add_parser("pipeline", help="preprocess, solve, assemble, and score")
    p.add_argument("--instance", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--tau", type=float, default=0.5)
    _add_preprocess_flags(p)
    _add_solver_flags(p)
    p.set_defaults(func=_cmd_pipeline)

    return parser


_ERROR_MODULE = {
    "ParseError": "model",
    "SchemaError": "model",
    "ValidationError": "model",
    "MissingOffset": "candidates",
    "MissingWeights": "pairwise",
    "NoGroundTruth": "pairwise",
    "InfeasibleSolution": "costs",
    "RefusedTooLarge": "solver",
    "NoAnchorJoints": "synth",
    "PosecutError": "cli",
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.verbose:
        log_kv(command=args.command, verbose=1)
    try:
        return args.func(args)
    except PosecutError as exc:
        module = _ERROR_MODULE.get(type(exc).__name__, "cli")
        print(f"error module={module} type={type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except (ValueError, json.JSONDecodeError) as exc:
        print(f"error module=cli type={type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
