"""Command line front end: generate workloads, run the pipeline, print
reports, and run the acceptance checks."""

from __future__ import annotations

import argparse
import os
import sys

from .acceptance import format_result, run_acceptance
from .harness import (
    ABLATION_MODES, BACKENDS, CONSTRAINT_PROFILES, RunConfig, execute_run,
    summarize_report,
)
from .jsonio import canonical_json, load_json, save_json
from .workload import (
    SHAPE_NAMES, TEMPLATE_TAGS, WorkloadError, WorkloadProfile,
    generate_workload, workload_to_dict,
)

DEFAULTS = RunConfig()


def _parse_mix(items: list[str]) -> tuple[tuple[str, float], ...]:
    mix = []
    for item in items:
        tag, _, weight = item.partition("=")
        if not weight:
            raise WorkloadError(f"mix entries look like TAG=WEIGHT, "
                                f"got {item!r}")
        try:
            mix.append((tag, float(weight)))
        except ValueError:
            raise WorkloadError(f"mix weight {weight!r} is not a number")
    return tuple(mix)


def cmd_generate(args: argparse.Namespace) -> int:
    profile = WorkloadProfile(
        name=args.name or args.shape, shape=args.shape,
        n_queries=args.queries, seed=args.seed,
        mix=_parse_mix(args.mix) if args.mix else WorkloadProfile.mix)
    blob = workload_to_dict(generate_workload(profile))
    if args.out:
        save_json(args.out, blob)
        print(f"wrote {len(blob['queries'])} queries "
              f"({profile.shape}, seed {profile.seed}) to {args.out}")
    else:
        print(canonical_json(blob))
    return 0


def cmd_run(args: argparse.Namespace) -> int:
    config = RunConfig(
        seed=args.seed, iterations=args.iterations,
        constraints_profile=args.constraints, backend=args.backend,
        noise=args.noise, n_queries=args.queries,
        shapes=tuple(args.shapes), cv_depth=args.cv,
        ablations=tuple(args.ablation) if args.ablation else ABLATION_MODES)
    arts = execute_run(config, args.out_dir)
    print(summarize_report(arts.report, arts.timings))
    print(f"\nartifacts in {args.out_dir}")
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    report = load_json(os.path.join(args.run_dir, "report", "report.json"))
    timings_path = os.path.join(args.run_dir, "report", "timings.json")
    timings = load_json(timings_path) if os.path.exists(timings_path) else None
    print(summarize_report(report, timings))
    return 0


def cmd_verify(args: argparse.Namespace) -> int:
    results = run_acceptance(args.out_dir,
                             echo=lambda line: print(line, flush=True))
    failed = [r for r in results if not r.passed]
    print(f"\n{len(results) - len(failed)}/{len(results)} checks passed")
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qplan",
        description="constraint-aware SQL plan search: seeded workloads, "
                    "bandit exploration, cost model, distilled students")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="emit a seeded workload as JSON")
    gen.add_argument("--shape", choices=SHAPE_NAMES, default="retail")
    gen.add_argument("--queries", type=int, default=32,
                     help="number of queries (default 32)")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--name", default=None,
                     help="workload name (default: the shape name)")
    gen.add_argument("--mix", action="append", metavar="TAG=WEIGHT",
                     help=f"template weight, repeatable; tags: "
                          f"{', '.join(TEMPLATE_TAGS)}")
    gen.add_argument("--out", default=None,
                     help="output path (default: stdout)")
    gen.set_defaults(fn=cmd_generate)

    run = sub.add_parser("run", help="run all phases and emit the report")
    run.add_argument("--seed", type=int, default=DEFAULTS.seed)
    run.add_argument("--iterations", type=int, default=DEFAULTS.iterations,
                     help="search budget per query")
    run.add_argument("--constraints", choices=sorted(CONSTRAINT_PROFILES),
                     default=DEFAULTS.constraints_profile)
    run.add_argument("--backend", choices=BACKENDS,
                     default=DEFAULTS.backend)
    run.add_argument("--ablation", action="append", choices=ABLATION_MODES,
                     help="planning method to include, repeatable "
                          "(default: all)")
    run.add_argument("--queries", type=int, default=DEFAULTS.n_queries,
                     help="queries per schema shape")
    run.add_argument("--shapes", nargs="+", choices=SHAPE_NAMES,
                     default=list(DEFAULTS.shapes))
    run.add_argument("--noise", type=float, default=DEFAULTS.noise,
                     help="simulator noise amplitude")
    run.add_argument("--cv", action="store_true",
                     help="cross-validate forest depth before training")
    run.add_argument("--out-dir", required=True,
                     help="directory for run artifacts")
    run.set_defaults(fn=cmd_run)

    rep = sub.add_parser("report", help="print the summary of a finished run")
    rep.add_argument("run_dir")
    rep.set_defaults(fn=cmd_report)

    ver = sub.add_parser("verify", help="run the acceptance checks")
    ver.add_argument("--out-dir", default=None,
                     help="keep check artifacts here (default: temp dir)")
    ver.set_defaults(fn=cmd_verify)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (WorkloadError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
