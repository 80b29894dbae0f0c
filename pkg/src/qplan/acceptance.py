"""Acceptance gate: nine seeded pass/fail checks over the whole package.

Checks 3-7 share one full seed-42 pipeline run (with depth cross-validation
for the cost model); the other checks build their own smaller instances.
Every check is wrapped so a crash becomes a failed result rather than an
aborted suite. `qplan verify` prints one line per check and exits nonzero
if any fails; the test suite asserts each check individually.
"""

from __future__ import annotations

import os
import statistics
import subprocess
import sys
import tempfile
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .bandit import reward_from_latency, run_ucb1
from .engine import evaluate_reference, rows_multiset_equal
from .harness import RunConfig, RunArtifacts, build_workloads, execute_run, run_phase2
from .ir import parse_sql
from .student import gradient_check, softmax, train_boosted
from .teacher import N_ARMS, PlanConfig, apply_plan
from .workload import all_fixtures

LADDER_MIN_REDUCTION = 15.0   # percent, baseline -> search
CSR_MIN_GAP = 10.0            # percentage points over baseline
COST_MODEL_MIN_R2 = 0.80
COST_MODEL_MAX_MAE = 0.10     # fraction of the median trace latency
BOOSTED_MIN_AGREEMENT = 0.80
LINEAR_MIN_AGREEMENT = 0.70
MIN_SPEEDUP = 10.0
ORACLE_MIN_MATCH = 0.95
CORPUS_TIME_BUDGET_S = 60.0


@dataclass(frozen=True)
class CriterionResult:
    number: int
    name: str
    passed: bool
    detail: str


def _result(number: int, name: str, passed: bool, detail: str) -> CriterionResult:
    return CriterionResult(number=number, name=name, passed=bool(passed),
                           detail=detail)


# ---------------------------------------------------------------------------
# 1: every non-sampling rewrite preserves query results exactly

def check_rewrite_semantics() -> tuple[bool, str]:
    start = time.perf_counter()
    configs = [PlanConfig.from_index(arm) for arm in range(N_ARMS)
               if not PlanConfig.from_index(arm).sampling]
    n_queries = checked = mismatches = 0
    for fx in all_fixtures():
        for sql in fx.queries:
            n_queries += 1
            ir = parse_sql(sql, fx.schema)
            expected = evaluate_reference(ir, fx.data).rows
            for config in configs:
                candidate = apply_plan(ir, config, fx.schema)
                got = evaluate_reference(candidate.ir, fx.data).rows
                checked += 1
                if not rows_multiset_equal(expected, got):
                    mismatches += 1
    elapsed = time.perf_counter() - start
    ok = (mismatches == 0 and n_queries >= 20
          and elapsed < CORPUS_TIME_BUDGET_S)
    return ok, (f"{n_queries} queries x {len(configs)} configs = {checked} "
                f"rewrites, {mismatches} mismatches, {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 2: with noise off, the search lands on the exhaustive-best arm

def check_search_matches_exhaustive() -> tuple[bool, str]:
    start = time.perf_counter()
    config = RunConfig(seed=42, noise=0.0, n_queries=50)
    phase2 = run_phase2(build_workloads(config), config)
    matches = total = 0
    for qs in phase2.searches.values():
        total += 1
        by_arm = {t.arm: t for t in qs.executor.traces}
        base = by_arm[0].latency_ms
        rewards = {arm: reward_from_latency(t.latency_ms, base, t.feasible)
                   for arm, t in by_arm.items()}
        best = max(rewards.values())
        # exact tie on reward means an equally good plan, so it counts
        if abs(rewards[qs.result.chosen_arm] - best) < 1e-12:
            matches += 1
    elapsed = time.perf_counter() - start
    share = matches / total if total else 0.0
    ok = (total >= 100 and share >= ORACLE_MIN_MATCH
          and elapsed < CORPUS_TIME_BUDGET_S)
    return ok, (f"{matches}/{total} searches found the exhaustive best arm "
                f"({100.0 * share:.1f}%), {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 3-7: checks over the shared full run

def check_latency_ladder(arts: RunArtifacts) -> tuple[bool, str]:
    m = arts.report["methods"]
    base = m["baseline"]["median_latency_ms"]
    teach = m["teacher"]["median_latency_ms"]
    band = m["bandit"]["median_latency_ms"]
    reduction = 100.0 * (1.0 - band / base)
    n = arts.report["search"]["n_queries"]
    shapes = len(arts.report["run_config"]["shapes"])
    ok = (base > teach > band and reduction >= LADDER_MIN_REDUCTION
          and n >= 60 and shapes >= 2)
    return ok, (f"median ms {base:.1f} -> {teach:.1f} -> {band:.1f} "
                f"({reduction:.1f}% total) over {n} queries, "
                f"{shapes} schemas")


def check_csr_gap(arts: RunArtifacts) -> tuple[bool, str]:
    m = arts.report["methods"]
    base = m["baseline"]["csr_overall"]
    full = m["bandit+cost"]["csr_overall"]
    gap = full - base
    return gap >= CSR_MIN_GAP, (f"CSR {base:.1f}% baseline vs {full:.1f}% "
                                f"with search+pruning (+{gap:.1f}pp)")


def check_cost_model_accuracy(arts: RunArtifacts) -> tuple[bool, str]:
    holdout = arts.report["cost_model"]["holdout"]
    n_traces = arts.report["search"]["n_traces"]
    median_all = statistics.median(t.latency_ms for t in arts.phase2.traces)
    mae_share = holdout["mae_ms"] / median_all
    ok = (n_traces >= 2000 and holdout["r2"] >= COST_MODEL_MIN_R2
          and mae_share <= COST_MODEL_MAX_MAE)
    return ok, (f"holdout R2 {holdout['r2']:.3f}, MAE {holdout['mae_ms']:.2f}"
                f" ms = {100.0 * mae_share:.1f}% of median trace latency "
                f"{median_all:.1f} ms over {n_traces} traces")


def check_distillation_agreement(arts: RunArtifacts) -> tuple[bool, str]:
    ev = arts.report["distillation"]
    boosted = ev["boosted"]["holdout_agreement"]
    linear = ev["linear"]["holdout_agreement"]
    ok = boosted >= BOOSTED_MIN_AGREEMENT and linear >= LINEAR_MIN_AGREEMENT
    return ok, (f"holdout top-1 agreement boosted {boosted:.3f} "
                f"(need >= {BOOSTED_MIN_AGREEMENT}), linear {linear:.3f} "
                f"(need >= {LINEAR_MIN_AGREEMENT}) on "
                f"{ev['n_holdout']} queries")


def check_student_speedup(arts: RunArtifacts) -> tuple[bool, str]:
    planning = arts.timings["planning"]
    search = planning["bandit"]["median_total_ms"]
    ratios = {mode: search / planning[mode]["median_total_ms"]
              for mode in ("student-lr", "student-gb")}
    ok = all(r >= MIN_SPEEDUP for r in ratios.values())
    return ok, (f"median planning {search:.1f} ms full search vs "
                f"{planning['student-lr']['median_total_ms']:.3f} ms linear "
                f"({ratios['student-lr']:.0f}x) / "
                f"{planning['student-gb']['median_total_ms']:.3f} ms boosted "
                f"({ratios['student-gb']:.0f}x)")


# ---------------------------------------------------------------------------
# 8: numerical assertions on the learning components

def check_numerics() -> tuple[bool, str]:
    grad_err = gradient_check(seed=0)
    grad_ok = grad_err < 1e-5

    rng = np.random.Generator(np.random.PCG64(8))
    z = rng.normal(scale=5.0, size=(200, 64))
    softmax_err = float(np.max(np.abs(softmax(z).sum(axis=1) - 1.0)))
    softmax_ok = softmax_err < 1e-9

    x = rng.normal(size=(160, 7))
    labels = ((x[:, 0] > 0).astype(np.int64) * 2
              + (x[:, 1] > 0).astype(np.int64))
    boosted = train_boosted(x, labels, n_classes=4, n_rounds=30)
    history = np.asarray(boosted.loss_history)
    monotone_ok = bool(np.all(np.diff(history) <= 1e-9))

    _, regret = run_ucb1((0.7, 0.4), horizon=512, seed=8)
    ratio = float(regret[511] / regret[255])
    regret_ok = ratio < 2.0

    ok = grad_ok and softmax_ok and monotone_ok and regret_ok
    return ok, (f"gradient rel err {grad_err:.2e} (<1e-5), softmax norm err "
                f"{softmax_err:.2e} (<1e-9), boosted loss monotone over "
                f"{history.shape[0]} rounds: {monotone_ok}, regret(512)/"
                f"regret(256) = {ratio:.3f} (<2)")


# ---------------------------------------------------------------------------
# 9: repeat seeded runs byte-identical

DETERMINISTIC_ARTIFACTS = (
    os.path.join("report", "report.json"),
    os.path.join("phase2", "traces.jsonl"),
    os.path.join("phase3", "model.json"),
    os.path.join("phase4", "student_linear.json"),
    os.path.join("phase4", "student_boosted.json"),
)


def check_run_determinism(work_dir: str) -> tuple[bool, str]:
    start = time.perf_counter()
    run_dirs = []
    for tag in ("determinism-a", "determinism-b"):
        run_dir = os.path.join(work_dir, tag)
        proc = subprocess.run(
            [sys.executable, "-m", "qplan.cli", "run", "--seed", "42",
             "--out-dir", run_dir],
            capture_output=True, text=True)
        if proc.returncode != 0:
            tail = proc.stderr.strip().splitlines()[-3:]
            return False, f"run exited {proc.returncode}: {' | '.join(tail)}"
        run_dirs.append(run_dir)
    differing = []
    for rel in DETERMINISTIC_ARTIFACTS:
        with open(os.path.join(run_dirs[0], rel), "rb") as fh:
            first = fh.read()
        with open(os.path.join(run_dirs[1], rel), "rb") as fh:
            if fh.read() != first:
                differing.append(rel)
    elapsed = time.perf_counter() - start
    ok = not differing
    what = "all byte-identical" if ok else f"differ: {differing}"
    return ok, (f"{len(DETERMINISTIC_ARTIFACTS)} artifacts compared across "
                f"two seed-42 runs, {what}, {elapsed:.0f}s for both runs")


# ---------------------------------------------------------------------------
# Runner

def _guard(number: int, name: str, fn: Callable[[], tuple[bool, str]],
           echo: Callable[[str], None] | None) -> CriterionResult:
    try:
        passed, detail = fn()
    except Exception as exc:
        passed, detail = False, f"crashed: {exc!r}"
    result = _result(number, name, passed, detail)
    if echo is not None:
        echo(format_result(result))
    return result


def format_result(result: CriterionResult) -> str:
    status = "PASS" if result.passed else "FAIL"
    return f"{status}  {result.number}  {result.name:<28} {result.detail}"


def run_acceptance(out_dir: str | None = None,
                   echo: Callable[[str], None] | None = None,
                   ) -> list[CriterionResult]:
    """All nine checks in order; returns one result per check."""
    work_dir = out_dir or tempfile.mkdtemp(prefix="qplan-acceptance-")
    os.makedirs(work_dir, exist_ok=True)
    results = [
        _guard(1, "rewrite semantics", check_rewrite_semantics, echo),
        _guard(2, "search vs exhaustive", check_search_matches_exhaustive,
               echo),
    ]

    shared: dict[str, RunArtifacts] = {}

    def full_run() -> RunArtifacts:
        if "arts" not in shared:
            shared["arts"] = execute_run(
                RunConfig(seed=42, cv_depth=True),
                os.path.join(work_dir, "seed42"))
        return shared["arts"]

    for number, name, fn in (
            (3, "latency ladder", check_latency_ladder),
            (4, "constraint satisfaction gap", check_csr_gap),
            (5, "cost model accuracy", check_cost_model_accuracy),
            (6, "student agreement", check_distillation_agreement),
            (7, "student speedup", check_student_speedup)):
        results.append(_guard(number, name,
                              lambda fn=fn: fn(full_run()), echo))

    results.append(_guard(8, "numerical checks", check_numerics, echo))
    results.append(_guard(9, "repeat-run determinism",
                          lambda: check_run_determinism(work_dir), echo))
    return results
