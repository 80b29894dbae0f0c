"""Four-phase experiment pipeline and metrics report.

Phase 1 inspects workloads, phase 2 runs one bandit search per query against
live (simulated or adapter-backed) executions, phase 3 trains the latency
forest on the trace log, phase 4 distills the search results into the two
students. Ablations then replay the same queries under each planning method
and the metrics step assembles the report.

Reported values split into two files: report.json holds everything derived
from seeded computation and is byte-identical across repeat runs with the
same seed; timings.json holds wall-clock planning measurements, which are
real elapsed times and therefore vary run to run.

Planning time has two parts. Search methods execute candidate plans while
planning, and that cost is the simulated latency of every candidate they
run: seed-determined, reported per method in report.json. The remaining
bookkeeping (rewrites, statistics, model calls) is measured in wall-clock
milliseconds and lands in timings.json, where the two parts are also
summed into total planning cost.
"""

from __future__ import annotations

import csv
import os
import statistics
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .bandit import DEFAULT_MAX_ITERATIONS, SearchResult, search
from .cost_model import (
    ForestModel, ForestParams, cv_select_depth, evaluate_model, featurize,
    predict_latency, save_model, student_features, train_forest,
)
from .engine import (
    ConstraintSet, ExecutionTrace, SimulatorAdapter, SimulatorConfig,
    adapter_execute, check_feasible, simulate_execution, write_trace_log,
)
from .ir import QueryIR, SchemaModel, complexity, parse_sql, render_sql
from .jsonio import derive_seed, save_json, stable_fraction
from .student import (
    BoostedStudent, LinearStudent, agreement, predict_arm, save_student,
    train_boosted, train_linear,
)
from .teacher import N_ARMS, N_STRATEGIES, PlanConfig, apply_plan
from .workload import (
    Workload, WorkloadProfile, WorkloadQuery, generate_workload,
    workload_to_dict,
)

# fixed-priority planner: pushdown-style rewrites on, everything else off
TEACHER_CONFIG = PlanConfig(early_filter=True, projection_pushdown=True,
                            join_reorder=True)
TEACHER_ARM = TEACHER_CONFIG.index

PRUNE_FACTOR = 1.0        # arms predicted over the latency budget are vetoed
TRAIN_FRACTION = 0.8      # query-level share that trains phases 3 and 4
REPORT_FORMAT = "qplan-report"
REPORT_VERSION = 1

# multipliers applied to the workload's median all-off latency and memory
CONSTRAINT_PROFILES = {
    "default": (2.0, 2.0),
    "tight": (1.5, 1.5),
    "loose": (3.0, 3.0),
}

ABLATION_MODES = ("baseline", "teacher", "bandit", "bandit+cost",
                  "student-lr", "student-gb")
BACKENDS = ("sim", "adapter")

# effectively unbounded budgets, used while measuring the budgets themselves
UNLIMITED = ConstraintSet(c_lat_ms=1e18, c_mem_bytes=1e18)


class HarnessError(RuntimeError):
    """Base class for pipeline failures."""


class EmptyWorkloadError(HarnessError):
    """Phases 2-4 refuse workloads with no queries."""


class TrainingDataError(HarnessError):
    """Phase 3/4 training data missing or degenerate."""


# ---------------------------------------------------------------------------
# Run configuration

@dataclass(frozen=True)
class RunConfig:
    seed: int = 42
    iterations: int = DEFAULT_MAX_ITERATIONS
    constraints_profile: str = "default"
    backend: str = "sim"
    noise: float = 0.05
    sample_rate: float = 0.1
    # per shape; two shapes give the cost model a trace set large enough
    # that every (query profile, plan) stratum has holdout support
    n_queries: int = 120
    shapes: tuple[str, ...] = ("retail", "events")
    cv_depth: bool = False
    ablations: tuple[str, ...] = ABLATION_MODES

    def __post_init__(self):
        if self.constraints_profile not in CONSTRAINT_PROFILES:
            raise ValueError(
                f"unknown constraints profile {self.constraints_profile!r}; "
                f"choose from {sorted(CONSTRAINT_PROFILES)}")
        if self.backend not in BACKENDS:
            raise ValueError(f"unknown backend {self.backend!r}")
        unknown = [m for m in self.ablations if m not in ABLATION_MODES]
        if unknown:
            raise ValueError(f"unknown ablation modes {unknown}")
        if self.n_queries < 1:
            raise ValueError("n_queries must be positive")

    def sim_config(self) -> SimulatorConfig:
        return SimulatorConfig(noise=self.noise)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "iterations": self.iterations,
            "constraints_profile": self.constraints_profile,
            "backend": self.backend,
            "noise": self.noise,
            "sample_rate": self.sample_rate,
            "n_queries": self.n_queries,
            "shapes": list(self.shapes),
            "cv_depth": self.cv_depth,
            "ablations": list(self.ablations),
        }


def build_workloads(config: RunConfig) -> list[Workload]:
    """One workload per schema shape, each seeded from the run seed."""
    workloads = []
    for shape in config.shapes:
        profile = WorkloadProfile(
            name=shape, shape=shape, n_queries=config.n_queries,
            seed=derive_seed("workload", config.seed, shape))
        workloads.append(generate_workload(profile))
    return workloads


# ---------------------------------------------------------------------------
# Plan execution

class PlanExecutor:
    """Arm index -> (latency_ms, memory_bytes, feasible) for one query.

    Each unique arm is constructed and executed once; repeat pulls replay the
    memoized measurement, so the trace log holds one entry per distinct plan
    actually run. The measurement seed is salted per query only; the
    simulator keys its noise draw on the plan's work profile, so arms whose
    rewrites change nothing measure identically and cannot win on a private
    noise draw.
    """

    def __init__(self, ir: QueryIR, schema: SchemaModel, query: WorkloadQuery,
                 constraints: ConstraintSet, sim_config: SimulatorConfig,
                 run_seed: int, sample_rate: float, backend: str = "sim"):
        self.ir = ir
        self.schema = schema
        self.query = query
        self.constraints = constraints
        self.sim_config = sim_config
        self.sample_rate = sample_rate
        salt = derive_seed(run_seed, query.query_id)
        self.seed = derive_seed("adapter", salt)
        self.adapter = (
            SimulatorAdapter(schema, query.resources, sim_config,
                             seed_salt=salt)
            if backend == "adapter" else None)
        self.traces: list[ExecutionTrace] = []
        self._memo: dict[int, tuple[float, float, bool]] = {}

    def __call__(self, arm: int) -> tuple[float, float, bool]:
        hit = self._memo.get(arm)
        if hit is not None:
            return hit
        candidate = apply_plan(self.ir, PlanConfig.from_index(arm),
                               self.schema, self.sample_rate)
        if self.adapter is not None:
            sql = render_sql(candidate.ir)
            latency, memory, feasible = adapter_execute(
                self.adapter, sql, self.constraints)
        else:
            latency, memory = simulate_execution(
                candidate.ir, self.schema, self.query.resources,
                self.sim_config, self.seed)
            feasible = check_feasible(latency, memory, self.constraints)
        self.traces.append(ExecutionTrace(
            query_id=self.query.query_id, arm=arm, flags=format(arm, "06b"),
            latency_ms=latency, memory_bytes=memory, feasible=feasible,
            seed=self.seed, timestamp=len(self.traces)))
        result = (latency, memory, feasible)
        self._memo[arm] = result
        return result


def _make_executor(query: WorkloadQuery, workload: Workload,
                   constraints: ConstraintSet, config: RunConfig,
                   sim_config: SimulatorConfig) -> PlanExecutor:
    ir = parse_sql(query.sql, workload.schema)
    return PlanExecutor(ir, workload.schema, query, constraints, sim_config,
                        config.seed, config.sample_rate, config.backend)


# ---------------------------------------------------------------------------
# Phase 1: workload inspection

def run_phase1(workloads: Sequence[Workload]) -> dict:
    """Schema summaries plus per-query structural complexity."""
    out = {"workloads": []}
    for wl in workloads:
        queries = []
        for q in wl.queries:
            metrics = complexity(parse_sql(q.sql, wl.schema))
            queries.append({
                "query_id": q.query_id,
                "template": q.template,
                "table_count": metrics.table_count,
                "join_count": metrics.join_count,
                "predicate_count": metrics.predicate_count,
            })
        out["workloads"].append({
            "name": wl.name,
            "shape": wl.shape,
            "seed": wl.seed,
            "n_queries": len(wl.queries),
            "tables": [{"name": t.name, "rows": t.row_count,
                        "columns": len(t.columns)}
                       for t in wl.schema.tables],
            "queries": queries,
        })
    return out


# ---------------------------------------------------------------------------
# Phase 2: bandit search over live executions

def calibrate_constraints(workload: Workload, config: RunConfig,
                          sim_config: SimulatorConfig) -> ConstraintSet:
    """Budgets as profile multiples of the median all-off plan cost."""
    if not workload.queries:
        raise EmptyWorkloadError(
            f"workload {workload.name!r} has no queries to calibrate against")
    lat_mult, mem_mult = CONSTRAINT_PROFILES[config.constraints_profile]
    lats, mems = [], []
    for q in workload.queries:
        executor = _make_executor(q, workload, UNLIMITED, config, sim_config)
        latency, memory, _ = executor(0)
        lats.append(latency)
        mems.append(memory)
    return ConstraintSet(c_lat_ms=lat_mult * statistics.median(lats),
                         c_mem_bytes=mem_mult * statistics.median(mems))


@dataclass
class QuerySearch:
    query: WorkloadQuery
    workload_name: str
    schema: SchemaModel
    ir: QueryIR
    executor: PlanExecutor
    result: SearchResult
    planning_wall_ms: float
    # simulated latency the search spent executing candidate plans; the
    # deterministic part of planning cost (wall clock is bookkeeping only)
    candidate_execution_ms: float = 0.0


@dataclass
class Phase2Result:
    constraints: dict[str, ConstraintSet]
    searches: dict[str, QuerySearch]
    traces: list[ExecutionTrace]


def _arm_feature_matrix(base: np.ndarray, arms: Sequence[int]) -> np.ndarray:
    """Expand one query's all-off feature row across arm flag patterns."""
    out = np.tile(base, (len(arms), 1))
    for row, arm in enumerate(arms):
        for bit in range(N_STRATEGIES):
            out[row, bit] = float((arm >> bit) & 1)
    return out


def query_feature_base(qs: QuerySearch, c_mem_bytes: float) -> np.ndarray:
    """Feature vector for the query itself: all flag bits zero."""
    return featurize(PlanConfig(), qs.ir, qs.schema,
                     qs.query.resources.memory_in_use,
                     qs.query.resources.cpu_load, c_mem_bytes)


def run_phase2(workloads: Sequence[Workload], config: RunConfig,
               sim_config: SimulatorConfig | None = None,
               constraints: dict[str, ConstraintSet] | None = None,
               model: ForestModel | None = None) -> Phase2Result:
    """Calibrate budgets, then run one UCB1 search per query.

    With a cost model supplied, arms whose predicted latency exceeds
    PRUNE_FACTOR x c_lat are vetoed without execution (the all-off arm is
    exempt because its latency anchors the reward scale).
    """
    sim_config = sim_config or config.sim_config()
    if sum(len(wl.queries) for wl in workloads) == 0:
        raise EmptyWorkloadError("phase 2 needs at least one query")
    budgets = dict(constraints) if constraints else {}
    searches: dict[str, QuerySearch] = {}
    traces: list[ExecutionTrace] = []
    for wl in workloads:
        if wl.name not in budgets:
            budgets[wl.name] = calibrate_constraints(wl, config, sim_config)
        cset = budgets[wl.name]
        for q in wl.queries:
            start = time.perf_counter()
            executor = _make_executor(q, wl, cset, config, sim_config)
            predicted = threshold = None
            if model is not None:
                base = featurize(PlanConfig(), executor.ir, wl.schema,
                                 q.resources.memory_in_use,
                                 q.resources.cpu_load, cset.c_mem_bytes)
                feats = _arm_feature_matrix(base, range(N_ARMS))
                predicted = predict_latency(model, feats)
                threshold = PRUNE_FACTOR * cset.c_lat_ms
            result = search(executor, query_id=q.query_id,
                            max_iterations=config.iterations,
                            predicted_latency=predicted,
                            prune_threshold_ms=threshold)
            wall_ms = (time.perf_counter() - start) * 1000.0
            searches[q.query_id] = QuerySearch(
                query=q, workload_name=wl.name, schema=wl.schema,
                ir=executor.ir, executor=executor, result=result,
                planning_wall_ms=wall_ms,
                candidate_execution_ms=sum(
                    t.latency_ms for t in executor.traces))
            traces.extend(executor.traces)
    return Phase2Result(constraints=budgets, searches=searches, traces=traces)


# ---------------------------------------------------------------------------
# Phases 3 and 4: cost model and students

def _is_train(split_seed: int, query_id: str) -> bool:
    return stable_fraction(split_seed, query_id) < TRAIN_FRACTION


@dataclass
class Phase3Result:
    model: ForestModel
    evaluation: dict
    split_seed: int


def run_phase3(phase2: Phase2Result, config: RunConfig) -> Phase3Result:
    """Train the latency forest on executed traces; evaluate on held-out
    queries (the split is by query, never by trace, so no query leaks)."""
    if not phase2.traces:
        raise TrainingDataError("phase 3 needs a non-empty trace log")
    split_seed = derive_seed("split", config.seed)
    x_parts, y_parts, mask_parts = [], [], []
    for query_id, qs in phase2.searches.items():
        rows = qs.executor.traces
        if not rows:
            continue
        base = query_feature_base(
            qs, phase2.constraints[qs.workload_name].c_mem_bytes)
        x_parts.append(_arm_feature_matrix(base, [t.arm for t in rows]))
        y_parts.append(np.array([t.latency_ms for t in rows], np.float64))
        mask_parts.append(np.full(len(rows), _is_train(split_seed, query_id)))
    features = np.vstack(x_parts)
    targets = np.concatenate(y_parts)
    train = np.concatenate(mask_parts)
    if bool(train.all()) or not bool(train.any()):
        raise TrainingDataError(
            "query split left train or holdout empty; add queries")

    params = ForestParams()
    evaluation: dict = {}
    if config.cv_depth:
        depth, scores = cv_select_depth(features[train], targets[train],
                                        seed=config.seed)
        params = replace(params, max_depth=depth)
        evaluation["cv"] = {"chosen_depth": depth,
                            "fold_mse": {str(k): v for k, v in scores.items()}}
    model = train_forest(features[train], targets[train], params)
    evaluation["train"] = evaluate_model(model, features[train],
                                         targets[train])
    evaluation["holdout"] = evaluate_model(model, features[~train],
                                           targets[~train])
    return Phase3Result(model=model, evaluation=evaluation,
                        split_seed=split_seed)


@dataclass
class Phase4Result:
    linear: LinearStudent
    boosted: BoostedStudent
    evaluation: dict
    split_seed: int


def run_phase4(phase2: Phase2Result, config: RunConfig) -> Phase4Result:
    """Distill search-chosen arms into both students; same query split."""
    if not phase2.searches:
        raise EmptyWorkloadError("phase 4 needs search results")
    split_seed = derive_seed("split", config.seed)
    feats, labels, mask = [], [], []
    for query_id, qs in phase2.searches.items():
        c_mem = phase2.constraints[qs.workload_name].c_mem_bytes
        feats.append(student_features(query_feature_base(qs, c_mem)))
        labels.append(qs.result.chosen_arm)
        mask.append(_is_train(split_seed, query_id))
    features = np.stack(feats)
    targets = np.array(labels, np.int64)
    train = np.array(mask)
    if bool(train.all()) or not bool(train.any()):
        raise TrainingDataError(
            "query split left train or holdout empty; add queries")

    linear = train_linear(features[train], targets[train])
    boosted = train_boosted(features[train], targets[train])
    evaluation = {
        "n_train": int(train.sum()),
        "n_holdout": int((~train).sum()),
        "linear": {
            "train_agreement": agreement(linear, features[train],
                                         targets[train]),
            "holdout_agreement": agreement(linear, features[~train],
                                           targets[~train]),
        },
        "boosted": {
            "train_agreement": agreement(boosted, features[train],
                                         targets[train]),
            "holdout_agreement": agreement(boosted, features[~train],
                                           targets[~train]),
        },
    }
    return Phase4Result(linear=linear, boosted=boosted,
                        evaluation=evaluation, split_seed=split_seed)


# ---------------------------------------------------------------------------
# Ablations: final plan per method per query

@dataclass
class MethodOutcome:
    arm: int
    latency_ms: float
    memory_bytes: float
    feasible: bool
    planning_wall_ms: float
    # search methods pay for every candidate plan they execute while
    # planning; fixed-arm and student methods never execute candidates
    candidate_execution_ms: float = 0.0


def _fixed_arm_outcomes(phase2: Phase2Result, arm: int,
                        timed_construction: bool) -> dict[str, MethodOutcome]:
    """Measure one fixed configuration everywhere.

    The all-off baseline reports planning time 0 by convention (nothing is
    planned); rule-based fixed configs charge the plan construction.
    """
    out = {}
    config = PlanConfig.from_index(arm)
    for query_id, qs in phase2.searches.items():
        wall = 0.0
        if timed_construction:
            start = time.perf_counter()
            apply_plan(qs.ir, config, qs.schema,
                       qs.executor.sample_rate)
            wall = (time.perf_counter() - start) * 1000.0
        latency, memory, feasible = qs.executor(arm)
        out[query_id] = MethodOutcome(arm, latency, memory, feasible, wall)
    return out


def _search_outcomes(phase2: Phase2Result) -> dict[str, MethodOutcome]:
    out = {}
    for query_id, qs in phase2.searches.items():
        arm = qs.result.chosen_arm
        latency, memory, feasible = qs.executor(arm)
        out[query_id] = MethodOutcome(arm, latency, memory, feasible,
                                      qs.planning_wall_ms,
                                      qs.candidate_execution_ms)
    return out


def _student_outcomes(phase2: Phase2Result, student) -> dict[str, MethodOutcome]:
    """Single forward pass per query: featurize, pick the arm, build the plan."""
    out = {}
    for query_id, qs in phase2.searches.items():
        c_mem = phase2.constraints[qs.workload_name].c_mem_bytes
        start = time.perf_counter()
        row = student_features(query_feature_base(qs, c_mem))
        arm = int(predict_arm(student, row[None, :])[0])
        apply_plan(qs.ir, PlanConfig.from_index(arm), qs.schema,
                   qs.executor.sample_rate)
        wall = (time.perf_counter() - start) * 1000.0
        latency, memory, feasible = qs.executor(arm)
        out[query_id] = MethodOutcome(arm, latency, memory, feasible, wall)
    return out


def run_ablations(workloads: Sequence[Workload], phase2: Phase2Result,
                  phase3: Phase3Result | None, phase4: Phase4Result | None,
                  config: RunConfig, sim_config: SimulatorConfig | None = None,
                  ) -> dict[str, dict[str, MethodOutcome]]:
    """Final (arm, measurement, planning time) per query for each method.

    bandit+cost re-runs the search from scratch with prediction pruning so
    its planning times reflect a cold planner, not the warmed caches of
    phase 2; its measurements still agree because seeds are query-keyed.
    """
    sim_config = sim_config or config.sim_config()
    outcomes: dict[str, dict[str, MethodOutcome]] = {}
    for mode in config.ablations:
        if mode == "baseline":
            outcomes[mode] = _fixed_arm_outcomes(phase2, 0, False)
        elif mode == "teacher":
            outcomes[mode] = _fixed_arm_outcomes(phase2, TEACHER_ARM, True)
        elif mode == "bandit":
            outcomes[mode] = _search_outcomes(phase2)
        elif mode == "bandit+cost":
            if phase3 is None:
                raise TrainingDataError(
                    "bandit+cost ablation needs the phase-3 model")
            pruned = run_phase2(workloads, config, sim_config,
                                constraints=phase2.constraints,
                                model=phase3.model)
            outcomes[mode] = _search_outcomes(pruned)
        elif mode == "student-lr":
            if phase4 is None:
                raise TrainingDataError(
                    "student ablations need the phase-4 students")
            outcomes[mode] = _student_outcomes(phase2, phase4.linear)
        elif mode == "student-gb":
            if phase4 is None:
                raise TrainingDataError(
                    "student ablations need the phase-4 students")
            outcomes[mode] = _student_outcomes(phase2, phase4.boosted)
    return outcomes


# ---------------------------------------------------------------------------
# Metrics

def _mean_std(values: Sequence[float]) -> tuple[float, float]:
    if not values:
        return 0.0, 0.0
    mean = statistics.fmean(values)
    std = statistics.pstdev(values) if len(values) > 1 else 0.0
    return mean, std


def method_metrics(outcomes: dict[str, MethodOutcome],
                   constraints_of: dict[str, ConstraintSet]) -> dict:
    """Latency/CSR block for one method; CSR splits by violated budget."""
    total = len(outcomes)
    lats = [o.latency_ms for o in outcomes.values()]
    lat_ok = mem_ok = all_ok = 0
    for query_id, o in outcomes.items():
        cset = constraints_of[query_id]
        lat_fits = o.latency_ms <= cset.c_lat_ms
        mem_fits = o.memory_bytes <= cset.c_mem_bytes
        lat_ok += lat_fits
        mem_ok += mem_fits
        all_ok += o.feasible
    return {
        "n_queries": total,
        "median_latency_ms": float(statistics.median(lats)) if lats else 0.0,
        "mean_latency_ms": float(statistics.fmean(lats)) if lats else 0.0,
        "csr_overall": 100.0 * all_ok / total if total else 0.0,
        "csr_latency": 100.0 * lat_ok / total if total else 0.0,
        "csr_memory": 100.0 * mem_ok / total if total else 0.0,
        "violations": {"latency": total - lat_ok, "memory": total - mem_ok},
    }


def compute_metrics(phase1: dict, phase2: Phase2Result,
                    phase3: Phase3Result | None, phase4: Phase4Result | None,
                    outcomes: dict[str, dict[str, MethodOutcome]],
                    config: RunConfig) -> tuple[dict, dict]:
    """Assemble (report, timings).

    The report carries only seed-determined values; every wall-clock quantity
    goes into the timings dict. Execution latencies are simulator outputs, so
    the planning-to-execution overhead ratio compares wall-clock planning
    milliseconds against simulated execution milliseconds.
    """
    constraints_of = {
        query_id: phase2.constraints[qs.workload_name]
        for query_id, qs in phase2.searches.items()}

    methods = {mode: method_metrics(rows, constraints_of)
               for mode, rows in outcomes.items()}
    base_median = methods.get("baseline", {}).get("median_latency_ms", 0.0)
    for block in methods.values():
        block["latency_reduction_pct"] = (
            100.0 * (1.0 - block["median_latency_ms"] / base_median)
            if base_median > 0 else 0.0)
    for mode, rows in outcomes.items():
        cand = [o.candidate_execution_ms for o in rows.values()]
        methods[mode]["candidate_execution_ms"] = {
            "mean": float(statistics.fmean(cand)) if cand else 0.0,
            "median": float(statistics.median(cand)) if cand else 0.0,
            "total": float(sum(cand)),
        }

    reasons: dict[str, int] = {}
    iterations = []
    executions = []
    for qs in phase2.searches.values():
        reasons[qs.result.termination_reason] = (
            reasons.get(qs.result.termination_reason, 0) + 1)
        iterations.append(qs.result.iterations)
        executions.append(len(qs.executor.traces))

    report = {
        "format": REPORT_FORMAT,
        "version": REPORT_VERSION,
        "run_config": config.to_dict(),
        "workloads": phase1["workloads"],
        "constraints": {
            name: {"c_lat_ms": c.c_lat_ms, "c_mem_bytes": c.c_mem_bytes}
            for name, c in sorted(phase2.constraints.items())},
        "search": {
            "n_queries": len(phase2.searches),
            "termination_reasons": dict(sorted(reasons.items())),
            "mean_iterations": (statistics.fmean(iterations)
                                if iterations else 0.0),
            "mean_executions": (statistics.fmean(executions)
                                if executions else 0.0),
            "n_traces": len(phase2.traces),
        },
        "methods": {mode: methods[mode] for mode in sorted(methods)},
        "planning_time_note": (
            "planning time = bookkeeping wall clock + simulated latency of "
            "candidate plans executed while planning. Search methods charge "
            "every candidate they run; fixed-arm and student methods run "
            "none, and the all-off baseline charges 0 by convention (its "
            "plan is the query as written). The candidate-execution part is "
            "seed-determined and lives here; wall clock lives in "
            "timings.json because elapsed time is not seed-reproducible."),
    }
    if phase3 is not None:
        report["cost_model"] = phase3.evaluation
    if phase4 is not None:
        report["distillation"] = phase4.evaluation

    planning = {}
    for mode, rows in outcomes.items():
        walls = [o.planning_wall_ms for o in rows.values()]
        totals = [o.planning_wall_ms + o.candidate_execution_ms
                  for o in rows.values()]
        mean, std = _mean_std(walls)
        exec_total = sum(o.latency_ms for o in rows.values())
        planning[mode] = {
            "mean_ms": mean,
            "std_ms": std,
            "median_ms": float(statistics.median(walls)) if walls else 0.0,
            "total_ms": float(sum(walls)),
            # wall plus candidate executions: the full cost of planning
            "median_total_ms": (float(statistics.median(totals))
                                if totals else 0.0),
            "total_total_ms": float(sum(totals)),
            "overhead_ratio_vs_execution": (
                sum(totals) / exec_total if exec_total > 0 else 0.0),
        }
    timings = {"planning": planning}
    if "bandit" in planning:
        search_med = planning["bandit"]["median_total_ms"]
        for mode in ("student-lr", "student-gb"):
            if mode in planning and planning[mode]["median_total_ms"] > 0:
                timings.setdefault("student_speedup", {})[mode] = (
                    search_med / planning[mode]["median_total_ms"])
        if "bandit+cost" in planning:
            timings["pruning_planning_ratio"] = (
                planning["bandit+cost"]["total_total_ms"]
                / planning["bandit"]["total_total_ms"]
                if planning["bandit"]["total_total_ms"] > 0 else 0.0)
    return report, timings


def validate_report(report: dict) -> None:
    """Schema and invariant checks; raises HarnessError on violation."""
    if report.get("format") != REPORT_FORMAT:
        raise HarnessError(f"report format {report.get('format')!r} "
                           f"does not match {REPORT_FORMAT!r}")
    if report.get("version") != REPORT_VERSION:
        raise HarnessError(f"unsupported report version "
                           f"{report.get('version')!r}")
    for key in ("run_config", "workloads", "constraints", "search",
                "methods"):
        if key not in report:
            raise HarnessError(f"report missing section {key!r}")
    for mode, block in report["methods"].items():
        for key in ("median_latency_ms", "csr_overall", "csr_latency",
                    "csr_memory", "violations", "n_queries"):
            if key not in block:
                raise HarnessError(f"method {mode!r} missing {key!r}")
        for key in ("csr_overall", "csr_latency", "csr_memory"):
            if not 0.0 <= block[key] <= 100.0:
                raise HarnessError(f"{mode}.{key} out of [0, 100]")
        if block["median_latency_ms"] < 0:
            raise HarnessError(f"{mode} median latency negative")
        if block["csr_overall"] > min(block["csr_latency"],
                                      block["csr_memory"]) + 1e-9:
            raise HarnessError(
                f"{mode} overall CSR exceeds a per-constraint split")
    methods = report["methods"]
    if "bandit" in methods and "bandit+cost" in methods:
        plain, pruned = methods["bandit"], methods["bandit+cost"]
        if (pruned["candidate_execution_ms"]["total"]
                > plain["candidate_execution_ms"]["total"]):
            raise HarnessError(
                "prediction pruning must not increase candidate executions")
        if plain["median_latency_ms"] > 0 and (
                pruned["median_latency_ms"]
                > 1.05 * plain["median_latency_ms"]):
            raise HarnessError(
                "pruned search worsened median latency by more than 5%")


# ---------------------------------------------------------------------------
# Report emission

def _write_csv(path: str, header: Sequence[str],
               rows: Sequence[Sequence]) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def emit_report(run_dir: str, report: dict, timings: dict,
                phase2: Phase2Result, phase3: Phase3Result | None,
                outcomes: dict[str, dict[str, MethodOutcome]]) -> None:
    """report.json + timings.json + CSV series for the figure analogs."""
    report_dir = os.path.join(run_dir, "report")
    save_json(os.path.join(report_dir, "report.json"), report)
    save_json(os.path.join(report_dir, "timings.json"), timings)

    ladder_rows = []
    for mode in sorted(outcomes):
        block = report["methods"][mode]
        ladder_rows.append([
            mode, repr(block["median_latency_ms"]),
            repr(block["csr_overall"]), repr(block["csr_latency"]),
            repr(block["csr_memory"])])
    _write_csv(os.path.join(report_dir, "series_method_ladder.csv"),
               ["method", "median_latency_ms", "csr_overall", "csr_latency",
                "csr_memory"], ladder_rows)

    if phase3 is not None:
        pred_rows = []
        for query_id in sorted(phase2.searches):
            qs = phase2.searches[query_id]
            if _is_train(phase3.split_seed, query_id):
                continue
            rows = qs.executor.traces
            base = query_feature_base(
                qs, phase2.constraints[qs.workload_name].c_mem_bytes)
            feats = _arm_feature_matrix(base, [t.arm for t in rows])
            preds = predict_latency(phase3.model, feats)
            for trace, pred in zip(rows, preds):
                pred_rows.append([query_id, trace.arm,
                                  repr(trace.latency_ms), repr(float(pred))])
        _write_csv(os.path.join(report_dir, "series_cost_model.csv"),
                   ["query_id", "arm", "actual_latency_ms",
                    "predicted_latency_ms"], pred_rows)

    reward_sums: dict[int, list[float]] = {}
    for qs in phase2.searches.values():
        for entry in qs.result.rounds:
            reward_sums.setdefault(entry["iteration"], []).append(
                entry["reward"])
    reward_rows = [[it, repr(statistics.fmean(vals)), len(vals)]
                   for it, vals in sorted(reward_sums.items())]
    _write_csv(os.path.join(report_dir, "series_search_reward.csv"),
               ["iteration", "mean_reward", "n_queries"], reward_rows)


# ---------------------------------------------------------------------------
# Full run

@dataclass
class RunArtifacts:
    run_dir: str
    config: RunConfig
    workloads: list[Workload]
    phase1: dict
    phase2: Phase2Result
    phase3: Phase3Result
    phase4: Phase4Result
    outcomes: dict[str, dict[str, MethodOutcome]]
    report: dict
    timings: dict


def execute_run(config: RunConfig, run_dir: str) -> RunArtifacts:
    """All four phases, the ablation ladder, and the report, in order.

    Every artifact lands under run_dir as it is produced, so a failing phase
    leaves the completed phases' outputs on disk.
    """
    os.makedirs(run_dir, exist_ok=True)
    sim_config = config.sim_config()
    walls: dict[str, float] = {}

    save_json(os.path.join(run_dir, "run_config.json"), config.to_dict())
    start = time.perf_counter()
    workloads = build_workloads(config)
    for wl in workloads:
        save_json(os.path.join(run_dir, "workloads", f"{wl.name}.json"),
                  workload_to_dict(wl))
    walls["generate_ms"] = (time.perf_counter() - start) * 1000.0

    start = time.perf_counter()
    phase1 = run_phase1(workloads)
    save_json(os.path.join(run_dir, "phase1", "summary.json"), phase1)
    walls["phase1_ms"] = (time.perf_counter() - start) * 1000.0

    start = time.perf_counter()
    phase2 = run_phase2(workloads, config, sim_config)
    write_trace_log(os.path.join(run_dir, "phase2", "traces.jsonl"),
                    phase2.traces)
    save_json(os.path.join(run_dir, "phase2", "constraints.json"),
              {name: {"c_lat_ms": c.c_lat_ms, "c_mem_bytes": c.c_mem_bytes}
               for name, c in sorted(phase2.constraints.items())})
    save_json(os.path.join(run_dir, "phase2", "searches.json"),
              {query_id: qs.result.to_dict()
               for query_id, qs in phase2.searches.items()})
    walls["phase2_ms"] = (time.perf_counter() - start) * 1000.0

    start = time.perf_counter()
    phase3 = run_phase3(phase2, config)
    save_model(os.path.join(run_dir, "phase3", "model.json"), phase3.model)
    save_json(os.path.join(run_dir, "phase3", "evaluation.json"),
              phase3.evaluation)
    walls["phase3_ms"] = (time.perf_counter() - start) * 1000.0

    start = time.perf_counter()
    phase4 = run_phase4(phase2, config)
    save_student(os.path.join(run_dir, "phase4", "student_linear.json"),
                 phase4.linear)
    save_student(os.path.join(run_dir, "phase4", "student_boosted.json"),
                 phase4.boosted)
    save_json(os.path.join(run_dir, "phase4", "evaluation.json"),
              phase4.evaluation)
    walls["phase4_ms"] = (time.perf_counter() - start) * 1000.0

    start = time.perf_counter()
    outcomes = run_ablations(workloads, phase2, phase3, phase4, config,
                             sim_config)
    save_json(
        os.path.join(run_dir, "ablations", "outcomes.json"),
        {mode: {query_id: {"arm": o.arm, "latency_ms": o.latency_ms,
                           "memory_bytes": o.memory_bytes,
                           "feasible": o.feasible}
                for query_id, o in rows.items()}
         for mode, rows in outcomes.items()})
    walls["ablations_ms"] = (time.perf_counter() - start) * 1000.0

    report, timings = compute_metrics(phase1, phase2, phase3, phase4,
                                      outcomes, config)
    validate_report(report)
    timings["phases"] = walls
    emit_report(run_dir, report, timings, phase2, phase3, outcomes)
    return RunArtifacts(run_dir=run_dir, config=config, workloads=workloads,
                        phase1=phase1, phase2=phase2, phase3=phase3,
                        phase4=phase4, outcomes=outcomes, report=report,
                        timings=timings)


def summarize_report(report: dict, timings: dict | None = None) -> str:
    """Plain-text summary of a run for terminal display."""
    lines = []
    cfg = report["run_config"]
    lines.append(f"run seed {cfg['seed']}  backend {cfg['backend']}  "
                 f"profile {cfg['constraints_profile']}")
    for wl in report["workloads"]:
        lines.append(f"workload {wl['name']}: {wl['n_queries']} queries on "
                     f"{len(wl['tables'])} tables ({wl['shape']})")
    search = report["search"]
    lines.append(f"search: {search['n_queries']} queries, "
                 f"{search['n_traces']} executions, "
                 f"mean {search['mean_iterations']:.1f} iterations")
    lines.append("")
    lines.append(f"{'method':<14} {'median ms':>10} {'vs base':>8} "
                 f"{'CSR':>6} {'lat':>6} {'mem':>6}")
    for mode, block in report["methods"].items():
        lines.append(
            f"{mode:<14} {block['median_latency_ms']:>10.2f} "
            f"{block['latency_reduction_pct']:>7.1f}% "
            f"{block['csr_overall']:>5.1f}% {block['csr_latency']:>5.1f}% "
            f"{block['csr_memory']:>5.1f}%")
    if "cost_model" in report:
        hold = report["cost_model"]["holdout"]
        r2 = hold["r2"]
        lines.append("")
        lines.append(f"cost model holdout: MAE {hold['mae_ms']:.3f} ms, "
                     f"R2 {r2 if r2 is None else format(r2, '.4f')}, "
                     f"n={hold['n']}")
    if "distillation" in report:
        dist = report["distillation"]
        lines.append(
            f"students holdout agreement: linear "
            f"{dist['linear']['holdout_agreement']:.3f}, boosted "
            f"{dist['boosted']['holdout_agreement']:.3f} "
            f"(n={dist['n_holdout']})")
    if timings:
        planning = timings.get("planning", {})
        if planning:
            lines.append("")
            lines.append(f"{'planning':<14} {'wall ms':>10} {'std':>8} "
                         f"{'med total':>12}")
            for mode, block in planning.items():
                lines.append(f"{mode:<14} {block['mean_ms']:>10.3f} "
                             f"{block['std_ms']:>8.3f} "
                             f"{block['median_total_ms']:>12.3f}")
        for mode, ratio in timings.get("student_speedup", {}).items():
            lines.append(f"{mode} speedup vs search: {ratio:.1f}x")
        if "pruning_planning_ratio" in timings:
            lines.append(f"pruned search planning cost: "
                         f"{100 * timings['pruning_planning_ratio']:.1f}% "
                         f"of plain search")
    return "\n".join(lines)
