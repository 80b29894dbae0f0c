"""Execution layer: exact reference evaluator, seeded cost simulator,
feasibility checking, the engine-adapter contract, and the trace log.

The reference evaluator computes exact multiset semantics and is the ground
truth for plan-equivalence checks. LIMIT without ORDER BY takes the first n
rows under a canonical type-ranked ordering of the output rows, and ORDER BY
ties break the same way, so every query is a pure function of its input
multisets and results survive join reordering bit-for-bit.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass
from typing import Iterable, Mapping, Protocol

import numpy as np

from .ir import (
    Aggregate, AggRatio, ColumnRef, QueryIR, QueryError, SchemaModel,
    TableRef, output_name, parse_sql,
)
from .jsonio import derive_seed
from .teacher import (
    estimate_cardinality, ref_output_rows, ref_output_width, ref_scan_rows,
)


class MissingTableError(QueryError):
    """Query references a table the dataset does not contain."""


class TypeMismatchError(QueryError):
    """Comparison between incompatible value types."""


class SamplingUnsupportedError(QueryError):
    """The exact evaluator refuses plans with a sample rate below 1."""


class TraceLogError(QueryError):
    """Trace log line does not match the expected record shape."""


# ---------------------------------------------------------------------------
# Relations

@dataclass(frozen=True)
class Relation:
    columns: tuple[str, ...]
    rows: tuple[tuple, ...]


def relation_from_csv(path: str) -> Relation:
    """Load a relation from CSV (header row = column names).

    Cell types are inferred per cell: int when it parses as one, else float,
    else string.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [tuple(_parse_cell(c) for c in row) for row in reader]
    return Relation(tuple(header), tuple(rows))


def relation_to_csv(path: str, relation: Relation) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(relation.columns)
        writer.writerows(relation.rows)


def _parse_cell(text: str):
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


# ---------------------------------------------------------------------------
# Reference evaluator

_NUMERIC = (int, float)


def _canonical_cell(value) -> tuple:
    # Total order across the value types the grammar admits: numerics first
    # (cross-type numeric comparison is exact), then strings.
    if isinstance(value, _NUMERIC) and not isinstance(value, bool):
        return (0, float(value), 0.0 if isinstance(value, int) else 1.0)
    if isinstance(value, str):
        return (1, value, 0.0)
    raise TypeMismatchError(f"unsupported cell value {value!r}")


def canonical_row_key(row: tuple) -> tuple:
    return tuple(_canonical_cell(v) for v in row)


def rows_multiset_equal(a: Iterable[tuple], b: Iterable[tuple]) -> bool:
    """Compare two row collections as multisets under the canonical order."""
    left = sorted(a, key=canonical_row_key)
    right = sorted(b, key=canonical_row_key)
    return left == right


def _compare_values(left, right, op: str) -> bool:
    num_l = isinstance(left, _NUMERIC) and not isinstance(left, bool)
    num_r = isinstance(right, _NUMERIC) and not isinstance(right, bool)
    if num_l != num_r or (not num_l and not isinstance(left, str)):
        raise TypeMismatchError(
            f"cannot compare {type(left).__name__} with {type(right).__name__}")
    if op == "=":
        return left == right
    if op == "<>":
        return left != right
    if op == "<":
        return left < right
    if op == "<=":
        return left <= right
    if op == ">":
        return left > right
    if op == ">=":
        return left >= right
    raise QueryError(f"unknown comparison operator '{op}'")


def _materialize_ref(ref: TableRef, data: Mapping[str, Relation]) -> Relation:
    if ref.subquery is not None:
        return evaluate_reference(ref.subquery, data)
    if ref.table not in data:
        raise MissingTableError(f"no data for table '{ref.table}'")
    return data[ref.table]


def _aggregate_value(agg: Aggregate, rows: list[tuple], col_pos) -> object:
    if agg.func == "COUNT":
        return len(rows)
    values = [row[col_pos[(agg.arg.alias, agg.arg.column)]] for row in rows]
    if not values:
        return 0
    if agg.func == "SUM":
        return sum(values)
    if agg.func == "AVG":
        return sum(values) / len(values)
    if agg.func == "MIN":
        return min(values)
    return max(values)


def evaluate_reference(ir: QueryIR, data: Mapping[str, Relation]) -> Relation:
    """Evaluate a plan exactly over in-memory relations.

    Logical order: materialize FROM entries (recursing into derived tables),
    hash-join left to right, apply top-level predicates, group/aggregate,
    order, limit. Global aggregates over empty input yield one row with
    COUNT 0 and SUM/AVG/MIN/MAX 0.
    """
    if ir.sample_rate is not None and ir.sample_rate != 1.0:
        raise SamplingUnsupportedError(
            f"exact evaluation with sample rate {ir.sample_rate}")

    first = ir.base_tables[0]
    rel = _materialize_ref(first, data)
    col_pos = {(first.alias, name): i for i, name in enumerate(rel.columns)}
    rows = [tuple(r) for r in rel.rows]

    for i, join in enumerate(ir.joins):
        ref = ir.base_tables[i + 1]
        right_rel = _materialize_ref(ref, data)
        right_pos = {name: j for j, name in enumerate(right_rel.columns)}
        if join.left.alias == ref.alias:
            new_col, old_col = join.left, join.right
        else:
            new_col, old_col = join.right, join.left
        old_idx = col_pos[(old_col.alias, old_col.column)]
        new_idx = right_pos[new_col.column]

        if rows and right_rel.rows and not _same_kind(
                rows[0][old_idx], right_rel.rows[0][new_idx]):
            raise TypeMismatchError(
                f"join key type mismatch on {old_col.alias}.{old_col.column}")
        buckets: dict[object, list[tuple]] = {}
        for rrow in right_rel.rows:
            key = rrow[new_idx]
            _canonical_cell(key)
            buckets.setdefault(key, []).append(tuple(rrow))
        joined = []
        for lrow in rows:
            for rrow in buckets.get(lrow[old_idx], ()):
                joined.append(lrow + rrow)
        base = len(col_pos)
        for j, name in enumerate(right_rel.columns):
            col_pos[(ref.alias, name)] = base + j
        rows = joined

    for pred in ir.predicates:
        idx = col_pos[(pred.column.alias, pred.column.column)]
        rows = [r for r in rows if _compare_values(r[idx], pred.value, pred.op)]

    grouped = bool(ir.group_by) or ir.has_aggregates()
    if grouped:
        key_idx = [col_pos[(c.alias, c.column)] for c in ir.group_by]
        groups: dict[tuple, list[tuple]] = {}
        for row in rows:
            groups.setdefault(tuple(row[i] for i in key_idx), []).append(row)
        if not ir.group_by and not groups:
            groups[()] = []

        out_rows = []
        order_keys = []
        for key, members in groups.items():
            key_val = dict(zip(key_idx, key))
            cells = []
            for item in ir.projections:
                if isinstance(item, ColumnRef):
                    cells.append(key_val[col_pos[(item.alias, item.column)]])
                elif isinstance(item, Aggregate):
                    cells.append(_aggregate_value(item, members, col_pos))
                else:
                    num = _aggregate_value(item.numerator, members, col_pos)
                    den = _aggregate_value(item.denominator, members, col_pos)
                    cells.append(num / den if den else 0.0)
            out_rows.append(tuple(cells))
            if ir.order_by is not None:
                order_keys.append(tuple(
                    key_val[col_pos[(c.alias, c.column)]]
                    for c in ir.order_by.columns))
    else:
        proj_idx = [col_pos[(item.alias, item.column)] for item in ir.projections]
        out_rows = [tuple(r[i] for i in proj_idx) for r in rows]
        if ir.order_by is not None:
            order_idx = [col_pos[(c.alias, c.column)] for c in ir.order_by.columns]
            order_keys = [tuple(r[i] for i in order_idx) for r in rows]

    if ir.order_by is not None:
        paired = sorted(zip(order_keys, out_rows),
                        key=lambda kv: canonical_row_key(kv[1]))
        paired.sort(key=lambda kv: canonical_row_key(kv[0]),
                    reverse=ir.order_by.descending)
        out_rows = [row for _, row in paired]
    elif ir.limit is not None:
        out_rows = sorted(out_rows, key=canonical_row_key)

    if ir.limit is not None:
        out_rows = out_rows[:ir.limit]

    return Relation(tuple(output_name(p) for p in ir.projections), tuple(out_rows))


def _same_kind(a, b) -> bool:
    num_a = isinstance(a, _NUMERIC) and not isinstance(a, bool)
    num_b = isinstance(b, _NUMERIC) and not isinstance(b, bool)
    return num_a == num_b and (num_a or isinstance(a, str) == isinstance(b, str))


# ---------------------------------------------------------------------------
# Resources, constraints, simulator

@dataclass(frozen=True)
class ResourceSnapshot:
    memory_in_use: float  # bytes already committed on the host
    cpu_load: float       # fraction of CPU busy, in [0, 1]

    def __post_init__(self):
        if not 0.0 <= self.cpu_load <= 1.0:
            raise ValueError(f"cpu_load out of [0, 1]: {self.cpu_load!r}")
        if self.memory_in_use < 0:
            raise ValueError(f"negative memory_in_use: {self.memory_in_use!r}")


@dataclass(frozen=True)
class ConstraintSet:
    c_lat_ms: float
    c_mem_bytes: float

    def __post_init__(self):
        if self.c_lat_ms <= 0 or self.c_mem_bytes <= 0:
            raise ValueError("constraint bounds must be positive")


@dataclass(frozen=True)
class SimulatorConfig:
    alpha_ms_per_row: float = 0.002
    # mild interference slope: host load shifts latency a few percent, it
    # does not dominate the plan-structure signal the cost model learns
    beta_cpu: float = 0.1
    gamma_mem: float = 1.0
    bytes_per_column: int = 8
    noise: float = 0.05  # multiplicative latency noise half-width; 0 disables


def simulate_execution(ir: QueryIR, schema: SchemaModel,
                       resources: ResourceSnapshot,
                       config: SimulatorConfig,
                       seed: int) -> tuple[float, float]:
    """Seeded cost simulation of one plan; returns (latency_ms, memory_bytes).

    Work is the sum of per-table scan estimates plus every join-prefix
    intermediate estimate; the estimates count only effects physically inside
    each derived table, so pushdown rewrites genuinely shrink them. Latency
    gets a seeded uniform +/- noise factor; memory is the widest intermediate
    times the largest intermediate cardinality plus memory already in use.

    The noise draw is keyed on (seed, work), so two plans that do the same
    physical work under the same seed measure identically. Plans can only
    separate by doing different work, never by a private noise draw, which
    keeps argmin comparisons between equivalent rewrites deterministic.
    """
    scans = [ref_scan_rows(ref, schema) for ref in ir.base_tables]
    widths = [ref_output_width(ref, schema) for ref in ir.base_tables]

    if ir.joins:
        prefix_cards = []
        aliases: set[str] = {ir.base_tables[0].alias}
        for i in range(1, len(ir.base_tables)):
            aliases.add(ir.base_tables[i].alias)
            prefix_cards.append(estimate_cardinality(
                ir, schema, aliases=aliases, include_outer_predicates=False))
        work = sum(scans) + sum(prefix_cards)
        max_rows = max(prefix_cards)
        widest = sum(widths)
    else:
        work = scans[0]
        max_rows = ref_output_rows(ir.base_tables[0], schema)
        widest = widths[0]

    rng = np.random.Generator(np.random.PCG64(derive_seed(seed, repr(float(work)))))
    eps = rng.uniform(-config.noise, config.noise) if config.noise > 0 else 0.0

    latency = (config.alpha_ms_per_row * work
               * (1.0 + config.beta_cpu * resources.cpu_load)
               * (1.0 + eps))
    memory = (config.gamma_mem * max_rows * config.bytes_per_column * widest
              + resources.memory_in_use)
    return float(latency), float(memory)


def check_feasible(latency_ms: float, memory_bytes: float,
                   constraints: ConstraintSet) -> bool:
    """Both bounds are inclusive: a measurement exactly at a bound passes."""
    return (latency_ms <= constraints.c_lat_ms
            and memory_bytes <= constraints.c_mem_bytes)


# ---------------------------------------------------------------------------
# Execution traces

TRACE_LOG_FIELDS = ("query_id", "arm", "flags", "latency_ms", "memory_bytes",
                    "feasible", "seed")


@dataclass(frozen=True)
class ExecutionTrace:
    query_id: str
    arm: int
    flags: str
    latency_ms: float
    memory_bytes: float
    feasible: bool
    seed: int
    timestamp: int = 0  # monotonic tick within a run; not serialized

    def to_record(self) -> dict:
        return {
            "query_id": self.query_id,
            "arm": self.arm,
            "flags": self.flags,
            "latency_ms": self.latency_ms,
            "memory_bytes": self.memory_bytes,
            "feasible": self.feasible,
            "seed": self.seed,
        }


def write_trace_log(path: str, traces: Iterable[ExecutionTrace]) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as fh:
        for trace in traces:
            fh.write(json.dumps(trace.to_record(), sort_keys=True) + "\n")


def read_trace_log(path: str) -> list[ExecutionTrace]:
    traces = []
    with open(path) as fh:
        for lineno, line in enumerate(fh):
            if not line.strip():
                continue
            record = json.loads(line)
            if set(record) != set(TRACE_LOG_FIELDS):
                raise TraceLogError(
                    f"line {lineno + 1}: fields {sorted(record)} do not match "
                    f"{sorted(TRACE_LOG_FIELDS)}")
            arm = record["arm"]
            if not 0 <= arm < 64:
                raise TraceLogError(f"line {lineno + 1}: arm {arm} out of range")
            if record["flags"] != format(arm, "06b"):
                raise TraceLogError(
                    f"line {lineno + 1}: flags {record['flags']!r} do not "
                    f"encode arm {arm}")
            traces.append(ExecutionTrace(
                query_id=record["query_id"],
                arm=arm,
                flags=record["flags"],
                latency_ms=float(record["latency_ms"]),
                memory_bytes=float(record["memory_bytes"]),
                feasible=bool(record["feasible"]),
                seed=int(record["seed"]),
                timestamp=lineno,
            ))
    return traces


# ---------------------------------------------------------------------------
# Engine adapter contract

class ResourceViolation(Exception):
    """Signal that an execution exceeded its resource budget."""

    def __init__(self, latency_ms: float, memory_bytes: float):
        super().__init__(f"resource violation: {latency_ms:.3f} ms, "
                         f"{memory_bytes:.0f} bytes")
        self.latency_ms = latency_ms
        self.memory_bytes = memory_bytes


class EngineAdapter(Protocol):
    """Anything that can execute rendered SQL under resource constraints.

    ``execute`` returns (latency_ms, memory_bytes) for a completed run and
    raises ResourceViolation (carrying the measurements) when the run blew
    its budget. The harness only depends on this contract, so a real engine
    can replace the simulator without harness changes.
    """

    def execute(self, sql: str,
                constraints: ConstraintSet) -> tuple[float, float]: ...


class SimulatorAdapter:
    """EngineAdapter backed by the cost simulator; parses rendered SQL."""

    def __init__(self, schema: SchemaModel, resources: ResourceSnapshot,
                 config: SimulatorConfig | None = None, seed_salt: int = 0):
        self.schema = schema
        self.resources = resources
        self.config = config or SimulatorConfig()
        self.seed_salt = seed_salt

    def execute(self, sql: str,
                constraints: ConstraintSet) -> tuple[float, float]:
        ir = parse_sql(sql, self.schema)
        seed = derive_seed("adapter", self.seed_salt)
        latency, memory = simulate_execution(
            ir, self.schema, self.resources, self.config, seed)
        if not check_feasible(latency, memory, constraints):
            raise ResourceViolation(latency, memory)
        return latency, memory


def adapter_execute(adapter: EngineAdapter, sql: str,
                    constraints: ConstraintSet) -> tuple[float, float, bool]:
    """Run SQL through an adapter, folding the violation signal into a flag."""
    try:
        latency, memory = adapter.execute(sql, constraints)
        return latency, memory, True
    except ResourceViolation as violation:
        return violation.latency_ms, violation.memory_bytes, False
