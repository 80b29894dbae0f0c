"""Flag-gated plan rewrites and cardinality estimation.

Six rewrite strategies, each toggled by one bit of a 6-bit configuration,
give a 64-arm plan space per query. A strategy whose preconditions fail is a
no-op, so every configuration always yields a valid plan and the index<->bits
bijection never degenerates. Rewrites preserve query semantics for every
configuration with sampling off; sampling trades exactness for cost.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .ir import (
    AGG_FUNCS, Aggregate, AggRatio, ColumnRef, Join, Predicate, QueryIR,
    SchemaModel, TableRef, check_ir, iter_column_refs, output_name,
)

STRATEGY_NAMES = (
    "early_filter",
    "projection_pushdown",
    "pre_aggregation",
    "join_reorder",
    "sampling",
    "limit_pushdown",
)
N_STRATEGIES = len(STRATEGY_NAMES)
N_ARMS = 1 << N_STRATEGIES
DEFAULT_SAMPLE_RATE = 0.1

# Rewrites compose in a fixed order, which differs from bit order: filters
# first so later stages see reduced inputs, sampling last so it wraps the
# final plan shape.
REWRITE_ORDER = (
    "early_filter",
    "projection_pushdown",
    "pre_aggregation",
    "join_reorder",
    "limit_pushdown",
    "sampling",
)


@dataclass(frozen=True)
class PlanConfig:
    """One of the 64 strategy combinations; field order matches bit order."""

    early_filter: bool = False
    projection_pushdown: bool = False
    pre_aggregation: bool = False
    join_reorder: bool = False
    sampling: bool = False
    limit_pushdown: bool = False

    @classmethod
    def from_index(cls, index: int) -> "PlanConfig":
        if not 0 <= index < N_ARMS:
            raise ValueError(f"arm index out of range: {index}")
        return cls(*(bool((index >> bit) & 1) for bit in range(N_STRATEGIES)))

    @property
    def index(self) -> int:
        return sum(int(getattr(self, name)) << bit
                   for bit, name in enumerate(STRATEGY_NAMES))

    @property
    def flags_string(self) -> str:
        """6-char bitstring, the binary of the arm index (early_filter is
        the least significant, rightmost character)."""
        return format(self.index, "06b")

    def enabled(self) -> tuple[str, ...]:
        return tuple(name for name in STRATEGY_NAMES if getattr(self, name))


@dataclass(frozen=True)
class PlanCandidate:
    config: PlanConfig
    ir: QueryIR
    applied: tuple[str, ...]


def all_configs() -> tuple[PlanConfig, ...]:
    return tuple(PlanConfig.from_index(i) for i in range(N_ARMS))


# ---------------------------------------------------------------------------
# Cardinality estimation

def _selectivity(op: str, distinct: int) -> float:
    d = max(1, distinct)
    if op == "=":
        return 1.0 / d
    if op == "<>":
        return 1.0 - 1.0 / d
    return 1.0 / 3.0


def ref_base_table(ref: TableRef) -> str:
    """Name of the base table underneath a (possibly derived) FROM entry."""
    if ref.subquery is None:
        return ref.table
    return ref_base_table(ref.subquery.base_tables[0])


def ref_base_rows(ref: TableRef, schema: SchemaModel) -> int:
    return schema.table(ref_base_table(ref)).row_count


def distinct_for(ref: TableRef, column: str, schema: SchemaModel) -> int:
    """Distinct-value estimate for a column exposed by a FROM entry."""
    if ref.subquery is None:
        return schema.table(ref.table).distinct_count(column)
    for item in ref.subquery.projections:
        if output_name(item) == column:
            if isinstance(item, ColumnRef):
                inner_ref = ref.subquery.table_ref(item.alias)
                return distinct_for(inner_ref, item.column, schema)
            # Aggregate outputs: no per-column statistic exists; fall back
            # to the underlying table's row count.
            return ref_base_rows(ref, schema)
    return ref_base_rows(ref, schema)


def ref_output_rows(ref: TableRef, schema: SchemaModel) -> float:
    """Estimated rows a FROM entry produces, counting only effects inside it."""
    if ref.subquery is None:
        return float(schema.table(ref.table).row_count)
    return estimate_cardinality(ref.subquery, schema)


def ref_scan_rows(ref: TableRef, schema: SchemaModel) -> float:
    """Estimated rows physically read for a FROM entry.

    Sampling, pushed-down predicates and LIMIT cut the scan; GROUP BY does
    not (the base input must still be read before it shrinks).
    """
    if ref.subquery is None:
        return float(schema.table(ref.table).row_count)
    sub = ref.subquery
    rows = ref_scan_rows(sub.base_tables[0], schema)
    if sub.sample_rate is not None:
        rows *= sub.sample_rate
    by_alias = {r.alias: r for r in sub.base_tables}
    for pred in sub.predicates:
        rows *= _selectivity(
            pred.op, distinct_for(by_alias[pred.column.alias],
                                  pred.column.column, schema))
    if sub.limit is not None:
        rows = min(rows, float(sub.limit))
    return rows


def ref_output_width(ref: TableRef, schema: SchemaModel) -> int:
    if ref.subquery is None:
        return len(schema.table(ref.table).columns)
    return len(ref.subquery.projections)


def estimate_cardinality(ir: QueryIR, schema: SchemaModel,
                         aliases: frozenset[str] | set[str] | None = None,
                         include_outer_predicates: bool = True) -> float:
    """Estimated output rows of joining the given aliases (default: all).

    Per-table size = base rows after sampling and the predicates physically
    inside that table's subquery; equality predicates count 1/distinct,
    ranges 1/3, not-equal 1 - 1/distinct. Each join edge inside the alias
    set multiplies by 1/max(distinct(left), distinct(right)). When the whole
    query is estimated, GROUP BY caps the result at the product of key
    distinct counts and LIMIT caps it at the limit.

    ``include_outer_predicates=False`` excludes the query's own top-level
    predicates, giving the physical size of the join before final filtering.
    """
    refs = [r for r in ir.base_tables
            if aliases is None or r.alias in aliases]
    if not refs:
        return 0.0

    est = 1.0
    for ref in refs:
        rows = ref_output_rows(ref, schema)
        if include_outer_predicates:
            for pred in ir.predicates:
                if pred.column.alias == ref.alias:
                    rows *= _selectivity(
                        pred.op, distinct_for(ref, pred.column.column, schema))
        est *= rows

    selected = {r.alias for r in refs}
    by_alias = {r.alias: r for r in ir.base_tables}
    for join in ir.joins:
        if join.left.alias in selected and join.right.alias in selected:
            d_left = distinct_for(by_alias[join.left.alias],
                                  join.left.column, schema)
            d_right = distinct_for(by_alias[join.right.alias],
                                   join.right.column, schema)
            est /= max(1, d_left, d_right)

    if aliases is None:
        if ir.sample_rate is not None:
            est *= ir.sample_rate
        if ir.group_by:
            cap = 1.0
            for key in ir.group_by:
                cap *= max(1, distinct_for(by_alias[key.alias], key.column, schema))
            est = min(est, cap)
        if ir.limit is not None:
            est = min(est, float(ir.limit))
    return est


# ---------------------------------------------------------------------------
# Rewrite helpers

def _replace_ref(ir: QueryIR, alias: str, new_ref: TableRef) -> QueryIR:
    refs = tuple(new_ref if r.alias == alias else r for r in ir.base_tables)
    return replace(ir, base_tables=refs)


def _ensure_subquery(ir: QueryIR, alias: str, schema: SchemaModel) -> QueryIR:
    """Wrap a bare base table in a pass-through derived table."""
    ref = ir.table_ref(alias)
    if ref.subquery is not None:
        return ir
    table = schema.table(ref.table)
    inner_alias = ref.table
    sub = QueryIR(
        projections=tuple(ColumnRef(inner_alias, c) for c in table.column_names()),
        base_tables=(TableRef(ref.table, inner_alias),),
    )
    return _replace_ref(ir, alias, TableRef("", ref.alias, subquery=sub))


def _inner_column(sub: QueryIR, name: str) -> ColumnRef | None:
    for item in sub.projections:
        if output_name(item) == name:
            return item if isinstance(item, ColumnRef) else None
    return None


# ---------------------------------------------------------------------------
# Rewrites. Each returns the input unchanged when its preconditions fail.

def rewrite_early_filter(ir: QueryIR, schema: SchemaModel) -> QueryIR:
    """Push top-level predicates into per-table derived tables."""
    if not ir.predicates:
        return ir
    current = ir
    remaining = list(ir.predicates)
    for ref in ir.base_tables:
        mine = [p for p in remaining if p.column.alias == ref.alias]
        if not mine:
            continue
        current = _ensure_subquery(current, ref.alias, schema)
        new_ref = current.table_ref(ref.alias)
        sub = new_ref.subquery
        moved = []
        for pred in mine:
            inner = _inner_column(sub, pred.column.column)
            if inner is None:
                continue
            moved.append(Predicate(inner, pred.op, pred.value))
            remaining.remove(pred)
        if not moved:
            continue
        sub = replace(sub, predicates=sub.predicates + tuple(moved))
        current = _replace_ref(current, ref.alias, replace(new_ref, subquery=sub))
    if len(remaining) == len(ir.predicates):
        return ir
    return replace(current, predicates=tuple(remaining))


def rewrite_projection_pushdown(ir: QueryIR, schema: SchemaModel) -> QueryIR:
    """Narrow each table's scan to the columns the outer query references."""
    current = ir
    for ref in ir.base_tables:
        needed = []
        for col in iter_column_refs(current):
            if col.alias == ref.alias and col.column not in needed:
                needed.append(col.column)
        live_ref = current.table_ref(ref.alias)
        if live_ref.subquery is not None:
            sub = live_ref.subquery
            if sub.group_by:
                continue
            keep = tuple(p for p in sub.projections if output_name(p) in needed)
            if not keep:
                keep = (sub.projections[0],)
            if len(keep) < len(sub.projections):
                new_sub = replace(sub, projections=keep)
                current = _replace_ref(current, ref.alias,
                                       replace(live_ref, subquery=new_sub))
        else:
            all_cols = schema.table(live_ref.table).column_names()
            keep_cols = tuple(c for c in all_cols if c in needed)
            if not keep_cols:
                keep_cols = (all_cols[0],)
            if len(keep_cols) < len(all_cols):
                inner_alias = live_ref.table
                sub = QueryIR(
                    projections=tuple(ColumnRef(inner_alias, c) for c in keep_cols),
                    base_tables=(TableRef(live_ref.table, inner_alias),),
                )
                current = _replace_ref(current, ref.alias,
                                       TableRef("", ref.alias, subquery=sub))
    return current


def _partial_name(func: str, arg: ColumnRef | None) -> str:
    if arg is None:
        return "part_cnt_star"
    short = {"COUNT": "cnt", "SUM": "sum", "AVG": "avg",
             "MIN": "min", "MAX": "max"}[func]
    return f"part_{short}_{arg.column}"


def rewrite_pre_aggregation(ir: QueryIR, schema: SchemaModel) -> QueryIR:
    """Aggregate one table before its joins, recombining partials outside.

    Applies only when all group keys and aggregate inputs come from a single
    table, every join on that table uses a group-key column, and every
    remaining top-level predicate on that table references a group key;
    anything else cannot be evaluated after grouping and the rewrite bails.
    """
    if not ir.group_by:
        return ir
    key_aliases = {c.alias for c in ir.group_by}
    if len(key_aliases) != 1:
        return ir
    target = next(iter(key_aliases))
    key_names = {c.column for c in ir.group_by}

    for item in ir.projections:
        if isinstance(item, AggRatio):
            return ir
        if isinstance(item, Aggregate):
            if item.arg is not None and item.arg.alias != target:
                return ir
    for join in ir.joins:
        for side in (join.left, join.right):
            if side.alias == target and side.column not in key_names:
                return ir
    for pred in ir.predicates:
        if pred.column.alias == target and pred.column.column not in key_names:
            return ir

    current = _ensure_subquery(ir, target, schema)
    ref = current.table_ref(target)
    sub = ref.subquery
    if sub.group_by:
        return ir

    inner_keys = []
    for key in ir.group_by:
        inner = _inner_column(sub, key.column)
        if inner is None:
            return ir
        if inner not in inner_keys:
            inner_keys.append(inner)

    partials: dict[str, Aggregate] = {}

    def add_partial(func: str, arg: ColumnRef | None) -> str:
        name = _partial_name(func, arg)
        if name not in partials:
            if arg is None:
                partials[name] = Aggregate("COUNT", None, as_name=name)
            else:
                inner = _inner_column(sub, arg.column)
                if inner is None:
                    raise LookupError(arg.column)
                partials[name] = Aggregate(func, inner, as_name=name)
        return name

    try:
        new_projections = []
        for item in ir.projections:
            if isinstance(item, ColumnRef):
                new_projections.append(item)
            elif item.arg is None:
                name = add_partial("COUNT", None)
                new_projections.append(Aggregate("SUM", ColumnRef(target, name)))
            elif item.func in ("COUNT", "SUM"):
                name = add_partial(item.func, item.arg)
                new_projections.append(Aggregate("SUM", ColumnRef(target, name)))
            elif item.func in ("MIN", "MAX"):
                name = add_partial(item.func, item.arg)
                new_projections.append(
                    Aggregate(item.func, ColumnRef(target, name)))
            else:  # AVG: recombine as sum of sums over sum of counts
                sum_name = add_partial("SUM", item.arg)
                cnt_name = add_partial("COUNT", item.arg)
                new_projections.append(AggRatio(
                    Aggregate("SUM", ColumnRef(target, sum_name)),
                    Aggregate("SUM", ColumnRef(target, cnt_name))))
    except LookupError:
        return ir

    dedup_keys = []
    for col in inner_keys:
        if col not in dedup_keys:
            dedup_keys.append(col)
    new_sub = replace(
        sub,
        projections=tuple(dedup_keys) + tuple(partials.values()),
        group_by=tuple(dedup_keys),
    )
    current = _replace_ref(current, target, replace(ref, subquery=new_sub))
    return replace(current, projections=tuple(new_projections))


def rewrite_join_reorder(ir: QueryIR, schema: SchemaModel) -> QueryIR:
    """Greedy reorder: start from the smallest estimated table, then join
    whichever connected table keeps the estimated intermediate smallest."""
    n = len(ir.base_tables)
    if n < 2:
        return ir

    def filtered_rows(ref: TableRef) -> float:
        return estimate_cardinality(ir, schema, aliases={ref.alias})

    order = [min(ir.base_tables, key=lambda r: (filtered_rows(r),
                                                ir.base_tables.index(r))).alias]
    edges = list(ir.joins)
    picked_joins: list[Join] = []
    from_index = {r.alias: i for i, r in enumerate(ir.base_tables)}

    while len(order) < n:
        best = None
        for edge in edges:
            for cand, other in ((edge.left.alias, edge.right.alias),
                                (edge.right.alias, edge.left.alias)):
                if cand in order or other not in order:
                    continue
                size = estimate_cardinality(ir, schema,
                                            aliases=set(order) | {cand})
                rank = (size, from_index[cand])
                if best is None or rank < best[0]:
                    best = (rank, cand, edge)
        _, cand, edge = best
        if edge.right.alias == cand:
            prev_col, new_col = edge.left, edge.right
        else:
            prev_col, new_col = edge.right, edge.left
        picked_joins.append(Join(prev_col, new_col))
        order.append(cand)
        edges.remove(edge)

    by_alias = {r.alias: r for r in ir.base_tables}
    new_tables = tuple(by_alias[a] for a in order)
    new_joins = tuple(picked_joins)
    if new_tables == ir.base_tables and new_joins == ir.joins:
        return ir
    return replace(ir, base_tables=new_tables, joins=new_joins)


def rewrite_limit_pushdown(ir: QueryIR, schema: SchemaModel) -> QueryIR:
    """Copy the LIMIT into the single scanned table.

    Requires no joins, no grouping or aggregation, no ordering, and no
    predicates left at the top level (a filter above a pushed limit would
    change results). The derived table's columns are reordered so the outer
    projection is a prefix, keeping the limit's canonical row order aligned
    with the outer query's.
    """
    if (ir.limit is None or ir.joins or ir.group_by or ir.order_by is not None
            or ir.predicates or ir.has_aggregates()):
        return ir
    alias = ir.base_tables[0].alias
    current = _ensure_subquery(ir, alias, schema)
    ref = current.table_ref(alias)
    sub = ref.subquery
    if sub.limit is not None or sub.group_by:
        return ir

    outer_first = []
    for item in current.projections:
        if isinstance(item, ColumnRef) and item.column not in outer_first:
            outer_first.append(item.column)
    front = [p for name in outer_first
             for p in sub.projections if output_name(p) == name]
    rest = [p for p in sub.projections if p not in front]
    new_sub = replace(sub, projections=tuple(front + rest), limit=ir.limit)
    return _replace_ref(current, alias, replace(ref, subquery=new_sub))


def rewrite_sampling(ir: QueryIR, schema: SchemaModel,
                     rate: float = DEFAULT_SAMPLE_RATE) -> QueryIR:
    """Sample the largest base table at the given rate."""
    if not 0.0 < rate <= 1.0:
        raise ValueError(f"sample rate must be in (0, 1], got {rate!r}")
    largest = max(ir.base_tables,
                  key=lambda r: (ref_base_rows(r, schema),
                                 -ir.base_tables.index(r)))
    current = _ensure_subquery(ir, largest.alias, schema)
    ref = current.table_ref(largest.alias)
    sub = ref.subquery
    if sub.sample_rate is not None:
        return ir
    new_sub = replace(sub, sample_rate=rate)
    return _replace_ref(current, largest.alias, replace(ref, subquery=new_sub))


_REWRITES = {
    "early_filter": rewrite_early_filter,
    "projection_pushdown": rewrite_projection_pushdown,
    "pre_aggregation": rewrite_pre_aggregation,
    "join_reorder": rewrite_join_reorder,
    "limit_pushdown": rewrite_limit_pushdown,
}


def apply_plan(ir: QueryIR, config: PlanConfig, schema: SchemaModel,
               sample_rate: float = DEFAULT_SAMPLE_RATE) -> PlanCandidate:
    """Apply the configuration's enabled rewrites in the fixed order."""
    current = ir
    applied = []
    for name in REWRITE_ORDER:
        if not getattr(config, name):
            continue
        if name == "sampling":
            rewritten = rewrite_sampling(current, schema, sample_rate)
        else:
            rewritten = _REWRITES[name](current, schema)
        if rewritten != current:
            applied.append(name)
            current = rewritten
    if current is not ir:
        check_ir(current, schema)
    return PlanCandidate(config=config, ir=current, applied=tuple(applied))
