"""Seeded workload generation: schema shapes, query templates, fixture data.

Two layers share the same machinery. Simulation workloads carry statistics
only (large row counts, no data) and feed the search/training phases.
Fixtures are small star schemas with actual generated rows, used wherever
exact evaluation is needed; their statistics are summarized from the data
itself so the estimator and the evaluator describe the same relations.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .engine import Relation, ResourceSnapshot
from .ir import (
    Aggregate, ColumnRef, Join, OrderBy, Predicate, QueryIR, SchemaModel,
    TableRef, check_ir, parse_sql, render_sql, summarize_schema,
)

LABEL_POOL = ("north", "south", "east", "west", "gold", "silver", "bronze",
              "retail", "online", "promo")

TEMPLATE_TAGS = ("single_agg", "single_limit", "filter_scan",
                 "join2", "join2_group", "join3")

# an even single-table/join split: the join half keeps the trace median on
# the same scale as the mean, and 2x-median budgets leave the heavy join
# tail genuinely constrained at baseline
DEFAULT_MIX = {
    "single_agg": 0.22,
    "single_limit": 0.08,
    "filter_scan": 0.20,
    "join2": 0.18,
    "join2_group": 0.12,
    "join3": 0.20,
}


class WorkloadError(Exception):
    """Bad workload profile or serialized workload."""


# ---------------------------------------------------------------------------
# Schema shapes

@dataclass(frozen=True)
class ColumnRole:
    name: str
    kind: str                 # id | fk | category | value | label
    domain: int = 0           # category/value domain size
    fk_table: str | None = None


@dataclass(frozen=True)
class TableRole:
    name: str
    rows: int
    columns: tuple[ColumnRole, ...]
    is_fact: bool = False


SHAPE_NAMES = ("retail", "events")


def make_shape(name: str, rnd: random.Random) -> tuple[TableRole, ...]:
    """A star schema with seed-jittered sizes, in one of two named shapes."""
    def jitter(base: int) -> int:
        return int(base * rnd.uniform(0.8, 1.2))

    if name == "retail":
        # dimension tables share one fixed size: joining through either one
        # costs the same, so plan cost depends on the query's visible shape
        # (join count, predicates) rather than on which dimension it names
        stores = 3000
        products = 3000
        sales = jitter(90_000)
        return (
            TableRole("sales", sales, (
                ColumnRole("id", "id"),
                ColumnRole("store_id", "fk", fk_table="stores"),
                ColumnRole("product_id", "fk", fk_table="products"),
                # lead filter columns use one small domain everywhere so an
                # equality predicate means the same selectivity in every
                # template, and a filtered plan stays within a small
                # factor of the unfiltered scan
                ColumnRole("category", "category", 3),
                ColumnRole("amount", "value", 2500),
                ColumnRole("qty", "value", 50),
                ColumnRole("day", "category", 365),
            ), is_fact=True),
            TableRole("stores", stores, (
                ColumnRole("id", "id"),
                ColumnRole("region", "category", 3),
                ColumnRole("size_class", "category", 5),
                ColumnRole("kind", "label", 6),
            )),
            TableRole("products", products, (
                ColumnRole("id", "id"),
                ColumnRole("brand", "category", 3),
                ColumnRole("price", "value", 800),
            )),
        )
    if name == "events":
        users = 30_000
        sessions = 30_000
        events = jitter(140_000)
        return (
            TableRole("events", events, (
                ColumnRole("id", "id"),
                ColumnRole("user_id", "fk", fk_table="users"),
                ColumnRole("session_id", "fk", fk_table="sessions"),
                ColumnRole("kind", "category", 3),
                ColumnRole("duration", "value", 5000),
                ColumnRole("day", "category", 365),
            ), is_fact=True),
            TableRole("users", users, (
                ColumnRole("id", "id"),
                ColumnRole("country", "category", 3),
                ColumnRole("plan", "label", 4),
            )),
            TableRole("sessions", sessions, (
                ColumnRole("id", "id"),
                ColumnRole("device", "category", 3),
                ColumnRole("length", "value", 2000),
            )),
        )
    raise WorkloadError(f"unknown schema shape '{name}'")


def _fixture_shape(seed: int) -> tuple[TableRole, ...]:
    rnd = random.Random(seed)
    facts = rnd.randint(60, 90)
    dim_a = rnd.randint(12, 20)
    dim_b = rnd.randint(8, 14)
    return (
        TableRole("facts", facts, (
            ColumnRole("id", "id"),
            ColumnRole("a_id", "fk", fk_table="dim_a"),
            ColumnRole("b_id", "fk", fk_table="dim_b"),
            ColumnRole("category", "category", 5),
            ColumnRole("amount", "value", 40),
            ColumnRole("qty", "value", 9),
        ), is_fact=True),
        TableRole("dim_a", dim_a, (
            ColumnRole("id", "id"),
            ColumnRole("attr", "category", 4),
            ColumnRole("tag", "label", 4),
        )),
        TableRole("dim_b", dim_b, (
            ColumnRole("id", "id"),
            ColumnRole("grade", "category", 3),
        )),
    )


def shape_to_schema(shape: tuple[TableRole, ...]) -> SchemaModel:
    """Schema statistics implied by a shape (no data involved)."""
    raw = []
    rows_of = {t.name: t.rows for t in shape}
    for table in shape:
        cols = []
        for col in table.columns:
            if col.kind == "id":
                distinct = table.rows
            elif col.kind == "fk":
                distinct = min(rows_of[col.fk_table], table.rows)
            else:
                distinct = min(col.domain, table.rows)
            cols.append({"name": col.name, "distinct": distinct})
        raw.append({"name": table.name, "rows": table.rows, "columns": cols})
    return summarize_schema(raw)


def build_data(shape: tuple[TableRole, ...], rnd: random.Random) -> dict[str, Relation]:
    """Generate actual rows for a (small) shape."""
    data = {}
    rows_of = {t.name: t.rows for t in shape}
    for table in shape:
        rows = []
        for i in range(table.rows):
            cells = []
            for col in table.columns:
                if col.kind == "id":
                    cells.append(i)
                elif col.kind == "fk":
                    # A couple of dangling keys so joins actually filter.
                    cells.append(rnd.randrange(rows_of[col.fk_table] + 2))
                elif col.kind == "label":
                    cells.append(LABEL_POOL[rnd.randrange(col.domain)])
                else:
                    cells.append(rnd.randrange(col.domain))
            rows.append(tuple(cells))
        data[table.name] = Relation(
            tuple(c.name for c in table.columns), tuple(rows))
    return data


def summarize_from_data(data: dict[str, Relation]) -> SchemaModel:
    """Exact statistics (row and distinct counts) of in-memory relations."""
    raw = []
    for name in data:
        rel = data[name]
        cols = []
        for i, cname in enumerate(rel.columns):
            cols.append({"name": cname,
                         "distinct": len({row[i] for row in rel.rows})})
        raw.append({"name": name, "rows": len(rel.rows), "columns": cols})
    return summarize_schema(raw)


# ---------------------------------------------------------------------------
# Query templates

def _fact(shape) -> TableRole:
    for t in shape:
        if t.is_fact:
            return t
    raise WorkloadError("shape has no fact table")


def _cols(table: TableRole, kind: str) -> list[ColumnRole]:
    return [c for c in table.columns if c.kind == kind]


def _dims(shape) -> list[TableRole]:
    return [t for t in shape if not t.is_fact]


def _pred(rnd, alias: str, col: ColumnRole) -> Predicate:
    # literals vary per query but never the selectivity class: equality on
    # category/label columns, a range op on value columns
    if col.kind == "label":
        return Predicate(ColumnRef(alias, col.name), "=",
                         LABEL_POOL[rnd.randrange(col.domain)])
    if col.kind == "value":
        op = rnd.choice((">", "<", ">=", "<="))
        return Predicate(ColumnRef(alias, col.name), op,
                         rnd.randrange(col.domain))
    return Predicate(ColumnRef(alias, col.name), "=", rnd.randrange(col.domain))


def _agg(rnd, alias: str, col: ColumnRole) -> Aggregate:
    func = rnd.choice(("SUM", "AVG", "MIN", "MAX", "COUNT"))
    return Aggregate(func, ColumnRef(alias, col.name))


def t_single_agg(rnd: random.Random, shape) -> QueryIR:
    fact = _fact(shape)
    f = TableRef(fact.name, "f")
    val = rnd.choice(_cols(fact, "value"))
    cat = _cols(fact, "category")[0]
    aggs: list = [_agg(rnd, "f", val)]
    if rnd.random() < 0.3:
        aggs.append(Aggregate("COUNT", None))
    return QueryIR(projections=tuple(aggs), base_tables=(f,),
                   predicates=(_pred(rnd, "f", cat),))


def t_single_limit(rnd: random.Random, shape) -> QueryIR:
    fact = _fact(shape)
    f = TableRef(fact.name, "f")
    cols = rnd.sample([c for c in fact.columns], rnd.randint(2, 3))
    # one bulk-export page size: a pushed-down limit still scans thousands
    # of rows, keeping limited plans on the same latency scale as sampled
    # ones, and the fixed value keeps their cost a pure function of shape
    return QueryIR(projections=tuple(ColumnRef("f", c.name) for c in cols),
                   base_tables=(f,), limit=5000)


def t_filter_scan(rnd: random.Random, shape) -> QueryIR:
    fact = _fact(shape)
    f = TableRef(fact.name, "f")
    cols = rnd.sample([c for c in fact.columns], rnd.randint(2, 3))
    values = _cols(fact, "value")
    cats = _cols(fact, "category")
    # a fixed column ladder so predicate count alone fixes the work profile;
    # rung one matches the aggregate template's filter, so one-predicate
    # scans and one-predicate aggregates cost the same under every rewrite
    ladder = [cats[0], values[0]] + values[1:2]
    preds = [_pred(rnd, "f", col)
             for col in ladder[:rnd.randint(1, len(ladder))]]
    order_by = None
    limit = None
    if rnd.random() < 0.4:
        order_by = OrderBy((ColumnRef("f", cols[0].name),),
                           descending=rnd.random() < 0.5)
        limit = rnd.randint(5, 40)
    return QueryIR(projections=tuple(ColumnRef("f", c.name) for c in cols),
                   base_tables=(f,), predicates=tuple(preds),
                   order_by=order_by, limit=limit)


def _join_to(fact: TableRole, dim: TableRole, falias: str, dalias: str) -> Join:
    fk = next(c for c in fact.columns if c.fk_table == dim.name)
    return Join(ColumnRef(falias, fk.name), ColumnRef(dalias, "id"))


def t_join2(rnd: random.Random, shape) -> QueryIR:
    fact = _fact(shape)
    dim = rnd.choice([d for d in _dims(shape)
                      if any(c.fk_table == d.name for c in fact.columns)])
    f, d = TableRef(fact.name, "f"), TableRef(dim.name, "d")
    dim_attr = _cols(dim, "category")[0]
    preds = [_pred(rnd, "d", dim_attr),
             _pred(rnd, "f", _cols(fact, "category")[0])]
    proj_cols = [ColumnRef("d", dim_attr.name),
                 ColumnRef("f", rnd.choice(_cols(fact, "value")).name)]
    return QueryIR(projections=tuple(proj_cols), base_tables=(f, d),
                   joins=(_join_to(fact, dim, "f", "d"),),
                   predicates=tuple(preds))


def t_join2_group(rnd: random.Random, shape) -> QueryIR:
    fact = _fact(shape)
    dim = rnd.choice([d for d in _dims(shape)
                      if any(c.fk_table == d.name for c in fact.columns)])
    f, d = TableRef(fact.name, "f"), TableRef(dim.name, "d")
    join = _join_to(fact, dim, "f", "d")
    key = ColumnRef("f", join.left.column)  # group on the join key
    val = rnd.choice(_cols(fact, "value"))
    aggs: list = [Aggregate("SUM", ColumnRef("f", val.name))]
    if rnd.random() < 0.5:
        aggs.append(Aggregate("AVG", ColumnRef("f", val.name)))
    if rnd.random() < 0.4:
        aggs.append(Aggregate("COUNT", None))
    dim_attr = _cols(dim, "category")[0]
    return QueryIR(
        projections=(key,) + tuple(aggs),
        base_tables=(f, d), joins=(join,),
        predicates=(_pred(rnd, "d", dim_attr),),
        group_by=(key,),
        order_by=OrderBy((key,)) if rnd.random() < 0.6 else None,
        limit=rnd.randint(10, 60) if rnd.random() < 0.6 else None,
    )


def t_join3(rnd: random.Random, shape) -> QueryIR:
    fact = _fact(shape)
    dims = [d for d in _dims(shape)
            if any(c.fk_table == d.name for c in fact.columns)]
    if len(dims) < 2:
        return t_join2(rnd, shape)
    d1, d2 = rnd.sample(dims, 2)
    f = TableRef(fact.name, "f")
    r1, r2 = TableRef(d1.name, "d1"), TableRef(d2.name, "d2")
    joins = (_join_to(fact, d1, "f", "d1"), _join_to(fact, d2, "f", "d2"))
    a1 = _cols(d1, "category")[0]
    preds = (_pred(rnd, "d1", a1),
             _pred(rnd, "f", _cols(fact, "category")[0]))
    key = ColumnRef("d1", a1.name)
    return QueryIR(
        projections=(key, Aggregate("COUNT", None),
                     Aggregate("SUM", ColumnRef(
                         "f", rnd.choice(_cols(fact, "value")).name))),
        base_tables=(f, r1, r2), joins=joins, predicates=preds,
        group_by=(key,))


TEMPLATES = {
    "single_agg": t_single_agg,
    "single_limit": t_single_limit,
    "filter_scan": t_filter_scan,
    "join2": t_join2,
    "join2_group": t_join2_group,
    "join3": t_join3,
}


def _mix_counts(mix: dict[str, float], n: int) -> dict[str, int]:
    """Largest-remainder apportionment; exact for divisible mixes."""
    total = sum(mix.values())
    if total <= 0:
        raise WorkloadError("template mix weights must sum to a positive value")
    unknown = set(mix) - set(TEMPLATE_TAGS)
    if unknown:
        raise WorkloadError(f"unknown template tags: {sorted(unknown)}")
    shares = {tag: n * w / total for tag, w in mix.items()}
    counts = {tag: int(share) for tag, share in shares.items()}
    leftover = n - sum(counts.values())
    by_remainder = sorted(mix, key=lambda tag: (counts[tag] - shares[tag],
                                                TEMPLATE_TAGS.index(tag)))
    for tag in by_remainder[:leftover]:
        counts[tag] += 1
    return counts


# ---------------------------------------------------------------------------
# Workloads

@dataclass(frozen=True)
class WorkloadProfile:
    name: str
    shape: str = "retail"
    n_queries: int = 32
    mix: tuple[tuple[str, float], ...] = tuple(DEFAULT_MIX.items())
    seed: int = 0


@dataclass(frozen=True)
class WorkloadQuery:
    query_id: str
    sql: str
    template: str
    resources: ResourceSnapshot


@dataclass(frozen=True)
class Workload:
    name: str
    shape: str
    seed: int
    schema: SchemaModel
    queries: tuple[WorkloadQuery, ...]


def generate_workload(profile: WorkloadProfile) -> Workload:
    """Deterministically expand a profile into schema + queries + resources."""
    if profile.n_queries < 1:
        raise WorkloadError("n_queries must be positive")
    rnd = random.Random(profile.seed)
    shape = make_shape(profile.shape, rnd)
    schema = shape_to_schema(shape)

    counts = _mix_counts(dict(profile.mix), profile.n_queries)
    tags = [tag for tag in TEMPLATE_TAGS for _ in range(counts.get(tag, 0))]

    queries = []
    for idx, tag in enumerate(tags):
        ir = TEMPLATES[tag](rnd, shape)
        check_ir(ir, schema)
        resources = ResourceSnapshot(
            memory_in_use=rnd.uniform(0.0, 2e7),
            cpu_load=round(rnd.uniform(0.10, 0.40), 4),
        )
        queries.append(WorkloadQuery(
            query_id=f"{profile.name}-q{idx:03d}",
            sql=render_sql(ir),
            template=tag,
            resources=resources,
        ))
    return Workload(name=profile.name, shape=profile.shape, seed=profile.seed,
                    schema=schema, queries=tuple(queries))


def workload_to_dict(workload: Workload) -> dict:
    return {
        "name": workload.name,
        "shape": workload.shape,
        "seed": workload.seed,
        "schema": [
            {"name": t.name, "rows": t.row_count,
             "columns": [{"name": c.name, "distinct": c.distinct}
                         for c in t.columns]}
            for t in workload.schema.tables
        ],
        "queries": [
            {"query_id": q.query_id, "sql": q.sql, "template": q.template,
             "memory_in_use": q.resources.memory_in_use,
             "cpu_load": q.resources.cpu_load}
            for q in workload.queries
        ],
    }


def workload_from_dict(raw: dict) -> Workload:
    try:
        schema = summarize_schema(raw["schema"])
        queries = tuple(
            WorkloadQuery(
                query_id=q["query_id"], sql=q["sql"], template=q["template"],
                resources=ResourceSnapshot(memory_in_use=q["memory_in_use"],
                                           cpu_load=q["cpu_load"]))
            for q in raw["queries"])
        workload = Workload(name=raw["name"], shape=raw["shape"],
                            seed=raw["seed"], schema=schema, queries=queries)
    except KeyError as missing:
        raise WorkloadError(f"workload record missing field {missing}") from None
    for q in workload.queries:
        parse_sql(q.sql, schema)
    return workload


# ---------------------------------------------------------------------------
# Fixtures: small schemas with real rows for exact evaluation

FIXTURE_NAMES = ("fixture_a", "fixture_b", "fixture_c")
_FIXTURE_SEEDS = {"fixture_a": 101, "fixture_b": 202, "fixture_c": 303}


@dataclass(frozen=True)
class Fixture:
    name: str
    schema: SchemaModel
    data: dict[str, Relation]
    queries: tuple[str, ...]


def make_fixture(name: str) -> Fixture:
    """A deterministic small schema, its rows, and a query corpus (8 queries)."""
    if name not in _FIXTURE_SEEDS:
        raise WorkloadError(f"unknown fixture '{name}'")
    seed = _FIXTURE_SEEDS[name]
    shape = _fixture_shape(seed)
    rnd = random.Random(seed * 7 + 1)
    data = build_data(shape, rnd)
    schema = summarize_from_data(data)

    qrnd = random.Random(seed * 13 + 2)
    irs = [
        t_single_agg(qrnd, shape),
        t_single_limit(qrnd, shape),
        t_filter_scan(qrnd, shape),
        t_join2(qrnd, shape),
        t_join2_group(qrnd, shape),
        t_join3(qrnd, shape),
        # Grouped average over a join: exercises partial-aggregate recombination.
        QueryIR(
            projections=(ColumnRef("f", "a_id"),
                         Aggregate("AVG", ColumnRef("f", "amount")),
                         Aggregate("COUNT", None)),
            base_tables=(TableRef("facts", "f"), TableRef("dim_a", "d")),
            joins=(Join(ColumnRef("f", "a_id"), ColumnRef("d", "id")),),
            predicates=(Predicate(ColumnRef("d", "attr"), "<>", 0),),
            group_by=(ColumnRef("f", "a_id"),),
            order_by=OrderBy((ColumnRef("f", "a_id"),), descending=True),
            limit=7,
        ),
        # Descending order with ties plus LIMIT: exercises canonical cuts.
        QueryIR(
            projections=(ColumnRef("f", "category"), ColumnRef("f", "qty")),
            base_tables=(TableRef("facts", "f"),),
            predicates=(Predicate(ColumnRef("f", "qty"), ">=", 2),),
            order_by=OrderBy((ColumnRef("f", "category"),), descending=True),
            limit=11,
        ),
    ]
    for ir in irs:
        check_ir(ir, schema)
    return Fixture(name=name, schema=schema, data=data,
                   queries=tuple(render_sql(ir) for ir in irs))


def all_fixtures() -> tuple[Fixture, ...]:
    return tuple(make_fixture(name) for name in FIXTURE_NAMES)
