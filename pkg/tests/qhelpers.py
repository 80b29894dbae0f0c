"""Shared test fixtures: a small schema and a seeded random query generator."""

import random

from qplan.ir import (
    Aggregate, ColumnRef, Join, OrderBy, Predicate, QueryIR, TableRef,
    summarize_schema,
)

STRING_POOL = ("gold", "silver", "bronze", "north", "south")


def make_test_schema():
    return summarize_schema([
        {"name": "orders", "rows": 1000, "columns": [
            {"name": "id", "distinct": 1000},
            {"name": "cust_id", "distinct": 100},
            {"name": "region", "distinct": 10},
            {"name": "amount", "distinct": 400},
            {"name": "qty", "distinct": 20},
        ]},
        {"name": "customers", "rows": 100, "columns": [
            {"name": "id", "distinct": 100},
            {"name": "tier", "distinct": 3},
            {"name": "name", "distinct": 100},
        ]},
        {"name": "items", "rows": 5000, "columns": [
            {"name": "id", "distinct": 5000},
            {"name": "order_id", "distinct": 1000},
            {"name": "price", "distinct": 300},
        ]},
    ])


def _random_literal(rnd):
    kind = rnd.randrange(4)
    if kind == 0:
        return rnd.randrange(-50, 500)
    if kind == 1:
        return round(rnd.uniform(0.0, 100.0), 2)
    if kind == 2:
        return rnd.choice(STRING_POOL)
    return rnd.randrange(0, 20)


def random_query_ir(rnd: random.Random, schema, allow_sample=True) -> QueryIR:
    """Build a random valid QueryIR exercising the whole grammar."""
    tables = list(schema.tables)
    n_tables = rnd.randint(1, min(3, len(tables)))
    picked = rnd.sample(tables, n_tables)
    refs = tuple(TableRef(t.name, f"t{i}") for i, t in enumerate(picked))

    joins = []
    for i in range(1, n_tables):
        prev = rnd.randrange(i)
        left = ColumnRef(refs[prev].alias, rnd.choice(picked[prev].column_names()))
        right = ColumnRef(refs[i].alias, rnd.choice(picked[i].column_names()))
        if rnd.random() < 0.5:
            left, right = right, left
        joins.append(Join(left, right))

    def random_col():
        i = rnd.randrange(n_tables)
        return ColumnRef(refs[i].alias, rnd.choice(picked[i].column_names()))

    predicates = tuple(
        Predicate(random_col(), rnd.choice(("=", "<", ">", "<=", ">=", "<>")),
                  _random_literal(rnd))
        for _ in range(rnd.randrange(4)))

    grouped = rnd.random() < 0.4
    if grouped:
        keys = []
        for _ in range(rnd.randint(1, 2)):
            col = random_col()
            if col not in keys:
                keys.append(col)
        projections = list(keys)
        for _ in range(rnd.randint(1, 2)):
            func = rnd.choice(("COUNT", "SUM", "AVG", "MIN", "MAX"))
            if func == "COUNT" and rnd.random() < 0.3:
                projections.append(Aggregate("COUNT", None))
            else:
                projections.append(Aggregate(func, random_col()))
        group_by = tuple(keys)
        order_cols = tuple(rnd.sample(keys, rnd.randint(1, len(keys)))) \
            if rnd.random() < 0.4 else ()
    else:
        projections = [random_col() for _ in range(rnd.randint(1, 3))]
        group_by = ()
        order_cols = tuple(random_col() for _ in range(rnd.randint(1, 2))) \
            if rnd.random() < 0.4 else ()

    order_by = OrderBy(order_cols, descending=rnd.random() < 0.5) \
        if order_cols else None
    limit = rnd.randrange(0, 50) if rnd.random() < 0.4 else None
    sample_rate = round(rnd.uniform(0.05, 1.0), 2) \
        if allow_sample and rnd.random() < 0.2 else None

    return QueryIR(
        projections=tuple(projections),
        base_tables=refs,
        joins=tuple(joins),
        predicates=predicates,
        group_by=group_by,
        order_by=order_by,
        limit=limit,
        sample_rate=sample_rate,
    )
