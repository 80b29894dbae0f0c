"""Relational IR for a closed SQL subset: parser, renderer, validation, schema stats.

The input grammar covers alias-qualified single-block SELECT queries: inner
equi-joins, AND-ed comparison predicates against literals, aggregates,
GROUP BY, ORDER BY, LIMIT. The parser additionally accepts the dialect the
plan rewriter emits (parenthesized derived tables, ``AS`` output names, a
``SAMPLE <rate>`` clause, and ``SUM(a.x) / SUM(a.y)`` ratio items), so every
rewritten plan renders to SQL that parses back to the identical IR.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence, Union

AGG_FUNCS = ("COUNT", "SUM", "AVG", "MIN", "MAX")
COMPARISON_OPS = ("=", "<>", "<=", ">=", "<", ">")

_KEYWORDS = {
    "SELECT", "FROM", "JOIN", "ON", "WHERE", "AND", "GROUP", "ORDER", "BY",
    "ASC", "DESC", "LIMIT", "AS", "SAMPLE",
}

# Constructs the grammar deliberately excludes, recognized only to name them
# in errors.
_UNSUPPORTED_KEYWORDS = {
    "LIKE", "OR", "NOT", "IN", "BETWEEN", "HAVING", "DISTINCT", "UNION",
    "LEFT", "RIGHT", "OUTER", "FULL", "CROSS", "NULL", "IS", "OFFSET",
    "CASE", "EXISTS",
}


class QueryError(Exception):
    """Base class for query-layer errors."""


class SqlSyntaxError(QueryError):
    """Malformed query text; carries the character position and expectation."""

    def __init__(self, message: str, position: int, expected: str | None = None):
        detail = f"{message} at position {position}"
        if expected:
            detail += f" (expected {expected})"
        super().__init__(detail)
        self.position = position
        self.expected = expected


class UnsupportedSqlError(QueryError):
    """Query uses a construct outside the grammar; names the construct."""


class UnknownNameError(QueryError):
    """Reference to a table, alias, or column that does not exist."""


class SchemaError(QueryError):
    """Malformed schema description."""


class InvalidIRError(QueryError):
    """IR violates a structural invariant."""


# ---------------------------------------------------------------------------
# Schema statistics

@dataclass(frozen=True)
class ColumnStat:
    name: str
    distinct: int


@dataclass(frozen=True)
class TableStat:
    name: str
    row_count: int
    columns: tuple[ColumnStat, ...]

    def column_names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.columns)

    def has_column(self, column: str) -> bool:
        return any(c.name == column for c in self.columns)

    def distinct_count(self, column: str) -> int:
        for c in self.columns:
            if c.name == column:
                return c.distinct
        raise UnknownNameError(f"unknown column '{column}' in table '{self.name}'")


@dataclass(frozen=True)
class SchemaModel:
    tables: tuple[TableStat, ...]

    def table(self, name: str) -> TableStat:
        for t in self.tables:
            if t.name == name:
                return t
        raise UnknownNameError(f"unknown table '{name}'")

    def has_table(self, name: str) -> bool:
        return any(t.name == name for t in self.tables)


def summarize_schema(raw: Iterable[Mapping]) -> SchemaModel:
    """Build a SchemaModel from raw table descriptions.

    Each description is a mapping with keys ``name``, ``rows`` and
    ``columns`` (a list of ``{"name", "distinct"}``). Distinct counts are
    clamped to the row count; duplicate table names are rejected.
    """
    tables = []
    seen = set()
    for entry in raw:
        name = entry["name"]
        if name in seen:
            raise SchemaError(f"duplicate table '{name}'")
        seen.add(name)
        rows = int(entry["rows"])
        if rows < 0:
            raise SchemaError(f"negative row count for table '{name}'")
        cols = []
        col_seen = set()
        for c in entry["columns"]:
            cname = c["name"]
            if cname in col_seen:
                raise SchemaError(f"duplicate column '{cname}' in table '{name}'")
            col_seen.add(cname)
            distinct = int(c["distinct"])
            if distinct < 0:
                raise SchemaError(f"negative distinct count for '{name}.{cname}'")
            cols.append(ColumnStat(cname, min(distinct, rows)))
        tables.append(TableStat(name, rows, tuple(cols)))
    return SchemaModel(tuple(tables))


def schema_to_jsonl(schema: SchemaModel) -> str:
    import json

    lines = []
    for t in schema.tables:
        lines.append(json.dumps({
            "name": t.name,
            "rows": t.row_count,
            "columns": [{"name": c.name, "distinct": c.distinct} for c in t.columns],
        }, sort_keys=True))
    return "\n".join(lines) + "\n"


def schema_from_jsonl(text: str) -> SchemaModel:
    import json

    raw = [json.loads(line) for line in text.splitlines() if line.strip()]
    return summarize_schema(raw)


# ---------------------------------------------------------------------------
# IR node types

Literal = Union[int, float, str]


@dataclass(frozen=True)
class ColumnRef:
    alias: str
    column: str


@dataclass(frozen=True)
class Aggregate:
    """COUNT/SUM/AVG/MIN/MAX over a column, or COUNT(*) when arg is None."""

    func: str
    arg: ColumnRef | None
    as_name: str | None = None


@dataclass(frozen=True)
class AggRatio:
    """Ratio of two aggregates; how a rewritten AVG is recombined."""

    numerator: Aggregate
    denominator: Aggregate
    as_name: str | None = None


SelectItem = Union[ColumnRef, Aggregate, AggRatio]


@dataclass(frozen=True)
class Predicate:
    column: ColumnRef
    op: str
    value: Literal


@dataclass(frozen=True)
class Join:
    """Equi-join condition between two alias-qualified columns."""

    left: ColumnRef
    right: ColumnRef


@dataclass(frozen=True)
class OrderBy:
    columns: tuple[ColumnRef, ...]
    descending: bool = False


@dataclass(frozen=True)
class TableRef:
    """A FROM-clause entry: a base table or a parenthesized derived table."""

    table: str
    alias: str
    subquery: "QueryIR | None" = None


@dataclass(frozen=True)
class QueryIR:
    projections: tuple[SelectItem, ...]
    base_tables: tuple[TableRef, ...]
    joins: tuple[Join, ...] = ()
    predicates: tuple[Predicate, ...] = ()
    group_by: tuple[ColumnRef, ...] = ()
    order_by: OrderBy | None = None
    limit: int | None = None
    sample_rate: float | None = None

    def table_ref(self, alias: str) -> TableRef:
        for ref in self.base_tables:
            if ref.alias == alias:
                return ref
        raise UnknownNameError(f"unknown alias '{alias}'")

    def aliases(self) -> tuple[str, ...]:
        return tuple(ref.alias for ref in self.base_tables)

    def has_aggregates(self) -> bool:
        return any(isinstance(p, (Aggregate, AggRatio)) for p in self.projections)


@dataclass(frozen=True)
class ComplexityMetrics:
    table_count: int
    join_count: int
    predicate_count: int


def complexity(ir: QueryIR) -> ComplexityMetrics:
    """Count tables, joins and predicates at the outer query level."""
    return ComplexityMetrics(
        table_count=len(ir.base_tables),
        join_count=len(ir.joins),
        predicate_count=len(ir.predicates),
    )


def output_name(item: SelectItem) -> str:
    """Column name an item exposes to an enclosing query."""
    if isinstance(item, ColumnRef):
        return item.column
    if isinstance(item, Aggregate):
        if item.as_name:
            return item.as_name
        if item.arg is None:
            return "count_star"
        return f"{item.func.lower()}_{item.arg.column}"
    if isinstance(item, AggRatio):
        return item.as_name or f"ratio_{output_name(item.numerator)}"
    raise TypeError(f"not a projection item: {item!r}")


def ref_output_columns(ref: TableRef, schema: SchemaModel) -> tuple[str, ...]:
    """Columns an alias exposes: schema columns, or derived-table outputs."""
    if ref.subquery is not None:
        return tuple(output_name(p) for p in ref.subquery.projections)
    return schema.table(ref.table).column_names()


def iter_column_refs(ir: QueryIR) -> Iterable[ColumnRef]:
    """All alias-qualified column references at the outer query level."""
    for item in ir.projections:
        if isinstance(item, ColumnRef):
            yield item
        elif isinstance(item, Aggregate):
            if item.arg is not None:
                yield item.arg
        elif isinstance(item, AggRatio):
            for agg in (item.numerator, item.denominator):
                if agg.arg is not None:
                    yield agg.arg
    for j in ir.joins:
        yield j.left
        yield j.right
    for p in ir.predicates:
        yield p.column
    yield from ir.group_by
    if ir.order_by is not None:
        yield from ir.order_by.columns


# ---------------------------------------------------------------------------
# Validation

def check_ir(ir: QueryIR, schema: SchemaModel) -> None:
    """Raise unless the IR is structurally valid against the schema.

    Enforced shape: unique aliases; join i connects base_tables[i+1] to an
    earlier alias (so the join graph is a connected tree and the IR renders
    left to right); grouped queries project only group keys and aggregates;
    ORDER BY of a grouped query uses group keys only; LIMIT is a
    non-negative int; SAMPLE is in (0, 1].
    """
    if not ir.base_tables:
        raise InvalidIRError("query references no tables")
    if not ir.projections:
        raise InvalidIRError("query projects no columns")

    seen_aliases = set()
    for ref in ir.base_tables:
        if not ref.alias:
            raise InvalidIRError("empty table alias")
        if ref.alias in seen_aliases:
            raise InvalidIRError(f"duplicate alias '{ref.alias}'")
        seen_aliases.add(ref.alias)
        if ref.subquery is not None:
            check_ir(ref.subquery, schema)
            outputs = ref_output_columns(ref, schema)
            if len(set(outputs)) != len(outputs):
                raise InvalidIRError(
                    f"derived table '{ref.alias}' has duplicate output columns")
        else:
            schema.table(ref.table)

    if len(ir.joins) != max(0, len(ir.base_tables) - 1):
        raise InvalidIRError(
            f"{len(ir.base_tables)} tables need {len(ir.base_tables) - 1} "
            f"join conditions, got {len(ir.joins)}")

    available = {ref.alias: ref_output_columns(ref, schema) for ref in ir.base_tables}

    def check_col(col: ColumnRef) -> None:
        if col.alias not in available:
            raise UnknownNameError(f"unknown alias '{col.alias}'")
        if col.column not in available[col.alias]:
            raise UnknownNameError(
                f"unknown column '{col.column}' for alias '{col.alias}'")

    introduced = [ir.base_tables[0].alias]
    for i, join in enumerate(ir.joins):
        new_alias = ir.base_tables[i + 1].alias
        sides = {join.left.alias, join.right.alias}
        if new_alias not in sides:
            raise InvalidIRError(
                f"join {i} does not reference newly joined alias '{new_alias}'")
        other = (sides - {new_alias}) or {new_alias}
        if next(iter(other)) not in introduced:
            raise InvalidIRError(
                f"join {i} references alias not yet in scope")
        check_col(join.left)
        check_col(join.right)
        introduced.append(new_alias)

    for pred in ir.predicates:
        check_col(pred.column)
        if pred.op not in COMPARISON_OPS:
            raise InvalidIRError(f"unknown comparison operator '{pred.op}'")
        if isinstance(pred.value, str) and "'" in pred.value:
            raise InvalidIRError("string literal contains a quote")
        elif not isinstance(pred.value, (int, float, str)):
            raise InvalidIRError(f"unsupported literal {pred.value!r}")

    for col in ir.group_by:
        check_col(col)

    for item in ir.projections:
        if isinstance(item, ColumnRef):
            check_col(item)
            if (ir.group_by or ir.has_aggregates()) and item not in ir.group_by:
                raise InvalidIRError(
                    f"projection {item.alias}.{item.column} is neither "
                    "aggregated nor a group key")
        elif isinstance(item, Aggregate):
            _check_aggregate(item, check_col)
        elif isinstance(item, AggRatio):
            _check_aggregate(item.numerator, check_col)
            _check_aggregate(item.denominator, check_col)
        else:
            raise InvalidIRError(f"not a projection item: {item!r}")

    if ir.order_by is not None:
        if not ir.order_by.columns:
            raise InvalidIRError("empty ORDER BY column list")
        grouped = bool(ir.group_by) or ir.has_aggregates()
        for col in ir.order_by.columns:
            check_col(col)
            if grouped and col not in ir.group_by:
                raise InvalidIRError(
                    f"ORDER BY {col.alias}.{col.column} is not a group key")

    if ir.limit is not None and (not isinstance(ir.limit, int) or ir.limit < 0):
        raise InvalidIRError(f"LIMIT must be a non-negative int, got {ir.limit!r}")
    if ir.sample_rate is not None and not (0.0 < ir.sample_rate <= 1.0):
        raise InvalidIRError(f"SAMPLE rate must be in (0, 1], got {ir.sample_rate!r}")


def _check_aggregate(agg: Aggregate, check_col) -> None:
    if agg.func not in AGG_FUNCS:
        raise InvalidIRError(f"unknown aggregate '{agg.func}'")
    if agg.arg is None:
        if agg.func != "COUNT":
            raise InvalidIRError(f"{agg.func}(*) is not defined")
    else:
        check_col(agg.arg)


# ---------------------------------------------------------------------------
# Tokenizer

_TOKEN_RE = re.compile(
    r"\s*(?:"
    r"(?P<num>\d+(?:\.\d+)?(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<str>'[^']*')"
    r"|(?P<sym><=|>=|<>|[(),.=<>/*-])"
    r"|(?P<bad>\S)"
    r")")


@dataclass(frozen=True)
class _Token:
    kind: str
    text: str
    pos: int


def _tokenize(text: str) -> list[_Token]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            break
        if m.group("bad") is not None:
            raise SqlSyntaxError(f"unexpected character {m.group('bad')!r}",
                                 m.start("bad"))
        for kind in ("num", "ident", "str", "sym"):
            val = m.group(kind)
            if val is not None:
                tokens.append(_Token(kind, val, m.start(kind)))
                break
        pos = m.end()
    tokens.append(_Token("eof", "", len(text)))
    return tokens


# ---------------------------------------------------------------------------
# Parser

class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self) -> _Token:
        return self.tokens[self.i]

    def advance(self) -> _Token:
        tok = self.tokens[self.i]
        if tok.kind != "eof":
            self.i += 1
        return tok

    def at_keyword(self, *words: str) -> bool:
        tok = self.peek()
        return tok.kind == "ident" and tok.text.upper() in words

    def expect_keyword(self, word: str) -> _Token:
        tok = self.peek()
        if tok.kind == "ident" and tok.text.upper() == word:
            return self.advance()
        raise SqlSyntaxError(f"got {tok.text!r}" if tok.text else "unexpected end",
                             tok.pos, expected=word)

    def expect_sym(self, sym: str) -> _Token:
        tok = self.peek()
        if tok.kind == "sym" and tok.text == sym:
            return self.advance()
        raise SqlSyntaxError(f"got {tok.text!r}" if tok.text else "unexpected end",
                             tok.pos, expected=f"'{sym}'")

    def identifier(self, what: str) -> str:
        tok = self.peek()
        if tok.kind != "ident":
            raise SqlSyntaxError(f"got {tok.text!r}" if tok.text else "unexpected end",
                                 tok.pos, expected=what)
        word = tok.text.upper()
        if word in _UNSUPPORTED_KEYWORDS:
            raise UnsupportedSqlError(f"unsupported construct: {word}")
        if word in _KEYWORDS:
            raise SqlSyntaxError(f"got keyword {tok.text!r}", tok.pos, expected=what)
        self.advance()
        return tok.text

    def query(self) -> QueryIR:
        self.expect_keyword("SELECT")
        projections = [self.select_item()]
        while self.at_sym(","):
            self.advance()
            projections.append(self.select_item())

        self.expect_keyword("FROM")
        base_tables = [self.table_ref()]
        joins = []
        while self.at_keyword("JOIN"):
            self.advance()
            base_tables.append(self.table_ref())
            self.expect_keyword("ON")
            left = self.column_ref()
            self.expect_sym("=")
            right = self.column_ref()
            joins.append(Join(left, right))

        predicates = []
        if self.at_keyword("WHERE"):
            self.advance()
            predicates.append(self.predicate())
            while self.at_keyword("AND"):
                self.advance()
                predicates.append(self.predicate())

        group_by: list[ColumnRef] = []
        if self.at_keyword("GROUP"):
            self.advance()
            self.expect_keyword("BY")
            group_by.append(self.column_ref())
            while self.at_sym(","):
                self.advance()
                group_by.append(self.column_ref())

        order_by = None
        if self.at_keyword("ORDER"):
            self.advance()
            self.expect_keyword("BY")
            cols = [self.column_ref()]
            while self.at_sym(","):
                self.advance()
                cols.append(self.column_ref())
            descending = False
            if self.at_keyword("ASC", "DESC"):
                descending = self.advance().text.upper() == "DESC"
            order_by = OrderBy(tuple(cols), descending)

        limit = None
        if self.at_keyword("LIMIT"):
            self.advance()
            tok = self.peek()
            if tok.kind != "num" or "." in tok.text or "e" in tok.text.lower():
                raise SqlSyntaxError(f"got {tok.text!r}", tok.pos,
                                     expected="integer LIMIT")
            self.advance()
            limit = int(tok.text)

        sample_rate = None
        if self.at_keyword("SAMPLE"):
            self.advance()
            tok = self.peek()
            if tok.kind != "num":
                raise SqlSyntaxError(f"got {tok.text!r}", tok.pos,
                                     expected="SAMPLE rate")
            self.advance()
            sample_rate = float(tok.text)

        return QueryIR(
            projections=tuple(projections),
            base_tables=tuple(base_tables),
            joins=tuple(joins),
            predicates=tuple(predicates),
            group_by=tuple(group_by),
            order_by=order_by,
            limit=limit,
            sample_rate=sample_rate,
        )

    def at_sym(self, sym: str) -> bool:
        tok = self.peek()
        return tok.kind == "sym" and tok.text == sym

    def table_ref(self) -> TableRef:
        if self.at_sym("("):
            self.advance()
            sub = self.query()
            self.expect_sym(")")
            if self.at_keyword("AS"):
                self.advance()
            alias = self.identifier("alias")
            return TableRef(table="", alias=alias, subquery=sub)
        table = self.identifier("table name")
        alias = table
        if self.at_keyword("AS"):
            self.advance()
            alias = self.identifier("alias")
        elif self.peek().kind == "ident" and not self.at_any_clause_keyword():
            alias = self.identifier("alias")
        return TableRef(table=table, alias=alias)

    def at_any_clause_keyword(self) -> bool:
        return self.at_keyword("JOIN", "ON", "WHERE", "AND", "GROUP", "ORDER",
                               "LIMIT", "SAMPLE")

    def select_item(self) -> SelectItem:
        item: SelectItem
        tok = self.peek()
        if tok.kind == "ident" and tok.text.upper() in AGG_FUNCS \
                and self.tokens[self.i + 1].kind == "sym" \
                and self.tokens[self.i + 1].text == "(":
            item = self.aggregate()
            if self.at_sym("/"):
                self.advance()
                denom = self.aggregate()
                item = AggRatio(item, denom)
        else:
            item = self.column_ref()
        if self.at_keyword("AS"):
            self.advance()
            name = self.identifier("output name")
            if isinstance(item, ColumnRef):
                raise UnsupportedSqlError("unsupported construct: renamed column")
            item = _with_name(item, name)
        return item

    def aggregate(self) -> Aggregate:
        func = self.advance().text.upper()
        self.expect_sym("(")
        if self.at_sym("*"):
            self.advance()
            if func != "COUNT":
                raise SqlSyntaxError(f"{func}(*) is not defined",
                                     self.peek().pos, expected="column")
            arg = None
        else:
            arg = self.column_ref()
        self.expect_sym(")")
        return Aggregate(func, arg)

    def column_ref(self) -> ColumnRef:
        alias = self.identifier("alias")
        self.expect_sym(".")
        column = self.identifier("column name")
        return ColumnRef(alias, column)

    def predicate(self) -> Predicate:
        col = self.column_ref()
        tok = self.peek()
        if tok.kind == "ident" and tok.text.upper() in _UNSUPPORTED_KEYWORDS:
            raise UnsupportedSqlError(f"unsupported construct: {tok.text.upper()}")
        if tok.kind != "sym" or tok.text not in COMPARISON_OPS:
            raise SqlSyntaxError(f"got {tok.text!r}" if tok.text else "unexpected end",
                                 tok.pos, expected="comparison operator")
        self.advance()
        return Predicate(col, tok.text, self.literal())

    def literal(self) -> Literal:
        tok = self.peek()
        negative = False
        if tok.kind == "sym" and tok.text == "-":
            negative = True
            self.advance()
            tok = self.peek()
        if tok.kind == "num":
            self.advance()
            if "." in tok.text or "e" in tok.text.lower():
                val: Literal = float(tok.text)
            else:
                val = int(tok.text)
            return -val if negative else val
        if tok.kind == "str" and not negative:
            self.advance()
            return tok.text[1:-1]
        raise SqlSyntaxError(f"got {tok.text!r}" if tok.text else "unexpected end",
                             tok.pos, expected="literal")


def _with_name(item: SelectItem, name: str) -> SelectItem:
    if isinstance(item, Aggregate):
        return Aggregate(item.func, item.arg, as_name=name)
    if isinstance(item, AggRatio):
        return AggRatio(item.numerator, item.denominator, as_name=name)
    raise TypeError(f"cannot name {item!r}")


def parse_sql(text: str, schema: SchemaModel) -> QueryIR:
    """Parse query text and validate it against the schema."""
    parser = _Parser(text)
    ir = parser.query()
    tok = parser.peek()
    if tok.kind != "eof":
        if tok.kind == "ident" and tok.text.upper() in _UNSUPPORTED_KEYWORDS:
            raise UnsupportedSqlError(f"unsupported construct: {tok.text.upper()}")
        raise SqlSyntaxError(f"trailing input {tok.text!r}", tok.pos,
                             expected="end of query")
    check_ir(ir, schema)
    return ir


# ---------------------------------------------------------------------------
# Renderer

def _render_literal(value: Literal) -> str:
    if isinstance(value, bool):
        raise InvalidIRError("boolean literals are not part of the grammar")
    if isinstance(value, (int, float)):
        return repr(value)
    return f"'{value}'"


def _render_column(col: ColumnRef) -> str:
    return f"{col.alias}.{col.column}"


def _render_aggregate(agg: Aggregate) -> str:
    inner = "*" if agg.arg is None else _render_column(agg.arg)
    return f"{agg.func}({inner})"


def _render_item(item: SelectItem) -> str:
    if isinstance(item, ColumnRef):
        return _render_column(item)
    if isinstance(item, Aggregate):
        text = _render_aggregate(item)
    elif isinstance(item, AggRatio):
        text = f"{_render_aggregate(item.numerator)} / {_render_aggregate(item.denominator)}"
    else:
        raise TypeError(f"not a projection item: {item!r}")
    if item.as_name:
        text += f" AS {item.as_name}"
    return text


def render_sql(ir: QueryIR) -> str:
    """Render IR to canonical SQL text (uppercase keywords, explicit AS)."""
    parts = ["SELECT ", ", ".join(_render_item(p) for p in ir.projections)]
    refs = []
    for ref in ir.base_tables:
        if ref.subquery is not None:
            refs.append(f"({render_sql(ref.subquery)}) AS {ref.alias}")
        else:
            refs.append(f"{ref.table} AS {ref.alias}")
    parts.append(" FROM " + refs[0])
    for i, join in enumerate(ir.joins):
        parts.append(f" JOIN {refs[i + 1]} ON "
                     f"{_render_column(join.left)} = {_render_column(join.right)}")
    if ir.predicates:
        parts.append(" WHERE " + " AND ".join(
            f"{_render_column(p.column)} {p.op} {_render_literal(p.value)}"
            for p in ir.predicates))
    if ir.group_by:
        parts.append(" GROUP BY " + ", ".join(_render_column(c) for c in ir.group_by))
    if ir.order_by is not None:
        parts.append(" ORDER BY " + ", ".join(
            _render_column(c) for c in ir.order_by.columns))
        if ir.order_by.descending:
            parts.append(" DESC")
    if ir.limit is not None:
        parts.append(f" LIMIT {ir.limit}")
    if ir.sample_rate is not None:
        parts.append(f" SAMPLE {ir.sample_rate!r}")
    return "".join(parts)
