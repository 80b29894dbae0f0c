"""Plan configuration, cardinality estimator, and rewrite tests."""


import pytest

from qplan.engine import (
    SamplingUnsupportedError, evaluate_reference, rows_multiset_equal,
)
from qplan.ir import check_ir, parse_sql, render_sql, summarize_schema
from qplan.teacher import (
    N_ARMS, STRATEGY_NAMES, PlanConfig, all_configs, apply_plan,
    estimate_cardinality, ref_scan_rows, rewrite_early_filter,
    rewrite_join_reorder, rewrite_limit_pushdown, rewrite_pre_aggregation,
    rewrite_projection_pushdown, rewrite_sampling,
)
from qplan.workload import all_fixtures

EST_SCHEMA = summarize_schema([
    {"name": "orders", "rows": 10000, "columns": [
        {"name": "cust_id", "distinct": 100},
        {"name": "status", "distinct": 100},
        {"name": "amount", "distinct": 5000}]},
    {"name": "customers", "rows": 100, "columns": [
        {"name": "id", "distinct": 100},
        {"name": "region", "distinct": 10}]},
    {"name": "lines", "rows": 1000, "columns": [
        {"name": "order_id", "distinct": 800},
        {"name": "sku", "distinct": 100}]},
])


class TestPlanConfig:
    def test_index_bijection(self):
        for arm in range(N_ARMS):
            cfg = PlanConfig.from_index(arm)
            assert cfg.index == arm
        assert len({c.flags_string for c in all_configs()}) == N_ARMS

    def test_bit_assignment_example(self):
        cfg = PlanConfig.from_index(5)
        assert cfg.enabled() == ("early_filter", "pre_aggregation")
        assert cfg.flags_string == "000101"

    def test_arm_zero_is_all_off(self):
        cfg = PlanConfig.from_index(0)
        assert cfg.enabled() == ()
        assert cfg.flags_string == "000000"

    def test_strategy_order_matches_bits(self):
        assert STRATEGY_NAMES == ("early_filter", "projection_pushdown",
                                  "pre_aggregation", "join_reorder",
                                  "sampling", "limit_pushdown")
        cfg = PlanConfig.from_index(1 << 3)
        assert cfg.enabled() == ("join_reorder",)

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            PlanConfig.from_index(64)
        with pytest.raises(ValueError):
            PlanConfig.from_index(-1)


class TestEstimator:
    def test_unfiltered_table(self):
        ir = parse_sql("SELECT lines.sku FROM lines", EST_SCHEMA)
        assert estimate_cardinality(ir, EST_SCHEMA) == pytest.approx(1000)

    def test_equality_predicate(self):
        ir = parse_sql("SELECT lines.sku FROM lines WHERE lines.sku = 3",
                       EST_SCHEMA)
        assert estimate_cardinality(ir, EST_SCHEMA) == pytest.approx(10)

    def test_range_predicate_one_third(self):
        ir = parse_sql("SELECT lines.sku FROM lines WHERE lines.sku > 3",
                       EST_SCHEMA)
        assert estimate_cardinality(ir, EST_SCHEMA) == pytest.approx(1000 / 3)

    def test_inequality_predicate(self):
        ir = parse_sql("SELECT lines.sku FROM lines WHERE lines.sku <> 3",
                       EST_SCHEMA)
        assert estimate_cardinality(ir, EST_SCHEMA) == pytest.approx(990)

    def test_join_by_max_distinct(self):
        ir = parse_sql(
            "SELECT o.amount FROM orders AS o "
            "JOIN customers AS c ON o.cust_id = c.id", EST_SCHEMA)
        # 10^4 * 10^2 / max(100, 100) = 10^4
        assert estimate_cardinality(ir, EST_SCHEMA) == pytest.approx(10000)

    def test_group_by_cap(self):
        ir = parse_sql("SELECT c.region, COUNT(*) FROM customers AS c "
                       "GROUP BY c.region", EST_SCHEMA)
        assert estimate_cardinality(ir, EST_SCHEMA) == pytest.approx(10)

    def test_limit_cap(self):
        ir = parse_sql("SELECT lines.sku FROM lines LIMIT 7", EST_SCHEMA)
        assert estimate_cardinality(ir, EST_SCHEMA) == pytest.approx(7)

    def test_sample_rate_scales(self):
        ir = parse_sql("SELECT lines.sku FROM lines SAMPLE 0.1", EST_SCHEMA)
        assert estimate_cardinality(ir, EST_SCHEMA) == pytest.approx(100)

    def test_alias_subset_ignores_other_tables(self):
        ir = parse_sql(
            "SELECT o.amount FROM orders AS o "
            "JOIN customers AS c ON o.cust_id = c.id "
            "WHERE c.region = 1", EST_SCHEMA)
        only_orders = estimate_cardinality(ir, EST_SCHEMA, aliases={"o"})
        assert only_orders == pytest.approx(10000)
        both = estimate_cardinality(ir, EST_SCHEMA, aliases={"o", "c"})
        assert both == pytest.approx(1000)

    def test_outer_predicate_toggle(self):
        ir = parse_sql(
            "SELECT o.amount FROM orders AS o "
            "JOIN customers AS c ON o.cust_id = c.id "
            "WHERE c.region = 1", EST_SCHEMA)
        physical = estimate_cardinality(ir, EST_SCHEMA, aliases={"o", "c"},
                                        include_outer_predicates=False)
        assert physical == pytest.approx(10000)

    def test_scan_rows_ignore_grouping(self):
        ir = parse_sql(
            "SELECT s.region, s.sum_id FROM "
            "(SELECT c.region, SUM(c.id) FROM customers AS c "
            "GROUP BY c.region) AS s", EST_SCHEMA)
        assert ref_scan_rows(ir.base_tables[0], EST_SCHEMA) == (
            pytest.approx(100))


FIXTURES = {fx.name: fx for fx in all_fixtures()}


def _fx():
    return FIXTURES["fixture_a"]


class TestRewriteStructure:
    def test_early_filter_moves_predicates_inside(self):
        fx = _fx()
        ir = parse_sql("SELECT f.id FROM facts AS f WHERE f.qty > 3",
                       fx.schema)
        out = rewrite_early_filter(ir, fx.schema)
        assert out.predicates == ()
        sub = out.base_tables[0].subquery
        assert sub is not None
        assert len(sub.predicates) == 1
        assert sub.predicates[0].op == ">"

    def test_early_filter_noop_without_predicates(self):
        fx = _fx()
        ir = parse_sql("SELECT f.id FROM facts AS f", fx.schema)
        assert rewrite_early_filter(ir, fx.schema) is ir

    def test_projection_pushdown_narrows_columns(self):
        fx = _fx()
        ir = parse_sql("SELECT f.id FROM facts AS f WHERE f.qty > 3",
                       fx.schema)
        out = rewrite_projection_pushdown(ir, fx.schema)
        sub = out.base_tables[0].subquery
        assert sub is not None
        names = {p.column for p in sub.projections}
        assert names == {"id", "qty"}

    def test_pre_aggregation_recombines_sum_and_count(self):
        fx = _fx()
        ir = parse_sql(
            "SELECT f.a_id, SUM(f.amount), COUNT(*) FROM facts AS f "
            "JOIN dim_a AS d ON f.a_id = d.id "
            "GROUP BY f.a_id", fx.schema)
        out = rewrite_pre_aggregation(ir, fx.schema)
        assert out is not ir
        sub = out.base_tables[0].subquery
        assert sub is not None and sub.group_by
        rendered = render_sql(out)
        assert "SUM(" in rendered and "JOIN" in rendered
        got = evaluate_reference(out, fx.data)
        want = evaluate_reference(ir, fx.data)
        assert rows_multiset_equal(got.rows, want.rows)

    def test_pre_aggregation_avg_uses_ratio(self):
        fx = _fx()
        ir = parse_sql(
            "SELECT f.a_id, AVG(f.amount) FROM facts AS f "
            "JOIN dim_a AS d ON f.a_id = d.id "
            "GROUP BY f.a_id", fx.schema)
        out = rewrite_pre_aggregation(ir, fx.schema)
        assert out is not ir
        assert any(type(p).__name__ == "AggRatio" for p in out.projections)
        got = evaluate_reference(out, fx.data)
        want = evaluate_reference(ir, fx.data)
        assert rows_multiset_equal(got.rows, want.rows)

    def test_pre_aggregation_bails_on_non_key_join(self):
        fx = _fx()
        ir = parse_sql(
            "SELECT f.category, COUNT(*) FROM facts AS f "
            "JOIN dim_a AS d ON f.a_id = d.id "
            "GROUP BY f.category", fx.schema)
        # join uses f.a_id but the group key is f.category: pushing the
        # aggregate below the join would collapse join multiplicity
        assert rewrite_pre_aggregation(ir, fx.schema) is ir

    def test_pre_aggregation_bails_on_non_key_predicate(self):
        fx = _fx()
        ir = parse_sql(
            "SELECT f.a_id, COUNT(*) FROM facts AS f "
            "JOIN dim_a AS d ON f.a_id = d.id "
            "WHERE f.qty > 2 GROUP BY f.a_id", fx.schema)
        assert rewrite_pre_aggregation(ir, fx.schema) is ir

    def test_join_reorder_puts_smallest_first(self):
        fx = _fx()
        ir = parse_sql(
            "SELECT f.id FROM facts AS f "
            "JOIN dim_a AS d ON f.a_id = d.id "
            "JOIN dim_b AS b ON f.b_id = b.id", fx.schema)
        out = rewrite_join_reorder(ir, fx.schema)
        assert out is not ir
        assert out.base_tables[0].table != "facts"
        check_ir(out, fx.schema)
        got = evaluate_reference(out, fx.data)
        want = evaluate_reference(ir, fx.data)
        assert rows_multiset_equal(got.rows, want.rows)

    def test_join_reorder_noop_single_table(self):
        fx = _fx()
        ir = parse_sql("SELECT f.id FROM facts AS f", fx.schema)
        assert rewrite_join_reorder(ir, fx.schema) is ir

    def test_limit_pushdown_sets_inner_limit(self):
        fx = _fx()
        ir = parse_sql("SELECT f.id, f.qty FROM facts AS f LIMIT 4",
                       fx.schema)
        out = rewrite_limit_pushdown(ir, fx.schema)
        assert out is not ir
        assert out.limit == 4
        assert out.base_tables[0].subquery.limit == 4

    def test_limit_pushdown_bails_with_predicates(self):
        fx = _fx()
        ir = parse_sql("SELECT f.id FROM facts AS f WHERE f.qty > 1 LIMIT 4",
                       fx.schema)
        assert rewrite_limit_pushdown(ir, fx.schema) is ir

    def test_limit_pushdown_bails_with_joins(self):
        fx = _fx()
        ir = parse_sql(
            "SELECT f.id FROM facts AS f "
            "JOIN dim_a AS d ON f.a_id = d.id LIMIT 4", fx.schema)
        assert rewrite_limit_pushdown(ir, fx.schema) is ir

    def test_sampling_targets_largest_table(self):
        fx = _fx()
        ir = parse_sql(
            "SELECT f.id FROM facts AS f "
            "JOIN dim_a AS d ON f.a_id = d.id", fx.schema)
        out = rewrite_sampling(ir, fx.schema, rate=0.25)
        sub = out.base_tables[0].subquery
        assert sub is not None
        assert sub.sample_rate == pytest.approx(0.25)
        assert out.base_tables[1].subquery is None

    def test_sampling_rejects_bad_rate(self):
        fx = _fx()
        ir = parse_sql("SELECT f.id FROM facts AS f", fx.schema)
        with pytest.raises(ValueError):
            rewrite_sampling(ir, fx.schema, rate=0.0)
        with pytest.raises(ValueError):
            rewrite_sampling(ir, fx.schema, rate=1.5)


class TestApplyPlan:
    def test_arm_zero_is_identity(self):
        fx = _fx()
        ir = parse_sql(fx.queries[0], fx.schema)
        cand = apply_plan(ir, PlanConfig.from_index(0), fx.schema)
        assert cand.ir is ir
        assert cand.applied == ()

    def test_applied_subset_of_enabled(self):
        fx = _fx()
        for sql in fx.queries:
            ir = parse_sql(sql, fx.schema)
            for cfg in all_configs():
                cand = apply_plan(ir, cfg, fx.schema)
                assert set(cand.applied) <= set(cfg.enabled())

    def test_noop_flags_do_not_change_plan(self):
        # a config must yield the same plan as the sub-config containing
        # only the strategies that actually fired
        fx = _fx()
        names = list(STRATEGY_NAMES)
        for sql in fx.queries:
            ir = parse_sql(sql, fx.schema)
            for cfg in all_configs():
                cand = apply_plan(ir, cfg, fx.schema)
                bits = sum(1 << names.index(s) for s in cand.applied)
                reduced = apply_plan(ir, PlanConfig.from_index(bits),
                                     fx.schema)
                assert render_sql(cand.ir) == render_sql(reduced.ir)
                assert cand.applied == reduced.applied

    def test_apply_plan_is_deterministic(self):
        fx = _fx()
        ir = parse_sql(fx.queries[3], fx.schema)
        for cfg in all_configs():
            a = apply_plan(ir, cfg, fx.schema)
            b = apply_plan(ir, cfg, fx.schema)
            assert render_sql(a.ir) == render_sql(b.ir)

    def test_rewritten_sql_reparses(self):
        fx = _fx()
        for sql in fx.queries:
            ir = parse_sql(sql, fx.schema)
            for cfg in all_configs():
                cand = apply_plan(ir, cfg, fx.schema)
                back = parse_sql(render_sql(cand.ir), fx.schema)
                assert back == cand.ir


class TestSemanticEquivalence:
    """Every non-sampling config must preserve exact multiset results."""

    @pytest.mark.parametrize("fixture_name", sorted(FIXTURES))
    def test_all_rewrite_combinations(self, fixture_name):
        fx = FIXTURES[fixture_name]
        non_sampling = [c for c in all_configs() if not c.sampling]
        assert len(non_sampling) == 32
        for sql in fx.queries:
            ir = parse_sql(sql, fx.schema)
            want = evaluate_reference(ir, fx.data)
            for cfg in non_sampling:
                cand = apply_plan(ir, cfg, fx.schema)
                got = evaluate_reference(cand.ir, fx.data)
                assert len(got.columns) == len(want.columns)
                assert rows_multiset_equal(got.rows, want.rows), (
                    f"{sql!r} under {cfg.flags_string}")

    def test_sampling_plans_refused_by_exact_evaluator(self):
        fx = _fx()
        for sql in fx.queries:
            ir = parse_sql(sql, fx.schema)
            cfg = PlanConfig.from_index(1 << 4)
            cand = apply_plan(ir, cfg, fx.schema, sample_rate=0.2)
            assert "sampling" in cand.applied
            with pytest.raises(SamplingUnsupportedError):
                evaluate_reference(cand.ir, fx.data)


class TestScanRows:
    def test_limit_caps_scan(self):
        ir = parse_sql("SELECT lines.sku FROM lines LIMIT 5", EST_SCHEMA)
        assert ref_scan_rows(ir.base_tables[0], EST_SCHEMA) == (
            pytest.approx(1000))
        pushed = rewrite_limit_pushdown(ir, EST_SCHEMA)
        assert ref_scan_rows(pushed.base_tables[0], EST_SCHEMA) == (
            pytest.approx(5))

    def test_predicates_cut_scan_inside_subquery(self):
        fx = _fx()
        ir = parse_sql("SELECT f.id FROM facts AS f WHERE f.category = 1",
                       fx.schema)
        plain = ref_scan_rows(ir.base_tables[0], fx.schema)
        pushed = rewrite_early_filter(ir, fx.schema)
        inner = ref_scan_rows(pushed.base_tables[0], fx.schema)
        assert inner < plain
