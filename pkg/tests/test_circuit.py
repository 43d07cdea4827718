import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pclvd.circuit import (
    INPUT,
    MARGINALIZED,
    PRODUCT,
    SUM,
    Circuit,
    CircuitBuilder,
    Unit,
    check_deterministic,
    check_structure,
    evaluate,
    evaluate_batch,
    marginal,
    marginal_batch,
    num_parameters,
    parameter_vector,
    renormalize,
    scope_of,
    scope_vars,
)
from pclvd.errors import CapacityError, DataError, PreconditionError, StructuralError
from pclvd.serialize import circuit_from_dict, circuit_to_dict, load_circuit, save_circuit

from gencircuits import random_circuit
from oracles import complete_grid, marginal_by_enumeration, total_probability


def single_input_circuit(dist=(0.5, 0.5)):
    b = CircuitBuilder([len(dist)])
    b.input_unit(0, dist)
    return b.build()


def two_var_product():
    b = CircuitBuilder([2, 2])
    i0 = b.input_unit(0, [0.5, 0.5])
    i1 = b.input_unit(1, [0.5, 0.5])
    b.product_unit([i0, i1])
    return b.build()


def indicator_mixture(w0=0.3, w1=0.7):
    b = CircuitBuilder([2])
    i0 = b.indicator(0, 0)
    i1 = b.indicator(0, 1)
    b.sum_unit([i0, i1], weights=[w0, w1])
    return b.build()


class TestEvaluate:
    def test_single_categorical(self):
        c = single_input_circuit()
        assert evaluate(c, [1]) == pytest.approx(math.log(0.5), abs=1e-15)

    def test_product_of_independents(self):
        c = two_var_product()
        assert evaluate(c, [0, 1]) == pytest.approx(math.log(0.25), abs=1e-15)

    def test_random_circuit_normalizes(self, rng):
        c, _ = random_circuit(rng, 8)
        assert total_probability(c) == pytest.approx(1.0, abs=1e-9)

    def test_incomplete_assignment_rejected(self):
        c = two_var_product()
        with pytest.raises(PreconditionError):
            evaluate(c, [0, MARGINALIZED])

    def test_out_of_range_value_rejected(self):
        c = two_var_product()
        with pytest.raises(DataError):
            evaluate(c, [0, 2])
        with pytest.raises(DataError):
            evaluate(c, [-2, 0])

    def test_variable_outside_root_scope_ignored(self):
        b = CircuitBuilder([2, 3])
        b.input_unit(0, [0.4, 0.6])
        c = b.build()
        assert evaluate(c, [1, MARGINALIZED]) == pytest.approx(math.log(0.6))


class TestMarginal:
    def test_all_marginalized_is_log_one(self):
        c = two_var_product()
        assert marginal(c, [MARGINALIZED, MARGINALIZED]) == 0.0

    def test_mixture_read_off(self):
        c = indicator_mixture(0.3, 0.7)
        assert marginal(c, [1]) == pytest.approx(math.log(0.7), abs=1e-12)

    def test_matches_completion_enumeration(self, rng):
        c, _ = random_circuit(rng, 8)
        for _ in range(10):
            partial = np.full(8, MARGINALIZED, dtype=np.int64)
            fixed = rng.choice(8, size=3, replace=False)
            partial[fixed] = rng.integers(2, size=3)
            assert marginal(c, partial) == pytest.approx(
                marginal_by_enumeration(c, partial), abs=1e-9
            )

    def test_non_smooth_circuit_rejected(self):
        b = CircuitBuilder([2, 2])
        i0 = b.input_unit(0, [0.5, 0.5])
        i1 = b.input_unit(1, [0.5, 0.5])
        b.sum_unit([i0, i1], weights=[0.5, 0.5])
        c = b.build()
        with pytest.raises(StructuralError):
            marginal(c, [0, MARGINALIZED])


class TestStructureChecks:
    def test_sum_over_two_variables_not_smooth(self):
        b = CircuitBuilder([2, 2])
        i0 = b.input_unit(0, [0.5, 0.5])
        i1 = b.input_unit(1, [0.5, 0.5])
        s = b.sum_unit([i0, i1], weights=[0.5, 0.5])
        report = check_structure(b.build())
        assert not report.smooth
        assert report.decomposable
        assert [v.unit for v in report.violations] == [s]

    def test_product_with_shared_scope_not_decomposable(self):
        b = CircuitBuilder([2])
        i0 = b.input_unit(0, [0.5, 0.5])
        i1 = b.input_unit(0, [0.1, 0.9])
        p = b.product_unit([i0, i1])
        report = check_structure(b.build())
        assert report.smooth
        assert not report.decomposable
        assert [v.unit for v in report.violations] == [p]

    def test_random_circuit_clean(self, rng):
        c, _ = random_circuit(rng, 6)
        report = check_structure(c)
        assert report.ok and report.violations == []


class TestDeterminismCheck:
    def test_indicator_sum_deterministic(self):
        c = indicator_mixture()
        assert check_deterministic(c, c.root)

    def test_overlapping_categoricals_not_deterministic(self):
        b = CircuitBuilder([2])
        i0 = b.input_unit(0, [0.5, 0.5])
        i1 = b.input_unit(0, [0.5, 0.5])
        b.sum_unit([i0, i1], weights=[0.5, 0.5])
        assert not check_deterministic(b.build(), 2)

    def test_capacity_guard(self):
        b = CircuitBuilder([2] * 25)
        inputs = [b.input_unit(v, [0.5, 0.5]) for v in range(25)]
        p1 = b.product_unit(inputs)
        i_alt = [b.input_unit(v, [0.1, 0.9]) for v in range(25)]
        p2 = b.product_unit(i_alt)
        s = b.sum_unit([p1, p2], weights=[0.5, 0.5])
        with pytest.raises(CapacityError):
            check_deterministic(b.build(), s)

    def test_not_a_sum_rejected(self):
        c = two_var_product()
        with pytest.raises(PreconditionError):
            check_deterministic(c, 0)


class TestConstructionInvariants:
    def test_unnormalized_weights_rejected(self):
        b = CircuitBuilder([2])
        i0 = b.indicator(0, 0)
        i1 = b.indicator(0, 1)
        b.sum_unit([i0, i1], weights=[0.5, 0.6])
        with pytest.raises(StructuralError):
            b.build()

    def test_unnormalized_input_rejected(self):
        b = CircuitBuilder([2])
        b.input_unit(0, [0.5, 0.6])
        with pytest.raises(StructuralError):
            b.build()

    def test_layer_alternation_enforced(self):
        b = CircuitBuilder([2])
        i0 = b.indicator(0, 0)
        s1 = b.sum_unit([i0], weights=[1.0])
        b.sum_unit([s1], weights=[1.0])
        with pytest.raises(StructuralError):
            b.build()

    def test_unreachable_unit_rejected(self):
        b = CircuitBuilder([2])
        b.input_unit(0, [0.5, 0.5])
        b.input_unit(0, [0.4, 0.6])  # dangling
        with pytest.raises(StructuralError):
            b.build(root=0)

    def test_children_must_precede_parents(self):
        units = [
            Unit(PRODUCT, scope_of([0]), (1,)),
            Unit(INPUT, scope_of([0]), dist=np.array([0.5, 0.5]), var=0),
        ]
        with pytest.raises(StructuralError):
            Circuit(units, 0, [2])


class TestNumericalProperties:
    def test_normalization_across_sizes(self, rng):
        for num_vars in (2, 5, 9, 12):
            c, _ = random_circuit(rng, num_vars)
            assert total_probability(c) == pytest.approx(1.0, abs=1e-9)

    def test_renormalize_is_noop_on_normalized(self, rng):
        c, _ = random_circuit(rng, 6)
        grid = complete_grid(c.var_cards)
        before = evaluate_batch(c, grid)
        renormalize(c)
        after = evaluate_batch(c, grid)
        assert np.max(np.abs(after - before)) < 1e-12

    def test_topological_order_independence_bit_for_bit(self):
        # Same DAG expressed in two valid topological orders.
        def build(order_swapped: bool):
            b = CircuitBuilder([2, 2])
            if order_swapped:
                i1 = b.input_unit(1, [0.25, 0.75])
                i0 = b.input_unit(0, [0.5, 0.5])
            else:
                i0 = b.input_unit(0, [0.5, 0.5])
                i1 = b.input_unit(1, [0.25, 0.75])
            i0b = b.input_unit(0, [0.9, 0.1])
            i1b = b.input_unit(1, [0.6, 0.4])
            p1 = b.product_unit([i0, i1])
            p2 = b.product_unit([i0b, i1b])
            b.sum_unit([p1, p2], weights=[0.3, 0.7])
            return b.build()

        grid = complete_grid([2, 2])
        a = evaluate_batch(build(False), grid)
        bvals = evaluate_batch(build(True), grid)
        assert np.array_equal(a, bvals)

    def test_parameter_vector_and_count(self):
        c = indicator_mixture()
        # Indicators are frozen: only the two sum edges are trainable.
        assert num_parameters(c) == 2
        assert parameter_vector(c) == pytest.approx([0.3, 0.7])


class TestScopeOps:
    @given(st.sets(st.integers(0, 63)), st.sets(st.integers(0, 63)))
    def test_bitmask_matches_set_semantics(self, a, b):
        ma, mb = scope_of(a), scope_of(b)
        assert set(scope_vars(ma)) == a
        assert (ma & mb == ma) == a.issubset(b)
        assert (ma & mb == 0) == a.isdisjoint(b)


class TestSerialization:
    def test_round_trip_preserves_evaluation(self, rng, tmp_path):
        c, scopes = random_circuit(rng, 7)
        from pclvd.materialize import materialize_lv

        aug, record = materialize_lv(c, scopes[0])
        path = tmp_path / "circuit.json"
        save_circuit(aug, str(path), [record])
        loaded, records = load_circuit(str(path))
        assert len(records) == 1
        assert records[0].scope == record.scope
        assert records[0].product_units == record.product_units
        grid = complete_grid(aug.var_cards)
        before = evaluate_batch(aug, grid)
        after = evaluate_batch(loaded, grid)
        assert np.max(np.abs(after - before)) < 1e-12
        # Indicators stay frozen through the round trip.
        for ind in records[0].indicator_units:
            assert loaded.units[ind].frozen

    def test_header_is_versioned(self, rng, tmp_path):
        c, _ = random_circuit(rng, 3)
        doc = circuit_to_dict(c)
        assert doc["format"] == "pc-lvd-circuit"
        assert doc["version"] == 1
        assert doc["num_vars"] == 3
        doc["format"] = "other"
        with pytest.raises(DataError):
            circuit_from_dict(doc)

    def test_bad_file_is_data_error(self, tmp_path):
        path = tmp_path / "junk.json"
        path.write_text("{not json")
        with pytest.raises(DataError):
            load_circuit(str(path))
