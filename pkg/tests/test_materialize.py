import itertools
import math

import numpy as np
import pytest

from pclvd.builders import HmmSpec, PatchPcSpec, build_hmm, build_patch_pc
from pclvd.circuit import (
    MARGINALIZED,
    CircuitBuilder,
    check_deterministic,
    evaluate,
    evaluate_batch,
    marginal_batch,
    scope_of,
)
from pclvd.errors import CapacityError, StructuralError
from pclvd.materialize import (
    PartitionSpec,
    conditional_independence_oracle,
    conditional_subcircuit,
    latent_view,
    materialize_lv,
    materialize_partition,
    materialized_sum_units,
)

from gencircuits import make_straddle_counterexample, random_circuit
from oracles import complete_grid


def mixture_of_products(num_products: int, seed: int = 0, vars_=(0, 1)):
    """One sum over ``num_products`` two-variable products."""
    rng = np.random.default_rng(seed)
    b = CircuitBuilder([2, 2])
    products = []
    for _ in range(num_products):
        ins = [b.input_unit(v, rng.dirichlet([1.3, 1.3])) for v in vars_]
        products.append(b.product_unit(ins))
    b.sum_unit(products, weights=rng.dirichlet(np.full(num_products, 1.5)))
    return b.build()


def marginal_over_latents(aug, x_grid, num_latents):
    padded = np.concatenate(
        [x_grid, np.full((len(x_grid), num_latents), MARGINALIZED, dtype=np.int64)],
        axis=1,
    )
    return marginal_batch(aug, padded)


class TestMaterializeLv:
    def test_four_products_get_four_indicator_values(self):
        c = mixture_of_products(4)
        aug, record = materialize_lv(c, scope_of([0, 1]))
        assert record.cardinality == 4
        assert aug.var_cards[record.z_var] == 4
        assert len(record.product_units) == len(record.indicator_units) == 4
        # Indicator j is an indicator for category j attached to the j-th unit.
        for j, (p, ind) in enumerate(zip(record.product_units, record.indicator_units)):
            assert ind in aug.units[p].children
            dist = aug.units[ind].dist
            assert dist[j] == 1.0 and dist.sum() == 1.0
            assert aug.units[ind].frozen

    def test_indicator_partition_of_unity(self):
        c = mixture_of_products(3, seed=4)
        aug, record = materialize_lv(c, scope_of([0, 1]))
        grid = complete_grid([2, 2])
        orig = np.exp(evaluate_batch(c, grid))
        total = np.zeros(len(grid))
        for z in range(record.cardinality):
            padded = np.concatenate(
                [grid, np.full((len(grid), 1), z, dtype=np.int64)], axis=1
            )
            total += np.exp(evaluate_batch(aug, padded))
        # Exact partition of unity; only the final summation order differs.
        assert np.max(np.abs(total - orig)) < 1e-15

    def test_marginal_invariance_random_circuits(self, rng):
        for _ in range(10):
            c, scopes = random_circuit(rng, 8)
            w = scopes[int(rng.integers(len(scopes)))]
            aug, record = materialize_lv(c, w)
            grid = complete_grid(c.var_cards)
            err = np.abs(
                np.exp(marginal_over_latents(aug, grid, 1))
                - np.exp(evaluate_batch(c, grid))
            ).max()
            assert err < 1e-10

    def test_determinism_induced_on_materialized_sums(self, rng):
        for _ in range(5):
            c, scopes = random_circuit(rng, 7)
            w = scopes[int(rng.integers(len(scopes)))]
            aug, record = materialize_lv(c, w)
            sums = materialized_sum_units(aug, record)
            assert sums
            assert all(check_deterministic(aug, s) for s in sums)

    def test_parameters_shared_with_original(self, rng):
        c, scopes = random_circuit(rng, 6)
        aug, _ = materialize_lv(c, scopes[0])
        shared = 0
        for u in c.units:
            if u.log_weights is not None:
                assert any(v.log_weights is u.log_weights for v in aug.units)
                shared += 1
        assert shared > 0

    def test_pass_through_products_inserted_over_bare_inputs(self):
        # A mixture of two categoricals over one variable has no product layer.
        b = CircuitBuilder([3])
        i0 = b.input_unit(0, [0.6, 0.3, 0.1])
        i1 = b.input_unit(0, [0.1, 0.1, 0.8])
        b.sum_unit([i0, i1], weights=[0.5, 0.5])
        c = b.build()
        aug, record = materialize_lv(c, scope_of([0]))
        assert record.cardinality == 2
        for j in range(2):
            p = aug.units[record.product_units[j]]
            assert len(p.children) == 2  # wrapped input + indicator
        grid = complete_grid([3])
        err = np.abs(
            np.exp(marginal_over_latents(aug, grid, 1)) - np.exp(evaluate_batch(c, grid))
        ).max()
        assert err < 1e-12

    def test_scope_without_sum_rejected(self):
        c = mixture_of_products(2)
        with pytest.raises(StructuralError):
            materialize_lv(c, scope_of([0]))

    def test_straddling_scope_rejected_with_unit_named(self, rng):
        c, _ = random_circuit(rng, 6)
        # Find any sum scope, then poison it with an extra unrelated variable;
        # units inside the scope straddle the requested set.
        w = next(u.scope for u in c.units if u.log_weights is not None)
        outside = next(v for v in range(6) if not (w >> v) & 1)
        poisoned = w | (1 << outside)
        bad = poisoned
        b = CircuitBuilder([2] * 6)
        with pytest.raises(StructuralError) as err:
            materialize_lv(c, bad)
        assert "unit" in str(err.value)

    def test_nested_same_scope_products_rejected(self):
        # product -> sum -> products, all over the same scope: augmenting both
        # levels would contradict itself and zero the distribution.
        b = CircuitBuilder([2, 2])
        mixture_rng = np.random.default_rng(3)
        prods = []
        for _ in range(2):
            ins = [b.input_unit(v, mixture_rng.dirichlet([1.0, 1.0])) for v in (0, 1)]
            prods.append(b.product_unit(ins))
        s = b.sum_unit(prods, weights=[0.5, 0.5])
        wrapper = b.product_unit([s])
        b.sum_unit([wrapper, prods[0]], weights=[0.5, 0.5])
        c = b.build(validate=True)
        with pytest.raises(StructuralError):
            materialize_lv(c, scope_of([0, 1]))

    def test_non_smooth_circuit_rejected(self):
        b = CircuitBuilder([2, 2])
        i0 = b.input_unit(0, [0.5, 0.5])
        i1 = b.input_unit(1, [0.5, 0.5])
        b.sum_unit([i0, i1], weights=[0.5, 0.5])
        c = b.build()
        with pytest.raises(StructuralError):
            materialize_lv(c, scope_of([0]))


class TestMaterializePartition:
    def two_part_circuit(self, seed=0):
        rng = np.random.default_rng(seed)
        b = CircuitBuilder([2, 2, 2, 2])

        def part(vars_, m):
            prods = []
            for _ in range(m):
                ins = [b.input_unit(v, rng.dirichlet([1.3, 1.3])) for v in vars_]
                prods.append(b.product_unit(ins))
            return b.sum_unit(prods, weights=rng.dirichlet(np.full(m, 1.5)))

        s1 = part([0, 1], 3)
        s2 = part([2, 3], 2)
        b.product_unit([s1, s2])
        return b.build()

    def test_single_part_equals_materialize_lv(self, rng):
        c, scopes = random_circuit(rng, 5)
        full = scope_of(range(5))
        if not any(u.log_weights is not None and u.scope == full for u in c.units):
            pytest.skip("generator produced a product root this draw")
        aug_a, rec_a = materialize_lv(c, full)
        aug_b, recs_b = materialize_partition(c, PartitionSpec(parts=(full,)))
        assert len(recs_b) == 1
        assert rec_a.cardinality == recs_b[0].cardinality
        grid = complete_grid(aug_a.var_cards)
        assert np.array_equal(
            evaluate_batch(aug_a, grid), evaluate_batch(aug_b, grid)
        )

    def test_joint_decomposes_into_latent_and_conditionals(self):
        c = self.two_part_circuit()
        parts = (scope_of([0, 1]), scope_of([2, 3]))
        aug, records = materialize_partition(c, PartitionSpec(parts=parts))
        z_cards = [r.cardinality for r in records]
        lview = latent_view(aug, records)
        for x in itertools.product(range(2), repeat=4):
            for z in itertools.product(*(range(m) for m in z_cards)):
                row = np.array(list(x) + list(z), dtype=np.int64)
                joint = evaluate(aug, row)
                z_only = np.full(aug.num_vars, MARGINALIZED, dtype=np.int64)
                for r, zi in zip(records, z):
                    z_only[r.z_var] = zi
                decomposed = evaluate(lview.circuit, z_only)
                for i, (r, zi) in enumerate(zip(records, z)):
                    sub = conditional_subcircuit(aug, r, zi)
                    decomposed += evaluate(sub, row)
                assert joint == pytest.approx(decomposed, abs=1e-9)

    def test_marginalizing_all_latents_recovers_original(self):
        c = self.two_part_circuit(seed=5)
        parts = (scope_of([0, 1]), scope_of([2, 3]))
        aug, records = materialize_partition(c, PartitionSpec(parts=parts))
        grid = complete_grid([2] * 4)
        err = np.abs(
            np.exp(marginal_over_latents(aug, grid, len(records)))
            - np.exp(evaluate_batch(c, grid))
        ).max()
        assert err < 1e-10

    def test_partition_validation(self):
        c = self.two_part_circuit()
        with pytest.raises(StructuralError):
            materialize_partition(
                c, PartitionSpec(parts=(scope_of([0, 1]), scope_of([1, 2, 3])))
            )
        with pytest.raises(StructuralError):
            materialize_partition(c, PartitionSpec(parts=(scope_of([0, 1]),)))
        with pytest.raises(StructuralError):
            materialize_partition(
                c,
                PartitionSpec(
                    parts=(scope_of([0, 1]), scope_of([2, 3])), budgets=(3, 5)
                ),
            )

    def test_records_rebased_to_final_circuit(self):
        c = self.two_part_circuit()
        parts = (scope_of([0, 1]), scope_of([2, 3]))
        aug, records = materialize_partition(c, PartitionSpec(parts=parts))
        for record in records:
            for j, (p, ind) in enumerate(
                zip(record.product_units, record.indicator_units)
            ):
                assert ind in aug.units[p].children
                assert aug.units[ind].var == record.z_var
                assert np.argmax(aug.units[ind].dist) == j


class TestConditionalIndependenceOracle:
    def test_true_on_partition_materialized(self, rng):
        c = TestMaterializePartition().two_part_circuit(seed=7)
        parts = (scope_of([0, 1]), scope_of([2, 3]))
        aug, records = materialize_partition(c, PartitionSpec(parts=parts))
        for record in records:
            assert conditional_independence_oracle(aug, record.scope, record.z_var)

    def test_true_on_full_scope_hmm_suffix(self):
        c = build_hmm(HmmSpec(3, 2, 2), seed=1)
        aug, records = materialize_partition(
            c, PartitionSpec(parts=(scope_of([0, 1, 2]),))
        )
        assert conditional_independence_oracle(aug, records[0].scope, records[0].z_var)

    def test_false_on_straddle_counterexample(self):
        circuit, w, z_var = make_straddle_counterexample()
        assert not conditional_independence_oracle(circuit, w, z_var)

    def test_capacity_guard(self):
        b = CircuitBuilder([2] * 15)
        ins = [b.input_unit(v, [0.5, 0.5]) for v in range(15)]
        b.product_unit(ins)
        c = b.build()
        with pytest.raises(CapacityError):
            conditional_independence_oracle(c, scope_of([0]), 1)


class TestViews:
    def test_latent_view_of_patch_composite_is_latent_distribution(self):
        spec = PatchPcSpec(
            height=2, width=2, patch_size=1, counts=(2, 2, 2, 2),
            pixel_card=2, sub_hidden=1, z_hidden=2,
        )
        c, records = build_patch_pc(spec, seed=2)
        lview = latent_view(c, records)
        z_grid = complete_grid([2, 2, 2, 2])
        padded = np.full((len(z_grid), c.num_vars), MARGINALIZED, dtype=np.int64)
        for i, r in enumerate(records):
            padded[:, r.z_var] = z_grid[:, i]
        total = np.exp(evaluate_batch(lview.circuit, padded)).sum()
        assert total == pytest.approx(1.0, abs=1e-9)
        # The view re-uses the composite's weight arrays.
        view_arrays = {
            id(u.log_weights) for u in lview.circuit.units if u.log_weights is not None
        }
        orig_arrays = {id(u.log_weights) for u in c.units if u.log_weights is not None}
        assert view_arrays <= orig_arrays

    def test_conditional_subcircuit_normalized_per_category(self):
        c = TestMaterializePartition().two_part_circuit(seed=9)
        parts = (scope_of([0, 1]), scope_of([2, 3]))
        aug, records = materialize_partition(c, PartitionSpec(parts=parts))
        grid4 = complete_grid([2] * 4)
        padded = np.concatenate(
            [grid4, np.full((len(grid4), 2), MARGINALIZED, dtype=np.int64)], axis=1
        )
        for record in records:
            for j in range(record.cardinality):
                sub = conditional_subcircuit(aug, record, j)
                vals = np.exp(evaluate_batch(sub, padded))
                # Each conditional must sum to one over its own part; the grid
                # enumerates the other part too, scaling the total by 4.
                assert vals.sum() / 4.0 == pytest.approx(1.0, abs=1e-9)
