"""Random smooth+decomposable circuit generator for the randomized suites.

Circuits are built over a shared random variable-partition tree, so every
unit's scope is a tree node: any two scopes are nested or disjoint, which is
exactly the compatibility condition latent-variable materialization needs.
"""

from __future__ import annotations

import numpy as np

from pclvd.circuit import Circuit, CircuitBuilder, Unit, scope_of
from pclvd.materialize import _extract


def _random_vtree(rng: np.random.Generator, variables: list[int]):
    if len(variables) == 1:
        return variables[0]
    split = int(rng.integers(1, len(variables)))
    return (
        _random_vtree(rng, variables[:split]),
        _random_vtree(rng, variables[split:]),
    )


def random_circuit(
    rng: np.random.Generator,
    num_vars: int,
    card: int = 2,
    mixtures_per_node: int = 2,
    products_per_node: int = 3,
):
    """Random circuit over ``num_vars`` variables of cardinality ``card``.

    Returns (circuit, scopes) where ``scopes`` lists the internal sum scopes
    (valid materialization targets), largest first.
    """
    variables = [int(v) for v in rng.permutation(num_vars)]
    vtree = _random_vtree(rng, variables)
    builder = CircuitBuilder([card] * num_vars)
    internal_scopes: list[int] = []

    def emit(node) -> list[int]:
        if isinstance(node, int):
            return [
                builder.input_unit(node, rng.dirichlet(np.full(card, 1.2)))
                for _ in range(mixtures_per_node)
            ]
        left = emit(node[0])
        right = emit(node[1])
        products = []
        for _ in range(products_per_node):
            products.append(
                builder.product_unit(
                    (left[int(rng.integers(len(left)))], right[int(rng.integers(len(right)))])
                )
            )
        sums = []
        for _ in range(mixtures_per_node):
            take = sorted(
                rng.choice(len(products), size=int(rng.integers(2, len(products) + 1)), replace=False)
            )
            chosen = [products[i] for i in take]
            sums.append(
                builder.sum_unit(chosen, weights=rng.dirichlet(np.full(len(chosen), 1.2)))
            )
        internal_scopes.append(builder.units[sums[0]].scope)
        return sums

    top = emit(vtree)
    raw = Circuit(builder.units, top[0], builder.var_cards, validate=False)
    circuit, _ = _extract(raw, top[0], {})
    scopes = sorted(set(internal_scopes), key=lambda s: -bin(s).count("1"))
    return circuit, scopes


def make_straddle_counterexample():
    """A hand-built augmented circuit whose root mixes a branch containing a
    unit with scope {1, 2}, straddling W = {0, 1}. Both branches carry their
    own latent indicator, yet conditioned on Z = 1 the variables x1 and x2
    stay coupled, so W is not independent of the rest given Z.

    Returns (circuit, w_scope, z_var). The circuit is smooth and decomposable,
    so the enumeration oracle runs; it must report False.
    """
    rng = np.random.default_rng(11)
    b = CircuitBuilder([2, 2, 2, 2])  # x0, x1, x2 and the latent z (var 3)

    def pair_mixture(u, v):
        prods = [
            b.product_unit(
                (
                    b.input_unit(u, rng.dirichlet([0.7, 0.7])),
                    b.input_unit(v, rng.dirichlet([0.7, 0.7])),
                )
            )
            for _ in range(2)
        ]
        return b.sum_unit(prods, weights=rng.dirichlet([1.5, 1.5]))

    # Branch a: W modeled jointly, x2 independent -- the well-behaved shape.
    branch_a = b.product_unit(
        (b.indicator(3, 0), pair_mixture(0, 1), b.input_unit(2, [0.9, 0.1]))
    )
    # Branch b: a {1, 2} mixture straddles W, coupling x1 with x2 under Z = 1.
    branch_b = b.product_unit(
        (b.indicator(3, 1), b.input_unit(0, [0.2, 0.8]), pair_mixture(1, 2))
    )
    root = b.sum_unit([branch_a, branch_b], weights=[0.6, 0.4])
    return b.build(root), scope_of([0, 1]), 3
