import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pclvd.builders import HmmSpec, random_hmm_params, hmm_circuit
from pclvd.circuit import evaluate_batch
from pclvd.datasets import (
    Dataset,
    Metrics,
    compute_bpd,
    compute_perplexity,
    window_tokens,
)
from pclvd.errors import DataError, PreconditionError

from oracles import forward_loglik


class TestWindowTokens:
    def test_definition(self):
        ds = window_tokens([1, 2, 3, 4], 3)
        assert ds.data.tolist() == [[1, 2, 3], [2, 3, 4]]
        assert ds.kind == "tokens"

    def test_window_count(self, rng):
        stream = rng.integers(10, size=157)
        assert window_tokens(stream, 5).n == 157 - 5 + 1

    def test_ten_thousand_tokens_give_9969_windows(self, rng):
        stream = rng.integers(64, size=10_000)
        assert window_tokens(stream, 32).n == 9969

    def test_stride_flag(self, rng):
        stream = rng.integers(4, size=20)
        assert window_tokens(stream, 4, stride=4).n == 5

    def test_short_stream_rejected(self):
        with pytest.raises(DataError):
            window_tokens([1, 2], 3)

    def test_vocab_inferred_or_explicit(self):
        ds = window_tokens([0, 3, 1], 2)
        assert ds.card == 4
        ds = window_tokens([0, 3, 1], 2, vocab_size=10)
        assert ds.card == 10


class TestDatasetValidation:
    def test_out_of_range_tokens_rejected(self):
        with pytest.raises(DataError):
            Dataset("tokens", np.array([[5]]), card=3)

    def test_image_dims_checked(self):
        with pytest.raises(DataError):
            Dataset("images", np.zeros((2, 6), dtype=int), card=256, height=2, width=2)

    def test_unknown_kind_rejected(self):
        with pytest.raises(DataError):
            Dataset("audio", np.zeros((1, 1), dtype=int), card=2)


class TestBitsPerDimension:
    def test_one_bit_per_dimension(self):
        # Each sample carries D * ln 2 nats of surprisal.
        d, n = 7, 13
        ll_total = -n * d * math.log(2)
        assert compute_bpd(ll_total, n, d) == pytest.approx(1.0, abs=1e-15)

    def test_uniform_256_categories_is_8bpd(self):
        n, d = 10, 4
        ll_total = n * d * math.log(1.0 / 256.0)
        assert compute_bpd(ll_total, n, d) == pytest.approx(8.0, abs=1e-12)

    @given(
        st.floats(-1e6, -1e-3),
        st.integers(1, 1000),
        st.integers(1, 512),
    )
    def test_matches_hand_formula(self, ll, n, d):
        assert compute_bpd(ll, n, d) == pytest.approx(
            -ll / (math.log(2) * n * d), abs=1e-12
        )

    def test_positive_dims_required(self):
        with pytest.raises(PreconditionError):
            compute_bpd(-1.0, 1, 0)


class TestPerplexity:
    def test_uniform_vocab(self):
        v, tokens = 50, 200
        assert compute_perplexity(tokens * math.log(1.0 / v), tokens) == pytest.approx(
            v, rel=1e-12
        )

    def test_zero_loglik_is_one(self):
        assert compute_perplexity(0.0, 10) == 1.0

    def test_matches_forward_oracle_on_toy_hmm(self, rng):
        spec = HmmSpec(4, 3, 5)
        params = random_hmm_params(spec, seed=3)
        c = hmm_circuit(params)
        x = rng.integers(5, size=(20, 4))
        ll_circuit = float(evaluate_batch(c, x).sum())
        ll_oracle = sum(
            forward_loglik(params.initial, params.transitions, params.emissions, row)
            for row in x
        )
        tokens = x.size
        assert compute_perplexity(ll_circuit, tokens) == pytest.approx(
            compute_perplexity(ll_oracle, tokens), rel=1e-9
        )

    def test_token_count_required(self):
        with pytest.raises(PreconditionError):
            compute_perplexity(-1.0, 0)


class TestMetricsIdentities:
    @given(st.floats(-1e5, -1e-3), st.integers(1, 200), st.integers(1, 64))
    def test_identities_hold(self, ll, n, d):
        m = Metrics.from_loglik(ll, n, d)
        assert m.bpd == pytest.approx(-ll / (math.log(2) * n * d), abs=1e-12)
        if -ll / (n * d) < 700:
            assert m.perplexity == pytest.approx(math.exp(-ll / (n * d)), rel=1e-12)
        else:
            assert m.perplexity == math.inf
