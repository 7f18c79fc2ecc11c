import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from bitnn.realnet import RealLayer, RealNetwork
from bitnn.ternarize import (
    TernarizeSpec,
    compute_beta,
    ternarize_network,
    ternarize_tensor,
    zero_count,
)

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def kth_smallest_magnitude(values, sparsity):
    """Sort-based reference for the boundary."""
    mags = sorted(abs(float(v)) for v in values)
    k = int(np.floor(sparsity * len(mags) + 0.5))
    return 0.0 if k == 0 else mags[k - 1]


class TestComputeBeta:
    def test_example(self):
        values = [-0.9, -0.2, 0.1, 0.5]
        beta = compute_beta(values, 0.5)
        assert beta == pytest.approx(0.2)
        assert ternarize_tensor(values, beta).tolist() == [-1, 0, 0, 1]

    def test_zero_sparsity(self):
        values = np.array([0.0, -0.3, 0.7])
        assert compute_beta(values, 0.0) == 0.0
        assert ternarize_tensor(values, 0.0).tolist() == [0, -1, 1]

    def test_ties_all_zero(self):
        values = np.array([0.4, -0.4, 0.4, -0.4])
        beta = compute_beta(values, 0.5)
        assert np.all(ternarize_tensor(values, beta) == 0)

    def test_empty(self):
        with pytest.raises(ValueError):
            compute_beta([], 0.3)

    def test_bad_sparsity(self):
        with pytest.raises(ValueError):
            TernarizeSpec(1.0)

    @given(arrays(np.float64, st.integers(1, 60), elements=finite), st.floats(0, 0.99))
    def test_matches_sort_reference(self, values, sparsity):
        assert compute_beta(values, sparsity) == kth_smallest_magnitude(values, sparsity)

    @settings(max_examples=50)
    @given(arrays(np.float64, st.integers(1, 200), elements=finite), st.floats(0, 0.99))
    def test_sparsity_bound(self, values, sparsity):
        beta = compute_beta(values, sparsity)
        tern = ternarize_tensor(values, beta)
        n = values.size
        achieved = np.mean(tern == 0)
        ties = int(np.sum(np.abs(values) == beta))
        assert abs(achieved - sparsity) <= (ties + 1) / n
        assert np.sum(tern == 0) >= zero_count(n, sparsity)

    @given(arrays(np.float64, st.integers(1, 100), elements=finite), st.floats(0, 0.99), st.floats(0, 0.99))
    def test_monotone_zero_sets(self, values, s1, s2):
        lo, hi = sorted((s1, s2))
        zeros_lo = ternarize_tensor(values, compute_beta(values, lo)) == 0
        zeros_hi = ternarize_tensor(values, compute_beta(values, hi)) == 0
        assert np.all(~zeros_lo | zeros_hi)

    @given(arrays(np.float64, st.integers(1, 100), elements=finite), st.floats(0, 0.99))
    def test_sign_preserved(self, values, sparsity):
        tern = ternarize_tensor(values, compute_beta(values, sparsity))
        nz = tern != 0
        assert np.all(tern[nz] == np.sign(values[nz]))


def random_net(seed, sizes=(20, 12, 5)):
    return RealNetwork.initialize(list(sizes), np.random.default_rng(seed), scale=1.0)


class TestTernarizeNetwork:
    def test_independent_boundaries(self):
        net = RealNetwork([RealLayer(np.array([[5.0, -6.0], [7.0, 8.0]]), np.array([0.01, -0.02]))])
        out = ternarize_network(net, TernarizeSpec(0.5))
        (bw, bb), = out.betas
        assert bw == 6.0 and bb == 0.01
        np.testing.assert_array_equal(out.layers[0].dense_weights(), [[0, 0], [1, 1]])
        np.testing.assert_array_equal(out.layers[0].dense_bias(), [0, -1])

    def test_shared_boundary_option(self):
        net = RealNetwork([RealLayer(np.array([[5.0, -6.0], [7.0, 8.0]]), np.array([0.01, -0.02]))])
        out = ternarize_network(net, TernarizeSpec(0.5, separate_bias=False))
        np.testing.assert_array_equal(out.layers[0].dense_bias(), [0, 0])

    @pytest.mark.parametrize("sparsity", [0.1, 0.5, 0.9])
    def test_per_layer_sparsity(self, sparsity):
        net = random_net(1)
        out = ternarize_network(net, TernarizeSpec(sparsity))
        for real, tern in zip(net.layers, out.layers):
            n = real.weights.size
            achieved = tern.sparsity()
            assert sparsity - 0.5 / n <= achieved <= sparsity + 1.5 / n

    def test_zero_sparsity_pure_bipolar(self):
        out = ternarize_network(random_net(2), TernarizeSpec(0.0))
        for layer in out.layers:
            assert layer.sparsity() == 0.0
            assert np.all(np.abs(layer.dense_weights()) == 1)

    @pytest.mark.parametrize("sparsity", [0.0, 0.3, 0.7])
    def test_idempotent(self, sparsity):
        spec = TernarizeSpec(sparsity)
        first = ternarize_network(random_net(3), spec)
        implied = RealNetwork(
            [RealLayer(t.dense_weights().astype(float), t.dense_bias().astype(float)) for t in first.layers]
        )
        second = ternarize_network(implied, spec)
        assert first.layers == second.layers

    def test_shadow_is_a_copy(self):
        net = random_net(4)
        out = ternarize_network(net, TernarizeSpec(0.2))
        out.shadow.layers[0].weights[0, 0] += 100.0
        assert net.layers[0].weights[0, 0] != out.shadow.layers[0].weights[0, 0]

    def test_frozen_boundaries_reused(self):
        net = random_net(5)
        first = ternarize_network(net, TernarizeSpec(0.5))
        scaled = net.copy()
        for layer in scaled.layers:
            layer.weights *= 10.0
        again = ternarize_network(scaled, TernarizeSpec(0.5), betas=first.betas)
        assert again.betas == first.betas
        assert all(b.sparsity() < a.sparsity() for a, b in zip(first.layers, again.layers))
