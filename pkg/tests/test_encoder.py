import numpy as np
import pytest

from core.encoder import backward, forward, gcn_forward, glorot_init, projection_forward
from core.graph_core import normalized_adjacency
from models import EncoderDims, EncoderParams, StructuralError, ValidationError
from tests.conftest import random_graph


def _dense_oracle(params, a_hat, x):
    relu = lambda m: np.maximum(m, 0.0)
    h = relu(a_hat @ relu(a_hat @ x @ params.gcn_w1) @ params.gcn_w2)
    z = relu(h @ params.proj_w1 + params.proj_b1) @ params.proj_w2 + params.proj_b2
    return h, z


def _random_params(dims, seed):
    params = glorot_init(dims, seed)
    gen = np.random.default_rng(seed)
    params.proj_b1 = gen.normal(scale=0.1, size=params.proj_b1.shape)
    params.proj_b2 = gen.normal(scale=0.1, size=params.proj_b2.shape)
    return params


class TestGlorotInit:
    def test_bound(self):
        params = glorot_init(EncoderDims(4, 8, 8, 8, 8), seed=0)
        assert np.all(np.abs(params.gcn_w1) <= np.sqrt(6 / 12))
        assert not params.proj_b1.any() and not params.proj_b2.any()

    def test_deterministic(self):
        dims = EncoderDims(5, 6, 7, 8, 9)
        a, b = glorot_init(dims, 3), glorot_init(dims, 3)
        for name, arr in a.arrays().items():
            np.testing.assert_array_equal(arr, getattr(b, name))

    def test_variance(self):
        params = glorot_init(EncoderDims(200, 500, 2, 2, 2), seed=1)
        assert params.gcn_w1.var() == pytest.approx(2 / 700, rel=0.05)

    def test_rejects_zero_dimension(self):
        with pytest.raises(ValidationError):
            glorot_init(EncoderDims(4, 0, 8, 8, 8), seed=0)


class TestForward:
    def test_identity_composition(self):
        x = np.abs(np.random.default_rng(0).normal(size=(4, 3)))
        eye = np.eye(3)
        params = EncoderParams(gcn_w1=eye, gcn_w2=eye, proj_w1=eye, proj_b1=np.zeros(3),
                               proj_w2=eye, proj_b2=np.zeros(3))
        np.testing.assert_allclose(gcn_forward(params, np.eye(4), x), x)
        np.testing.assert_allclose(projection_forward(params, x), x)

    def test_zero_features(self):
        params = glorot_init(EncoderDims(3, 5, 4, 4, 4), seed=2)
        g = random_graph(6, 0.5, seed=2, n_features=3)
        assert not gcn_forward(params, normalized_adjacency(g), np.zeros((6, 3))).any()

    def test_zero_projection(self):
        params = glorot_init(EncoderDims(3, 5, 4, 4, 4), seed=2)
        zeros = params.zeros_like()
        assert not projection_forward(zeros, np.ones((6, 4))).any()

    @pytest.mark.parametrize('seed', range(5))
    def test_matches_dense_oracle(self, seed):
        g = random_graph(6, 0.5, seed, n_features=3)
        params = _random_params(EncoderDims(3, 5, 4, 6, 3), seed)
        cache = forward(params, normalized_adjacency(g), g.features)
        h, z = _dense_oracle(params, normalized_adjacency(g).toarray(), g.features)
        np.testing.assert_allclose(cache.h, h, rtol=0, atol=1e-12)
        np.testing.assert_allclose(cache.z, z, rtol=0, atol=1e-12)

    def test_dimension_mismatch(self):
        params = glorot_init(EncoderDims(3, 5, 4, 4, 4), seed=0)
        with pytest.raises(StructuralError):
            forward(params, np.eye(4), np.ones((4, 2)))


def _finite_difference(params, a_hat, x, weights, step=1e-5):
    def loss(p):
        return float(np.sum(forward(p, a_hat, x).z * weights))

    grads = {}
    for name, arr in params.arrays().items():
        g = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            original = arr[idx]
            arr[idx] = original + step
            up = loss(params)
            arr[idx] = original - step
            down = loss(params)
            arr[idx] = original
            g[idx] = (up - down) / (2 * step)
        grads[name] = g
    return grads


class TestBackward:
    def test_zero_upstream_gradient(self):
        g = random_graph(8, 0.4, seed=0, n_features=3)
        params = _random_params(EncoderDims(3, 4, 4, 4, 2), 0)
        cache = forward(params, normalized_adjacency(g), g.features)
        grads = backward(params, cache, np.zeros_like(cache.z))
        assert all(not arr.any() for arr in grads.arrays().values())

    @pytest.mark.parametrize('seed', range(3))
    def test_matches_finite_differences(self, seed):
        g = random_graph(10, 0.4, seed, n_features=3)
        params = _random_params(EncoderDims(3, 4, 4, 5, 3), seed)
        a_hat = normalized_adjacency(g)
        weights = np.random.default_rng(seed + 100).normal(size=(10, 3))
        grads = backward(params, forward(params, a_hat, g.features), weights)
        expected = _finite_difference(params, a_hat, g.features, weights)
        for name, arr in grads.arrays().items():
            np.testing.assert_allclose(arr, expected[name], rtol=1e-5, atol=1e-8, err_msg=name)

    def test_linear_region_closed_form(self):
        # positive inputs and weights keep every pre-activation positive
        gen = np.random.default_rng(4)
        a_hat = normalized_adjacency(random_graph(7, 0.5, seed=4, n_features=2)).toarray()
        x = gen.uniform(0.5, 1.0, size=(7, 2))
        params = EncoderParams(
            gcn_w1=gen.uniform(0.1, 1.0, (2, 3)), gcn_w2=gen.uniform(0.1, 1.0, (3, 3)),
            proj_w1=gen.uniform(0.1, 1.0, (3, 4)), proj_b1=gen.uniform(0.1, 1.0, 4),
            proj_w2=gen.uniform(0.1, 1.0, (4, 2)), proj_b2=gen.uniform(0.1, 1.0, 2))
        dz = gen.normal(size=(7, 2))
        cache = forward(params, a_hat, x)
        grads = backward(params, cache, dz)

        # Z = Â Â X W1 W2 Wp1 Wp2 + 1 b1ᵀ Wp2 + 1 b2ᵀ in the linear region
        m = a_hat @ a_hat @ x
        np.testing.assert_allclose(grads.proj_b2, dz.sum(axis=0))
        np.testing.assert_allclose(grads.proj_b1, params.proj_w2 @ dz.sum(axis=0))
        np.testing.assert_allclose(
            grads.gcn_w1, m.T @ dz @ (params.gcn_w2 @ params.proj_w1 @ params.proj_w2).T)

    def test_shape_mismatch(self):
        g = random_graph(5, 0.5, seed=1, n_features=3)
        params = _random_params(EncoderDims(3, 4, 4, 4, 2), 1)
        cache = forward(params, normalized_adjacency(g), g.features)
        with pytest.raises(StructuralError):
            backward(params, cache, np.zeros((5, 3)))


class TestCheckpoint:
    def test_save_and_load(self, tmp_path):
        params = _random_params(EncoderDims(3, 4, 5, 6, 7), 9)
        path = tmp_path / 'encoder.npz'
        params.save(path)
        loaded = EncoderParams.load(path)
        assert loaded.dims == params.dims
        for name, arr in params.arrays().items():
            np.testing.assert_array_equal(getattr(loaded, name), arr)

    def test_missing_arrays(self, tmp_path):
        path = tmp_path / 'bad.npz'
        np.savez(path, gcn_w1=np.ones((2, 2)))
        with pytest.raises(StructuralError, match='missing'):
            EncoderParams.load(path)
