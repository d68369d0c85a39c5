from dataclasses import replace

import numpy as np
import pytest

from config import augmentation_for
from core.contrastive import (AdamOptimizer, ContrastiveTrainer, embed, loss_and_gradient, loss_gradient,
                              nt_xent_pair_loss, pairwise_cosine, total_loss, train)
from core.encoder import backward, forward, glorot_init
from core.graph_core import build_graph, normalized_adjacency
from models import EncoderDims, EncoderParams, TrainConfig, ValidationError


def _naive_pair_loss(i, z1, z2, tau):
    u = z1 / np.linalg.norm(z1, axis=1, keepdims=True)
    v = z2 / np.linalg.norm(z2, axis=1, keepdims=True)
    positive = np.exp(u[i] @ v[i] / tau)
    denominator = sum(np.exp(u[i] @ v[k] / tau) for k in range(len(u)))
    denominator += sum(np.exp(u[i] @ u[k] / tau) for k in range(len(u)) if k != i)
    return -np.log(positive / denominator)


def _naive_total(z1, z2, tau):
    n = len(z1)
    return sum(_naive_pair_loss(i, z1, z2, tau) + _naive_pair_loss(i, z2, z1, tau) for i in range(n)) / (2 * n)


def _small_config(**overrides):
    cfg = TrainConfig(epochs=3, hidden_dim=8, embedding_dim=8, proj_dim=8, log_every=0,
                      augmentation=augmentation_for('fm+triangle', 'pokec_z'))
    return replace(cfg, **overrides)


class TestPairwiseCosine:
    def test_identical_unit_rows(self):
        z = np.eye(3)
        np.testing.assert_allclose(np.diag(pairwise_cosine(z, z)), 1.0)

    def test_orthogonal_rows(self):
        assert pairwise_cosine(np.array([[1.0, 0.0]]), np.array([[0.0, 2.0]]))[0, 0] == 0.0

    def test_matches_direct_formula(self):
        gen = np.random.default_rng(0)
        z1, z2 = gen.normal(size=(5, 3)), gen.normal(size=(5, 3))
        expected = np.array([[a @ b / (np.linalg.norm(a) * np.linalg.norm(b)) for b in z2] for a in z1])
        np.testing.assert_allclose(pairwise_cosine(z1, z2), expected, rtol=0, atol=1e-12)

    def test_zero_row_gives_zero(self):
        s = pairwise_cosine(np.array([[0.0, 0.0], [1.0, 0.0]]), np.array([[1.0, 1.0], [1.0, 0.0]]))
        assert not s[0].any()


class TestPairLoss:
    def test_single_node_has_no_negatives(self):
        z = np.array([[0.3, -1.2]])
        assert nt_xent_pair_loss(0, z, z * 2, 0.4) == pytest.approx(0.0, abs=1e-15)

    @pytest.mark.parametrize('tau', [0.1, 0.4, 2.0])
    def test_identical_embeddings(self, tau):
        z = np.ones((2, 3))
        assert nt_xent_pair_loss(0, z, z, tau) == pytest.approx(np.log(3), abs=1e-12)

    @pytest.mark.parametrize('seed', range(5))
    def test_matches_naive_summation(self, seed):
        gen = np.random.default_rng(seed)
        z1, z2 = gen.normal(size=(4, 3)), gen.normal(size=(4, 3))
        for i in range(4):
            assert nt_xent_pair_loss(i, z1, z2, 0.4) == pytest.approx(_naive_pair_loss(i, z1, z2, 0.4), abs=1e-10)

    def test_tau_must_be_positive(self):
        with pytest.raises(ValidationError):
            nt_xent_pair_loss(0, np.ones((2, 2)), np.ones((2, 2)), 0.0)


class TestTotalLoss:
    def test_symmetric_in_views(self):
        gen = np.random.default_rng(1)
        z1, z2 = gen.normal(size=(6, 4)), gen.normal(size=(6, 4))
        assert total_loss(z1, z2, 0.4) == pytest.approx(total_loss(z2, z1, 0.4), abs=1e-14)

    def test_single_node(self):
        assert total_loss(np.array([[1.0, 2.0]]), np.array([[2.0, 1.0]]), 0.4) == pytest.approx(0.0, abs=1e-15)

    @pytest.mark.parametrize('seed', range(5))
    def test_matches_naive_summation(self, seed):
        gen = np.random.default_rng(seed)
        z1, z2 = gen.normal(size=(5, 3)), gen.normal(size=(5, 3))
        assert total_loss(z1, z2, 0.4) == pytest.approx(_naive_total(z1, z2, 0.4), abs=1e-10)

    @pytest.mark.parametrize('seed', range(5))
    def test_invariant_to_rescaling_one_row(self, seed):
        gen = np.random.default_rng(seed)
        z1, z2 = gen.normal(size=(6, 4)), gen.normal(size=(6, 4))
        row = int(gen.integers(0, 6))
        scaled1, scaled2 = z1.copy(), z2.copy()
        scaled1[row] *= 7.5
        scaled2[(row + 1) % 6] *= 0.02
        assert total_loss(scaled1, scaled2, 0.4) == pytest.approx(total_loss(z1, z2, 0.4), abs=1e-12)

    def test_stable_for_small_temperature(self):
        gen = np.random.default_rng(2)
        z1, z2 = gen.normal(size=(5, 3)), gen.normal(size=(5, 3))
        assert np.isfinite(total_loss(z1, z2, 1e-4))


def _finite_difference_loss(z1, z2, tau, step=1e-5):
    grads = []
    for target in (z1, z2):
        g = np.zeros_like(target)
        for idx in np.ndindex(target.shape):
            original = target[idx]
            target[idx] = original + step
            up = total_loss(z1, z2, tau)
            target[idx] = original - step
            down = total_loss(z1, z2, tau)
            target[idx] = original
            g[idx] = (up - down) / (2 * step)
        grads.append(g)
    return grads


class TestLossGradient:
    def test_identical_rows_stay_finite(self):
        z = np.tile([[0.5, -1.0, 2.0]], (4, 1))
        dz1, dz2 = loss_gradient(z, z.copy(), 0.4)
        assert np.all(np.isfinite(dz1)) and np.all(np.isfinite(dz2))
        np.testing.assert_allclose(dz1, dz2, atol=1e-12)

    @pytest.mark.parametrize('seed', range(5))
    def test_matches_finite_differences(self, seed):
        gen = np.random.default_rng(seed)
        z1, z2 = gen.normal(size=(6, 4)), gen.normal(size=(6, 4))
        dz1, dz2 = loss_gradient(z1, z2, 0.4)
        fd1, fd2 = _finite_difference_loss(z1, z2, 0.4)
        np.testing.assert_allclose(dz1, fd1, rtol=1e-6, atol=1e-9)
        np.testing.assert_allclose(dz2, fd2, rtol=1e-6, atol=1e-9)

    def test_scale_invariance(self):
        gen = np.random.default_rng(3)
        z1, z2 = gen.normal(size=(5, 3)), gen.normal(size=(5, 3))
        loss, dz1, dz2 = loss_and_gradient(z1, z2, 0.4)
        loss2, sz1, sz2 = loss_and_gradient(2 * z1, 2 * z2, 0.4)
        assert loss2 == pytest.approx(loss, abs=1e-14)
        # the gradient of a degree-0 homogeneous function scales by 1/2
        np.testing.assert_allclose(2 * sz1, dz1, atol=1e-12)
        np.testing.assert_allclose(2 * sz2, dz2, atol=1e-12)

    def test_zero_rows_get_zero_gradient(self):
        z1 = np.array([[0.0, 0.0], [1.0, 0.5], [0.2, 1.0]])
        z2 = np.array([[1.0, 1.0], [0.3, 0.5], [-0.2, 1.0]])
        dz1, _ = loss_gradient(z1, z2, 0.4)
        assert not dz1[0].any()

    @pytest.mark.parametrize('seed', range(20))
    def test_end_to_end_through_encoder(self, seed):
        gen = np.random.default_rng(seed)
        n = 5 + seed % 8
        pairs = [(i, j) for i in range(n) for j in range(i + 1, n) if gen.random() < 0.4]
        g, _, _ = build_graph(n, pairs, gen.normal(size=(n, 3)), gen.integers(0, 2, size=n))
        a_hat = normalized_adjacency(g)
        x1 = g.features
        x2 = g.features * (gen.random(3) < 0.7)
        params = glorot_init(EncoderDims(3, 4, 4, 4, 3), seed)
        # nonzero biases keep every projection row away from the origin
        params.proj_b1 = gen.normal(scale=0.1, size=4)
        params.proj_b2 = gen.normal(scale=0.1, size=3)

        def loss_of(p):
            return total_loss(forward(p, a_hat, x1).z, forward(p, a_hat, x2).z, 0.4)

        c1, c2 = forward(params, a_hat, x1), forward(params, a_hat, x2)
        _, dz1, dz2 = loss_and_gradient(c1.z, c2.z, 0.4)
        grads = backward(params, c1, dz1)
        grads2 = backward(params, c2, dz2)
        step = 1e-5
        for name, arr in params.arrays().items():
            analytic = getattr(grads, name) + getattr(grads2, name)
            numeric = np.zeros_like(arr)
            for idx in np.ndindex(arr.shape):
                original = arr[idx]
                arr[idx] = original + step
                up = loss_of(params)
                arr[idx] = original - step
                down = loss_of(params)
                arr[idx] = original
                numeric[idx] = (up - down) / (2 * step)
            scale = max(np.abs(numeric).max(), 1e-8)
            assert np.abs(analytic - numeric).max() / scale < 1e-4, name


class TestAdam:
    def test_zero_learning_rate_keeps_params(self):
        params = glorot_init(EncoderDims(2, 3, 3, 3, 3), 0)
        before = params.copy()
        grads = params.copy()
        opt = AdamOptimizer(0.0, weight_decay=1e-5)
        for _ in range(5):
            opt.step(params, grads)
        for name, arr in before.arrays().items():
            np.testing.assert_array_equal(getattr(params, name), arr)

    def test_first_step_moves_by_learning_rate(self):
        params = EncoderParams(*(np.ones(s) for s in [(1, 1), (1, 1), (1, 1), (1,), (1, 1), (1,)]))
        grads = EncoderParams(*(np.full(s, 3.0) for s in [(1, 1), (1, 1), (1, 1), (1,), (1, 1), (1,)]))
        AdamOptimizer(0.1).step(params, grads)
        np.testing.assert_allclose(params.gcn_w1, [[0.9]], atol=1e-7)


class TestTrainer:
    def test_zero_learning_rate_freezes_parameters(self, small_sbm):
        cfg = _small_config(learning_rate=0.0)
        trainer = ContrastiveTrainer(small_sbm, cfg)
        before = trainer.params.copy()
        trainer.fit()
        for name, arr in before.arrays().items():
            np.testing.assert_array_equal(getattr(trainer.params, name), arr)

    def test_deterministic_losses_and_params(self, small_sbm):
        cfg = _small_config(seed=5)
        params_a, report_a = train(small_sbm, cfg)
        params_b, report_b = train(small_sbm, cfg)
        assert report_a.loss_per_epoch == report_b.loss_per_epoch
        for name, arr in params_a.arrays().items():
            np.testing.assert_array_equal(getattr(params_b, name), arr)

    def test_loss_decreases(self, small_sbm):
        cfg = _small_config(epochs=50, learning_rate=5e-3, hidden_dim=32, embedding_dim=32, proj_dim=32, seed=1)
        _, report = train(small_sbm, cfg)
        assert np.mean(report.loss_per_epoch[-5:]) < report.loss_per_epoch[0]

    def test_report_fields(self, small_sbm, tmp_path):
        trainer = ContrastiveTrainer(small_sbm, _small_config())
        report = trainer.fit()
        trainer.save_checkpoint(tmp_path / 'ckpt.npz', report)
        payload = report.to_dict()
        assert len(payload['loss_per_epoch']) == 3
        assert payload['peak_rss_mb'] > 0
        assert payload['checkpoint'].endswith('ckpt.npz')
        assert EncoderParams.load(tmp_path / 'ckpt.npz').dims == trainer.params.dims

    def test_invalid_config(self, small_sbm):
        with pytest.raises(ValidationError, match='tau'):
            ContrastiveTrainer(small_sbm, _small_config(tau=0.0))

    def test_epoch_seeds_differ(self, small_sbm):
        trainer = ContrastiveTrainer(small_sbm, _small_config())
        assert trainer.epoch_seed(0) != trainer.epoch_seed(1)


class TestEmbed:
    def test_zero_weights_give_zero_embeddings(self, small_sbm):
        params = glorot_init(EncoderDims(small_sbm.n_features, 4, 4, 4, 4), 0).zeros_like()
        emb = embed(params, small_sbm)
        assert not emb.h.any() and not emb.z.any()

    def test_permutation_equivariance(self, small_sbm):
        perm = np.random.default_rng(0).permutation(small_sbm.n_nodes)
        inverse = np.argsort(perm)
        edges = inverse[small_sbm.edge_list]
        g2, _, _ = build_graph(small_sbm.n_nodes, edges, small_sbm.features[perm], small_sbm.sensitive[perm])
        params = glorot_init(EncoderDims(small_sbm.n_features, 6, 5, 4, 3), 2)
        np.testing.assert_allclose(embed(params, g2).h, embed(params, small_sbm).h[perm], atol=1e-12)
