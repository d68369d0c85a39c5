import numpy as np
import pytest
from scipy.optimize import minimize

from core.contrastive import train
from core.evaluate import (equal_opportunity, evaluate_embeddings, evaluate_pipeline, logistic_objective,
                           predict, split_nodes, statistical_parity, train_logistic)
from core.encoder import glorot_init
from core.graph_core import generate_sbm
from models import (EncoderDims, LogisticModel, StructuralError, TrainConfig, UndefinedMetricError,
                    ValidationError)


class TestSplitNodes:
    def test_sizes(self):
        split = split_nodes(10, 0.9, seed=0)
        assert len(split.train_idx) == 9
        assert len(split.test_idx) == 1
        assert sorted(np.concatenate((split.train_idx, split.test_idx))) == list(range(10))

    def test_deterministic(self):
        a, b = split_nodes(50, 0.9, 3), split_nodes(50, 0.9, 3)
        np.testing.assert_array_equal(a.test_idx, b.test_idx)

    def test_test_frequency_is_uniform(self):
        counts = np.zeros(100)
        for seed in range(2000):
            counts[split_nodes(100, 0.9, seed).test_idx] += 1
        assert np.all(np.abs(counts / 2000 - 0.10) <= 0.03)

    @pytest.mark.parametrize('fraction', [0.0, 1.0, 0.01])
    def test_degenerate_fractions(self, fraction):
        with pytest.raises(ValidationError):
            split_nodes(10, fraction, 0)


class TestTrainLogistic:
    def test_separable_pair(self):
        model = train_logistic(np.array([[-1.0], [1.0]]), np.array([0, 1]), l2=1e-3)
        np.testing.assert_array_equal(predict(model, np.array([[-1.0], [1.0]])), [0, 1])

    def test_strong_penalty_predicts_majority(self):
        gen = np.random.default_rng(0)
        h = gen.normal(size=(40, 3))
        y = np.array([1] * 30 + [0] * 10)
        model = train_logistic(h, y, l2=1e6)
        assert np.abs(model.weights).max() < 1e-4
        assert np.all(predict(model, h) == 1)

    @pytest.mark.parametrize('seed', range(5))
    def test_matches_independent_optimizer(self, seed):
        gen = np.random.default_rng(seed)
        h = gen.normal(size=(60, 4))
        y = (h @ gen.normal(size=4) + gen.normal(size=60) > 0).astype(float)
        model = train_logistic(h, y, l2=1.0)
        assert model.converged

        def objective(theta):
            return logistic_objective(theta[:-1], theta[-1], h, y, 1.0)

        best = min((minimize(objective, gen.normal(size=5), method='BFGS', options={'gtol': 1e-10})
                    for _ in range(3)), key=lambda r: r.fun)
        assert logistic_objective(model.weights, model.bias, h, y, 1.0) <= best.fun + 1e-6

    def test_single_class_gives_constant_model(self):
        model = train_logistic(np.ones((5, 2)), np.zeros(5))
        assert model.degenerate
        assert np.all(predict(model, np.random.default_rng(1).normal(size=(4, 2))) == 0)

    def test_empty_training_set(self):
        with pytest.raises(ValidationError):
            train_logistic(np.zeros((0, 2)), np.zeros(0))


class TestPredict:
    def test_tie_predicts_positive(self):
        model = LogisticModel(weights=np.zeros(3), bias=0.0)
        assert np.all(predict(model, np.random.default_rng(0).normal(size=(5, 3))) == 1)

    def test_large_bias(self):
        model = LogisticModel(weights=np.ones(2), bias=1e6)
        assert np.all(predict(model, np.random.default_rng(0).normal(size=(5, 2))) == 1)

    def test_matches_sign_oracle(self):
        gen = np.random.default_rng(2)
        model = LogisticModel(weights=gen.normal(size=4), bias=0.3)
        h = gen.normal(size=(50, 4))
        np.testing.assert_array_equal(predict(model, h), (h @ model.weights + 0.3 >= 0).astype(int))

    def test_dimension_mismatch(self):
        with pytest.raises(StructuralError):
            predict(LogisticModel(weights=np.zeros(3), bias=0.0), np.zeros((2, 4)))


class TestStatisticalParity:
    def test_constant_predictions(self):
        assert statistical_parity(np.ones(4), np.array([0, 0, 1, 1])) == 0.0

    def test_hand_example(self):
        assert statistical_parity(np.array([1, 1, 0, 0]), np.array([0, 0, 1, 1])) == 1.0

    def test_random_predictions_are_near_zero(self):
        gen = np.random.default_rng(0)
        s = np.repeat([0, 1], 500)
        values = [statistical_parity(gen.integers(0, 2, size=1000), s) for _ in range(1000)]
        assert np.mean(values) < 0.05

    def test_empty_group(self):
        with pytest.raises(UndefinedMetricError, match='s=1'):
            statistical_parity(np.ones(3), np.zeros(3))


class TestEqualOpportunity:
    def test_perfect_classifier(self):
        y = np.array([1, 0, 1, 1, 0, 1])
        s = np.array([0, 0, 0, 1, 1, 1])
        assert equal_opportunity(y, y, s) == 0.0

    def test_hand_example(self):
        assert equal_opportunity(np.array([1, 0]), np.array([1, 1]), np.array([0, 1])) == 1.0

    def test_constant_positive(self):
        assert equal_opportunity(np.ones(4), np.array([1, 1, 1, 0]), np.array([0, 1, 0, 1])) == 0.0

    def test_no_positives_in_group(self):
        with pytest.raises(UndefinedMetricError, match='s=1'):
            equal_opportunity(np.ones(4), np.array([1, 1, 0, 0]), np.array([0, 0, 1, 1]))


class TestEvaluate:
    def test_identical_embeddings_have_no_disparity(self, desk_sbm_spec):
        g = generate_sbm(desk_sbm_spec, seed=0)
        report = evaluate_embeddings(np.ones((g.n_nodes, 4)), g, fraction=0.5)
        assert report.n_splits == 3
        assert all(s.ok for s in report.splits)
        assert report.delta_sp.mean == 0.0
        assert report.delta_eo.mean == 0.0
        for s in report.splits:
            split = split_nodes(g.n_nodes, 0.5, s.seed)
            train_rate = g.labels[split.train_idx].mean()
            majority = 1 if train_rate >= 0.5 else 0
            assert s.accuracy == pytest.approx(np.mean(g.labels[split.test_idx] == majority))

    def test_deterministic_and_in_percent(self, small_sbm):
        h = np.random.default_rng(1).normal(size=(small_sbm.n_nodes, 5))
        a = evaluate_embeddings(h, small_sbm, fraction=0.5, seed=4)
        b = evaluate_embeddings(h, small_sbm, fraction=0.5, seed=4)
        assert a.to_dict() == b.to_dict()
        payload = a.to_dict()
        assert set(payload['Accuracy %']) == {'mean', 'std'}
        ok = [s for s in a.splits if s.ok]
        assert a.accuracy.mean == pytest.approx(100 * np.mean([s.accuracy for s in ok]))

    def test_failed_split_is_recorded(self, small_sbm):
        # a one-node test set always leaves one sensitive group empty
        report = evaluate_embeddings(np.zeros((small_sbm.n_nodes, 2)), small_sbm,
                                     fraction=1 - 1 / small_sbm.n_nodes)
        assert all(not s.ok for s in report.splits)
        assert np.isnan(report.accuracy.mean)

    def test_pipeline_checks_dimensions(self, small_sbm):
        params = glorot_init(EncoderDims(small_sbm.n_features + 1, 4, 4, 4, 4), 0)
        with pytest.raises(StructuralError):
            evaluate_pipeline(small_sbm, params)

    def test_pipeline_after_training(self, small_sbm):
        cfg = TrainConfig(epochs=2, hidden_dim=8, embedding_dim=8, proj_dim=8, log_every=0)
        params, _ = train(small_sbm, cfg)
        report = evaluate_pipeline(small_sbm, params, n_splits=2, fraction=0.5)
        assert report.n_splits == 2
        assert 0.0 <= report.accuracy.mean <= 100.0
