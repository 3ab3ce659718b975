"""Estimator wrapper: sklearn surface, fit/transform/score behavior."""

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

import oracles
from gradamp.data import SyntheticConfig, generate_dataset
from gradamp.errors import InputError, InvalidConfigError
from gradamp.estimator import ContrastiveEmbedder

DEMO_PARAMS = dict(
    hidden_widths=(32,), embed_dim=8, tau=0.05, alpha=20.0,
    batch_size=8, chunk_size=4, lr=2e-3, random_state=0,
)


def _demo_data():
    # Single-record classes: retrieval has to find each record's own target,
    # so the score is not capped by within-class index ties.
    ds = generate_dataset(
        SyntheticConfig(num_classes=16, input_dim=16, group_size=1, noise=1.0,
                        separation=4.0, records_per_class=1, seed=9)
    )
    return np.stack([ds.queries, ds.targets], axis=1), ds.labels


class TestSklearnSurface:
    def test_get_params_round_trips(self):
        est = ContrastiveEmbedder(tau=0.1, alpha=5.0, steps=7)
        params = est.get_params()
        assert params["tau"] == 0.1
        assert params["alpha"] == 5.0
        assert params["steps"] == 7
        est.set_params(tau=0.2)
        assert est.get_params()["tau"] == 0.2

    def test_clone_copies_parameters_without_state(self):
        X, y = _demo_data()
        est = ContrastiveEmbedder(steps=2, **DEMO_PARAMS).fit(X, y)
        copy = clone(est)
        assert copy.get_params() == est.get_params()
        assert not hasattr(copy, "params_")

    def test_transform_before_fit_rejected(self):
        with pytest.raises(NotFittedError):
            ContrastiveEmbedder().transform(np.zeros((3, 4)))

    def test_score_before_fit_rejected(self):
        with pytest.raises(NotFittedError):
            ContrastiveEmbedder().score(np.zeros((3, 4)))


@pytest.fixture(scope="module")
def fitted():
    X, y = _demo_data()
    est = ContrastiveEmbedder(steps=3, **DEMO_PARAMS).fit(X, y)
    return est, X, y


@pytest.fixture(scope="module")
def demo_runs():
    X, y = _demo_data()
    untrained = ContrastiveEmbedder(steps=0, **DEMO_PARAMS).fit(X, y)
    trained = ContrastiveEmbedder(steps=80, **DEMO_PARAMS).fit(X, y)
    return X, y, untrained, trained


class TestFitTransform:
    def test_fit_returns_self_and_sets_state(self, fitted):
        est, X, y = fitted
        assert est.n_features_in_ == 16
        assert len(est.loss_curve_) == 3
        assert all(np.isfinite(v) for v in est.loss_curve_)

    def test_transform_shape_and_unit_norm(self, fitted):
        est, X, _ = fitted
        emb = est.transform(X[:, 0])
        assert emb.shape == (16, 8)
        norms = np.linalg.norm(emb, axis=1)
        assert np.abs(norms - 1.0).max() <= 1e-12

    def test_transform_is_deterministic(self, fitted):
        est, X, _ = fitted
        assert np.array_equal(est.transform(X[:, 0]), est.transform(X[:, 0]))

    def test_fit_transform_matches_fit_then_transform(self):
        rng = np.random.default_rng(0)
        X = rng.standard_normal((10, 6))
        a = ContrastiveEmbedder(steps=2, **DEMO_PARAMS).fit_transform(X)
        b = ContrastiveEmbedder(steps=2, **DEMO_PARAMS).fit(X).transform(X)
        assert np.array_equal(a, b)

    def test_self_paired_rows_need_no_labels(self):
        rng = np.random.default_rng(1)
        X = rng.standard_normal((12, 5))
        est = ContrastiveEmbedder(steps=2, **DEMO_PARAMS).fit(X)
        assert est.transform(X).shape == (12, 8)

    def test_transform_feature_count_mismatch_rejected(self, fitted):
        est, _, _ = fitted
        with pytest.raises(InputError, match="features"):
            est.transform(np.zeros((4, 7)))

    def test_bad_pair_axis_rejected(self):
        with pytest.raises(InputError, match="shape"):
            ContrastiveEmbedder(steps=1).fit(np.zeros((6, 3, 4)))

    def test_bad_label_shape_rejected(self):
        X, _ = _demo_data()
        with pytest.raises(InputError, match="y must have shape"):
            ContrastiveEmbedder(steps=1).fit(X, y=np.zeros(3))

    def test_single_class_rejected(self):
        X, _ = _demo_data()
        with pytest.raises(InvalidConfigError, match="classes"):
            ContrastiveEmbedder(steps=1).fit(X, y=np.zeros(16))


class TestLearningDemo:
    def test_training_improves_retrieval(self, demo_runs):
        X, _, untrained, trained = demo_runs
        trained_score = trained.score(X)
        assert trained_score >= 0.99
        assert trained_score > untrained.score(X)

    def test_loss_curve_decreases(self, demo_runs):
        _, _, untrained, trained = demo_runs
        assert untrained.loss_curve_ == []
        assert len(trained.loss_curve_) == 80
        assert trained.loss_curve_[-1] < trained.loss_curve_[0]

    def test_score_matches_rank_oracle(self, demo_runs):
        X, _, _, trained = demo_runs
        q = trained.transform(X[:, 0])
        t = trained.transform(X[:, 1])
        ranks = oracles.brute_force_ranks(q @ t.T, np.arange(16))
        assert trained.score(X) == float((ranks == 1).mean())
