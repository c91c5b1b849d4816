import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mtdfl import flengine as fl
from mtdfl.errors import AggregationError

LAYOUT_1D = ((1, 1, "identity"),)


def params_1d(w, b=0.0):
    return fl.ModelParams(np.array([w, b]), LAYOUT_1D)


def toy_shard(rng, n=64, width=4, sep=4.0):
    y = rng.integers(0, 2, size=n)
    mu = sep / np.sqrt(width)
    x = rng.normal(size=(n, width)) + np.where(y[:, None] == 1, mu, -mu)
    return fl.DeviceShard(device_id=0, x=x, y=y)


class TestModelParams:
    def test_roundtrip_through_net(self):
        rng = np.random.default_rng(0)
        params = fl.init_task_model(rng, feature_width=4, hidden_width=3)
        back = fl.ModelParams.from_net(params.to_net())
        assert np.allclose(back.vector, params.vector)
        assert back.layout == params.layout

    def test_length_mismatch_rejected(self):
        with pytest.raises(AggregationError):
            fl.ModelParams(np.zeros(3), LAYOUT_1D)

    def test_size_counts_every_parameter(self):
        params = fl.init_task_model(np.random.default_rng(0), 16, 16)
        assert params.size == 16 * 16 + 16 + 16 * 2 + 2


class TestAggregation:
    def test_equal_counts_plain_mean(self):
        merged, total = fl.aggregate_partial([(params_1d(1.0), 5), (params_1d(3.0), 5)])
        assert merged.vector[0] == pytest.approx(2.0)
        assert total == 10

    def test_weighted_mean(self):
        merged, total = fl.aggregate_partial([(params_1d(1.0), 1), (params_1d(4.0), 3)])
        assert merged.vector[0] == pytest.approx(3.25)
        assert total == 4

    def test_single_upload_identity(self):
        merged, _ = fl.aggregate_partial([(params_1d(2.5), 7)])
        assert merged.vector[0] == pytest.approx(2.5)

    def test_global_of_equal_partials(self):
        p = params_1d(1.25)
        out = fl.aggregate_global([(p, 3), (p.copy(), 9)])
        assert np.allclose(out.vector, p.vector)

    def test_all_equal_uploads_exact(self):
        p = params_1d(0.75, -0.2)
        merged, _ = fl.aggregate_partial([(p.copy(), 2), (p.copy(), 9), (p.copy(), 1)])
        assert np.array_equal(merged.vector, p.vector)

    def test_shape_mismatch_rejected(self):
        other = fl.ModelParams(np.zeros(4), ((1, 1, "identity"), (1, 1, "identity")))
        with pytest.raises(AggregationError):
            fl.aggregate_partial([(params_1d(1.0), 1), (other, 1)])

    def test_hierarchical_equals_flat_weighted_mean(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            n = int(rng.integers(1, 21))
            uploads = [
                (fl.ModelParams(rng.normal(size=2), LAYOUT_1D), int(rng.integers(1, 500)))
                for _ in range(n)
            ]
            groups = int(rng.integers(1, 5))
            labels = rng.integers(0, groups, size=n)
            partials = []
            for g in range(groups):
                members = [uploads[i] for i in range(n) if labels[i] == g]
                if members:
                    partials.append(fl.aggregate_partial(members))
            two_tier = fl.aggregate_global(partials)
            weights = np.array([c for _, c in uploads], dtype=float)
            stacked = np.stack([m.vector for m, _ in uploads])
            flat = (weights[:, None] * stacked).sum(axis=0) / weights.sum()
            assert np.allclose(two_tier.vector, flat, rtol=1e-12, atol=1e-12)

    @given(st.permutations(list(range(6))))
    @settings(max_examples=30)
    def test_permutation_invariance(self, order):
        rng = np.random.default_rng(9)
        uploads = [
            (fl.ModelParams(rng.normal(size=2), LAYOUT_1D), int(rng.integers(1, 9)))
            for _ in range(6)
        ]
        base, _ = fl.aggregate_partial(uploads)
        shuffled, _ = fl.aggregate_partial([uploads[i] for i in order])
        assert np.allclose(base.vector, shuffled.vector, atol=1e-12)

    def test_unweighted_mode_two_tier_matches_flat_mean(self):
        rng = np.random.default_rng(5)
        uploads = [
            (fl.ModelParams(rng.normal(size=2), LAYOUT_1D), int(rng.integers(1, 50)))
            for _ in range(7)
        ]
        p1 = fl.aggregate_partial(uploads[:3], weighted=False)
        p2 = fl.aggregate_partial(uploads[3:], weighted=False)
        two_tier = fl.aggregate_global([p1, p2])
        flat = np.stack([m.vector for m, _ in uploads]).mean(axis=0)
        assert np.allclose(two_tier.vector, flat, atol=1e-12)


class TestLocalTrain:
    def test_zero_epochs_passthrough(self):
        rng = np.random.default_rng(1)
        shard = toy_shard(rng)
        start = fl.init_task_model(rng, 4, 3)
        out, loss = fl.local_train(start, shard, epochs=0, rng=rng)
        assert np.array_equal(out.vector, start.vector)
        assert loss > 0

    def test_training_reduces_loss_on_separable_data(self):
        rng = np.random.default_rng(2)
        shard = toy_shard(rng, n=128)
        start = fl.init_task_model(np.random.default_rng(7), 4, 6)
        _, loss1 = fl.local_train(start, shard, epochs=1, rng=np.random.default_rng(0))
        _, loss5 = fl.local_train(start, shard, epochs=5, rng=np.random.default_rng(0))
        assert loss5 < loss1

    def test_already_fit_data_changes_nothing_much(self):
        # A model that is exactly right on one-hot targets has zero CE gradient
        # only in the saturated limit; use mse and a constant-label shard to
        # verify the zero-gradient fixed point instead.
        shard = fl.DeviceShard(0, np.zeros((8, 1)), np.zeros(8, dtype=int))
        # identity layer mapping to probabilities (1, 0) via fixed bias,
        # softmax([30, -30]) is numerically (1, 0).
        layout = ((1, 2, "softmax"),)
        params = fl.ModelParams(np.array([0.0, 0.0, 30.0, -30.0]), layout)
        out, loss = fl.local_train(
            params, shard, epochs=3, rng=np.random.default_rng(0), loss="mse"
        )
        assert loss == pytest.approx(0.0, abs=1e-12)
        assert np.allclose(out.vector, params.vector)

    def test_empty_shard_rejected(self):
        with pytest.raises(AggregationError):
            fl.local_train(
                fl.init_task_model(np.random.default_rng(0), 4, 3),
                fl.DeviceShard(0, np.zeros((0, 4)), np.zeros(0, dtype=int)),
                epochs=1,
                rng=np.random.default_rng(0),
            )


class TestEvaluate:
    def test_majority_class_model(self):
        # Predicting class 0 always on a 70/30 split scores 0.7.
        layout = ((1, 2, "identity"),)
        params = fl.ModelParams(np.array([0.0, 0.0, 1.0, 0.0]), layout)
        y = np.array([0] * 70 + [1] * 30)
        test = fl.DeviceShard(0, np.zeros((100, 1)), y)
        acc, _ = fl.evaluate(params, test)
        assert acc == pytest.approx(0.7)

    def test_perfect_model(self):
        rng = np.random.default_rng(4)
        shard = toy_shard(rng, n=256, sep=8.0)
        start = fl.init_task_model(np.random.default_rng(1), 4, 8)
        trained, _ = fl.local_train(
            start, shard, epochs=30, rng=np.random.default_rng(0), learning_rate=0.2
        )
        acc, _ = fl.evaluate(trained, shard)
        assert acc >= 0.99

    def test_accuracy_range(self):
        rng = np.random.default_rng(5)
        params = fl.init_task_model(rng, 4, 3)
        acc, _ = fl.evaluate(params, toy_shard(rng))
        assert 0.0 <= acc <= 1.0


class TestLabelFlow:
    def test_paper_threshold_cases(self):
        assert fl.label_flow([True] * 8 + [False] * 2, 0.7) is True
        assert fl.label_flow([True] * 7 + [False] * 3, 0.7) is False
        assert fl.label_flow([False] * 10, 0.7) is False

    def test_empty_flow_rejected(self):
        with pytest.raises(AggregationError):
            fl.label_flow([], 0.7)
