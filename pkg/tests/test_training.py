import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from edgesleep.epochs import standardize
from edgesleep.model import ArchConfig, init_params, forward
from edgesleep.training import (
    AdamState,
    TrainConfig,
    TrainingError,
    adam_step,
    backprop,
    batch_gradients,
    cross_entropy,
    evaluate_epochs,
    fit,
    make_folds,
    split_train_val,
    train_fold,
)

from conftest import make_synth_epochs


class TestCrossEntropy:
    def test_uniform(self):
        assert cross_entropy(np.full(5, 0.2), 3) == pytest.approx(np.log(5))

    def test_certain_correct(self):
        assert cross_entropy(np.array([1.0, 0, 0, 0, 0]), 0) == 0.0

    def test_quarter_probability(self):
        probs = np.array([0.5, 0.25, 0.25, 0.0, 0.0])
        assert cross_entropy(probs, 1) == pytest.approx(np.log(4))

    def test_floor_prevents_infinity(self):
        loss = cross_entropy(np.array([1.0, 0.0, 0, 0, 0]), 1)
        assert loss == pytest.approx(-np.log(1e-12))


def tiny_params(value_map):
    from edgesleep.model import ModelParams

    return ModelParams({k: np.array(v, dtype=np.float64) for k, v in value_map.items()})


class TestAdam:
    def test_first_step_is_signed_learning_rate(self):
        tc = TrainConfig(learning_rate=1e-3)
        params = tiny_params({"w": [1.0, -2.0, 3.0]})
        grads = {"w": np.array([0.5, -4.0, 100.0])}
        state = AdamState.zeros_like(params)
        updated, state = adam_step(params, grads, state, tc)
        np.testing.assert_allclose(
            updated["w"] - params["w"], -1e-3 * np.sign(grads["w"]), rtol=1e-4
        )
        assert state.t == 1

    def test_zero_gradient_is_identity(self):
        tc = TrainConfig()
        params = tiny_params({"w": [1.0, 2.0]})
        state = AdamState.zeros_like(params)
        updated, _ = adam_step(params, {"w": np.zeros(2)}, state, tc)
        np.testing.assert_array_equal(updated["w"], params["w"])

    def test_trajectory_determinism(self):
        tc = TrainConfig(learning_rate=0.01)
        rng = np.random.default_rng(0)
        grad_seq = [rng.normal(size=3) for _ in range(10)]

        def run():
            params = tiny_params({"w": [0.3, -0.7, 1.1]})
            state = AdamState.zeros_like(params)
            for g in grad_seq:
                params, state = adam_step(params, {"w": g}, state, tc)
            return params["w"]

        assert np.array_equal(run(), run())

    def test_moments_follow_definitions(self):
        tc = TrainConfig()
        params = tiny_params({"w": [0.0]})
        g = np.array([2.0])
        _, state = adam_step(params, {"w": g}, AdamState.zeros_like(params), tc)
        np.testing.assert_allclose(state.m["w"], (1 - tc.beta1) * g)
        np.testing.assert_allclose(state.v["w"], (1 - tc.beta2) * g * g)


class TestBackprop:
    def setup_method(self):
        self.config = ArchConfig(width_multiplier=0.25)
        self.params = init_params(self.config, 13)
        rng = np.random.default_rng(14)
        self.x = standardize(rng.normal(size=3000))

    def test_missing_cache_rejected(self):
        with pytest.raises(TrainingError, match="cache"):
            backprop(self.params, self.config, None, 0)

    def test_gradient_shapes_mirror_params(self):
        _, cache = forward(self.params, self.x, self.config, mode="train")
        grads = backprop(self.params, self.config, cache, 2)
        assert set(grads) == set(self.params.names())
        for name in grads:
            assert grads[name].shape == self.params[name].shape

    def test_confident_correct_prediction_has_tiny_gradient(self):
        params = self.params.copy()
        params.tensors["cls_b"] = np.array([50.0, 0.0, 0.0, 0.0, 0.0])
        probs, cache = forward(params, self.x, self.config, mode="train")
        assert probs[0] > 1 - 1e-12
        grads = backprop(params, self.config, cache, 0)
        norm = np.sqrt(sum(float((g**2).sum()) for g in grads.values()))
        assert norm < 1e-6

    def test_batch_gradient_is_mean_of_per_sample(self):
        epochs = make_synth_epochs(3, seed=15)
        xs = [standardize(e.samples) for e in epochs]
        ys = np.array([int(e.stage) for e in epochs])
        batch, _ = batch_gradients(self.params, self.config, xs, ys)
        singles = []
        for x, y in zip(xs, ys):
            _, cache = forward(self.params, x, self.config, mode="train")
            singles.append(backprop(self.params, self.config, cache, y))
        for name in batch:
            mean = (singles[0][name] + singles[1][name] + singles[2][name]) / 3.0
            np.testing.assert_allclose(batch[name], mean, atol=1e-12)


class TestFolds:
    def test_77_subjects_chunk_into_16s_and_a_13(self):
        plan = make_folds(list(range(77)), k=5, seed=1)
        assert sorted(len(f) for f in plan.folds) == [13, 16, 16, 16, 16]
        assert [len(f) for f in plan.folds][:4] == [16, 16, 16, 16]

    def test_even_split(self):
        plan = make_folds(list(range(10)), k=5, seed=2)
        assert [len(f) for f in plan.folds] == [2, 2, 2, 2, 2]

    def test_too_many_folds(self):
        with pytest.raises(TrainingError):
            make_folds([1, 2, 3], k=5)

    @given(n=st.integers(1, 60), k=st.integers(1, 8), seed=st.integers(0, 1000))
    @settings(max_examples=60, deadline=None)
    def test_partition_property(self, n, k, seed):
        if k > n:
            return
        ids = list(range(100, 100 + n))
        plan = make_folds(ids, k=k, seed=seed)
        combined = [s for fold in plan.folds for s in fold]
        assert sorted(combined) == sorted(ids)
        assert len(plan.folds) == k
        assert all(fold for fold in plan.folds)


class TestSplitAndFit:
    def test_validation_size_is_rounded_tenth(self):
        pool = make_synth_epochs(87, seed=16)
        train, val = split_train_val(pool, TrainConfig(seed=4))
        assert len(val) == round(0.10 * 87)
        assert len(train) + len(val) == 87

    def test_split_disjoint_and_deterministic(self):
        pool = make_synth_epochs(40, seed=17)
        t1, v1 = split_train_val(pool, TrainConfig(seed=5))
        t2, v2 = split_train_val(pool, TrainConfig(seed=5))
        assert [e.epoch_index for e in t1] == [e.epoch_index for e in t2]
        assert [e.epoch_index for e in v1] == [e.epoch_index for e in v2]
        assert {e.epoch_index for e in t1}.isdisjoint({e.epoch_index for e in v1})

    def test_fit_history_and_determinism(self):
        config = ArchConfig(width_multiplier=0.25)
        data = make_synth_epochs(24, seed=18)
        tc = TrainConfig(max_epochs=2, batch_size=8, seed=6)

        def run():
            return fit(init_params(config, 6), config, data, data, tc)

        p1, h1 = run()
        p2, h2 = run()
        assert h1 == h2
        assert len(h1) == 2
        assert all(np.array_equal(p1[n], p2[n]) for n in p1.names())

    def test_loss_decreases_on_separable_data(self):
        config = ArchConfig(width_multiplier=0.25)
        data = make_synth_epochs(30, seed=19)
        tc = TrainConfig(max_epochs=4, batch_size=10, seed=7)
        _, history = fit(init_params(config, 7), config, data, [], tc)
        assert history[-1].train_loss < history[0].train_loss

    def test_train_fold_excludes_test_subjects(self):
        epochs = []
        for subject in range(4):
            epochs.extend(
                make_synth_epochs(10, seed=20 + subject, subject_id=subject)
            )
        config = ArchConfig(width_multiplier=0.25)
        tc = TrainConfig(max_epochs=1, batch_size=8, seed=8)
        params, history = train_fold(epochs, {3}, config, tc)
        assert len(history) == 1
        pool = [e for e in epochs if e.subject_id != 3]
        train, val = split_train_val(pool, tc)
        assert len(val) == round(0.10 * len(pool))
        assert all(e.subject_id != 3 for e in train + val)

    def test_empty_training_pool_rejected(self):
        epochs = make_synth_epochs(5, seed=25, subject_id=1)
        with pytest.raises(TrainingError):
            train_fold(epochs, {1}, ArchConfig(width_multiplier=0.25), TrainConfig())
