"""Temperature softmax, cross entropy, Adagrad, joint batch steps and the
epoch loop with early stopping."""

import math

import numpy as np
import pytest

from mose.config import RunConfig
from mose.errors import ConfigError, NumericError
from mose.kg import FilterIndex
from mose.store import init_params
from mose.trainer import (
    Adagrad,
    batch_step,
    ce_loss,
    fit,
    modality_loss_and_grads,
    softmax_with_temperature,
)


class TestSoftmaxWithTemperature:
    def test_frozen_two_point_value(self):
        """softmax([2, 0], T=2) = [e/(e+1), 1/(e+1)]."""
        probs = softmax_with_temperature(np.array([2.0, 0.0]), 2.0)
        e = math.e
        np.testing.assert_allclose(probs, [e / (e + 1), 1 / (e + 1)], rtol=1e-15)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(0)
        probs = softmax_with_temperature(rng.standard_normal((10, 7)), 4.0)
        np.testing.assert_allclose(probs.sum(axis=-1), 1.0, atol=1e-12)

    def test_large_scores_stay_finite(self):
        probs = softmax_with_temperature(np.array([1e6, 0.0, -1e6]), 0.5)
        assert np.all(np.isfinite(probs))
        assert probs[0] == pytest.approx(1.0)

    def test_nonpositive_temperature_rejected(self):
        for t in (0.0, -1.0):
            with pytest.raises(ConfigError):
                softmax_with_temperature(np.ones(3), t)


class TestCrossEntropy:
    def test_uniform_scores_give_log_n(self):
        """Equal scores over 4 candidates cost exactly ln 4."""
        loss, _ = ce_loss(np.zeros(4), gold=2)
        assert loss == pytest.approx(math.log(4.0), rel=1e-15)

    def test_gradient_is_scaled_probability_residual(self):
        rng = np.random.default_rng(1)
        scores = rng.standard_normal(6)
        temperature = 4.0
        _, grad = ce_loss(scores, gold=3, temperature=temperature)
        probs = softmax_with_temperature(scores, temperature)
        expected = probs.copy()
        expected[3] -= 1.0
        np.testing.assert_allclose(grad, expected / temperature, atol=1e-12)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(2)
        scores = rng.standard_normal(5)
        _, grad = ce_loss(scores, gold=1, temperature=2.0)
        h = 1e-6
        for j in range(5):
            bumped = scores.copy()
            bumped[j] += h
            plus, _ = ce_loss(bumped, gold=1, temperature=2.0)
            bumped[j] -= 2 * h
            minus, _ = ce_loss(bumped, gold=1, temperature=2.0)
            assert (plus - minus) / (2 * h) == pytest.approx(grad[j], rel=1e-6, abs=1e-10)

    def test_higher_temperature_softens_confidence(self):
        """For a correct prediction, raising T raises the loss toward the
        uniform bound while keeping the argmax."""
        scores = np.array([4.0, 1.0, 0.0])
        losses = [ce_loss(scores, gold=0, temperature=t)[0] for t in (0.5, 1.0, 4.0, 32.0)]
        assert losses == sorted(losses)
        assert losses[-1] < math.log(3.0)


class TestAdagrad:
    def test_two_steps_match_hand_computation(self):
        """acc accumulates g^2; update is lr * g / sqrt(acc + eps)."""
        opt = Adagrad(learning_rate=0.5, epsilon=0.0)
        theta = {"w": np.array([1.0, 1.0])}
        opt.step(theta, {"w": np.array([2.0, -1.0])})
        np.testing.assert_allclose(theta["w"], [0.5, 1.5], atol=1e-15)
        opt.step(theta, {"w": np.array([2.0, 0.5])})
        # acc = [8, 1.25]; update = 0.5 * [2, 0.5] / sqrt(acc)
        np.testing.assert_allclose(
            theta["w"],
            [0.5 - 1.0 / math.sqrt(8.0), 1.5 - 0.25 / math.sqrt(1.25)],
            atol=1e-15,
        )

    def test_accumulators_created_per_tensor(self):
        opt = Adagrad(learning_rate=0.1)
        theta = {"a": np.zeros(2), "b": np.zeros(3)}
        opt.step(theta, {"a": np.ones(2)})
        assert set(opt.accumulators) == {"a"}
        opt.step(theta, {"b": np.ones(3)})
        assert set(opt.accumulators) == {"a", "b"}

    def test_updates_happen_in_place(self):
        opt = Adagrad(learning_rate=0.1)
        array = np.ones(2)
        opt.step({"w": array}, {"w": np.ones(2)})
        assert array[0] != 1.0  # the caller's array itself moved


def tiny_setup(seed=0, n_entities=8, n_relations=2, dim=4, tie=False):
    rng = np.random.default_rng(seed)
    features = {
        "visual": rng.standard_normal((n_entities, 5)),
        "text": rng.standard_normal((n_entities, 6)),
    }
    model = init_params(seed=seed, dim=dim, n_entities=n_entities, n_relations=n_relations,
                        features=features, tie_relations=tie)
    triples = rng.integers(0, [n_entities, 2 * n_relations, n_entities], size=(12, 3))
    return model, triples.astype(np.int64)


class TestModalityLoss:
    def test_gradients_cover_all_trainables_of_the_modality(self):
        model, batch = tiny_setup()
        _, grads = modality_loss_and_grads(batch, model, "structure", temperature=1.0)
        assert set(grads) == {"structure.relations", "structure.entities"}
        _, grads = modality_loss_and_grads(batch, model, "visual", temperature=4.0)
        assert set(grads) == {"visual.relations", "visual.projection"}

    def test_tied_relations_share_one_gradient_key(self):
        model, batch = tiny_setup(tie=True)
        _, grads = modality_loss_and_grads(batch, model, "text", temperature=4.0)
        assert "relations" in grads and "text.relations" not in grads

    def test_loss_is_mean_of_per_query_ce(self):
        from mose.decoder import score_all

        model, batch = tiny_setup()
        loss, _ = modality_loss_and_grads(batch, model, "structure", temperature=1.0)
        emb = model["structure"].entity_embeddings()
        per_query = []
        for h, r, t in batch:
            scores = score_all(emb[[h]], model["structure"].relation_table[[r]], emb)[0]
            per_query.append(ce_loss(scores, int(t), temperature=1.0)[0])
        assert loss == pytest.approx(float(np.mean(per_query)), rel=1e-12)


class TestBatchStep:
    def test_losses_fall_over_repeated_steps(self):
        model, batch = tiny_setup()
        config = RunConfig(dim=4, learning_rate=0.5, temperature=4.0)
        optimizer = Adagrad(config.learning_rate)
        first = batch_step(batch, model, optimizer, config)
        for _ in range(30):
            last = batch_step(batch, model, optimizer, config)
        for modality in first:
            assert last[modality] < first[modality]

    def test_modality_subset_trains_only_that_subset(self):
        model, batch = tiny_setup()
        config = RunConfig(dim=4, learning_rate=0.5)
        before = {k: v.copy() for k, v in model.trainable().items()}
        batch_step(batch, model, Adagrad(0.5), config, loss_modalities=("visual",))
        after = model.trainable()
        assert not np.array_equal(before["visual.projection"], after["visual.projection"])
        np.testing.assert_array_equal(before["structure.entities"], after["structure.entities"])

    def test_tied_relation_tables_stay_bitwise_identical(self):
        model, batch = tiny_setup(tie=True)
        config = RunConfig(dim=4, learning_rate=0.5)
        optimizer = Adagrad(config.learning_rate)
        for _ in range(5):
            batch_step(batch, model, optimizer, config)
        assert model["structure"].relation_table is model["visual"].relation_table
        np.testing.assert_array_equal(
            model["structure"].relation_table.tobytes(),
            model["text"].relation_table.tobytes(),
        )

    def test_non_finite_loss_raises_numeric_error(self):
        model, batch = tiny_setup()
        model["structure"].entity_table[:] = 1e200
        with np.errstate(over="ignore", invalid="ignore"):
            with pytest.raises(NumericError):
                batch_step(batch, model, Adagrad(0.5), RunConfig(dim=4))


def augmented_split(rng, n_entities, n_relations, count):
    base = rng.integers(0, [n_entities, n_relations, n_entities], size=(count, 3))
    recip = np.stack([base[:, 2], base[:, 1] + n_relations, base[:, 0]], axis=1)
    return np.concatenate([base, recip]).astype(np.int64)


def filter_from(*splits):
    index = FilterIndex()
    for split in splits:
        for h, r, t in split:
            index.add(int(h), int(r), int(t))
    return index


class TestFit:
    def make_problem(self, seed=0):
        rng = np.random.default_rng(seed)
        n_entities, n_relations = 10, 2
        features = {
            "visual": rng.standard_normal((n_entities, 4)),
            "text": rng.standard_normal((n_entities, 4)),
        }
        train = augmented_split(rng, n_entities, n_relations, 20)
        valid = augmented_split(rng, n_entities, n_relations, 5)
        model = init_params(seed=seed, dim=4, n_entities=n_entities, n_relations=n_relations,
                            features=features)
        return train, valid, model, filter_from(train, valid)

    def test_early_stopping_bounds_epochs(self):
        """With patience p, training runs at most best_epoch + p + 1 epochs."""
        train, valid, model, index = self.make_problem()
        config = RunConfig(dim=4, max_epochs=50, patience=2, batch_size=16, learning_rate=0.1)
        result = fit(train, valid, model, config, index)
        assert len(result.log) <= result.best_epoch + config.patience + 2
        assert result.best_hits10 == max(r.valid_hits10 for r in result.log)

    def test_identical_seeds_identical_training(self):
        """Same seed and config: bitwise-equal parameters and equal logs
        (wall-clock seconds aside)."""
        runs = []
        for _ in range(2):
            train, valid, model, index = self.make_problem(seed=3)
            config = RunConfig(seed=3, dim=4, max_epochs=5, patience=10, batch_size=8)
            runs.append(fit(train, valid, model, config, index))
        a, b = runs
        for name, array in a.params.trainable().items():
            np.testing.assert_array_equal(array, b.params.trainable()[name])
        log_a = [(r.epoch, r.losses, r.valid_hits10) for r in a.log]
        log_b = [(r.epoch, r.losses, r.valid_hits10) for r in b.log]
        assert log_a == log_b
        assert a.rng_state == b.rng_state

    def test_best_params_snapshot_not_final(self):
        """The returned parameters are the best-on-validation snapshot, so
        later non-improving epochs must not leak into them."""
        train, valid, model, index = self.make_problem(seed=1)
        config = RunConfig(seed=1, dim=4, max_epochs=8, patience=8, batch_size=8)
        result = fit(train, valid, model, config, index)
        if result.best_epoch < len(result.log) - 1:
            assert not all(
                np.array_equal(array, result.params.trainable()[name])
                for name, array in model.trainable().items()
            )

    def test_empty_validation_rejected(self):
        train, valid, model, index = self.make_problem()
        with pytest.raises(ConfigError):
            fit(train, np.empty((0, 3), dtype=np.int64), model, RunConfig(dim=4), index)

    def test_log_records_per_modality_losses(self):
        train, valid, model, index = self.make_problem()
        config = RunConfig(dim=4, max_epochs=2, patience=5, batch_size=8)
        result = fit(train, valid, model, config, index)
        row = result.log[0].to_json_dict()
        assert {"epoch", "loss_structure", "loss_visual", "loss_text",
                "valid_hits10", "seconds"} <= set(row)
