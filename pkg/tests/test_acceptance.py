"""Acceptance gate for the engine: one test per release criterion.

Each test is self-contained, seeded, and asserts the stated tolerance;
the pytest -v lines double as the release checklist. Everything runs on
synthetic desk-scale data — no network, no external datasets.
"""

import json
import time

import numpy as np
import pytest

from mose.cli import main
from mose.config import RunConfig
from mose.decoder import score, score_all
from mose.ensemble import (
    init_metalearner,
    metalearner_query_loss_and_grads,
    rankboost_fit_relation,
    rankboost_round_weight,
)
from mose.evaluator import evaluate, filtered_rank
from mose.kg import augment_reciprocals, build_filter_index, load_store
from mose.store import init_params, load_feature_file
from mose.synth import TEXT_RELATION, VISUAL_RELATION, generate_random_kg
from mose.trainer import (
    Adagrad,
    batch_step,
    fit,
    modality_loss_and_grads,
    softmax_with_temperature,
)


def central_difference(fn, array, step=1e-6):
    """Central finite differences of a scalar function over every
    coordinate of `array`, evaluated in float64."""
    grad = np.zeros_like(array, dtype=np.float64)
    flat = array.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + step
        up = fn()
        flat[i] = keep - step
        down = fn()
        flat[i] = keep
        out[i] = (up - down) / (2.0 * step)
    return grad


def relative_error(analytic, numeric):
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), 1e-8)
    return np.max(np.abs(analytic - numeric)) / scale


def tiny_model(seed, n_entities=9, n_relations=2, dim=3, feat_dim=4):
    """A small three-modality parameter set with random frozen features."""
    rng = np.random.default_rng(seed)
    features = {
        "visual": rng.standard_normal((n_entities, feat_dim)),
        "text": rng.standard_normal((n_entities, feat_dim)),
    }
    model = init_params(seed=seed, dim=dim, n_entities=n_entities,
                        n_relations=n_relations, features=features)
    # Perturb away from the tiny init so ReLU/softmax regions are generic.
    for params in model.trainable().values():
        params += rng.standard_normal(params.shape) * 0.3
    return model, rng


def random_batch(rng, n_entities, n_relations, size=5):
    return np.stack([
        rng.integers(0, n_entities, size),
        rng.integers(0, 2 * n_relations, size),
        rng.integers(0, n_entities, size),
    ], axis=1).astype(np.int64)


class TestGradientSuite:
    def test_full_loss_gradients_match_finite_differences_on_50_seeded_instances(self):
        """Analytic gradients of the complete per-modality loss (decoder ->
        temperature softmax -> CE, including projection matrices) and of
        the meta-learner MLP match central differences, rel. err < 1e-4,
        float64, over 50 seeded instances, in under 30 s."""
        start = time.time()
        modalities = ("structure", "visual", "text")
        for instance in range(50):
            model, rng = tiny_model(seed=100 + instance)
            modality = modalities[instance % 3]
            temperature = (0.5, 1.0, 2.0, 4.0)[instance % 4]
            n3_weight = 0.01 if instance % 2 else 0.0
            batch = random_batch(rng, n_entities=9, n_relations=2)

            _, grads = modality_loss_and_grads(batch, model, modality, temperature, n3_weight)

            def loss_value():
                value, _ = modality_loss_and_grads(batch, model, modality, temperature, n3_weight)
                return value

            trainable = model.trainable()
            for key, grad in grads.items():
                numeric = central_difference(loss_value, trainable[key])
                assert relative_error(grad, numeric) < 1e-4, (instance, key)

            # Meta-learner MLP: CE over candidates of one query.
            mlp = init_metalearner(seed=200 + instance, n_modalities=3, hidden=4,
                                   score_mean=np.zeros(3), score_std=np.ones(3),
                                   modalities=modalities)
            inputs = rng.standard_normal((7, 3))
            gold = int(rng.integers(0, 7))
            _, mlp_grads = metalearner_query_loss_and_grads(inputs, gold, mlp)

            def mlp_loss():
                value, _ = metalearner_query_loss_and_grads(inputs, gold, mlp)
                return value

            for key in ("w1", "b1", "w2", "b2"):
                numeric = central_difference(mlp_loss, getattr(mlp, key))
                assert relative_error(mlp_grads[key], numeric) < 1e-4, (instance, key)
        assert time.time() - start < 30.0


class TestRankingOracle:
    def test_filtered_ranks_equal_bruteforce_sort_oracle_on_1000_queries(self, tmp_path):
        """Filtered ranks computed by the evaluator equal a brute-force
        sort oracle, exactly, for 1000 seeded queries over a 20-entity KG."""
        out = generate_random_kg(tmp_path / "kg", seed=11, n_entities=20,
                                 n_relations=3, n_triples=120)
        store, vocab = load_store(out)
        aug = augment_reciprocals(store, vocab)
        index = build_filter_index(aug)
        n = vocab.n_entities
        rng = np.random.default_rng(11)
        pairs = sorted(index._tails)
        for _ in range(1000):
            head, relation = pairs[int(rng.integers(0, len(pairs)))]
            filter_set = index.tails(head, relation)
            gold = sorted(filter_set)[int(rng.integers(0, len(filter_set)))]
            scores = np.round(rng.standard_normal(n), 2)  # coarse grid forces ties

            got = filtered_rank(scores, gold, filter_set)

            competitors = [scores[e] for e in range(n) if e == gold or e not in filter_set]
            competitors.sort(reverse=True)
            expected = 1 + sum(1 for s in competitors if s > scores[gold])
            assert got == expected

    def test_batched_decoder_equals_scalar_loop_oracle_below_1e_12(self):
        """Batched bilinear scores match a pure-Python scalar loop."""
        rng = np.random.default_rng(5)
        d, n = 6, 12
        entities = rng.standard_normal((n, 2 * d))
        relations = rng.standard_normal((4, 2 * d))
        heads = rng.integers(0, n, 40)
        rels = rng.integers(0, 4, 40)
        batched = score_all(entities[heads], relations[rels], entities)
        for row, (h, r) in enumerate(zip(heads, rels)):
            for t in range(n):
                hv, rv, tv = entities[h], relations[r], entities[t]
                expected = sum(
                    (hv[j] * rv[j] - hv[d + j] * rv[d + j]) * tv[j]
                    + (hv[j] * rv[d + j] + hv[d + j] * rv[j]) * tv[d + j]
                    for j in range(d)
                )
                assert abs(batched[row, t] - expected) < 1e-12
                assert abs(score(hv, rv, tv) - expected) < 1e-12


class TestTemperatureInvariants:
    def test_argmax_temperature_invariant_and_entropy_nondecreasing_on_500_vectors(self):
        """For T in {0.5,1,2,4,8,16,32}: per-query argmax of the calibrated
        distribution never moves, and entropy is nondecreasing in T."""
        rng = np.random.default_rng(17)
        grid = (0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0)
        scores = rng.standard_normal((500, 40)) * 3.0
        base_argmax = np.argmax(scores, axis=1)
        previous_entropy = None
        for temperature in grid:
            probs = softmax_with_temperature(scores, temperature)
            assert np.array_equal(np.argmax(probs, axis=1), base_argmax)
            entropy = -np.sum(probs * np.log(probs + 1e-300), axis=1)
            if previous_entropy is not None:
                assert np.all(entropy >= previous_entropy)
            previous_entropy = entropy


class TestMemorizationBenchmark:
    def test_structure_modality_memorizes_training_set_within_200_epochs(self, tmp_path):
        """Random 50-entity/5-relation/300-triple KG at seed 7, d=32:
        structure-modality training-set Hits@1 >= 0.95 inside 200 epochs
        and 60 s."""
        start = time.time()
        out = generate_random_kg(tmp_path / "kg", seed=7)
        store, vocab = load_store(out)
        aug = augment_reciprocals(store, vocab)
        index = build_filter_index(aug)
        features = {m: load_feature_file(out / f"{m}.msef") for m in ("visual", "text")}
        train = np.asarray(aug.train, dtype=np.int64)
        valid = np.asarray(aug.valid, dtype=np.int64)
        config = RunConfig(seed=7, dim=32, learning_rate=0.5, batch_size=128,
                           max_epochs=200, patience=200, temperature=4.0)
        model = init_params(seed=7, dim=32, n_entities=vocab.n_entities,
                            n_relations=vocab.n_relations, features=features)
        fit(train, valid, model, config, index)
        report = evaluate(train, model, "single:structure", index)
        assert report.hits1 >= 0.95
        assert time.time() - start < 60.0


class TestComplementaryBenchmark:
    def run_pipeline(self, root):
        """synth complementary --seed 7 -> ingest -> train -> both
        ensembles -> evaluate everything -> export weights; returns the
        metrics and weight artifacts."""
        data, run = root / "data", root / "run"
        assert main(["synth", "complementary", "--seed", "7", "--out", str(data)]) == 0
        assert main(["ingest", "--data", str(data), "--out", str(run)]) == 0
        assert main([
            "train", "--run", str(run), "--seed", "7", "--dim", "8",
            "--learning-rate", "0.1", "--batch-size", "64", "--temperature", "2.0",
            "--max-epochs", "100", "--patience", "100",
        ]) == 0
        assert main(["fit-ensemble", "--run", str(run), "--method", "bi"]) == 0
        assert main(["fit-ensemble", "--run", str(run), "--method", "mi"]) == 0
        for mode in ("single:structure", "single:visual", "single:text", "bi", "mi"):
            assert main(["evaluate", "--run", str(run), "--inference", mode,
                         "--split", "test"]) == 0
        assert main(["export-weights", "--run", str(run)]) == 0
        metrics = json.loads((run / "metrics.json").read_text())
        weights = (run / "weights.tsv").read_text()
        return metrics, weights

    def test_bi_and_mi_each_beat_every_single_modality_on_held_out_queries(
            self, tmp_path, capsys):
        metrics, weights = self.run_pipeline(tmp_path)
        hits1 = {mode: metrics[mode]["metrics"]["hits1"] for mode in metrics}
        best_single = max(hits1["single:structure"], hits1["single:visual"],
                          hits1["single:text"])
        assert hits1["bi"] >= best_single
        assert hits1["mi"] >= best_single

        header, *rows = [line.split("\t") for line in weights.strip().splitlines()]
        assert header == ["relation_name", "w_structure", "w_visual", "w_text"]
        by_relation = {row[0]: np.asarray(row[1:], dtype=np.float64) for row in rows}
        columns = ("structure", "visual", "text")
        assert columns[int(np.argmax(by_relation[VISUAL_RELATION]))] == "visual"
        assert columns[int(np.argmax(by_relation[TEXT_RELATION]))] == "text"

    def test_benchmark_is_deterministic_under_the_fixed_seed(self, tmp_path, capsys):
        first, weights_a = self.run_pipeline(tmp_path / "a")
        second, weights_b = self.run_pipeline(tmp_path / "b")
        assert first == second
        assert weights_a == weights_b


class TestRankBoostInvariants:
    def test_pair_distribution_sums_to_one_after_every_round(self):
        rng = np.random.default_rng(23)
        correct = rng.random((3, 400)) < 0.6
        _, rounds = rankboost_fit_relation(correct, epsilon=1e-10)
        assert len(rounds) == 3
        for record in rounds:
            assert abs(float(record.dist.sum()) - 1.0) <= 1e-9

    def test_candidate_weight_is_half_ln_3_on_the_3_of_4_fixture(self):
        dist = np.full(4, 0.25)
        indicator = np.array([True, True, True, False])
        weight = rankboost_round_weight(dist, indicator, epsilon=1e-10)
        assert abs(weight - 0.5 * np.log(3.0)) <= 1e-9

    def test_each_modality_selected_exactly_once_per_relation(self):
        rng = np.random.default_rng(29)
        correct = rng.random((3, 50)) < 0.5
        _, rounds = rankboost_fit_relation(correct, epsilon=1e-10)
        assert sorted(record.modality for record in rounds) == [0, 1, 2]

    def test_tied_relation_tables_stay_bitwise_identical_through_training(self):
        rng = np.random.default_rng(31)
        features = {
            "visual": rng.standard_normal((12, 5)),
            "text": rng.standard_normal((12, 5)),
        }
        model = init_params(seed=3, dim=4, n_entities=12, n_relations=2,
                            features=features, tie_relations=True)
        config = RunConfig(seed=3, dim=4, learning_rate=0.1, batch_size=8,
                           max_epochs=1, temperature=2.0, tie_relations=True)
        optimizer = Adagrad(learning_rate=config.learning_rate)
        for step in range(10):
            batch = random_batch(rng, n_entities=12, n_relations=2, size=8)
            batch_step(batch, model, optimizer, config)
        tables = [model[m].relation_table for m in model.modality_names]
        reference = tables[0].tobytes()
        assert all(table.tobytes() == reference for table in tables[1:])


class TestEndToEndDeterminism:
    def test_two_identical_runs_produce_identical_metrics_json(self, tmp_path, capsys):
        def one_run(root):
            data, run = root / "data", root / "run"
            assert main(["synth", "random", "--seed", "7", "--out", str(data)]) == 0
            assert main(["ingest", "--data", str(data), "--out", str(run)]) == 0
            assert main([
                "train", "--run", str(run), "--seed", "7", "--dim", "16",
                "--learning-rate", "0.5", "--batch-size", "128",
                "--max-epochs", "20", "--patience", "20",
            ]) == 0
            assert main(["fit-ensemble", "--run", str(run), "--method", "bi"]) == 0
            assert main(["fit-ensemble", "--run", str(run), "--method", "mi"]) == 0
            for mode in ("ai", "bi", "mi", "single:structure"):
                assert main(["evaluate", "--run", str(run), "--inference", mode]) == 0
            return (run / "metrics.json").read_bytes()

        assert one_run(tmp_path / "a") == one_run(tmp_path / "b")
