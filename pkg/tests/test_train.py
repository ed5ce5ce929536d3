import csv
import re
import statistics
from dataclasses import replace

import numpy as np
import pytest

from conftest import CONFIGS
from valdnet import ops
from valdnet.config import ModelConfig, TrainConfig, load_config
from valdnet.errors import DataError, DimensionError, MissingWeightsError
from valdnet.loader import EstimatedFlowSource, SampleTensors, load_sample
from valdnet.model import bce_loss, init_model_weights, valdnet_forward
from valdnet.probes import flow_threshold_accuracy, pixel_probe_accuracy
from valdnet.synthetic import generate_synthetic, split_dataset
from valdnet.tensor import Tape, Tensor, backward
from valdnet.train import (METRICS_FILE, VARIANTS_FILE, WEIGHTS_FILE, RMSprop, evaluate, evaluate_tensors,
                           rmsprop_step, run_variants, train)
from valdnet.types.metrics import METRICS_HEADER
from valdnet.weights import WeightStore


class TestRMSpropStep:
    def test_first_step(self):
        param, accumulator = rmsprop_step(np.zeros(1), np.ones(1), np.zeros(1))
        assert accumulator[0] == pytest.approx(0.1)
        assert param[0] == pytest.approx(-0.00316228, abs=1e-8)

    def test_zero_gradient_only_decays(self):
        param, accumulator = rmsprop_step(np.full(2, 3.0), np.zeros(2), np.full(2, 0.5))
        np.testing.assert_array_equal(param, [3.0, 3.0])
        np.testing.assert_allclose(accumulator, [0.45, 0.45])

    def test_zero_learning_rate(self, rng):
        start = rng.normal(size=(3, 3))
        param, _ = rmsprop_step(start, rng.normal(size=(3, 3)), np.zeros((3, 3)), lr=0.0)
        np.testing.assert_array_equal(param, start)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            rmsprop_step(np.zeros(2), np.zeros(3), np.zeros(2))


class TestRMSprop:
    def test_untouched_parameters_stay_put(self):
        weights = WeightStore({"used": Tensor(np.array([1.0, 2.0])), "unused": Tensor(np.array([5.0]))}).trainable()
        with Tape() as tape:
            loss = ops.sum(ops.mul(weights["used"], weights["used"]))
        backward(tape, loss)
        updated = RMSprop().step(weights)
        np.testing.assert_array_equal(updated["unused"].data, [5.0])
        assert np.all(updated["used"].data < [1.0, 2.0])
        assert updated["used"].requires_grad

    def test_small_step_lowers_the_loss(self, synthetic_dataset, micro_config):
        manifest, _ = synthetic_dataset
        sample = load_sample(manifest.samples[0], micro_config, EstimatedFlowSource())
        weights = init_model_weights(micro_config, np.random.default_rng(5)).trainable()

        with Tape() as tape:
            before = bce_loss(valdnet_forward(sample.frames, sample.flows, micro_config, weights), sample.label)
        backward(tape, before)
        weights = RMSprop(learning_rate=1e-5).step(weights)
        after = bce_loss(valdnet_forward(sample.frames, sample.flows, micro_config, weights), sample.label)
        assert after.item() < before.item()


def constant_inputs(micro_config, labels: list[int]) -> list[SampleTensors]:
    size = micro_config.input_size
    frames = [Tensor(np.full((3, size, size), 0.5)) for _ in range(micro_config.frames)]
    flows = [Tensor(np.zeros((2, size, size))) for _ in range(micro_config.frames)]
    return [SampleTensors(f"s{i}", label, frames, flows) for i, label in enumerate(labels)]


class TestEvaluateTensors:
    def test_empty(self, rng, micro_config):
        with pytest.raises(DataError):
            evaluate_tensors([], init_model_weights(micro_config, rng), micro_config)

    def test_constant_half_predicts_violent(self, rng, micro_config):
        weights = init_model_weights(micro_config, rng)
        weights["head.2.W"] = np.zeros((8, 1))
        weights["head.2.b"] = np.zeros(1)
        evaluation = evaluate_tensors(constant_inputs(micro_config, [1, 0, 0, 1, 1]), weights, micro_config)
        assert evaluation.accuracy == pytest.approx(0.6)
        assert evaluation.loss == pytest.approx(np.log(2))
        assert evaluation.probabilities == [0.5] * 5

    def test_all_correct(self, rng, micro_config):
        weights = init_model_weights(micro_config, rng)
        weights["head.2.W"] = np.zeros((8, 1))
        weights["head.2.b"] = np.full(1, 4.0)
        evaluation = evaluate_tensors(constant_inputs(micro_config, [1, 1, 1]), weights, micro_config)
        assert evaluation.accuracy == 1.0

    def test_threshold(self, rng, micro_config):
        weights = init_model_weights(micro_config, rng)
        weights["head.2.W"] = np.zeros((8, 1))
        weights["head.2.b"] = np.zeros(1)
        evaluation = evaluate_tensors(constant_inputs(micro_config, [1, 0]), weights, micro_config, threshold=0.6)
        assert evaluation.accuracy == 0.5


def read_rows(path) -> list[list[str]]:
    with open(path, newline="") as f:
        return list(csv.reader(f))


class TestTrain:
    def test_same_seed_same_bytes(self, synthetic_dataset, micro_config, quick_train, tmp_path):
        manifest, _ = synthetic_dataset
        train(manifest, micro_config, quick_train, tmp_path / "a", workers=2)
        train(manifest, micro_config, quick_train, tmp_path / "b", workers=1)
        for name in (WEIGHTS_FILE, METRICS_FILE):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_metrics_file(self, synthetic_dataset, micro_config, quick_train, tmp_path):
        manifest, _ = synthetic_dataset
        result = train(manifest, micro_config, quick_train, tmp_path)
        rows = read_rows(tmp_path / METRICS_FILE)
        assert rows[0] == METRICS_HEADER
        assert [row[0] for row in rows[1:]] == ["1", "2"]
        for row in rows[1:]:
            assert all(re.fullmatch(r"\d+\.\d{6}", value) for value in row[1:])
            assert row[-1] == "0.000000"
        assert len(result.metrics) == 2
        assert all(0.0 <= m["eval_acc"] <= 1.0 and m["train_loss"] >= 0.0 for m in result.metrics)

    def test_saved_weights_reproduce_the_last_evaluation(self, synthetic_dataset, micro_config, quick_train,
                                                         tmp_path):
        manifest, _ = synthetic_dataset
        train(manifest, micro_config, quick_train, tmp_path)
        evaluation = evaluate(manifest, WeightStore.load(tmp_path / WEIGHTS_FILE), micro_config)
        last = read_rows(tmp_path / METRICS_FILE)[-1]
        assert f"{evaluation.loss:.6f}" == last[3]
        assert f"{evaluation.accuracy:.6f}" == last[4]

    def test_returned_weights_match_the_file(self, synthetic_dataset, micro_config, quick_train, tmp_path):
        manifest, _ = synthetic_dataset
        result = train(manifest, micro_config, quick_train, tmp_path)
        assert result.weights.to_bytes() == (tmp_path / WEIGHTS_FILE).read_bytes()

    def test_seed_changes_the_weights(self, synthetic_dataset, micro_config, quick_train):
        manifest, _ = synthetic_dataset
        first = train(manifest, micro_config, quick_train)
        second = train(manifest, micro_config, replace(quick_train, seed=8))
        assert first.weights.to_bytes() != second.weights.to_bytes()

    def test_unsplit_manifest(self, tmp_path, micro_config, quick_train):
        manifest = generate_synthetic(tmp_path, seed=0, per_class=2, frames=3, size=16)
        with pytest.raises(DataError):
            train(manifest, micro_config, quick_train)

    def test_evaluate_needs_every_weight(self, synthetic_dataset, micro_config):
        manifest, _ = synthetic_dataset
        with pytest.raises(MissingWeightsError):
            evaluate(manifest, WeightStore(), micro_config)


@pytest.fixture(scope="module")
def benchmark(tmp_path_factory):
    """The synthetic learning benchmark: seed 1, 100 clips per class, split with seed 1"""
    root = tmp_path_factory.mktemp("benchmark")
    return split_dataset(generate_synthetic(root, seed=1, per_class=100, frames=24, size=16), seed=1)


@pytest.mark.slow
class TestLearning:
    def test_micro_model_learns_the_benchmark(self, benchmark):
        model_config, train_config = load_config(CONFIGS / "micro.json")
        result = train(benchmark, model_config, train_config)
        assert result.metrics[-1]["eval_acc"] >= 0.9

    def test_single_frames_do_not_give_the_label_away(self, benchmark):
        assert pixel_probe_accuracy(benchmark, size=16) < 0.65

    def test_flow_magnitude_separates_the_classes(self, benchmark):
        assert flow_threshold_accuracy(benchmark, size=16) > 0.9

    def test_loss_drops_on_a_tiny_run(self, tmp_path):
        manifest = split_dataset(generate_synthetic(tmp_path, seed=0, per_class=10, frames=12, size=8), seed=0)
        model_config = ModelConfig.micro(frames=6, input_size=8)
        metrics = train(manifest, model_config, TrainConfig(epochs=5, seed=0, record_wall_time=False)).metrics
        assert len(metrics) == 5
        assert metrics[-1]["train_loss"] < metrics[0]["train_loss"]

    def test_median_loss_drops_across_seeds(self, tmp_path):
        manifest = split_dataset(generate_synthetic(tmp_path, seed=2, per_class=20, frames=12, size=16), seed=2)
        model_config, train_config = load_config(CONFIGS / "micro.json", ["train.epochs=10"])
        first, last = [], []
        for seed in range(5):
            metrics = train(manifest, model_config, replace(train_config, seed=seed)).metrics
            first.append(metrics[0]["train_loss"])
            last.append(metrics[-1]["train_loss"])
        assert statistics.median(last) < statistics.median(first)

    def test_every_variant_learns(self, benchmark, tmp_path):
        model_config, train_config = load_config(CONFIGS / "micro.json")
        results = run_variants(benchmark, model_config, train_config, tmp_path)
        assert [r.name for r in results] == [
            "ValdNet1 (LSTM)", "ValdNet1 (GRU)", "ValdNet2 (LSTM)", "ValdNet2 (GRU)",
            "ValdNet3 (LSTM)", "ValdNet3 (GRU)",
        ]
        assert all(r.eval_accuracy >= 0.85 for r in results)
        assert len(read_rows(tmp_path / VARIANTS_FILE)) == 7
