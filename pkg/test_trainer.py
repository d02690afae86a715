#!/usr/bin/env python3
"""Tests for the loss, SPSA, gradient-descent training and null models."""

import numpy as np
import pytest

from dataset_loader import LabeledSample, angle_features, generate_bars_and_stripes
from errors import ConfigError, ModelError, TrainingDivergence
from feature_encoding import EncodingKind, EncodingMode
from quantum_model import Activation, AnsatzSpec, PauliObservable, QuantumModel
from trainer import (
    BatchObjective, NullDistribution, NullKind, Optimizer, SPSAGains, TrainConfig,
    evaluate_accuracy, initial_model, loss, model_features, sample_null_model, spsa_minimize,
    train,
)


def single_qubit_model(activation=Activation.TANH):
    return QuantumModel(AnsatzSpec(1, 0), np.zeros(0), PauliObservable.z(0), activation,
                        EncodingMode(EncodingKind.AMPLITUDE_NORMALIZED, 1))


def sample_with_output(value, label, sample_id=0):
    """Pixels whose normalised encoding gives <Z> = value on one qubit."""
    pixels = np.sqrt([(1 + value) / 2, (1 - value) / 2])
    return LabeledSample(pixels, label, "synthetic", sample_id)


@pytest.fixture
def bars_task():
    return generate_bars_and_stripes(2)


def test_loss_of_undecided_output_is_one():
    model = single_qubit_model()
    assert loss(model, [sample_with_output(0.0, 1)]) == pytest.approx(1.0, abs=1e-12)
    assert loss(model, [sample_with_output(0.0, -1)]) == pytest.approx(1.0, abs=1e-12)


def test_loss_of_confident_outputs():
    model = single_qubit_model(Activation.NONE)
    batch = [sample_with_output(0.999, 1), sample_with_output(-0.999, -1, 1)]
    assert loss(model, batch) == pytest.approx(1e-6, rel=1e-6)


def test_accuracy_counts_zero_as_positive():
    model = single_qubit_model()
    assert evaluate_accuracy(model, [sample_with_output(0.0, 1)]) == 1.0
    assert evaluate_accuracy(model, [sample_with_output(0.0, -1)]) == 0.0
    mixed = [sample_with_output(0.5, 1), sample_with_output(0.5, -1, 1),
             sample_with_output(-0.5, -1, 2), sample_with_output(-0.5, 1, 3)]
    assert evaluate_accuracy(model, mixed) == 0.5


def test_unlabelled_samples_rejected():
    with pytest.raises(ModelError):
        BatchObjective(single_qubit_model(), [LabeledSample([0.6, 0.8], None, "x", 0)])
    with pytest.raises(ModelError):
        evaluate_accuracy(single_qubit_model(), [])


def test_objective_gradient_matches_finite_differences(model_factory, bars_task):
    model = model_factory(n_qubits=2, n_layers=2, seed=3, kind=EncodingKind.AMPLITUDE_NORMALIZED)
    objective = BatchObjective(model, bars_task)
    theta = np.array(model.theta)
    step = 1e-6
    finite = []
    for i in range(len(theta)):
        up, down = theta.copy(), theta.copy()
        up[i] += step
        down[i] -= step
        finite.append((objective(up) - objective(down)) / (2 * step))
    np.testing.assert_allclose(objective.gradient(theta), finite, atol=1e-6)


def test_spsa_on_quadratic():
    target = np.array([0.5, -1.0, 2.0])

    def quadratic(theta):
        return float(np.sum((theta - target) ** 2))

    result = spsa_minimize(quadratic, np.zeros(3), 300, SPSAGains(a=1.0), seed=4)
    assert len(result.history) == 300
    assert result.best_value < 1e-3
    assert result.best_value == min([quadratic(np.zeros(3))] + result.history)
    again = spsa_minimize(quadratic, np.zeros(3), 300, SPSAGains(a=1.0), seed=4)
    np.testing.assert_array_equal(result.theta, again.theta)


def test_spsa_gain_schedule():
    gains = SPSAGains(a=0.2, c=0.1, A=50)
    assert gains.step_size(1) == pytest.approx(0.2 / 51 ** 0.602)
    assert gains.perturbation(1) == pytest.approx(0.1)
    assert gains.perturbation(32) == pytest.approx(0.1 / 32 ** 0.101)


def test_spsa_divergence():
    with pytest.raises(TrainingDivergence):
        spsa_minimize(lambda theta: float("nan"), np.zeros(2), 5)
    calls = []

    def blows_up(theta):
        calls.append(1)
        return 1.0 if len(calls) < 4 else float("inf")

    with pytest.raises(TrainingDivergence) as caught:
        spsa_minimize(blows_up, np.zeros(2), 5)
    assert caught.value.details["iteration"] == 1


def test_zero_iterations_keep_parameters(model_factory, bars_task):
    model = model_factory(n_qubits=2, n_layers=1, seed=1, kind=EncodingKind.AMPLITUDE_NORMALIZED)
    result = train(model, bars_task, TrainConfig(max_iters=0))
    np.testing.assert_array_equal(result.model.theta, model.theta)
    assert result.history == [] and result.best_iteration == 0
    assert result.best_loss == pytest.approx(loss(model, bars_task))
    assert result.seconds is None


def test_spsa_training_tracks_best(model_factory, bars_task):
    model = model_factory(n_qubits=2, n_layers=2, seed=2, kind=EncodingKind.AMPLITUDE_NORMALIZED)
    config = TrainConfig(max_iters=25, seed=7, log_every=0)
    result = train(model, bars_task, config, test_samples=bars_task[:2], record_timing=True)
    assert len(result.history) == 25
    assert result.best_loss <= loss(model, bars_task)
    assert result.best_loss == pytest.approx(loss(result.model, bars_task))
    assert result.test_accuracy is not None and result.seconds >= 0
    assert result.model.metadata["optimizer"] == "spsa"
    repeat = train(model, bars_task, config, test_samples=bars_task[:2])
    np.testing.assert_array_equal(repeat.model.theta, result.model.theta)


def test_gradient_descent_training(model_factory, bars_task):
    model = model_factory(n_qubits=2, n_layers=1, seed=5, kind=EncodingKind.AMPLITUDE_NORMALIZED)
    config = TrainConfig(optimizer=Optimizer.GD_PARAM_SHIFT, max_iters=10, learning_rate=0.05)
    result = train(model, bars_task, config)
    assert len(result.history) == 10
    assert result.best_loss <= loss(model, bars_task)
    assert result.to_dict()["history"][0]["iteration"] == 1


def test_one_gradient_step_lowers_cosine_loss():
    model = QuantumModel(AnsatzSpec(1, 1), np.array([1.0, 1.0]), PauliObservable.z(0),
                         Activation.TANH, EncodingMode(EncodingKind.AMPLITUDE_NORMALIZED, 1))
    batch = [LabeledSample(np.array([1.0, 0.0]), 1, "synthetic", 0)]
    assert loss(model, batch) == pytest.approx((np.tanh(np.cos(1.0)) - 1) ** 2)
    slope = 1 - np.tanh(np.cos(1.0)) ** 2
    expected = 2 * (np.tanh(np.cos(1.0)) - 1) * slope * -np.sin(1.0)
    gradient = BatchObjective(model, batch).gradient(model.theta)
    assert np.max(np.abs(gradient)) == pytest.approx(abs(expected), rel=1e-9)
    assert np.min(np.abs(gradient)) <= 1e-12
    config = TrainConfig(optimizer=Optimizer.GD_PARAM_SHIFT, max_iters=1, learning_rate=0.1,
                         log_every=0)
    result = train(model, batch, config)
    assert result.history[0].loss < loss(model, batch)
    assert result.best_iteration == 1


def test_train_config_checks():
    with pytest.raises(ConfigError) as caught:
        TrainConfig(max_iters=-1)
    assert caught.value.field == "max_iters"
    with pytest.raises(ConfigError) as caught:
        TrainConfig(gains=SPSAGains(a=0.0))
    assert caught.value.field == "spsa.a"
    with pytest.raises(ValueError):
        TrainConfig(optimizer="cobyla")


def test_angle_model_features():
    model = QuantumModel(AnsatzSpec(8, 1), np.zeros(16), encoding=EncodingMode(EncodingKind.ANGLE, 8))
    image = generate_bars_and_stripes(4)[0].pixels
    np.testing.assert_allclose(model_features(model, image), angle_features(image, 4))
    small = QuantumModel(AnsatzSpec(6, 1), np.zeros(12), encoding=EncodingMode(EncodingKind.ANGLE, 6))
    with pytest.raises(ModelError):
        model_features(small, image)


# Null models ---------------------------------------------------------------------

def test_uniform_null_range():
    values = NullDistribution(NullKind.UNIFORM_0_PI, seed=1).sample(5000)
    assert values.min() >= 0.0 and values.max() < np.pi
    assert values.mean() == pytest.approx(np.pi / 2, abs=0.1)


def test_gaussian_null_spread():
    values = NullDistribution(NullKind.GAUSSIAN_0_HALFPI, seed=2).sample(20000)
    assert values.mean() == pytest.approx(0.0, abs=0.05)
    assert values.std() == pytest.approx(np.pi / 2, rel=0.05)


def test_student_t_null_has_heavy_tails():
    values = NullDistribution(NullKind.STUDENT_T_NU2, seed=3).sample(20000)
    gaussian = np.random.default_rng(3).normal(size=20000)
    assert np.max(np.abs(values)) > np.max(np.abs(gaussian))
    assert np.median(values) == pytest.approx(0.0, abs=0.05)


def test_null_sampling_is_seeded():
    first = NullDistribution(NullKind.STUDENT_T_NU2, seed=8).sample(10)
    np.testing.assert_array_equal(first, NullDistribution(NullKind.STUDENT_T_NU2, seed=8).sample(10))


def test_null_model_copies_template(model_factory):
    template = model_factory(n_qubits=3, n_layers=2, observable="X1")
    dist = NullDistribution(NullKind.GAUSSIAN_0_HALFPI, seed=4)
    null = sample_null_model(template.ansatz, dist, template)
    assert null.observable == template.observable and null.encoding == template.encoding
    assert null.metadata["null_distribution"] == {"kind": "gaussian_0_halfpi", "seed": 4}
    np.testing.assert_array_equal(null.theta, dist.sample(12))
    with pytest.raises(ModelError):
        sample_null_model(AnsatzSpec(3, 1), dist, template)


def test_initial_model_draws_from_init():
    config = TrainConfig(init=NullDistribution(NullKind.UNIFORM_0_PI, seed=9))
    model = initial_model(AnsatzSpec(2, 3), config)
    np.testing.assert_array_equal(model.theta, NullDistribution(NullKind.UNIFORM_0_PI, seed=9).sample(12))
