#!/usr/bin/env python3
"""
Trainer

Full-batch training of binary quantum classifiers on the loss

    L(theta) = mean_i (tanh(F(x_i; theta)) - y_i)^2,  y_i in {-1, +1}

with either SPSA (two loss evaluations per step, gains
a_k = a / (k + A)^0.602 and c_k = c / k^0.101) or gradient descent on
parameter-shift gradients. Also draws untrained null models whose
parameters come from a uniform, Gaussian or Student-t distribution.
"""

import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from console import say
from dataset_loader import LabeledSample, angle_features
from errors import ConfigError, ModelError, TrainingDivergence
from feature_encoding import EncodingKind
from gradient_engine import parameter_shift_batch
from quantum_model import AnsatzSpec, QuantumModel, expectation_batch, input_states_batch


class Optimizer(str, Enum):
    SPSA = "spsa"
    GD_PARAM_SHIFT = "gd_param_shift"


class LossKind(str, Enum):
    MSE_ON_ACTIVATED_OUTPUT = "mse_on_activated_output"


class NullKind(str, Enum):
    UNIFORM_0_PI = "uniform_0_pi"
    GAUSSIAN_0_HALFPI = "gaussian_0_halfpi"
    STUDENT_T_NU2 = "student_t_nu2"


@dataclass(frozen=True)
class NullDistribution:
    kind: NullKind = NullKind.UNIFORM_0_PI
    seed: int = 0

    def sample(self, size: int) -> np.ndarray:
        rng = np.random.default_rng(self.seed)
        if self.kind == NullKind.UNIFORM_0_PI:
            return rng.uniform(0.0, np.pi, size)
        if self.kind == NullKind.GAUSSIAN_0_HALFPI:
            return rng.normal(0.0, np.pi / 2, size)
        return rng.standard_t(2, size)

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind.value, "seed": self.seed}


@dataclass(frozen=True)
class SPSAGains:
    a: float = 0.2
    c: float = 0.1
    A: float = 50.0
    alpha: float = 0.602
    gamma: float = 0.101

    def step_size(self, k: int) -> float:
        return self.a / (k + self.A) ** self.alpha

    def perturbation(self, k: int) -> float:
        return self.c / k ** self.gamma

    def to_dict(self) -> Dict[str, float]:
        return {"a": self.a, "c": self.c, "A": self.A, "alpha": self.alpha, "gamma": self.gamma}


@dataclass
class TrainConfig:
    optimizer: Optimizer = Optimizer.SPSA
    loss: LossKind = LossKind.MSE_ON_ACTIVATED_OUTPUT
    max_iters: int = 300
    learning_rate: float = 0.1  # gradient descent only
    gains: SPSAGains = field(default_factory=SPSAGains)
    init: NullDistribution = field(default_factory=NullDistribution)
    seed: int = 0
    log_every: int = 50

    def __post_init__(self):
        self.optimizer = Optimizer(self.optimizer)
        self.loss = LossKind(self.loss)
        if self.max_iters < 0:
            raise ConfigError(f"max_iters must be >= 0, got {self.max_iters}", field="max_iters")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}",
                              field="learning_rate")
        for name in ("a", "c", "A"):
            if getattr(self.gains, name) <= 0:
                raise ConfigError(f"SPSA gain {name} must be > 0", field=f"spsa.{name}")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "optimizer": self.optimizer.value,
            "loss": self.loss.value,
            "max_iters": self.max_iters,
            "learning_rate": self.learning_rate,
            "spsa": self.gains.to_dict(),
            "init": self.init.to_dict(),
            "seed": self.seed,
        }


@dataclass
class IterationRecord:
    iteration: int
    loss: float
    accuracy: float


@dataclass
class TrainingResult:
    model: QuantumModel  # best-loss parameters
    history: List[IterationRecord]
    best_loss: float
    best_iteration: int
    train_accuracy: float
    test_accuracy: Optional[float] = None
    seconds: Optional[float] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "best_loss": self.best_loss,
            "best_iteration": self.best_iteration,
            "train_accuracy": self.train_accuracy,
            "test_accuracy": self.test_accuracy,
            "history": [vars(record) for record in self.history],
        }


def model_features(model: QuantumModel, pixels: Sequence[float]) -> np.ndarray:
    """Features a model consumes: the pixels, or row/column mean angles for angle models
    fed with square images."""
    pixels = np.asarray(pixels, dtype=float).reshape(-1)
    if model.encoding.kind != EncodingKind.ANGLE or len(pixels) <= model.n_qubits:
        return pixels
    side = int(round(np.sqrt(len(pixels))))
    if side * side != len(pixels) or 2 * side != model.n_qubits:
        raise ModelError(
            f"angle model with {model.n_qubits} qubits cannot take a {len(pixels)}-pixel image")
    return angle_features(pixels, side)


class BatchObjective:
    """Loss over a fixed batch of encoded states; remembers the last outputs."""

    def __init__(self, model: QuantumModel, samples: Sequence[LabeledSample]):
        if not samples:
            raise ModelError("loss needs a nonempty batch")
        self.model = model
        self.states = input_states_batch(model, [model_features(model, s.pixels) for s in samples])
        self.targets = np.array([s.label for s in samples], dtype=float)
        if np.any(np.abs(self.targets) != 1):
            raise ModelError("every training sample needs a label of -1 or +1")
        self.last_outputs: Optional[np.ndarray] = None

    def outputs(self, theta: np.ndarray) -> np.ndarray:
        model = self.model.with_theta(theta)
        return np.asarray(model.activate(expectation_batch(model, self.states)), dtype=float)

    def __call__(self, theta: np.ndarray) -> float:
        outputs = self.outputs(theta)
        self.last_outputs = outputs
        return float(np.mean((outputs - self.targets) ** 2))

    def accuracy(self, outputs: Optional[np.ndarray] = None) -> float:
        outputs = self.last_outputs if outputs is None else outputs
        predictions = np.where(outputs >= 0, 1.0, -1.0)
        return float(np.mean(predictions == self.targets))

    def gradient(self, theta: np.ndarray) -> np.ndarray:
        """dL/dtheta through tanh, with dF/dtheta from the parameter-shift rule."""
        model = self.model.with_theta(theta)
        raw = expectation_batch(model, self.states)
        outputs = model.activate(raw)
        weights = 2.0 * (outputs - self.targets) * model.activation_slope(raw)
        jacobian = parameter_shift_batch(model, self.states)
        return jacobian @ weights / len(self.targets)


def loss(model: QuantumModel, batch: Sequence[LabeledSample]) -> float:
    """Mean squared error of the activated output against the +-1 labels."""
    return BatchObjective(model, batch)(model.theta)


def evaluate_accuracy(model: QuantumModel, samples: Sequence[LabeledSample]) -> float:
    """Fraction of samples whose output sign matches the label (0 counts as +1)."""
    if not samples:
        raise ModelError("accuracy needs a nonempty sample set")
    objective = BatchObjective(model, samples)
    return objective.accuracy(objective.outputs(model.theta))


@dataclass
class SPSAResult:
    theta: np.ndarray
    best_theta: np.ndarray
    best_value: float
    best_iteration: int
    history: List[float]


def spsa_minimize(objective: Callable[[np.ndarray], float], theta0: Sequence[float],
                  max_iters: int, gains: SPSAGains = SPSAGains(), seed: int = 0,
                  callback: Optional[Callable[[int, np.ndarray, float], None]] = None) -> SPSAResult:
    """Minimise `objective` with SPSA; tracks the best point seen (iteration 0 is theta0)."""
    rng = np.random.default_rng(seed)
    theta = np.array(theta0, dtype=float)
    value = float(objective(theta))
    if not np.isfinite(value):
        raise TrainingDivergence(f"objective is {value} at the starting point", iteration=0)
    best_theta, best_value, best_iteration = theta.copy(), value, 0
    history = []
    for k in range(1, max_iters + 1):
        a_k, c_k = gains.step_size(k), gains.perturbation(k)
        delta = rng.choice([-1.0, 1.0], size=len(theta))
        difference = objective(theta + c_k * delta) - objective(theta - c_k * delta)
        theta = theta - a_k * difference / (2.0 * c_k) * delta
        value = float(objective(theta))
        if not np.isfinite(value):
            raise TrainingDivergence(f"loss became {value} at iteration {k}", iteration=k)
        history.append(value)
        if value < best_value:
            best_theta, best_value, best_iteration = theta.copy(), value, k
        if callback is not None:
            callback(k, theta, value)
    return SPSAResult(theta, best_theta, best_value, best_iteration, history)


def _gradient_descent(objective: BatchObjective, theta0: np.ndarray, config: TrainConfig,
                      callback: Callable[[int, np.ndarray, float], None]) -> Tuple[np.ndarray, float, int]:
    theta = np.array(theta0, dtype=float)
    best_theta, best_value, best_iteration = theta.copy(), objective(theta), 0
    for k in range(1, config.max_iters + 1):
        theta = theta - config.learning_rate * objective.gradient(theta)
        value = objective(theta)
        if not np.isfinite(value):
            raise TrainingDivergence(f"loss became {value} at iteration {k}", iteration=k)
        if value < best_value:
            best_theta, best_value, best_iteration = theta.copy(), value, k
        callback(k, theta, value)
    return best_theta, best_value, best_iteration


def initial_model(ansatz: AnsatzSpec, config: TrainConfig, **model_fields: Any) -> QuantumModel:
    """Model with theta drawn from `config.init`."""
    return QuantumModel(ansatz, config.init.sample(ansatz.parameter_count), **model_fields)


def train(model: QuantumModel, train_samples: Sequence[LabeledSample], config: TrainConfig,
          test_samples: Optional[Sequence[LabeledSample]] = None,
          record_timing: bool = False) -> TrainingResult:
    """Train from `model.theta` and return the best-loss model with its history."""
    started = time.perf_counter()
    objective = BatchObjective(model, train_samples)
    history: List[IterationRecord] = []

    def record(k: int, theta: np.ndarray, value: float) -> None:
        accuracy = objective.accuracy()
        history.append(IterationRecord(k, value, accuracy))
        if config.log_every and k % config.log_every == 0:
            say(f"🏋️ iter {k:5d}  loss {value:.5f}  train acc {accuracy:.3f}")

    if config.max_iters == 0:
        best_theta, best_iteration = np.array(model.theta), 0
        best_value = objective(best_theta)
    elif config.optimizer == Optimizer.SPSA:
        say(f"🏋️ SPSA training: {config.max_iters} iterations, "
            f"{model.ansatz.parameter_count} parameters, {len(train_samples)} samples")
        result = spsa_minimize(objective, model.theta, config.max_iters, config.gains,
                               config.seed, callback=record)
        best_theta, best_value, best_iteration = (result.best_theta, result.best_value,
                                                  result.best_iteration)
    else:
        say(f"🏋️ Gradient descent (parameter shift): {config.max_iters} iterations, "
            f"learning rate {config.learning_rate}")
        best_theta, best_value, best_iteration = _gradient_descent(
            objective, model.theta, config, record)

    trained = model.with_theta(best_theta)
    train_accuracy = evaluate_accuracy(trained, train_samples)
    test_accuracy = evaluate_accuracy(trained, test_samples) if test_samples else None
    trained = trained.with_metadata(
        best_loss=best_value, best_iteration=best_iteration, train_accuracy=train_accuracy,
        test_accuracy=test_accuracy, optimizer=config.optimizer.value, seed=config.seed)
    say(f"✅ Training done: best loss {best_value:.5f} at iteration {best_iteration}, "
        f"train acc {train_accuracy:.3f}"
        + (f", test acc {test_accuracy:.3f}" if test_accuracy is not None else ""))
    return TrainingResult(
        model=trained, history=history, best_loss=best_value, best_iteration=best_iteration,
        train_accuracy=train_accuracy, test_accuracy=test_accuracy,
        seconds=time.perf_counter() - started if record_timing else None)


def sample_null_model(spec: AnsatzSpec, dist: NullDistribution,
                      template: Optional[QuantumModel] = None) -> QuantumModel:
    """Untrained model with theta drawn i.i.d. from `dist`; other settings copied from `template`."""
    theta = dist.sample(spec.parameter_count)
    if template is not None:
        if template.ansatz != spec:
            raise ModelError(f"template ansatz {template.ansatz} differs from {spec}")
        return QuantumModel(spec, theta, template.observable, template.activation,
                            template.encoding, {"null_distribution": dist.to_dict()})
    return QuantumModel(spec, theta, metadata={"null_distribution": dist.to_dict()})
