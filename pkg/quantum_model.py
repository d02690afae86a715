#!/usr/bin/env python3
"""
Parameterized Quantum Classifier

Hardware-efficient ansatz (RX row, RZ row, descending CNOT chain per
layer), a Pauli-string observable and an optional tanh output. The model
output is F(x; theta) = <x| U(theta)^dagger O U(theta) |x>.
"""

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from errors import DataFormatError, DataIOError, ModelError
from feature_encoding import EncodedInput, EncodingKind, EncodingMode, encode, encode_angle
from statevector_simulator import (
    Circuit, Gate, StateVector, circuit_matrix, run_circuit, run_circuit_batch,
)

PAULI_LETTERS = ("I", "X", "Y", "Z")


class Activation(str, Enum):
    NONE = "none"
    TANH = "tanh"


@dataclass(frozen=True)
class AnsatzSpec:
    n_qubits: int
    n_layers: int

    @property
    def parameter_count(self) -> int:
        return 2 * self.n_qubits * self.n_layers

    @property
    def gate_count(self) -> int:
        return 2 * self.n_qubits * self.n_layers + (self.n_qubits - 1) * self.n_layers

    def to_dict(self) -> Dict[str, int]:
        return {"n_qubits": self.n_qubits, "n_layers": self.n_layers}


@dataclass(frozen=True)
class PauliObservable:
    """Pauli string, e.g. {0: 'Z'} for Z on qubit 0."""
    paulis: Tuple[Tuple[int, str], ...]

    @classmethod
    def parse(cls, text: str) -> "PauliObservable":
        """Parse "Z0", "X1 Z3" or "Z0*Z1"."""
        terms: Dict[int, str] = {}
        for token in text.replace("*", " ").split():
            letter, index = token[0].upper(), token[1:]
            if letter not in PAULI_LETTERS or not index.isdigit():
                raise ModelError(f"cannot parse Pauli term {token!r} in {text!r}")
            qubit = int(index)
            if qubit in terms:
                raise ModelError(f"qubit {qubit} appears twice in {text!r}")
            if letter != "I":
                terms[qubit] = letter
        if not terms:
            raise ModelError(f"observable {text!r} has no non-identity term")
        return cls(tuple(sorted(terms.items())))

    @classmethod
    def z(cls, qubit: int = 0) -> "PauliObservable":
        return cls(((qubit, "Z"),))

    def gates(self) -> List[Gate]:
        builders = {"X": Gate.x, "Y": Gate.y, "Z": Gate.z}
        return [builders[letter](qubit) for qubit, letter in self.paulis]

    def circuit(self, n_qubits: int) -> Circuit:
        for qubit, _ in self.paulis:
            if qubit >= n_qubits:
                raise ModelError(f"observable acts on qubit {qubit} of a {n_qubits}-qubit model")
        return Circuit(n_qubits, self.gates())

    def __str__(self) -> str:
        return " ".join(f"{letter}{qubit}" for qubit, letter in self.paulis)


def build_ansatz_circuit(spec: AnsatzSpec, theta: Sequence[float]) -> Circuit:
    """Per layer: RX on every qubit, RZ on every qubit, then CNOT 0->1, ..., (n-2)->(n-1).

    theta is laid out layer by layer; within a layer the n RX angles come
    first, then the n RZ angles.
    """
    theta = np.asarray(theta, dtype=float).reshape(-1)
    if len(theta) != spec.parameter_count:
        raise ModelError(
            f"ansatz with {spec.n_qubits} qubits x {spec.n_layers} layers needs "
            f"{spec.parameter_count} parameters, got {len(theta)}")
    n = spec.n_qubits
    circuit = Circuit(n)
    for layer in range(spec.n_layers):
        block = theta[2 * n * layer: 2 * n * (layer + 1)]
        for qubit in range(n):
            circuit.append(Gate.rx(qubit, block[qubit]))
        for qubit in range(n):
            circuit.append(Gate.rz(qubit, block[n + qubit]))
        for qubit in range(n - 1):
            circuit.append(Gate.cnot(qubit, qubit + 1))
    return circuit


@dataclass(frozen=True)
class ModelOutput:
    raw: float
    output: float


@dataclass(frozen=True)
class Classification:
    label: int
    score: float


@dataclass(frozen=True, eq=False)
class QuantumModel:
    ansatz: AnsatzSpec
    theta: np.ndarray
    observable: PauliObservable = field(default_factory=PauliObservable.z)
    activation: Activation = Activation.TANH
    encoding: Optional[EncodingMode] = None
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float).reshape(-1)
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)
        if self.encoding is None:
            object.__setattr__(self, "encoding", EncodingMode(
                EncodingKind.AMPLITUDE_OVERFLOW, self.ansatz.n_qubits))
        if len(theta) != self.ansatz.parameter_count:
            raise ModelError(
                f"theta has {len(theta)} entries, ansatz needs {self.ansatz.parameter_count}")
        if self.encoding.n_qubits != self.ansatz.n_qubits:
            raise ModelError(
                f"encoding uses {self.encoding.n_qubits} qubits, ansatz {self.ansatz.n_qubits}")
        self.observable.circuit(self.ansatz.n_qubits)

    @property
    def n_qubits(self) -> int:
        return self.ansatz.n_qubits

    def with_theta(self, theta: Sequence[float]) -> "QuantumModel":
        return QuantumModel(self.ansatz, np.asarray(theta, dtype=float), self.observable,
                            self.activation, self.encoding, dict(self.metadata))

    def with_metadata(self, **updates: Any) -> "QuantumModel":
        metadata = dict(self.metadata)
        metadata.update(updates)
        return QuantumModel(self.ansatz, self.theta, self.observable, self.activation,
                            self.encoding, metadata)

    def ansatz_circuit(self) -> Circuit:
        return build_ansatz_circuit(self.ansatz, self.theta)

    def activate(self, raw):
        return np.tanh(raw) if self.activation == Activation.TANH else raw

    def activation_slope(self, raw):
        """d(activated)/d(raw)."""
        if self.activation == Activation.TANH:
            return 1.0 - np.tanh(raw) ** 2
        return np.ones_like(raw) if isinstance(raw, np.ndarray) else 1.0

    def observable_matrix(self) -> np.ndarray:
        """Dense U^dagger O U, the operator the input gradient is a bilinear form of."""
        return circuit_matrix(conjugated_observable_circuit(self))

    # Persistence --------------------------------------------------------

    def to_dict(self) -> Dict[str, Any]:
        return {
            "ansatz": self.ansatz.to_dict(),
            "theta": [float(t) for t in self.theta],
            "observable": str(self.observable),
            "activation": self.activation.value,
            "encoding": self.encoding.to_dict(),
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "QuantumModel":
        try:
            ansatz = AnsatzSpec(int(data["ansatz"]["n_qubits"]), int(data["ansatz"]["n_layers"]))
            return cls(
                ansatz=ansatz,
                theta=np.asarray(data["theta"], dtype=float),
                observable=PauliObservable.parse(data.get("observable", "Z0")),
                activation=Activation(data.get("activation", Activation.TANH.value)),
                encoding=EncodingMode.from_dict(data["encoding"]),
                metadata=dict(data.get("metadata", {})),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise DataFormatError(f"invalid model document: {e}")

    def save(self, path) -> Path:
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        except OSError as e:
            raise DataIOError(f"cannot write model file {path}: {e}", path=str(path))
        return path

    @classmethod
    def load(cls, path) -> "QuantumModel":
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except FileNotFoundError:
            raise DataIOError(f"model file not found: {path}", path=str(path))
        except json.JSONDecodeError as e:
            raise DataFormatError(f"model file {path} is not valid JSON: {e}", path=str(path))
        return cls.from_dict(data)


# Evaluation ------------------------------------------------------------

def input_state(model: QuantumModel, encoded: EncodedInput) -> StateVector:
    if encoded.mode.kind != model.encoding.kind or encoded.mode.n_qubits != model.n_qubits:
        raise ModelError(
            f"input encoded as {encoded.mode.kind.value}/{encoded.mode.n_qubits} qubits, "
            f"model expects {model.encoding.kind.value}/{model.n_qubits} qubits")
    return encoded.state()


def expectation(model: QuantumModel, state: StateVector) -> float:
    """<psi| U^dagger O U |psi> for an arbitrary normalised state."""
    if state.n_qubits != model.n_qubits:
        raise ModelError(f"state has {state.n_qubits} qubits, model {model.n_qubits}")
    evolved = run_circuit(model.ansatz_circuit(), state)
    flipped = run_circuit(model.observable.circuit(model.n_qubits), evolved)
    return float(np.real(evolved.inner(flipped)))


def evaluate(model: QuantumModel, encoded: EncodedInput) -> ModelOutput:
    raw = expectation(model, input_state(model, encoded))
    return ModelOutput(raw=raw, output=float(model.activate(raw)))


def encode_for_model(model: QuantumModel, raw_features: Sequence[float]) -> EncodedInput:
    return encode(raw_features, model.encoding)


def input_states_batch(model: QuantumModel, feature_rows: Sequence[Sequence[float]]) -> np.ndarray:
    """(batch, 2^n) input states for raw feature rows."""
    rows = []
    for features in feature_rows:
        encoded = encode_for_model(model, features)
        if encoded.amplitudes is not None:
            rows.append(np.asarray(encoded.amplitudes, dtype=np.complex128))
        else:
            rows.append(run_circuit(encode_angle(encoded.angles, model.n_qubits)).amplitudes)
    return np.array(rows, dtype=np.complex128).reshape(-1, 2 ** model.n_qubits)


def expectation_batch(model: QuantumModel, states: np.ndarray) -> np.ndarray:
    """Raw F for every row of a (batch, 2^n) array of input states."""
    evolved = run_circuit_batch(model.ansatz_circuit(), states)
    flipped = run_circuit_batch(model.observable.circuit(model.n_qubits), evolved)
    return np.real(np.einsum("bi,bi->b", evolved.conj(), flipped))


def evaluate_batch(model: QuantumModel, feature_rows: Sequence[Sequence[float]]) -> np.ndarray:
    """Activated outputs for many raw feature rows."""
    return model.activate(expectation_batch(model, input_states_batch(model, feature_rows)))


def conjugated_observable_circuit(model: QuantumModel) -> Circuit:
    """Circuit whose unitary is U^dagger O U: run U, then the Pauli gates, then U^dagger."""
    ansatz = model.ansatz_circuit()
    circuit = Circuit(model.n_qubits, list(ansatz.gates))
    circuit.extend(model.observable.circuit(model.n_qubits).gates)
    circuit.extend(ansatz.inverse().gates)
    return circuit


def classify(model: QuantumModel, raw_features: Sequence[float]) -> Classification:
    score = evaluate(model, encode_for_model(model, raw_features)).output
    return Classification(label=1 if score >= 0 else -1, score=score)
