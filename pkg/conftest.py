"""Shared fixtures: a brute-force dense-matrix oracle, random models and IDX files."""

import gzip
import struct

import numpy as np
import pytest

from console import set_quiet
from feature_encoding import EncodingKind, EncodingMode, FitPolicy
from quantum_model import Activation, AnsatzSpec, PauliObservable, QuantumModel
from statevector_simulator import Circuit, Gate


def bits_of(index: int, n_qubits: int):
    return [(index >> (n_qubits - 1 - q)) & 1 for q in range(n_qubits)]


def index_of(bits) -> int:
    return int("".join(str(b) for b in bits), 2)


def dense_gate_matrix(gate: Gate, n_qubits: int) -> np.ndarray:
    """Full 2^n matrix of a gate, built column by column from the bit layout."""
    dim = 2 ** n_qubits
    base = gate.matrix()
    matrix = np.zeros((dim, dim), dtype=np.complex128)
    for column in range(dim):
        bits = bits_of(column, n_qubits)
        if any(bits[q] != t for q, t in gate.controls):
            matrix[column, column] = 1.0
            continue
        source = index_of([bits[t] for t in gate.targets])
        for target_value in range(2 ** len(gate.targets)):
            out = list(bits)
            for t, bit in zip(gate.targets, bits_of(target_value, len(gate.targets))):
                out[t] = bit
            matrix[index_of(out), column] += base[target_value, source]
    return matrix


def kron_single(matrix: np.ndarray, qubit: int, n_qubits: int) -> np.ndarray:
    """Kronecker product I x ... x M x ... x I with qubit 0 leftmost."""
    result = np.eye(1, dtype=np.complex128)
    for q in range(n_qubits):
        result = np.kron(result, matrix if q == qubit else np.eye(2))
    return result


def dense_circuit_matrix(circuit: Circuit) -> np.ndarray:
    total = np.eye(2 ** circuit.n_qubits, dtype=np.complex128)
    for gate in circuit.gates:
        total = dense_gate_matrix(gate, circuit.n_qubits) @ total
    return total


def random_unitary(rng: np.random.Generator, dim: int) -> np.ndarray:
    z = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def random_state(rng: np.random.Generator, n_qubits: int, real: bool = False) -> np.ndarray:
    vector = rng.normal(size=2 ** n_qubits)
    if not real:
        vector = vector + 1j * rng.normal(size=2 ** n_qubits)
    return vector / np.linalg.norm(vector)


def random_gate(rng: np.random.Generator, n_qubits: int) -> Gate:
    qubits = [int(q) for q in rng.permutation(n_qubits)]
    choice = int(rng.integers(0, 9))
    if choice == 0:
        return Gate.h(qubits[0])
    if choice == 1:
        return Gate.x(qubits[0])
    if choice == 2:
        return Gate.y(qubits[0])
    if choice == 3:
        return Gate.s_dag(qubits[0])
    if choice == 4:
        return Gate.rx(qubits[0], rng.uniform(-np.pi, np.pi))
    if choice == 5:
        return Gate.rz(qubits[0], rng.uniform(-np.pi, np.pi))
    if choice == 6:
        return Gate.cnot(qubits[0], qubits[1])
    if choice == 7:
        return Gate.unitary(qubits[:2], random_unitary(rng, 4))
    return Gate.unitary(qubits[:1], random_unitary(rng, 2),
                        controls=[(qubits[1], int(rng.integers(0, 2))),
                                  (qubits[2], int(rng.integers(0, 2)))])


def make_model(n_qubits: int = 4, n_layers: int = 2, seed: int = 0,
               kind: EncodingKind = EncodingKind.AMPLITUDE_OVERFLOW,
               activation: Activation = Activation.TANH,
               observable: str = "Z0",
               fit_policy: FitPolicy = FitPolicy.TRUNCATE_LAST) -> QuantumModel:
    rng = np.random.default_rng(seed)
    ansatz = AnsatzSpec(n_qubits, n_layers)
    return QuantumModel(ansatz, rng.uniform(0, 2 * np.pi, ansatz.parameter_count),
                        PauliObservable.parse(observable), activation,
                        EncodingMode(kind, n_qubits, fit_policy))


def write_idx(directory, images, labels, image_magic=2051, gz=False, suffix="train"):
    images = np.asarray(images, dtype=np.uint8)
    count, rows, cols = images.shape
    image_bytes = struct.pack(">IIII", image_magic, count, rows, cols) + images.tobytes()
    label_bytes = struct.pack(">II", 2049, len(labels)) + bytes(labels)
    opener = gzip.open if gz else open
    ext = ".gz" if gz else ""
    image_path = directory / f"{suffix}-images{ext}"
    label_path = directory / f"{suffix}-labels{ext}"
    with opener(image_path, "wb") as f:
        f.write(image_bytes)
    with opener(label_path, "wb") as f:
        f.write(label_bytes)
    return image_path, label_path


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


@pytest.fixture
def model_factory():
    return make_model


@pytest.fixture(autouse=True)
def quiet_console():
    set_quiet(True)
    yield
    set_quiet(False)
