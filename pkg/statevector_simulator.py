#!/usr/bin/env python3
"""
Dense Statevector Simulator

Holds the n-qubit state as 2^n complex amplitudes and applies gates by
reshaping the amplitude array into a (2,)*n tensor. Controlled gates only
touch the amplitudes whose control bits match their trigger values, so a
gate costs O(2^n) regardless of how many controls it carries.

Bit ordering: basis index k corresponds to the bitstring b_k read with
qubit 0 as the MOST significant bit. For 3 qubits, |b_5> = |101> means
qubit 0 = 1, qubit 1 = 0, qubit 2 = 1. Every module uses this convention.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from errors import CircuitError, NumericalError

MAX_QUBITS = 16
NORM_TOLERANCE = 1e-10
UNITARY_TOLERANCE = 1e-10

Control = Tuple[int, int]  # (qubit index, trigger value)

_SQRT_HALF = 1.0 / np.sqrt(2.0)
_FIXED_MATRICES = {
    "H": np.array([[_SQRT_HALF, _SQRT_HALF], [_SQRT_HALF, -_SQRT_HALF]], dtype=np.complex128),
    "X": np.array([[0, 1], [1, 0]], dtype=np.complex128),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=np.complex128),
    "Z": np.array([[1, 0], [0, -1]], dtype=np.complex128),
    "S": np.array([[1, 0], [0, 1j]], dtype=np.complex128),
    "S_DAG": np.array([[1, 0], [0, -1j]], dtype=np.complex128),
}


class GateKind(str, Enum):
    """Gate families the simulator understands."""
    H = "H"
    X = "X"
    Y = "Y"
    Z = "Z"
    S = "S"
    S_DAG = "S_DAG"
    RX = "RX"
    RZ = "RZ"
    CNOT = "CNOT"
    CONTROLLED_UNITARY = "CONTROLLED_UNITARY"


def rx_matrix(theta: float) -> np.ndarray:
    """RX(theta) = exp(-i theta X / 2)."""
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    return np.array([[c, -1j * s], [-1j * s, c]], dtype=np.complex128)


def rz_matrix(theta: float) -> np.ndarray:
    """RZ(theta) = exp(-i theta Z / 2)."""
    return np.array(
        [[np.exp(-0.5j * theta), 0], [0, np.exp(0.5j * theta)]], dtype=np.complex128
    )


def is_unitary(matrix: np.ndarray, tolerance: float = UNITARY_TOLERANCE) -> bool:
    matrix = np.asarray(matrix)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        return False
    identity = np.eye(matrix.shape[0])
    return float(np.max(np.abs(matrix.conj().T @ matrix - identity))) <= tolerance


@dataclass(frozen=True, eq=False)
class Gate:
    """One gate: a base unitary on `targets`, active only when every control matches."""
    kind: GateKind
    targets: Tuple[int, ...]
    controls: Tuple[Control, ...] = ()
    angle: Optional[float] = None
    unitary_payload: Optional[np.ndarray] = None

    # Constructors -------------------------------------------------------

    @staticmethod
    def h(qubit: int) -> "Gate":
        return Gate(GateKind.H, (qubit,))

    @staticmethod
    def x(qubit: int) -> "Gate":
        return Gate(GateKind.X, (qubit,))

    @staticmethod
    def y(qubit: int) -> "Gate":
        return Gate(GateKind.Y, (qubit,))

    @staticmethod
    def z(qubit: int) -> "Gate":
        return Gate(GateKind.Z, (qubit,))

    @staticmethod
    def s_dag(qubit: int) -> "Gate":
        return Gate(GateKind.S_DAG, (qubit,))

    @staticmethod
    def rx(qubit: int, theta: float) -> "Gate":
        return Gate(GateKind.RX, (qubit,), angle=float(theta))

    @staticmethod
    def rz(qubit: int, theta: float) -> "Gate":
        return Gate(GateKind.RZ, (qubit,), angle=float(theta))

    @staticmethod
    def cnot(control: int, target: int) -> "Gate":
        return Gate(GateKind.CNOT, (target,), controls=((control, 1),))

    @staticmethod
    def unitary(targets: Sequence[int], matrix: np.ndarray,
                controls: Sequence[Control] = ()) -> "Gate":
        payload = np.array(matrix, dtype=np.complex128)
        payload.setflags(write=False)
        return Gate(GateKind.CONTROLLED_UNITARY, tuple(targets),
                    controls=tuple((int(q), int(t)) for q, t in controls),
                    unitary_payload=payload)

    # Algebra ------------------------------------------------------------

    def matrix(self) -> np.ndarray:
        """Base unitary acting on the targets (controls excluded)."""
        if self.kind in (GateKind.RX, GateKind.RZ):
            if self.angle is None:
                raise CircuitError(f"{self.kind.value} gate needs an angle")
            return rx_matrix(self.angle) if self.kind == GateKind.RX else rz_matrix(self.angle)
        if self.kind == GateKind.CNOT:
            return _FIXED_MATRICES["X"]
        if self.kind == GateKind.CONTROLLED_UNITARY:
            if self.unitary_payload is None:
                raise CircuitError("CONTROLLED_UNITARY gate needs a unitary payload")
            return self.unitary_payload
        return _FIXED_MATRICES[self.kind.value]

    def inverse(self) -> "Gate":
        if self.kind in (GateKind.RX, GateKind.RZ):
            return Gate(self.kind, self.targets, self.controls, angle=-self.angle)
        if self.kind == GateKind.S:
            return Gate(GateKind.S_DAG, self.targets, self.controls)
        if self.kind == GateKind.S_DAG:
            return Gate(GateKind.S, self.targets, self.controls)
        if self.kind == GateKind.CONTROLLED_UNITARY:
            return Gate.unitary(self.targets, self.matrix().conj().T, self.controls)
        return self

    def with_controls(self, extra: Sequence[Control]) -> "Gate":
        return Gate(self.kind, self.targets, tuple(extra) + self.controls,
                    self.angle, self.unitary_payload)

    def remapped(self, offset: int) -> "Gate":
        return Gate(self.kind, tuple(q + offset for q in self.targets),
                    tuple((q + offset, t) for q, t in self.controls),
                    self.angle, self.unitary_payload)

    def validate(self, n_qubits: int) -> None:
        if not self.targets:
            raise CircuitError(f"{self.kind.value} gate has no target")
        control_qubits = [q for q, _ in self.controls]
        everything = list(self.targets) + control_qubits
        for qubit in everything:
            if not 0 <= qubit < n_qubits:
                raise CircuitError(
                    f"qubit index {qubit} out of range for {n_qubits} qubits",
                    gate=self.kind.value, qubit=qubit)
        if len(set(everything)) != len(everything):
            raise CircuitError("gate targets and controls must be distinct qubits",
                               gate=self.kind.value)
        for qubit, trigger in self.controls:
            if trigger not in (0, 1):
                raise CircuitError(f"control trigger on qubit {qubit} must be 0 or 1")
        if self.kind == GateKind.CONTROLLED_UNITARY:
            payload = self.matrix()
            if payload.shape != (2 ** len(self.targets),) * 2:
                raise CircuitError(
                    f"payload shape {payload.shape} does not match {len(self.targets)} targets")
            if not is_unitary(payload):
                raise CircuitError("unitary payload is not unitary", gate=self.kind.value)
        elif len(self.targets) != 1:
            raise CircuitError(f"{self.kind.value} acts on exactly one target")

    def __repr__(self) -> str:
        parts = [self.kind.value, f"targets={self.targets}"]
        if self.controls:
            parts.append(f"controls={self.controls}")
        if self.angle is not None:
            parts.append(f"angle={self.angle:.6g}")
        return f"Gate({', '.join(parts)})"


@dataclass
class Circuit:
    """Ordered gate list over a fixed register."""
    n_qubits: int
    gates: List[Gate] = field(default_factory=list)

    def append(self, gate: Gate) -> "Circuit":
        self.gates.append(gate)
        return self

    def extend(self, gates: Iterable[Gate]) -> "Circuit":
        self.gates.extend(gates)
        return self

    def inverse(self) -> "Circuit":
        return Circuit(self.n_qubits, [gate.inverse() for gate in reversed(self.gates)])

    def controlled(self, controls: Sequence[Control]) -> "Circuit":
        """Same circuit with `controls` added to every gate."""
        return Circuit(self.n_qubits, [gate.with_controls(controls) for gate in self.gates])

    def remapped(self, n_qubits: int, offset: int) -> "Circuit":
        """Embed into a larger register, shifting every qubit index by `offset`."""
        if offset < 0 or offset + self.n_qubits > n_qubits:
            raise CircuitError(
                f"cannot place {self.n_qubits} qubits at offset {offset} in {n_qubits}")
        return Circuit(n_qubits, [gate.remapped(offset) for gate in self.gates])

    def validate(self) -> None:
        if not 1 <= self.n_qubits <= MAX_QUBITS:
            raise CircuitError(f"n_qubits must be in [1, {MAX_QUBITS}], got {self.n_qubits}")
        for gate in self.gates:
            gate.validate(self.n_qubits)

    def __len__(self) -> int:
        return len(self.gates)

    def count(self, kind: GateKind) -> int:
        return sum(1 for gate in self.gates if gate.kind == kind)


class StateVector:
    """Normalised n-qubit pure state. Amplitudes are read-only."""

    def __init__(self, amplitudes: Union[np.ndarray, Sequence[complex]], check_norm: bool = True):
        amplitudes = np.array(amplitudes, dtype=np.complex128).reshape(-1)
        n_qubits = int(round(np.log2(len(amplitudes)))) if len(amplitudes) else 0
        if n_qubits < 1 or 2 ** n_qubits != len(amplitudes):
            raise CircuitError(f"amplitude count {len(amplitudes)} is not 2^n with n >= 1")
        if n_qubits > MAX_QUBITS:
            raise CircuitError(f"{n_qubits} qubits exceeds the {MAX_QUBITS}-qubit cap")
        amplitudes.setflags(write=False)
        self.n_qubits = n_qubits
        self.amplitudes = amplitudes
        if check_norm:
            self.check_norm()

    @classmethod
    def zero(cls, n_qubits: int) -> "StateVector":
        return cls.basis(0, n_qubits)

    @classmethod
    def basis(cls, index: int, n_qubits: int) -> "StateVector":
        if not 1 <= n_qubits <= MAX_QUBITS:
            raise CircuitError(f"n_qubits must be in [1, {MAX_QUBITS}], got {n_qubits}")
        if not 0 <= index < 2 ** n_qubits:
            raise CircuitError(f"basis index {index} out of range for {n_qubits} qubits")
        amplitudes = np.zeros(2 ** n_qubits, dtype=np.complex128)
        amplitudes[index] = 1.0
        return cls(amplitudes)

    def norm_squared(self) -> float:
        return float(np.vdot(self.amplitudes, self.amplitudes).real)

    def check_norm(self) -> None:
        deviation = abs(self.norm_squared() - 1.0)
        if deviation > NORM_TOLERANCE:
            raise NumericalError(f"state norm drifted by {deviation:.3e}",
                                 deviation=deviation)

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def inner(self, other: "StateVector") -> complex:
        """<self|other>."""
        return complex(np.vdot(self.amplitudes, other.amplitudes))

    def tensor(self) -> np.ndarray:
        return self.amplitudes.reshape((2,) * self.n_qubits)

    def __len__(self) -> int:
        return len(self.amplitudes)

    def __repr__(self) -> str:
        return f"StateVector(n_qubits={self.n_qubits})"


# Gate application ------------------------------------------------------

def _apply_to_tensor(psi: np.ndarray, gate: Gate, n_qubits: int) -> None:
    """Apply `gate` in place to a (batch, 2, ..., 2) amplitude tensor."""
    index: List[Union[slice, int]] = [slice(None)] * (n_qubits + 1)
    for qubit, trigger in gate.controls:
        index[qubit + 1] = trigger
    # Integer indexing removes the control axes; the result is a view.
    sub = psi[tuple(index)]
    control_qubits = sorted(q for q, _ in gate.controls)
    axes = [1 + t - sum(1 for c in control_qubits if c < t) for t in gate.targets]
    k = len(gate.targets)
    moved = np.moveaxis(sub, axes, list(range(1, k + 1)))
    shape = moved.shape
    flat = moved.reshape(shape[0], 2 ** k, -1)
    updated = np.einsum("ij,bjr->bir", gate.matrix(), flat).reshape(shape)
    sub[...] = np.moveaxis(updated, list(range(1, k + 1)), axes)


def apply_gate_batch(amplitudes: np.ndarray, gate: Gate, n_qubits: int) -> np.ndarray:
    """Apply one gate to every row of a (batch, 2^n) amplitude array; returns a new array."""
    gate.validate(n_qubits)
    batch = np.array(amplitudes, dtype=np.complex128).reshape((-1,) + (2,) * n_qubits)
    _apply_to_tensor(batch, gate, n_qubits)
    return batch.reshape(-1, 2 ** n_qubits)


def run_circuit_batch(circuit: Circuit, amplitudes: np.ndarray) -> np.ndarray:
    """Run a circuit on every row of a (batch, 2^n) amplitude array."""
    circuit.validate()
    amplitudes = np.asarray(amplitudes)
    if amplitudes.ndim != 2 or amplitudes.shape[1] != 2 ** circuit.n_qubits:
        raise CircuitError(
            f"batch shape {amplitudes.shape} does not match {circuit.n_qubits} qubits")
    batch = np.array(amplitudes, dtype=np.complex128).reshape((-1,) + (2,) * circuit.n_qubits)
    for gate in circuit.gates:
        _apply_to_tensor(batch, gate, circuit.n_qubits)
    return batch.reshape(-1, 2 ** circuit.n_qubits)


def apply_gate(state: StateVector, gate: Gate) -> StateVector:
    """Return the state after `gate`; the input state is left untouched."""
    out = apply_gate_batch(state.amplitudes[None, :], gate, state.n_qubits)
    return StateVector(out[0])


def run_circuit(circuit: Circuit, initial: Optional[StateVector] = None) -> StateVector:
    """Apply the circuit's gates in order, starting from `initial` (default |0...0>)."""
    if initial is None:
        initial = StateVector.zero(circuit.n_qubits)
    if initial.n_qubits != circuit.n_qubits:
        raise CircuitError(
            f"circuit has {circuit.n_qubits} qubits but the state has {initial.n_qubits}")
    out = run_circuit_batch(circuit, initial.amplitudes[None, :])
    return StateVector(out[0])


def circuit_matrix(circuit: Circuit) -> np.ndarray:
    """Dense 2^n x 2^n unitary of the circuit (column k = circuit applied to |b_k>)."""
    dim = 2 ** circuit.n_qubits
    columns = run_circuit_batch(circuit, np.eye(dim, dtype=np.complex128))
    return columns.T


# Measurement -----------------------------------------------------------

def _check_subset(n_qubits: int, qubit_subset: Sequence[int]) -> List[int]:
    subset = [int(q) for q in qubit_subset]
    if not subset:
        raise CircuitError("qubit subset is empty")
    if len(set(subset)) != len(subset):
        raise CircuitError(f"qubit subset {subset} has duplicates")
    for qubit in subset:
        if not 0 <= qubit < n_qubits:
            raise CircuitError(f"qubit {qubit} out of range for {n_qubits} qubits")
    return subset


def _parse_outcome(outcome: Union[str, Sequence[int]], length: int) -> List[int]:
    bits = [int(ch) for ch in outcome] if isinstance(outcome, str) else [int(b) for b in outcome]
    if len(bits) != length:
        raise CircuitError(f"outcome {outcome!r} has {len(bits)} bits, expected {length}")
    if any(bit not in (0, 1) for bit in bits):
        raise CircuitError(f"outcome {outcome!r} must contain only 0/1")
    return bits


def marginal_distribution(state: StateVector, qubit_subset: Sequence[int]) -> np.ndarray:
    """Outcome distribution of a qubit subset, indexed with the first listed qubit as MSB."""
    subset = _check_subset(state.n_qubits, qubit_subset)
    probabilities = state.probabilities().reshape((2,) * state.n_qubits)
    others = tuple(q for q in range(state.n_qubits) if q not in subset)
    marginal = probabilities.sum(axis=others) if others else probabilities
    # Remaining axes are in ascending qubit order; reorder to the requested order.
    ascending = sorted(subset)
    marginal = np.transpose(marginal, [ascending.index(q) for q in subset])
    return marginal.reshape(-1)


def measure_probability(state: StateVector, qubit_subset: Sequence[int],
                        outcome: Union[str, Sequence[int]]) -> float:
    """Probability that measuring `qubit_subset` yields `outcome`."""
    subset = _check_subset(state.n_qubits, qubit_subset)
    bits = _parse_outcome(outcome, len(subset))
    index = int("".join(str(b) for b in bits), 2)
    probability = float(marginal_distribution(state, subset)[index])
    return min(max(probability, 0.0), 1.0)


def derive_seed(seed: int, *path: int) -> np.random.SeedSequence:
    """Child seed bound to `path` (e.g. component index), independent of scheduling."""
    return np.random.SeedSequence(int(seed), spawn_key=tuple(int(p) for p in path))


def sample_distribution(probabilities: np.ndarray, shots: int,
                        seed: Union[int, np.random.SeedSequence]) -> np.ndarray:
    """Multinomial counts for an outcome distribution."""
    if shots < 1:
        raise CircuitError(f"shots must be >= 1, got {shots}")
    p = np.clip(np.asarray(probabilities, dtype=float), 0.0, None)
    p = p / p.sum()
    rng = np.random.default_rng(seed)
    return rng.multinomial(int(shots), p)


def sample_counts(state: StateVector, qubit_subset: Sequence[int], shots: int,
                  seed: Union[int, np.random.SeedSequence]) -> Dict[str, int]:
    """Histogram bitstring -> count of `shots` measurements of `qubit_subset`."""
    subset = _check_subset(state.n_qubits, qubit_subset)
    counts = sample_distribution(marginal_distribution(state, subset), shots, seed)
    width = len(subset)
    return {format(i, f"0{width}b"): int(c) for i, c in enumerate(counts) if c > 0}
