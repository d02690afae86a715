#!/usr/bin/env python3
"""
Feature Encoding

Turns preprocessed pixel vectors into quantum states or preparation
circuits:

- AMPLITUDE_OVERFLOW: 2^n - 1 pixels scaled by (2^n - 1)^(-1/2); the last
  basis amplitude absorbs whatever norm is left, so a pixel's amplitude
  does not depend on the brightness of the rest of the image.
- AMPLITUDE_NORMALIZED: pixels divided by their norm.
- ANGLE: one RX(feature) rotation per qubit.
"""

from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, Optional, Sequence

import numpy as np

from errors import EncodingError
from statevector_simulator import Circuit, Gate, StateVector, run_circuit

AMPLITUDE_TOLERANCE = 1e-10
PIXEL_TOLERANCE = 1e-12


class EncodingKind(str, Enum):
    AMPLITUDE_OVERFLOW = "amplitude_overflow"
    AMPLITUDE_NORMALIZED = "amplitude_normalized"
    ANGLE = "angle"


class FitPolicy(str, Enum):
    """What to do when an image has more pixels than overflow slots."""
    TRUNCATE_LAST = "truncate_last"
    PAD_NEXT_QUBIT = "pad_next_qubit"
    PLAIN_NORMALIZE = "plain_normalize"


@dataclass(frozen=True)
class EncodingMode:
    kind: EncodingKind
    n_qubits: int
    fit_policy: FitPolicy = FitPolicy.TRUNCATE_LAST

    @property
    def scale(self) -> Optional[float]:
        """Per-pixel amplitude scale of the overflow scheme."""
        if self.kind != EncodingKind.AMPLITUDE_OVERFLOW:
            return None
        return float((2 ** self.n_qubits - 1) ** -0.5)

    @property
    def feature_slots(self) -> int:
        if self.kind == EncodingKind.AMPLITUDE_OVERFLOW:
            return 2 ** self.n_qubits - 1
        if self.kind == EncodingKind.AMPLITUDE_NORMALIZED:
            return 2 ** self.n_qubits
        return self.n_qubits

    @property
    def is_amplitude(self) -> bool:
        return self.kind != EncodingKind.ANGLE

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": self.kind.value,
            "n_qubits": self.n_qubits,
            "fit_policy": self.fit_policy.value,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "EncodingMode":
        try:
            return cls(
                kind=EncodingKind(data["kind"]),
                n_qubits=int(data["n_qubits"]),
                fit_policy=FitPolicy(data.get("fit_policy", FitPolicy.TRUNCATE_LAST.value)),
            )
        except (KeyError, ValueError) as e:
            raise EncodingError(f"invalid encoding description {data!r}: {e}")


@dataclass
class EncodedInput:
    """Raw features together with the state data they encode to."""
    raw_features: np.ndarray
    mode: EncodingMode
    amplitudes: Optional[np.ndarray] = None
    angles: Optional[np.ndarray] = None
    used_features: int = 0

    def state(self) -> StateVector:
        if self.amplitudes is not None:
            return StateVector(self.amplitudes)
        return run_circuit(encode_angle(self.angles, self.mode.n_qubits))

    @property
    def overflow_amplitude(self) -> Optional[float]:
        if self.mode.kind != EncodingKind.AMPLITUDE_OVERFLOW:
            return None
        return float(np.real(self.amplitudes[-1]))


# Mode resolution --------------------------------------------------------

def fit_encoding_mode(feature_count: int, n_qubits: int, kind: EncodingKind,
                      fit_policy: FitPolicy = FitPolicy.TRUNCATE_LAST) -> EncodingMode:
    """Resolve the concrete encoding for `feature_count` features on `n_qubits` qubits.

    Only the overflow scheme can run out of slots by one pixel (64 pixels vs
    63 slots at 6 qubits); `fit_policy` decides whether to drop the last
    pixel, grow the register, or fall back to plain normalisation.
    """
    mode = EncodingMode(kind, n_qubits, fit_policy)
    if kind != EncodingKind.AMPLITUDE_OVERFLOW or feature_count <= mode.feature_slots:
        return mode
    if fit_policy == FitPolicy.TRUNCATE_LAST:
        if feature_count > mode.feature_slots + 1:
            raise EncodingError(
                f"{feature_count} features do not fit {mode.feature_slots} overflow slots of "
                f"{n_qubits} qubits; truncate_last only drops a single trailing pixel")
        return mode
    if fit_policy == FitPolicy.PAD_NEXT_QUBIT:
        needed = int(np.ceil(np.log2(feature_count + 1)))
        return EncodingMode(kind, needed, fit_policy)
    if feature_count > 2 ** n_qubits:
        raise EncodingError(f"{feature_count} features exceed 2^{n_qubits} amplitudes")
    return EncodingMode(EncodingKind.AMPLITUDE_NORMALIZED, n_qubits, fit_policy)


def fitted_features(features: Sequence[float], mode: EncodingMode) -> np.ndarray:
    """Features actually fed to the encoder.

    truncate_last drops the final pixel when there is exactly one more
    pixel than overflow slots; longer inputs reach the encoder and fail there.
    """
    features = np.asarray(features, dtype=float).reshape(-1)
    if (mode.kind == EncodingKind.AMPLITUDE_OVERFLOW
            and mode.fit_policy == FitPolicy.TRUNCATE_LAST
            and len(features) == mode.feature_slots + 1):
        return features[: mode.feature_slots]
    return features


def encode(features: Sequence[float], mode: EncodingMode) -> EncodedInput:
    """Encode raw features with `mode`, applying its fit policy first."""
    raw = np.asarray(features, dtype=float).reshape(-1)
    used = fitted_features(raw, mode)
    if mode.kind == EncodingKind.AMPLITUDE_OVERFLOW:
        encoded = encode_amplitude_overflow(used, mode.n_qubits)
    elif mode.kind == EncodingKind.AMPLITUDE_NORMALIZED:
        encoded = encode_amplitude_normalized(used, mode.n_qubits)
    else:
        if len(used) > mode.n_qubits:
            raise EncodingError(f"{len(used)} angle features exceed {mode.n_qubits} qubits")
        encoded = EncodedInput(raw_features=used, mode=mode, angles=used.copy(),
                               used_features=len(used))
    encoded.raw_features = raw
    encoded.mode = mode
    return encoded


# Amplitude encoders -----------------------------------------------------

def _check_pixels(features: np.ndarray) -> None:
    if np.any(~np.isfinite(features)):
        raise EncodingError("features must be finite")
    low, high = float(features.min(initial=0.0)), float(features.max(initial=0.0))
    if low < -PIXEL_TOLERANCE or high > 1.0 + PIXEL_TOLERANCE:
        raise EncodingError(f"features must lie in [0, 1], got range [{low:.6g}, {high:.6g}]")


def encode_amplitude_overflow(features: Sequence[float], n_qubits: int) -> EncodedInput:
    features = np.asarray(features, dtype=float).reshape(-1)
    slots = 2 ** n_qubits - 1
    if n_qubits < 1:
        raise EncodingError(f"n_qubits must be >= 1, got {n_qubits}")
    if len(features) > slots:
        raise EncodingError(
            f"{len(features)} features exceed the {slots} overflow slots of {n_qubits} qubits")
    _check_pixels(features)
    features = np.clip(features, 0.0, 1.0)
    scale = slots ** -0.5
    amplitudes = np.zeros(2 ** n_qubits)
    amplitudes[: len(features)] = scale * features
    amplitudes[-1] = np.sqrt(max(0.0, 1.0 - float(np.sum(amplitudes[:-1] ** 2))))
    amplitudes /= np.linalg.norm(amplitudes)
    mode = EncodingMode(EncodingKind.AMPLITUDE_OVERFLOW, n_qubits)
    return EncodedInput(raw_features=features, mode=mode, amplitudes=amplitudes,
                        used_features=len(features))


def encode_amplitude_normalized(features: Sequence[float], n_qubits: int) -> EncodedInput:
    features = np.asarray(features, dtype=float).reshape(-1)
    if len(features) > 2 ** n_qubits:
        raise EncodingError(f"{len(features)} features exceed 2^{n_qubits} amplitudes")
    if np.any(~np.isfinite(features)):
        raise EncodingError("features must be finite")
    norm = float(np.linalg.norm(features))
    if norm == 0.0:
        raise EncodingError(
            "cannot normalise an all-zero input; use a non-degenerate baseline in this mode")
    amplitudes = np.zeros(2 ** n_qubits)
    amplitudes[: len(features)] = features / norm
    mode = EncodingMode(EncodingKind.AMPLITUDE_NORMALIZED, n_qubits)
    return EncodedInput(raw_features=features, mode=mode, amplitudes=amplitudes,
                        used_features=len(features))


def encoded_from_amplitudes(amplitudes: Sequence[complex]) -> EncodedInput:
    """Wrap an already-normalised (possibly complex) amplitude vector."""
    amplitudes = np.asarray(amplitudes, dtype=np.complex128).reshape(-1)
    state = StateVector(amplitudes)
    values = amplitudes if np.any(np.abs(amplitudes.imag) > 0) else amplitudes.real.copy()
    mode = EncodingMode(EncodingKind.AMPLITUDE_NORMALIZED, state.n_qubits)
    return EncodedInput(raw_features=np.abs(amplitudes), mode=mode, amplitudes=values,
                        used_features=len(amplitudes))


# Basis states and angle embedding ---------------------------------------

def basis_bits(k: int, n_qubits: int) -> Sequence[int]:
    """Bits of b_k, qubit 0 first (most significant)."""
    return [(k >> (n_qubits - 1 - q)) & 1 for q in range(n_qubits)]


def basis_state_circuit(k: int, n_qubits: int) -> Circuit:
    """V(b_k): an X on every qubit whose bit in b_k is 1."""
    if not 0 <= k < 2 ** n_qubits:
        raise EncodingError(f"basis index {k} out of range for {n_qubits} qubits")
    circuit = Circuit(n_qubits)
    for qubit, bit in enumerate(basis_bits(k, n_qubits)):
        if bit:
            circuit.append(Gate.x(qubit))
    return circuit


def prepare_basis_state(k: int, n_qubits: int) -> StateVector:
    if not 0 <= k < 2 ** n_qubits:
        raise EncodingError(f"basis index {k} out of range for {n_qubits} qubits")
    return StateVector.basis(k, n_qubits)


def encode_angle(features: Sequence[float], n_qubits: int) -> Circuit:
    """RX(feature_i) on qubit i."""
    features = np.asarray(features, dtype=float).reshape(-1)
    if len(features) > n_qubits:
        raise EncodingError(f"{len(features)} angle features exceed {n_qubits} qubits")
    circuit = Circuit(n_qubits)
    for qubit, angle in enumerate(features):
        circuit.append(Gate.rx(qubit, float(angle)))
    return circuit


# State preparation ------------------------------------------------------

def ry_gates(qubit: int, theta: float, controls=()) -> Sequence[Gate]:
    """RY(theta) built as RZ(pi/2) RX(theta) RZ(-pi/2), exact including phase."""
    return [
        Gate.rz(qubit, -np.pi / 2).with_controls(controls),
        Gate.rx(qubit, theta).with_controls(controls),
        Gate.rz(qubit, np.pi / 2).with_controls(controls),
    ]


def _prefix_controls(prefix: int, length: int):
    return tuple((q, (prefix >> (length - 1 - q)) & 1) for q in range(length))


def amplitude_state_preparation_circuit(target, tolerance: float = 1e-12) -> Circuit:
    """Circuit V(x) with V(x)|0...0> = |x>, built from multiplexed rotations.

    Qubit j is rotated by RY(theta_p), one rotation per value p of qubits
    0..j-1, where theta_p splits the norm of the subtree p between its two
    children. On the last qubit the signed amplitudes are used, so real
    targets are reproduced exactly, signs included. Complex targets get an
    extra diagonal phase stage and, if needed, an explicit global phase so
    the circuit stays exact when it is controlled.
    """
    amplitudes = target.amplitudes if isinstance(target, EncodedInput) else target
    amplitudes = np.asarray(amplitudes, dtype=np.complex128).reshape(-1)
    n_qubits = int(round(np.log2(len(amplitudes)))) if len(amplitudes) > 1 else 0
    if n_qubits < 1 or 2 ** n_qubits != len(amplitudes):
        raise EncodingError(f"target length {len(amplitudes)} is not 2^n")
    norm_error = abs(float(np.sum(np.abs(amplitudes) ** 2)) - 1.0)
    if norm_error > AMPLITUDE_TOLERANCE:
        raise EncodingError(f"target is not normalised (|norm^2 - 1| = {norm_error:.3e})")

    peak = int(np.argmax(np.abs(amplitudes)))
    if abs(amplitudes[peak] - 1.0) <= tolerance:
        return basis_state_circuit(peak, n_qubits)

    is_real = bool(np.all(np.abs(amplitudes.imag) <= tolerance))
    leaf = amplitudes.real if is_real else np.abs(amplitudes)
    circuit = Circuit(n_qubits)

    # Magnitude stage: subtree norms level by level.
    for level in range(n_qubits):
        groups = 2 ** level
        if level == n_qubits - 1:
            pairs = leaf.reshape(groups, 2)
            zeros, ones = pairs[:, 0], pairs[:, 1]
        else:
            weights = (np.abs(amplitudes) ** 2).reshape(groups, 2, -1).sum(axis=2)
            zeros, ones = np.sqrt(weights[:, 0]), np.sqrt(weights[:, 1])
        for prefix in range(groups):
            theta = 2.0 * np.arctan2(ones[prefix], zeros[prefix])
            if abs(theta) <= tolerance:
                continue
            circuit.extend(ry_gates(level, theta, _prefix_controls(prefix, level)))

    if not is_real:
        phases = np.angle(amplitudes)
        for level in range(n_qubits - 1, -1, -1):
            pairs = phases.reshape(-1, 2)
            differences = pairs[:, 1] - pairs[:, 0]
            for prefix, lam in enumerate(differences):
                if abs(lam) > tolerance:
                    circuit.append(Gate.rz(level, lam).with_controls(
                        _prefix_controls(prefix, level)))
            phases = pairs.mean(axis=1)
        global_phase = float(phases[0])
        if abs(global_phase) > tolerance:
            circuit.append(Gate.unitary((0,), np.exp(1j * global_phase) * np.eye(2)))
    return circuit
