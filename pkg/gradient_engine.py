#!/usr/bin/env python3
"""
Gradient Engine

Input and parameter gradients of a QuantumModel:

- EXACT: 2 Re <b_k| U^dagger O U |x> for every k from one statevector pass.
- HADAMARD_SINGLE: one ancilla per component; the component sits in the
  probability of reading the ancilla as 0, P(A=0) = (1 + Re g_k) / 2.
- HADAMARD_MULTI: m ancillas estimate 2^m - 1 components at once; the
  ancilla distribution gives a linear system in the components.
- PARAM_SHIFT: [F(theta_i + pi/2) - F(theta_i - pi/2)] / 2 for RX/RZ
  parameters and for the RX angles of an angle embedding.

Layout of the Hadamard-test registers: ancillas are qubits 0..m-1, the
data register follows at offset m.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from errors import GradientError, NearOverflowSingularity
from feature_encoding import (
    EncodedInput, EncodingKind, amplitude_state_preparation_circuit, basis_state_circuit,
    encode, encode_angle,
)
from quantum_model import (
    QuantumModel, conjugated_observable_circuit, expectation, input_state,
    expectation_batch,
)
from statevector_simulator import (
    Circuit, Gate, StateVector, derive_seed, marginal_distribution, run_circuit,
    sample_distribution,
)

MAX_ANCILLAS = 4
OVERFLOW_EPSILON = 1e-9
SHIFT = np.pi / 2
SHIFT_COEFFICIENT = 0.5

Seed = Union[int, np.random.SeedSequence]


class GradientMethod(str, Enum):
    EXACT = "exact"
    HADAMARD_SINGLE = "hadamard_single"
    HADAMARD_MULTI = "hadamard_multi"
    PARAM_SHIFT = "param_shift"


class Part(str, Enum):
    REAL = "real"
    IMAG = "imag"


@dataclass
class GradientVector:
    values: np.ndarray
    method: GradientMethod
    shots: Optional[int] = None  # None: exact probabilities
    seed: Optional[int] = None
    ancillas: Optional[int] = None
    part: Part = Part.REAL
    indices: Optional[Tuple[int, ...]] = None  # set for partial vectors

    @property
    def is_exact(self) -> bool:
        return self.shots is None

    def to_dict(self) -> Dict:
        return {
            "values": [float(v) for v in self.values],
            "method": self.method.value,
            "shots": self.shots if self.shots is not None else "exact",
            "seed": self.seed,
            "ancillas": self.ancillas,
            "part": self.part.value,
            "indices": list(self.indices) if self.indices is not None else None,
        }


def walsh_matrix(m: int) -> np.ndarray:
    """W[s, t] = (-1)^popcount(s & t)."""
    size = 2 ** m
    s = np.arange(size)[:, None]
    t = np.arange(size)[None, :]
    overlap = s & t
    parity = np.zeros_like(overlap)
    for bit in range(m):
        parity ^= (overlap >> bit) & 1
    return np.where(parity == 0, 1, -1)


@dataclass
class AncillaLinearSystem:
    """P(s) = 4^-m (2^m + 2 sum_j sigma[s, j] Re g_j) for every ancilla outcome s.

    Component j is prepared on ancilla bitstring j; the input branch uses
    the all-ones bitstring, so sigma[s, j] = W[s, j] * W[s, 2^m - 1].
    """
    m: int
    sign_matrix: np.ndarray
    probabilities: np.ndarray
    component_indices: Tuple[int, ...]

    @classmethod
    def build(cls, m: int, probabilities: Sequence[float],
              component_indices: Sequence[int]) -> "AncillaLinearSystem":
        return cls(m, walsh_matrix(m), np.asarray(probabilities, dtype=float),
                   tuple(int(k) for k in component_indices))

    @property
    def coefficients(self) -> np.ndarray:
        size = 2 ** self.m
        return self.sign_matrix[:, : size - 1] * self.sign_matrix[:, [size - 1]]

    def expected_probabilities(self, real_parts: Sequence[float]) -> np.ndarray:
        size = 2 ** self.m
        return (size + 2 * self.coefficients @ np.asarray(real_parts, dtype=float)) / size ** 2

    def solve(self) -> np.ndarray:
        """Least-squares Re g_j over all 2^m equations."""
        total = float(np.sum(self.probabilities))
        if abs(total - 1.0) > 1e-6:
            raise GradientError(f"ancilla probabilities sum to {total:.8f}, not 1")
        size = 2 ** self.m
        rhs = (size ** 2 * self.probabilities - size) / 2.0
        solution, *_ = np.linalg.lstsq(self.coefficients.astype(float), rhs, rcond=None)
        return solution

    def components(self) -> np.ndarray:
        return 2.0 * self.solve()


# Shared building blocks ----------------------------------------------------

def _require_amplitude_input(encoded: EncodedInput, what: str) -> None:
    if encoded.amplitudes is None or encoded.mode.kind == EncodingKind.ANGLE:
        raise GradientError(
            f"{what} needs an amplitude-encoded input; use parameter_shift_gradient "
            "or angle_input_gradient for angle embeddings")


def _unit_input(model: QuantumModel, encoded: EncodedInput) -> Tuple[np.ndarray, float]:
    """Normalised amplitudes plus the norm they were divided by.

    Points on an amplitude-space integration path are not normalised; the
    bilinear form scales linearly, so the circuit runs on x/|x| and the
    result is multiplied back by |x|.
    """
    _require_amplitude_input(encoded, "input gradient")
    amplitudes = np.asarray(encoded.amplitudes, dtype=np.complex128).reshape(-1)
    if len(amplitudes) != 2 ** model.n_qubits:
        raise GradientError(
            f"input has {len(amplitudes)} amplitudes, model needs {2 ** model.n_qubits}")
    norm = float(np.linalg.norm(amplitudes))
    if norm == 0.0:
        raise GradientError("input amplitudes are all zero")
    return amplitudes / norm, norm


def _bitstring_controls(s: int, m: int) -> Tuple[Tuple[int, int], ...]:
    return tuple((a, (s >> (m - 1 - a)) & 1) for a in range(m))


def _controlled_block(circuit: Circuit, total: int, m: int, s: int) -> List[Gate]:
    return circuit.remapped(total, m).controlled(_bitstring_controls(s, m)).gates


# Exact path ------------------------------------------------------------

def _conjugated_action(model: QuantumModel, encoded: EncodedInput) -> np.ndarray:
    """U^dagger O U |x> as an amplitude vector (unnormalised x allowed)."""
    unit, norm = _unit_input(model, encoded)
    state = run_circuit(conjugated_observable_circuit(model), StateVector(unit))
    return norm * state.amplitudes


def exact_input_gradient(model: QuantumModel, encoded: EncodedInput) -> GradientVector:
    """dF/dc_k = 2 Re <b_k| U^dagger O U |x> for all k in one pass."""
    values = 2.0 * np.real(_conjugated_action(model, encoded))
    return GradientVector(values, GradientMethod.EXACT)


def exact_input_gradient_imag(model: QuantumModel, encoded: EncodedInput) -> GradientVector:
    """dF/dd_k = 2 Im <b_k| U^dagger O U |x> (imaginary parts of the amplitudes)."""
    values = 2.0 * np.imag(_conjugated_action(model, encoded))
    return GradientVector(values, GradientMethod.EXACT, part=Part.IMAG)


# Single-ancilla Hadamard test -----------------------------------------------

def hadamard_test_circuit(model: QuantumModel, encoded: EncodedInput, k: int,
                          part: Part = Part.REAL) -> Circuit:
    """H, [S^dagger], C1-V(x), C0-V(b_k), C1-(U^dagger O U), H on ancilla 0."""
    n = model.n_qubits
    if not 0 <= k < 2 ** n:
        raise GradientError(f"component index {k} out of range for {n} qubits")
    unit, _ = _unit_input(model, encoded)
    total = n + 1
    circuit = Circuit(total, [Gate.h(0)])
    if part == Part.IMAG:
        circuit.append(Gate.s_dag(0))
    circuit.extend(_controlled_block(amplitude_state_preparation_circuit(unit), total, 1, 1))
    circuit.extend(_controlled_block(basis_state_circuit(k, n), total, 1, 0))
    circuit.extend(_controlled_block(conjugated_observable_circuit(model), total, 1, 1))
    circuit.append(Gate.h(0))
    return circuit


class HadamardTestRunner:
    """Evaluates single-ancilla Hadamard tests for one (model, input) pair.

    C0-V(b_k) and the two C1 blocks act on different ancilla branches and
    commute, so the expensive C1-V(x), C1-(U^dagger O U) prefix is simulated
    once and only C0-V(b_k) and the closing H are run per component.
    """

    def __init__(self, model: QuantumModel, encoded: EncodedInput, part: Part = Part.REAL):
        unit, norm = _unit_input(model, encoded)
        self.model = model
        self.part = part
        self.norm = norm
        n = model.n_qubits
        total = n + 1
        prefix = Circuit(total, [Gate.h(0)])
        if part == Part.IMAG:
            prefix.append(Gate.s_dag(0))
        prefix.extend(_controlled_block(amplitude_state_preparation_circuit(unit), total, 1, 1))
        prefix.extend(_controlled_block(conjugated_observable_circuit(model), total, 1, 1))
        self.prefix_state = run_circuit(prefix)

    def probability_zero(self, k: int) -> float:
        n = self.model.n_qubits
        if not 0 <= k < 2 ** n:
            raise GradientError(f"component index {k} out of range for {n} qubits")
        suffix = Circuit(n + 1, _controlled_block(basis_state_circuit(k, n), n + 1, 1, 0))
        suffix.append(Gate.h(0))
        state = run_circuit(suffix, self.prefix_state)
        return float(marginal_distribution(state, [0])[0])

    def component(self, k: int, shots: Optional[int] = None, seed: Seed = 0) -> float:
        p_zero = self.probability_zero(k)
        if shots is not None:
            counts = sample_distribution([p_zero, 1.0 - p_zero], shots, seed)
            p_zero = counts[0] / shots
        return self.norm * (4.0 * p_zero - 2.0)


def hadamard_test_gradient_component(model: QuantumModel, encoded: EncodedInput, k: int,
                                     shots: Optional[int] = None, seed: int = 0,
                                     part: Part = Part.REAL) -> float:
    """Component k of the input gradient, 2 (2 P(A=0) - 1), from one Hadamard test."""
    runner = HadamardTestRunner(model, encoded, part)
    return runner.component(k, shots, derive_seed(seed, k))


def hadamard_input_gradient(model: QuantumModel, encoded: EncodedInput,
                            shots: Optional[int] = None, seed: int = 0,
                            part: Part = Part.REAL,
                            components: Optional[Sequence[int]] = None,
                            workers: int = 1) -> GradientVector:
    """Every (or the selected) component via single-ancilla tests, seeds bound to k."""
    runner = HadamardTestRunner(model, encoded, part)
    dim = 2 ** model.n_qubits
    indices = list(range(dim)) if components is None else [int(k) for k in components]

    def job(k: int) -> float:
        return runner.component(k, shots, derive_seed(seed, k))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(job, indices))
    else:
        results = [job(k) for k in indices]
    values = np.full(dim, np.nan) if components is not None else np.zeros(dim)
    values[indices] = results
    return GradientVector(values, GradientMethod.HADAMARD_SINGLE, shots=shots, seed=seed,
                          ancillas=1, part=part,
                          indices=tuple(indices) if components is not None else None)


# Multi-ancilla Hadamard test -------------------------------------------------

def _check_group(model: QuantumModel, indices: Sequence[int], m: int) -> List[int]:
    if not 1 <= m <= MAX_ANCILLAS:
        raise GradientError(f"ancilla count must be in [1, {MAX_ANCILLAS}], got {m}")
    indices = [int(k) for k in indices]
    if len(indices) != 2 ** m - 1:
        raise GradientError(f"{m} ancillas estimate {2 ** m - 1} components, got {len(indices)}")
    if len(set(indices)) != len(indices):
        raise GradientError(f"component indices {indices} contain duplicates")
    for k in indices:
        if not 0 <= k < 2 ** model.n_qubits:
            raise GradientError(f"component index {k} out of range")
    return indices


def hadamard_multi_circuit(model: QuantumModel, encoded: EncodedInput,
                           component_indices: Sequence[int], m: int) -> Circuit:
    """H on all ancillas; C[1..1]-V(x); C[s]-V(b_j(s)) for s != 1..1; C[1..1]-(U^dagger O U); H."""
    indices = _check_group(model, component_indices, m)
    unit, _ = _unit_input(model, encoded)
    n = model.n_qubits
    total = m + n
    all_ones = 2 ** m - 1
    circuit = Circuit(total, [Gate.h(a) for a in range(m)])
    circuit.extend(_controlled_block(amplitude_state_preparation_circuit(unit), total, m, all_ones))
    for s, k in enumerate(indices):
        circuit.extend(_controlled_block(basis_state_circuit(k, n), total, m, s))
    circuit.extend(_controlled_block(conjugated_observable_circuit(model), total, m, all_ones))
    circuit.extend(Gate.h(a) for a in range(m))
    return circuit


class MultiAncillaRunner:
    """Shared-prefix evaluation of the m-ancilla circuit (see HadamardTestRunner)."""

    def __init__(self, model: QuantumModel, encoded: EncodedInput, m: int):
        if not 1 <= m <= MAX_ANCILLAS:
            raise GradientError(f"ancilla count must be in [1, {MAX_ANCILLAS}], got {m}")
        if 2 ** m - 1 > 2 ** model.n_qubits:
            raise GradientError(f"{m} ancillas need more components than {model.n_qubits} qubits have")
        unit, norm = _unit_input(model, encoded)
        self.model = model
        self.m = m
        self.norm = norm
        n = model.n_qubits
        total = m + n
        all_ones = 2 ** m - 1
        prefix = Circuit(total, [Gate.h(a) for a in range(m)])
        prefix.extend(_controlled_block(amplitude_state_preparation_circuit(unit), total, m, all_ones))
        prefix.extend(_controlled_block(conjugated_observable_circuit(model), total, m, all_ones))
        self.prefix_state = run_circuit(prefix)

    def distribution(self, indices: Sequence[int]) -> np.ndarray:
        indices = _check_group(self.model, indices, self.m)
        n, m = self.model.n_qubits, self.m
        total = m + n
        suffix = Circuit(total)
        for s, k in enumerate(indices):
            suffix.extend(_controlled_block(basis_state_circuit(k, n), total, m, s))
        suffix.extend(Gate.h(a) for a in range(m))
        return marginal_distribution(run_circuit(suffix, self.prefix_state), list(range(m)))

    def system(self, indices: Sequence[int], shots: Optional[int] = None,
               seed: Seed = 0) -> AncillaLinearSystem:
        probabilities = self.distribution(indices)
        if shots is not None:
            probabilities = sample_distribution(probabilities, shots, seed) / shots
        return AncillaLinearSystem.build(self.m, probabilities, indices)

    def components(self, indices: Sequence[int], shots: Optional[int] = None,
                   seed: Seed = 0) -> np.ndarray:
        return self.norm * self.system(indices, shots, seed).components()


def hadamard_multi_gradient(model: QuantumModel, encoded: EncodedInput,
                            component_indices: Sequence[int], m: int,
                            shots: Optional[int] = None, seed: int = 0) -> GradientVector:
    """2^m - 1 components from one m-ancilla circuit; other entries are NaN."""
    indices = _check_group(model, component_indices, m)
    runner = MultiAncillaRunner(model, encoded, m)
    found = runner.components(indices, shots, derive_seed(seed, *indices))
    values = np.full(2 ** model.n_qubits, np.nan)
    values[indices] = found
    return GradientVector(values, GradientMethod.HADAMARD_MULTI, shots=shots, seed=seed,
                          ancillas=m, indices=tuple(indices))


def component_groups(dim: int, m: int) -> List[Tuple[List[int], int]]:
    """Split range(dim) into groups of 2^m - 1; returns (group, real_count) pairs.

    A short last group is topped up with indices from earlier groups; their
    estimates are discarded.
    """
    width = 2 ** m - 1
    groups = []
    for start in range(0, dim, width):
        group = list(range(start, min(start + width, dim)))
        real = len(group)
        filler = (k for k in range(dim) if k not in group)
        while len(group) < width:
            group.append(next(filler))
        groups.append((group, real))
    return groups


def hadamard_multi_input_gradient(model: QuantumModel, encoded: EncodedInput, m: int,
                                  shots: Optional[int] = None, seed: int = 0,
                                  workers: int = 1) -> GradientVector:
    """All 2^n components, 2^m - 1 at a time."""
    runner = MultiAncillaRunner(model, encoded, m)
    dim = 2 ** model.n_qubits
    groups = component_groups(dim, m)

    def job(item: Tuple[List[int], int]) -> np.ndarray:
        group, _ = item
        return runner.components(group, shots, derive_seed(seed, *group))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(job, groups))
    else:
        results = [job(item) for item in groups]
    values = np.zeros(dim)
    for (group, real), found in zip(groups, results):
        values[group[:real]] = found[:real]
    return GradientVector(values, GradientMethod.HADAMARD_MULTI, shots=shots, seed=seed,
                          ancillas=m)


def estimator_standard_error(probabilities: Sequence[float], m: int, slot: int,
                             shots: int) -> float:
    """Standard error of component `slot` estimated from `shots` ancilla samples.

    Each component is 2^m sum_s sigma[s, slot] P(s) minus a constant, so its
    variance is 4^m (1 - mu^2) / shots with mu = sum_s sigma[s, slot] P(s).
    For m = 1 this is the binomial 4 sqrt(p (1 - p) / shots).
    """
    system = AncillaLinearSystem.build(m, probabilities, range(2 ** m - 1))
    mu = float(system.coefficients[:, slot] @ system.probabilities)
    return float(2 ** m * np.sqrt(max(0.0, 1.0 - mu ** 2) / shots))


def component_standard_errors(model: QuantumModel, encoded: EncodedInput, m: int,
                              shots: int) -> np.ndarray:
    """Per-component standard error of the m-ancilla estimator at `shots` samples per circuit."""
    dim = 2 ** model.n_qubits
    errors = np.zeros(dim)
    if m == 1:
        runner = HadamardTestRunner(model, encoded)
        for k in range(dim):
            p_zero = runner.probability_zero(k)
            errors[k] = runner.norm * estimator_standard_error([p_zero, 1.0 - p_zero], 1, 0, shots)
        return errors
    multi = MultiAncillaRunner(model, encoded, m)
    for group, real in component_groups(dim, m):
        distribution = multi.distribution(group)
        for slot in range(real):
            errors[group[slot]] = multi.norm * estimator_standard_error(distribution, m, slot, shots)
    return errors


# Parameter shift -----------------------------------------------------------

def parameter_shift_gradient(model: QuantumModel, encoded: EncodedInput,
                             which: Optional[Sequence[int]] = None) -> GradientVector:
    """dF/dtheta_i = [F(theta_i + pi/2) - F(theta_i - pi/2)] / 2 (raw F, no activation)."""
    count = model.ansatz.parameter_count
    which = list(range(count)) if which is None else [int(i) for i in which]
    for i in which:
        if not 0 <= i < count:
            raise GradientError(f"parameter index {i} out of range for {count} parameters")
    state = input_state(model, encoded)
    values = np.zeros(len(which))
    for slot, i in enumerate(which):
        shifted = []
        for sign in (1.0, -1.0):
            theta = np.array(model.theta)
            theta[i] += sign * SHIFT
            shifted.append(expectation(model.with_theta(theta), state))
        values[slot] = SHIFT_COEFFICIENT * (shifted[0] - shifted[1])
    return GradientVector(values, GradientMethod.PARAM_SHIFT, indices=tuple(which))


def parameter_shift_batch(model: QuantumModel, states: np.ndarray) -> np.ndarray:
    """(parameters, batch) matrix of dF/dtheta_i for a stack of input states."""
    count = model.ansatz.parameter_count
    jacobian = np.zeros((count, len(states)))
    for i in range(count):
        theta_plus = np.array(model.theta)
        theta_minus = np.array(model.theta)
        theta_plus[i] += SHIFT
        theta_minus[i] -= SHIFT
        jacobian[i] = SHIFT_COEFFICIENT * (
            expectation_batch(model.with_theta(theta_plus), states)
            - expectation_batch(model.with_theta(theta_minus), states))
    return jacobian


def angle_input_gradient(model: QuantumModel, encoded: EncodedInput) -> GradientVector:
    """dF/dx_i for an angle embedding; the RX(x_i) encoders obey the same shift rule."""
    if encoded.angles is None:
        raise GradientError("angle_input_gradient needs an angle-encoded input")
    angles = np.asarray(encoded.angles, dtype=float)
    values = np.zeros(len(angles))
    for i in range(len(angles)):
        shifted = []
        for sign in (1.0, -1.0):
            moved = angles.copy()
            moved[i] += sign * SHIFT
            shifted.append(expectation(model, run_circuit(encode_angle(moved, model.n_qubits))))
        values[i] = SHIFT_COEFFICIENT * (shifted[0] - shifted[1])
    return GradientVector(values, GradientMethod.PARAM_SHIFT)


# Backend and pixel-space chain rule -------------------------------------------

@dataclass(frozen=True)
class GradientBackend:
    """Which estimator to use for input gradients, and with what budget."""
    method: GradientMethod = GradientMethod.EXACT
    shots: Optional[int] = None
    ancillas: int = 1
    workers: int = 1

    def __post_init__(self):
        if self.shots is not None and self.shots < 1:
            raise GradientError(f"shots must be >= 1, got {self.shots}")

    def input_gradient(self, model: QuantumModel, encoded: EncodedInput,
                       seed: int = 0) -> GradientVector:
        """dF/d(encoded feature): amplitudes for amplitude modes, angles for ANGLE."""
        if encoded.mode.kind == EncodingKind.ANGLE:
            if self.method not in (GradientMethod.EXACT, GradientMethod.PARAM_SHIFT):
                raise GradientError(
                    f"{self.method.value} gradients need an amplitude embedding")
            return angle_input_gradient(model, encoded)
        if self.method == GradientMethod.EXACT:
            return exact_input_gradient(model, encoded)
        if self.method == GradientMethod.HADAMARD_SINGLE:
            return hadamard_input_gradient(model, encoded, self.shots, seed,
                                           workers=self.workers)
        if self.method == GradientMethod.HADAMARD_MULTI:
            return hadamard_multi_input_gradient(model, encoded, self.ancillas, self.shots,
                                                 seed, workers=self.workers)
        raise GradientError("parameter-shift input gradients only apply to angle embeddings")


def pixel_space_gradient(model: QuantumModel, raw_features: Sequence[float],
                         backend: Optional[GradientBackend] = None, seed: int = 0,
                         alpha: Optional[float] = None) -> np.ndarray:
    """dF/dp_i for raw pixels, chaining the input gradient through the encoder.

    Overflow embedding: a_i = s p_i and a_of = sqrt(1 - s^2 sum p^2), so
    dF/dp_i = s G_i - (s^2 p_i / a_of) G_of. Pixels dropped by the fit
    policy get zero gradient.
    """
    backend = backend or GradientBackend()
    raw = np.asarray(raw_features, dtype=float).reshape(-1)
    encoded = encode(raw, model.encoding)
    gradient = backend.input_gradient(model, encoded, seed).values
    used = encoded.used_features
    pixels = raw[:used]
    result = np.zeros(len(raw))
    kind = model.encoding.kind
    if kind == EncodingKind.AMPLITUDE_OVERFLOW:
        overflow = encoded.overflow_amplitude
        if overflow <= OVERFLOW_EPSILON:
            where = f" at alpha={alpha:.6g}" if alpha is not None else ""
            raise NearOverflowSingularity(
                f"overflow amplitude {overflow:.3e} too small for the pixel chain rule{where}",
                overflow_amplitude=overflow, alpha=alpha)
        scale = model.encoding.scale
        result[:used] = scale * gradient[:used] - (scale ** 2 * pixels / overflow) * gradient[-1]
    elif kind == EncodingKind.AMPLITUDE_NORMALIZED:
        norm = float(np.linalg.norm(pixels))
        unit = pixels / norm
        local = gradient[:used]
        result[:used] = (local - unit * float(unit @ local)) / norm
    else:
        result[:used] = gradient[:used]
    return result
