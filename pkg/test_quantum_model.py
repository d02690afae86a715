#!/usr/bin/env python3
"""Tests for the ansatz, observables and model evaluation."""

import json

import numpy as np
import pytest

from conftest import dense_circuit_matrix, kron_single, random_state
from errors import DataFormatError, DataIOError, ModelError
from feature_encoding import EncodingKind, EncodingMode, encode
from quantum_model import (
    Activation, AnsatzSpec, PauliObservable, QuantumModel, build_ansatz_circuit, classify,
    conjugated_observable_circuit, evaluate, evaluate_batch, expectation,
)
from statevector_simulator import GateKind, StateVector, circuit_matrix, run_circuit

Z = np.diag([1.0, -1.0])


def zero_layer_model(n_qubits, observable="Z0", kind=EncodingKind.AMPLITUDE_NORMALIZED,
                     activation=Activation.NONE):
    return QuantumModel(AnsatzSpec(n_qubits, 0), np.zeros(0), PauliObservable.parse(observable),
                        activation, EncodingMode(kind, n_qubits))


def test_zero_angles_leave_only_cnots():
    circuit = build_ansatz_circuit(AnsatzSpec(2, 1), np.zeros(4))
    assert circuit.count(GateKind.CNOT) == 1
    np.testing.assert_allclose(run_circuit(circuit).amplitudes, [1, 0, 0, 0], atol=1e-15)


def test_six_qubit_layer_layout():
    circuit = build_ansatz_circuit(AnsatzSpec(6, 1), np.ones(12))
    assert circuit.count(GateKind.RX) + circuit.count(GateKind.RZ) == 12
    assert circuit.count(GateKind.CNOT) == 5
    cnots = [g for g in circuit.gates if g.kind == GateKind.CNOT]
    assert [(g.controls[0][0], g.targets[0]) for g in cnots] == [(q, q + 1) for q in range(5)]


@pytest.mark.parametrize("n_qubits,n_layers", [(1, 3), (4, 8), (6, 2)])
def test_gate_count_formula(n_qubits, n_layers):
    spec = AnsatzSpec(n_qubits, n_layers)
    circuit = build_ansatz_circuit(spec, np.zeros(spec.parameter_count))
    assert len(circuit) == spec.gate_count == 2 * n_qubits * n_layers + (n_qubits - 1) * n_layers


def test_wrong_parameter_count():
    with pytest.raises(ModelError):
        build_ansatz_circuit(AnsatzSpec(2, 1), np.zeros(3))
    with pytest.raises(ModelError):
        QuantumModel(AnsatzSpec(2, 1), np.zeros(5))


def test_empty_ansatz_on_zero_state():
    assert expectation(zero_layer_model(3), StateVector.zero(3)) == 1.0


def test_empty_ansatz_measured_bit_one():
    assert expectation(zero_layer_model(3), StateVector.basis(4, 3)) == -1.0
    assert expectation(zero_layer_model(3), StateVector.basis(3, 3)) == 1.0


def test_expectation_matches_dense_oracle(model_factory, rng):
    model = model_factory(n_qubits=4, n_layers=3, seed=5)
    psi = random_state(rng, 4)
    unitary = dense_circuit_matrix(model.ansatz_circuit())
    oracle = np.real(psi.conj() @ unitary.conj().T @ kron_single(Z, 0, 4) @ unitary @ psi)
    assert expectation(model, StateVector(psi)) == pytest.approx(oracle, abs=1e-10)


def test_multi_qubit_observable_matches_oracle(model_factory, rng):
    model = model_factory(n_qubits=3, n_layers=2, seed=2, observable="X1 Z2")
    x = np.array([[0, 1], [1, 0]])
    observable = kron_single(x, 1, 3) @ kron_single(Z, 2, 3)
    psi = random_state(rng, 3)
    unitary = dense_circuit_matrix(model.ansatz_circuit())
    oracle = np.real(psi.conj() @ unitary.conj().T @ observable @ unitary @ psi)
    assert expectation(model, StateVector(psi)) == pytest.approx(oracle, abs=1e-10)


def test_evaluate_applies_tanh(model_factory, rng):
    model = model_factory(n_qubits=3, n_layers=2, seed=1)
    encoded = encode(rng.uniform(0, 1, 7), model.encoding)
    output = evaluate(model, encoded)
    assert output.output == pytest.approx(np.tanh(output.raw))


def test_evaluate_batch_matches_single(model_factory, rng):
    model = model_factory(n_qubits=3, n_layers=2, seed=4)
    rows = rng.uniform(0, 1, (5, 7))
    batch = evaluate_batch(model, rows)
    single = [evaluate(model, encode(row, model.encoding)).output for row in rows]
    np.testing.assert_allclose(batch, single, atol=1e-12)


def test_angle_model_output_is_cosine():
    model = zero_layer_model(1, kind=EncodingKind.ANGLE)
    for angle in (0.0, 0.4, np.pi / 2, 2.0):
        assert evaluate(model, encode([angle], model.encoding)).raw == pytest.approx(np.cos(angle))


def test_zero_layer_conjugated_observable_is_plain_z():
    circuit = conjugated_observable_circuit(zero_layer_model(2))
    assert len(circuit) == 1 and circuit.gates[0].kind == GateKind.Z


def test_conjugated_observable_squares_to_identity(model_factory):
    matrix = circuit_matrix(conjugated_observable_circuit(model_factory(3, 2, seed=9)))
    np.testing.assert_allclose(matrix @ matrix, np.eye(8), atol=1e-10)


def test_conjugated_observable_matches_oracle(model_factory):
    model = model_factory(n_qubits=4, n_layers=2, seed=3)
    unitary = dense_circuit_matrix(model.ansatz_circuit())
    oracle = unitary.conj().T @ kron_single(Z, 0, 4) @ unitary
    np.testing.assert_allclose(model.observable_matrix(), oracle, atol=1e-10)


def test_classify_sign_rule():
    model = zero_layer_model(2)
    positive = classify(model, [np.sqrt(0.865), 0, np.sqrt(0.135), 0])
    negative = classify(model, [np.sqrt(0.499), 0, np.sqrt(0.501), 0])
    assert positive.label == 1 and positive.score == pytest.approx(0.73)
    assert negative.label == -1 and negative.score == pytest.approx(-0.002)


def test_pauli_parsing():
    assert PauliObservable.parse("X1 Z3").paulis == ((1, "X"), (3, "Z"))
    assert PauliObservable.parse("z0*z1").paulis == ((0, "Z"), (1, "Z"))
    assert str(PauliObservable.parse("Z0 I2")) == "Z0"
    for bad in ("", "Q0", "Z", "Z0 X0", "I1"):
        with pytest.raises(ModelError):
            PauliObservable.parse(bad)


def test_observable_outside_register():
    with pytest.raises(ModelError):
        QuantumModel(AnsatzSpec(2, 1), np.zeros(4), PauliObservable.parse("Z5"))


def test_input_encoded_for_other_model(model_factory, rng):
    model = model_factory(n_qubits=3, n_layers=1)
    other = encode(rng.uniform(0, 1, 15), EncodingMode(EncodingKind.AMPLITUDE_OVERFLOW, 4))
    with pytest.raises(ModelError):
        evaluate(model, other)


def test_save_and_load(model_factory, tmp_path):
    model = model_factory(n_qubits=3, n_layers=2, seed=8).with_metadata(note="kept")
    path = model.save(tmp_path / "model.json")
    loaded = QuantumModel.load(path)
    np.testing.assert_array_equal(loaded.theta, model.theta)
    assert loaded.ansatz == model.ansatz
    assert loaded.encoding == model.encoding
    assert loaded.observable == model.observable
    assert loaded.metadata == {"note": "kept"}


def test_load_errors(tmp_path):
    with pytest.raises(DataIOError):
        QuantumModel.load(tmp_path / "missing.json")
    (tmp_path / "broken.json").write_text("{not json")
    with pytest.raises(DataFormatError):
        QuantumModel.load(tmp_path / "broken.json")
    (tmp_path / "partial.json").write_text(json.dumps({"theta": [0.0]}))
    with pytest.raises(DataFormatError):
        QuantumModel.load(tmp_path / "partial.json")


def test_theta_is_read_only(model_factory):
    model = model_factory(2, 1)
    with pytest.raises(ValueError):
        model.theta[0] = 1.0
    moved = model.with_theta(np.zeros(4))
    assert moved.theta[0] == 0.0 and model.theta[0] != 0.0
