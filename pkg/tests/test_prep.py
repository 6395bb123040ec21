import numpy as np
import pytest

from qdrive.oracle import gaussian_state
from qdrive.prep import (
    AnsatzParams,
    PreparationDivergence,
    ansatz_amplitudes,
    ansatz_gates,
    ansatz_state,
    decode,
    encode,
    prepare,
)
from qdrive.protocol import SpatialGrid
from qdrive.simcore import QubitState, run_circuit

I2 = np.eye(2)
X = np.array([[0, 1], [1, 0]])
H = np.array([[1, 1], [1, -1]]) / np.sqrt(2)


def rz(t):
    return np.diag([np.exp(-0.5j * t), np.exp(0.5j * t)])


def rx(t):
    c, s = np.cos(t / 2), np.sin(t / 2)
    return np.array([[c, -1j * s], [-1j * s, c]])


def test_encode_normalised(grid):
    s = encode(gaussian_state(1.0, 0.0, grid))
    assert s.norm() == pytest.approx(1.0)
    assert np.allclose(decode(s, grid).norm(), 1.0)


def test_depth_zero_is_plus_state():
    s = ansatz_state(AnsatzParams(0, 3, []))
    assert np.allclose(s.amps, 2 ** -1.5)


def test_single_qubit_identity_layer():
    s = ansatz_state(AnsatzParams.zeros(1, 1))
    assert np.allclose(s.amps, [2**-0.5, 2**-0.5])
    assert not any(g.kind == "cnot" for g in ansatz_gates(AnsatzParams.zeros(1, 1)))


def test_two_qubit_dense_product():
    r = np.random.default_rng(5)
    theta = r.uniform(-np.pi, np.pi, 6)
    params = AnsatzParams(1, 2, theta)
    ang = params.angles()
    # basis index = 2 q1 + q0, so kron(op_q1, op_q0)
    cnot01 = np.zeros((4, 4))
    cnot10 = np.zeros((4, 4))
    for i in range(4):
        q0, q1 = i & 1, i >> 1
        cnot01[(q1 ^ q0) << 1 | q0, i] = 1
        cnot10[q1 << 1 | (q0 ^ q1), i] = 1
    u3 = [rz(a[0]) @ rx(a[1]) @ rz(a[2]) for a in ang[0]]
    U = np.kron(u3[1], u3[0]) @ cnot10 @ cnot01 @ np.kron(H, H)
    expected = U @ np.array([1, 0, 0, 0])
    assert np.allclose(ansatz_state(params).amps, expected)


@pytest.mark.parametrize("n,p", [(1, 2), (3, 2), (4, 3), (6, 1)])
def test_fast_path_matches_gates(n, p):
    theta = np.random.default_rng(n * 10 + p).uniform(-np.pi, np.pi, 3 * p * n)
    params = AnsatzParams(p, n, theta)
    gates = run_circuit(QubitState.basis(n), ansatz_gates(params)).amps
    assert np.allclose(ansatz_amplitudes(theta, p, n), gates, atol=1e-12)


def test_params_shape_checked():
    with pytest.raises(ValueError):
        AnsatzParams(2, 3, np.zeros(5))


def test_prepare_plus_state():
    # the optimum sits in a flat valley, so plain GD needs a longer run here
    target = QubitState.from_amplitudes(np.ones(8))
    _, F, _ = prepare(target, 1, seed=0, restarts=1, max_iter=2000)
    assert F >= 1 - 1e-6


def test_prepare_errors():
    target = QubitState.from_amplitudes(np.ones(4))
    with pytest.raises(ValueError):
        prepare(target, 0)
    bad = QubitState(2, np.array([np.nan, 0, 0, 0]))
    with pytest.raises(PreparationDivergence):
        prepare(bad, 1, restarts=1, max_iter=5)


def test_prepare_seeded():
    target = encode(gaussian_state(1.0, 0.0, SpatialGrid(3)))
    a = prepare(target, 2, seed=4, restarts=2, max_iter=40)
    b = prepare(target, 2, seed=4, restarts=2, max_iter=40)
    assert np.array_equal(a[0].theta, b[0].theta) and a[1] == b[1]


def test_fidelity_grows_with_depth():
    target = encode(gaussian_state(1.0, 0.0, SpatialGrid(3)))
    fids = [prepare(target, p, seed=0, restarts=3, max_iter=300)[1] for p in (1, 2, 3)]
    assert all(b >= a - 1e-9 for a, b in zip(fids, fids[1:]))
