import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qdrive.dqs import (
    QuadraticPhaseSpec,
    TrotterCircuit,
    diagonal_phases,
    kinetic_step,
    potential_gates,
    potential_half_step,
    synth_quadratic,
    trotter_evolve,
)
from qdrive.oracle import bangbang_protocol, gaussian_state, som_evolve
from qdrive.opt import random_protocol
from qdrive.prep import decode, encode
from qdrive.protocol import Constraints, ControlProtocol, SpatialGrid
from qdrive.simcore import QubitState, make_rng, run_circuit


def circuit_diagonal(gates, n):
    return np.array([run_circuit(QubitState.basis(n, j), gates).amps[j] for j in range(1 << n)])


def test_h_zero_is_global_phase_only():
    gates = synth_quadratic(QuadraticPhaseSpec(h=0.0, x0=1.3, sigma=0.7, dt=0.2), 3, 0.5)
    assert gates[0].kind == "global-phase"
    assert gates[0].angle == pytest.approx(-0.2 * 0.7)
    assert all(g.angle == 0 for g in gates[1:])


def test_dt_zero_is_identity():
    gates = synth_quadratic(QuadraticPhaseSpec(h=2.0, x0=-1.0, sigma=3.0, dt=0.0), 3, 0.4)
    assert all(g.angle == 0 for g in gates)


def test_two_qubit_example():
    spec = QuadraticPhaseSpec(h=1.0, x0=0.0, sigma=0.0, dt=0.1)
    diag = circuit_diagonal(synth_quadratic(spec, 2, 1.0), 2)
    assert np.allclose(diag, np.exp(-0.1j * np.arange(4) ** 2))


def test_gate_counts():
    n = 5
    gates = synth_quadratic(QuadraticPhaseSpec(0.3, -1.0, 0.0, 0.1), n, 0.2)
    kinds = [g.kind for g in gates]
    assert kinds.count("phase") == n
    assert kinds.count("controlled-phase") == n * (n - 1) // 2
    assert kinds.count("global-phase") == 1


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 5), st.floats(-3, 3), st.floats(-5, 5), st.floats(-2, 2), st.floats(0, 1), st.floats(0.05, 2))
def test_synth_matches_dense(n, h, x0, sigma, dt, dx):
    spec = QuadraticPhaseSpec(h, x0, sigma, dt)
    diag = circuit_diagonal(synth_quadratic(spec, n, dx), n)
    assert np.max(np.abs(diag - spec.dense_diagonal(n, dx))) < 1e-9


def test_potential_half_step(grid):
    s = encode(gaussian_state(1.0, 0.0, grid))
    assert np.allclose(potential_half_step(s, 0.0, 0.1, grid).amps, s.amps)
    dt, u = 0.06304, 1.0
    out = potential_half_step(s, u, dt, grid)
    assert np.allclose(out.amps, s.amps * np.exp(-1j * (dt / 2) * u * grid.x**2 / 2))
    assert np.allclose(np.abs(out.amps), np.abs(s.amps))
    with pytest.raises(ValueError):
        potential_half_step(s, -0.1, dt, grid)


def test_kinetic_step(grid):
    s = encode(gaussian_state(1.0, 0.0, grid))
    assert np.allclose(kinetic_step(s, 0.0, grid).amps, s.amps, atol=1e-12)
    # a momentum eigenstate (in the discrete sense) only picks up exp(-i dt k^2 / 2)
    m = 5
    plane = QubitState.from_amplitudes(np.exp(1j * grid.k[m] * grid.x))
    dt = 0.3
    out = kinetic_step(plane, dt, grid)
    assert np.allclose(out.amps, plane.amps * np.exp(-0.5j * dt * grid.k[m] ** 2), atol=1e-10)


def test_free_evolution_matches_som(grid):
    psi = gaussian_state(1.0, 0.0, grid)
    proto = ControlProtocol.constant(0.0, 20, 1.0)
    digital = trotter_evolve(encode(psi), proto, grid, method="circuit")
    classical = encode(som_evolve(psi, proto))
    assert abs(np.vdot(classical.amps, digital.amps)) ** 2 >= 0.9999


def test_ground_state_is_stationary(grid):
    s = encode(gaussian_state(1.0, 0.0, grid))
    out = trotter_evolve(s, ControlProtocol.constant(1.0, 17, 2.3), grid)
    assert 0.5 * np.abs(out.probabilities() - s.probabilities()).sum() < 1e-3


def test_bangbang_reaches_target(grid):
    bb = bangbang_protocol(n_steps=50)
    out = trotter_evolve(encode(gaussian_state(1.0, 0.0, grid)), bb, grid)
    target = encode(gaussian_state(np.sqrt(10.0), 0.0, grid))
    assert abs(np.vdot(target.amps, out.amps)) ** 2 >= 0.99


def test_compiled_matches_circuit(grid):
    rng = make_rng(3)
    c = Constraints(u_end=0.01)
    u = random_protocol(c, 8, rng)
    proto = ControlProtocol(u, 1.5, c)
    s = encode(gaussian_state(1.0, 0.0, grid))
    a = trotter_evolve(s, proto, grid, method="circuit").amps
    b = trotter_evolve(s, proto, grid, method="compiled").amps
    assert np.max(np.abs(a - b)) < 1e-10
    with pytest.raises(ValueError):
        trotter_evolve(s, proto, grid, method="magic")


def test_diagonal_phases_agree_with_gates(grid):
    gates = potential_gates(0.7, 0.1, grid)
    assert np.allclose(np.exp(1j * diagonal_phases(gates, grid.n)), circuit_diagonal(gates, grid.n))


def test_forward_backward_states_consistent():
    g = SpatialGrid(4)
    tc = TrotterCircuit(g, 5, 1.0)
    u = np.linspace(1, 0.01, 6)
    r = np.random.default_rng(0)
    psi = r.normal(size=16) + 1j * r.normal(size=16)
    tgt = r.normal(size=16) + 1j * r.normal(size=16)
    fw, bw = tc.forward_states(psi, u), tc.backward_states(tgt, u)
    final = np.vdot(tgt, tc.evolve(psi, u))
    for k in range(5):
        v = tc.potential_diag(u[k])
        assert np.vdot(bw[2 * k], v * fw[2 * k]) == pytest.approx(final)
        assert np.vdot(bw[2 * k + 1], v * fw[2 * k + 1]) == pytest.approx(final)


def test_decode_roundtrip(grid):
    psi = gaussian_state(2.0, 0.3, grid)
    back = decode(encode(psi), grid)
    assert np.allclose(back.amps / np.sqrt(back.norm()), psi.amps / np.sqrt(psi.norm()))
