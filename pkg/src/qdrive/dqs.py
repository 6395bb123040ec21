"""Digital simulation of quadratic Hamiltonians on a qubit register.

A diagonal operator ``A_jj = exp{-i dt [h (j dx + x0)^2 + sigma]}`` is exactly a
product of single-qubit phase gates, pairwise controlled-phase gates and a
global phase (``j = sum_q 2^q b_q`` with ``b_q^2 = b_q``). One Trotter step is::

    V(dt/2) . qft . T(dt) . iqft . V(dt/2)

where ``iqft`` takes position amplitudes to FFT-ordered momentum amplitudes and
an X on the most significant qubit reorders them to centred momenta.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .protocol import ControlProtocol, SpatialGrid
from .simcore import (
    GateOp,
    QubitState,
    bit_masks,
    inverse_gates,
    qft_gates,
    run_circuit,
)


@dataclass(frozen=True)
class QuadraticPhaseSpec:
    h: float
    x0: float = 0.0
    sigma: float = 0.0
    dt: float = 1.0

    def dense_diagonal(self, n: int, dx: float) -> np.ndarray:
        j = np.arange(1 << n)
        return np.exp(-1j * self.dt * (self.h * (j * dx + self.x0) ** 2 + self.sigma))


def synth_quadratic(spec: QuadraticPhaseSpec, n: int, dx: float) -> list:
    """Gate list for the diagonal quadratic phase on ``n`` qubits with spacing ``dx``.

    Order: one global phase, ``n`` phase gates (ascending qubit), then
    ``n(n-1)/2`` controlled-phase gates for ``q < q'``.
    """
    h, x0, dt = spec.h, spec.x0, spec.dt
    gates = [GateOp("global-phase", (), -dt * (h * x0**2 + spec.sigma))]
    for q in range(n):
        gates.append(GateOp("phase", (q,), -dt * h * (2 * x0 * dx * 2**q + dx**2 * 4**q)))
    for q in range(n):
        for qq in range(q + 1, n):
            gates.append(GateOp("controlled-phase", (q, qq), -dt * h * dx**2 * 2 ** (q + qq + 1)))
    return gates


def diagonal_phases(gates, n: int) -> np.ndarray:
    """Real phase vector of a product of diagonal gates (``exp(1j * phases)`` is the diagonal)."""
    bits = bit_masks(n)
    phases = np.zeros(1 << n)
    for g in gates:
        if g.kind == "global-phase":
            phases += g.angle
        elif g.kind == "phase":
            phases += g.angle * bits[g.targets[0]]
        elif g.kind == "controlled-phase":
            a, b = g.targets
            phases += g.angle * (bits[a] & bits[b])
        elif g.kind == "rz":
            phases += -0.5 * g.angle * (1 - 2 * bits[g.targets[0]])
        else:
            raise ValueError(f"{g.kind} gate is not diagonal")
    return phases


def potential_spec(u_k: float, dt: float, grid: SpatialGrid) -> QuadraticPhaseSpec:
    return QuadraticPhaseSpec(h=u_k / 2.0, x0=-grid.L, sigma=0.0, dt=dt / 2.0)


def kinetic_spec(dt: float, grid: SpatialGrid) -> QuadraticPhaseSpec:
    return QuadraticPhaseSpec(h=0.5, x0=-(grid.size // 2) * grid.dk, sigma=0.0, dt=dt)


def potential_gates(u_k: float, dt: float, grid: SpatialGrid) -> list:
    return synth_quadratic(potential_spec(u_k, dt, grid), grid.n, grid.dx)


def kinetic_gates(dt: float, grid: SpatialGrid) -> list:
    msb = GateOp("x", (grid.n - 1,))
    inner = synth_quadratic(kinetic_spec(dt, grid), grid.n, grid.dk)
    return inverse_gates(qft_gates(grid.n)) + [msb] + inner + [msb] + qft_gates(grid.n)


def potential_half_step(state: QubitState, u_k: float, dt: float, grid: SpatialGrid) -> QubitState:
    if u_k < 0:
        raise ValueError("trap strength must be non-negative")
    return run_circuit(state, potential_gates(u_k, dt, grid))


def kinetic_step(state: QubitState, dt: float, grid: SpatialGrid) -> QubitState:
    return run_circuit(state, kinetic_gates(dt, grid))


def trotter_step_gates(u_k: float, dt: float, grid: SpatialGrid) -> list:
    half = potential_gates(u_k, dt, grid)
    return half + kinetic_gates(dt, grid) + half


def trotter_gates(protocol: ControlProtocol, grid: SpatialGrid) -> list:
    gates = []
    for k in range(protocol.n_steps):
        gates += trotter_step_gates(protocol.u[k], protocol.dt, grid)
    return gates


class TrotterCircuit:
    """Compiled form of the Trotter circuit for a fixed grid, step count and ``t_f``.

    Each diagonal block is reduced to its phase vector through
    :func:`diagonal_phases`; the QFT pair is evaluated with an FFT of the same
    convention. The potential phases are linear in ``u_k``; ``potential_unit``
    holds the phases at ``u_k = 1``.
    """

    def __init__(self, grid: SpatialGrid, n_steps: int, t_f: float):
        self.grid = grid
        self.n_steps = n_steps
        self.t_f = t_f
        self.dt = t_f / n_steps
        n = grid.n
        self.potential_unit = diagonal_phases(potential_gates(1.0, self.dt, grid), n)
        centred = diagonal_phases(synth_quadratic(kinetic_spec(self.dt, grid), n, grid.dk), n)
        # X on the MSB maps FFT index m to centred index m ^ 2^(n-1)
        idx = np.arange(grid.size) ^ (grid.size >> 1)
        self.kinetic_diag = np.exp(1j * centred[idx])

    def potential_diag(self, u_k: float) -> np.ndarray:
        return np.exp(1j * u_k * self.potential_unit)

    def kinetic(self, amps: np.ndarray) -> np.ndarray:
        return np.fft.ifft(np.fft.fft(amps) * self.kinetic_diag)

    def step(self, amps: np.ndarray, u_k: float) -> np.ndarray:
        v = self.potential_diag(u_k)
        return v * self.kinetic(v * amps)

    def evolve(self, amps: np.ndarray, u) -> np.ndarray:
        for k in range(self.n_steps):
            amps = self.step(amps, u[k])
        return amps

    def forward_states(self, amps: np.ndarray, u) -> list:
        """States entering each potential half-step: ``[before V_0, after K_0, before V_1, ...]``.

        Entry ``2k`` is the state before the first half-step of step ``k``,
        entry ``2k + 1`` the state before the second one.
        """
        out = []
        for k in range(self.n_steps):
            v = self.potential_diag(u[k])
            out.append(amps)
            amps = self.kinetic(v * amps)
            out.append(amps)
            amps = v * amps
        out.append(amps)
        return out

    def backward_states(self, target: np.ndarray, u) -> list:
        """``U_after^dagger |target>`` for each half-step slot, same indexing as :meth:`forward_states`.

        Slot ``2k`` gives the state after the first half-step of step ``k``
        pulled back to that point, slot ``2k + 1`` after the second.
        """
        out = [None] * (2 * self.n_steps)
        chi = target
        for k in reversed(range(self.n_steps)):
            v = self.potential_diag(u[k])
            out[2 * k + 1] = chi
            chi = np.fft.ifft(np.fft.fft(np.conj(v) * chi) * np.conj(self.kinetic_diag))
            out[2 * k] = chi
            chi = np.conj(v) * chi
        return out


def trotter_evolve(state: QubitState, protocol: ControlProtocol, grid: SpatialGrid,
                   method: str = "compiled") -> QubitState:
    """Apply ``N_t`` symmetric Trotter steps; step ``k`` uses ``u[k]``.

    ``method="circuit"`` runs the full gate list through the statevector engine;
    ``"compiled"`` uses :class:`TrotterCircuit`.
    """
    if method == "circuit":
        return run_circuit(state, trotter_gates(protocol, grid))
    if method != "compiled":
        raise ValueError(f"unknown method {method!r}")
    tc = TrotterCircuit(grid, protocol.n_steps, protocol.t_f)
    return QubitState(state.n, tc.evolve(state.amps, protocol.u))
