"""Dense statevector engine.

Basis index ``i`` encodes ``|q_{n-1} ... q_1 q_0>`` with ``q_0`` the least
significant bit. Amplitudes are stored as a flat ``complex128`` array.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

MAX_QUBITS = 14

GATE_KINDS = ("phase", "controlled-phase", "x", "cnot", "rx", "rz", "h", "global-phase")
_ARITY = {
    "phase": 1,
    "controlled-phase": 2,
    "x": 1,
    "cnot": 2,
    "rx": 1,
    "rz": 1,
    "h": 1,
    "global-phase": 0,
}


class InvalidGateError(ValueError):
    pass


@dataclass
class QubitState:
    n: int
    amps: np.ndarray

    def __post_init__(self):
        if not 1 <= self.n <= MAX_QUBITS:
            raise ValueError(f"qubit count must be in [1, {MAX_QUBITS}], got {self.n}")
        self.amps = np.asarray(self.amps, dtype=np.complex128)
        if self.amps.shape != (1 << self.n,):
            raise ValueError(f"expected {1 << self.n} amplitudes, got shape {self.amps.shape}")

    @classmethod
    def basis(cls, n: int, index: int = 0) -> "QubitState":
        amps = np.zeros(1 << n, dtype=np.complex128)
        amps[index] = 1.0
        return cls(n, amps)

    @classmethod
    def from_amplitudes(cls, amps, normalize: bool = True) -> "QubitState":
        amps = np.asarray(amps, dtype=np.complex128)
        n = int(round(np.log2(amps.size)))
        if normalize:
            amps = amps / np.linalg.norm(amps)
        return cls(n, amps)

    def copy(self) -> "QubitState":
        return QubitState(self.n, self.amps.copy())

    def norm(self) -> float:
        return float(np.linalg.norm(self.amps))

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amps) ** 2


@dataclass(frozen=True)
class GateOp:
    kind: str
    targets: tuple = ()
    angle: float = 0.0

    def __post_init__(self):
        if self.kind not in GATE_KINDS:
            raise InvalidGateError(f"unknown gate kind {self.kind!r}")
        object.__setattr__(self, "targets", tuple(int(t) for t in self.targets))
        if len(self.targets) != _ARITY[self.kind]:
            raise InvalidGateError(
                f"{self.kind} takes {_ARITY[self.kind]} target(s), got {len(self.targets)}"
            )
        if len(set(self.targets)) != len(self.targets):
            raise InvalidGateError(f"repeated target in {self.targets}")

    def validate(self, n: int) -> None:
        for t in self.targets:
            if not 0 <= t < n:
                raise InvalidGateError(f"target {t} out of range for {n} qubits")


@dataclass
class CountsHistogram:
    shots: int
    counts: dict = field(default_factory=dict)

    def frequencies(self, n: int) -> np.ndarray:
        freq = np.zeros(1 << n)
        for idx, c in self.counts.items():
            freq[idx] = c
        return freq / self.shots


@lru_cache(maxsize=None)
def _bit(n: int, q: int) -> np.ndarray:
    return (np.arange(1 << n) >> q) & 1


def bit_masks(n: int) -> np.ndarray:
    """``(n, 2**n)`` array whose row ``q`` holds bit ``q`` of every basis index."""
    return np.stack([_bit(n, q) for q in range(n)])


def _apply_1q(amps: np.ndarray, n: int, q: int, m: np.ndarray) -> np.ndarray:
    view = amps.reshape(1 << (n - q - 1), 2, 1 << q)
    return np.einsum("ab,ibj->iaj", m, view).reshape(-1)


_H = np.array([[1, 1], [1, -1]], dtype=np.complex128) / np.sqrt(2)


def _rx(theta: float) -> np.ndarray:
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    return np.array([[c, -1j * s], [-1j * s, c]], dtype=np.complex128)


def apply_gate(state: QubitState, g: GateOp) -> QubitState:
    """Return a new state with ``g`` applied."""
    n = state.n
    g.validate(n)
    amps = state.amps
    k = g.kind
    if k == "global-phase":
        out = amps * np.exp(1j * g.angle)
    elif k == "phase":
        out = amps * np.exp(1j * g.angle * _bit(n, g.targets[0]))
    elif k == "controlled-phase":
        a, b = g.targets
        out = amps * np.exp(1j * g.angle * (_bit(n, a) & _bit(n, b)))
    elif k == "rz":
        z = 1 - 2 * _bit(n, g.targets[0])
        out = amps * np.exp(-0.5j * g.angle * z)
    elif k == "x":
        out = amps[np.arange(1 << n) ^ (1 << g.targets[0])]
    elif k == "cnot":
        c, t = g.targets
        idx = np.arange(1 << n)
        out = amps[idx ^ (_bit(n, c) << t)]
    elif k == "h":
        out = _apply_1q(amps, n, g.targets[0], _H)
    else:  # rx
        out = _apply_1q(amps, n, g.targets[0], _rx(g.angle))
    return QubitState(n, out)


def run_circuit(state: QubitState, gates) -> QubitState:
    for g in gates:
        state = apply_gate(state, g)
    return state


def qft_gates(n: int) -> list:
    """H + controlled-phase ladder with final qubit reversal.

    The resulting unitary has matrix elements ``exp(+2*pi*i*j*k/2**n) / sqrt(2**n)``.
    The reversal is expressed as three CNOTs per swapped pair.
    """
    gates = []
    for q in reversed(range(n)):
        gates.append(GateOp("h", (q,)))
        for m in reversed(range(q)):
            gates.append(GateOp("controlled-phase", (m, q), np.pi / (1 << (q - m))))
    for q in range(n // 2):
        a, b = q, n - 1 - q
        gates += [GateOp("cnot", (a, b)), GateOp("cnot", (b, a)), GateOp("cnot", (a, b))]
    return gates


def inverse_gates(gates) -> list:
    out = []
    for g in reversed(gates):
        if g.kind in ("phase", "controlled-phase", "rx", "rz", "global-phase"):
            out.append(GateOp(g.kind, g.targets, -g.angle))
        else:
            out.append(g)
    return out


def qft(state: QubitState) -> QubitState:
    return run_circuit(state, qft_gates(state.n))


def iqft(state: QubitState) -> QubitState:
    return run_circuit(state, inverse_gates(qft_gates(state.n)))


def overlap(a: QubitState, b: QubitState) -> complex:
    if a.n != b.n:
        raise ValueError(f"dimension mismatch: {a.n} vs {b.n} qubits")
    return complex(np.vdot(a.amps, b.amps))


def make_rng(seed=None) -> np.random.Generator:
    """Counter-based generator; ``seed`` may be an int or a ``SeedSequence``."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.Philox(seed))


def flip_bits(outcomes: np.ndarray, n: int, beta: float, rng: np.random.Generator) -> np.ndarray:
    """Independently flip each of the ``n`` bits of every outcome with probability ``beta``."""
    if beta <= 0:
        return outcomes
    flips = rng.random((outcomes.size, n)) < beta
    mask = (flips * (1 << np.arange(n))).sum(axis=1)
    return outcomes ^ mask


def sample(state: QubitState, shots: int, beta: float = 0.0, seed=None) -> CountsHistogram:
    """Computational-basis measurement followed by readout bit-flip noise."""
    if shots < 1:
        raise ValueError("shots must be >= 1")
    if not 0.0 <= beta <= 1.0:
        raise ValueError("flip probability must lie in [0, 1]")
    rng = make_rng(seed)
    p = state.probabilities()
    outcomes = rng.choice(p.size, size=shots, p=p / p.sum())
    outcomes = flip_bits(outcomes, state.n, beta, rng)
    idx, cnt = np.unique(outcomes, return_counts=True)
    return CountsHistogram(shots, {int(i): int(c) for i, c in zip(idx, cnt)})
