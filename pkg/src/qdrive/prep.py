"""Register encoding of grid wavefunctions and variational state preparation."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .oracle import GridWavefunction
from .protocol import SpatialGrid
from .simcore import GateOp, QubitState, make_rng


def encode(psi: GridWavefunction) -> QubitState:
    """Amplitudes ``Psi(x_j) sqrt(dx)``, renormalised on the register."""
    amps = psi.amps * np.sqrt(psi.grid.dx)
    return QubitState(psi.grid.n, amps / np.linalg.norm(amps))


def decode(state: QubitState, grid: SpatialGrid) -> GridWavefunction:
    return GridWavefunction(grid, state.amps / np.sqrt(grid.dx))


@dataclass
class AnsatzParams:
    p: int
    n: int
    theta: np.ndarray

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float).reshape(-1)
        if self.theta.size != 3 * self.p * self.n:
            raise ValueError(f"expected {3 * self.p * self.n} angles, got {self.theta.size}")

    def angles(self) -> np.ndarray:
        """View indexed ``[layer, qubit, slot]``."""
        return self.theta.reshape(self.p, self.n, 3)

    @classmethod
    def zeros(cls, p: int, n: int) -> "AnsatzParams":
        return cls(p, n, np.zeros(3 * p * n))


def ansatz_gates(params: AnsatzParams) -> list:
    """Per layer: CNOT ring ``q -> q+1 mod n`` then ``Rz(t1) Rx(t2) Rz(t3)`` on every qubit.

    The operator product ``Rz(t1) Rx(t2) Rz(t3)`` applies ``Rz(t3)`` first.
    A one-qubit register has no entangler.
    """
    n = params.n
    gates = [GateOp("h", (q,)) for q in range(n)]
    ang = params.angles()
    for i in range(params.p):
        if n > 1:
            ring = [(q, (q + 1) % n) for q in range(n)]
            gates += [GateOp("cnot", pair) for pair in ring]
        for q in range(n):
            t1, t2, t3 = ang[i, q]
            gates += [GateOp("rz", (q,), t3), GateOp("rx", (q,), t2), GateOp("rz", (q,), t1)]
    return gates


@lru_cache(maxsize=None)
def _ring_permutation(n: int) -> np.ndarray:
    idx = np.arange(1 << n)
    src = idx.copy()
    pairs = [(q, (q + 1) % n) for q in range(n)]
    # amps_out[i] = amps_in[perm[i]]; compose CNOTs in application order
    for c, t in pairs:
        src = src[idx ^ (((idx >> c) & 1) << t)]
    return src


def _u3(t1, t2, t3):
    """Matrices of ``Rz(t1) Rx(t2) Rz(t3)``, vectorised over the leading axis."""
    c, s = np.cos(t2 / 2), np.sin(t2 / 2)
    e1m, e1p = np.exp(-0.5j * t1), np.exp(0.5j * t1)
    e3m, e3p = np.exp(-0.5j * t3), np.exp(0.5j * t3)
    m = np.empty(t1.shape + (2, 2), dtype=np.complex128)
    m[..., 0, 0] = e1m * c * e3m
    m[..., 0, 1] = -1j * e1m * s * e3p
    m[..., 1, 0] = -1j * e1p * s * e3m
    m[..., 1, 1] = e1p * c * e3p
    return m


def ansatz_amplitudes(theta, p: int, n: int) -> np.ndarray:
    """Fast evaluation of :func:`ansatz_state`; same convention as :func:`ansatz_gates`."""
    ang = np.asarray(theta, dtype=float).reshape(p, n, 3)
    psi = np.full(1 << n, 2 ** (-n / 2), dtype=np.complex128)
    perm = _ring_permutation(n) if n > 1 else None
    for i in range(p):
        if perm is not None:
            psi = psi[perm]
        mats = _u3(ang[i, :, 0], ang[i, :, 1], ang[i, :, 2])
        t = psi.reshape((2,) * n)
        for q in range(n):
            # qubit q is tensor axis n - 1 - q
            t = np.moveaxis(np.tensordot(mats[q], t, axes=([1], [n - 1 - q])), 0, n - 1 - q)
        psi = t.reshape(-1)
    return psi


def ansatz_state(params: AnsatzParams) -> QubitState:
    return QubitState(params.n, ansatz_amplitudes(params.theta, params.p, params.n))


class PreparationDivergence(RuntimeError):
    pass


def prepare(target: QubitState, p: int, seed=0, restarts: int = 5, max_iter: int = 500,
            lr: float = 0.5, h: float = 1e-6, init_scale: float = 0.1, tol: float = 1e-12,
            stop_fidelity: float | None = None):
    """Minimise ``1 - |<target|ansatz(theta)>|^2`` by gradient descent from seeded random starts.

    Returns ``(best AnsatzParams, fidelity, list of per-restart RunRecords)``.
    """
    from .opt import gd_minimize, grad_fd

    if p < 1:
        raise ValueError("depth must be >= 1")
    n = target.n
    tgt = target.amps
    rng = make_rng(seed)
    mask = np.ones(3 * p * n, dtype=bool)

    def infid(th):
        val = 1.0 - abs(np.vdot(tgt, ansatz_amplitudes(th, p, n))) ** 2
        if not np.isfinite(val):
            raise PreparationDivergence("non-finite preparation cost")
        return val

    def wrap(th):
        return (th + np.pi) % (2 * np.pi) - np.pi

    best, best_F, records = None, -1.0, []
    for r in range(restarts):
        th0 = rng.normal(scale=init_scale, size=3 * p * n)
        th, rec = gd_minimize(
            infid, th0, lr=lr, max_iter=max_iter, tol=tol, seed=r,
            grad=lambda v: grad_fd(infid, v, h, mask).values,
            fidelity=lambda v: 1.0 - infid(v), project_fn=wrap, tag="VQE-GD",
            stop_infidelity=None if stop_fidelity is None else 1.0 - stop_fidelity,
        )
        records.append(rec)
        F = 1.0 - infid(th)
        if F > best_F:
            best, best_F = th, F
        if stop_fidelity is not None and best_F >= stop_fidelity:
            break
    return AnsatzParams(p, n, best), float(best_F), records
