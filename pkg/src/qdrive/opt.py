"""Constrained minimisation of control costs.

Gradients come from central finite differences or from the two-point
parameter-shift rule applied to every gate whose angle depends on a control
node. A controlled-phase ``CP(t)`` is written as three Pauli rotations,
``Rz_a(t/2) Rz_b(t/2) Rzz(-t/2)`` up to a global phase, and each factor is
shifted by ``+-pi/2`` on its own.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .cost import CostKind, FS
from .dqs import TrotterCircuit, diagonal_phases, potential_gates
from .oracle import gaussian_state
from .protocol import Constraints, ControlProtocol, InfeasibleError, SpatialGrid, T_F, N_T
from .simcore import bit_masks, flip_bits, make_rng

SHIFT = np.pi / 2


class DivergenceError(RuntimeError):
    def __init__(self, message, last_iterate=None, record=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.record = record


class UnsupportedParameterizationError(ValueError):
    pass


@dataclass
class GradientEstimate:
    values: np.ndarray
    method: str

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("gradient has non-finite entries")

    def norm(self) -> float:
        return float(np.linalg.norm(self.values))


@dataclass
class RunRecord:
    optimizer: str
    seed: int | None = None
    iterations: list = field(default_factory=list)
    costs: list = field(default_factory=list)
    fidelities: list = field(default_factory=list)
    protocols: list = field(default_factory=list)
    wall_time: float = 0.0

    def append(self, it: int, cost: float, F: float | None, u) -> None:
        if self.iterations and it <= self.iterations[-1]:
            raise ValueError("iterations must be strictly increasing")
        self.iterations.append(int(it))
        self.costs.append(float(cost))
        self.fidelities.append(None if F is None else float(min(max(F, 0.0), 1.0)))
        self.protocols.append(np.array(u, dtype=float))

    def iterations_to(self, infidelity: float):
        """First iteration whose exact infidelity is at or below ``infidelity`` (None if never)."""
        for it, F in zip(self.iterations, self.fidelities):
            if F is not None and 1.0 - F <= infidelity:
                return it
        return None

    @property
    def final_fidelity(self):
        return self.fidelities[-1] if self.fidelities else None


# -- feasible set --------------------------------------------------------------

def project(u, c: Constraints, max_passes: int | None = None) -> np.ndarray:
    """Pin endpoints, clip to ``[delta1, delta2]`` and enforce the slew limit.

    Alternating forward/backward clamping passes run until nothing changes.
    """
    u = np.array(u, dtype=float)
    n = u.size - 1
    if abs(c.u_start - c.u_end) > n * c.slew + 1e-12:
        raise InfeasibleError("pins are farther apart than the slew limit allows")
    u[0], u[-1] = c.u_start, c.u_end
    np.clip(u, c.delta1, c.delta2, out=u)
    if np.isfinite(c.slew):
        passes = max_passes or max(n, 1)
        for _ in range(passes):
            before = u.copy()
            for i in range(1, n):
                u[i] = min(max(u[i], u[i - 1] - c.slew), u[i - 1] + c.slew)
            for i in range(n - 1, 0, -1):
                u[i] = min(max(u[i], u[i + 1] - c.slew), u[i + 1] + c.slew)
            if np.array_equal(before, u):
                break
    if not c.is_feasible(u, atol=1e-9):
        raise InfeasibleError("projection did not reach a feasible protocol")
    return u


def free_mask(size: int) -> np.ndarray:
    m = np.ones(size, dtype=bool)
    m[0] = m[-1] = False
    return m


# -- the control problem --------------------------------------------------------

class ControlProblem:
    """Expansion problem: encoded ground state of ``omega_0`` to that of ``omega_f``.

    Calling the instance returns the cost of a protocol vector ``u``
    (``N_t + 1`` node values).
    """

    def __init__(self, grid: SpatialGrid | None = None, n_steps: int = N_T, t_f: float = T_F,
                 cost: CostKind | None = None, constraints: Constraints | None = None,
                 initial=None, target=None, gamma: float = float(np.sqrt(10.0))):
        from .prep import encode

        self.grid = grid or SpatialGrid()
        self.n_steps = n_steps
        self.t_f = t_f
        self.cost = cost or FS(1e-3)
        self.constraints = constraints or Constraints(u_end=1.0 / gamma**4)
        self.circuit = TrotterCircuit(self.grid, n_steps, t_f)
        self.psi0 = encode(gaussian_state(1.0, 0.0, self.grid)).amps if initial is None else np.asarray(initial)
        self.target = encode(gaussian_state(gamma, 0.0, self.grid)).amps if target is None else np.asarray(target)
        self._terms = shift_terms(self.grid.n)
        # per-term d(angle)/du for one potential half-step
        coeffs = gate_coefficients(lambda v: potential_gates(v, self.circuit.dt, self.grid))
        self._term_coeff = self._terms.expand(coeffs)

    def with_cost(self, cost: CostKind) -> "ControlProblem":
        other = object.__new__(ControlProblem)
        other.__dict__.update(self.__dict__)
        other.cost = cost
        return other

    def final(self, u) -> np.ndarray:
        return self.circuit.evolve(self.psi0, u)

    def fidelity(self, u) -> float:
        return float(min(abs(np.vdot(self.target, self.final(u))) ** 2, 1.0))

    def __call__(self, u) -> float:
        return self.cost.from_fidelity(self.fidelity(u))

    def protocol(self, u) -> ControlProtocol:
        return ControlProtocol(u, self.t_f, self.constraints)

    def linear_ramp(self) -> np.ndarray:
        c = self.constraints
        return np.linspace(c.u_start, c.u_end, self.n_steps + 1)

    def half_step_overlaps(self, u):
        """Weights ``conj(chi) * V * phi`` for every potential half-step slot, shape ``(2 N_t, 2^n)``."""
        fw = self.circuit.forward_states(self.psi0, u)
        bw = self.circuit.backward_states(self.target, u)
        rows = []
        for k in range(self.n_steps):
            v = self.circuit.potential_diag(u[k])
            rows.append(np.conj(bw[2 * k]) * v * fw[2 * k])
            rows.append(np.conj(bw[2 * k + 1]) * v * fw[2 * k + 1])
        return np.array(rows)

    def shifted_fidelities(self, u):
        """Fidelities with each Pauli term of each half-step shifted by ``+pi/2`` and ``-pi/2``."""
        w = self.half_step_overlaps(u)
        plus = np.abs(w @ self._terms.mult_plus.T) ** 2
        minus = np.abs(w @ self._terms.mult_minus.T) ** 2
        return plus, minus

    def gradient(self, u, method: str = "shift", h: float = 1e-6) -> GradientEstimate:
        if method == "fd":
            return grad_fd(self, u, h)
        if method != "shift":
            raise ValueError(f"unknown gradient method {method!r}")
        return GradientEstimate(self.cost.derivative(self.fidelity(u)) * self.fidelity_gradient(u), "SHIFT")

    def fidelity_gradient(self, u) -> np.ndarray:
        """``dF/du_k`` from the shift rule on every node-dependent Pauli term."""
        plus, minus = self.shifted_fidelities(u)
        per_slot = (0.5 * (plus - minus)) @ self._term_coeff
        out = np.zeros(self.n_steps + 1)
        out[:-1] = per_slot.reshape(self.n_steps, 2).sum(axis=1)
        out[~free_mask(out.size)] = 0.0
        return out


# -- parameter-shift machinery ---------------------------------------------------

@dataclass
class ShiftTerms:
    """Pauli-rotation terms of the diagonal gates in one potential half-step.

    ``gate_index[t]`` names the gate a term belongs to and ``weight[t]`` is
    ``d(term angle)/d(gate angle)``. Shifting term ``t`` by ``s`` multiplies the
    state by ``exp(1j * s * generator[t])``; ``mult_plus``/``mult_minus`` are
    those factors for ``s = +-pi/2``.
    """

    gate_index: np.ndarray
    weight: np.ndarray
    generator: np.ndarray
    mult_plus: np.ndarray
    mult_minus: np.ndarray

    def expand(self, gate_coeff: np.ndarray) -> np.ndarray:
        return self.weight * gate_coeff[self.gate_index]


def _term_generators(g, bits):
    """(weight, kind, pattern) for each shift-rule term of a diagonal gate."""
    if g.kind == "phase":
        return [(1.0, "phase", bits[g.targets[0]])]
    if g.kind == "controlled-phase":
        a, b = g.targets
        za, zb = 1 - 2 * bits[a], 1 - 2 * bits[b]
        return [(0.5, "rot", za), (0.5, "rot", zb), (-0.5, "rot", za * zb)]
    if g.kind == "rz":
        return [(1.0, "rot", 1 - 2 * bits[g.targets[0]])]
    if g.kind == "global-phase":
        return []
    raise UnsupportedParameterizationError(f"no shift rule for {g.kind}")


def shift_terms_for(gates, n: int) -> ShiftTerms:
    bits = bit_masks(n)
    idx, wts, gens = [], [], []
    for gi, g in enumerate(gates):
        for w, kind, pat in _term_generators(g, bits):
            idx.append(gi)
            wts.append(w)
            # phase gate: diag exp(i t b); Pauli rotation: exp(-i t z / 2)
            gens.append(pat if kind == "phase" else -0.5 * pat)
    gen = np.array(gens, dtype=float).reshape(-1, 1 << n)
    return ShiftTerms(np.array(idx, dtype=int), np.array(wts), gen,
                      np.exp(1j * SHIFT * gen), np.exp(-1j * SHIFT * gen))


def shift_terms(n: int) -> ShiftTerms:
    return shift_terms_for(potential_gates(1.0, 1.0, SpatialGrid(n)), n)


def gate_coefficients(builder, probe: float = 0.37) -> np.ndarray:
    """``d(angle)/du`` for every gate emitted by ``builder(u)``; raises unless angles are affine in ``u``."""
    a0 = np.array([g.angle for g in builder(probe)])
    a1 = np.array([g.angle for g in builder(probe + 1.0)])
    a2 = np.array([g.angle for g in builder(probe + 2.0)])
    scale = max(1.0, float(np.max(np.abs(a2))))
    if np.max(np.abs(a2 - 2 * a1 + a0)) > 1e-9 * scale:
        raise UnsupportedParameterizationError("gate angles are not linear in the control value")
    return a1 - a0


def grad_shift(builder, u, observable, cost: CostKind | None = None) -> GradientEstimate:
    """Parameter-shift gradient by re-simulating every shifted circuit.

    ``builder(u)`` returns per-step blocks ``(k, gates)`` where ``k`` is the
    control node the block's angles depend on (``None`` for fixed blocks) and
    ``builder.block(u, i, v)`` rebuilds block ``i`` at control value ``v``.
    ``observable(state)`` must be an expectation value (linear in the density
    matrix), e.g. a fidelity; the two-point rule is exact only for those. A
    ``cost`` that is a function of that value is then chained through
    ``cost.derivative``.
    """
    from .simcore import run_circuit

    u = np.asarray(u, dtype=float)
    blocks = builder(u)
    prefix = [builder.initial_state()]
    for _, gates in blocks:
        prefix.append(run_circuit(prefix[-1], gates))
    n = prefix[0].n
    grad = np.zeros(u.size)
    mask = free_mask(u.size)
    for bi, (k, gates) in enumerate(blocks):
        if k is None or not mask[k]:
            continue
        coeff = gate_coefficients(lambda v, bi=bi: builder.block(u, bi, v))
        terms = shift_terms_for(gates, n)
        tail = [g for _, gs in blocks[bi + 1:] for g in gs]
        mid = run_circuit(prefix[bi], gates)
        for t in range(terms.weight.size):
            c = coeff[terms.gate_index[t]] * terms.weight[t]
            if c == 0.0:
                continue
            vals = []
            for mult in (terms.mult_plus[t], terms.mult_minus[t]):
                shifted = mid.copy()
                shifted.amps = shifted.amps * mult
                vals.append(observable(run_circuit(shifted, tail)))
            grad[k] += c * 0.5 * (vals[0] - vals[1])
    if cost is not None:
        grad *= cost.derivative(observable(prefix[-1]))
    return GradientEstimate(grad, "SHIFT")


class TrotterBuilder:
    """Gate-level Trotter circuit split into blocks for :func:`grad_shift`."""

    def __init__(self, grid: SpatialGrid, n_steps: int, t_f: float, psi0):
        from .dqs import kinetic_gates
        from .simcore import QubitState

        self.grid = grid
        self.dt = t_f / n_steps
        self.n_steps = n_steps
        self._kin = kinetic_gates(self.dt, grid)
        self._psi0 = QubitState(grid.n, np.asarray(psi0))

    def initial_state(self):
        return self._psi0.copy()

    def block(self, u, bi, value):
        """Gates of block ``bi`` with its control value replaced by ``value``."""
        k, kind = divmod(bi, 3)
        if kind == 1:
            return self._kin
        return potential_gates(value, self.dt, self.grid)

    def __call__(self, u):
        blocks = []
        for k in range(self.n_steps):
            half = potential_gates(u[k], self.dt, self.grid)
            blocks += [(k, half), (None, self._kin), (k, half)]
        return blocks


def grad_fd(J, u, h: float = 1e-6, mask=None) -> GradientEstimate:
    """Central differences on the free (interior) nodes; pinned nodes get zero."""
    u = np.asarray(u, dtype=float)
    mask = free_mask(u.size) if mask is None else mask
    j0 = J(u)
    if not np.isfinite(j0):
        raise ValueError("cost is not finite at u")
    g = np.zeros(u.size)
    for k in np.flatnonzero(mask):
        up, dn = u.copy(), u.copy()
        up[k] += h
        dn[k] -= h
        g[k] = (J(up) - J(dn)) / (2 * h)
    return GradientEstimate(g, "FD")


# -- optimisers --------------------------------------------------------------------

def gd_minimize(J, u0, constraints: Constraints | None = None, lr=0.1, max_iter: int = 500,
                tol: float = 1e-10, seed=None, grad=None, fidelity=None, project_fn=None,
                max_halvings: int = 40, window: int = 10, stop_infidelity: float | None = None,
                tag: str = "GD"):
    """Projected gradient descent with a halving line search.

    Trial steps are ``lr, lr/2, lr/4, ...`` (``lr`` may be a callable of the
    iteration index). Halving continues while each trial improves on the
    previous one; the best trial is accepted if it does not increase the cost.
    Stops at ``max_iter``, when the cost changes by less than ``tol`` over
    ``window`` accepted steps, when no trial is accepted, or once the exact
    infidelity reaches ``stop_infidelity``.
    """
    t0 = time.perf_counter()
    if project_fn is None:
        project_fn = (lambda v: project(v, constraints)) if constraints is not None else (lambda v: v)
    grad = grad or (lambda v: J.gradient(v).values)
    sched = lr if callable(lr) else (lambda k: lr)
    u = project_fn(np.asarray(u0, dtype=float))
    rec = RunRecord(tag, seed)
    cost = J(u)
    if not np.isfinite(cost):
        raise DivergenceError("initial cost is not finite", u, rec)
    rec.append(0, cost, fidelity(u) if fidelity else None, u)
    for it in range(1, max_iter + 1):
        g = np.asarray(grad(u), dtype=float)
        if not np.all(np.isfinite(g)):
            raise DivergenceError("non-finite gradient", u, rec)
        step = sched(it - 1)
        best_u, best_c = None, np.inf
        for _ in range(max_halvings):
            cand = project_fn(u - step * g)
            c_new = J(cand)
            if not np.isfinite(c_new):
                raise DivergenceError("cost diverged", u, rec)
            if c_new < best_c:
                best_u, best_c = cand, c_new
            elif best_c <= cost:
                break
            step *= 0.5
        if best_u is None or best_c > cost:
            break
        u, cost = best_u, best_c
        F = fidelity(u) if fidelity else None
        rec.append(it, cost, F, u)
        if stop_infidelity is not None and F is not None and 1 - F <= stop_infidelity:
            break
        if len(rec.costs) > window and abs(rec.costs[-1 - window] - cost) < tol:
            break
    rec.wall_time = time.perf_counter() - t0
    return u, rec


def spsa_minimize(J_noisy, u0, constraints: Constraints, a: float = 0.2, c: float = 0.1,
                  A: float = 10.0, alpha: float = 0.602, gamma: float = 0.101,
                  max_iter: int = 300, seed=0, fidelity=None, record_every: int = 1):
    """Two-measurement SPSA with Rademacher perturbations on interior nodes.

    ``J_noisy(u, rng)`` draws its own shot noise from ``rng``. The iterate is
    projected onto the feasible set after every update.
    """
    t0 = time.perf_counter()
    rng = make_rng(seed)
    u = project(u0, constraints)
    mask = free_mask(u.size)
    rec = RunRecord("SPSA", seed if isinstance(seed, int) else None)
    rec.append(0, J_noisy(u, rng), fidelity(u) if fidelity else None, u)
    for k in range(max_iter):
        ak = a / (k + 1 + A) ** alpha
        ck = c / (k + 1) ** gamma
        delta = np.where(mask, rng.choice([-1.0, 1.0], size=u.size), 0.0)
        y_plus = J_noisy(u + ck * delta, rng)
        y_minus = J_noisy(u - ck * delta, rng)
        ghat = np.zeros_like(u)
        ghat[mask] = (y_plus - y_minus) / (2 * ck * delta[mask])
        u = project(u - ak * ghat, constraints)
        if (k + 1) % record_every == 0 or k + 1 == max_iter:
            rec.append(k + 1, 0.5 * (y_plus + y_minus), fidelity(u) if fidelity else None, u)
    rec.wall_time = time.perf_counter() - t0
    return u, rec


def random_protocol(c: Constraints, n_steps: int, rng) -> np.ndarray:
    u = rng.uniform(c.delta1, c.delta2, size=n_steps + 1)
    return project(u, c)


def representative_term(problem: ControlProblem) -> tuple:
    """``(slot, term, node)`` of the trainable angle used for gradient statistics.

    The angle is the ``ZZ`` rotation inside the controlled-phase gate between
    qubit ``n - 4`` and the most significant qubit, in the first potential
    half-step of the middle node. Qubit ``n - 4`` has weight
    ``2^(n-4) dx ~ L / 8``, so the gate probes the same physical length scale at
    every ``n``. Single-qubit ``Z`` terms are odd under the grid reflection
    ``j -> 2^n - 1 - j`` while every state and the target are even, so their
    gradients vanish identically; ``ZZ`` terms are even.
    """
    n = problem.grid.n
    if n < 2:
        raise ValueError("need at least two qubits")
    node = problem.n_steps // 2
    terms = problem._terms
    # gate order: global phase, n phase gates, then controlled-phases (q < q') row by row
    pairs = [(q, qq) for q in range(n) for qq in range(q + 1, n)]
    gate = 1 + n + pairs.index((max(n - 4, 0), n - 1))
    term = int(np.flatnonzero(terms.gate_index == gate)[2])
    return 2 * node, term, node


def avg_abs_gradient(n: int, n_steps: int | None = None, n_samples: int = 50, seed=0,
                     t_f: float = T_F, L: float = 10.0, problem: ControlProblem | None = None) -> float:
    """Mean of ``|J(theta + pi/2) - J(theta - pi/2)| / 2`` over random feasible protocols.

    ``J`` is the fidelity and ``theta`` the angle picked by
    :func:`representative_term`.
    """
    n_steps = 5 * n if n_steps is None else n_steps
    problem = problem or ControlProblem(SpatialGrid(n, L), n_steps, t_f, cost=CostKind("IF"))
    rng = make_rng(seed)
    slot, term, _ = representative_term(problem)
    mp, mm = problem._terms.mult_plus[term], problem._terms.mult_minus[term]
    vals = []
    for _ in range(n_samples):
        u = random_protocol(problem.constraints, problem.n_steps, rng)
        w = problem.half_step_overlaps(u)[slot]
        vals.append(0.5 * abs(abs(w @ mp) ** 2 - abs(w @ mm) ** 2))
    return float(np.mean(vals))


@dataclass
class ShiftCoefficient:
    mean_abs: float
    ratios: np.ndarray

    @property
    def relative_std(self) -> float:
        r = np.abs(self.ratios)
        return float(np.std(r) / np.mean(r))


def shift_coefficient(n: int, n_samples: int = 50, seed=0, n_steps: int = N_T, t_f: float = T_F,
                      L: float = 10.0, h: float = 1e-3) -> ShiftCoefficient:
    """Ratio of the node derivative carried by one gate to that gate's shift-rule derivative.

    For each random protocol, the fidelity is differentiated with respect to
    ``u_k`` through the representative gate alone (five-point finite
    differences, all other gates frozen) and divided by the shift-rule
    derivative with respect to that gate's angle. ``mean_abs`` follows the
    ``sum |ratio| / (2 N_r)`` normalisation.
    """
    problem = ControlProblem(SpatialGrid(n, L), n_steps, t_f, cost=CostKind("IF"))
    rng = make_rng(seed)
    slot, term, _ = representative_term(problem)
    terms = problem._terms
    c1 = problem._term_coeff[term]
    gen = terms.generator[term]
    ratios = []
    for _ in range(n_samples):
        u = random_protocol(problem.constraints, problem.n_steps, rng)
        w = problem.half_step_overlaps(u)[slot]

        def J(df):
            return abs(w @ np.exp(1j * c1 * df * gen)) ** 2

        d_theta = 0.5 * (abs(w @ terms.mult_plus[term]) ** 2 - abs(w @ terms.mult_minus[term]) ** 2)
        d_f = (-J(2 * h) + 8 * J(h) - 8 * J(-h) + J(-2 * h)) / (12 * h)
        ratios.append(d_f / d_theta)
    ratios = np.array(ratios)
    return ShiftCoefficient(float(np.sum(np.abs(ratios)) / (2 * n_samples)), ratios)


class NoisyFidelity:
    """Shot-based training cost ``1 - (BC_x + BC_k) / 2`` for SPSA.

    ``BC_x`` is the Bhattacharyya fidelity between ``shots`` position-basis
    samples and the target position distribution; ``BC_k`` is the same after a
    QFT on the register, so the momentum spread (and hence the chirp) is seen
    too. Each sampled bit flips with probability ``beta`` before it is read.
    """

    def __init__(self, problem: ControlProblem, shots: int = 8192, beta: float = 0.0):
        if shots < 1:
            raise ValueError("shots must be >= 1")
        if not 0.0 <= beta <= 1.0:
            raise ValueError("flip probability must lie in [0, 1]")
        self.problem = problem
        self.shots = shots
        self.beta = beta
        self.n = problem.grid.n
        self._q_x = np.abs(problem.target) ** 2
        self._q_k = np.abs(self._momentum(problem.target)) ** 2

    def _momentum(self, amps):
        return np.fft.fft(amps) / np.sqrt(amps.size)

    def _bhattacharyya(self, amps, q, rng) -> float:
        p = np.abs(amps) ** 2
        out = rng.choice(p.size, size=self.shots, p=p / p.sum())
        out = flip_bits(out, self.n, self.beta, rng)
        freq = np.bincount(out, minlength=p.size) / self.shots
        return float(np.sum(np.sqrt(freq * q)) ** 2)

    def __call__(self, u, rng) -> float:
        f = self.problem.final(u)
        bx = self._bhattacharyya(f, self._q_x, rng)
        bk = self._bhattacharyya(self._momentum(f), self._q_k, rng)
        return 1.0 - 0.5 * (bx + bk)
