"""Classical ground truth for the expanding-trap problem (hbar = m = omega_0 = 1).

Gaussian states, Ermakov integration, FFT split-operator evolution, the
three-jump bang-bang protocol and its switching times, energy moments and
speed-limit quantities.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .protocol import DELTA1, DELTA2, GAMMA, ControlProtocol, Constraints, InfeasibleError, SpatialGrid


class SingularityError(RuntimeError):
    """The scaling factor reached zero (an inverted trap collapsed the packet)."""


class UndefinedBoundError(ValueError):
    pass


@dataclass
class GridWavefunction:
    grid: SpatialGrid
    amps: np.ndarray

    def norm(self) -> float:
        return float(np.sum(np.abs(self.amps) ** 2) * self.grid.dx)

    def density(self) -> np.ndarray:
        return np.abs(self.amps) ** 2

    def moment(self, power: int = 2) -> float:
        return float(np.sum(self.density() * self.grid.x**power) * self.grid.dx)

    def inner(self, other: "GridWavefunction") -> complex:
        return complex(np.vdot(self.amps, other.amps) * self.grid.dx)


@dataclass(frozen=True)
class ErmakovState:
    b: float
    bdot: float


@dataclass(frozen=True)
class BangBangTimes:
    t1: float
    t2: float

    @property
    def t_f_opt(self) -> float:
        return self.t1 + self.t2


def gaussian_state(b: float, bdot: float, grid: SpatialGrid, omega0: float = 1.0) -> GridWavefunction:
    """Scaled Gaussian with width ``b`` and chirp ``bdot/b``; dynamical phase dropped."""
    if b <= 0:
        raise ValueError("scaling factor must be positive")
    x = grid.x
    amps = (omega0 / (np.pi * b**2)) ** 0.25 * np.exp(0.5j * (bdot / b) * x**2 - omega0 / (2 * b**2) * x**2)
    return GridWavefunction(grid, amps.astype(np.complex128))


def _u_of_t(u, t_f):
    if isinstance(u, ControlProtocol):
        vals, dt, n = u.u, u.dt, u.n_steps

        def f(t):
            k = min(int(np.floor(t / dt + 1e-12)), n - 1)
            return vals[k]

        return f
    if callable(u):
        return u
    c = float(u)
    return lambda t: c


def ermakov_integrate(u, t_f: float, steps: int = 10_000, b0: float = 1.0, bdot0: float = 0.0,
                      omega0: float = 1.0):
    """RK4 trajectory of ``b'' + u(t) b = omega0^2 / b^3``.

    ``u`` may be a constant, a callable of ``t`` or a :class:`ControlProtocol`.
    For a protocol the number of substeps is rounded up to a multiple of
    ``N_t`` so that every substep lies inside one control interval.
    Returns ``(times, b, bdot)`` arrays of length ``steps + 1``.
    """
    if isinstance(u, ControlProtocol):
        per = max(1, -(-steps // u.n_steps))
        steps = per * u.n_steps
        held = np.repeat(u.u[:-1], per)
        u_left = u_mid = u_right = held
    else:
        g = _u_of_t(u, t_f)
        ts = np.linspace(0.0, t_f, steps + 1)
        u_left = np.array([g(t) for t in ts[:-1]])
        u_mid = np.array([g(t) for t in ts[:-1] + 0.5 * (ts[1] - ts[0])])
        u_right = np.array([g(t) for t in ts[1:]])
    h = t_f / steps
    w2 = omega0**2
    b = np.empty(steps + 1)
    v = np.empty(steps + 1)
    b[0], v[0] = b0, bdot0

    def acc(bb, w):
        if bb <= 0:
            raise SingularityError("scaling factor reached zero")
        return -w * bb + w2 / bb**3

    for i in range(steps):
        bb, vv = b[i], v[i]
        wa, wm, wb = u_left[i], u_mid[i], u_right[i]
        k1b, k1v = vv, acc(bb, wa)
        k2b, k2v = vv + h / 2 * k1v, acc(bb + h / 2 * k1b, wm)
        k3b, k3v = vv + h / 2 * k2v, acc(bb + h / 2 * k2b, wm)
        k4b, k4v = vv + h * k3v, acc(bb + h * k3b, wb)
        b[i + 1] = bb + h / 6 * (k1b + 2 * k2b + 2 * k3b + k4b)
        v[i + 1] = vv + h / 6 * (k1v + 2 * k2v + 2 * k3v + k4v)
        if b[i + 1] <= 0:
            raise SingularityError("scaling factor reached zero")
    return np.linspace(0.0, t_f, steps + 1), b, v


def som_evolve(psi: GridWavefunction, protocol: ControlProtocol, return_trajectory: bool = False):
    """FFT split-operator evolution; interval ``k`` uses ``u[k]``.

    With ``return_trajectory`` the wavefunctions at every node are returned too.
    """
    grid = psi.grid
    x2 = grid.x**2
    kin = np.exp(-0.5j * protocol.dt * grid.k**2)
    amps = psi.amps.copy()
    traj = [GridWavefunction(grid, amps.copy())]
    for k in range(protocol.n_steps):
        half = np.exp(-0.25j * protocol.dt * protocol.u[k] * x2)
        amps = half * np.fft.ifft(kin * np.fft.fft(half * amps))
        if return_trajectory:
            traj.append(GridWavefunction(grid, amps.copy()))
    out = GridWavefunction(grid, amps)
    return (out, traj) if return_trajectory else out


def bangbang_times(gamma: float = GAMMA, delta1: float = DELTA1, delta2: float = DELTA2) -> BangBangTimes:
    """Switching time and duration of the bounded three-jump expansion protocol.

    Both radicands are taken in absolute value; with ``delta1 < delta2`` the
    raw expressions are negative.
    """
    g2 = gamma**2
    if np.isclose(gamma, 1.0):
        return BangBangTimes(0.0, 0.0)
    if not (0 < delta1 < 1 / gamma**4 <= delta2):
        raise InfeasibleError("bounds must satisfy 0 < delta1 < 1/gamma^4 <= delta2")
    r1 = abs(delta1 * (g2 - 1) * (g2 * delta2 - 1) / ((delta1 - delta2) * g2 * (1 - delta1)))
    r2 = abs(delta2 * (g2 - 1) * (1 - g2 * delta1) / ((delta1 - delta2) * (1 - gamma**4 * delta2)))
    s2 = np.sqrt(r2)
    if s2 > 1:
        raise InfeasibleError("asin argument outside [0, 1]")
    t1 = np.arcsinh(np.sqrt(r1)) / np.sqrt(delta1)
    t2 = np.arcsin(s2) / np.sqrt(delta2)
    return BangBangTimes(float(t1), float(t2))


def bangbang_protocol(gamma: float = GAMMA, delta1: float = DELTA1, delta2: float = DELTA2,
                      n_steps: int = 50, constraints: Constraints | None = None) -> ControlProtocol:
    """Sample the bang-bang protocol at ``n_steps + 1`` nodes over ``[0, t_f_opt]``.

    Interval ``k`` uses node ``k``, so interval 0 always runs at the pinned
    ``u = 1``. The ``delta2`` stretch is rounded to the nearest whole number of
    intervals ending at ``t_f``; the remaining interior nodes take ``delta1``.
    """
    times = bangbang_times(gamma, delta1, delta2)
    t_f = times.t_f_opt
    dt = t_f / n_steps
    n_high = int(np.rint(times.t2 / dt))
    switch = n_steps - 1 - n_high
    u = np.where(np.arange(n_steps + 1) <= switch, delta1, delta2).astype(float)
    u[0] = 1.0
    u[-1] = 1.0 / gamma**4
    c = constraints or Constraints(delta1=delta1, delta2=delta2, slew=np.inf,
                                   u_start=1.0, u_end=1.0 / gamma**4)
    return ControlProtocol(u, t_f, c)


def hamiltonian_apply(psi: GridWavefunction, u: float) -> np.ndarray:
    grid = psi.grid
    kin = np.fft.ifft(0.5 * grid.k**2 * np.fft.fft(psi.amps))
    return kin + 0.5 * u * grid.x**2 * psi.amps


def energy_moments(psi: GridWavefunction, u: float) -> tuple:
    """Mean energy and energy dispersion ``sqrt(<H^2> - <H>^2)`` with ``<H^2> = ||H psi||^2``."""
    dx = psi.grid.dx
    hpsi = hamiltonian_apply(psi, u)
    mean = float(np.real(np.vdot(psi.amps, hpsi)) * dx)
    sq = float(np.sum(np.abs(hpsi) ** 2) * dx)
    return mean, float(np.sqrt(max(sq - mean**2, 0.0)))


@dataclass(frozen=True)
class QSLResult:
    mean_dispersion: float
    bures_angle: float
    tau_bures: float
    tau_gaussian: float
    dispersions: np.ndarray


def qsl_time(states, u_values, times, psi_target: GridWavefunction | None = None,
             gamma: float = GAMMA, tol: float = 1e-9) -> QSLResult:
    """Time-averaged energy dispersion along a node-sampled trajectory and both speed-limit times.

    ``states[k]`` is the wavefunction at node ``t_k`` and ``u_values[k]`` the
    trap strength applied there. ``tau_bures`` uses the Bures angle between the
    first and last states; ``tau_gaussian`` uses ``sqrt(2 gamma / (1 + gamma^2))``.
    """
    disp = np.array([energy_moments(s, u)[1] for s, u in zip(states, u_values)])
    times = np.asarray(times, dtype=float)
    avg = float(np.trapezoid(disp, times) / (times[-1] - times[0]))
    if avg <= tol:
        raise UndefinedBoundError("time-averaged energy dispersion vanishes")
    final = states[-1] if psi_target is None else psi_target
    ov = abs(states[0].inner(final))
    angle = float(np.arccos(min(ov, 1.0)))
    root = float(np.sqrt(2 * gamma / (1 + gamma**2)))
    return QSLResult(avg, angle, angle / avg, root / avg, disp)
