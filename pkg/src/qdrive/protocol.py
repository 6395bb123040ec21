"""Spatial grid, control protocol and constraint containers shared by every module."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Default physics set: omega_0 = 1 expanded to omega_f = 0.1.
GAMMA = float(np.sqrt(10.0))
DELTA1 = 1e-6
DELTA2 = 1.0
T_F = 3.152
N_T = 50


@dataclass(frozen=True)
class SpatialGrid:
    n: int = 6
    L: float = 10.0

    @property
    def size(self) -> int:
        return 1 << self.n

    @property
    def dx(self) -> float:
        return 2.0 * self.L / (self.size - 1)

    @property
    def x(self) -> np.ndarray:
        return -self.L + self.dx * np.arange(self.size)

    @property
    def dk(self) -> float:
        return 2.0 * np.pi / (self.size * self.dx)

    @property
    def k(self) -> np.ndarray:
        """Momenta in FFT ordering."""
        return 2.0 * np.pi * np.fft.fftfreq(self.size, d=self.dx)

    @property
    def k_centered(self) -> np.ndarray:
        return self.dk * (np.arange(self.size) - self.size // 2)


class InfeasibleError(ValueError):
    pass


@dataclass(frozen=True)
class Constraints:
    delta1: float = DELTA1
    delta2: float = DELTA2
    slew: float = 1.0
    u_start: float = 1.0
    u_end: float = 1.0 / GAMMA**4

    def __post_init__(self):
        if not self.delta1 <= self.delta2:
            raise InfeasibleError("delta1 must not exceed delta2")
        for pin in (self.u_start, self.u_end):
            if not self.delta1 <= pin <= self.delta2:
                raise InfeasibleError(f"pin {pin} outside [{self.delta1}, {self.delta2}]")

    def is_feasible(self, u: np.ndarray, atol: float = 1e-12) -> bool:
        u = np.asarray(u, dtype=float)
        return bool(
            np.isclose(u[0], self.u_start, rtol=0, atol=atol)
            and np.isclose(u[-1], self.u_end, rtol=0, atol=atol)
            and np.all(u >= self.delta1 - atol)
            and np.all(u <= self.delta2 + atol)
            and np.all(np.abs(np.diff(u)) <= self.slew + atol)
        )


@dataclass
class ControlProtocol:
    """Piecewise-constant ``u = omega^2 / omega_0^2`` sampled at ``N_t + 1`` nodes.

    Interval ``k`` (``t_k <= t < t_{k+1}``) uses the left-node value ``u[k]``.
    """

    u: np.ndarray
    t_f: float
    constraints: Constraints = field(default_factory=Constraints)

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float)
        if self.u.ndim != 1 or self.u.size < 2:
            raise ValueError("protocol needs at least two nodes")
        if not self.t_f > 0:
            raise ValueError("t_f must be positive")

    @property
    def n_steps(self) -> int:
        return self.u.size - 1

    @property
    def dt(self) -> float:
        return self.t_f / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.t_f, self.u.size)

    def is_feasible(self) -> bool:
        return self.constraints.is_feasible(self.u)

    def with_values(self, u) -> "ControlProtocol":
        return ControlProtocol(np.asarray(u, dtype=float), self.t_f, self.constraints)

    @classmethod
    def linear_ramp(cls, n_steps: int = N_T, t_f: float = T_F, constraints: Constraints | None = None):
        c = constraints or Constraints()
        return cls(np.linspace(c.u_start, c.u_end, n_steps + 1), t_f, c)

    @classmethod
    def constant(cls, value: float, n_steps: int, t_f: float):
        c = Constraints(delta1=min(DELTA1, value), delta2=max(DELTA2, value), slew=np.inf,
                        u_start=value, u_end=value)
        return cls(np.full(n_steps + 1, float(value)), t_f, c)
