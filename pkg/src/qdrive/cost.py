"""Cost functions between a final register state and the target."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .simcore import CountsHistogram, QubitState, overlap

FS_CAP_DECADES = 16.0


def fidelity(a: QubitState, b: QubitState) -> float:
    return float(min(abs(overlap(a, b)) ** 2, 1.0))


def bures_angle(a: QubitState, b: QubitState) -> float:
    return float(np.arccos(min(abs(overlap(a, b)), 1.0)))


def fidelity_susceptibility(F: float, delta_f: float) -> float:
    """``-2 ln F / delta_f``; ``F = 0`` maps to a finite cap of ``2 ln(1e16) / delta_f``."""
    if delta_f <= 0:
        raise ValueError("delta_f must be positive")
    cap = 2.0 * FS_CAP_DECADES * np.log(10.0) / delta_f
    if F <= 0:
        return cap
    return float(min(-2.0 * np.log(min(F, 1.0)) / delta_f, cap))


def classical_fidelity(counts: CountsHistogram, target_probs) -> float:
    """Bhattacharyya fidelity ``(sum_i sqrt(p_i q_i))^2`` between sampled and target distributions."""
    q = np.asarray(target_probs, dtype=float)
    n = int(round(np.log2(q.size)))
    p = counts.frequencies(n)
    return float(np.sum(np.sqrt(p * q)) ** 2)


@dataclass(frozen=True)
class CostKind:
    """Exact costs expressed as functions of the fidelity ``F``.

    ``tag`` is one of ``"IF"`` (``1 - F``), ``"BA"`` (Bures angle),
    ``"FS"`` (fidelity susceptibility with ``delta_f``) or ``"CLASSICAL"``
    (shot-based; evaluated from counts, see :func:`classical_fidelity`).
    """

    tag: str
    delta_f: float = 1e-3

    def __post_init__(self):
        if self.tag not in ("IF", "BA", "FS", "CLASSICAL"):
            raise ValueError(f"unknown cost tag {self.tag!r}")
        if self.tag == "FS" and not self.delta_f > 0:
            raise ValueError("FS needs delta_f > 0")

    @property
    def label(self) -> str:
        return f"FS({self.delta_f:g})" if self.tag == "FS" else self.tag

    def from_fidelity(self, F):
        """Cost value; accepts scalars or arrays of fidelities."""
        F = np.clip(np.asarray(F, dtype=float), 0.0, 1.0)
        if self.tag in ("IF", "CLASSICAL"):
            out = 1.0 - F
        elif self.tag == "BA":
            out = np.arccos(np.sqrt(F))
        else:
            cap = 2.0 * FS_CAP_DECADES * np.log(10.0) / self.delta_f
            with np.errstate(divide="ignore"):
                out = np.minimum(-2.0 * np.log(F) / self.delta_f, cap)
        return float(out) if out.ndim == 0 else out

    def derivative(self, F: float) -> float:
        """``d cost / d F``."""
        F = float(np.clip(F, 0.0, 1.0))
        if self.tag in ("IF", "CLASSICAL"):
            return -1.0
        if self.tag == "BA":
            den = 2.0 * np.sqrt(F * (1.0 - F))
            return -1.0 / den if den > 0 else -np.inf if F < 1 else 0.0
        if self.from_fidelity(F) >= 2.0 * FS_CAP_DECADES * np.log(10.0) / self.delta_f:
            return 0.0
        return -2.0 / (self.delta_f * F)

    def __call__(self, final: QubitState, target: QubitState) -> float:
        return self.from_fidelity(fidelity(target, final))


IF = CostKind("IF")
BA = CostKind("BA")


def FS(delta_f: float = 1e-3) -> CostKind:
    return CostKind("FS", delta_f)
