import numpy as np
import pytest
from hypothesis import given, strategies as st

from qdrive.cost import (
    BA,
    FS,
    FS_CAP_DECADES,
    IF,
    CostKind,
    bures_angle,
    classical_fidelity,
    fidelity,
    fidelity_susceptibility,
)
from qdrive.oracle import gaussian_state
from qdrive.prep import encode
from qdrive.protocol import GAMMA
from qdrive.simcore import CountsHistogram, QubitState


@pytest.fixture
def pair(grid):
    return encode(gaussian_state(1.0, 0.0, grid)), encode(gaussian_state(GAMMA, 0.0, grid))


def test_fidelity_trivial():
    s = QubitState.from_amplitudes([1, 1j, 0, 2])
    assert fidelity(s, s) == pytest.approx(1.0)
    assert fidelity(QubitState.basis(1, 0), QubitState.basis(1, 1)) == 0.0


def test_gaussian_pair(pair):
    a, b = pair
    expected = 2 * GAMMA / (1 + GAMMA**2)
    assert abs(fidelity(a, b) - expected) < 1e-3
    assert abs(fidelity(a, b) - 0.5750) < 1e-3
    assert abs(bures_angle(a, b) - 0.7094) < 1e-3


def test_bures_trivial():
    s = QubitState.from_amplitudes([1, 2])
    assert bures_angle(s, s) == pytest.approx(0.0, abs=1e-7)
    assert bures_angle(QubitState.basis(1, 0), QubitState.basis(1, 1)) == pytest.approx(np.pi / 2)


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        fidelity(QubitState.basis(1), QubitState.basis(2))
    with pytest.raises(ValueError):
        bures_angle(QubitState.basis(1), QubitState.basis(2))


def test_fs_values():
    assert fidelity_susceptibility(1.0, 1e-3) == 0.0
    d = 0.37
    assert fidelity_susceptibility(np.exp(-d / 2), d) == pytest.approx(1.0)
    assert fidelity_susceptibility(0.999, 1e-3) == pytest.approx(2.001, abs=1e-3)


def test_fs_cap_at_zero():
    cap = 2 * FS_CAP_DECADES * np.log(10) / 1e-3
    assert fidelity_susceptibility(0.0, 1e-3) == pytest.approx(cap)
    assert np.isfinite(FS(1e-3).from_fidelity(0.0))
    assert FS(1e-3).derivative(0.0) == 0.0
    with pytest.raises(ValueError):
        fidelity_susceptibility(0.5, 0.0)


def test_classical_fidelity():
    h = CountsHistogram(4, {0: 2, 1: 2})
    assert classical_fidelity(h, [0.25, 0.75]) == pytest.approx((np.sqrt(0.125) + np.sqrt(0.375)) ** 2)
    # the unsquared Bhattacharyya coefficient is the familiar ~0.966
    assert np.sqrt(classical_fidelity(h, [0.25, 0.75])) == pytest.approx(0.9659, abs=1e-4)
    assert classical_fidelity(CountsHistogram(3, {0: 3}), [0.0, 1.0]) == 0.0


def test_classical_fidelity_large_sample():
    q = np.array([0.1, 0.2, 0.3, 0.4])
    shots = 200_000
    draws = np.random.default_rng(0).choice(4, size=shots, p=q)
    idx, cnt = np.unique(draws, return_counts=True)
    h = CountsHistogram(shots, dict(zip(idx.tolist(), cnt.tolist())))
    assert abs(classical_fidelity(h, q) - 1) < 5 / np.sqrt(shots)


def test_cost_kind_labels_and_errors():
    assert FS(1e-2).label == "FS(0.01)"
    assert IF.label == "IF"
    with pytest.raises(ValueError):
        CostKind("XX")
    with pytest.raises(ValueError):
        CostKind("FS", 0.0)


@given(st.floats(0.01, 0.99))
def test_cost_derivatives_match_finite_difference(F):
    h = 1e-7
    for c in (IF, BA, FS(1e-3)):
        fd = (c.from_fidelity(F + h) - c.from_fidelity(F - h)) / (2 * h)
        assert c.derivative(F) == pytest.approx(fd, rel=1e-5)


@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_costs_decrease_with_fidelity(a, b):
    lo, hi = min(a, b), max(a, b)
    for c in (IF, BA, FS(1e-3)):
        assert c.from_fidelity(hi) <= c.from_fidelity(lo) + 1e-12


def test_cost_call(pair):
    a, b = pair
    assert IF(a, b) == pytest.approx(1 - fidelity(a, b))
    assert BA(a, b) == pytest.approx(bures_angle(a, b))
