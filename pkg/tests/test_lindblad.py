import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from superatom.lindblad import (
    IntegrationError,
    InvariantViolation,
    LindbladSystem,
    check_density,
    dissipator,
    liouvillian,
    propagate,
    pure_state,
    rhs,
    steady_state_reached,
)


def _random_op(rng, dim):
    return rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))


def _random_state(rng, dim):
    a = _random_op(rng, dim)
    rho = a @ a.conj().T
    return rho / np.trace(rho)


def _two_level(gamma, omega=0.0):
    lower = np.array([[0, 1], [0, 0]], dtype=complex)
    h = 0.5 * omega * np.array([[0, 1], [1, 0]], dtype=complex)
    return LindbladSystem(dim=2, hamiltonian=lambda t: h, jumps=[(gamma, lower)])


def test_rhs_matches_superoperator(rng):
    dim = 5
    h = _random_op(rng, dim)
    h = h + h.conj().T
    jumps = [(0.3, _random_op(rng, dim)), (1.2, _random_op(rng, dim))]
    system = LindbladSystem(dim=dim, hamiltonian=lambda t: h, jumps=jumps)
    rho = _random_state(rng, dim)
    direct = rhs(system, rho, 0.0)
    # brute force from the textbook form
    brute = -1j * (h @ rho - rho @ h)
    for rate, op in jumps:
        brute += rate * dissipator(op, rho)
    assert np.allclose(direct, brute, atol=1e-12)
    sup = liouvillian(h, jumps) @ rho.reshape(-1)
    assert np.allclose(sup.reshape(dim, dim), brute, atol=1e-12)


def test_rhs_shape_check():
    with pytest.raises(ValueError):
        rhs(_two_level(1.0), np.eye(3), 0.0)


def test_jump_validation():
    with pytest.raises(ValueError):
        LindbladSystem(dim=2, hamiltonian=lambda t: np.zeros((2, 2)), jumps=[(-1.0, np.eye(2))])
    with pytest.raises(ValueError):
        LindbladSystem(dim=2, hamiltonian=lambda t: np.zeros((2, 2)), jumps=[(1.0, np.eye(3))])


def test_exponential_decay():
    grid = np.linspace(0, 5, 51)
    sol = propagate(_two_level(0.8), pure_state(2, 1), grid, rtol=1e-10, atol=1e-12)
    assert np.allclose(sol.states[:, 1, 1].real, np.exp(-0.8 * grid), atol=1e-9)
    assert sol.max_trace_error < 1e-12
    assert sol.error_estimate < 1e-6


def test_undamped_rabi():
    omega = 3.0
    grid = np.linspace(0, 4, 41)
    sol = propagate(_two_level(0.0, omega), pure_state(2, 0), grid, rtol=1e-10, atol=1e-12)
    assert np.allclose(sol.states[:, 1, 1].real, np.sin(omega * grid / 2) ** 2, atol=1e-8)


def test_damped_rabi_steady_state():
    # steady-state excited population of a resonantly driven two-level system
    gamma, omega = 1.0, 2.0
    grid = np.linspace(0, 30, 301)
    sol = propagate(_two_level(gamma, omega), pure_state(2, 0), grid)
    expected = omega**2 / 4 / (omega**2 / 2 + gamma**2 / 4)
    assert sol.states[-1, 1, 1].real == pytest.approx(expected, abs=1e-7)
    assert steady_state_reached(sol.states, 5.0, 1e-6, times=grid)
    assert not steady_state_reached(sol.states[:20], 5, 1e-6)


def test_observe_hook():
    grid = np.linspace(0, 1, 11)
    sol = propagate(_two_level(1.0), pure_state(2, 1), grid, observe=lambda t, r: r[1, 1].real)
    assert sol.states is None
    assert np.allclose(sol.observed, np.exp(-grid), atol=1e-8)


def test_grid_validation():
    with pytest.raises(ValueError):
        propagate(_two_level(1.0), pure_state(2, 0), [0.0, 0.0, 1.0])
    with pytest.raises(ValueError):
        propagate(_two_level(1.0), pure_state(3, 0), [0.0, 1.0])


def test_step_budget():
    with pytest.raises(IntegrationError):
        propagate(_two_level(1.0, 50.0), pure_state(2, 0), [0.0, 10.0], max_steps=5)


def test_invalid_initial_state_detected():
    bad = np.array([[1.2, 0], [0, -0.2]], dtype=complex)
    with pytest.raises(InvariantViolation):
        propagate(_two_level(1.0), bad, [0.0, 1.0])
    with pytest.raises(InvariantViolation):
        check_density(np.array([[0.5, 0.1], [0.3, 0.5]]))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), dim=st.integers(2, 5))
def test_generator_preserves_trace_and_hermiticity(seed, dim):
    rng = np.random.default_rng(seed)
    h = _random_op(rng, dim)
    h = h + h.conj().T
    system = LindbladSystem(dim=dim, hamiltonian=lambda t: h, jumps=[(0.7, _random_op(rng, dim))])
    out = system.rhs(0.0, _random_state(rng, dim))
    assert abs(np.trace(out)) < 1e-10
    assert np.allclose(out, out.conj().T, atol=1e-10)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_propagation_stays_physical(seed):
    rng = np.random.default_rng(seed)
    dim = 3
    h = _random_op(rng, dim)
    h = h + h.conj().T
    system = LindbladSystem(dim=dim, hamiltonian=lambda t: np.sin(t) * h, jumps=[(0.5, _random_op(rng, dim))])
    sol = propagate(system, _random_state(rng, dim), np.linspace(0, 2, 5), check="full")
    assert sol.max_trace_error <= 1e-8
    assert sol.max_hermiticity <= 1e-10
    assert sol.min_eigenvalue >= -1e-8
