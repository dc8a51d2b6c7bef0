import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from safetynet.dynamics import (PRESETS, Stability, StabilityConfig, classify_stability, eval_flow, get_system,
                                integrate_trajectory, recentered)

PEND_BOX = [[-2 * np.pi, 2 * np.pi], [-4 * np.pi, 4 * np.pi]]


def test_closed_roa_equilibria():
    sys = get_system("closed_roa")
    assert np.allclose(eval_flow(sys, [np.pi / 2, np.pi / 2]), 0, atol=1e-15)
    assert np.allclose(eval_flow(sys, [0.0, 0.0]), 0, atol=1e-15)


def test_pendulum_flow_with_negative_gravity():
    # value from direct substitution: -(g / L) sin(pi / 2) = 9.81 / 0.2
    sys = get_system("pendulum_text", {"g": -9.81, "L": 0.2})
    np.testing.assert_allclose(eval_flow(sys, [np.pi / 2, 0.0]), [0.0, 49.05], atol=1e-12)


def test_pendulum_upright_is_fixed_point():
    sys = get_system("pendulum_a")
    assert np.linalg.norm(eval_flow(sys, [np.pi, 0.0])) < 1e-12


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        eval_flow(get_system("pendulum_a"), [1.0, 2.0, 3.0])


def test_unknown_override():
    with pytest.raises(KeyError):
        get_system("pendulum_a", {"mass": 1.0})


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_registered_equilibria(name):
    sys = PRESETS[name]
    assert np.linalg.norm(eval_flow(sys, sys.equilibrium)) < 1e-9


@given(st.floats(-10, 10), st.floats(-10, 10), st.integers(0, 1), st.integers(-3, 3))
def test_closed_roa_periodic(x1, x2, axis, k):
    sys = get_system("closed_roa")
    x = np.array([x1, x2])
    y = x.copy()
    y[axis] += 2 * np.pi * k
    np.testing.assert_allclose(eval_flow(sys, x), eval_flow(sys, y), atol=1e-12)


def test_recentered_moves_equilibrium_to_origin():
    sys = recentered(get_system("closed_roa"))
    assert np.allclose(sys.equilibrium, 0)
    assert np.linalg.norm(eval_flow(sys, [0.0, 0.0])) < 1e-12
    np.testing.assert_allclose(eval_flow(sys, [0.3, -0.2]),
                               eval_flow(get_system("closed_roa"), [np.pi / 2 + 0.3, np.pi / 2 - 0.2]))


def test_trajectory_at_equilibrium_is_constant():
    sys = get_system("pendulum_a")
    tr = integrate_trajectory(sys, [0.0, 0.0], 1e-3, 1.0)
    assert np.all(tr.states == 0.0)
    tr = integrate_trajectory(sys, [np.pi, 0.0], 1e-3, 1.0)
    assert np.allclose(tr.states[-1], [np.pi, 0.0], atol=1e-12)


def test_small_swing_converges_like_reference_integrator():
    sys = get_system("pendulum_a")
    tr = integrate_trajectory(sys, [0.1, 0.0], 1e-3, 20.0, r_conv=0.05)
    assert tr.status == Stability.CONVERGED
    ref = solve_ivp(lambda t, x: eval_flow(sys, x), (0, tr.times[-1]), [0.1, 0.0], rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(tr.states[-1], ref.y[:, -1], atol=1e-6)
    assert np.linalg.norm(ref.y[:, -1]) <= 0.05 + 1e-6


def test_rk4_matches_reference_on_closed_roa():
    sys = get_system("closed_roa")
    x0 = [0.4, 2.9]
    tr = integrate_trajectory(sys, x0, 1e-2, 5.0)
    ref = solve_ivp(lambda t, x: eval_flow(sys, x), (0, 5.0), x0, rtol=1e-11, atol=1e-12)
    np.testing.assert_allclose(tr.states[-1], ref.y[:, -1], atol=1e-7)


def test_energy_non_increasing():
    sys = get_system("pendulum_a")
    p = sys.params
    tr = integrate_trajectory(sys, [2.5, 1.0], 1e-3, 5.0)
    x1, x2 = tr.states.T
    E = 0.5 * p["m"] * p["L"] ** 2 * x2 ** 2 - p["m"] * p["g"] * p["L"] * np.cos(x1)
    assert np.max(np.diff(E)) < 1e-6


def test_classify_examples():
    sys = get_system("pendulum_a")
    cfg = StabilityConfig(box=PEND_BOX)
    assert classify_stability(sys, [0.0, 0.1], cfg) == Stability.CONVERGED
    assert classify_stability(sys, [0.0, 0.0], cfg) == Stability.CONVERGED


def test_fast_swing_escapes_only_above_separatrix():
    # separatrix speed at the bottom is sqrt(4 g / L): 14.0 for L = 0.2, 11.4 for L = 0.3
    cfg = StabilityConfig(box=PEND_BOX)
    assert classify_stability(get_system("pendulum_b"), [0.0, 12.0], cfg) == Stability.ESCAPED
    assert classify_stability(get_system("pendulum_a"), [0.0, 12.0], cfg) == Stability.CONVERGED
    for name, expect_home in (("pendulum_a", True), ("pendulum_b", False)):
        sys = get_system(name)
        ref = solve_ivp(lambda t, x: eval_flow(sys, x), (0, 50), [0.0, 12.0], rtol=1e-10, atol=1e-12)
        assert (abs(ref.y[0, -1]) < 0.05) == expect_home


def test_classify_batch_matches_single():
    sys = get_system("closed_roa")
    X = np.array([[1.0, 1.0], [3.5, 0.5], [-0.5, 2.0]])
    cfg = StabilityConfig(box=[[-1, 4], [-1, 4]])
    batch = classify_stability(sys, X, cfg)
    assert list(batch) == [classify_stability(sys, x, cfg) for x in X]
    assert batch[0] == Stability.CONVERGED


def test_classify_invariant_to_halving_dt():
    sys = get_system("pendulum_a")
    rng = np.random.default_rng(3)
    X = rng.uniform([-2 * np.pi, -4 * np.pi], [2 * np.pi, 4 * np.pi], size=(1000, 2))
    box = [[-2 * np.pi, 2 * np.pi], [-8 * np.pi, 8 * np.pi]]
    a = classify_stability(sys, X, StabilityConfig(dt=2e-3, t_end=30.0, box=box))
    b = classify_stability(sys, X, StabilityConfig(dt=1e-3, t_end=30.0, box=box))
    keep = (a != Stability.UNDECIDED) & (b != Stability.UNDECIDED)
    assert keep.sum() > 100
    assert np.mean(a[keep] == b[keep]) >= 0.99
