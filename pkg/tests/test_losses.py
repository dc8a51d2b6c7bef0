import numpy as np
import pytest

from safetynet.dynamics import get_system
from safetynet.losses import (Batch, LossWeights, NonFiniteLossError, Problem, element_variations, loss_and_gradients,
                              loss_bc, loss_ic, loss_monotonicity, loss_regularization, loss_residual, loss_total,
                              loss_variational, param_gradients)
from safetynet.network import MlpModel, init_xavier
from safetynet.pde import SigmoidIc
from safetynet.sampling import SpatioTemporalDomain, generate_training_sets, make_elements

IC1 = SigmoidIc(r=0.5, center=(0.0,))


def linear(w, b=0.0):
    return MlpModel([np.array([w], dtype=float)], [np.array([b], dtype=float)])


def const(v, d=2):
    return linear([0.0] * d, v)


def test_loss_ic_examples():
    pts = np.array([[5.0, 0.0], [-5.0, 0.0]])   # phi0 = plateau 1 at both
    assert loss_ic(const(1.0), IC1, pts) == pytest.approx(0.0, abs=1e-12)
    assert loss_ic(const(0.0), IC1, pts[:1]) == pytest.approx(1.0)
    # errors 3 and 4
    m = linear([0.0, 0.0], 0.0)
    ic = SigmoidIc(a=8, m=20, r=0.5, c=-1, center=(0.0,))
    far = np.array([[5.0, 0.0]])
    assert loss_ic(const(ic(far[:, :1])[0] - 3), ic, far) == pytest.approx(3.0)
    assert loss_ic(m, IC1, np.empty((0, 2))) == 0.0
    two = np.array([[5.0, 0.0], [5.0, 0.0]])
    errs = np.array([3.0, 4.0])
    # a linear model in t gives different errors at the two points
    m2 = linear([0.0, -1.0], 1.0 - 3.0)
    pts2 = two.copy()
    pts2[1, 1] = 1.0
    assert loss_ic(m2, IC1, pts2) == pytest.approx(np.hypot(*errs))


def test_loss_bc_examples():
    pts = np.array([[2.0, 0.5]])
    assert loss_bc(const(-7.0), IC1, pts, "free") == 0.0
    assert loss_bc(const(1.0), IC1, pts, "fixed") == pytest.approx(0.0, abs=1e-12)
    assert loss_bc(const(3.0), IC1, pts, "fixed") == pytest.approx(2.0)


def test_loss_monotonicity_examples():
    pts = np.array([[5.0, 1.0], [-5.0, 2.0]])
    assert loss_monotonicity(const(0.5), IC1, pts) == 0.0
    assert loss_monotonicity(const(1.5), IC1, pts[:1]) == pytest.approx(0.5)
    m = linear([0.0, 0.1], 1.1)   # violations 0.2 at t=1 ... use t values to get 0.3 and 0.4
    pts = np.array([[5.0, 2.0], [5.0, 3.0]])
    assert loss_monotonicity(m, IC1, pts) == pytest.approx(np.hypot(0.3, 0.4))


def test_loss_residual_examples():
    sys = get_system("linear_1d")
    pts = np.array([[0.3, 0.2], [-1.0, 1.0]])
    assert loss_residual(const(0.0), sys, pts) == 0.0
    assert loss_residual(linear([0.0, -2.0]), sys, pts[:1]) == pytest.approx(2.0)


def test_loss_residual_matches_finite_differences():
    sys = get_system("closed_roa")
    m = init_xavier([3, 12, 12, 1], 3)
    S = np.random.default_rng(0).uniform([-1, -1, 0], [4, 4, 30], size=(40, 3))
    from safetynet.network import forward
    h = 1e-5
    J = np.zeros_like(S)
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        J[:, k] = (forward(m, S + e) - forward(m, S - e)) / (2 * h)
    f = sys(S[:, :2])
    r = J[:, 2] - np.minimum(0.0, np.sum(J[:, :2] * f, axis=1))
    assert loss_residual(m, sys, S) == pytest.approx(np.sqrt(np.sum(r ** 2)), rel=1e-4)


def test_variational_constant_residual():
    sys = get_system("linear_1d")
    m = linear([0.0, 1.0])                    # phi_t = 1, grad_x = 0, so r = 1
    el = make_elements([[0.0, 0.5]], 1.0)
    v = element_variations(m, sys, el, 1)
    np.testing.assert_allclose(v, [[0.25] * 4], atol=1e-15)
    assert loss_variational(m, sys, el, 1) == pytest.approx(0.5, abs=1e-15)
    np.testing.assert_allclose(element_variations(m, sys, el, 2), v, atol=1e-12)
    assert loss_variational(const(0.0), sys, el) == 0.0


def test_variational_clipped_dropped():
    sys = get_system("linear_1d")
    m = linear([0.0, 1.0])
    dom = SpatioTemporalDomain([[-1, 1]], 1.0, 0.5, 0.5)
    el = make_elements([[0.0, 0.5], [0.9, 0.5]], 0.5, dom)
    assert el.clipped.tolist() == [False, True]
    full = make_elements([[0.0, 0.5], [0.9, 0.5]], 0.5)
    assert loss_variational(m, sys, el) <= loss_variational(m, sys, full)


def test_regularization():
    zero = MlpModel([np.zeros((2, 2)), np.zeros((1, 2))], [np.zeros(2), np.zeros(1)])
    assert loss_regularization(zero) == 0.0
    assert loss_regularization(linear([3.0, 4.0], 0.0)) == 5.0
    m = init_xavier([2, 5, 1], 0)
    m.biases[0][:] = 0.3
    m2 = MlpModel([2 * W for W in m.weights], [2 * b for b in m.biases])
    assert loss_regularization(m2) == pytest.approx(2 * loss_regularization(m))


def _problem_and_batch(seed=0, bc="fixed"):
    dom = SpatioTemporalDomain([[-1, 4], [-1, 4]], 30.0, 1.25, 7.5)
    sets = generate_training_sets(dom, 40, seed, n_random_ic=30, n_random_bc=10, sigma=0.8)
    prob = Problem(get_system("closed_roa"), SigmoidIc(r=1.0, center=(np.pi / 2, np.pi / 2)), bc)
    return prob, Batch(sets.ic_points, sets.bc_points, sets.collocation_points, sets.elements)


def test_total_is_weighted_sum_and_linear():
    prob, batch = _problem_and_batch()
    m = init_xavier([3, 10, 10, 1], 1)
    rep = loss_total(m, prob, batch)
    assert rep.total == pytest.approx(sum(getattr(prob.weights, f"c_{t}") * v
                                          for t, v in zip(("ic", "bc", "mon", "r", "v", "reg"), rep.row()[:6])),
                                      rel=1e-12)
    rep3 = loss_total(m, prob, batch, prob.weights.scaled(3.0))
    assert rep3.total == pytest.approx(3 * rep.total, rel=1e-12)
    no_v = loss_total(m, prob, batch, LossWeights(c_v=0.0))
    assert no_v.total == pytest.approx(rep.total - rep.l_v, rel=1e-12)
    assert all(v >= 0 for v in rep.row())


def test_only_residual_gives_unit_total():
    sys = get_system("linear_1d")
    prob = Problem(sys, IC1, "fixed")
    m = linear([0.0, -1.0])
    batch = Batch(np.empty((0, 2)), np.empty((0, 2)), np.array([[0.0, 0.5]]), make_elements(np.empty((0, 2)), 1.0))
    rep = loss_total(m, prob, batch, LossWeights(0, 0, 0, 1, 0, 0))
    assert rep.l_r == pytest.approx(1.0) and rep.total == pytest.approx(1.0)


def test_permutation_invariance():
    prob, batch = _problem_and_batch()
    m = init_xavier([3, 10, 1], 2)
    rng = np.random.default_rng(5)
    p1, p2, p3 = (rng.permutation(len(a)) for a in (batch.ic, batch.bc, batch.collocation))
    shuffled = Batch(batch.ic[p1], batch.bc[p2], batch.collocation[p3], batch.elements.subset(p3))
    a, b = loss_total(m, prob, batch), loss_total(m, prob, shuffled)
    np.testing.assert_allclose(a.row(), b.row(), rtol=1e-12)


def test_free_bc_zero():
    prob, batch = _problem_and_batch(bc="free")
    rep = loss_total(init_xavier([3, 6, 1], 0), prob, batch)
    assert rep.l_bc == 0.0 and rep.counts["bc"] == 0


def _fd_directional(m, prob, batch, w, direction, h=1e-6):
    flat = m.flat()
    sizes = m.layer_sizes
    up = loss_total(MlpModel.from_flat(sizes, flat + h * direction), prob, batch, w).total
    dn = loss_total(MlpModel.from_flat(sizes, flat - h * direction), prob, batch, w).total
    return (up - dn) / (2 * h)


@pytest.mark.parametrize("term", ["total", "ic", "bc", "mon", "r", "v", "reg"])
def test_param_gradients_finite_differences(term):
    prob, batch = _problem_and_batch(seed=3)
    m = init_xavier([3, 10, 10, 1], 7)
    for b in m.biases:
        b[:] = np.random.default_rng(1).normal(scale=0.3, size=b.shape)
    w = prob.weights if term == "total" else LossWeights(**{f"c_{t}": float(t == term)
                                                             for t in ("ic", "bc", "mon", "r", "v", "reg")})
    g = np.concatenate([x.ravel() for x in param_gradients(m, prob, batch, term)])
    rng = np.random.default_rng(2)
    errs = []
    for _ in range(20):
        u = rng.normal(size=g.size)
        u /= np.linalg.norm(u)
        fd = _fd_directional(m, prob, batch, w, u)
        an = g @ u
        errs.append(abs(an - fd) / max(abs(fd), abs(an), 1e-6))
    assert np.median(errs) < 1e-4 and max(errs) < 1e-3


def test_zero_loss_zero_gradient():
    prob = Problem(get_system("linear_1d"), IC1)
    m = const(-5.0)        # far below phi0 everywhere: monotonicity inactive
    batch = Batch(np.empty((0, 2)), np.empty((0, 2)), np.array([[0.0, 0.5], [1.0, 1.0]]),
                  make_elements(np.empty((0, 2)), 1.0))
    g = param_gradients(m, prob, batch, "mon")
    assert all(np.all(x == 0) for x in g)


def test_weight_doubling_doubles_gradient():
    prob, batch = _problem_and_batch()
    m = init_xavier([3, 8, 1], 4)
    g1 = loss_and_gradients(m, prob, batch, LossWeights(1, 0, 0, 1, 0, 0))[1]
    g2 = loss_and_gradients(m, prob, batch, LossWeights(1, 0, 0, 2, 0, 0))[1]
    gr = loss_and_gradients(m, prob, batch, LossWeights(0, 0, 0, 1, 0, 0))[1]
    for a, b, c in zip(g1, g2, gr):
        np.testing.assert_allclose(b - a, c, atol=1e-12)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nonfinite_component_named():
    prob, batch = _problem_and_batch()
    m = init_xavier([3, 4, 1], 0)
    m.weights[-1][0, 0] = np.inf
    with pytest.raises(NonFiniteLossError) as exc:
        loss_total(m, prob, batch)
    assert exc.value.component in ("ic", "bc", "mon", "r", "v", "reg")


def test_inactive_branch_residual_is_phi_t():
    # phi = x + t under f = x (pointing outward for x > 0): grad . f = x >= 0, so r = phi_t
    sys = get_system("linear_1d", {"rate": -1.0})
    m = linear([1.0, 1.0])
    S = np.array([[0.5, 0.1], [1.5, 0.2], [2.0, 0.9]])
    assert loss_residual(m, sys, S) == pytest.approx(np.sqrt(3.0))


def test_param_gradients_with_input_map():
    prob, batch = _problem_and_batch(seed=4)
    m = init_xavier([3, 8, 8, 1], 9).with_input_map([1.5, 1.5, 15.0], [0.4, 0.4, 1 / 15])
    g = np.concatenate([x.ravel() for x in param_gradients(m, prob, batch)])
    u = np.random.default_rng(0).normal(size=g.size)
    u /= np.linalg.norm(u)
    flat, h = m.flat(), 1e-6
    mk = lambda v: MlpModel.from_flat(m.layer_sizes, v, m.input_offset, m.input_scale)
    fd = (loss_total(mk(flat + h * u), prob, batch).total - loss_total(mk(flat - h * u), prob, batch).total) / (2 * h)
    assert g @ u == pytest.approx(fd, rel=1e-5)
