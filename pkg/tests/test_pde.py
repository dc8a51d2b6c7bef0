import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from safetynet.contours import marching_squares, point_in_polygon
from safetynet.pde import SigmoidIc, SliceSpec, extract_roa, residual, sigmoid_ic
from safetynet.sampling import SpatioTemporalDomain

finite = st.floats(-1e3, 1e3, allow_nan=False)
BOX = SpatioTemporalDomain([[-2, 2], [-2, 2]], 1.0, 0.5, 0.5)


def test_sigmoid_values():
    ic = SigmoidIc(a=2, m=20, r=1.5, c=-1, center=(1.0, 1.0))
    assert ic(np.array([2.5, 1.0])) == pytest.approx(0.0, abs=1e-15)
    assert SigmoidIc(a=3, m=5, r=1, c=-2, center=(0, 0))(np.array([1.0, 0.0])) == pytest.approx(-0.5)
    assert ic(np.array([1e6, 0.0])) == pytest.approx(1.0)
    assert ic(np.array([1.0, 1.0])) == pytest.approx(-1.0, abs=1e-12)
    assert np.isfinite(sigmoid_ic(SigmoidIc(m=1e4), np.array([[1e8, 0.0], [0.0, 0.0]]))).all()


def test_sigmoid_matches_printed_logistic():
    ic = SigmoidIc(a=2, m=20, r=1, c=-1, center=(0, 0))
    x = np.random.default_rng(0).uniform(-2, 2, size=(100, 2))
    ref = 2 / (1 + np.exp(-20 * (np.linalg.norm(x, axis=1) - 1))) - 1
    np.testing.assert_allclose(ic(x), ref, atol=1e-14)


def test_sigmoid_invariants():
    with pytest.raises(ValueError):
        SigmoidIc(a=1, c=-1)
    with pytest.raises(ValueError):
        SigmoidIc(m=-1)
    with pytest.raises(ValueError):
        SigmoidIc(a=2, c=0.5)


def test_residual_examples():
    assert residual(0.0, [0.0, 0.0], [1.0, 2.0]) == 0.0
    assert residual(1.0, [1.0, 1.0], [1.0, 2.0]) == 1.0
    # with phi_t = min(0, grad . f) the defect vanishes on the active branch
    assert residual(-2.0, [1.0, 0.0], [-2.0, 5.0]) == 0.0
    assert residual(-2.0, [1.0, 0.0], [2.0, 5.0]) == -2.0


@given(finite, st.lists(finite, min_size=3, max_size=3), st.lists(finite, min_size=3, max_size=3),
       st.floats(0.01, 100))
def test_residual_homogeneous(p, g, f, lam):
    lhs = residual(lam * p, lam * np.array(g), f)
    assert lhs == pytest.approx(lam * residual(p, g, f), rel=1e-12, abs=1e-9)


@given(finite, st.lists(finite, min_size=2, max_size=2), st.lists(finite, min_size=2, max_size=2))
def test_residual_branch(p, g, f):
    r = residual(p, g, f)
    h = float(np.sum(np.array(g) * np.array(f)))
    assert r >= p
    if h >= 0:
        assert r == p
    else:
        assert r - p == pytest.approx(-h, rel=1e-9, abs=1e-9)


def test_extract_circle():
    res = 81
    est = extract_roa(lambda X, t: np.sum(X ** 2, axis=1) - 1.0, BOX, 0.0, resolution=res)
    assert len(est.contours) == 1 and len(est.closed_contours()) == 1
    diag = np.hypot(*(4 / (res - 1),) * 2)
    assert np.max(np.abs(np.linalg.norm(est.contours[0], axis=1) - 1.0)) < diag
    assert est.contains((0.0, 0.0)) and not est.contains((1.5, 1.5))


def test_extract_empty():
    est = extract_roa(lambda X, t: np.ones(len(X)), BOX, 0.0, resolution=11)
    assert est.contours == [] and not est.membership.any()


def test_extract_sigmoid_ball():
    ic = SigmoidIc(r=1.2, center=(0.3, -0.2))
    res = 101
    est = extract_roa(lambda X, t: ic(X), BOX, 0.0, resolution=res)
    cell = 4 / (res - 1)
    radii = np.linalg.norm(est.contours[0] - np.array([0.3, -0.2]), axis=1)
    assert np.max(np.abs(radii - 1.2)) < cell
    dist = np.linalg.norm(est.points() - np.array([0.3, -0.2]), axis=1)
    mism = est.membership.ravel() != (dist <= 1.2)
    assert np.all(np.abs(dist[mism] - 1.2) < cell)


def test_extract_lattice_too_coarse():
    with pytest.raises(ValueError):
        extract_roa(lambda X, t: X[:, 0], BOX, 0.0, resolution=1)


def test_slice_spec():
    spec = SliceSpec.parse("axes=2,3;x0=0;x1=0", 4)
    assert spec.axes == (2, 3) and spec.fixed == {0: 0.0, 1: 0.0}
    dom = SpatioTemporalDomain([[-1, 1]] * 4, 1.0, 0.5, 0.5)
    seen = []

    def field(X, t):
        seen.append(X)
        return X[:, 2] ** 2 + X[:, 3] ** 2 - 0.25

    est = extract_roa(field, dom, 1.0, spec, resolution=21)
    assert est.axes == (2, 3)
    assert np.all(seen[0][:, :2] == 0)
    with pytest.raises(ValueError):
        SliceSpec.parse("axes=0,4", 4)
    with pytest.raises(ValueError):
        SliceSpec.parse("bogus=1", 2)


def test_marching_squares_contour_on_level():
    xs = np.linspace(-1, 1, 30)
    ys = np.linspace(-1, 1, 25)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    V = X + 2 * Y - 0.3
    lines = marching_squares(xs, ys, V)
    assert len(lines) == 1
    np.testing.assert_allclose(lines[0] @ [1, 2], 0.3, atol=1e-12)


def test_marching_squares_two_blobs():
    xs = ys = np.linspace(-3, 3, 61)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    V = np.minimum((X - 1.5) ** 2 + Y ** 2, (X + 1.5) ** 2 + Y ** 2) - 0.5
    lines = marching_squares(xs, ys, V)
    assert len(lines) == 2
    assert all(np.allclose(l[0], l[-1]) for l in lines)


def test_point_in_polygon():
    sq = np.array([[0, 0], [1, 0], [1, 1], [0, 1]])
    assert point_in_polygon((0.5, 0.5), sq)
    assert not point_in_polygon((1.5, 0.5), sq)
