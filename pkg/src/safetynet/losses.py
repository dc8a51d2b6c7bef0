"""Loss terms of the safety network and their parameter gradients.

Every term is a root-sum-square over its point set. ``loss_and_gradients``
evaluates the weighted total in two network passes (values only for IC/BC
points, values plus input tangents for collocation and quadrature points) and
backpropagates through both.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .dynamics import DynamicalSystem, eval_flow
from .network import MlpModel, backward_with_tangents, forward, forward_with_tangents
from .pde import SigmoidIc
from .quadrature import element_quadrature
from .sampling import Elements

TERMS = ("ic", "bc", "mon", "r", "v", "reg")


class NonFiniteLossError(FloatingPointError):
    def __init__(self, component: str, detail: str = ""):
        self.component = component
        super().__init__(f"non-finite loss component {component!r}{': ' + detail if detail else ''}")


@dataclass(frozen=True)
class LossWeights:
    c_ic: float = 1.0
    c_bc: float = 0.1
    c_mon: float = 10.0
    c_r: float = 1.0
    c_v: float = 1.0
    c_reg: float = 1e-5

    def __post_init__(self):
        if any(v < 0 for v in asdict(self).values()):
            raise ValueError("loss weights must be non-negative")

    def scaled(self, lam: float) -> "LossWeights":
        return LossWeights(**{k: lam * v for k, v in asdict(self).items()})

    def only(self, *terms: str) -> "LossWeights":
        return LossWeights(**{f"c_{t}": (getattr(self, f"c_{t}") if t in terms else 0.0) for t in TERMS})


@dataclass
class LossReport:
    l_ic: float = 0.0
    l_bc: float = 0.0
    l_mon: float = 0.0
    l_r: float = 0.0
    l_v: float = 0.0
    l_reg: float = 0.0
    total: float = 0.0
    counts: dict = field(default_factory=dict)

    def components(self) -> dict[str, float]:
        return {f"l_{t}": getattr(self, f"l_{t}") for t in TERMS}

    def weighted_sum(self, w: LossWeights) -> float:
        return sum(getattr(w, f"c_{t}") * getattr(self, f"l_{t}") for t in TERMS)

    def row(self) -> list[float]:
        return [self.l_ic, self.l_bc, self.l_mon, self.l_r, self.l_v, self.l_reg, self.total]


@dataclass
class Problem:
    """Everything a loss evaluation needs besides the model and the points."""

    system: DynamicalSystem
    ic: SigmoidIc
    bc_mode: str = "fixed"
    quad_order: int = 1
    weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        if self.bc_mode not in ("fixed", "free"):
            raise ValueError("bc_mode must be 'fixed' or 'free'")


@dataclass
class Batch:
    ic: np.ndarray
    bc: np.ndarray
    collocation: np.ndarray
    elements: Elements


def _rss(e):
    """Root-sum-square and its gradient ``e / L`` (zero at ``L = 0``)."""
    L = float(np.sqrt(np.sum(e * e))) if e.size else 0.0
    return L, (e / L if L > 0 else np.zeros_like(e))


def _phi0(ic, S):
    return ic(S[:, :-1])


def _empty(S):
    return S is None or len(S) == 0


# -- individual terms (values only) ------------------------------------------

def loss_ic(model: MlpModel, ic: SigmoidIc, ic_points) -> float:
    if _empty(ic_points):
        return 0.0
    S = np.atleast_2d(ic_points)
    return _rss(_phi0(ic, S) - forward(model, S))[0]


def loss_bc(model: MlpModel, bc_target: SigmoidIc, bc_points, mode: str = "fixed") -> float:
    if mode == "free" or _empty(bc_points):
        return 0.0
    S = np.atleast_2d(bc_points)
    return _rss(_phi0(bc_target, S) - forward(model, S))[0]


def loss_monotonicity(model: MlpModel, ic: SigmoidIc, collocation_points) -> float:
    if _empty(collocation_points):
        return 0.0
    S = np.atleast_2d(collocation_points)
    return _rss(np.minimum(_phi0(ic, S) - forward(model, S), 0.0))[0]


def network_residual(model: MlpModel, sys: DynamicalSystem, S) -> np.ndarray:
    cache = forward_with_tangents(model, S)
    return _residual_parts(sys, S, cache.jacobian)[0]


def _residual_parts(sys, S, J):
    f = eval_flow(sys, S[:, :-1])
    ham = np.sum(J[:, :-1] * f, axis=1)
    active = ham < 0
    r = J[:, -1] - np.where(active, ham, 0.0)
    # dr/dJ: 1 on the time slot, -f on the spatial slots where min(0, .) is active
    dr_dJ = np.zeros_like(J)
    dr_dJ[:, -1] = 1.0
    dr_dJ[:, :-1] = -f * active[:, None]
    return r, dr_dJ


def loss_residual(model: MlpModel, sys: DynamicalSystem, collocation_points) -> float:
    if _empty(collocation_points):
        return 0.0
    return _rss(network_residual(model, sys, np.atleast_2d(collocation_points)))[0]


def _element_nodes(elements: Elements, order: int):
    el = elements.active()
    d = el.centers.shape[1]
    eq = element_quadrature(d, order)
    half = 0.5 * el.sigma
    pts = el.centers[:, None, :] + half[:, None, None] * eq.nodes[None, :, :]
    return el, eq, (half ** d), pts.reshape(-1, d)


def loss_variational(model: MlpModel, sys: DynamicalSystem, elements: Elements, order: int = 1) -> float:
    """``sqrt(sum_jk v_jk^2)`` with ``v_jk ~ (sigma/2)^d sum_i w_i g_k(xi_i) r(s_ji)``; clipped elements skipped."""
    el, eq, jac, pts = _element_nodes(elements, order)
    if not len(el):
        return 0.0
    r = network_residual(model, sys, pts).reshape(len(el), -1)
    v = jac[:, None] * (r @ eq.weighted_basis.T)
    return _rss(v)[0]


def element_variations(model, sys, elements: Elements, order: int = 1) -> np.ndarray:
    el, eq, jac, pts = _element_nodes(elements, order)
    if not len(el):
        return np.zeros((0, eq.weighted_basis.shape[0]))
    r = network_residual(model, sys, pts).reshape(len(el), -1)
    return jac[:, None] * (r @ eq.weighted_basis.T)


def loss_regularization(model: MlpModel) -> float:
    return float(sum(np.linalg.norm(W) for W in model.weights) + sum(np.linalg.norm(b) for b in model.biases))


# -- combined evaluation -----------------------------------------------------

def loss_and_gradients(model: MlpModel, problem: Problem, batch: Batch, weights: LossWeights | None = None,
                       need_grad: bool = True):
    """Evaluate every term and (optionally) the gradient of the weighted total."""
    w = weights or problem.weights
    ic = problem.ic
    rep = LossReport()
    g_params = [np.zeros_like(p) for p in model.parameters()] if need_grad else None

    # value-only pass: IC and (fixed-mode) BC points
    S_ic = np.atleast_2d(batch.ic) if not _empty(batch.ic) else np.empty((0, model.d))
    use_bc = problem.bc_mode == "fixed" and not _empty(batch.bc)
    S_bc = np.atleast_2d(batch.bc) if use_bc else np.empty((0, model.d))
    S_val = np.vstack([S_ic, S_bc])
    if len(S_val):
        cache = forward_with_tangents(model, S_val, tangents=False)
        target = _phi0(ic, S_val)
        e_ic = target[: len(S_ic)] - cache.value[: len(S_ic)]
        e_bc = target[len(S_ic):] - cache.value[len(S_ic):]
        rep.l_ic, g_ic = _rss(e_ic)
        rep.l_bc, g_bc = _rss(e_bc)
        if need_grad:
            gv = np.concatenate([-w.c_ic * g_ic, -w.c_bc * g_bc])
            _accumulate(g_params, backward_with_tangents(model, cache, gv))

    # tangent pass: collocation points and element quadrature nodes
    S_col = np.atleast_2d(batch.collocation) if not _empty(batch.collocation) else np.empty((0, model.d))
    if batch.elements is not None and len(batch.elements):
        el, eq, jac, S_q = _element_nodes(batch.elements, problem.quad_order)
    else:
        el, S_q = None, np.empty((0, model.d))
    S_tan = np.vstack([S_col, S_q])
    if len(S_tan):
        cache = forward_with_tangents(model, S_tan, tangents=True)
        r, dr_dJ = _residual_parts(problem.system, S_tan, cache.jacobian)
        nc = len(S_col)
        gv = np.zeros(len(S_tan))
        gJ = np.zeros_like(cache.jacobian)

        e_mon = np.minimum(_phi0(ic, S_col) - cache.value[:nc], 0.0)
        rep.l_mon, g_mon = _rss(e_mon)
        gv[:nc] -= w.c_mon * g_mon

        rep.l_r, g_r = _rss(r[:nc])
        gJ[:nc] += (w.c_r * g_r)[:, None] * dr_dJ[:nc]

        if el is not None and len(el):
            rq = r[nc:].reshape(len(el), -1)
            v = jac[:, None] * (rq @ eq.weighted_basis.T)
            rep.l_v, g_v = _rss(v)
            g_rq = (jac[:, None] * g_v) @ eq.weighted_basis
            gJ[nc:] += (w.c_v * g_rq.ravel())[:, None] * dr_dJ[nc:]
        if need_grad:
            _accumulate(g_params, backward_with_tangents(model, cache, gv, gJ))

    rep.l_reg = loss_regularization(model)
    if need_grad and w.c_reg:
        for g, p in zip(g_params, model.parameters()):
            n = np.linalg.norm(p)
            if n > 0:
                g += w.c_reg * p / n

    for t in TERMS:
        val = getattr(rep, f"l_{t}")
        if not np.isfinite(val):
            raise NonFiniteLossError(t)
    rep.total = rep.weighted_sum(w)
    rep.counts = {"ic": len(S_ic), "bc": len(S_bc), "collocation": len(S_col),
                  "elements": 0 if el is None else len(el)}
    return rep, g_params


def _accumulate(acc, grads):
    for a, g in zip(acc, grads):
        a += g


def loss_total(model: MlpModel, problem: Problem, batch: Batch, weights: LossWeights | None = None) -> LossReport:
    return loss_and_gradients(model, problem, batch, weights, need_grad=False)[0]


def param_gradients(model: MlpModel, problem: Problem, batch: Batch, loss_definition: str = "total",
                    weights: LossWeights | None = None) -> list[np.ndarray]:
    """Exact gradients of one loss term (unit weight) or of the weighted total."""
    w = weights or problem.weights
    if loss_definition != "total":
        if loss_definition not in TERMS:
            raise ValueError(f"unknown loss {loss_definition!r}")
        w = LossWeights(**{f"c_{t}": float(t == loss_definition) for t in TERMS})
    return loss_and_gradients(model, problem, batch, w)[1]
