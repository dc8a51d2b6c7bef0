"""Autonomous dynamical systems, benchmark flows and trajectory classification."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping

import numpy as np

FlowFn = Callable[[np.ndarray, Mapping[str, float]], np.ndarray]


def _closed_roa_flow(x, p):
    x1, x2 = x[..., 0], x[..., 1]
    k = p.get("k", 0.1)
    dx1 = -np.sin(x1) * (-k * np.cos(x1) - np.cos(x2))
    dx2 = -np.sin(x2) * (np.cos(x1) - k * np.cos(x2))
    return np.stack([dx1, dx2], axis=-1)


def _pendulum_flow(x, p):
    m, c, L, g = p["m"], p["c"], p["L"], p["g"]
    x1, x2 = x[..., 0], x[..., 1]
    dx2 = -(g / L) * np.sin(x1) - c / (m * L * L) * x2
    return np.stack([x2, dx2], axis=-1)


def _cart_pendulum_flow(x, p):
    m1, m2 = p["m1"], p["m2"]
    c1, c2, k1, k2 = p["c1"], p["c2"], p["k1"], p["k2"]
    L, g = p["L"], p["g"]
    x1, x2, x3, x4 = (x[..., i] for i in range(4))
    cos3, sin3 = np.cos(x3), np.sin(x3)
    M = m1 + m2
    den = 4.0 * M - 3.0 * m2 * cos3**2
    dx2 = (
        6 * c2 * x4 * cos3
        + 6 * k2 * x3 * cos3
        - 4 * L * c1 * x2
        - 4 * L * k1 * x1
        + 2 * L**2 * m2 * x4**2 * sin3
        + 3 * m2 * g * L * cos3 * sin3
    ) / (L * den)
    dx4 = -(
        -6 * m2 * L * cos3 * (k1 * x1 + c1 * x2)
        + 12 * M * (k2 * x3 + c2 * x4)
        + 1.5 * m2**2 * L**2 * np.sin(2 * x3) * x4**2
        + 6 * m2 * M * g * L * sin3
    ) / (m2 * L**2 * den)
    return np.stack([x2, dx2, x4, dx4], axis=-1)


def _linear_flow(x, p):
    return -p.get("rate", 1.0) * x


def _zero_flow(x, p):
    return np.zeros_like(x)


FLOWS: dict[str, FlowFn] = {
    "closed_roa": _closed_roa_flow,
    "pendulum": _pendulum_flow,
    "cart_pendulum": _cart_pendulum_flow,
    "linear": _linear_flow,
    "zero": _zero_flow,
}


@dataclass(frozen=True)
class DynamicalSystem:
    """An autonomous flow ``x' = f(x)`` with a distinguished equilibrium.

    ``kind`` selects the closed-form flow from :data:`FLOWS`; ``params`` are
    handed to it unchanged. ``shift`` is subtracted from the natural
    coordinates before the flow is evaluated, which is how :func:`recentered`
    moves the equilibrium to the origin without touching the formulas.
    """

    name: str
    kind: str
    d_s: int
    params: Mapping[str, float]
    equilibrium: np.ndarray
    shift: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in FLOWS:
            raise ValueError(f"unknown flow kind {self.kind!r}")
        if self.d_s < 1:
            raise ValueError("d_s must be >= 1")
        object.__setattr__(self, "params", dict(self.params))
        object.__setattr__(self, "equilibrium", np.asarray(self.equilibrium, dtype=float))
        if self.equilibrium.shape != (self.d_s,):
            raise ValueError("equilibrium must have length d_s")
        for k, v in self.params.items():
            if not np.isfinite(v):
                raise ValueError(f"parameter {k} is not finite")
        if self.kind == "pendulum" and not (self.params["m"] > 0 and self.params["L"] > 0):
            raise ValueError("pendulum requires m > 0 and L > 0")
        if self.kind == "cart_pendulum":
            p = self.params
            if not (p["m1"] > 0 and p["m2"] > 0 and p["L"] > 0):
                raise ValueError("cart pendulum requires m1, m2, L > 0")

    def __call__(self, x) -> np.ndarray:
        return eval_flow(self, x)

    def with_params(self, **overrides) -> "DynamicalSystem":
        params = dict(self.params)
        unknown = set(overrides) - set(params)
        if unknown:
            raise KeyError(f"unknown parameters for {self.name}: {sorted(unknown)}")
        params.update(overrides)
        return replace(self, params=params)


def eval_flow(sys: DynamicalSystem, x) -> np.ndarray:
    """Evaluate ``f(x)``; ``x`` may be a single state or an ``(N, d_s)`` stack."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 0 or x.shape[-1] != sys.d_s:
        raise ValueError(f"{sys.name}: expected states of dimension {sys.d_s}, got shape {x.shape}")
    if sys.shift is not None:
        x = x + sys.shift
    return FLOWS[sys.kind](x, sys.params)


def recentered(sys: DynamicalSystem) -> DynamicalSystem:
    """Return the same flow in coordinates where the equilibrium is the origin."""
    base = np.zeros(sys.d_s) if sys.shift is None else sys.shift
    return replace(sys, name=sys.name + "_centered", shift=base + sys.equilibrium,
                   equilibrium=np.zeros(sys.d_s))


# Table 1 masses/lengths; g is taken positive so the origin is the hanging,
# stable configuration.
_PENDULUM_BASE = {"m": 0.127, "c": 0.0024, "L": 0.2, "g": 9.81}
_CART_BASE = {"m1": 0.257, "m2": 0.127, "c1": 0.0024, "c2": 0.0024,
              "k1": 0.1, "k2": 0.0, "L": 0.3365, "g": 9.81}


def _presets() -> dict[str, DynamicalSystem]:
    return {
        "closed_roa": DynamicalSystem("closed_roa", "closed_roa", 2, {"k": 0.1},
                                      np.array([np.pi / 2, np.pi / 2])),
        "pendulum_a": DynamicalSystem("pendulum_a", "pendulum", 2, _PENDULUM_BASE, np.zeros(2)),
        "pendulum_b": DynamicalSystem("pendulum_b", "pendulum", 2,
                                      {**_PENDULUM_BASE, "L": 0.3}, np.zeros(2)),
        "pendulum_c": DynamicalSystem("pendulum_c", "pendulum", 2,
                                      {**_PENDULUM_BASE, "L": 0.4}, np.zeros(2)),
        # mass as printed with the example equations (differs from Table 1)
        "pendulum_text": DynamicalSystem("pendulum_text", "pendulum", 2,
                                         {**_PENDULUM_BASE, "m": 0.097}, np.zeros(2)),
        "cart_pendulum": DynamicalSystem("cart_pendulum", "cart_pendulum", 4, _CART_BASE, np.zeros(4)),
        "linear_1d": DynamicalSystem("linear_1d", "linear", 1, {"rate": 1.0}, np.zeros(1)),
        "linear_2d": DynamicalSystem("linear_2d", "linear", 2, {"rate": 1.0}, np.zeros(2)),
        "frozen_2d": DynamicalSystem("frozen_2d", "zero", 2, {}, np.zeros(2)),
    }


PRESETS: Mapping[str, DynamicalSystem] = _presets()


def get_system(name: str, overrides: Mapping[str, float] | None = None) -> DynamicalSystem:
    try:
        sys = PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown system preset {name!r}; choose from {sorted(PRESETS)}") from None
    if overrides:
        sys = sys.with_params(**overrides)
    return sys


class Stability(enum.IntEnum):
    CONVERGED = 0
    ESCAPED = 1
    UNDECIDED = 2


@dataclass
class StabilityConfig:
    dt: float = 1e-3
    t_end: float = 50.0
    r_conv: float = 0.05
    box: np.ndarray | None = None  # (d_s, 2) lo/hi bounds; None disables escape by box
    blowup: float = 1e6

    def __post_init__(self):
        if self.dt <= 0 or self.t_end <= 0 or self.r_conv <= 0:
            raise ValueError("dt, t_end and r_conv must be positive")
        if self.box is not None:
            self.box = np.asarray(self.box, dtype=float)


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    status: Stability
    diverged: bool = False
    meta: dict = field(default_factory=dict)


def _rk4(sys, x, dt):
    k1 = eval_flow(sys, x)
    k2 = eval_flow(sys, x + 0.5 * dt * k1)
    k3 = eval_flow(sys, x + 0.5 * dt * k2)
    k4 = eval_flow(sys, x + dt * k3)
    return x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def _outside(x, box):
    return np.any((x < box[:, 0]) | (x > box[:, 1]), axis=-1)


def integrate_trajectory(sys: DynamicalSystem, x0, dt: float, t_end: float,
                         box=None, r_conv: float | None = None) -> Trajectory:
    """Fixed-step RK4 trajectory from ``x0``.

    Integration stops early when the state leaves ``box`` or first enters the
    ``r_conv`` ball around the equilibrium. A non-finite state sets
    ``diverged`` and the trajectory is reported as escaped.
    """
    if dt <= 0 or t_end <= 0:
        raise ValueError("dt and t_end must be positive")
    x = np.asarray(x0, dtype=float).copy()
    if x.shape != (sys.d_s,):
        raise ValueError(f"x0 must have shape ({sys.d_s},)")
    box = None if box is None else np.asarray(box, dtype=float)
    n = int(np.ceil(t_end / dt - 1e-9))
    states, times = [x.copy()], [0.0]
    status, diverged = Stability.UNDECIDED, False
    for i in range(1, n + 1):
        x = _rk4(sys, x, dt)
        if not np.all(np.isfinite(x)):
            diverged, status = True, Stability.ESCAPED
            break
        states.append(x.copy())
        times.append(i * dt)
        if box is not None and _outside(x, box):
            status = Stability.ESCAPED
            break
        if r_conv is not None and np.linalg.norm(x - sys.equilibrium) <= r_conv:
            status = Stability.CONVERGED
            break
    return Trajectory(np.array(times), np.array(states), status, diverged)


def classify_stability(sys: DynamicalSystem, x0, config: StabilityConfig | None = None) -> np.ndarray:
    """Classify initial states as converged / escaped / undecided.

    ``x0`` is one state or an ``(N, d_s)`` batch; all states advance together.
    Converged means the state is inside the ``r_conv`` ball at the end of the
    horizon, i.e. it entered and stayed. Escaped means it left the box (or
    blew up). Everything else is undecided. Returns ``Stability`` codes.
    """
    config = config or StabilityConfig()
    x = np.array(x0, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != sys.d_s:
        raise ValueError(f"states must have dimension {sys.d_s}")
    status = np.full(len(x), Stability.UNDECIDED, dtype=int)
    active = np.ones(len(x), dtype=bool)
    if config.box is not None:
        out = _outside(x, config.box)
        status[out] = Stability.ESCAPED
        active &= ~out
    n = int(np.ceil(config.t_end / config.dt - 1e-9))
    idx = np.flatnonzero(active)
    cur = x[idx]
    with np.errstate(all="ignore"):
        for _ in range(n):
            if not len(idx):
                break
            cur = _rk4(sys, cur, config.dt)
            bad = ~np.all(np.isfinite(cur), axis=1) | (np.abs(cur).max(axis=1) > config.blowup)
            if config.box is not None:
                bad |= _outside(cur, config.box)
            if bad.any():
                status[idx[bad]] = Stability.ESCAPED
                idx, cur = idx[~bad], cur[~bad]
    if len(idx):
        inside = np.linalg.norm(cur - sys.equilibrium, axis=1) <= config.r_conv
        status[idx[inside]] = Stability.CONVERGED
    return status[0] if single else status
