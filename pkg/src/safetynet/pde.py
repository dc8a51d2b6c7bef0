"""PDE core: sigmoid initial condition, residual, zero level set extraction.

The level-set PDE is solved forward in time on ``[0, t_max]``:

    phi_t = min(0, grad_x phi . f(x)),    phi(x, 0) = phi0(x)

so ``phi`` never increases and its zero sublevel set grows from the initial
ball towards the region of attraction. The residual of a candidate solution is
``r = phi_t - min(0, grad_x phi . f(x))``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .contours import marching_squares, point_in_polygon


@dataclass(frozen=True)
class SigmoidIc:
    """``phi0(x) = a / (1 + exp(-m (|x - center| - r))) + c``."""

    a: float = 2.0
    m: float = 20.0
    r: float = 1.0
    c: float = -1.0
    center: tuple = (0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(v) for v in np.atleast_1d(self.center)))
        if self.m <= 0 or self.r <= 0:
            raise ValueError("sigmoid slope m and radius r must be positive")
        if not self.a + self.c > 0:
            raise ValueError("far-field value a + c must be positive")
        if not self(np.array(self.center)) < 0:
            raise ValueError("phi0 must be negative at the center")

    @property
    def plateau(self) -> float:
        return self.a + self.c

    def __call__(self, x):
        return sigmoid_ic(self, x)

    def to_dict(self) -> dict:
        return {"a": self.a, "m": self.m, "r": self.r, "c": self.c, "center": list(self.center)}


def sigmoid_ic(ic: SigmoidIc, x):
    x = np.asarray(x, dtype=float)
    dist = np.linalg.norm(x - np.asarray(ic.center), axis=-1)
    # written via tanh so that exp never overflows
    val = 0.5 * ic.a * (1.0 + np.tanh(0.5 * ic.m * (dist - ic.r))) + ic.c
    return float(val) if np.ndim(val) == 0 else val


def residual(phi_t, grad_phi, f_x):
    """Pointwise defect ``phi_t - min(0, grad_phi . f_x)``; arrays broadcast over leading axes."""
    ham = np.sum(np.asarray(grad_phi, dtype=float) * np.asarray(f_x, dtype=float), axis=-1)
    out = np.asarray(phi_t, dtype=float) - np.minimum(0.0, ham)
    return float(out) if np.ndim(out) == 0 else out


@dataclass
class SliceSpec:
    """Which two state axes to plot and where to pin the others."""

    axes: tuple[int, int] = (0, 1)
    fixed: dict[int, float] = field(default_factory=dict)

    @classmethod
    def parse(cls, text: str | None, d_s: int) -> "SliceSpec":
        """Parse ``"axes=2,3;x0=0;x1=0"`` (0-based state indices)."""
        spec = cls(axes=(0, 1) if d_s >= 2 else (0,))
        if not text:
            spec.fixed = {k: 0.0 for k in range(d_s) if k not in spec.axes}
            return spec
        fixed = {}
        for part in filter(None, (p.strip() for p in text.split(";"))):
            key, _, val = part.partition("=")
            key = key.strip()
            if key == "axes":
                spec.axes = tuple(int(v) for v in val.split(","))
            elif key.startswith("x") and key[1:].isdigit():
                fixed[int(key[1:])] = float(val)
            else:
                raise ValueError(f"bad slice entry {part!r}")
        for k in range(d_s):
            if k not in spec.axes:
                fixed.setdefault(k, 0.0)
        spec.fixed = fixed
        if any(a >= d_s for a in spec.axes) or len(set(spec.axes)) != len(spec.axes):
            raise ValueError(f"slice axes {spec.axes} invalid for a {d_s}-dimensional state")
        return spec


@dataclass
class RoaEstimate:
    """Implicit ROA function sampled on a 2D (or 1D) lattice slice."""

    axes: tuple
    grids: list[np.ndarray]            # 1D coordinate arrays, one per plotted axis
    values: np.ndarray                 # u*(x) on the lattice, indexed [i, j]
    t_snapshot: float
    contours: list[np.ndarray] = field(default_factory=list)
    fixed: dict = field(default_factory=dict)
    status: np.ndarray | None = None   # optional trajectory-oracle codes
    source: str = ""

    @property
    def membership(self) -> np.ndarray:
        return self.values <= 0.0

    def points(self) -> np.ndarray:
        mesh = np.meshgrid(*self.grids, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def contains(self, point) -> bool:
        """Whether ``point`` lies inside a closed contour of the estimate."""
        return any(_closed(c) and point_in_polygon(point, c) for c in self.contours)

    def closed_contours(self) -> list[np.ndarray]:
        return [c for c in self.contours if _closed(c)]


def _closed(c) -> bool:
    return len(c) > 3 and np.allclose(c[0], c[-1])


def lattice_points(domain_bounds, spec: SliceSpec, resolution, d_s: int):
    res = np.broadcast_to(np.asarray(resolution, dtype=int), (len(spec.axes),))
    if np.any(res < 2):
        raise ValueError("evaluation lattice needs at least 2 nodes per dimension")
    grids = [np.linspace(domain_bounds[a][0], domain_bounds[a][1], n) for a, n in zip(spec.axes, res)]
    mesh = np.meshgrid(*grids, indexing="ij")
    X = np.zeros((mesh[0].size, d_s))
    for a, m in zip(spec.axes, mesh):
        X[:, a] = m.ravel()
    for k, v in spec.fixed.items():
        X[:, k] = v
    return grids, X


def extract_roa(field_provider: Callable[[np.ndarray, float], np.ndarray], domain, t_snapshot: float,
                slice_spec: SliceSpec | None = None, resolution=101, source: str = "") -> RoaEstimate:
    """Sample ``u*(x) = phi*(x, t_snapshot)`` on a slice lattice and trace its zero level set.

    ``field_provider(X, t)`` must return values for an ``(N, d_s)`` array of states.
    """
    d_s = domain.d_s
    spec = slice_spec or SliceSpec.parse(None, d_s)
    grids, X = lattice_points(domain.spatial_bounds, spec, resolution, d_s)
    vals = np.asarray(field_provider(X, t_snapshot), dtype=float).reshape([len(g) for g in grids])
    contours = []
    if len(grids) == 2:
        contours = marching_squares(grids[0], grids[1], vals)
    elif len(grids) == 1:
        contours = _zero_crossings_1d(grids[0], vals)
    return RoaEstimate(tuple(spec.axes), grids, vals, float(t_snapshot), contours,
                       dict(spec.fixed), source=source)


def _zero_crossings_1d(x, v):
    out = []
    inside = v <= 0
    for i in np.flatnonzero(inside[:-1] != inside[1:]):
        w = v[i] / (v[i] - v[i + 1])
        out.append(np.array([[x[i] + w * (x[i + 1] - x[i])]]))
    return out
