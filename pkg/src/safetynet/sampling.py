"""Spatiotemporal domains, training-point generation, elements and minibatches."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class SpatioTemporalDomain:
    """Box ``X = prod [lo_k, hi_k]`` times ``T = [0, t_max]``.

    Grid nodes are laid out with ``round(length / spacing) + 1`` nodes per
    axis so that both bounds are nodes; the effective spacing is therefore
    the requested one rounded to fit the box exactly.
    """

    spatial_bounds: np.ndarray
    t_max: float
    dx: np.ndarray
    dt_grid: float

    def __post_init__(self):
        b = np.asarray(self.spatial_bounds, dtype=float).reshape(-1, 2)
        dx = np.broadcast_to(np.asarray(self.dx, dtype=float), (len(b),)).copy()
        object.__setattr__(self, "spatial_bounds", b)
        object.__setattr__(self, "dx", dx)
        if np.any(b[:, 0] >= b[:, 1]):
            raise ConfigurationError("spatial bounds need lo < hi in every dimension")
        if self.t_max <= 0 or self.dt_grid <= 0 or np.any(dx <= 0):
            raise ConfigurationError("t_max, dx and dt_grid must be positive")

    @property
    def d_s(self) -> int:
        return len(self.spatial_bounds)

    @property
    def d(self) -> int:
        return self.d_s + 1

    @property
    def lower(self) -> np.ndarray:
        return np.append(self.spatial_bounds[:, 0], 0.0)

    @property
    def upper(self) -> np.ndarray:
        return np.append(self.spatial_bounds[:, 1], self.t_max)

    def spatial_axes(self) -> list[np.ndarray]:
        axes = []
        for (lo, hi), h in zip(self.spatial_bounds, self.dx):
            n = int(round((hi - lo) / h)) + 1
            if n < 2:
                raise ConfigurationError("grid needs at least 2 nodes per dimension")
            axes.append(np.linspace(lo, hi, n))
        return axes

    def time_axis(self) -> np.ndarray:
        n = int(round(self.t_max / self.dt_grid)) + 1
        if n < 2:
            raise ConfigurationError("grid needs at least 2 time nodes")
        return np.linspace(0.0, self.t_max, n)

    def contains(self, s, tol: float = 1e-12) -> np.ndarray:
        s = np.atleast_2d(s)
        return np.all((s >= self.lower - tol) & (s <= self.upper + tol), axis=1)

    def on_spatial_boundary(self, s, tol: float = 1e-12) -> np.ndarray:
        x = np.atleast_2d(s)[:, : self.d_s]
        b = self.spatial_bounds
        return np.any((np.abs(x - b[:, 0]) <= tol) | (np.abs(x - b[:, 1]) <= tol), axis=1)

    def to_dict(self) -> dict:
        return {"spatial_bounds": self.spatial_bounds.tolist(), "t_max": self.t_max,
                "dx": self.dx.tolist(), "dt_grid": self.dt_grid}


@dataclass
class Elements:
    """Axis-aligned cuboids, one per center, all of side ``sigma``."""

    centers: np.ndarray
    sigma: np.ndarray
    clipped: np.ndarray

    def __len__(self):
        return len(self.centers)

    def active(self) -> "Elements":
        keep = ~self.clipped
        return Elements(self.centers[keep], self.sigma[keep], self.clipped[keep])

    def subset(self, idx) -> "Elements":
        return Elements(self.centers[idx], self.sigma[idx], self.clipped[idx])

    def vertices(self, j: int) -> np.ndarray:
        d = self.centers.shape[1]
        corners = np.array(np.meshgrid(*[[-1.0, 1.0]] * d, indexing="ij")).reshape(d, -1).T
        return self.centers[j] + 0.5 * self.sigma[j] * corners

    def volume(self) -> np.ndarray:
        return self.sigma ** self.centers.shape[1]


def make_elements(points, sigma, domain: SpatioTemporalDomain | None = None) -> Elements:
    """Build one cuboid of side ``sigma`` centred on each point.

    With a ``domain`` the elements reaching outside it are flagged as clipped.
    A centre on the domain boundary always yields a clipped element.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    sig = np.broadcast_to(np.asarray(sigma, dtype=float), (len(points),)).copy()
    if np.any(sig <= 0):
        raise ValueError("element side length must be positive")
    clipped = np.zeros(len(points), dtype=bool)
    if domain is not None:
        half = 0.5 * sig[:, None]
        lo, hi = domain.lower, domain.upper
        tol = 1e-12
        clipped = np.any((points - half < lo - tol) | (points + half > hi + tol), axis=1)
        clipped |= np.any((np.abs(points - lo) <= tol) | (np.abs(points - hi) <= tol), axis=1)
    return Elements(points, sig, clipped)


@dataclass
class TrainingSets:
    ic_points: np.ndarray
    bc_points: np.ndarray
    collocation_points: np.ndarray
    elements: Elements
    n_grid_collocation: int = 0
    meta: dict = field(default_factory=dict)


def generate_training_sets(domain: SpatioTemporalDomain, n_random_collocation: int, seed: int,
                           n_random_ic: int = 0, n_random_bc: int = 0,
                           sigma: float | None = None,
                           elements_for_random: bool = True) -> TrainingSets:
    """Grid points plus uniform random supplements, deterministic in ``seed``.

    The grid's ``t = 0`` slice is the IC set, nodes on the spatial boundary at
    ``t > 0`` form the BC set and the remaining nodes (spatial interior,
    ``t > 0``) are collocation points. Random points are appended to each set.
    """
    if min(n_random_collocation, n_random_ic, n_random_bc) < 0:
        raise ConfigurationError("random point counts must be non-negative")
    rng = np.random.default_rng(seed)
    axes = domain.spatial_axes()
    taxis = domain.time_axis()
    xs = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, domain.d_s)
    on_bnd = domain.on_spatial_boundary(xs)

    ic = np.column_stack([xs, np.zeros(len(xs))])
    t_pos = taxis[1:]
    bc = _cartesian(xs[on_bnd], t_pos)
    col = _cartesian(xs[~on_bnd], t_pos)
    n_grid = len(col)

    lo, hi = domain.lower, domain.upper
    if n_random_ic:
        xr = rng.uniform(lo[:-1], hi[:-1], size=(n_random_ic, domain.d_s))
        ic = np.vstack([ic, np.column_stack([xr, np.zeros(n_random_ic)])])
    if n_random_bc:
        xr = rng.uniform(lo[:-1], hi[:-1], size=(n_random_bc, domain.d_s))
        face = rng.integers(domain.d_s, size=n_random_bc)
        side = rng.integers(2, size=n_random_bc)
        xr[np.arange(n_random_bc), face] = domain.spatial_bounds[face, side]
        tr = rng.uniform(0.0, domain.t_max, size=n_random_bc)
        bc = np.vstack([bc, np.column_stack([xr, tr])])
    if n_random_collocation:
        col = np.vstack([col, rng.uniform(lo, hi, size=(n_random_collocation, domain.d))])

    if sigma is None:
        sigma = float(np.min(domain.dx))
    centers = col if elements_for_random else col[:n_grid]
    elements = make_elements(centers, sigma, domain)
    return TrainingSets(ic, bc, col, elements, n_grid,
                        meta={"seed": seed, "sigma": sigma})


def _cartesian(xs, ts):
    if len(xs) == 0:
        return np.empty((0, xs.shape[1] + 1))
    return np.column_stack([np.repeat(xs, len(ts), axis=0), np.tile(ts, len(xs))])


@dataclass(frozen=True)
class MinibatchSchedule:
    frac_ic_bc: float = 0.5
    frac_collocation: float = 0.05
    shuffle_seed: int = 0

    def __post_init__(self):
        for v in (self.frac_ic_bc, self.frac_collocation):
            if not 0.0 < v <= 1.0:
                raise ConfigurationError("minibatch fractions must lie in (0, 1]")

    @property
    def batches_per_epoch(self) -> int:
        return math.ceil(1.0 / self.frac_collocation - 1e-9)


@dataclass
class Minibatch:
    ic: np.ndarray
    bc: np.ndarray
    collocation: np.ndarray
    elements: Elements


def _rng(seed: int, *counter: int) -> np.random.Generator:
    # stateless: every (seed, epoch, batch) maps to its own stream, so a resumed
    # run reproduces the same batches without saving generator state
    return np.random.Generator(np.random.Philox(key=seed, counter=list(counter) + [0] * (4 - len(counter))))


def epoch_permutation(n: int, seed: int, epoch: int) -> np.ndarray:
    return _rng(seed, epoch, 0).permutation(n)


def next_minibatch(sets: TrainingSets, schedule: MinibatchSchedule, epoch: int,
                   batch_index: int) -> Minibatch:
    """The ``batch_index``-th minibatch of ``epoch``.

    Collocation points are a partition of an epoch-specific permutation.
    IC and BC batches are fresh random subsets of size ``frac_ic_bc`` times the
    set size. Elements travel with their collocation centres.
    """
    nb = schedule.batches_per_epoch
    if not 0 <= batch_index < nb:
        raise IndexError(f"batch_index must be in [0, {nb})")
    n_col = len(sets.collocation_points)
    perm = epoch_permutation(n_col, schedule.shuffle_seed, epoch)
    part = np.array_split(perm, nb)[batch_index]

    rng = _rng(schedule.shuffle_seed, epoch, batch_index + 1)
    n_ic = _half(len(sets.ic_points), schedule.frac_ic_bc)
    n_bc = _half(len(sets.bc_points), schedule.frac_ic_bc)
    ic = sets.ic_points[np.sort(rng.choice(len(sets.ic_points), n_ic, replace=False))]
    bc = sets.bc_points[np.sort(rng.choice(len(sets.bc_points), n_bc, replace=False))]

    el = sets.elements
    if len(el) == n_col:
        el_part = el.subset(part)
    else:  # elements only on grid collocation points
        el_part = el.subset(part[part < len(el)])
    return Minibatch(ic, bc, sets.collocation_points[part], el_part)


def _half(n: int, frac: float) -> int:
    return min(n, int(round(n * frac))) if n else 0
