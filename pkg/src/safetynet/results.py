"""Plain-file outputs: ROA fields, loss histories, run manifests, comparisons."""

from __future__ import annotations

import csv
import hashlib
import json
import os
import time
from pathlib import Path

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.ndimage import binary_dilation

from .losses import LossReport
from .pde import RoaEstimate

ROA_FORMAT = "safetynet.roa/1"
LOSS_COLUMNS = ["epoch", "l_ic", "l_bc", "l_mon", "l_r", "l_v", "l_reg", "total"]


def _atomic_write(path: Path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)
    return path


def _num(x) -> str:
    return repr(float(x))


# -- ROA estimates -------------------------------------------------------------

def roa_to_dict(est: RoaEstimate) -> dict:
    out = {
        "format": ROA_FORMAT,
        "source": est.source,
        "t_snapshot": float(est.t_snapshot),
        "axes": [int(a) for a in est.axes],
        "fixed": {str(k): float(v) for k, v in sorted(est.fixed.items())},
        "grids": [g.tolist() for g in est.grids],
        "values": est.values.tolist(),
        "membership": est.membership.astype(int).tolist(),
        "contours": [c.tolist() for c in est.contours],
    }
    if est.status is not None:
        out["status"] = np.asarray(est.status).astype(int).tolist()
    return out


def roa_from_dict(d: dict) -> RoaEstimate:
    if d.get("format") != ROA_FORMAT:
        raise ValueError(f"not a ROA estimate file (format {d.get('format')!r})")
    status = d.get("status")
    return RoaEstimate(
        axes=tuple(d["axes"]),
        grids=[np.asarray(g, dtype=float) for g in d["grids"]],
        values=np.asarray(d["values"], dtype=float),
        t_snapshot=float(d["t_snapshot"]),
        contours=[np.asarray(c, dtype=float).reshape(-1, len(d["axes"])) for c in d["contours"]],
        fixed={int(k): float(v) for k, v in d["fixed"].items()},
        status=None if status is None else np.asarray(status, dtype=int),
        source=d.get("source", ""),
    )


def write_roa(est: RoaEstimate, path) -> Path:
    """JSON file at ``path`` plus a long-format CSV next to it."""
    path = Path(path)
    _atomic_write(path, json.dumps(roa_to_dict(est), sort_keys=True))
    pts = est.points()
    vals = est.values.ravel()
    cols = [f"x{a}" for a in est.axes] + ["value", "member"]
    status = None if est.status is None else np.asarray(est.status).ravel()
    if status is not None:
        cols.append("status")
    lines = [",".join(cols)]
    for i in range(len(vals)):
        row = [_num(v) for v in pts[i]] + [_num(vals[i]), str(int(vals[i] <= 0))]
        if status is not None:
            row.append(str(int(status[i])))
        lines.append(",".join(row))
    _atomic_write(path.with_suffix(".csv"), "\n".join(lines) + "\n")
    return path


def read_roa(path) -> RoaEstimate:
    return roa_from_dict(json.loads(Path(path).read_text()))


# -- loss history ----------------------------------------------------------------

def write_loss_history(history: list[tuple[int, LossReport]], path) -> Path:
    lines = [",".join(LOSS_COLUMNS)]
    lines += [",".join([str(int(e))] + [_num(v) for v in rep.row()]) for e, rep in history]
    return _atomic_write(Path(path), "\n".join(lines) + "\n")


def read_loss_history(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if rows and list(rows[0]) != LOSS_COLUMNS:
        raise ValueError("unexpected loss history columns")
    return [{k: (int(v) if k == "epoch" else float(v)) for k, v in r.items()} for r in rows]


# -- manifests ---------------------------------------------------------------------

def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_manifest(path, command: str, config: dict, inputs: dict[str, str] | None = None,
                   outputs: list[Path] | None = None, extra: dict | None = None) -> Path:
    """Run manifest. ``content_hash`` covers command, config and input digests,
    never the timestamp, so identical reruns share it."""
    from . import __version__

    inputs = {k: file_digest(v) for k, v in sorted((inputs or {}).items())}
    payload = {"command": command, "config": config, "inputs": inputs, "version": __version__}
    digest = hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()
    root = Path(path).parent
    body = dict(payload, content_hash=digest, extra=extra or {},
                outputs={str(Path(p).relative_to(root)): file_digest(p) for p in sorted(outputs or [])},
                created=time.strftime("%Y-%m-%dT%H:%M:%S%z"))
    return _atomic_write(Path(path), json.dumps(body, indent=2, sort_keys=True))


# -- comparison ----------------------------------------------------------------------

def boundary_band(member: np.ndarray, cells: int) -> np.ndarray:
    """Nodes within ``cells`` lattice steps of a membership transition."""
    edge = np.zeros(member.shape, dtype=bool)
    for ax in range(member.ndim):
        diff = np.diff(member.astype(np.int8), axis=ax) != 0
        lo = [slice(None)] * member.ndim
        hi = [slice(None)] * member.ndim
        lo[ax] = slice(0, -1)
        hi[ax] = slice(1, None)
        edge[tuple(lo)] |= diff
        edge[tuple(hi)] |= diff
    if cells <= 0 or not edge.any():
        return edge if cells > 0 else np.zeros_like(edge)
    structure = np.ones((3,) * member.ndim, dtype=bool)
    return binary_dilation(edge, structure=structure, iterations=cells - 1) if cells > 1 else edge


def resample(est: RoaEstimate, grids: list[np.ndarray]) -> np.ndarray:
    rgi = RegularGridInterpolator(est.grids, est.values, bounds_error=True)
    mesh = np.meshgrid(*grids, indexing="ij")
    return rgi(np.stack([m.ravel() for m in mesh], axis=1)).reshape(mesh[0].shape)


def compare_estimates(a: RoaEstimate, b: RoaEstimate, band: int = 2) -> dict:
    """Membership agreement of ``a`` and ``b`` on ``a``'s lattice outside a boundary band."""
    if tuple(a.axes) != tuple(b.axes):
        raise ValueError(f"estimates use different axes {a.axes} vs {b.axes}")
    for ga, gb in zip(a.grids, b.grids):
        span = gb[-1] - gb[0]
        if ga[0] < gb[0] - 1e-9 * span or ga[-1] > gb[-1] + 1e-9 * span:
            raise ValueError("lattice of the first estimate is not covered by the second")
    common = {k for k in a.fixed if k in b.fixed and abs(a.fixed[k] - b.fixed[k]) > 1e-12}
    if common:
        raise ValueError(f"slices pin axes {sorted(common)} at different values")
    grids = [np.clip(ga, gb[0], gb[-1]) for ga, gb in zip(a.grids, b.grids)]
    mem_a = a.membership
    mem_b = resample(b, grids) <= 0.0
    excl = boundary_band(mem_a, band) | boundary_band(mem_b, band)
    keep = ~excl
    n = int(keep.sum())
    agree = float(np.mean(mem_a[keep] == mem_b[keep])) if n else float("nan")
    cell = float(np.prod([g[1] - g[0] for g in a.grids]))
    return {
        "agreement": agree,
        "band_cells": int(band),
        "n_compared": n,
        "n_total": int(mem_a.size),
        "symmetric_difference_area": float(np.count_nonzero(mem_a != mem_b) * cell),
        "area_a": float(mem_a.sum() * cell),
        "area_b": float(mem_b.sum() * cell),
        "source_a": a.source,
        "source_b": b.source,
    }


def membership_estimate(grids, status: np.ndarray, axes, fixed, t_snapshot=0.0, source="mc-oracle") -> RoaEstimate:
    """ROA estimate from oracle codes: converged (0) is inside (value -1), everything else +1."""
    from .contours import marching_squares

    status = np.asarray(status).reshape([len(g) for g in grids])
    values = np.where(status == 0, -1.0, 1.0)
    contours = marching_squares(grids[0], grids[1], values) if len(grids) == 2 else []
    return RoaEstimate(tuple(axes), [np.asarray(g) for g in grids], values, t_snapshot, contours,
                       dict(fixed), status=status, source=source)
