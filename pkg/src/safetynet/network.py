"""Fully connected tanh network with hand-written first and second order gradients.

Training needs the derivative of the network with respect to its inputs
(``phi_t`` and ``grad_x phi`` enter the PDE residual) and then the derivative
of losses built from those input derivatives with respect to the weights.
The forward pass therefore carries input tangents alongside the values and the
backward pass differentiates through both.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"SFNTCKPT"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class MlpModel:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    # fixed (untrained) input map s -> (s - input_offset) * input_scale; None means identity
    input_offset: np.ndarray | None = None
    input_scale: np.ndarray | None = None

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need one bias vector per weight matrix")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.ndim != 2 or b.shape != (W.shape[0],):
                raise ValueError(f"layer {i}: weight {W.shape} and bias {b.shape} do not match")
            if i and W.shape[1] != self.weights[i - 1].shape[0]:
                raise ValueError(f"layer {i}: input size {W.shape[1]} does not chain")
        if self.weights[-1].shape[0] != 1:
            raise ValueError("output layer must have a single neuron")
        if (self.input_offset is None) != (self.input_scale is None):
            raise ValueError("input_offset and input_scale go together")
        if self.input_scale is not None:
            self.input_offset = np.asarray(self.input_offset, dtype=float).reshape(-1)
            self.input_scale = np.asarray(self.input_scale, dtype=float).reshape(-1)
            if self.input_offset.shape != (self.d,) or self.input_scale.shape != (self.d,):
                raise ValueError(f"input map needs {self.d} offsets and scales")

    @property
    def layer_sizes(self) -> list[int]:
        return [self.weights[0].shape[1]] + [W.shape[0] for W in self.weights]

    @property
    def d(self) -> int:
        return self.weights[0].shape[1]

    def parameters(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def n_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def copy(self) -> "MlpModel":
        return MlpModel([W.copy() for W in self.weights], [b.copy() for b in self.biases],
                        *self._input_map_copy())

    def _input_map_copy(self):
        if self.input_scale is None:
            return None, None
        return self.input_offset.copy(), self.input_scale.copy()

    def with_input_map(self, offset, scale) -> "MlpModel":
        return MlpModel([W.copy() for W in self.weights], [b.copy() for b in self.biases], offset, scale)

    def map_inputs(self, S: np.ndarray) -> np.ndarray:
        return S if self.input_scale is None else (S - self.input_offset) * self.input_scale

    def flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.parameters()])

    @classmethod
    def from_flat(cls, layer_sizes, flat, input_offset=None, input_scale=None) -> "MlpModel":
        flat = np.asarray(flat, dtype=float)
        expected = sum(o * i + o for i, o in zip(layer_sizes[:-1], layer_sizes[1:]))
        if flat.size != expected:
            raise ValueError(f"expected {expected} parameters for {list(layer_sizes)}, got {flat.size}")
        Ws, bs, k = [], [], 0
        for i, o in zip(layer_sizes[:-1], layer_sizes[1:]):
            Ws.append(flat[k:k + o * i].reshape(o, i).copy())
            k += o * i
            bs.append(flat[k:k + o].copy())
            k += o
        return cls(Ws, bs, input_offset, input_scale)


def default_layer_sizes(d: int, n_width: int = 50, n_layers: int = 3) -> list[int]:
    return [d] + [n_width] * n_layers + [1]


def domain_input_map(lower, upper):
    """Offset and scale taking the box ``[lower, upper]`` onto ``[-1, 1]^d``."""
    lower, upper = np.asarray(lower, dtype=float), np.asarray(upper, dtype=float)
    return 0.5 * (lower + upper), 2.0 / (upper - lower)


def init_xavier(layer_sizes, seed: int) -> MlpModel:
    """Glorot-uniform weights, zero biases."""
    layer_sizes = [int(n) for n in layer_sizes]
    if len(layer_sizes) < 2 or min(layer_sizes) < 1 or layer_sizes[-1] != 1:
        raise ValueError(f"invalid layer sizes {layer_sizes}")
    rng = np.random.default_rng(seed)
    Ws, bs = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        Ws.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        bs.append(np.zeros(fan_out))
    return MlpModel(Ws, bs)


def forward(model: MlpModel, s):
    """Network value; a single input gives a float, an ``(N, d)`` batch an ``(N,)`` array."""
    s = np.asarray(s, dtype=float)
    a = model.map_inputs(np.atleast_2d(s))
    for W, b in zip(model.weights[:-1], model.biases[:-1]):
        a = np.tanh(a @ W.T + b)
    out = (a @ model.weights[-1].T + model.biases[-1])[:, 0]
    return float(out[0]) if s.ndim == 1 else out


def input_jacobian(model: MlpModel, s):
    """Gradient of the output with respect to the input, by reverse accumulation."""
    s = np.asarray(s, dtype=float)
    a = model.map_inputs(np.atleast_2d(s))
    derivs = []
    for W, b in zip(model.weights[:-1], model.biases[:-1]):
        a = np.tanh(a @ W.T + b)
        derivs.append(1.0 - a * a)
    g = np.broadcast_to(model.weights[-1], (len(a), model.weights[-1].shape[1]))
    for W, D in zip(reversed(model.weights[:-1]), reversed(derivs)):
        g = (g * D) @ W
    if model.input_scale is not None:
        g = g * model.input_scale
    return g[0] if s.ndim == 1 else g


@dataclass
class ForwardCache:
    inputs: np.ndarray
    hidden: list[np.ndarray]            # tanh outputs per hidden layer, (N, n)
    tangents: list[np.ndarray] | None   # pre-activation tangents per hidden layer, (N, d, n)
    value: np.ndarray
    jacobian: np.ndarray | None
    extra: dict = field(default_factory=dict)


def forward_with_tangents(model: MlpModel, S, tangents: bool = True) -> ForwardCache:
    """Values and (optionally) input Jacobians for a batch, keeping what backprop needs."""
    S = model.map_inputs(np.atleast_2d(np.asarray(S, dtype=float)))
    N = len(S)
    scale = model.input_scale
    hidden, tans = [], [] if tangents else None
    a, da = S, None
    for l, (W, b) in enumerate(zip(model.weights[:-1], model.biases[:-1])):
        z = a @ W.T + b
        h = np.tanh(z)
        hidden.append(h)
        if tangents:
            if l == 0:
                W0 = W.T if scale is None else W.T * scale[:, None]
                dz = np.broadcast_to(W0, (N,) + W0.shape)
            else:
                dz = da @ W.T
            tans.append(dz)
            da = (1.0 - h * h)[:, None, :] * dz
        a = h
    Wo, bo = model.weights[-1], model.biases[-1]
    value = (a @ Wo.T + bo)[:, 0]
    jac = None
    if tangents:
        if da is None:
            jac = np.repeat(Wo if scale is None else Wo * scale, N, axis=0)
        else:
            jac = (da @ Wo.T)[:, :, 0]
    return ForwardCache(S, hidden, tans, value, jac)


def backward_with_tangents(model: MlpModel, cache: ForwardCache, g_value, g_jac=None) -> list[np.ndarray]:
    """Parameter gradients of ``sum(g_value * value) + sum(g_jac * jacobian)``.

    Returns gradients in the order of :meth:`MlpModel.parameters`.
    """
    L = len(model.weights)
    g_value = np.asarray(g_value, dtype=float)
    gz = g_value[:, None]
    gdz = None
    if g_jac is not None:
        if cache.tangents is None:
            raise ValueError("Jacobian cotangent given but cache has no tangents")
        gdz = np.asarray(g_jac, dtype=float)[:, :, None]
    grads: list[np.ndarray] = [None] * (2 * L)
    for l in range(L - 1, -1, -1):
        W = model.weights[l]
        a = cache.inputs if l == 0 else cache.hidden[l - 1]
        gW = gz.T @ a
        if gdz is not None:
            if l == 0:
                gJ = gdz.sum(axis=0).T
                gW = gW + (gJ if model.input_scale is None else gJ * model.input_scale)
            else:
                da = _hidden_tangent(cache, l - 1)
                o, i = W.shape
                gW = gW + gdz.reshape(-1, o).T @ da.reshape(-1, i)
        grads[2 * l] = gW
        grads[2 * l + 1] = gz.sum(axis=0)
        if l == 0:
            break
        ga = gz @ W
        h = cache.hidden[l - 1]
        D = 1.0 - h * h
        if gdz is not None:
            gda = gdz @ W
            dz_prev = cache.tangents[l - 1]
            gD = np.einsum("ndi,ndi->ni", gda, dz_prev)
            gdz = D[:, None, :] * gda
            gz = (ga - 2.0 * h * gD) * D
        else:
            gz = ga * D
    return grads


def _hidden_tangent(cache: ForwardCache, l: int) -> np.ndarray:
    h = cache.hidden[l]
    return (1.0 - h * h)[:, None, :] * cache.tangents[l]


# -- checkpoints ------------------------------------------------------------

@dataclass
class Checkpoint:
    model: MlpModel
    metadata: dict


def save_checkpoint(model: MlpModel, meta: dict | None, path) -> Path:
    """Write ``magic | u32 version | u64 metadata length | metadata JSON | doubles``.

    All integers and doubles are little-endian; for each layer the weights are
    stored row-major followed by the biases.
    """
    path = Path(path)
    meta = dict(meta or {})
    meta["layer_sizes"] = model.layer_sizes
    meta["format"] = "safetynet-checkpoint"
    if model.input_scale is not None:
        meta["input_map"] = {"offset": model.input_offset.tolist(), "scale": model.input_scale.tolist()}
    else:
        meta.pop("input_map", None)
    blob = json.dumps(meta, sort_keys=True).encode()
    params = model.flat().astype("<f8")
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", FORMAT_VERSION, len(blob)))
        fh.write(blob)
        fh.write(params.tobytes())
    tmp.replace(path)
    return path


def load_checkpoint(path, layer_sizes=None) -> Checkpoint:
    data = Path(path).read_bytes()
    head = len(MAGIC) + 12
    if len(data) < head or data[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, n_meta = struct.unpack("<IQ", data[len(MAGIC):head])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    try:
        meta = json.loads(data[head:head + n_meta].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt metadata ({exc})") from None
    sizes = meta.get("layer_sizes")
    if not sizes:
        raise CheckpointError(f"{path}: metadata lacks layer_sizes")
    if layer_sizes is not None and list(layer_sizes) != list(sizes):
        raise CheckpointError(f"{path}: layer sizes {sizes} do not match expected {list(layer_sizes)}")
    raw = data[head + n_meta:]
    if len(raw) % 8:
        raise CheckpointError(f"{path}: truncated parameter block")
    flat = np.frombuffer(raw, dtype="<f8").astype(float)
    try:
        imap = meta.get("input_map") or {}
        model = MlpModel.from_flat(sizes, flat, imap.get("offset"), imap.get("scale"))
    except ValueError as exc:
        raise CheckpointError(f"{path}: {exc}") from None
    return Checkpoint(model, meta)
