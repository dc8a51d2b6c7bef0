"""Adam optimisation of the safety network over minibatched training sets."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .losses import Batch, LossReport, LossWeights, NonFiniteLossError, Problem, loss_and_gradients
from .network import MlpModel, load_checkpoint, save_checkpoint
from .sampling import MinibatchSchedule, TrainingSets, next_minibatch

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class AdamState:
    alpha: float = 0.005
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] | None = None
    v: list[np.ndarray] | None = None

    @classmethod
    def for_model(cls, model: MlpModel, **hyper) -> "AdamState":
        st = cls(**hyper)
        st.m = [np.zeros_like(p) for p in model.parameters()]
        st.v = [np.zeros_like(p) for p in model.parameters()]
        return st


def adam_step(state: AdamState, model: MlpModel, gradients) -> None:
    """One bias-corrected Adam update, applied in place to ``model`` and ``state``."""
    params = model.parameters()
    if len(gradients) != len(params) or any(g.shape != p.shape for g, p in zip(gradients, params)):
        raise ValueError("gradient shapes do not match the model parameters")
    if not all(np.all(np.isfinite(g)) for g in gradients):
        raise TrainingError("non-finite gradient")
    if state.m is None:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, gradients, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.alpha * (m / c1) / (np.sqrt(v / c2) + state.eps)


@dataclass
class TrainingConfig:
    epochs: int = 5000
    learning_rate: float = 0.005
    seed: int = 0
    schedule: MinibatchSchedule = field(default_factory=MinibatchSchedule)
    weights: LossWeights = field(default_factory=LossWeights)
    eval_every: int = 1
    checkpoint_every: int = 0
    checkpoint_dir: Path | None = None
    log_every: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")


@dataclass
class TrainingResult:
    model: MlpModel
    history: list[tuple[int, LossReport]]
    adam: AdamState
    epochs_run: int
    seconds: float = 0.0


def full_batch(sets: TrainingSets) -> Batch:
    return Batch(sets.ic_points, sets.bc_points, sets.collocation_points, sets.elements)


def evaluate(model: MlpModel, problem: Problem, eval_sets: TrainingSets,
             weights: LossWeights | None = None, chunk: int = 20000) -> LossReport:
    """Full-set loss report. Large sets are processed in chunks and recombined
    exactly (each term is a root of a sum of squares)."""
    w = weights or problem.weights
    parts = _chunks(eval_sets, chunk)
    sq = {t: 0.0 for t in ("ic", "bc", "mon", "r", "v")}
    counts: dict[str, int] = {}
    rep = None
    for b in parts:
        rep, _ = loss_and_gradients(model, problem, b, w, need_grad=False)
        for t in sq:
            sq[t] += getattr(rep, f"l_{t}") ** 2
        for k, n in rep.counts.items():
            counts[k] = counts.get(k, 0) + n
    out = LossReport(**{f"l_{t}": float(np.sqrt(v)) for t, v in sq.items()})
    out.l_reg = rep.l_reg if rep is not None else 0.0
    out.total = out.weighted_sum(w)
    out.counts = counts
    return out


def _chunks(sets: TrainingSets, chunk: int):
    n = max(len(sets.ic_points), len(sets.bc_points), len(sets.collocation_points), 1)
    k = max(1, int(np.ceil(n / chunk)))
    ic = np.array_split(sets.ic_points, k)
    bc = np.array_split(sets.bc_points, k)
    col = np.array_split(np.arange(len(sets.collocation_points)), k)
    n_el = len(sets.elements)
    out = []
    for i in range(k):
        idx = col[i]
        el = sets.elements.subset(idx[idx < n_el])
        out.append(Batch(ic[i], bc[i], sets.collocation_points[idx], el))
    return out


def train(problem: Problem, sets: TrainingSets, config: TrainingConfig, model: MlpModel,
          eval_sets: TrainingSets | None = None, adam: AdamState | None = None, start_epoch: int = 0,
          meta: dict | None = None, progress: Callable[[int, LossReport], None] | None = None,
          stop_when: Callable[[int, LossReport], bool] | None = None) -> TrainingResult:
    """Run ``config.epochs`` epochs of minibatch Adam starting after ``start_epoch``.

    ``model`` is updated in place and returned in the result. Passing the Adam
    state and ``start_epoch`` of an earlier run resumes it exactly, because
    batch composition depends only on ``(shuffle_seed, epoch, batch)``.
    ``stop_when(epoch, report)`` can end training early after an evaluation.
    """
    eval_sets = eval_sets or sets
    adam = adam or AdamState.for_model(model, alpha=config.learning_rate)
    history: list[tuple[int, LossReport]] = []
    last_good = model.copy()
    nb = config.schedule.batches_per_epoch
    t0 = time.perf_counter()
    epoch = start_epoch
    for epoch in range(start_epoch + 1, start_epoch + config.epochs + 1):
        for b in range(nb):
            mb = next_minibatch(sets, config.schedule, epoch, b)
            batch = Batch(mb.ic, mb.bc, mb.collocation, mb.elements)
            try:
                _, grads = loss_and_gradients(model, problem, batch, config.weights)
                adam_step(adam, model, grads)
            except (NonFiniteLossError, TrainingError) as exc:
                _dump(last_good, meta, config, epoch - 1, "abort")
                raise TrainingError(f"epoch {epoch}, batch {b}: {exc}") from exc
        rep = None
        if config.eval_every and (epoch % config.eval_every == 0 or epoch == start_epoch + config.epochs):
            rep = evaluate(model, problem, eval_sets, config.weights)
            history.append((epoch, rep))
            if progress:
                progress(epoch, rep)
            if config.log_every and epoch % config.log_every == 0:
                log.info("epoch %d total %.6g (ic %.3g bc %.3g mon %.3g r %.3g v %.3g)", epoch, rep.total,
                         rep.l_ic, rep.l_bc, rep.l_mon, rep.l_r, rep.l_v)
        last_good = model.copy()
        if config.checkpoint_every and epoch % config.checkpoint_every == 0:
            _dump(model, meta, config, epoch, f"epoch{epoch:06d}")
        if stop_when is not None and rep is not None and stop_when(epoch, rep):
            break
    return TrainingResult(model, history, adam, epoch, time.perf_counter() - t0)


def _dump(model, meta, config, epoch, tag):
    if config.checkpoint_dir is None:
        return
    m = dict(meta or {})
    m["epoch"] = epoch
    save_checkpoint(model, m, Path(config.checkpoint_dir) / f"checkpoint_{tag}.bin")


def _as_model(arrays) -> MlpModel:
    return MlpModel(list(arrays[0::2]), list(arrays[1::2]))


def save_training_state(directory, model: MlpModel, adam: AdamState, epoch: int, meta: dict | None = None) -> Path:
    """Model plus Adam moments, enough to continue a run bit-for-bit."""
    d = Path(directory)
    m = dict(meta or {})
    m.update(epoch=int(epoch), adam={"alpha": adam.alpha, "beta1": adam.beta1, "beta2": adam.beta2,
                                     "eps": adam.eps, "step": adam.step})
    save_checkpoint(model, m, d / "model.bin")
    if adam.m is not None:
        save_checkpoint(_as_model(adam.m), {"moment": 1}, d / "adam_m.bin")
        save_checkpoint(_as_model(adam.v), {"moment": 2}, d / "adam_v.bin")
    return d


def load_training_state(directory) -> tuple[MlpModel, AdamState, int, dict]:
    d = Path(directory)
    ck = load_checkpoint(d / "model.bin")
    hyper = ck.metadata.get("adam", {})
    adam = AdamState(**hyper)
    if (d / "adam_m.bin").exists():
        sizes = ck.model.layer_sizes
        adam.m = load_checkpoint(d / "adam_m.bin", sizes).model.parameters()
        adam.v = load_checkpoint(d / "adam_v.bin", sizes).model.parameters()
    return ck.model, adam, int(ck.metadata.get("epoch", 0)), ck.metadata
