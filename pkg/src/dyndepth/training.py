"""Optimization: Adam, gradient clipping, the two training phases, the tau sweep.

Training happens in two phases.  Phase 1 fits the encoder together with
the final block's output head on plain cross entropy, giving a solid
full-depth backbone.  Phase 2 redraws the intermediate output heads and
every halting head, then optimizes all parameters jointly on task loss
plus ``tau`` times the ponder penalty.  Baseline per-block heads (for the
threshold-style exits) are fitted separately on a frozen backbone.

Examples are processed one at a time and adjoints are accumulated across
a minibatch before each optimizer step, so results are independent of any
batching internals and bitwise reproducible for a given seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .checkpoint import load_state_dict, state_dict
from .config import ModelConfig, TrainConfig
from .data import tokenize
from .halting import DactModel
from .rng import (
    STREAM_BASELINE_HEADS,
    STREAM_HEAD_REINIT,
    STREAM_SHUFFLE_PHASE1,
    STREAM_SHUFFLE_PHASE2,
    make_rng,
)


class TrainingDiverged(RuntimeError):
    """Raised when a loss stops being finite; the model state is unreliable."""


class Adam:
    """Standard Adam with bias correction (beta1=0.9, beta2=0.999, eps=1e-8)."""

    def __init__(self, params, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        self.t += 1
        scale1 = 1.0 - self.beta1**self.t
        scale2 = 1.0 - self.beta2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data = p.data - self.lr * (m / scale1) / (np.sqrt(v / scale2) + self.eps)


def clip_global_norm(params, max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most ``max_norm``.

    Returns the pre-clip norm.  Parameters without gradients are skipped.
    """
    if max_norm <= 0:
        raise ValueError(f"max_norm must be positive, got {max_norm}")
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(np.sum(p.grad * p.grad))
    norm = math.sqrt(total)
    if norm > max_norm:
        factor = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad *= factor
    return norm


@dataclass
class EpochStats:
    loss: float
    task_loss: float = 0.0
    ponder_penalty: float = 0.0


def _check_finite(value: float, what: str) -> None:
    if not np.isfinite(value):
        raise TrainingDiverged(f"{what} became non-finite ({value})")


def _encode_all(examples, vocab, max_len: int):
    ids = [tokenize(ex, vocab, max_len) for ex in examples]
    labels = [ex.label for ex in examples]
    return ids, labels


def _batches(order, batch_size: int):
    for start in range(0, len(order), batch_size):
        yield order[start : start + batch_size]


def train_phase1(model: DactModel, examples, vocab, cfg: TrainConfig):
    """Fit the encoder plus the final block's output head on cross entropy.

    Other heads are untouched.  With ``epochs_phase1 == 0`` this is a
    strict no-op: no random draws, no parameter updates.
    """
    final_head = model.out_heads[-1]
    params = [t for _, t in model.encoder.named_parameters()]
    params.extend([final_head.w, final_head.b])
    optimizer = Adam(params, lr=cfg.lr_phase1)
    shuffle_rng = make_rng(cfg.seed, STREAM_SHUFFLE_PHASE1)
    ids, labels = _encode_all(examples, vocab, model.config.max_seq_len)
    num_blocks = model.config.num_blocks

    history = []
    for _ in range(cfg.epochs_phase1):
        order = shuffle_rng.permutation(len(ids))
        epoch_loss = 0.0
        for batch in _batches(order, cfg.batch_size):
            optimizer.zero_grad()
            for i in batch:
                states = model.encoder.encode(ids[i])
                readout = model.block_readout(states.cls_states[-1], num_blocks)
                loss = ad.cross_entropy(
                    ad.reshape(readout.probs, (1, model.config.num_classes)), [labels[i]]
                )
                value = loss.item()
                _check_finite(value, "phase-1 loss")
                epoch_loss += value
                ad.mul(loss, 1.0 / len(batch)).backward()
            clip_global_norm(params, cfg.grad_clip)
            optimizer.step()
        history.append(EpochStats(loss=epoch_loss / len(ids)))
    return history


def train_phase2(model: DactModel, examples, vocab, cfg: TrainConfig, reinit: bool = True):
    """Joint training on task loss plus the tau-weighted ponder penalty.

    By default the intermediate output heads and every halting head are
    redrawn first from a seed-keyed stream, so runs that differ only in
    ``tau`` start from identical parameters.
    """
    if reinit:
        model.reinit_heads(make_rng(cfg.seed, STREAM_HEAD_REINIT))
    params = [t for _, t in model.named_parameters()]
    optimizer = Adam(params, lr=cfg.lr_phase2)
    shuffle_rng = make_rng(cfg.seed, STREAM_SHUFFLE_PHASE2)
    ids, labels = _encode_all(examples, vocab, model.config.max_seq_len)

    history = []
    for _ in range(cfg.epochs_phase2):
        order = shuffle_rng.permutation(len(ids))
        epoch_total = epoch_task = epoch_ponder = 0.0
        for batch in _batches(order, cfg.batch_size):
            optimizer.zero_grad()
            for i in batch:
                _, losses, _ = model.forward_training(ids[i], labels[i], cfg.tau)
                total = losses.total.item()
                _check_finite(total, "phase-2 loss")
                epoch_total += total
                epoch_task += losses.task_loss.item()
                epoch_ponder += losses.ponder_penalty.item()
                ad.mul(losses.total, 1.0 / len(batch)).backward()
            clip_global_norm(params, cfg.grad_clip)
            optimizer.step()
        n = len(ids)
        history.append(EpochStats(loss=epoch_total / n, task_loss=epoch_task / n, ponder_penalty=epoch_ponder / n))
    return history


def train_baseline_heads(model: DactModel, examples, vocab, cfg: TrainConfig):
    """Fit per-block output heads on a frozen backbone for threshold exits.

    Heads 1..N-1 are redrawn and trained on the sum of per-block cross
    entropies; the final head keeps its phase-1 weights.  Encoder states
    are computed once per example and cached as constants, so gradients
    reach only the head parameters.
    """
    num_blocks = model.config.num_blocks
    head_rng = make_rng(cfg.seed, STREAM_BASELINE_HEADS)
    for i in range(num_blocks - 1):
        model.out_heads[i] = model._init_out_head(head_rng)
    heads = model.out_heads[: num_blocks - 1]
    params = []
    for head in heads:
        params.extend([head.w, head.b])
    optimizer = Adam(params, lr=cfg.lr_phase2)
    shuffle_rng = make_rng(cfg.seed, STREAM_SHUFFLE_PHASE2)
    ids, labels = _encode_all(examples, vocab, model.config.max_seq_len)

    with ad.no_grad():
        cached = []
        for token_ids in ids:
            states = model.encoder.encode(token_ids)
            cached.append([Tensor(cls.data.copy()) for cls in states.cls_states[: num_blocks - 1]])

    history = []
    for _ in range(cfg.epochs_phase2):
        order = shuffle_rng.permutation(len(ids))
        epoch_loss = 0.0
        for batch in _batches(order, cfg.batch_size):
            optimizer.zero_grad()
            for i in batch:
                loss = None
                for block, cls_state in enumerate(cached[i], start=1):
                    readout = model.block_readout(cls_state, block)
                    ce = ad.cross_entropy(
                        ad.reshape(readout.probs, (1, model.config.num_classes)), [labels[i]]
                    )
                    loss = ce if loss is None else ad.add(loss, ce)
                value = loss.item()
                _check_finite(value, "baseline head loss")
                epoch_loss += value
                ad.mul(loss, 1.0 / len(batch)).backward()
            clip_global_norm(params, cfg.grad_clip)
            optimizer.step()
        history.append(EpochStats(loss=epoch_loss / len(ids)))
    return history


@dataclass
class SweepCell:
    """One (tau, seed) training run from the sweep grid."""

    tau: float
    seed: int
    model: DactModel | None = None
    history: list = field(default_factory=list)
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


def phase1_snapshot(model_cfg: ModelConfig, base_cfg: TrainConfig, examples, vocab, seed: int) -> dict:
    """Run phase 1 for one seed and return the resulting parameter state.

    Phase 1 depends only on the seed, never on tau, so its output can be
    shared by every tau cell of a sweep and by the baseline-head models.
    """
    model = DactModel(model_cfg, seed=seed)
    cfg = TrainConfig(**{**_cfg_dict(base_cfg), "seed": seed})
    train_phase1(model, examples, vocab, cfg)
    return state_dict(model)


def sweep_tau(model_cfg: ModelConfig, base_cfg: TrainConfig, examples, vocab, taus, seeds,
              progress=None, snapshots=None):
    """Train one model per (tau, seed) cell, sharing phase 1 within a seed.

    ``snapshots`` may carry precomputed ``phase1_snapshot`` results keyed
    by seed; missing seeds are trained here.  A cell whose training
    diverges is recorded with its error message instead of aborting the
    sweep.
    """
    cells = []
    snapshots = dict(snapshots or {})
    for seed in seeds:
        if seed not in snapshots:
            snapshots[seed] = phase1_snapshot(model_cfg, base_cfg, examples, vocab, seed)
        snapshot = snapshots[seed]
        for tau in taus:
            cell = SweepCell(tau=tau, seed=seed)
            try:
                model = DactModel(model_cfg, seed=seed)
                load_state_dict(model, snapshot)
                cfg_cell = TrainConfig(**{**_cfg_dict(base_cfg), "seed": seed, "tau": tau})
                cell.history = train_phase2(model, examples, vocab, cfg_cell)
                cell.model = model
            except TrainingDiverged as exc:
                cell.error = str(exc)
            cells.append(cell)
            if progress is not None:
                progress(cell)
    return cells


def _cfg_dict(cfg: TrainConfig) -> dict:
    return {f: getattr(cfg, f) for f in cfg.__dataclass_fields__}
