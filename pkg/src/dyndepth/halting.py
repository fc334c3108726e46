"""Accumulated-answer halting: per-block heads, recurrence, loss, exit bound.

Each block n gets two linear heads on the classification-token state: an
output head whose softmax ``probs`` is that block's class distribution,
and a halting head whose sigmoid ``halt`` value gates how much of the
remaining probability mass later blocks may still claim.  The running
state folds the two together:

    answer'    = probs * remaining + answer * (1 - remaining)
    remaining' = remaining * halt

Training unrolls every block and optimizes task loss on the final answer
plus ``tau`` times the sum of halting values (the ponder penalty).  At
inference the same recurrence runs block by block, and execution stops as
soon as a worst-case bound shows the leading class can no longer be
overtaken by the blocks that remain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .backbone import Encoder
from .config import ModelConfig
from .rng import STREAM_AUDIT, STREAM_MODEL_INIT, make_rng


@dataclass
class BlockReadout:
    """One block's two head outputs: a class distribution and a halting value."""

    probs: Tensor  # [C], sums to 1
    halt: Tensor   # scalar in (0, 1)


@dataclass
class HaltingState:
    """Recurrence state after ``steps`` blocks.

    ``answer`` is the accumulated class distribution (the zero vector
    before the first step), ``remaining`` the probability mass future
    blocks can still claim (1 before the first step, non-increasing).
    """

    answer: Tensor
    remaining: Tensor
    steps: int = 0

    def answer_values(self) -> np.ndarray:
        return np.asarray(self.answer.data, dtype=np.float64)

    def remaining_value(self) -> float:
        return float(self.remaining.data)


@dataclass
class LossBreakdown:
    task_loss: Tensor
    ponder_penalty: Tensor
    tau: float
    total: Tensor


def initial_state(num_classes: int) -> HaltingState:
    return HaltingState(answer=Tensor(np.zeros(num_classes)), remaining=Tensor(1.0), steps=0)


def dact_step(state: HaltingState, readout: BlockReadout) -> HaltingState:
    """Fold one block's readout into the state.

    The answer update uses the incoming ``remaining``; only afterwards is
    it decayed by the halting value.
    """
    answer = ad.add(
        ad.mul(readout.probs, state.remaining),
        ad.mul(state.answer, ad.sub(1.0, state.remaining)),
    )
    remaining = ad.mul(state.remaining, readout.halt)
    return HaltingState(answer=answer, remaining=remaining, steps=state.steps + 1)


def run_recurrence(readouts, num_classes: int):
    """Apply dact_step over a readout sequence; returns every intermediate state."""
    state = initial_state(num_classes)
    states = []
    for readout in readouts:
        state = dact_step(state, readout)
        states.append(state)
    return states


def _top_two(answer: np.ndarray):
    # np.argmax takes the lowest index on ties, for the runner-up as well.
    c_star = int(np.argmax(answer))
    masked = answer.copy()
    masked[c_star] = -np.inf
    return c_star, int(np.argmax(masked))


def halting_bound_holds(state: HaltingState, d: int) -> bool:
    """Worst-case exit test: can ``d`` more blocks still change the argmax?

    True when the top class's lowest reachable value after d steps,
    ``answer[c*] * (1 - remaining)^d``, still beats the runner-up's highest
    reachable value, ``answer[c_ru] + remaining * d``.  Uses the
    post-update ``remaining`` of the state.
    """
    if d < 0:
        raise ValueError(f"remaining step count must be >= 0, got {d}")
    answer = state.answer_values()
    if answer.size < 2:
        raise ValueError("halting bound needs at least 2 classes")
    p = state.remaining_value()
    c_star, c_ru = _top_two(answer)
    return bool(answer[c_star] * (1.0 - p) ** d >= answer[c_ru] + p * d)


def adversarial_bound_audit(state: HaltingState, d: int) -> bool:
    """Simulate the worst admissible future and report whether the argmax survives.

    The adversary pours every future block's probability onto the
    runner-up class while keeping halting values at 1 so the remaining
    mass never decays.  For any state where :func:`halting_bound_holds` is
    true this must return true; it is the independent check of the bound.
    """
    answer = state.answer_values()
    c_star, c_ru = _top_two(answer)
    hostile = np.zeros_like(answer)
    hostile[c_ru] = 1.0
    with ad.no_grad():
        sim = HaltingState(Tensor(answer.copy()), Tensor(state.remaining_value()), state.steps)
        readout = BlockReadout(probs=Tensor(hostile), halt=Tensor(1.0))
        for _ in range(d):
            sim = dact_step(sim, readout)
            if int(np.argmax(sim.answer_values())) != c_star:
                return False
    return True


def run_bound_audit_suite(trials: int = 10000, seed: int = 0, num_classes: int = 2,
                          max_steps: int = 6):
    """Adversarially audit random states where the exit bound claims safety.

    Draws (answer, remaining, d) triples until ``trials`` of them satisfy
    :func:`halting_bound_holds`, runs :func:`adversarial_bound_audit` on
    each, and returns ``(checked, failures)``.  Any nonzero failure count
    means the bound let through a state whose argmax the worst-case future
    could still flip.
    """
    rng = make_rng(seed, STREAM_AUDIT)
    checked = failures = attempts = 0
    limit = max(trials * 1000, 1000)
    while checked < trials:
        attempts += 1
        if attempts > limit:
            raise RuntimeError(f"could not find {trials} bound-holding states in {limit} draws")
        answer = rng.dirichlet(np.ones(num_classes))
        remaining = 10.0 ** rng.uniform(-6.0, 0.0)  # log-uniform: small masses matter most
        d = int(rng.integers(0, max_steps + 1))
        state = HaltingState(Tensor(answer), Tensor(remaining), steps=0)
        if not halting_bound_holds(state, d):
            continue
        checked += 1
        if not adversarial_bound_audit(state, d):
            failures += 1
    return checked, failures


class _Head:
    __slots__ = ("w", "b")

    def __init__(self, w: Tensor, b: Tensor):
        self.w = w
        self.b = b


class DactModel:
    """Encoder plus one output head and one halting head per block."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        rng = make_rng(seed, STREAM_MODEL_INIT)
        self.encoder = Encoder(config, rng)
        self.out_heads = [self._init_out_head(rng) for _ in range(config.num_blocks)]
        self.halt_heads = [self._init_halt_head(rng) for _ in range(config.num_blocks)]

    def _init_out_head(self, rng) -> _Head:
        d, c = self.config.hidden_dim, self.config.num_classes
        bound = 1.0 / math.sqrt(d)
        return _Head(ad.parameter(rng.uniform(-bound, bound, size=(d, c))), ad.parameter(np.zeros(c)))

    def _init_halt_head(self, rng) -> _Head:
        d = self.config.hidden_dim
        bound = 1.0 / math.sqrt(d)
        return _Head(ad.parameter(rng.uniform(-bound, bound, size=(d, 1))), ad.parameter(np.zeros(1)))

    def named_parameters(self):
        params = list(self.encoder.named_parameters())
        for i, (out, halt) in enumerate(zip(self.out_heads, self.halt_heads)):
            params.extend(
                [
                    (f"head{i}.out.w", out.w),
                    (f"head{i}.out.b", out.b),
                    (f"head{i}.halt.w", halt.w),
                    (f"head{i}.halt.b", halt.b),
                ]
            )
        return params

    def reinit_heads(self, rng, keep_final_output: bool = True) -> None:
        """Redraw head weights (fresh start for joint training).

        The final block's output head doubles as the backbone fine-tuning
        classifier, so by default it keeps its trained weights.
        """
        last = self.config.num_blocks - 1
        for i in range(self.config.num_blocks):
            if not (keep_final_output and i == last):
                self.out_heads[i] = self._init_out_head(rng)
            self.halt_heads[i] = self._init_halt_head(rng)

    # -- forward paths ---------------------------------------------------------

    def block_readout(self, cls_state: Tensor, block_index: int) -> BlockReadout:
        """Head outputs for 1-based block ``block_index`` on a [D] CLS state."""
        if not (1 <= block_index <= self.config.num_blocks):
            raise ValueError(f"block_index must be in [1, {self.config.num_blocks}]")
        out = self.out_heads[block_index - 1]
        halt = self.halt_heads[block_index - 1]
        row = ad.reshape(cls_state, (1, self.config.hidden_dim))
        probs = ad.softmax(ad.reshape(ad.add(ad.matmul(row, out.w), out.b), (self.config.num_classes,)))
        halt_value = ad.sigmoid(ad.reshape(ad.add(ad.matmul(row, halt.w), halt.b), ()))
        return BlockReadout(probs=probs, halt=halt_value)

    def readouts(self, cls_states) -> list:
        return [self.block_readout(cls, i + 1) for i, cls in enumerate(cls_states)]

    def forward_training(self, token_ids, label: int, tau: float):
        """Unroll all blocks, return (final state, loss breakdown, readouts).

        The training path never exits early: the task loss is the cross
        entropy of the fully accumulated answer, and the ponder penalty is
        the sum of every block's halting value.
        """
        states = self.encoder.encode(token_ids)
        readouts = self.readouts(states.cls_states)
        final = run_recurrence(readouts, self.config.num_classes)[-1]
        task = ad.cross_entropy(ad.reshape(final.answer, (1, self.config.num_classes)), [label])
        ponder = readouts[0].halt
        for readout in readouts[1:]:
            ponder = ad.add(ponder, readout.halt)
        total = ad.add(task, ad.mul(ponder, tau))
        return final, LossBreakdown(task_loss=task, ponder_penalty=ponder, tau=tau, total=total), readouts

    def forward_adaptive(self, token_ids, trace=None):
        """Run blocks until the exit bound fires; returns (prediction, layers_used, state).

        ``trace``, when a list, collects one dict per executed block with
        the readout, the state after folding it in, and the bound decision.
        """
        num_blocks = self.config.num_blocks
        with ad.no_grad():
            state = initial_state(self.config.num_classes)
            n = 0
            stream = self.encoder.iter_hidden(token_ids)
            next(stream)  # embedding output feeds no head
            for x in stream:
                n += 1
                readout = self.block_readout(x[0], n)
                state = dact_step(state, readout)
                halted = halting_bound_holds(state, num_blocks - n)
                if trace is not None:
                    trace.append(
                        {
                            "block": n,
                            "probs": readout.probs.data.copy(),
                            "halt": float(readout.halt.data),
                            "remaining": state.remaining_value(),
                            "answer": state.answer_values().copy(),
                            "halted": halted,
                        }
                    )
                if halted:
                    break
        prediction = int(np.argmax(state.answer_values()))
        return prediction, n, state

    def predict_full(self, token_ids) -> int:
        """Training-path prediction: argmax of the fully accumulated answer."""
        with ad.no_grad():
            states = self.encoder.encode(token_ids)
            readouts = self.readouts(states.cls_states)
            final = run_recurrence(readouts, self.config.num_classes)[-1]
        return int(np.argmax(final.answer_values()))

    def predict_static(self, token_ids) -> int:
        """Full-depth prediction from the final block's output head alone."""
        with ad.no_grad():
            states = self.encoder.encode(token_ids)
            readout = self.block_readout(states.cls_states[-1], self.config.num_blocks)
        return int(np.argmax(readout.probs.data))
