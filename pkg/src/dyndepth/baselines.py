"""Threshold-style early exits used as comparison points.

All three strategies read per-block class distributions from the same
output heads; they differ only in the stop rule:

* ``entropy``  - stop at the first block whose distribution has entropy
  at or below a threshold (low entropy = confident).
* ``patience`` - stop once the argmax prediction has stayed unchanged for
  a given number of consecutive blocks.
* ``static``   - never stop early; always use the final block.

None of these carries a correctness guarantee: a confident or stable
early block can still disagree with the full model.
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad


def entropy(probs) -> float:
    """Shannon entropy in nats, with the 0 * log(0) term defined as 0."""
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 1 or p.size < 1:
        raise ValueError(f"entropy expects a 1-D distribution, got shape {p.shape}")
    live = p > 0.0
    return float(-(p[live] * np.log(p[live])).sum())


def entropy_threshold_grid(num_classes: int, step: float = 0.05):
    """Thresholds 0, step, 2*step, ... spanning [0, ln(num_classes)]."""
    if num_classes < 2:
        raise ValueError("need at least 2 classes")
    top = math.log(num_classes)
    grid = [i * step for i in range(int(top / step) + 1)]
    if top - grid[-1] > 1e-12:
        grid.append(top)
    return grid


def patience_grid(num_blocks: int):
    return list(range(1, num_blocks + 1))


BASELINE_METHODS = ("entropy", "patience", "static")


def forward_baseline(model, token_ids, method: str, knob: float = 0.0):
    """Adaptive inference under one of the threshold exits.

    Returns ``(prediction, layers_used, probs)`` where ``probs`` is the
    class distribution of the block that made the call.  ``knob`` is the
    entropy threshold or the patience streak length; the static method
    ignores it and always runs every block.
    """
    if method not in BASELINE_METHODS:
        raise ValueError(f"unknown baseline {method!r}, expected one of {BASELINE_METHODS}")
    with ad.no_grad():
        prediction = None
        probs = None
        streak = 0
        n = 0
        stream = model.encoder.iter_hidden(token_ids)
        next(stream)  # embedding output feeds no head
        for x in stream:
            n += 1
            probs = model.block_readout(x[0], n).probs.data
            current = int(np.argmax(probs))
            if method == "entropy":
                prediction = current
                if entropy(probs) <= knob:
                    break
            elif method == "patience":
                streak = streak + 1 if current == prediction else 1
                prediction = current
                if streak >= int(knob):
                    break
            else:
                prediction = current
    return prediction, n, probs
