"""Evaluation and reporting: trade-off points, curves, AUC, layer histograms.

Efficiency is counted in transformer-block executions, not wall clock:
``blocks executed / (num_blocks * examples)``.  The encoder increments a
counter every time a block runs, so lazily evaluated prefixes are charged
exactly for the work they did.

All CSV output uses fixed 9-significant-digit formatting and sorted row
order, making reports byte-identical across runs with the same inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.metrics import f1_score, matthews_corrcoef

from . import autodiff as ad
from .baselines import forward_baseline
from .data import tokenize

METHODS = ("dact", "entropy", "patience", "static")
METRICS = ("accuracy", "f1", "mcc")


@dataclass
class TradeoffPoint:
    """One evaluated (method, knob, seed) cell of the efficiency/performance grid."""

    method: str
    knob: float
    seed: int
    efficiency: float
    performance: float


@dataclass
class CurvePoint:
    """Per-knob aggregate across seeds: means plus a 95% confidence half-width."""

    method: str
    knob: float
    efficiency: float
    performance: float
    ci95: float
    seeds: int


@dataclass
class CurveSummary:
    """Per-method AUC over the efficiency range the method actually covered."""

    method: str
    auc: float | None
    efficiency_lo: float
    efficiency_hi: float


def compute_metric(metric: str, labels, predictions) -> float:
    if metric == "accuracy":
        return float(np.mean(np.asarray(labels) == np.asarray(predictions)))
    if metric == "f1":
        return float(f1_score(labels, predictions, average="binary" if len(set(labels)) <= 2 else "macro"))
    if metric == "mcc":
        return float(matthews_corrcoef(labels, predictions))
    raise ValueError(f"unknown metric {metric!r}, expected one of {METRICS}")


def run_inference(model, examples, vocab, method: str, knob: float = 0.0, trace=None):
    """Adaptive inference over a dataset; returns (predictions, layers_used).

    ``trace`` (dact only), when a list, receives one row dict per executed
    block with the halting value, remaining probability, accumulated
    answer, and the exit decision.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}, expected one of {METHODS}")
    max_label = max((ex.label for ex in examples), default=0)
    if max_label >= model.config.num_classes:
        raise ValueError(
            f"dataset has label {max_label} but model was built for {model.config.num_classes} classes"
        )
    predictions = []
    layers = []
    for idx, ex in enumerate(examples):
        ids = tokenize(ex, vocab, model.config.max_seq_len)
        if method == "dact":
            rows = [] if trace is not None else None
            pred, used, _ = model.forward_adaptive(ids, trace=rows)
            if trace is not None:
                for row in rows:
                    trace.append({"example": idx, **row})
        else:
            pred, used, _ = forward_baseline(model, ids, method, knob)
        predictions.append(pred)
        layers.append(used)
    return predictions, layers


def evaluate(model, examples, vocab, method: str, knob: float = 0.0, seed: int = 0,
             metric: str = "accuracy", trace=None) -> TradeoffPoint:
    """Run one method over a dataset and aggregate into a TradeoffPoint."""
    if not examples:
        raise ValueError("cannot evaluate on an empty dataset")
    before = model.encoder.blocks_executed
    predictions, _ = run_inference(model, examples, vocab, method, knob, trace=trace)
    executed = model.encoder.blocks_executed - before
    efficiency = executed / (model.config.num_blocks * len(examples))
    performance = compute_metric(metric, [ex.label for ex in examples], predictions)
    return TradeoffPoint(method=method, knob=float(knob), seed=seed,
                         efficiency=efficiency, performance=performance)


def layer_histogram(model, examples, vocab, method: str = "dact", knob: float = 0.0):
    """Count how many examples executed each block (1-based list of length N)."""
    _, layers = run_inference(model, examples, vocab, method, knob)
    used = np.asarray(layers)
    return [int(np.sum(used >= b)) for b in range(1, model.config.num_blocks + 1)]


def mean_ponder(model, examples, vocab) -> float:
    """Mean over examples of the summed halting values (full unroll)."""
    total = 0.0
    for ex in examples:
        ids = tokenize(ex, vocab, model.config.max_seq_len)
        with ad.no_grad():
            states = model.encoder.encode(ids)
            for block, cls_state in enumerate(states.cls_states, start=1):
                total += float(model.block_readout(cls_state, block).halt.data)
    return total / len(examples)


def layers_by_difficulty(model, examples, vocab, method: str = "dact", knob: float = 0.0):
    """Mean layers_used grouped by the examples' difficulty tag."""
    _, layers = run_inference(model, examples, vocab, method, knob)
    groups = {}
    for ex, used in zip(examples, layers):
        groups.setdefault(ex.difficulty, []).append(used)
    return {tag: float(np.mean(v)) for tag, v in groups.items()}


# -- aggregation ------------------------------------------------------------------


def aggregate_curve(points) -> list:
    """Collapse seeds: per (method, knob) mean efficiency/performance plus 95% CI.

    The confidence half-width is 1.96 times the standard error of the
    performance across seeds (0 when only one seed contributed).
    """
    grouped = {}
    for pt in points:
        grouped.setdefault((pt.method, pt.knob), []).append(pt)
    curve = []
    for (method, knob), pts in grouped.items():
        perf = np.asarray([p.performance for p in pts])
        eff = np.asarray([p.efficiency for p in pts])
        if len(pts) > 1:
            ci = 1.96 * float(np.std(perf, ddof=1)) / np.sqrt(len(pts))
        else:
            ci = 0.0
        curve.append(CurvePoint(method=method, knob=knob, efficiency=float(eff.mean()),
                                performance=float(perf.mean()), ci95=float(ci), seeds=len(pts)))
    curve.sort(key=lambda c: (c.method, c.efficiency, c.knob))
    return curve


def method_auc(curve, method: str) -> CurveSummary:
    """Trapezoid AUC over the method's own observed efficiency range.

    With fewer than two distinct efficiency values the integral has zero
    support and the AUC is undefined (``auc=None``).
    """
    pts = sorted((c for c in curve if c.method == method), key=lambda c: c.efficiency)
    if not pts:
        raise ValueError(f"no curve points for method {method!r}")
    eff = np.asarray([c.efficiency for c in pts])
    perf = np.asarray([c.performance for c in pts])
    lo, hi = float(eff[0]), float(eff[-1])
    if len(pts) < 2 or hi == lo:
        return CurveSummary(method=method, auc=None, efficiency_lo=lo, efficiency_hi=hi)
    return CurveSummary(method=method, auc=float(np.trapezoid(perf, eff)),
                        efficiency_lo=lo, efficiency_hi=hi)


def curve_summaries(points) -> tuple:
    curve = aggregate_curve(points)
    methods = sorted({c.method for c in curve})
    return curve, [method_auc(curve, m) for m in methods]


# -- CSV output -------------------------------------------------------------------


def fmt(x) -> str:
    """Fixed formatting: 9 significant digits for reals, plain text otherwise."""
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, float):
        return f"{x:.9g}"
    return str(x)


def write_csv(path, header, rows) -> None:
    """Write one CSV with fixed formatting; the caller supplies row order."""
    lines = [",".join(header)]
    lines.extend(",".join(fmt(v) for v in row) for row in rows)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def write_tradeoff_csv(path, points) -> None:
    rows = [
        (p.method, p.knob, p.seed, p.efficiency, p.performance)
        for p in sorted(points, key=lambda p: (p.method, p.knob, p.seed))
    ]
    write_csv(path, ("method", "knob", "seed", "efficiency", "performance"), rows)


def read_tradeoff_csv(path) -> list:
    points = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        expected = ["method", "knob", "seed", "efficiency", "performance"]
        if header != expected:
            raise ValueError(f"bad tradeoff CSV header {header}, expected {expected}")
        for line in fh:
            if not line.strip():
                continue
            method, knob, seed, eff, perf = line.strip().split(",")
            points.append(TradeoffPoint(method=method, knob=float(knob), seed=int(seed),
                                        efficiency=float(eff), performance=float(perf)))
    return points


def write_curve_csv(path, curve) -> None:
    rows = [
        (c.method, c.knob, c.efficiency, c.performance, c.ci95, c.seeds)
        for c in sorted(curve, key=lambda c: (c.method, c.efficiency, c.knob))
    ]
    write_csv(path, ("method", "knob", "efficiency", "performance", "ci95", "seeds"), rows)


def write_histogram_csv(path, counts) -> None:
    rows = [(block, count) for block, count in enumerate(counts, start=1)]
    write_csv(path, ("block", "count"), rows)


def write_trace_csv(path, rows, num_classes: int) -> None:
    header = ["example", "block", "h", "p"]
    header.extend(f"a{c}" for c in range(num_classes))
    header.append("halted")
    out = []
    for row in rows:
        line = [row["example"], row["block"], float(row["halt"]), float(row["remaining"])]
        line.extend(float(v) for v in row["answer"])
        line.append(bool(row["halted"]))
        out.append(tuple(line))
    write_csv(path, tuple(header), out)
