"""Per-category pixel metrics over the eight powerset categories."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .. import encoding
from ..encoding import K, N_CATEGORIES
from ..errors import DimensionError


def f1_score(precision, recall):
    """Harmonic mean, 0 where both inputs are 0."""
    p = np.asarray(precision, dtype=np.float64)
    r = np.asarray(recall, dtype=np.float64)
    s = p + r
    out = np.divide(2 * p * r, s, out=np.zeros(np.broadcast(p, r).shape), where=s > 0)
    return float(out) if out.ndim == 0 else out


def _ratio(num, den):
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    return np.divide(num, den, out=np.zeros_like(num), where=den > 0)


@dataclass
class CategoryMetrics:
    confusion: np.ndarray  # (8, 8) pixel counts, rows = truth, cols = prediction

    @property
    def tp(self) -> np.ndarray:
        return np.diag(self.confusion).astype(np.int64)

    @property
    def fp(self) -> np.ndarray:
        return self.confusion.sum(axis=0) - self.tp

    @property
    def fn(self) -> np.ndarray:
        return self.confusion.sum(axis=1) - self.tp

    @property
    def support(self) -> np.ndarray:
        return self.confusion.sum(axis=1)

    @property
    def precision(self) -> np.ndarray:
        return _ratio(self.tp, self.tp + self.fp)

    @property
    def recall(self) -> np.ndarray:
        return _ratio(self.tp, self.tp + self.fn)

    @property
    def f1(self) -> np.ndarray:
        return f1_score(self.precision, self.recall)

    def macro(self) -> tuple[float, float, float]:
        return macro_average(self)

    def __add__(self, other: "CategoryMetrics") -> "CategoryMetrics":
        return CategoryMetrics(self.confusion + other.confusion)


def confusion_matrix(truth, pred, n: int = N_CATEGORIES) -> np.ndarray:
    truth = np.asarray(truth).ravel().astype(np.int64)
    pred = np.asarray(pred).ravel().astype(np.int64)
    if truth.shape != pred.shape:
        raise DimensionError(f"truth has {truth.size} pixels, prediction has {pred.size}")
    return np.bincount(truth * n + pred, minlength=n * n).reshape(n, n)


def score(truth, pred) -> CategoryMetrics:
    return CategoryMetrics(confusion_matrix(truth, pred))


def macro_average(metrics) -> tuple[float, float, float]:
    """Unweighted (F1, precision, recall) means over the categories.

    Accepts a :class:`CategoryMetrics` or an (n, 3) array-like of
    (F1, precision, recall) rows.
    """
    if isinstance(metrics, CategoryMetrics):
        rows = np.stack([metrics.f1, metrics.precision, metrics.recall], axis=1)
    else:
        rows = np.asarray(metrics, dtype=np.float64)
    f1, p, r = rows.mean(axis=0)
    return float(f1), float(p), float(r)


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("HSBIT_THREADS", "1")))
    except ValueError:
        return 1


def evaluate_predictions(truths: Sequence[np.ndarray], preds: Sequence[np.ndarray]) -> CategoryMetrics:
    total = np.zeros((N_CATEGORIES, N_CATEGORIES), dtype=np.int64)
    for t, p in zip(truths, preds):
        total += confusion_matrix(t, p)
    return CategoryMetrics(total)


def predict_all(predictor: Callable[[np.ndarray], np.ndarray], cubes: Sequence[np.ndarray]) -> list[np.ndarray]:
    """Run ``predictor`` over cubes, in parallel when HSBIT_THREADS > 1. Order is preserved."""
    n = _workers()
    if n == 1 or len(cubes) < 2:
        return [predictor(c) for c in cubes]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(predictor, cubes))


def evaluate(model, scenes, threshold: float = encoding.DEFAULT_THRESHOLD) -> CategoryMetrics:
    """Pool pixel counts over ``scenes`` (objects with ``cube`` and ``truth``).

    Bitfield outputs are decoded to powerset categories first, so both heads
    are scored on the same eight categories.
    """
    from ..model import predict_powerset

    for s in scenes:
        if s.cube.shape[2] != model.spec.bands:
            raise DimensionError(f"scene has {s.cube.shape[2]} bands, model expects {model.spec.bands}")
    preds = predict_all(lambda c: predict_powerset(model, c, threshold, pad=True), [s.cube for s in scenes])
    return evaluate_predictions([s.truth for s in scenes], preds)


# overlap composition --------------------------------------------------------------------

@dataclass
class OverlapComposition:
    category: int
    pixels: int
    exact_recall: float
    bit_recall: dict[int, float]  # constituent bit -> fraction of pixels with that bit predicted
    subset_fraction: float  # predicted bits form a non-empty subset of the constituents

    @property
    def mean_bit_recall(self) -> float:
        return float(np.mean(list(self.bit_recall.values()))) if self.bit_recall else 0.0


def overlap_composition(truths, preds) -> dict[int, OverlapComposition]:
    """Constituent-bit analysis on overlap pixels; categories absent from the truth are omitted."""
    t = np.concatenate([np.asarray(x).ravel() for x in truths])
    p = np.concatenate([np.asarray(x).ravel() for x in preds])
    pbits = encoding.index_to_bitfield(p)
    out = {}
    for cat in range(N_CATEGORIES):
        members = [k for k in range(K) if cat >> k & 1]
        if len(members) < 2:
            continue
        sel = t == cat
        n = int(sel.sum())
        if n == 0:
            continue
        pb = pbits[sel]
        extra = pb[:, [k for k in range(K) if k not in members]].any(axis=1)
        subset = pb.any(axis=1) & ~extra
        out[cat] = OverlapComposition(
            category=cat,
            pixels=n,
            exact_recall=float((p[sel] == cat).mean()),
            bit_recall={k: float(pb[:, k].mean()) for k in members},
            subset_fraction=float(subset.mean()),
        )
    return out


def pooled_two_way(comp: dict[int, OverlapComposition]) -> tuple[float, float]:
    """(exact recall, mean constituent-bit recall) pooled over two-way overlap pixels."""
    rows = [c for c in comp.values() if len(c.bit_recall) == 2]
    n = sum(c.pixels for c in rows)
    if n == 0:
        return 0.0, 0.0
    exact = sum(c.exact_recall * c.pixels for c in rows) / n
    bits = sum(c.mean_bit_recall * c.pixels for c in rows) / n
    return float(exact), float(bits)


def overlap_composition_analysis(model, scenes, threshold: float = encoding.DEFAULT_THRESHOLD):
    from ..model import predict_powerset

    preds = predict_all(lambda c: predict_powerset(model, c, threshold, pad=True), [s.cube for s in scenes])
    return overlap_composition([s.truth for s in scenes], preds)
