"""Central finite-difference verification of analytic gradients.

The operation is evaluated in float64 so that the difference quotient is
not swamped by float32 rounding; the analytic path is the same code either
way since every op preserves its input dtype.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import ops
from .tensor import Tensor, backward, no_grad, recording


@dataclass
class GradCheckReport:
    max_rel_error: float
    tolerance: float
    per_input: list[float] = field(default_factory=list)
    failures: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures and self.max_rel_error < self.tolerance


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


def finite_diff_check(
    op: Callable[..., Tensor],
    input_shapes: Sequence[tuple[int, ...]] | None = None,
    tolerance: float = 1e-4,
    *,
    inputs: Sequence[np.ndarray] | None = None,
    h: float = 1e-3,
    seed: int = 0,
    wrt: Sequence[int] | None = None,
) -> GradCheckReport:
    """Compare ``op``'s analytic input gradients with central differences.

    Either ``input_shapes`` (standard-normal inputs from ``seed``) or explicit
    ``inputs`` must be given. A non-scalar output is reduced by a fixed random
    projection so every output element influences the check.
    """
    rng = np.random.default_rng(seed)
    if inputs is None:
        if input_shapes is None:
            raise ValueError("finite_diff_check needs input_shapes or inputs")
        arrays = [rng.standard_normal(s) for s in input_shapes]
    else:
        arrays = [np.array(a, dtype=np.float64) for a in inputs]
    wrt = range(len(arrays)) if wrt is None else wrt

    with no_grad():
        probe = op(*[Tensor(a) for a in arrays])
    proj = None if probe.data.size == 1 else rng.standard_normal(probe.shape)

    def scalar(arrs, grad_flags=None):
        ts = [Tensor(a, requires_grad=bool(grad_flags and i in grad_flags)) for i, a in enumerate(arrs)]
        out = op(*ts)
        if proj is not None:
            out = ops.sum(ops.mul(out, proj))
        return out, ts

    report = GradCheckReport(max_rel_error=0.0, tolerance=tolerance)
    with recording() as graph:
        loss, tensors = scalar(arrays, set(wrt))
    if not np.all(np.isfinite(loss.data)):
        report.failures.append("non-finite output")
        report.max_rel_error = float("inf")
        return report
    backward(graph, loss)

    with no_grad():
        for i in wrt:
            analytic = tensors[i].grad
            if analytic is None:
                analytic = np.zeros_like(arrays[i])
            numeric = np.zeros_like(arrays[i])
            base = arrays[i]
            it = np.nditer(base, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                orig = base[idx]
                base[idx] = orig + h
                fp = scalar(arrays)[0].item()
                base[idx] = orig - h
                fm = scalar(arrays)[0].item()
                base[idx] = orig
                numeric[idx] = (fp - fm) / (2 * h)
            err = float(relative_error(analytic, numeric).max()) if numeric.size else 0.0
            report.per_input.append(err)
            if not err < tolerance:
                report.failures.append(f"input {i}: max relative error {err:.3e} >= {tolerance:.1e}")
    report.max_rel_error = max(report.per_input, default=0.0)
    return report
