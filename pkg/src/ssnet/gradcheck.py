"""Central finite-difference gradient checking.

The check builds a scalar probe ``sum(f(inputs) * R)`` with a fixed random
``R`` so every output element contributes, then compares the analytic
gradient of every input against ``(f(x + h) - f(x - h)) / 2h``.

Relative error is measured per tensor as ``||a - n|| / max(||a||, ||n||, floor)``,
which stays meaningful when individual entries are near zero. The absolute
``floor`` covers gradients that are exactly zero in exact arithmetic (the
key bias of softmax attention is one): there both sides are roundoff, and
comparing roundoff against roundoff says nothing. Within one check the floor
is ``RELATIVE_FLOOR`` times the largest gradient norm over all inputs, since
finite-difference roundoff grows with the size of the probed function.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor

STEP = 1e-5
NORM_FLOOR = 1e-6
RELATIVE_FLOOR = 1e-5


@dataclass
class GradCheckReport:
    max_rel_err: float
    passed: bool
    per_input: list[float] = field(default_factory=list)
    label: str = ""

    def __str__(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.label} max_rel_err={self.max_rel_err:.3e}"


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = NORM_FLOOR) -> float:
    diff = np.linalg.norm((analytic - numeric).ravel())
    scale = max(np.linalg.norm(analytic.ravel()), np.linalg.norm(numeric.ravel()), floor)
    if scale == 0.0:
        return 0.0 if diff == 0.0 else float("inf")
    return float(diff / scale)


def numerical_gradient(
    probe: Callable[[], float],
    array: np.ndarray,
    indices: Sequence[tuple[int, ...]] | None = None,
    h: float = STEP,
) -> np.ndarray:
    """Central differences of ``probe`` w.r.t. ``array`` (perturbed in place).

    With ``indices`` only those entries are estimated; the rest stay zero.
    """
    grad = np.zeros_like(array)
    it = indices if indices is not None else list(np.ndindex(array.shape))
    for idx in it:
        orig = array[idx]
        array[idx] = orig + h
        fp = probe()
        array[idx] = orig - h
        fm = probe()
        array[idx] = orig
        grad[idx] = (fp - fm) / (2.0 * h)
    return grad


def sample_indices(shape: tuple[int, ...], count: int | None, rng: np.random.Generator):
    total = int(np.prod(shape))
    if count is None or count >= total:
        return list(np.ndindex(shape))
    flat = rng.choice(total, size=count, replace=False)
    return [np.unravel_index(int(i), shape) for i in np.sort(flat)]


def check_gradients(
    fn: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    tolerance: float = 1e-4,
    *,
    seed: int = 0,
    max_entries: int | None = None,
    h: float = STEP,
    label: str = "",
    corrupt: float = 1.0,
) -> GradCheckReport:
    """Compare analytic and numerical gradients of ``fn(*inputs)``.

    ``max_entries`` caps how many coordinates of each input are perturbed,
    chosen at random with ``seed``. ``corrupt`` scales the analytic gradient
    before comparison and exists only for negative controls.
    """
    rng = np.random.default_rng(seed)
    out = fn(*inputs)
    weights = rng.standard_normal(out.shape)

    for t in inputs:
        t.grad = None
    (out * weights).sum().backward()
    analytic = [np.zeros(t.shape) if t.grad is None else t.grad.copy() for t in inputs]

    def probe() -> float:
        return float((fn(*inputs).data * weights).sum())

    pairs = []
    for t, a in zip(inputs, analytic):
        idx = sample_indices(t.shape, max_entries, rng)
        numeric = numerical_gradient(probe, t.data, idx, h)
        mask = np.zeros(t.shape, dtype=bool)
        for i in idx:
            mask[i] = True
        pairs.append((corrupt * a[mask], numeric[mask]))
    largest = max((max(np.linalg.norm(a), np.linalg.norm(n)) for a, n in pairs), default=0.0)
    floor = max(NORM_FLOOR, RELATIVE_FLOOR * largest)
    errors = [relative_error(a, n, floor) for a, n in pairs]
    worst = max(errors) if errors else 0.0
    return GradCheckReport(worst, bool(worst < tolerance), errors, label)


def grad_check(
    op: Callable[..., Tensor],
    input_shapes: Sequence[tuple[int, ...]],
    tolerance: float = 1e-4,
    *,
    seed: int = 0,
    scale: float = 1.0,
    label: str = "",
    corrupt: float = 1.0,
) -> GradCheckReport:
    """Gradient-check ``op`` on seeded standard-normal inputs of ``input_shapes``."""
    rng = np.random.default_rng(seed)
    inputs = [Tensor(scale * rng.standard_normal(s), requires_grad=True) for s in input_shapes]
    return check_gradients(op, inputs, tolerance, seed=seed, label=label, corrupt=corrupt)


def check_module(
    module,
    forward: Callable[[], Tensor],
    tolerance: float = 1e-4,
    *,
    seed: int = 0,
    max_entries: int | None = 6,
    extra_inputs: Sequence[Tensor] = (),
    label: str = "",
) -> GradCheckReport:
    """Gradient-check all parameters of ``module`` (plus ``extra_inputs``).

    ``forward`` is a thunk; parameters are perturbed in place between calls.
    """
    params = list(module.parameters()) + list(extra_inputs)
    return check_gradients(
        lambda *_: forward(), params, tolerance, seed=seed, max_entries=max_entries, label=label
    )
