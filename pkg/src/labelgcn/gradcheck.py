"""Central finite-difference verification of the analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import InputMatrix
from .model import EVAL, ModelConfig, cross_entropy, forward, init_params, loss_and_gradients
from .sparse import SparseMatrix

# Relative error uses this floor so coordinates with (near-)zero true
# gradient compare on an absolute scale instead of amplifying FD noise.
REL_FLOOR = 1e-3


@dataclass
class GradCheckResult:
    max_rel_error: float
    per_array: dict[str, float] = field(default_factory=dict)

    def passed(self, tol: float = 1e-6) -> bool:
        return self.max_rel_error <= tol


def finite_difference_check(
    config: ModelConfig,
    ahat: SparseMatrix,
    inp: InputMatrix,
    nodes,
    classes,
    weights=None,
    seed: int = 0,
    n_coords: int = 20,
    eps: float = 1e-5,
    corrupt: float = 0.0,
) -> GradCheckResult:
    """Compare analytic gradients against central differences.

    Samples ``n_coords`` coordinates per parameter array (dropout off).
    ``corrupt`` offsets the analytic gradients and exists purely so tests
    can confirm the check detects a broken adjoint.
    """
    params = init_params(config, seed)
    trace = forward(params, config, ahat, inp, mode=EVAL)
    _, grads = loss_and_gradients(params, config, ahat, inp, nodes, classes, trace, weights)

    rng = np.random.default_rng(seed + 1)
    per_array: dict[str, float] = {}
    for name, arr in params.arrays().items():
        grad = grads.arrays()[name] + corrupt
        worst = 0.0
        flat = arr.reshape(-1)
        count = min(n_coords, flat.size)
        for idx in rng.choice(flat.size, size=count, replace=False):
            original = flat[idx]
            flat[idx] = original + eps
            up = _loss(params, config, ahat, inp, nodes, classes, weights)
            flat[idx] = original - eps
            down = _loss(params, config, ahat, inp, nodes, classes, weights)
            flat[idx] = original
            fd = (up - down) / (2.0 * eps)
            analytic = grad.reshape(-1)[idx]
            rel = abs(analytic - fd) / max(abs(analytic), abs(fd), REL_FLOOR)
            worst = max(worst, float(rel))
        per_array[name] = worst
    return GradCheckResult(max(per_array.values()), per_array)


def _loss(params, config, ahat, inp, nodes, classes, weights) -> float:
    trace = forward(params, config, ahat, inp, mode=EVAL)
    return cross_entropy(trace.probs, nodes, classes, weights)
