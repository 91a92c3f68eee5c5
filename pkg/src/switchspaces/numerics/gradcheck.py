from __future__ import annotations

import warnings

import numpy as np

from .autodiff import Tensor, backward, value


def _scalarize(out, projection):
    if projection is None:
        return out
    return (out * projection).sum()


def _evaluate(fn, arrays, projection):
    out = fn(*[np.array(a) for a in arrays])
    return float(np.sum(value(out) * (1.0 if projection is None else projection)))


def grad_check(fn, inputs, eps: float = 1e-6, rng=None, resample=None, kink_tol: float = 1e-2, max_tries: int = 10):
    """Max relative error between backward() and central differences.

    ``fn`` maps Tensors to a Tensor. Non-scalar outputs are reduced with a
    fixed random projection. The error per coordinate is
    ``|analytic - numeric| / max(1, |numeric|)``.

    If a coordinate looks non-differentiable (one-sided differences disagree
    by more than ``kink_tol``) and ``resample`` (a callable ``rng -> inputs``)
    is given, fresh inputs are drawn, up to ``max_tries`` times. When no
    smooth point is found the check is inconclusive: a warning is issued and
    ``nan`` is returned.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    arrays = [np.array(a, dtype=np.float64) for a in inputs]
    for _ in range(max_tries):
        leaves = [Tensor(a, requires_grad=True) for a in arrays]
        out = fn(*leaves)
        projection = None if np.size(value(out)) == 1 else rng.standard_normal(np.shape(value(out)))
        root = _scalarize(out, projection)
        if not isinstance(root, Tensor):
            root = Tensor(root)
        analytic = backward(root, leaves)
        f0 = _evaluate(fn, arrays, projection)
        worst, kinked = 0.0, False
        for i, a in enumerate(arrays):
            for idx in np.ndindex(a.shape):
                hi = [x.copy() for x in arrays]
                lo = [x.copy() for x in arrays]
                hi[i][idx] += eps
                lo[i][idx] -= eps
                fp = _evaluate(fn, hi, projection)
                fm = _evaluate(fn, lo, projection)
                numeric = (fp - fm) / (2 * eps)
                fwd, bwd = (fp - f0) / eps, (f0 - fm) / eps
                if abs(fwd - bwd) > kink_tol * max(1.0, abs(numeric)):
                    kinked = True
                    break
                err = abs(analytic[i][idx] - numeric) / max(1.0, abs(numeric))
                worst = max(worst, err)
            if kinked:
                break
        if not kinked:
            return worst
        if resample is None:
            break
        arrays = [np.array(a, dtype=np.float64) for a in resample(rng)]
    warnings.warn("grad_check inconclusive: no differentiable sample point found", RuntimeWarning)
    return float("nan")
