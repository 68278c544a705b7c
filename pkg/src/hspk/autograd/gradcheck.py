"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from hspk.autograd.tensor import Tensor


@dataclass
class GradCheckReport:
    analytic: np.ndarray
    numeric: np.ndarray
    rel_error: np.ndarray

    @property
    def max_rel_error(self) -> float:
        return float(self.rel_error.max()) if self.rel_error.size else 0.0

    def passed(self, tol: float) -> bool:
        return self.max_rel_error < tol


def grad_check(
    f: Callable[[Tensor], Tensor],
    point: np.ndarray,
    h: float = 1e-5,
    indices: np.ndarray | None = None,
    fd_dtype=np.float64,
) -> GradCheckReport:
    """Compare ``d f / d point`` from backprop with ``(f(x+h) - f(x-h)) / 2h``.

    ``f`` builds a scalar graph from a fresh leaf each call.  ``indices``
    restricts the finite-difference probes to a subset of flat positions, which
    keeps large inputs affordable.  Relative error uses the denominator
    ``max(|a|, |n|, 1e-8)``.

    ``fd_dtype=np.longdouble`` evaluates the perturbed points in extended
    precision.  The analytic side always runs in double.  This matters for
    gradients near 1e-9, where double round-off in ``f`` alone exceeds 1e-4
    relative.
    """
    x0 = np.array(point, dtype=np.float64)
    leaf = Tensor(x0.copy(), requires_grad=True)
    f(leaf).backward()
    analytic_full = leaf.grad if leaf.grad is not None else np.zeros_like(x0)

    flat_idx = np.arange(x0.size) if indices is None else np.asarray(indices)
    numeric = np.empty(flat_idx.size)
    for k, idx in enumerate(flat_idx):
        xp = x0.astype(fd_dtype).reshape(-1)
        xm = x0.astype(fd_dtype).reshape(-1)
        xp[idx] += h
        xm[idx] -= h
        fp = f(Tensor(xp.reshape(x0.shape))).data.reshape(())
        fm = f(Tensor(xm.reshape(x0.shape))).data.reshape(())
        numeric[k] = float((fp - fm) / (2.0 * h))
    analytic = analytic_full.reshape(-1)[flat_idx]
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return GradCheckReport(analytic, numeric, np.abs(analytic - numeric) / denom)
