"""
Multi-start nonlinear least squares.

A coarse grid over each parameter (log-spaced, 8 points per decade, for
positive parameters) picks the starting points; Levenberg-Marquardt
(MINPACK via scipy) refines the best few. Positive parameters are fitted
in log space, so LM never leaves the physical domain.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import least_squares

from .core import FitError, FitResult

MAX_GRID = 200_000


@dataclass(frozen=True)
class Param:
    """Fit parameter.

    ``start`` is either a scalar initial value or a (lo, hi) search range.
    ``positive`` parameters are searched and refined in log space.
    """

    name: str
    start: float | tuple[float, float]
    positive: bool = True

    def grid(self, per_decade: int) -> np.ndarray:
        if np.isscalar(self.start):
            return np.array([float(self.start)])
        lo, hi = self.start
        if self.positive:
            if not 0 < lo <= hi:
                raise FitError(f"bad search range for {self.name}: ({lo}, {hi})")
            n = max(2, int(math.ceil(per_decade * math.log10(hi / lo))) + 1)
            return np.geomspace(lo, hi, n)
        return np.linspace(lo, hi, max(2, per_decade + 1))


def _grid_costs(model, x, y, w, grids: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    mesh = np.array(list(itertools.product(*grids)))
    costs = np.empty(len(mesh))
    chunk = max(1, 2_000_000 // max(len(x), 1))
    for i in range(0, len(mesh), chunk):
        block = mesh[i : i + chunk]
        with np.errstate(all="ignore"):
            pred = model(x[None, :], *[block[:, k : k + 1] for k in range(block.shape[1])])
        r = (np.broadcast_to(pred, (len(block), len(x))) - y[None, :]) * w[None, :]
        c = np.sum(r * r, axis=1)
        costs[i : i + chunk] = np.where(np.isfinite(c), c, np.inf)
    return mesh, costs


def least_squares_fit(
    model: Callable,
    x,
    y,
    params: Sequence[Param],
    sigma=None,
    absolute_sigma: bool = True,
    per_decade: int = 8,
    n_starts: int = 3,
    xtol: float = 1e-10,
    model_name: str = "",
) -> FitResult:
    """Fit ``y ~ model(x, *p)``.

    Parameters
    ----------
    model : callable
        ``model(x, *p)``; must broadcast over array-valued parameters.
    x, y : array_like
    params : sequence of Param
    sigma : array_like, optional
        Per-point 1-sigma errors. Treated as absolute unless
        ``absolute_sigma`` is False; without sigma the covariance is
        scaled by the reduced chi-square.

    Returns
    -------
    FitResult
        ``converged`` is False when LM stops for a reason other than one of
        its tolerance tests, or returns non-finite values.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise FitError("x and y must be 1-D arrays of equal length")
    npar = len(params)
    if len(x) < npar:
        raise FitError(f"{len(x)} points cannot determine {npar} parameters")
    if sigma is None:
        w = np.ones_like(y)
    else:
        sigma = np.broadcast_to(np.asarray(sigma, dtype=float), y.shape)
        if np.any(sigma <= 0):
            raise FitError("sigma must be > 0")
        w = 1.0 / sigma
    pos = np.array([p.positive for p in params])

    grids = [p.grid(per_decade) for p in params]
    size = math.prod(len(g) for g in grids)
    while size > MAX_GRID:
        per_decade = max(1, per_decade // 2)
        grids = [p.grid(per_decade) for p in params]
        new = math.prod(len(g) for g in grids)
        if new == size:
            break
        size = new
    mesh, costs = _grid_costs(model, x, y, w, grids)
    order = np.argsort(costs, kind="stable")
    starts = [mesh[i] for i in order[:n_starts] if np.isfinite(costs[i])]
    if not starts:
        raise FitError("model is not finite anywhere on the start grid")

    def to_theta(p):
        return np.where(pos, np.log(np.where(pos, p, 1.0)), p)

    def from_theta(t):
        return np.where(pos, np.exp(np.where(pos, t, 0.0)), t)

    def resid(theta):
        p = from_theta(theta)
        with np.errstate(all="ignore"):
            r = (model(x, *p) - y) * w
        r = np.broadcast_to(r, y.shape)
        return np.where(np.isfinite(r), r, 1e150)

    best = None
    for s in starts:
        try:
            res = least_squares(
                resid, to_theta(s), method="lm", xtol=xtol, ftol=1e-14, gtol=1e-14,
                max_nfev=1000 * (npar + 1),
            )
        except (ValueError, FloatingPointError):
            continue
        if best is None or res.cost < best.cost:
            best = res
    if best is None:
        raise FitError("all refinements failed")

    p = from_theta(best.x)
    r = best.fun
    rss_w = float(r @ r)
    dof = len(x) - npar
    J = best.jac
    # pseudo-inverse through SVD, like scipy.optimize.curve_fit
    _, s, VT = np.linalg.svd(J, full_matrices=False)
    thresh = np.finfo(float).eps * max(J.shape) * (s[0] if len(s) else 0.0)
    keep = s > thresh
    cov_t = (VT[keep].T / s[keep] ** 2) @ VT[keep]
    if sigma is None or not absolute_sigma:
        cov_t = cov_t * (rss_w / dof if dof > 0 else np.inf)
    D = np.where(pos, p, 1.0)
    cov = cov_t * np.outer(D, D)
    errs = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    if not np.all(keep):
        errs = np.where(np.isfinite(errs), errs, np.inf)
    converged = bool(best.status > 0 and np.all(np.isfinite(p)))
    rss = float(np.sum((np.asarray(model(x, *p)) - y) ** 2))
    return FitResult(
        names=tuple(pp.name for pp in params),
        values=tuple(float(v) for v in p),
        errors=tuple(float(e) for e in errs),
        rss=rss,
        iterations=int(best.nfev),
        converged=converged,
        model=model_name,
        info={"weighted_rss": rss_w, "dof": dof, "status": int(best.status)},
    )
