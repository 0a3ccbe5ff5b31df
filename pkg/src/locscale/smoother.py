"""Local linear smoothing on a single series and on a pooled, weighted panel.

The estimate at ``x0`` is

    sum_t w_t(x0) y_t / sum_t w_t(x0),
    w_t(x0) = K_h(x_t - x0) * (S_2 - (x_t - x0) S_1),
    S_k     = sum_t K_h(x_t - x0) (x_t - x0)**k,

with ``K_h(u) = K(u / h) / h``. The pooled version multiplies each kernel
term by a per-individual weight (the squared scale estimate), which makes it
an observation-weighted local linear fit on the concatenated data.

Inputs are scanned in sorted order so that each evaluation point only
touches the points inside its kernel window.
"""

import threading
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .errors import AllZeroWeights, EmptyWindow, OutOfRange
from .kernel import EPANECHNIKOV, KernelSpec, eval_kernel

# relative floor on S0*S2 - S1**2, measured against S0**2 * h**2
DENOMINATOR_FLOOR = 1e-12
# max entries of the (eval points x window) work arrays per chunk
_CHUNK_ENTRIES = 2_000_000
_WINDOW_SLACK = 1e-9


@dataclass(frozen=True)
class SmoothingPlan:
    kernel: KernelSpec
    bandwidth: float
    eval_points: np.ndarray

    def __init__(self, kernel=EPANECHNIKOV, bandwidth=1.0, eval_points=()):
        pts = np.asarray(eval_points, dtype=float).ravel()
        bw = float(bandwidth)
        if not np.isfinite(bw) or bw <= 0:
            raise ValueError(f"bandwidth must be positive and finite, got {bandwidth!r}")
        if pts.size == 0:
            raise ValueError("at least one evaluation point is required")
        if not np.all(np.isfinite(pts)):
            raise ValueError("evaluation points must be finite")
        if np.any(np.diff(pts) < 0):
            raise ValueError("evaluation points must be nondecreasing")
        pts.setflags(write=False)
        object.__setattr__(self, "kernel", kernel)
        object.__setattr__(self, "bandwidth", bw)
        object.__setattr__(self, "eval_points", pts)


@dataclass(frozen=True)
class CurveEstimate:
    """Fitted curve values on a grid, plus the kernel mass seen at each point."""

    eval_points: np.ndarray
    values: np.ndarray
    effective_count: np.ndarray = field(default=None)

    def __post_init__(self):
        pts = np.asarray(self.eval_points, dtype=float)
        vals = np.asarray(self.values, dtype=float)
        if pts.shape != vals.shape:
            raise ValueError("eval_points and values must have the same length")
        if not np.all(np.isfinite(vals)):
            raise ValueError("curve values must be finite")
        count = self.effective_count
        count = np.full(pts.shape, np.nan) if count is None else np.asarray(count, dtype=float)
        object.__setattr__(self, "eval_points", pts)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "effective_count", count)

    def __call__(self, x):
        return evaluate_curve(self, x)


def evaluate_curve(curve: CurveEstimate, x, rtol=1e-12):
    """Values of `curve` at `x`, with piecewise-linear interpolation between grid points.

    An `x` identical to the curve's own grid returns the stored values
    untouched. Requests outside the grid raise :class:`OutOfRange`.
    """
    x = np.asarray(x, dtype=float)
    pts = curve.eval_points
    if x.shape == pts.shape and np.array_equal(x, pts):
        return curve.values.copy()
    lo, hi = pts[0], pts[-1]
    slack = rtol * max(abs(lo), abs(hi), hi - lo, 1.0)
    if x.size and (x.min() < lo - slack or x.max() > hi + slack):
        raise OutOfRange(
            f"requested points span [{x.min():.6g}, {x.max():.6g}] but the curve "
            f"is only available on [{lo:.6g}, {hi:.6g}]"
        )
    return np.interp(x, pts, curve.values)


def within_curve(curve: CurveEstimate, x, rtol=1e-12):
    """Boolean mask of the points of `x` inside the curve's grid range."""
    x = np.asarray(x, dtype=float)
    lo, hi = curve.eval_points[0], curve.eval_points[-1]
    slack = rtol * max(abs(lo), abs(hi), hi - lo, 1.0)
    return (x >= lo - slack) & (x <= hi + slack)


def _sorted(x, *others):
    x = np.asarray(x, dtype=float)
    if np.all(np.diff(x) >= 0):
        return (x,) + tuple(np.asarray(o, dtype=float) for o in others)
    order = np.argsort(x, kind="stable")
    return (x[order],) + tuple(np.asarray(o, dtype=float)[order] for o in others)


def _window_chunks(x, x_eval, h):
    """Yield (rows, idx, mask, d) for chunks of evaluation points."""
    reach = h * (1.0 + _WINDOW_SLACK)
    lo = np.searchsorted(x, x_eval - reach, side="left")
    hi = np.searchsorted(x, x_eval + reach, side="right")
    counts = hi - lo
    width = max(int(counts.max()), 1) if counts.size else 1
    step = max(1, _CHUNK_ENTRIES // width)
    offsets = np.arange(width)
    last = max(len(x) - 1, 0)
    for start in range(0, len(x_eval), step):
        rows = slice(start, min(start + step, len(x_eval)))
        mask = offsets[None, :] < counts[rows, None]
        idx = np.minimum(lo[rows, None] + offsets[None, :], last)
        d = x[idx] - x_eval[rows, None]
        yield rows, idx, mask, d


def _local_linear_weights(x, w, plan):
    """Raw weights and sums for every evaluation point, chunk by chunk.

    Yields (rows, idx, mask, omega, s0, s1, s2) where `omega` holds the raw
    local-linear weights on the gathered window (zero outside it).
    """
    h = plan.bandwidth
    for rows, idx, mask, d in _window_chunks(x, plan.eval_points, h):
        k = eval_kernel(plan.kernel, d / h) / h
        k = np.where(mask, k, 0.0)
        if w is not None:
            k = k * w[idx]
        s0 = k.sum(axis=1)
        s1 = (k * d).sum(axis=1)
        s2 = (k * d * d).sum(axis=1)
        omega = k * (s2[:, None] - d * s1[:, None])
        yield rows, idx, mask, omega, s0, s1, s2


def _check_denominator(den, s0, plan, rows):
    floor = DENOMINATOR_FLOOR * s0 * s0 * plan.bandwidth**2
    bad = ~(den > floor) | (s0 <= 0)
    if np.any(bad):
        pts = plan.eval_points[rows][bad]
        raise EmptyWindow(pts, plan.bandwidth)


def _operator(x, w, plan):
    n_eval = len(plan.eval_points)
    data, cols, counts = [], [], np.zeros(n_eval, dtype=np.int64)
    s0_all = np.empty(n_eval)
    for rows, idx, mask, omega, s0, _, _ in _local_linear_weights(x, w, plan):
        den = omega.sum(axis=1)
        _check_denominator(den, s0, plan, rows)
        data.append((omega / den[:, None])[mask])
        cols.append(idx[mask])
        counts[rows] = mask.sum(axis=1)
        s0_all[rows] = s0
    indptr = np.concatenate([[0], np.cumsum(counts)])
    mat = sparse.csr_matrix(
        (np.concatenate(data), np.concatenate(cols), indptr), shape=(n_eval, len(x))
    )
    return mat, s0_all


class _OperatorCache:
    """Small LRU of smoother matrices keyed by the full content of the design."""

    def __init__(self, maxsize=32):
        self.maxsize = maxsize
        self._store = OrderedDict()
        self._lock = threading.Lock()

    def get(self, x, plan):
        key = (x.tobytes(), plan.kernel, plan.bandwidth, plan.eval_points.tobytes())
        with self._lock:
            hit = self._store.get(key)
            if hit is not None:
                self._store.move_to_end(key)
                return hit
        value = _operator(x, None, plan)
        with self._lock:
            self._store[key] = value
            if len(self._store) > self.maxsize:
                self._store.popitem(last=False)
        return value

    def clear(self):
        with self._lock:
            self._store.clear()


_cache = _OperatorCache()


def smoother_matrix(x, plan: SmoothingPlan):
    """Sparse matrix ``L`` with ``L @ y`` equal to the local linear fit of y on sorted `x`.

    Results are cached on the content of (x, plan), so repeated fits on a
    fixed design (registered panels, Monte-Carlo replications) reuse the same
    weights. Two threads missing on the same key both compute it; the
    results are identical.
    """
    x = np.ascontiguousarray(x, dtype=float)
    if np.any(np.diff(x) < 0):
        raise ValueError("smoother_matrix requires sorted x")
    return _cache.get(x, plan)


def _validate_series(x, y):
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.shape != y.shape:
        raise ValueError("x and y must have the same length")
    if x.size < 2:
        raise ValueError("at least two observations are required")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("x and y must be finite")
    return x, y


def local_linear_fit(x, y, plan: SmoothingPlan) -> CurveEstimate:
    """Local linear regression of `y` on `x` at ``plan.eval_points``.

    Parameters
    ----------
    x, y : array-like
        The design and the responses; need not be sorted.
    plan : SmoothingPlan
        Kernel, bandwidth and evaluation grid.

    Returns
    -------
    CurveEstimate

    Raises
    ------
    EmptyWindow
        If the kernel window of some evaluation point holds too little data
        for a line to be fitted.
    """
    x, y = _validate_series(x, y)
    x, y = _sorted(x, y)
    mat, s0 = smoother_matrix(x, plan)
    return CurveEstimate(plan.eval_points, mat @ y, s0)


def pooled_weighted_fit(panel_x, panel_ystar, weights_sq, plan: SmoothingPlan) -> CurveEstimate:
    """Pooled local linear fit of rescaled responses with per-individual weights.

    Each individual ``i`` contributes its points with kernel weights scaled
    by ``weights_sq[i]``; the window sums S_1, S_2 are the weighted totals
    across individuals. `panel_x` and `panel_ystar` are sequences of rows,
    possibly of unequal length.

    When every row shares the same design the fit collapses to a single
    series (the weighted mean response at each design point), which gives
    identical values at a fraction of the cost.
    """
    rows_x = [np.asarray(r, dtype=float).ravel() for r in panel_x]
    rows_y = [np.asarray(r, dtype=float).ravel() for r in panel_ystar]
    wsq = np.asarray(weights_sq, dtype=float).ravel()
    if not (len(rows_x) == len(rows_y) == len(wsq)):
        raise ValueError("panel_x, panel_ystar and weights_sq must have one entry per individual")
    for rx, ry in zip(rows_x, rows_y):
        _validate_series(rx, ry)
    if np.any(wsq < 0) or not np.all(np.isfinite(wsq)):
        raise ValueError("weights must be finite and nonnegative")
    if not np.any(wsq > 0):
        raise AllZeroWeights("every individual has zero weight")

    keep = wsq > 0
    rows_x = [r for r, k in zip(rows_x, keep) if k]
    rows_y = [r for r, k in zip(rows_y, keep) if k]
    wsq = wsq[keep]

    first = rows_x[0]
    if all(r.shape == first.shape and np.array_equal(r, first) for r in rows_x[1:]):
        ybar = np.average(np.vstack(rows_y), axis=0, weights=wsq)
        x, ybar = _sorted(first, ybar)
        mat, s0 = smoother_matrix(x, plan)
        return CurveEstimate(plan.eval_points, mat @ ybar, s0 * wsq.sum())

    x = np.concatenate(rows_x)
    y = np.concatenate(rows_y)
    w = np.concatenate([np.full(len(r), wi) for r, wi in zip(rows_x, wsq)])
    x, y, w = _sorted(x, y, w)
    values = np.empty(len(plan.eval_points))
    s0_all = np.empty(len(plan.eval_points))
    for rows, idx, mask, omega, s0, _, _ in _local_linear_weights(x, w, plan):
        den = omega.sum(axis=1)
        _check_denominator(den, s0, plan, rows)
        values[rows] = (omega * y[idx]).sum(axis=1) / den
        s0_all[rows] = s0
    return CurveEstimate(plan.eval_points, values, s0_all)


def weight_diagnostics(x, plan: SmoothingPlan, x0: float, obs_weights=None):
    """Raw local-linear weights at a single point `x0`, in the order of `x`.

    `obs_weights` multiplies each kernel term, as in the pooled fit (pass the
    concatenated panel with each individual's squared scale repeated).
    Returns ``(weights, s_t1, s_t2)``; the weights are not normalised, so
    ``sum(weights * (x - x0))`` is zero up to rounding.
    """
    x = np.asarray(x, dtype=float).ravel()
    h = plan.bandwidth
    d = x - float(x0)
    k = eval_kernel(plan.kernel, d / h) / h
    if obs_weights is not None:
        k = k * np.asarray(obs_weights, dtype=float).ravel()
    s1 = float(np.sum(k * d))
    s2 = float(np.sum(k * d * d))
    return k * (s2 - d * s1), s1, s2
