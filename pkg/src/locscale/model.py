"""Joint estimation of per-individual location/scale and a shared baseline curve.

The model is ``y_it = alpha_i + beta_i * m(x_it) + noise`` with the baseline
individual pinned at ``alpha = 0, beta = 1``. Fitting alternates between
least squares for (alpha_i, beta_i) given the current curve and a pooled,
beta**2-weighted local linear smooth of the rescaled responses.
"""

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .errors import DegenerateCurve, NonFinite
from .kernel import EPANECHNIKOV, KernelSpec
from .smoother import (
    CurveEstimate,
    SmoothingPlan,
    evaluate_curve,
    local_linear_fit,
    pooled_weighted_fit,
    within_curve,
)

log = logging.getLogger(__name__)

# relative threshold on sum_t (m(x_it) - mean)**2 below which the curve is flat
DEGENERATE_VAR_RTOL = 1e-20
BETA_STABILIZER = 1e-8


class LocationScale(NamedTuple):
    alpha: float
    beta: float


BASELINE = LocationScale(0.0, 1.0)


@dataclass(frozen=True)
class Bandwidths:
    h: float
    h_star: float

    def __post_init__(self):
        for name in ("h", "h_star"):
            v = float(getattr(self, name))
            if not np.isfinite(v) or v <= 0:
                raise ValueError(f"bandwidth {name} must be positive and finite, got {v!r}")
            object.__setattr__(self, name, v)


class SpectraPanel:
    """Observed spectra for ``n`` individuals.

    Parameters
    ----------
    x, y : sequence of array-like
        One row per individual. Rows may differ in length; each ``x`` row
        must be strictly increasing with at least three points.
    ids : sequence of str, optional
        Labels, default ``"0", "1", ...``.
    baseline_index : int
        Individual whose location and scale are pinned to (0, 1).
    """

    def __init__(self, x, y, ids=None, baseline_index: int = 0):
        xs = [np.array(r, dtype=float).ravel() for r in x]
        ys = [np.array(r, dtype=float).ravel() for r in y]
        if len(xs) == 0:
            raise ValueError("a panel needs at least one individual")
        if len(xs) != len(ys):
            raise ValueError("x and y must have the same number of rows")
        ids = [str(i) for i in range(len(xs))] if ids is None else [str(i) for i in ids]
        if len(ids) != len(xs):
            raise ValueError("ids must have one entry per row")
        if len(set(ids)) != len(ids):
            raise ValueError("ids must be unique")
        for label, rx, ry in zip(ids, xs, ys):
            if rx.shape != ry.shape:
                raise ValueError(f"individual {label!r}: x and y lengths differ")
            if rx.size < 3:
                raise ValueError(f"individual {label!r}: at least 3 points are required")
            if not (np.all(np.isfinite(rx)) and np.all(np.isfinite(ry))):
                raise ValueError(f"individual {label!r}: non-finite values")
            if np.any(np.diff(rx) <= 0):
                raise ValueError(f"individual {label!r}: x must be strictly increasing")
        if not 0 <= baseline_index < len(xs):
            raise ValueError(f"baseline_index {baseline_index} out of range for {len(xs)} individuals")
        for r in xs + ys:
            r.setflags(write=False)
        self.x = xs
        self.y = ys
        self.ids = ids
        self.baseline_index = int(baseline_index)
        first = xs[0]
        self.registered = all(r.shape == first.shape and np.array_equal(r, first) for r in xs)

    @property
    def n(self):
        return len(self.x)

    @property
    def lengths(self):
        return np.array([len(r) for r in self.x])

    @property
    def baseline_x(self):
        return self.x[self.baseline_index]

    @property
    def baseline_y(self):
        return self.y[self.baseline_index]

    def subset(self, indices, baseline_index=0):
        """A new panel restricted to `indices` (in the given order)."""
        indices = list(indices)
        return SpectraPanel(
            [self.x[i] for i in indices],
            [self.y[i] for i in indices],
            ids=[self.ids[i] for i in indices],
            baseline_index=baseline_index,
        )

    def with_baseline(self, index):
        return SpectraPanel(self.x, self.y, ids=self.ids, baseline_index=index)

    def scaled(self, c):
        return SpectraPanel(self.x, [c * r for r in self.y], ids=self.ids, baseline_index=self.baseline_index)

    def __repr__(self):
        return (
            f"SpectraPanel(n={self.n}, T={sorted(set(self.lengths.tolist()))}, "
            f"baseline={self.ids[self.baseline_index]!r}, registered={self.registered})"
        )


@dataclass(frozen=True)
class FitOptions:
    tol: float = 1e-6
    max_iter: int = 20
    single_pass: bool = False
    reanchor: bool = True
    eval_points: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")


@dataclass(frozen=True)
class ModelFit:
    params: tuple
    curve: CurveEstimate
    initial_curve: CurveEstimate
    sigma2: np.ndarray
    bandwidths: Bandwidths
    iterations: int
    converged: bool
    param_path: tuple = ()
    ids: tuple = ()
    baseline_index: int = 0
    kernel: KernelSpec = field(default=EPANECHNIKOV)

    @property
    def alpha(self):
        return np.array([p.alpha for p in self.params])

    @property
    def beta(self):
        return np.array([p.beta for p in self.params])


def initial_curve(panel: SpectraPanel, kernel: KernelSpec, h: float, eval_points=None) -> CurveEstimate:
    """Local linear fit of the baseline individual alone."""
    pts = panel.baseline_x if eval_points is None else eval_points
    plan = SmoothingPlan(kernel, h, pts)
    return local_linear_fit(panel.baseline_x, panel.baseline_y, plan)


def simple_regression(m, y, index=None):
    """Intercept and slope of the least-squares line of `y` on `m`.

    Raises DegenerateCurve (tagged with `index`) when `m` is numerically flat.
    """
    mbar = m.mean()
    dm = m - mbar
    sxx = float(dm @ dm)
    scale = max(float(np.mean(m * m)), np.finfo(float).tiny)
    if not sxx > DEGENERATE_VAR_RTOL * len(m) * scale:
        raise DegenerateCurve(index)
    beta = float(dm @ y) / sxx
    alpha = float(y.mean()) - beta * mbar
    return LocationScale(alpha, beta)


def covered_points(panel: SpectraPanel, curve: CurveEstimate, i: int):
    """(x, y, m) of individual `i` restricted to the curve's grid range.

    On a registered panel this is the whole series. On ragged panels points
    beyond the evaluation grid are left out rather than extrapolated.
    """
    x, y = panel.x[i], panel.y[i]
    keep = within_curve(curve, x)
    if not keep.all():
        x, y = x[keep], y[keep]
    return x, y, evaluate_curve(curve, x)


def fit_location_scale(panel: SpectraPanel, curve: CurveEstimate):
    """Least-squares (alpha_i, beta_i) of each individual on the given curve.

    The baseline individual is returned as exactly (0, 1). Only points
    inside the curve's grid range enter each regression.
    """
    out = []
    for i in range(panel.n):
        if i == panel.baseline_index:
            out.append(BASELINE)
            continue
        _, y, m = covered_points(panel, curve, i)
        out.append(simple_regression(m, y, i))
    return out


def stabilize_betas(betas):
    """Push scale estimates away from zero while keeping their sign.

    Magnitudes below ``1e-8 * median(|beta|)`` are raised to that floor.
    """
    betas = np.asarray(betas, dtype=float)
    floor = BETA_STABILIZER * float(np.median(np.abs(betas)))
    sign = np.where(betas < 0, -1.0, 1.0)
    return sign * np.maximum(np.abs(betas), floor)


def update_curve(panel: SpectraPanel, params, kernel: KernelSpec, h_star: float, eval_points=None) -> CurveEstimate:
    """Pooled curve update treating `params` as the true location/scale values."""
    pts = panel.baseline_x if eval_points is None else eval_points
    alpha = np.array([p[0] for p in params], dtype=float)
    beta = stabilize_betas([p[1] for p in params])
    ystar = [(y - a) / b for y, a, b in zip(panel.y, alpha, beta)]
    plan = SmoothingPlan(kernel, h_star, pts)
    return pooled_weighted_fit(panel.x, ystar, beta**2, plan)


def plug_in_sigma2(panel: SpectraPanel, params, curve: CurveEstimate) -> np.ndarray:
    """Mean squared residual of each individual around ``alpha + beta * curve``."""
    out = np.empty(panel.n)
    for i in range(panel.n):
        a, b = BASELINE if i == panel.baseline_index else params[i]
        _, y, m = covered_points(panel, curve, i)
        resid = y - a - b * m
        out[i] = float(np.mean(resid * resid))
    return out


def anchor_to_baseline(panel: SpectraPanel, curve: CurveEstimate) -> CurveEstimate:
    """Affinely re-express `curve` so the baseline's least-squares fit on it is (0, 1).

    The pooled update leaves the affine frame of the curve pinned only by
    the baseline's share of the total weight, and smoothing bias makes that
    frame drift (the scale shrinks every iteration). Regressing the
    baseline's responses on the curve and applying the fitted line fixes
    the frame without changing the curve's shape.
    """
    b = panel.baseline_index
    _, y, m = covered_points(panel, curve, b)
    a, s = simple_regression(m, y, b)
    return CurveEstimate(curve.eval_points, a + s * curve.values, curve.effective_count)


def _check_finite(params, curve, iteration):
    vals = np.array([v for p in params for v in p])
    if not (np.all(np.isfinite(vals)) and np.all(np.isfinite(curve.values))):
        raise NonFinite(f"non-finite estimates at iteration {iteration}")


def multi_step_fit(
    panel: SpectraPanel,
    kernel: KernelSpec = EPANECHNIKOV,
    bw: Bandwidths = None,
    options: FitOptions = FitOptions(),
) -> ModelFit:
    """Fit location/scale parameters and the baseline curve.

    Parameters
    ----------
    panel : SpectraPanel
    kernel : KernelSpec
    bw : Bandwidths
        ``h`` smooths the baseline individual for the initial curve; ``h_star``
        is used for every pooled update. Default: the rate-based choice of
        :func:`locscale.inference.default_bandwidths`.
    options : FitOptions
        ``single_pass`` stops after the first pooled update. Otherwise the
        least-squares and pooled steps alternate until the largest
        ``|d alpha_i| + |d beta_i|`` between successive iterations drops
        below ``tol``, or ``max_iter`` iterations have run. While iterating,
        each pooled update is passed through :func:`anchor_to_baseline`
        unless ``reanchor`` is False, in which case the plain alternation
        is run (it tends to drift when the smoothing bias is not small).

    Returns
    -------
    ModelFit
        ``converged`` is False when the iteration cap was hit first; this is
        reported, not raised.
    """
    if bw is None:
        from .inference import default_bandwidths  # inference imports this module

        bw = default_bandwidths(panel)
    pts = panel.baseline_x if options.eval_points is None else np.asarray(options.eval_points, dtype=float)

    m_tilde = initial_curve(panel, kernel, bw.h, pts)
    curve = m_tilde
    prev = [BASELINE] * panel.n
    path = []
    converged = False
    iterations = 0
    for iterations in range(1, options.max_iter + 1):
        params = fit_location_scale(panel, curve)
        curve = update_curve(panel, params, kernel, bw.h_star, pts)
        if options.reanchor and not options.single_pass:
            curve = anchor_to_baseline(panel, curve)
        _check_finite(params, curve, iterations)
        change = max(abs(p.alpha - q.alpha) + abs(p.beta - q.beta) for p, q in zip(params, prev))
        path.append(change)
        prev = params
        if options.single_pass:
            converged = True
            break
        if iterations > 1 and change < options.tol:
            converged = True
            break
    if not converged:
        log.info("multi-step fit stopped at the iteration cap (%d); last change %.3g", iterations, path[-1])

    sigma2 = plug_in_sigma2(panel, params, curve)
    return ModelFit(
        params=tuple(params),
        curve=curve,
        initial_curve=m_tilde,
        sigma2=sigma2,
        bandwidths=bw,
        iterations=iterations,
        converged=converged,
        param_path=tuple(path),
        ids=tuple(panel.ids),
        baseline_index=panel.baseline_index,
        kernel=kernel,
    )


def predict(fit: ModelFit, individual: LocationScale, x_new) -> np.ndarray:
    """``alpha + beta * m_hat(x_new)``, interpolating the curve linearly."""
    a, b = individual
    return a + b * evaluate_curve(fit.curve, x_new)


def renormalize(fit: ModelFit, reference: int) -> ModelFit:
    """Re-express `fit` with individual `reference` pinned at (0, 1).

    Used to compare fits started from different baselines: if
    ``y_i = a_i + b_i m`` then with ``m' = a_r + b_r m`` the parameters become
    ``b_i' = b_i / b_r`` and ``a_i' = a_i - b_i' a_r``.
    """
    ar, br = fit.params[reference]
    params = tuple(
        LocationScale(a - (b / br) * ar, b / br) if i != reference else BASELINE
        for i, (a, b) in enumerate(fit.params)
    )
    curve = CurveEstimate(fit.curve.eval_points, ar + br * fit.curve.values, fit.curve.effective_count)
    initial = CurveEstimate(
        fit.initial_curve.eval_points, ar + br * fit.initial_curve.values, fit.initial_curve.effective_count
    )
    return ModelFit(
        params=params,
        curve=curve,
        initial_curve=initial,
        sigma2=fit.sigma2,
        bandwidths=fit.bandwidths,
        iterations=fit.iterations,
        converged=fit.converged,
        param_path=fit.param_path,
        ids=fit.ids,
        baseline_index=reference,
        kernel=fit.kernel,
    )


def baseline_sensitivity(panel: SpectraPanel, kernel: KernelSpec, bw: Bandwidths, other: int, options=FitOptions()):
    """Refit with individual `other` as baseline and compare after renormalisation.

    Returns the largest absolute differences in beta, alpha and curve values.
    """
    base = multi_step_fit(panel, kernel, bw, options)
    alt = renormalize(multi_step_fit(panel.with_baseline(other), kernel, bw, options), panel.baseline_index)
    alt_curve = evaluate_curve(alt.curve, base.curve.eval_points)
    return {
        "beta": float(np.max(np.abs(base.beta - alt.beta))),
        "alpha": float(np.max(np.abs(base.alpha - alt.alpha))),
        "curve": float(np.max(np.abs(base.curve.values - alt_curve))),
    }


def fit_to_dict(fit: ModelFit, inference: Sequence = None) -> dict:
    """JSON-ready dictionary of a fit; `inference` adds per-individual CIs."""
    out = {
        "ids": list(fit.ids),
        "alpha": fit.alpha.tolist(),
        "beta": fit.beta.tolist(),
        "sigma2": np.asarray(fit.sigma2, dtype=float).tolist(),
        "eval_points": fit.curve.eval_points.tolist(),
        "m_hat": fit.curve.values.tolist(),
        "m_tilde": fit.initial_curve.values.tolist(),
        "h": fit.bandwidths.h,
        "h_star": fit.bandwidths.h_star,
        "iterations": fit.iterations,
        "converged": fit.converged,
        "kernel": fit.kernel.family.value,
        "baseline": fit.ids[fit.baseline_index] if fit.ids else fit.baseline_index,
    }
    if inference is not None:
        out["inference"] = [
            None if inf is None else {
                "se": inf.se, "ci_lower": inf.ci_lower, "ci_upper": inf.ci_upper, "level": inf.level,
            }
            for inf in inference
        ]
    return out


def fit_to_json(fit: ModelFit, inference=None) -> str:
    return json.dumps(fit_to_dict(fit, inference), indent=2) + "\n"


def curve_to_csv(fit: ModelFit) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["x", "m_hat"])
    for x, v in zip(fit.curve.eval_points, fit.curve.values):
        writer.writerow([repr(float(x)), repr(float(v))])
    return buf.getvalue()

