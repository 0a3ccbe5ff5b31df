"""Asymptotic inference for the scale parameters and rate-based bandwidths."""

import warnings
from typing import NamedTuple

import numpy as np
from scipy.stats import norm

from .errors import DegenerateCurve
from .kernel import EPANECHNIKOV, KernelSpec
from .model import Bandwidths, ModelFit, SpectraPanel, covered_points
from .smoother import SmoothingPlan, smoother_matrix
from .synth import baseline_draws, sample_design


class BandwidthWindowWarning(UserWarning):
    """The initial bandwidth is outside the range where the CI is valid."""


class BetaInference(NamedTuple):
    beta_hat: float
    se: float
    ci_lower: float
    ci_upper: float
    level: float


def normal_quantile(p: float) -> float:
    return float(norm.ppf(p))


def beta_variance(panel: SpectraPanel, fit: ModelFit, i: int) -> float:
    """Plug-in asymptotic variance of ``sqrt(T) * (beta_hat_i - beta_i)``.

    Centered curve values ``W_it = m_hat(x_it) - mean_t m_hat(x_it)`` stand in for
    the unknown true curve, and the per-individual noise variances come from
    the fit's mean squared residuals.
    """
    b = panel.baseline_index
    w_i = covered_points(panel, fit.curve, i)[2]
    w_i = w_i - w_i.mean()
    w_b = covered_points(panel, fit.curve, b)[2]
    w_b = w_b - w_b.mean()
    mean_wi2 = float(np.mean(w_i * w_i))
    scale = max(float(np.mean(fit.curve.values**2)), np.finfo(float).tiny)
    if not mean_wi2 > 1e-20 * scale:
        raise DegenerateCurve(i)
    own = mean_wi2 * fit.sigma2[i] / mean_wi2**2
    borrowed = fit.beta[i] ** 2 * float(np.mean(w_b * w_b)) * fit.sigma2[b] / mean_wi2**2
    return own + borrowed


def ci_bandwidth_window(panel: SpectraPanel):
    """Bandwidth range ``range * [T**-1/2, T**-1/4]`` on the baseline design."""
    x = panel.baseline_x
    span = float(x[-1] - x[0])
    T = len(x)
    return span * T**-0.5, span * T**-0.25


def beta_ci(panel: SpectraPanel, fit: ModelFit, i: int, level: float = 0.95) -> BetaInference:
    """Normal-theory confidence interval for the scale of individual `i`.

    Warns with :class:`BandwidthWindowWarning` when the fit's initial
    bandwidth lies outside the window returned by :func:`ci_bandwidth_window`,
    because the smoothing bias is then not negligible and coverage suffers.
    """
    if i == panel.baseline_index:
        raise ValueError("the baseline individual's scale is fixed at 1 and has no interval")
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    lo, hi = ci_bandwidth_window(panel)
    h = fit.bandwidths.h
    if not lo <= h <= hi:
        warnings.warn(
            f"h = {h:.4g} lies outside [{lo:.4g}, {hi:.4g}]; interval coverage may be off",
            BandwidthWindowWarning,
            stacklevel=2,
        )
    T = len(covered_points(panel, fit.curve, i)[1])
    se = float(np.sqrt(beta_variance(panel, fit, i) / T))
    z = normal_quantile(0.5 * (1.0 + level))
    beta_hat = float(fit.beta[i])
    return BetaInference(beta_hat, se, beta_hat - z * se, beta_hat + z * se, level)


def all_beta_cis(panel, fit, level=0.95):
    """Intervals for every individual, with ``None`` for the baseline."""
    return [None if i == panel.baseline_index else beta_ci(panel, fit, i, level) for i in range(panel.n)]


def default_bandwidths(panel: SpectraPanel, c_h: float = 1.0, c_star: float = 1.0) -> Bandwidths:
    """Rate-based bandwidths ``h ~ T**(-1/3)`` and ``h* ~ (nT)**(-1/5)``.

    ``h`` is scaled by the range of the baseline design; ``h*`` by the range
    of all designs pooled. ``T`` is the baseline's length and ``nT`` the total
    number of observations.
    """
    xb = panel.baseline_x
    T = len(xb)
    h = c_h * float(xb[-1] - xb[0]) * T ** (-1.0 / 3.0)
    lo = min(float(r[0]) for r in panel.x)
    hi = max(float(r[-1]) for r in panel.x)
    total = int(panel.lengths.sum())
    h_star = c_star * (hi - lo) * total ** (-1.0 / 5.0)
    return Bandwidths(h, h_star)


class BiasProbe(NamedTuple):
    empirical_bias: float
    predicted_bias: float
    empirical_variance: float
    predicted_variance: float
    bias_se: float
    replications: int


def smoother_bias_probe(config, h: float, x0: float, replications: int, kernel: KernelSpec = EPANECHNIKOV) -> BiasProbe:
    """Monte-Carlo bias and variance of the baseline-only smoother at `x0`.

    The baseline individual of `config` (a :class:`locscale.synth.SimConfig`)
    is drawn `replications` times; the predictions are the leading terms
    ``m''(x0) mu2 h**2 / 2`` for the bias and
    ``sigma**2 nu0 / (T h f(x0))`` for the variance, with ``f`` the design
    density.
    """
    x = sample_design(config, 0)
    if not config.design.fixed:
        raise ValueError("the bias probe needs a fixed design")
    plan = SmoothingPlan(kernel, h, [x0])
    row, _ = smoother_matrix(x, plan)
    row = row.toarray().ravel()
    ys = baseline_draws(config, replications)
    est = ys @ row
    err = est - float(config.curve(np.array([x0]))[0])
    density = config.design.density(x0)
    m2 = float(config.curve.second_derivative(np.array([x0]))[0])
    return BiasProbe(
        empirical_bias=float(err.mean()),
        predicted_bias=0.5 * m2 * kernel.mu2 * h * h,
        empirical_variance=float(est.var(ddof=1)),
        predicted_variance=config.sigma**2 * kernel.nu0 / (len(x) * h * density),
        bias_se=float(err.std(ddof=1) / np.sqrt(replications)),
        replications=replications,
    )
