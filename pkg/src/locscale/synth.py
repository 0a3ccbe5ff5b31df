"""Synthetic panels and the Monte-Carlo harness.

Every replication draws from its own generator seeded by ``(seed, rep)``,
so replications can run in any order or in parallel and still reproduce.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .errors import LocScaleError
from .kernel import EPANECHNIKOV, KernelSpec
from .model import (
    BASELINE,
    Bandwidths,
    FitOptions,
    LocationScale,
    SpectraPanel,
    initial_curve,
    multi_step_fit,
    update_curve,
)

log = logging.getLogger(__name__)

# (alpha, beta) of the 30 simulated individuals; individual 1 is the baseline
DEFAULT_PARAMS = (
    (0.0, 1.0), (0.2, 0.2), (0.4, 0.5), (0.6, 1.5), (0.8, 2.0),
    (1.0, 1.0), (0.0, 0.2), (0.2, 0.5), (0.4, 1.5), (0.6, 2.0),
    (0.8, 1.0), (1.0, 0.2), (0.0, 0.5), (0.2, 1.5), (0.4, 2.0),
    (0.6, 1.0), (0.8, 0.2), (1.0, 0.5), (0.0, 1.5), (0.2, 2.0),
    (0.4, 1.0), (0.6, 0.2), (0.8, 0.5), (1.0, 1.5), (0.0, 2.0),
    (0.2, 1.0), (0.4, 0.2), (0.6, 0.5), (0.8, 1.5), (1.0, 2.0),
)


def default_params(n=30):
    """The first `n` rows of the simulated parameter table, cycling if ``n > 30``."""
    return tuple(LocationScale(*DEFAULT_PARAMS[i % len(DEFAULT_PARAMS)]) for i in range(n))


# -- curves ------------------------------------------------------------------


@dataclass(frozen=True)
class Linear:
    intercept: float = 0.0
    slope: float = 1.0

    def __call__(self, x):
        return self.intercept + self.slope * np.asarray(x, dtype=float)

    def second_derivative(self, x):
        return np.zeros_like(np.asarray(x, dtype=float))


@dataclass(frozen=True)
class SineMix:
    """``offset + sum_k amp_k * sin(2 pi freq_k x)``.

    The default is ``2 + sin(2 pi x) + 0.5 sin(6 pi x)``.
    """

    offset: float = 2.0
    terms: tuple = ((1.0, 1.0), (0.5, 3.0))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = np.full_like(x, self.offset)
        for amp, freq in self.terms:
            out = out + amp * np.sin(2 * np.pi * freq * x)
        return out

    def second_derivative(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for amp, freq in self.terms:
            w = 2 * np.pi * freq
            out = out - amp * w * w * np.sin(w * x)
        return out


@dataclass(frozen=True)
class Polynomial:
    """Polynomial with coefficients in increasing degree order."""

    coeffs: tuple = (0.0, 0.0, 1.0)

    def __call__(self, x):
        return np.polynomial.polynomial.polyval(np.asarray(x, dtype=float), self.coeffs)

    def second_derivative(self, x):
        d2 = np.polynomial.polynomial.polyder(self.coeffs, 2)
        return np.polynomial.polynomial.polyval(np.asarray(x, dtype=float), d2) * np.ones_like(x, dtype=float)


@dataclass(frozen=True)
class TabulatedCurve:
    """A curve given by (x, m) knots, linearly interpolated."""

    x: tuple
    m: tuple

    def __post_init__(self):
        if len(self.x) != len(self.m) or len(self.x) < 2:
            raise ValueError("a tabulated curve needs at least two matching (x, m) knots")
        if np.any(np.diff(self.x) <= 0):
            raise ValueError("tabulated curve knots must be strictly increasing")

    def __call__(self, x):
        return np.interp(np.asarray(x, dtype=float), self.x, self.m)

    def second_derivative(self, x):
        raise NotImplementedError("a tabulated curve has no analytic second derivative")


# -- designs -----------------------------------------------------------------


@dataclass(frozen=True)
class EquallySpaced:
    lo: float = 0.0
    hi: float = 1.0
    fixed = True

    def sample(self, T, rng):
        return np.linspace(self.lo, self.hi, T)

    def density(self, x):
        return 1.0 / (self.hi - self.lo)


@dataclass(frozen=True)
class UniformRandom:
    lo: float = 0.0
    hi: float = 1.0
    fixed = False

    def sample(self, T, rng):
        return np.sort(rng.uniform(self.lo, self.hi, T))

    def density(self, x):
        return 1.0 / (self.hi - self.lo)


@dataclass(frozen=True)
class SimConfig:
    n: int = 30
    T: int = 2000
    sigma: float = 0.25
    curve: object = field(default_factory=SineMix)
    params: tuple = None
    design: object = field(default_factory=EquallySpaced)
    seed: int = 0
    replications: int = 100

    def __post_init__(self):
        params = default_params(self.n) if self.params is None else tuple(LocationScale(*p) for p in self.params)
        object.__setattr__(self, "params", params)
        if self.n < 1:
            raise ValueError("n must be at least 1")
        if self.T < 3:
            raise ValueError("T must be at least 3")
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        if len(params) != self.n:
            raise ValueError(f"expected {self.n} parameter pairs, got {len(params)}")
        if tuple(params[0]) != tuple(BASELINE):
            raise ValueError("the first individual must have alpha = 0, beta = 1")


def _rng(config, rep, stream=0):
    return np.random.default_rng(np.random.SeedSequence([config.seed, rep, stream]))


def sample_design(config: SimConfig, rep: int = 0):
    """The baseline design of replication `rep`."""
    return config.design.sample(config.T, _rng(config, rep))


def generate(config: SimConfig, rep: int = 0, stream: int = 0) -> SpectraPanel:
    """Draw replication `rep`: ``y_it = alpha_i + beta_i m(x_it) + sigma eps_it``."""
    rng = _rng(config, rep, stream)
    if config.design.fixed:
        xs = [config.design.sample(config.T, rng)] * config.n
    else:
        xs = [config.design.sample(config.T, rng) for _ in range(config.n)]
    eps = rng.standard_normal((config.n, config.T))
    ys = [a + b * config.curve(x) + config.sigma * e for (a, b), x, e in zip(config.params, xs, eps)]
    return SpectraPanel(xs, ys)


def baseline_draws(config: SimConfig, replications: int):
    """Baseline-individual responses for `replications` draws, one row each."""
    return np.vstack([generate(config, r).y[0] for r in range(replications)])


# -- Monte Carlo -------------------------------------------------------------


@dataclass
class MCResult:
    """Raw per-replication outcomes plus the summaries derived from them.

    Array layouts (R = successful replications):

    - ``estimates``: (R, |h|, |h*|, n, 2) fitted (alpha, beta)
    - ``mse_initial``: (R, |h|) MSE of the baseline-only curve
    - ``mse_updated``: (R, |h|, |h*|) MSE of the final curve
    - ``mse_oracle``: (R, |oracle grid|) MSE on the equal-parameter dataset
    - ``mse_known``: (R, |h*|) MSE of a pooled smooth of the same data with the
      true parameters plugged in
    """

    h_grid: np.ndarray
    hstar_grid: np.ndarray
    oracle_grid: np.ndarray
    true_params: np.ndarray
    estimates: np.ndarray
    mse_initial: np.ndarray
    mse_updated: np.ndarray
    mse_oracle: np.ndarray
    mse_known: np.ndarray
    converged: np.ndarray
    failed: list = field(default_factory=list)

    @property
    def replications(self):
        return self.estimates.shape[0]

    def _se(self, a):
        return a.std(axis=0, ddof=1) / np.sqrt(a.shape[0])

    @property
    def curve_mse_initial(self):
        return self.mse_initial.mean(axis=0)

    @property
    def curve_mse_initial_se(self):
        return self._se(self.mse_initial)

    @property
    def curve_mse_updated(self):
        return self.mse_updated.mean(axis=0)

    @property
    def curve_mse_updated_se(self):
        return self._se(self.mse_updated)

    @property
    def oracle_mse(self):
        return self.mse_oracle.mean(axis=0)

    @property
    def oracle_mse_se(self):
        return self._se(self.mse_oracle)

    @property
    def known_param_mse(self):
        return self.mse_known.mean(axis=0)

    @property
    def known_param_mse_se(self):
        return self._se(self.mse_known)

    @property
    def param_mean(self):
        return self.estimates.mean(axis=0)

    @property
    def param_sd(self):
        return self.estimates.std(axis=0, ddof=1)

    @property
    def param_mean_se(self):
        return self._se(self.estimates)

    @property
    def param_rmse(self):
        err = self.estimates - self.true_params
        return np.sqrt((err**2).mean(axis=0))

    @property
    def param_rmse_se(self):
        # delta method on the mean squared error
        sq = (self.estimates - self.true_params) ** 2
        rmse = np.sqrt(sq.mean(axis=0))
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(rmse > 0, self._se(sq) / (2 * rmse), 0.0)

    def best_updated(self):
        """Grid indices (ih, ihs) of the smallest mean MSE of the final curve."""
        return np.unravel_index(np.argmin(self.curve_mse_updated), self.curve_mse_updated.shape)


def _one_replication(config, kernel, h_grid, hstar_grid, oracle_grid, options, rep):
    panel = generate(config, rep)
    pts = panel.baseline_x
    truth = config.curve(pts)
    H, S = len(h_grid), len(hstar_grid)
    est = np.empty((H, S, config.n, 2))
    mse_upd = np.empty((H, S))
    conv = np.empty((H, S), dtype=bool)
    mse_init = np.empty(H)
    for a, h in enumerate(h_grid):
        m_tilde = initial_curve(panel, kernel, h, pts)
        mse_init[a] = np.mean((m_tilde.values - truth) ** 2)
        for b, hs in enumerate(hstar_grid):
            fit = multi_step_fit(panel, kernel, Bandwidths(h, hs), options)
            est[a, b, :, 0] = fit.alpha
            est[a, b, :, 1] = fit.beta
            mse_upd[a, b] = np.mean((fit.curve.values - truth) ** 2)
            conv[a, b] = fit.converged
    mse_known = np.array(
        [np.mean((update_curve(panel, config.params, kernel, hs, pts).values - truth) ** 2) for hs in hstar_grid]
    )
    equal = replace(config, params=(BASELINE,) * config.n)
    eq_panel = generate(equal, rep, stream=1)
    eq_truth = config.curve(eq_panel.baseline_x)
    mse_oracle = np.array(
        [
            np.mean((update_curve(eq_panel, equal.params, kernel, hs, eq_panel.baseline_x).values - eq_truth) ** 2)
            for hs in oracle_grid
        ]
    )
    return est, mse_init, mse_upd, mse_oracle, mse_known, conv


def run_mc(
    config: SimConfig,
    h_grid: Sequence[float],
    hstar_grid: Sequence[float],
    options: FitOptions = FitOptions(),
    kernel: KernelSpec = EPANECHNIKOV,
    oracle_grid: Optional[Sequence[float]] = None,
    threads: int = 1,
    replications: Optional[int] = None,
) -> MCResult:
    """Replicate the simulation design over a bandwidth grid.

    Each replication fits the baseline-only curve for every ``h``, the full
    procedure for every ``(h, h*)``, and two reference smooths: the pooled fit
    with the true parameters on the same data, and an ordinary pooled fit on
    an independent dataset where every individual has ``alpha = 0, beta = 1``
    (the known-parameters oracle, over `oracle_grid`, default `hstar_grid`).

    Replications that raise a package error are skipped and listed in
    ``MCResult.failed``. Results do not depend on `threads`.
    """
    h_grid = np.asarray(h_grid, dtype=float)
    hstar_grid = np.asarray(hstar_grid, dtype=float)
    oracle_grid = hstar_grid if oracle_grid is None else np.asarray(oracle_grid, dtype=float)
    reps = config.replications if replications is None else replications

    def work(rep):
        try:
            return _one_replication(config, kernel, h_grid, hstar_grid, oracle_grid, options, rep)
        except LocScaleError as exc:
            log.warning("replication %d failed: %s", rep, exc)
            return None

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(work, range(reps)))
    else:
        outcomes = [work(r) for r in range(reps)]

    failed = [r for r, o in enumerate(outcomes) if o is None]
    good = [o for o in outcomes if o is not None]
    if not good:
        raise LocScaleError("every Monte-Carlo replication failed")
    est, mse_init, mse_upd, mse_oracle, mse_known, conv = (np.stack(parts) for parts in zip(*good))
    return MCResult(
        h_grid=h_grid,
        hstar_grid=hstar_grid,
        oracle_grid=oracle_grid,
        true_params=np.array(config.params, dtype=float),
        estimates=est,
        mse_initial=mse_init,
        mse_updated=mse_upd,
        mse_oracle=mse_oracle,
        mse_known=mse_known,
        converged=conv,
        failed=failed,
    )


# -- config I/O --------------------------------------------------------------


def curve_from_dict(spec):
    kind = spec.get("type", "sinemix").lower()
    if kind == "linear":
        return Linear(float(spec.get("intercept", 0.0)), float(spec.get("slope", 1.0)))
    if kind == "sinemix":
        terms = spec.get("terms", SineMix.terms)
        return SineMix(float(spec.get("offset", 2.0)), tuple((float(a), float(f)) for a, f in terms))
    if kind == "polynomial":
        return Polynomial(tuple(float(c) for c in spec["coeffs"]))
    if kind == "tabulated":
        return TabulatedCurve(tuple(map(float, spec["x"])), tuple(map(float, spec["m"])))
    raise ValueError(f"unknown curve type {kind!r}")


def design_from_dict(spec):
    kind = spec.get("type", "equally_spaced").lower()
    lo, hi = float(spec.get("lo", 0.0)), float(spec.get("hi", 1.0))
    if not hi > lo:
        raise ValueError("design needs hi > lo")
    if kind == "equally_spaced":
        return EquallySpaced(lo, hi)
    if kind == "uniform_random":
        return UniformRandom(lo, hi)
    raise ValueError(f"unknown design type {kind!r}")


def sim_config_from_dict(spec: dict) -> SimConfig:
    """Build a :class:`SimConfig` from a JSON-style mapping.

    Recognised keys: ``n, T, sigma, seed, replications``, ``curve`` and
    ``design`` (objects with a ``type`` field) and ``params`` (a list of
    ``[alpha, beta]`` pairs or the string ``"default"``).
    """
    n = int(spec.get("n", 30))
    params = spec.get("params", "default")
    params = default_params(n) if params == "default" else tuple(tuple(map(float, p)) for p in params)
    return SimConfig(
        n=n,
        T=int(spec.get("T", 2000)),
        sigma=float(spec.get("sigma", 0.25)),
        curve=curve_from_dict(spec.get("curve", {})),
        params=params,
        design=design_from_dict(spec.get("design", {})),
        seed=int(spec.get("seed", 0)),
        replications=int(spec.get("replications", 100)),
    )
