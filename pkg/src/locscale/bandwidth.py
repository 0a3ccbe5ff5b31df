"""K-fold cross-validation of the bandwidth pair over a grid.

Individuals, not observations, are split into folds. The curve is fitted on
the training individuals (baseline = the first of them), every held-out
individual is regressed on it by least squares, and the residual sum of
squares is the prediction error for that fold.
"""

import csv
import io
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import AllCellsInvalid, InvalidFolds, LocScaleError
from .kernel import EPANECHNIKOV
from .model import Bandwidths, FitOptions, SpectraPanel, covered_points, multi_step_fit, simple_regression

log = logging.getLogger(__name__)

TIE_RTOL = 1e-12


@dataclass(frozen=True)
class CVConfig:
    folds: int
    h_grid: tuple
    hstar_grid: tuple
    seed: int = 0
    single_pass: bool = False

    def __post_init__(self):
        for name in ("h_grid", "hstar_grid"):
            g = tuple(float(v) for v in getattr(self, name))
            if not g:
                raise ValueError(f"{name} must not be empty")
            if any(not np.isfinite(v) or v <= 0 for v in g):
                raise ValueError(f"{name} must hold positive bandwidths")
            if any(b <= a for a, b in zip(g, g[1:])):
                raise ValueError(f"{name} must be strictly increasing")
            object.__setattr__(self, name, g)
        if self.folds < 2:
            raise InvalidFolds("at least two folds are required")


@dataclass
class CVReport:
    h_grid: np.ndarray
    hstar_grid: np.ndarray
    mspe: np.ndarray  # (|h|, |h*|), NaN where a fit failed
    selected: Bandwidths
    fold_assignments: np.ndarray
    invalid: list = field(default_factory=list)

    @property
    def min_mspe(self):
        return float(np.nanmin(self.mspe))

    def to_dict(self):
        return {
            "h_grid": self.h_grid.tolist(),
            "hstar_grid": self.hstar_grid.tolist(),
            "mspe": [[None if np.isnan(v) else float(v) for v in row] for row in self.mspe],
            "selected": {"h": self.selected.h, "h_star": self.selected.h_star},
            "min_mspe": self.min_mspe,
            "fold_assignments": self.fold_assignments.tolist(),
            "invalid": [{"h": h, "h_star": hs, "error": err} for h, hs, err in self.invalid],
        }

    def mspe_csv(self):
        """MSPE table with one row per h* and one column per h."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["h_star\\h"] + [repr(float(h)) for h in self.h_grid])
        for j, hs in enumerate(self.hstar_grid):
            row = self.mspe[:, j]
            writer.writerow([repr(float(hs))] + ["" if np.isnan(v) else repr(float(v)) for v in row])
        return buf.getvalue()


def assign_folds(n: int, K: int, seed: int = 0) -> np.ndarray:
    """Random fold label in ``0..K-1`` for each of `n` individuals.

    Fold sizes differ by at most one. ``K == n`` gives leave-one-out.
    """
    if n < 2:
        raise InvalidFolds("cross-validation needs at least two individuals")
    if not 2 <= K <= n:
        raise InvalidFolds(f"need 2 <= folds <= n (= {n}), got {K}")
    perm = np.random.default_rng(seed).permutation(n)
    labels = np.empty(n, dtype=int)
    labels[perm] = np.arange(n) % K
    return labels


def fold_mspe(panel: SpectraPanel, test_fold, bw: Bandwidths, kernel=EPANECHNIKOV, options=FitOptions()) -> float:
    """Prediction error of one held-out fold.

    The training panel keeps the original order, so its baseline is the
    training individual with the smallest index. The residual sum of squares
    over the fold is divided by the common series length T, or by the
    fold's total point count when the test series differ in length. Test
    points outside the trained curve's grid are left out.
    """
    test = sorted(set(int(i) for i in test_fold))
    train = [i for i in range(panel.n) if i not in set(test)]
    if not test or not train:
        raise InvalidFolds("both the test fold and its training set must be nonempty")
    fit = multi_step_fit(panel.subset(train), kernel, bw, options)
    sse = 0.0
    counts = []
    for i in test:
        _, y, m = covered_points(panel, fit.curve, i)
        a, b = simple_regression(m, y, i)
        resid = y - a - b * m
        sse += float(resid @ resid)
        counts.append(len(y))
    return sse / (counts[0] if len(set(counts)) == 1 else sum(counts))


def _select(mspe, h_grid, hstar_grid):
    valid = ~np.isnan(mspe)
    if not valid.any():
        raise AllCellsInvalid("no bandwidth pair could be fitted on every fold")
    best = np.nanmin(mspe)
    near = valid & (mspe <= best + TIE_RTOL * abs(best))
    # row-major scan of (h, h*) gives smaller h first, then smaller h*
    ih, ihs = np.argwhere(near)[0]
    return Bandwidths(float(h_grid[ih]), float(hstar_grid[ihs]))


def cv_select(panel: SpectraPanel, config: CVConfig, kernel=EPANECHNIKOV, options: FitOptions = None, threads: int = 1) -> CVReport:
    """Average fold MSPE over the bandwidth grid and pick the minimiser.

    A grid cell where some fold fails to fit is marked invalid (NaN) and
    left out of the selection. Ties within a relative ``1e-12`` go to the
    smaller ``h``, then the smaller ``h*``.
    """
    if options is None:
        options = FitOptions(single_pass=config.single_pass)
    labels = assign_folds(panel.n, config.folds, config.seed)
    folds = [np.flatnonzero(labels == k) for k in range(config.folds)]
    h_grid = np.array(config.h_grid)
    hstar_grid = np.array(config.hstar_grid)
    cells = [(a, b) for a in range(len(h_grid)) for b in range(len(hstar_grid))]

    def work(cell):
        a, b = cell
        bw = Bandwidths(h_grid[a], hstar_grid[b])
        try:
            return float(np.mean([fold_mspe(panel, f, bw, kernel, options) for f in folds])), None
        except LocScaleError as exc:
            return float("nan"), str(exc)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, cells))
    else:
        results = [work(c) for c in cells]

    mspe = np.full((len(h_grid), len(hstar_grid)), np.nan)
    invalid = []
    for (a, b), (value, err) in zip(cells, results):
        mspe[a, b] = value
        if err is not None:
            invalid.append((float(h_grid[a]), float(hstar_grid[b]), err))
            log.warning("bandwidth pair (%g, %g) invalid: %s", h_grid[a], hstar_grid[b], err)
    return CVReport(
        h_grid=h_grid,
        hstar_grid=hstar_grid,
        mspe=mspe,
        selected=_select(mspe, h_grid, hstar_grid),
        fold_assignments=labels,
        invalid=invalid,
    )
