import numpy as np
import pytest

from locscale.bandwidth import CVConfig, _select, assign_folds, cv_select, fold_mspe
from locscale.errors import AllCellsInvalid, InvalidFolds
from locscale.kernel import EPANECHNIKOV
from locscale.model import Bandwidths, SpectraPanel
from locscale.synth import SimConfig, generate


def test_fold_sizes_balanced_and_deterministic():
    labels = assign_folds(23, 5, seed=3)
    counts = np.bincount(labels, minlength=5)
    assert counts.max() - counts.min() <= 1
    assert counts.sum() == 23
    np.testing.assert_array_equal(labels, assign_folds(23, 5, seed=3))
    assert not np.array_equal(labels, assign_folds(23, 5, seed=4))


def test_leave_one_out():
    labels = assign_folds(6, 6)
    assert sorted(labels.tolist()) == list(range(6))


@pytest.mark.parametrize("n, k", [(5, 1), (5, 6), (1, 2)])
def test_invalid_folds(n, k):
    with pytest.raises(InvalidFolds):
        assign_folds(n, k)


def test_fold_mspe_closed_form():
    # [DERIVED] noise-free linear training set -> the curve is exact, so the
    # held-out residual is the projection of its noise off span{1, m}
    x = np.linspace(0, 1, 100)
    m = 1.0 + 2.0 * x
    rng = np.random.default_rng(0)
    r3 = rng.normal(size=100)
    r4 = rng.normal(size=100)
    ys = [m, 0.5 + 3 * m, -1 + 0.5 * m, 2 + 1.5 * m + r3, 0.3 * m + r4]
    panel = SpectraPanel([x] * 5, ys)
    design = np.column_stack([np.ones(100), m])

    def resid_ss(r):
        coef, *_ = np.linalg.lstsq(design, r, rcond=None)
        e = r - design @ coef
        return e @ e

    got = fold_mspe(panel, [3, 4], Bandwidths(0.1, 0.05))
    assert got == pytest.approx((resid_ss(r3) + resid_ss(r4)) / 100, rel=1e-9)
    clean = panel.subset([0, 1, 2])
    assert fold_mspe(clean, [1], Bandwidths(0.1, 0.05)) == pytest.approx(0.0, abs=1e-18)


def test_fold_mspe_with_baseline_held_out():
    x = np.linspace(0, 1, 50)
    m = x * x
    panel = SpectraPanel([x] * 3, [m, 1 + 2 * m, 3 - m])
    # training baseline becomes individual 1; the test fold still fits exactly
    # up to the smoothing bias
    assert fold_mspe(panel, [0], Bandwidths(0.1, 0.05)) < 1e-5


def test_fold_mspe_rejects_empty_sides():
    panel = generate(SimConfig(n=3, T=50, seed=0))
    with pytest.raises(InvalidFolds):
        fold_mspe(panel, [], Bandwidths(0.1, 0.1))
    with pytest.raises(InvalidFolds):
        fold_mspe(panel, [0, 1, 2], Bandwidths(0.1, 0.1))


def test_select_prefers_smaller_bandwidths_on_ties():
    mspe = np.array([[2.0, 1.0], [1.0, 1.0 + 1e-15]])
    bw = _select(mspe, np.array([0.1, 0.2]), np.array([0.01, 0.02]))
    assert (bw.h, bw.h_star) == (0.1, 0.02)
    with pytest.raises(AllCellsInvalid):
        _select(np.full((2, 2), np.nan), np.array([0.1, 0.2]), np.array([0.1, 0.2]))


def test_cv_select_grid_and_invalid_cells():
    panel = generate(SimConfig(n=6, T=200, sigma=0.2, seed=1))
    # h = 0.001 has empty windows on a 200-point grid
    config = CVConfig(folds=3, h_grid=(0.001, 0.05, 0.1), hstar_grid=(0.02, 0.04), seed=2)
    report = cv_select(panel, config)
    assert np.all(np.isnan(report.mspe[0]))
    assert len(report.invalid) == 2
    assert report.selected.h in (0.05, 0.1)
    ih = config.h_grid.index(report.selected.h)
    ihs = config.hstar_grid.index(report.selected.h_star)
    assert report.mspe[ih, ihs] <= report.min_mspe * (1 + 1e-12)
    # earlier cells in (h, h*) order are strictly worse
    flat = report.mspe.ravel()
    k = ih * len(config.hstar_grid) + ihs
    assert np.all(~(flat[:k] <= report.min_mspe * (1 + 1e-12)))
    d = report.to_dict()
    assert d["mspe"][0] == [None, None]
    rows = report.mspe_csv().splitlines()
    assert rows[0] == "h_star\\h,0.001,0.05,0.1"
    assert rows[1].startswith("0.02,,")
    assert len(rows) == 3


def test_cv_all_invalid():
    panel = generate(SimConfig(n=4, T=100, seed=1))
    with pytest.raises(AllCellsInvalid):
        cv_select(panel, CVConfig(2, (0.001,), (0.001,)))


def test_cv_thread_independent():
    panel = generate(SimConfig(n=6, T=200, sigma=0.2, seed=3))
    config = CVConfig(folds=3, h_grid=(0.04, 0.08), hstar_grid=(0.02, 0.04), seed=5)
    serial = cv_select(panel, config, threads=1)
    parallel = cv_select(panel, config, threads=4)
    np.testing.assert_array_equal(serial.mspe, parallel.mspe)
    assert serial.selected == parallel.selected


def test_cv_config_validation():
    with pytest.raises(InvalidFolds):
        CVConfig(1, (0.1,), (0.1,))
    with pytest.raises(ValueError):
        CVConfig(2, (0.2, 0.1), (0.1,))
    with pytest.raises(ValueError):
        CVConfig(2, (), (0.1,))
    with pytest.raises(ValueError):
        CVConfig(2, (-0.1,), (0.1,))


def test_fold_examples():
    assert np.all(np.bincount(assign_folds(10, 5)) == 2)
    # [PAPER] 33 individuals with K = 33 is leave-one-out
    assert np.all(np.bincount(assign_folds(33, 33)) == 1)


def test_constant_test_individual_has_zero_mspe():
    panel = generate(SimConfig(n=4, T=200, sigma=0.1, seed=2))
    x = panel.x[0]
    with_const = SpectraPanel(panel.x + [x], panel.y + [np.full(len(x), 3.0)])
    assert fold_mspe(with_const, [4], Bandwidths(0.05, 0.03)) == pytest.approx(0.0, abs=1e-20)


def test_one_by_one_grid_and_exact_cell():
    panel = generate(SimConfig(n=4, T=100, sigma=0.1, seed=4))
    report = cv_select(panel, CVConfig(2, (0.1,), (0.05,)))
    assert report.selected == Bandwidths(0.1, 0.05)
    x = np.linspace(0, 1, 80)
    line = 1 + x
    exact = SpectraPanel([x] * 4, [line, 2 * line, 1 - line, 0.5 + 3 * line])
    report = cv_select(exact, CVConfig(2, (0.001, 0.1), (0.05,)))
    assert report.selected == Bandwidths(0.1, 0.05)
    assert report.min_mspe == pytest.approx(0.0, abs=1e-20)


def test_mspe_scales_quadratically():
    panel = generate(SimConfig(n=6, T=200, sigma=0.2, seed=6))
    config = CVConfig(3, (0.04, 0.08), (0.02, 0.04), seed=1)
    base = cv_select(panel, config)
    scaled = cv_select(panel.scaled(3.0), config)
    np.testing.assert_allclose(scaled.mspe, 9.0 * base.mspe, rtol=1e-8)
    assert scaled.selected == base.selected


def test_two_individual_leave_one_out():
    panel = generate(SimConfig(n=2, T=200, sigma=0.1, seed=7))
    report = cv_select(panel, CVConfig(2, (0.05,), (0.05,)))
    assert np.isfinite(report.min_mspe) and report.min_mspe >= 0
