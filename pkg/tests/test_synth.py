import numpy as np
import pytest

from locscale.model import BASELINE, FitOptions
from locscale.synth import (
    DEFAULT_PARAMS,
    EquallySpaced,
    Linear,
    Polynomial,
    SimConfig,
    SineMix,
    TabulatedCurve,
    UniformRandom,
    baseline_draws,
    generate,
    run_mc,
    sim_config_from_dict,
    default_params,
)


def test_default_parameter_grid():
    # [PAPER] 30 individuals, alpha in {0, .2, ..., 1}, beta in {1, .2, .5, 1.5, 2}
    assert len(DEFAULT_PARAMS) == 30
    assert DEFAULT_PARAMS[0] == (0.0, 1.0)
    assert {a for a, _ in DEFAULT_PARAMS} == {0.0, 0.2, 0.4, 0.6, 0.8, 1.0}
    assert {b for _, b in DEFAULT_PARAMS} == {0.2, 0.5, 1.0, 1.5, 2.0}
    assert len(set(DEFAULT_PARAMS)) == 30
    assert default_params(32)[30] == default_params(1)[0]


def test_curves():
    x = np.array([0.0, 0.25, 0.5])
    np.testing.assert_allclose(SineMix()(x), [2.0, 2.0 + 1.0 + 0.5 * np.sin(1.5 * np.pi), 2.0], atol=1e-14)
    # [DERIVED] m'' = -(2 pi)^2 sin 2 pi x - 0.5 (6 pi)^2 sin 6 pi x
    want = -(2 * np.pi) ** 2 * 1.0 - 0.5 * (6 * np.pi) ** 2 * np.sin(1.5 * np.pi)
    assert SineMix().second_derivative(np.array([0.25]))[0] == pytest.approx(want)
    assert Polynomial((1.0, 0.0, 3.0)).second_derivative(np.array([0.3]))[0] == pytest.approx(6.0)
    assert Polynomial((1.0, 2.0)).second_derivative(np.array([0.3]))[0] == 0.0
    np.testing.assert_allclose(Linear(1.0, 2.0)(x), 1.0 + 2.0 * x)
    tab = TabulatedCurve((0.0, 1.0), (0.0, 2.0))
    assert tab(np.array([0.25]))[0] == pytest.approx(0.5)
    with pytest.raises(NotImplementedError):
        tab.second_derivative(x)
    with pytest.raises(ValueError):
        TabulatedCurve((1.0, 0.0), (0.0, 1.0))


def test_generate_is_deterministic_and_stream_separated():
    config = SimConfig(n=3, T=50, seed=11)
    a = generate(config, rep=2)
    b = generate(config, rep=2)
    c = generate(config, rep=3)
    for ya, yb in zip(a.y, b.y):
        np.testing.assert_array_equal(ya, yb)
    assert not np.array_equal(a.y[1], c.y[1])
    assert not np.array_equal(a.y[1], generate(config, rep=2, stream=1).y[1])


def test_zero_noise_is_the_model():
    config = SimConfig(n=5, T=40, sigma=0.0)
    panel = generate(config)
    m = SineMix()(np.linspace(0, 1, 40))
    for (a, b), y in zip(config.params, panel.y):
        np.testing.assert_allclose(y, a + b * m, atol=1e-14)


def test_noise_moments():
    config = SimConfig(n=1, T=20_000, sigma=0.5, curve=Linear(0.0, 0.0))
    eps = generate(config).y[0]
    assert abs(eps.mean()) < 4 * 0.5 / np.sqrt(20_000)
    assert eps.std() == pytest.approx(0.5, rel=0.03)


def test_random_design_ragged_and_sorted():
    config = SimConfig(n=3, T=30, design=UniformRandom(2.0, 3.0))
    panel = generate(config)
    assert not panel.registered
    for x in panel.x:
        assert np.all(np.diff(x) > 0) and x.min() >= 2.0 and x.max() <= 3.0


def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig(n=2, params=[(0.5, 1.0), (0.0, 1.0)])
    with pytest.raises(ValueError):
        SimConfig(n=2, params=[(0.0, 1.0)])
    with pytest.raises(ValueError):
        SimConfig(sigma=-1)


def test_config_from_dict():
    config = sim_config_from_dict({
        "n": 3, "T": 100, "sigma": 0.1, "seed": 9,
        "curve": {"type": "polynomial", "coeffs": [0, 0, 1]},
        "design": {"type": "uniform_random", "lo": 0, "hi": 2},
        "params": [[0, 1], [1, 2], [2, 3]],
    })
    assert config.params[2] == (2.0, 3.0)
    assert config.curve == Polynomial((0.0, 0.0, 1.0))
    assert config.design == UniformRandom(0.0, 2.0)
    assert sim_config_from_dict({}).params == default_params(30)
    with pytest.raises(ValueError):
        sim_config_from_dict({"curve": {"type": "spline"}})


def test_baseline_draws_shape():
    config = SimConfig(n=2, T=25)
    draws = baseline_draws(config, 4)
    assert draws.shape == (4, 25)
    np.testing.assert_array_equal(draws[1], generate(config, 1).y[0])


def test_run_mc_shapes_and_thread_independence():
    config = SimConfig(n=4, T=200, sigma=0.2, replications=3)
    kw = dict(h_grid=[0.05, 0.1], hstar_grid=[0.03, 0.05, 0.07], oracle_grid=[0.02, 0.04])
    serial = run_mc(config, threads=1, **kw)
    parallel = run_mc(config, threads=3, **kw)
    assert serial.estimates.shape == (3, 2, 3, 4, 2)
    assert serial.mse_initial.shape == (3, 2)
    assert serial.mse_updated.shape == (3, 2, 3)
    assert serial.mse_oracle.shape == (3, 2)
    assert serial.mse_known.shape == (3, 3)
    for name in ("estimates", "mse_initial", "mse_updated", "mse_oracle", "mse_known"):
        np.testing.assert_array_equal(getattr(serial, name), getattr(parallel, name))
    assert np.all(serial.estimates[:, :, :, 0, :] == np.array(BASELINE))
    assert serial.param_sd.shape == (2, 3, 4, 2)
    ih, ihs = serial.best_updated()
    assert serial.curve_mse_updated[ih, ihs] == serial.curve_mse_updated.min()


def test_run_mc_noise_free_linear_is_exact():
    config = SimConfig(n=3, T=100, sigma=0.0, curve=Linear(1.0, 2.0), replications=2)
    res = run_mc(config, [0.1], [0.05], FitOptions(single_pass=True))
    np.testing.assert_allclose(res.param_rmse, 0.0, atol=1e-10)
    np.testing.assert_allclose(res.mse_updated, 0.0, atol=1e-18)
    np.testing.assert_allclose(res.mse_oracle, 0.0, atol=1e-18)


def test_equal_parameters_zero_noise_rows_identical():
    panel = generate(SimConfig(n=4, T=30, sigma=0.0, params=[(0.0, 1.0)] * 4))
    for y in panel.y[1:]:
        np.testing.assert_array_equal(y, panel.y[0])


def test_noise_mean_clt_bound():
    # [DERIVED] 1e5 standard normal draws: |mean| < 3 / sqrt(1e5)
    config = SimConfig(n=10, T=10_000, sigma=1.0, curve=Linear(0.0, 0.0), params=[(0.0, 1.0)] * 10)
    eps = np.concatenate(generate(config).y)
    assert abs(eps.mean()) < 3 * 10 ** (-2.5)
