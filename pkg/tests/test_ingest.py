import io

import numpy as np
import pytest

from locscale.errors import DataError, InsufficientOverlap, NonMonotonic, ParseError
from locscale.ingest import (
    RawSpectra,
    coverage,
    load_panel,
    panel_to_csv,
    parse_long,
    parse_wide,
    read_spectra,
    register,
)
from locscale.synth import SimConfig, UniformRandom, generate

LONG = """id,mz,intensity
a,3,30
a,1,10
a,2,20
b,1.5,1
b,2.5,3
b,0.5,0
"""


def test_parse_long_sorts_and_groups():
    raw = parse_long(LONG.splitlines())
    assert raw.ids == ["a", "b"]
    np.testing.assert_array_equal(raw.mz[0], [1, 2, 3])
    np.testing.assert_array_equal(raw.intensity[0], [10, 20, 30])
    np.testing.assert_array_equal(raw.mz[1], [0.5, 1.5, 2.5])


def test_parse_long_filter_and_log():
    raw = parse_long(LONG.splitlines(), mz_min=1.0, mz_max=2.5, log_transform=True)
    np.testing.assert_array_equal(raw.mz[0], [1, 2])
    np.testing.assert_allclose(raw.intensity[0], np.log1p([10, 20]))
    np.testing.assert_allclose(raw.intensity[1], np.log1p([1, 3]))
    with pytest.raises(DataError):
        parse_long(["id,mz,intensity", "a,1,-1"], log_transform=True)
    with pytest.raises(DataError):
        parse_long(LONG.splitlines(), mz_min=100)


@pytest.mark.parametrize(
    "text, line",
    [
        ("id,mz,intensity\na,1,2\na,x,3\n", 3),
        ("id,mz,intensity\na,1,2\na,2\n", 3),
        ("id,mz,intensity\na,1,nan\n", 2),
        ("name,mz,intensity\n", 1),
        ("", 1),
    ],
)
def test_parse_errors_carry_line(text, line):
    with pytest.raises(ParseError) as err:
        parse_long(text.splitlines())
    assert err.value.line == line
    assert f"line {line}" in str(err.value)


def test_duplicate_mz_is_non_monotonic():
    with pytest.raises(NonMonotonic) as err:
        parse_long(["id,mz,intensity", "q,1,2", "q,1,3"])
    assert err.value.ident == "q"


def test_parse_wide_with_missing_cells():
    raw = parse_wide(["mz,a,b", "1,10,", "2,20,5", "3,30,6", "4,40,7"])
    np.testing.assert_array_equal(raw.mz[1], [2, 3, 4])
    with pytest.raises(ParseError):
        parse_wide(["mz,a", "1,2,3"])
    with pytest.raises(ParseError):
        parse_wide(["x,a", "1,2"])


def test_read_spectra_autodetect(tmp_path):
    p = tmp_path / "w.csv"
    p.write_text("mz,a\n1,1\n2,2\n3,3\n")
    assert read_spectra(p).ids == ["a"]
    p.write_text(LONG)
    assert read_spectra(p).ids == ["a", "b"]
    assert read_spectra(io.StringIO(LONG)).ids == ["a", "b"]


def test_coverage():
    assert coverage(np.array([1.0, 5.0]), np.arange(11.0)) == pytest.approx(5 / 11)


def test_register_half_step_quadratic():
    # [DERIVED] interpolating mz**2 at the midpoint of k +- 0.5 gives k**2 + 0.25
    ref = np.arange(11.0)
    other = np.arange(-0.5, 11.0, 1.0)
    raw = RawSpectra(["r", "o"], [ref, other], [np.sin(ref), other**2])
    panel = register(raw)
    assert panel.registered
    np.testing.assert_array_equal(panel.x[0], ref)
    np.testing.assert_array_equal(panel.y[0], np.sin(ref))
    np.testing.assert_allclose(panel.y[1], ref**2 + 0.25, rtol=1e-14)


def test_register_trims_to_common_range():
    ref = np.arange(11.0)
    other = np.linspace(1.0, 10.0, 37)
    raw = RawSpectra(["r", "o"], [ref, other], [ref, 2 * other])
    panel = register(raw)
    np.testing.assert_array_equal(panel.x[1], ref[1:])
    np.testing.assert_allclose(panel.y[1], 2 * ref[1:])


def test_register_rejects_poor_overlap():
    ref = np.arange(11.0)
    raw = RawSpectra(["r", "o"], [ref, np.linspace(0, 5, 20)], [ref, np.ones(20)])
    with pytest.raises(InsufficientOverlap) as err:
        register(raw)
    assert err.value.ident == "o"
    with pytest.raises(DataError):
        register(raw, reference_id="zzz")


def test_register_shared_grid_is_identity_and_idempotent():
    panel = generate(SimConfig(n=3, T=30))
    again = register(RawSpectra.from_panel(panel))
    for a, b in zip(panel.y, again.y):
        np.testing.assert_array_equal(a, b)
    ragged = generate(SimConfig(n=3, T=200, design=UniformRandom()))
    once = register(RawSpectra.from_panel(ragged))
    twice = register(RawSpectra.from_panel(once))
    for a, b in zip(once.y, twice.y):
        np.testing.assert_array_equal(a, b)


def test_register_choice_of_baseline():
    panel = generate(SimConfig(n=3, T=30))
    out = register(RawSpectra.from_panel(panel), baseline_id="2")
    assert out.baseline_index == 2


@pytest.mark.parametrize("registered", [True, False])
def test_csv_round_trip(tmp_path, registered):
    design = None if registered else UniformRandom()
    config = SimConfig(n=3, T=40) if registered else SimConfig(n=3, T=40, design=design)
    panel = generate(config)
    p = tmp_path / "p.csv"
    p.write_text(panel_to_csv(panel))
    back = load_panel(p)
    assert back.ids == panel.ids
    for a, b in zip(panel.x + panel.y, back.x + back.y):
        np.testing.assert_array_equal(a, b)


def test_load_panel_baseline(tmp_path):
    p = tmp_path / "p.csv"
    p.write_text(panel_to_csv(generate(SimConfig(n=3, T=10))))
    assert load_panel(p, baseline_id="1").baseline_index == 1
    with pytest.raises(DataError):
        load_panel(p, baseline_id="9")


def test_three_line_file():
    raw = parse_long(["id,mz,intensity", "s,1,4", "s,2,5", "s,3,6"])
    assert raw.ids == ["s"] and len(raw.mz[0]) == 3


def test_register_midpoints_linear_exact():
    ref = np.linspace(0.0, 4.0, 5)
    other = np.linspace(-0.5, 4.5, 11)
    raw = RawSpectra(["r", "o"], [ref, other], [ref, 2.0 - 3.0 * other])
    np.testing.assert_allclose(register(raw).y[1], 2.0 - 3.0 * ref, rtol=1e-14)
