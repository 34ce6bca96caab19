import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dtcsim.exceptions import InvalidInputError, SingularFitError
from dtcsim.propagation import (
    DIFFRACTION,
    LOS,
    REFLECTION,
    PathComponent,
    aod,
    array_response,
    fit_fi_model,
    knife_edge_loss,
    path_loss,
    synthesize_truth_channel,
    trace_paths,
    write_channel_csv,
    write_fi_json,
)
from dtcsim.scene import BaseStation, Scatterer, Scene

LAM = 299_792_458.0 / 6.025e9


def empty_scene():
    return Scene((50, 50, 10), (BaseStation((1, 1, 2)),))


def wall_scene():
    wall = Scatterer((0, 8, 0), (20, 9, 10), reflection_coefficient=1.0)
    return Scene((20, 20, 10), (BaseStation((2, 5, 2)),), (wall,))


def test_empty_scene_single_los():
    paths = trace_paths(empty_scene(), (1, 1, 2), (11, 4, 2))
    assert [p.kind for p in paths] == [LOS]
    assert paths[0].length == pytest.approx(math.hypot(10, 3), abs=1e-12)


def test_friis_in_empty_scene():
    d = 12.5
    paths = trace_paths(empty_scene(), (1, 1, 2), (1 + d, 1, 2))
    assert path_loss(paths) == pytest.approx(20 * math.log10(4 * math.pi * d / LAM), abs=1e-9)


def test_single_wall_image_reflection():
    paths = trace_paths(wall_scene(), (2, 5, 2), (12, 5, 2), max_reflection_order=1)
    refl = [p for p in paths if p.kind == REFLECTION]
    assert len(refl) == 1 and sum(p.kind == LOS for p in paths) == 1
    image = np.array([2.0, 11.0, 2.0])
    assert refl[0].length == pytest.approx(np.linalg.norm(image - [12, 5, 2]), abs=1e-9)


def test_blocked_without_other_mechanisms_is_empty():
    block = Scatterer((5, 0, 0), (6, 20, 10))
    s = Scene((20, 20, 10), (BaseStation((2, 5, 2)),), (block,))
    assert trace_paths(s, (2, 5, 2), (12, 5, 2), max_reflection_order=0, max_diffraction_order=0) == []


def test_blocked_link_gets_diffraction():
    block = Scatterer((5, 0, 0), (6, 20, 4))
    s = Scene((20, 20, 10), (BaseStation((2, 5, 2)),), (block,))
    kinds = [p.kind for p in trace_paths(s, (2, 5, 2), (12, 5, 2), max_reflection_order=0)]
    assert kinds == [DIFFRACTION]


def test_paths_sorted_by_length():
    paths = trace_paths(wall_scene(), (2, 5, 2), (12, 5, 2))
    lengths = [p.length for p in paths]
    assert lengths == sorted(lengths)


def _path(gain, length=1.0, theta=0.0, delay=0.0):
    return PathComponent(LOS, length, gain, theta, delay)


def test_incoherent_sum_of_equal_paths():
    one = path_loss([_path(1e-3)])
    two = path_loss([_path(1e-3), _path(-1e-3)])
    assert one - two == pytest.approx(10 * math.log10(2))


def test_outage_sentinel():
    assert path_loss([]) == math.inf


def test_coherent_cancellation_is_outage():
    assert path_loss([_path(1e-3), _path(-1e-3)], coherent=True) == math.inf


def test_knife_edge_zero_below_threshold():
    assert knife_edge_loss(-1.0) == 0.0
    assert knife_edge_loss(0.0) == pytest.approx(6.9 + 20 * math.log10(math.sqrt(1.01) - 0.1))


@pytest.mark.parametrize("user,expected", [((1, 1), math.pi / 4), ((0, 1), math.pi / 2), ((-1, 0), math.pi)])
def test_aod_examples(user, expected):
    assert aod((0, 0, 0), (*user, 0)) == pytest.approx(expected, abs=1e-15)


def test_aod_coincident():
    with pytest.raises(InvalidInputError):
        aod((1, 2, 0), (1, 2, 5))


def test_array_response_examples():
    np.testing.assert_allclose(array_response(0.0, 5, 0.5, 1.0), np.ones(5))
    np.testing.assert_allclose(array_response(1.2, 1, 0.5, 1.0), [1.0])
    np.testing.assert_allclose(array_response(math.pi / 2, 2, 0.5, 1.0), [1, -1], atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.floats(-math.pi, math.pi), st.integers(1, 16))
def test_array_response_norm(theta, n):
    assert np.linalg.norm(array_response(theta, n, LAM / 2, LAM)) == pytest.approx(math.sqrt(n), rel=1e-12)


def test_truth_channel_single_path_flat():
    h = synthesize_truth_channel([_path(0.3 - 0.4j, delay=1e-7)], 1, 64, 15e3, LAM, LAM / 2)
    np.testing.assert_allclose(np.abs(h), 0.5, rtol=1e-12)


def test_truth_channel_two_ray_period():
    df, dtau = 15e3, 1.0 / (15e3 * 8)  # period of 8 subcarriers
    paths = [_path(1.0, delay=0.0), _path(0.5, delay=dtau)]
    p = np.abs(synthesize_truth_channel(paths, 1, 64, df, LAM, LAM / 2)[0]) ** 2
    np.testing.assert_allclose(p[:-8], p[8:], rtol=1e-9)
    assert p.max() == pytest.approx(2.25) and p.min() == pytest.approx(0.25)


def test_truth_channel_outage_zero():
    h = synthesize_truth_channel([], 4, 12, 15e3, LAM, LAM / 2)
    assert h.shape == (4, 12) and not h.any()


def test_fi_fit_two_points():
    m = fit_fi_model([(1.0, 40.0), (10.0, 60.0)])
    assert (m.alpha, m.beta) == (pytest.approx(40.0), pytest.approx(2.0))


def test_fi_fit_exact_samples():
    d = np.linspace(1, 50, 30)
    m = fit_fi_model(np.column_stack([d, 40 + 20 * np.log10(d)]))
    assert m.alpha == pytest.approx(40) and m.beta == pytest.approx(2) and m.sigma == pytest.approx(0, abs=1e-9)


def test_fi_fit_with_shadowing(rng):
    d = rng.uniform(1, 100, 1000)
    pl = 35 + 10 * 2.5 * np.log10(d) + rng.normal(0, 4, d.size)
    m = fit_fi_model(np.column_stack([d, pl]))
    assert abs(m.beta - 2.5) < 0.1
    assert m.sigma == pytest.approx(4, abs=0.3)


def test_fi_fit_singular():
    with pytest.raises(SingularFitError):
        fit_fi_model([(5.0, 40.0), (5.0, 50.0)])


def test_fi_json(tmp_path):
    write_fi_json(tmp_path / "fi.json", {"los": fit_fi_model([(1.0, 40.0), (10.0, 60.0)])})
    doc = json.loads((tmp_path / "fi.json").read_text())
    assert doc["los"]["beta"] == pytest.approx(2.0)


def test_channel_csv(tmp_path):
    h = np.arange(6).reshape(2, 3) * (1 + 1j)
    write_channel_csv(tmp_path / "h.csv", [(0, 1, 2, h)])
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "bs,user,slot,antenna,subcarrier,re,im"
    assert len(lines) == 7 and lines[-1] == "0,1,2,1,2,5.0,5.0"
