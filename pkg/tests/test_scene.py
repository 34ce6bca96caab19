import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dtcsim.exceptions import ConfigError, InvalidInputError
from dtcsim.scene import (
    BaseStation,
    ReceiverGrid,
    Scatterer,
    Scene,
    ScattererClass,
    build_grid,
    classify_scatterers,
    default_scene,
    load_scene,
    los_blocked,
    scene_from_dict,
    scene_to_dict,
)


def box_scene(*boxes, dims=(20, 30, 20)):
    return Scene(dims, (BaseStation((1, 1, 1)),), tuple(Scatterer(lo, hi) for lo, hi in boxes))


def test_blocked_through_box_center():
    s = box_scene(((4, 4, 4), (6, 6, 6)))
    assert los_blocked(s, (0, 5, 5), (10, 5, 5)) == 1


def test_empty_scene_never_blocks():
    s = box_scene()
    assert los_blocked(s, (0, 5, 5), (10, 5, 5)) == 0


def test_disjoint_segment_not_blocked():
    s = box_scene(((4, 4, 4), (6, 6, 6)))
    assert los_blocked(s, (0, 20, 5), (10, 20, 5)) == 0


def test_grazing_face_is_not_blocked():
    s = box_scene(((4, 4, 4), (6, 6, 6)))
    assert los_blocked(s, (0, 6, 5), (10, 6, 5)) == 0


def test_degenerate_segment_rejected():
    s = box_scene()
    with pytest.raises(InvalidInputError):
        los_blocked(s, (1, 1, 1), (1, 1, 1))


coord = st.floats(0.0, 10.0, allow_nan=False)


@settings(max_examples=60, deadline=None)
@given(st.tuples(coord, coord, coord), st.tuples(coord, coord, coord))
def test_blockage_symmetric(a, b):
    if np.allclose(a, b):
        return
    s = box_scene(((3, 3, 3), (6, 7, 5)), ((7, 1, 0), (9, 2, 8)))
    assert los_blocked(s, a, b) == los_blocked(s, b, a)


def test_classification_examples():
    tx, rx = np.array([0.0, 5, 5]), np.array([10.0, 5, 5])
    straddle = Scatterer((4, 4, 4), (6, 6, 6))
    near = Scatterer((4.5, 5.5, 4.5), (5.5, 6.5, 5.5))  # centroid 1 m off the midpoint
    far = Scatterer((0, 25, 0), (1, 26, 1))
    s = Scene((200, 200, 20), (BaseStation((0, 0, 1)),), (straddle, near, far))
    assert classify_scatterers(s, tx, rx, 1.5) == [
        ScattererClass.OBSTRUCTING, ScattererClass.EFFECTIVE, ScattererClass.BACKGROUND]


def test_classification_rejects_small_factor():
    s = box_scene()
    with pytest.raises(InvalidInputError):
        classify_scatterers(s, (0, 0, 0), (1, 1, 1), 1.0)


@settings(max_examples=40, deadline=None)
@given(st.floats(1.01, 3.0), st.floats(0.0, 2.0))
def test_growing_ellipsoid_never_demotes(f1, df):
    s = default_scene()
    tx = np.array(s.base_stations[0].position)
    rx = np.array([70.0, 31.0, 1.0])
    small = classify_scatterers(s, tx, rx, f1)
    large = classify_scatterers(s, tx, rx, f1 + df)
    for a, b in zip(small, large):
        if a == ScattererClass.EFFECTIVE:
            assert b == ScattererClass.EFFECTIVE
        if a == ScattererClass.OBSTRUCTING:
            assert b == ScattererClass.OBSTRUCTING


def test_build_grid_row_major():
    s = box_scene(dims=(5, 5, 5))
    pts = build_grid(s, ReceiverGrid((0, 0, 1), 1.0, 1.0, 2, 2))
    np.testing.assert_array_equal(pts, [[0, 0, 1], [1, 0, 1], [0, 1, 1], [1, 1, 1]])


def test_build_grid_single_point():
    s = box_scene(dims=(5, 5, 5))
    pts = build_grid(s, ReceiverGrid((2, 3, 1), 1.0, 1.0, 1, 1))
    np.testing.assert_array_equal(pts, [[2, 3, 1]])


def test_build_grid_large():
    s = Scene((185, 64, 22), (BaseStation((1, 1, 1)),))
    pts = build_grid(s, ReceiverGrid((0, 0, 1), 0.083, 0.33, 800, 50))
    assert len(pts) == 40000
    assert pts[:, 0].max() - pts[:, 0].min() == pytest.approx(799 * 0.083)


def test_grid_outside_scene_rejected():
    s = box_scene(dims=(5, 5, 5))
    with pytest.raises(InvalidInputError):
        build_grid(s, ReceiverGrid((0, 0, 1), 1.0, 1.0, 10, 2))


@pytest.mark.parametrize("bad", [
    dict(min_corner=(2, 0, 0), max_corner=(1, 1, 1)),
    dict(min_corner=(0, 0, 0), max_corner=(1, 1, 1), reflection_coefficient=1.5),
])
def test_scatterer_validation(bad):
    with pytest.raises(InvalidInputError):
        Scatterer(**bad)


def test_scene_json_round_trip(tmp_path):
    s = default_scene()
    path = tmp_path / "scene.json"
    path.write_text(json.dumps(scene_to_dict(s)))
    again = load_scene(path)
    assert again.base_stations == s.base_stations
    assert again.scatterers == s.scatterers
    assert again.grid == s.grid
    assert again.wavelength == pytest.approx(s.wavelength)


def test_scene_unknown_key_rejected():
    doc = scene_to_dict(default_scene())
    doc["bogus"] = 1
    with pytest.raises(ConfigError):
        scene_from_dict(doc)


def test_missing_scene_file(tmp_path):
    with pytest.raises(ConfigError):
        load_scene(tmp_path / "nope.json")
