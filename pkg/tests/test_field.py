import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mvnf.field import (DatasetError, GridSpec, MultiField, load_dataset, make_normalizer,
                        sample_points, save_dataset)


def _write_manifest(tmp_path, shape, values, name="a"):
    (tmp_path / f"{name}.f32").write_bytes(np.asarray(values, "<f4").tobytes())
    manifest = {"dims": len(shape), "shape": list(shape),
                "variables": [{"name": name, "file": f"{name}.f32", "dtype": "f32le"}]}
    path = tmp_path / "m.json"
    path.write_text(json.dumps(manifest))
    return path


def test_load_small_manifest(tmp_path):
    field = load_dataset(_write_manifest(tmp_path, (2, 2), [0, 1, 2, 3]))
    meta = field.variables[0]
    assert (meta.raw_min, meta.raw_max) == (0.0, 3.0)
    assert field.grid.dims == 2
    np.testing.assert_array_equal(field.volume("a"), [[0, 1], [2, 3]])


def test_load_size_mismatch(tmp_path):
    with pytest.raises(DatasetError, match="size mismatch"):
        load_dataset(_write_manifest(tmp_path, (2, 2), [0, 1, 2]))


def test_constant_variable_is_degenerate(tmp_path):
    field = load_dataset(_write_manifest(tmp_path, (2, 2), [5.0] * 4))
    assert field.variables[0].degenerate
    assert field.variables[0].raw_min == field.variables[0].raw_max == 5.0


def test_non_finite_rejected_with_index(tmp_path):
    with pytest.raises(DatasetError, match=r"'a'.*index 2"):
        load_dataset(_write_manifest(tmp_path, (2, 2), [0, 1, np.nan, 3]))
    with pytest.raises(DatasetError, match="index 0"):
        load_dataset(_write_manifest(tmp_path, (2, 2), [np.inf, 1, 2, 3]))


def test_missing_file(tmp_path):
    with pytest.raises(DatasetError, match="missing manifest"):
        load_dataset(tmp_path / "nope.json")
    path = _write_manifest(tmp_path, (2, 2), [0, 1, 2, 3])
    (tmp_path / "a.f32").unlink()
    with pytest.raises(DatasetError, match="missing data file"):
        load_dataset(path)


def test_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(3)
    field = MultiField.from_arrays(
        {"x": rng.normal(size=(5, 4, 3)), "y": rng.uniform(-7, 2, (5, 4, 3))},
        spacing=(1.0, 0.5, 2.0))
    back = load_dataset(save_dataset(field, tmp_path / "ds"))
    assert back.names == field.names
    assert back.spacing == field.spacing
    assert back.data.tobytes() == field.data.tobytes()
    assert back.variables == field.variables


@pytest.mark.parametrize("offset", [0, 7, 21])
def test_corrupted_byte_rejected(tmp_path, offset):
    field = MultiField.from_arrays({"x": np.linspace(0, 1, 12).reshape(3, 4)})
    path = save_dataset(field, tmp_path)
    data_file = tmp_path / json.loads(path.read_text())["variables"][0]["file"]
    blob = bytearray(data_file.read_bytes())
    blob[offset] ^= 0x01
    data_file.write_bytes(bytes(blob))
    with pytest.raises(DatasetError):
        load_dataset(path)


def test_empty_variable_list():
    with pytest.raises(DatasetError, match="at least|>=1 variable"):
        MultiField.from_arrays({})
    with pytest.raises(DatasetError, match=">=1 variable"):
        MultiField(GridSpec((2, 2)), (), np.zeros((0, 4), np.float32))


def test_grid_validation():
    with pytest.raises(DatasetError):
        GridSpec((4,))
    with pytest.raises(DatasetError):
        GridSpec((4, 1))
    assert GridSpec((3, 4, 5)).size == 60


def test_field_is_read_only():
    field = MultiField.from_arrays({"x": np.arange(6.0).reshape(2, 3)})
    with pytest.raises(ValueError):
        field.data[0, 0] = 1.0


def test_stored_range_must_match():
    field = MultiField.from_arrays({"x": np.arange(6.0).reshape(2, 3)})
    from mvnf.field import VariableMeta
    with pytest.raises(DatasetError, match="does not match"):
        MultiField(field.grid, (VariableMeta("x", 0.0, 9.0),), field.data)


# ----------------------------------------------------------------- normalizer


def test_normalizer_examples():
    field = MultiField.from_arrays({
        "t": np.linspace(-10, 30, 10).reshape(5, 2),
        "c": np.full((5, 2), 0.056),
    })
    norm = make_normalizer(field)
    out = norm.forward(np.array([[10.0, 0.056]]))
    assert out[0, 0] == pytest.approx(0.0, abs=1e-12)
    assert out[0, 1] == 0.0
    back = norm.inverse(np.array([[0.3, 0.7]]))
    assert back[0, 1] == pytest.approx(0.056)
    assert norm.coords(np.array([[2, 0]]))[0, 0] == 0.5


def test_normalizer_endpoints():
    field = MultiField.from_arrays({"t": np.linspace(-3, 8, 35).reshape(7, 5)})
    norm = make_normalizer(field)
    ends = norm.forward(np.array([[-3.0], [8.0]]))
    np.testing.assert_allclose(ends[:, 0], [-1.0, 1.0], atol=1e-15)
    corners = norm.coords(np.array([[0, 0], [6, 4]]))
    np.testing.assert_array_equal(corners, [[0, 0], [1, 1]])


def test_coordinates_strictly_monotone():
    field = MultiField.from_arrays({"t": np.zeros((9, 4, 3)) + np.arange(3)})
    coords = make_normalizer(field).grid_coords()
    grid = coords.reshape(9, 4, 3, 3)
    for axis in range(3):
        steps = np.diff(grid[..., axis], axis=axis)
        assert (steps > 0).all()


@settings(max_examples=50, deadline=None)
@given(lo=st.floats(-1e4, 1e4), span=st.floats(1e-3, 1e4), seed=st.integers(0, 2**16))
def test_normalization_round_trip(lo, span, seed):
    rng = np.random.default_rng(seed)
    vals = (lo + span * rng.random((6, 4))).astype(np.float32)
    field = MultiField.from_arrays({"v": vals})
    norm = make_normalizer(field)
    x = field.data.T.astype(np.float64)
    normed = norm.forward(x).astype(np.float32)
    back = norm.inverse(normed)
    # float32 storage of the normalized value bounds the round-trip error.
    tol = max(1e-5, 2 ** -23 * span)
    np.testing.assert_allclose(back, x, rtol=0, atol=tol)
    exact = norm.inverse(norm.forward(x))
    np.testing.assert_allclose(exact, x, rtol=1e-6, atol=1e-9 * max(1.0, abs(lo) + span))


def test_normalization_round_trip_unit_range():
    rng = np.random.default_rng(0)
    field = MultiField.from_arrays({"a": rng.random((8, 8)), "b": 3 * rng.random((8, 8)) - 1})
    norm = make_normalizer(field)
    x = field.data.T.astype(np.float64)
    back = norm.inverse(norm.forward(x).astype(np.float32))
    assert np.abs(back - x).max() <= 1e-5


# --------------------------------------------------------------- sampling


def _grid_1000():
    return MultiField.from_arrays({"v": np.arange(1000.0).reshape(10, 10, 10)})


def test_sample_full_fraction():
    field = _grid_1000()
    for seed in (0, 5):
        idx, coords, targets = sample_points(field, 1.0, seed)
        np.testing.assert_array_equal(idx, np.arange(1000))
        assert coords.shape == (1000, 3) and targets.shape == (1000, 1)
        assert coords.min() == 0 and coords.max() == 1
        assert targets.min() == -1 and targets.max() == 1


def test_sample_quarter_deterministic():
    field = _grid_1000()
    a, ca, ta = sample_points(field, 0.25, 11)
    b, cb, tb = sample_points(field, 0.25, 11)
    assert len(a) == 250 and len(np.unique(a)) == 250
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(ca, cb)
    np.testing.assert_array_equal(ta, tb)


@pytest.mark.parametrize("fraction", [0.25, 0.5, 0.75, 1.0])
def test_sample_counts(fraction):
    field = MultiField.from_arrays({"v": np.arange(7 * 9 * 5.0).reshape(7, 9, 5)})
    idx, _, _ = sample_points(field, fraction, 0)
    assert len(np.unique(idx)) == len(idx) == int(np.ceil(fraction * 315))


def test_sample_overlap_between_seeds():
    # Two independent half-samples of 1000 points overlap in 250 points on
    # average (hypergeometric mean n*K/N); mean over 100 pairs.
    field = _grid_1000()
    overlaps = []
    for k in range(100):
        a, _, _ = sample_points(field, 0.5, 2 * k)
        b, _, _ = sample_points(field, 0.5, 2 * k + 1)
        overlaps.append(len(np.intersect1d(a, b)))
    assert abs(np.mean(overlaps) - 250) <= 5
    assert all(o < 500 for o in overlaps)


def test_sample_targets_match_normalizer():
    field = MultiField.from_arrays({"v": np.arange(24.0).reshape(4, 6)})
    idx, coords, targets = sample_points(field, 0.5, 1)
    rows, cols = np.unravel_index(idx, (4, 6))
    np.testing.assert_allclose(coords[:, 0], rows / 3, rtol=1e-7)
    np.testing.assert_allclose(coords[:, 1], cols / 5, rtol=1e-7)
    np.testing.assert_allclose(targets[:, 0], idx / 23 * 2 - 1, rtol=1e-6, atol=1e-7)


def test_sample_bad_fraction():
    with pytest.raises(ValueError):
        sample_points(_grid_1000(), 0.0, 0)
