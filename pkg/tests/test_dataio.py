"""Raster container, patching, split, augmentation, and Pearson tests."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bandfusion import dataio
from bandfusion.errors import LoadError, ValidationError

rng = np.random.default_rng(99)

HOUSTON_TOTALS = [1251, 1254, 697, 1244, 1242, 325, 1268, 1244, 1252, 1227,
                  1235, 1233, 469, 428, 660]
HOUSTON_TRAIN = [198, 190, 192, 188, 186, 182, 196, 191, 193, 191,
                 181, 192, 184, 181, 187]


def pearson_two_pass(x, y):
    """Textbook two-pass Pearson r."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    mx, my = x.mean(), y.mean()
    num = ((x - mx) * (y - my)).sum()
    den = np.sqrt(((x - mx) ** 2).sum() * ((y - my) ** 2).sum())
    return 0.0 if den == 0 else float(num / den)


def make_cube(h=4, w=4, b=3, seed=0):
    r = np.random.default_rng(seed)
    return dataio.HsiCube(width=w, height=h, bands=b, values=r.uniform(size=(h, w, b)))


def make_lidar(h=4, w=4, c=1, seed=1):
    r = np.random.default_rng(seed)
    return dataio.LidarRaster(width=w, height=h, channels=c, values=r.uniform(size=(h, w, c)))


# --- container ---


def test_load_declared_shape(tmp_path):
    values = rng.uniform(size=(4, 4, 3))
    dataio.save_raster(tmp_path / "cube.hdr", values, "f64")
    cube = dataio.load_cube(tmp_path / "cube.hdr")
    assert (cube.height, cube.width, cube.bands) == (4, 4, 3)


def test_byte_count_mismatch_names_counts(tmp_path):
    values = rng.uniform(size=(4, 4, 3))
    dataio.save_raster(tmp_path / "cube.hdr", values, "f64")
    with open(tmp_path / "cube.bin", "ab") as fh:
        fh.write(b"\x00" * 8)
    with pytest.raises(LoadError, match="384.*392"):
        dataio.load_cube(tmp_path / "cube.hdr")


def test_roundtrip_bit_identical(tmp_path):
    cube = make_cube(5, 7, 6)
    dataio.save_cube(tmp_path / "c.hdr", cube)
    back = dataio.load_cube(tmp_path / "c.hdr")
    np.testing.assert_array_equal(back.values, cube.values)


def test_missing_file_and_bad_dtype(tmp_path):
    with pytest.raises(LoadError):
        dataio.load_cube(tmp_path / "nope.hdr")
    dataio.write_kv(
        tmp_path / "bad.hdr",
        {"width": 1, "height": 1, "channels": 1, "dtype": "f16",
         "byte_order": "little", "data_file": "bad.bin"},
    )
    with pytest.raises(LoadError, match="f16"):
        dataio.load_raster(tmp_path / "bad.hdr")


def test_labels_roundtrip_and_dtype_guard(tmp_path):
    lab = dataio.LabelMap(width=3, height=2, labels=[[0, 1, 2], [2, 1, 0]])
    dataio.save_labels(tmp_path / "lab.hdr", lab)
    back = dataio.load_labels(tmp_path / "lab.hdr")
    np.testing.assert_array_equal(back.labels, lab.labels)
    assert back.class_names == ["class_1", "class_2"]
    cube = make_cube()
    dataio.save_cube(tmp_path / "c.hdr", cube)
    with pytest.raises(LoadError, match="i32"):
        dataio.load_labels(tmp_path / "c.hdr")


def test_f32_roundtrip(tmp_path):
    values = rng.uniform(size=(2, 3, 4)).astype(np.float32)
    dataio.save_raster(tmp_path / "c.hdr", values, "f32")
    arr, tag = dataio.load_raster(tmp_path / "c.hdr")
    assert tag == "f32"
    np.testing.assert_array_equal(arr, values)


# --- normalization ---


def test_normalize_two_values():
    cube = dataio.HsiCube(width=2, height=1, bands=1, values=[[[2.0], [4.0]]])
    out = dataio.normalize_per_band(cube)
    np.testing.assert_array_equal(out.values.ravel(), [0.0, 1.0])


def test_normalize_constant_band():
    cube = dataio.HsiCube(width=2, height=2, bands=1, values=np.full((2, 2, 1), 3.0))
    out = dataio.normalize_per_band(cube)
    np.testing.assert_array_equal(out.values, 0.0)


def test_normalize_matches_formula():
    cube = make_cube(8, 8, 5, seed=3)
    out = dataio.normalize_per_band(cube)
    for b in range(5):
        band = cube.values[:, :, b]
        expect = (band - band.min()) / (band.max() - band.min())
        np.testing.assert_allclose(out.values[:, :, b], expect, atol=1e-12)
    assert out.values.min() >= 0.0 and out.values.max() <= 1.0


# --- patches ---


def test_patch_covers_whole_raster():
    cube = make_cube(9, 9, 2)
    lidar = make_lidar(9, 9, 1)
    s = dataio.extract_patch(cube, lidar, (4, 4), 9, label=1)
    np.testing.assert_array_equal(s.hsi_patch, cube.values)
    np.testing.assert_array_equal(s.lidar_patch, lidar.values)


def test_patch_corner_mirror():
    cube = make_cube(4, 4, 1)
    lidar = make_lidar(4, 4, 1)
    s = dataio.extract_patch(cube, lidar, (0, 0), 3, label=1)
    v = cube.values[:, :, 0]
    # index -1 reflects to 1 on both axes
    assert s.hsi_patch[0, 0, 0] == v[1, 1]
    assert s.hsi_patch[0, 1, 0] == v[1, 0]
    assert s.hsi_patch[1, 0, 0] == v[0, 1]
    assert s.hsi_patch[1, 1, 0] == v[0, 0]


def test_patch_muufl_size():
    cube = make_cube(10, 10, 6)
    lidar = make_lidar(10, 10, 1)
    s = dataio.extract_patch(cube, lidar, (5, 5), 3, label=2)
    assert s.hsi_patch.shape == (3, 3, 6)
    assert s.lidar_patch.shape == (3, 3, 1)


def test_patch_even_size_rejected():
    with pytest.raises(ValidationError):
        dataio.extract_patch(make_cube(), make_lidar(), (1, 1), 4)


# --- tokenize ---


def test_tokenize_band_rows():
    cube = make_cube(9, 9, 7)
    lidar = make_lidar(9, 9, 2)
    s = dataio.extract_patch(cube, lidar, (4, 4), 9, label=1)
    hsi_tok, lid_tok = dataio.tokenize(s)
    assert hsi_tok.shape == (7, 81)
    assert lid_tok.shape == (2, 81)
    np.testing.assert_array_equal(hsi_tok.data[3], s.hsi_patch[:, :, 3].ravel())


def test_tokenize_single_pixel():
    cube = make_cube(3, 3, 5)
    lidar = make_lidar(3, 3, 1)
    s = dataio.extract_patch(cube, lidar, (1, 1), 1, label=1)
    hsi_tok, _ = dataio.tokenize(s)
    assert hsi_tok.shape == (5, 1)


def test_tokenize_band_permutation_permutes_rows():
    cube = make_cube(5, 5, 4)
    lidar = make_lidar(5, 5, 1)
    s = dataio.extract_patch(cube, lidar, (2, 2), 3, label=1)
    perm = [2, 0, 3, 1]
    s2 = dataio.SamplePair(
        hsi_patch=s.hsi_patch[:, :, perm],
        lidar_patch=s.lidar_patch,
        label=s.label,
        center=s.center,
    )
    t1, _ = dataio.tokenize(s)
    t2, _ = dataio.tokenize(s2)
    np.testing.assert_array_equal(t2.data, t1.data[perm])


def test_token_row_depends_only_on_its_band():
    cube = make_cube(5, 5, 4)
    lidar = make_lidar(5, 5, 1)
    s = dataio.extract_patch(cube, lidar, (2, 2), 3, label=1)
    t1, _ = dataio.tokenize(s)
    mutated = s.hsi_patch.copy()
    mutated[:, :, 2] += 10.0
    t2, _ = dataio.tokenize(
        dataio.SamplePair(mutated, s.lidar_patch, s.label, s.center)
    )
    np.testing.assert_array_equal(t2.data[[0, 1, 3]], t1.data[[0, 1, 3]])
    assert not np.array_equal(t2.data[2], t1.data[2])


# --- split ---


def test_split_counts():
    labels = dataio.LabelMap(width=5, height=2, labels=np.ones((2, 5), dtype=int))
    train, test = dataio.split(labels, dataio.SplitSpec(train_count=4, seed=1))
    assert len(train) == 4 and len(test) == 6
    assert set(train).isdisjoint(test)
    assert len(set(train) | set(test)) == 10


def test_split_deterministic():
    r = np.random.default_rng(5)
    labels = dataio.LabelMap(width=20, height=20, labels=r.integers(0, 4, size=(20, 20)))
    spec = dataio.SplitSpec(train_count=10, seed=42)
    assert dataio.split(labels, spec) == dataio.split(labels, spec)


def test_split_infeasible_names_class():
    labels = dataio.LabelMap(width=3, height=1, labels=[[1, 1, 2]])
    with pytest.raises(ValidationError, match="class 2"):
        dataio.split(labels, dataio.SplitSpec(train_count=2, seed=0))


def test_split_houston_totals():
    side = 123  # 15129 cells, 15029 labeled
    flat = np.zeros(side * side, dtype=int)
    pos = 0
    for cls, n in enumerate(HOUSTON_TOTALS, start=1):
        flat[pos : pos + n] = cls
        pos += n
    labels = dataio.LabelMap(width=side, height=side, labels=flat.reshape(side, side))
    counts = {i + 1: c for i, c in enumerate(HOUSTON_TRAIN)}
    train, test = dataio.split(labels, dataio.SplitSpec(train_counts=counts, seed=7))
    assert len(train) == 2832
    assert len(test) == 12197


def test_split_partition_property():
    r = np.random.default_rng(8)
    labels = dataio.LabelMap(width=16, height=16, labels=r.integers(0, 3, size=(16, 16)))
    train, test = dataio.split(labels, dataio.SplitSpec(train_count=5, seed=3))
    labeled = {(int(a), int(b)) for a, b in zip(*np.nonzero(labels.labels))}
    assert set(train) | set(test) == labeled
    assert set(train).isdisjoint(test)


# --- augment ---


def sample_of(patch, lidar_patch=None, label=1):
    patch = np.asarray(patch, dtype=np.float64)
    if lidar_patch is None:
        lidar_patch = np.zeros(patch.shape[:2] + (1,))
    return dataio.SamplePair(patch, np.asarray(lidar_patch, float), label, (0, 0))


def test_augment_returns_five():
    s = sample_of(rng.uniform(size=(3, 3, 2)))
    out = dataio.augment(s)
    assert len(out) == 5
    assert all(o.label == 1 for o in out)
    assert all(o.hsi_patch.shape == s.hsi_patch.shape for o in out)


def test_augment_constant_patch_fixed_point():
    s = sample_of(np.full((5, 5, 2), 3.25), np.full((5, 5, 1), 1.5))
    for o in dataio.augment(s):
        np.testing.assert_allclose(o.hsi_patch, 3.25, atol=1e-12)
        np.testing.assert_allclose(o.lidar_patch, 1.5, atol=1e-12)


def test_flip_h_involution():
    s = sample_of(rng.uniform(size=(5, 5, 3)))
    flipped = dataio.augment(s)[4]
    twice = dataio.augment(flipped)[4]
    np.testing.assert_array_equal(twice.hsi_patch, s.hsi_patch)


def test_flip_v_involution_and_rot90_period_four():
    s = sample_of(rng.uniform(size=(5, 5, 3)))
    v = dataio.augment(dataio.augment(s)[3])[3]
    np.testing.assert_array_equal(v.hsi_patch, s.hsi_patch)
    cur = s
    for _ in range(4):
        cur = dataio.augment(cur)[2]
    np.testing.assert_array_equal(cur.hsi_patch, s.hsi_patch)


def test_rot90_hand_permutation():
    patch = np.arange(9, dtype=float).reshape(3, 3, 1)
    s = sample_of(patch)
    rot = dataio.augment(s)[2].hsi_patch[:, :, 0]
    # counterclockwise quarter turn: first row becomes last column reversed
    expect = np.array([[2, 5, 8], [1, 4, 7], [0, 3, 6]], dtype=float)
    np.testing.assert_array_equal(rot, expect)


def test_rot90_and_flips_are_permutations():
    s = sample_of(rng.uniform(size=(5, 5, 2)))
    for idx in (2, 3, 4):
        out = dataio.augment(s)[idx].hsi_patch
        assert sorted(out.ravel()) == sorted(s.hsi_patch.ravel())


def test_rot45_center_invariant():
    patch = rng.uniform(size=(5, 5, 1))
    s = sample_of(patch)
    rot = dataio.augment(s)[1].hsi_patch
    np.testing.assert_allclose(rot[2, 2], patch[2, 2], atol=1e-12)
    assert rot.shape == patch.shape


# --- pearson ---


def test_pearson_self_and_negated():
    h = w = 8
    band = rng.uniform(size=(h, w))
    cube = dataio.HsiCube(width=w, height=h, bands=2,
                          values=np.stack([band, -band], axis=2))
    lidar = dataio.LidarRaster(width=w, height=h, channels=1, values=band[:, :, None])
    r = dataio.pearson_band_lidar(cube, lidar, 0)
    np.testing.assert_allclose(r, [1.0, -1.0], atol=1e-12)


def test_pearson_matches_two_pass_oracle():
    n = 100
    r1 = np.random.default_rng(17)
    lid = r1.uniform(size=(n, n, 1))
    noise = r1.normal(0, 0.1, size=(n, n))
    band = 0.7 * lid[:, :, 0] + noise
    cube = dataio.HsiCube(width=n, height=n, bands=1, values=band[:, :, None])
    lidar = dataio.LidarRaster(width=n, height=n, channels=1, values=lid)
    r = dataio.pearson_band_lidar(cube, lidar, 0)
    expect = pearson_two_pass(band.ravel(), lid.ravel())
    np.testing.assert_allclose(r[0], expect, atol=1e-12)


def test_pearson_constant_inputs_zero():
    cube = dataio.HsiCube(width=2, height=2, bands=1, values=np.full((2, 2, 1), 3.0))
    lidar = make_lidar(2, 2, 1)
    np.testing.assert_array_equal(dataio.pearson_band_lidar(cube, lidar, 0), [0.0])


@given(
    st.floats(0.1, 10.0),
    st.floats(-5.0, 5.0),
    st.integers(0, 2**31 - 1),
)
@settings(max_examples=25, deadline=None)
def test_pearson_affine_invariance(scale, shift, seed):
    r1 = np.random.default_rng(seed)
    h = w = 10
    band = r1.uniform(size=(h, w))
    lid = r1.uniform(size=(h, w, 1))
    base = dataio.pearson_band_lidar(
        dataio.HsiCube(width=w, height=h, bands=1, values=band[:, :, None]),
        dataio.LidarRaster(width=w, height=h, channels=1, values=lid),
        0,
    )
    scaled = dataio.pearson_band_lidar(
        dataio.HsiCube(width=w, height=h, bands=1,
                       values=(scale * band + shift)[:, :, None]),
        dataio.LidarRaster(width=w, height=h, channels=1, values=lid),
        0,
    )
    np.testing.assert_allclose(base, scaled, atol=1e-9)


def test_pearson_channel_out_of_range():
    with pytest.raises(ValidationError):
        dataio.pearson_band_lidar(make_cube(), make_lidar(), 5)
