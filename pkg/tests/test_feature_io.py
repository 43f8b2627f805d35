import os
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from cif.errors import (AllDepthMissing, BadMagic, InvalidConfig, IoFailure,
                        NonFiniteValue, TruncatedFile, VersionUnsupported)
from cif.feature_io import (DatasetManifest, DepthMap, ForegroundMask,
                            Modality, PatchGrid, SampleEntry,
                            extract_foreground_mask, fill_missing_depth,
                            load_manifest, pool_to_grid, read_depth,
                            read_feature_tensor, read_mask, save_manifest,
                            tensor_to_bytes, write_depth,
                            write_feature_tensor, write_mask)


def test_smallest_tensor_file(tmp_path):
    p = tmp_path / "t.cift"
    p.write_bytes(b"CIFT" + struct.pack("<4I", 1, 1, 1, 2) + struct.pack("<2f", 1.0, 2.0))
    g = read_feature_tensor(p)
    assert (g.rows, g.cols, g.dim) == (1, 1, 2)
    assert g.data.tolist() == [[1.0, 2.0]]


def test_single_value_file_size(tmp_path):
    p = tmp_path / "t.cift"
    write_feature_tensor(PatchGrid(1, 1, np.zeros((1, 1), np.float32)), p)
    buf = p.read_bytes()
    # 20 header bytes (magic, version, rows, cols, dim) + one float32
    assert len(buf) == 24
    assert buf[:4] == b"CIFT"
    assert struct.unpack("<4I", buf[4:20]) == (1, 1, 1, 1)


def test_large_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    data = rng.standard_normal((28 * 28, 768)).astype(np.float32)
    p = tmp_path / "big.cift"
    write_feature_tensor(PatchGrid(28, 28, data), p)
    back = read_feature_tensor(p)
    assert back.data.tobytes() == data.tobytes()


@settings(max_examples=40, deadline=None)
@given(rows=st.integers(1, 5), cols=st.integers(1, 5), dim=st.integers(1, 6), data=st.data())
def test_tensor_bytes_round_trip(tmp_path_factory, rows, cols, dim, data):
    arr = data.draw(hnp.arrays(np.float32, (rows * cols, dim),
                               elements=st.floats(-1e6, 1e6, width=32)))
    p = tmp_path_factory.mktemp("rt") / "x.cift"
    grid = PatchGrid(rows, cols, arr, Modality.PC3D)
    write_feature_tensor(grid, p)
    back = read_feature_tensor(p, Modality.PC3D)
    assert tensor_to_bytes(back) == tensor_to_bytes(grid)
    assert back.modality == Modality.PC3D


def test_bad_magic(tmp_path):
    p = tmp_path / "t.cift"
    p.write_bytes(b"CIFX" + struct.pack("<4I", 1, 1, 1, 1) + b"\0" * 4)
    with pytest.raises(BadMagic):
        read_feature_tensor(p)


def test_truncated_payload(tmp_path):
    p = tmp_path / "t.cift"
    p.write_bytes(b"CIFT" + struct.pack("<4I", 1, 2, 2, 3) + b"\0" * 10)
    with pytest.raises(TruncatedFile):
        read_feature_tensor(p)


def test_truncated_header(tmp_path):
    p = tmp_path / "t.cift"
    p.write_bytes(b"CIFT\x01\x00")
    with pytest.raises(TruncatedFile):
        read_feature_tensor(p)


def test_unsupported_version(tmp_path):
    p = tmp_path / "t.cift"
    p.write_bytes(b"CIFT" + struct.pack("<4I", 2, 1, 1, 1) + b"\0" * 4)
    with pytest.raises(VersionUnsupported):
        read_feature_tensor(p)


def test_non_finite_rejected(tmp_path):
    p = tmp_path / "t.cift"
    p.write_bytes(b"CIFT" + struct.pack("<4I", 1, 1, 1, 1) + struct.pack("<f", float("nan")))
    with pytest.raises(NonFiniteValue):
        read_feature_tensor(p)
    with pytest.raises(NonFiniteValue):
        PatchGrid(1, 1, np.array([[np.inf]]))


def test_unwritable_path(tmp_path):
    grid = PatchGrid(1, 1, np.zeros((1, 1), np.float32))
    with pytest.raises(IoFailure):
        write_feature_tensor(grid, tmp_path / "no" / "such" / "dir" / "t.cift")


def test_write_leaves_no_temp_files(tmp_path):
    write_feature_tensor(PatchGrid(2, 2, np.ones((4, 3), np.float32)), tmp_path / "a.cift")
    assert os.listdir(tmp_path) == ["a.cift"]


def test_mask_and_depth_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    bits = rng.random(35) < 0.5
    write_mask(ForegroundMask(5, 7, bits), tmp_path / "m.cifm")
    m = read_mask(tmp_path / "m.cifm")
    assert (m.rows, m.cols) == (5, 7) and np.array_equal(m.bits, bits)

    vals = rng.random((9, 4)).astype(np.float32)
    write_depth(DepthMap(vals), tmp_path / "d.cifd")
    d = read_depth(tmp_path / "d.cifd")
    assert d.values.tobytes() == vals.tobytes()

    with pytest.raises(BadMagic):
        read_mask(tmp_path / "d.cifd")


def test_manifest_round_trip(tmp_path):
    (tmp_path / "a.cift").write_bytes(b"")
    (tmp_path / "gt.cifm").write_bytes(b"")
    man = DatasetManifest("widget", [
        SampleEntry("s0", "train", "normal", {"rgb": "a.cift"}),
        SampleEntry("s1", "test", "anomalous", {"rgb": "a.cift", "3d": "a.cift"},
                    gt_mask_path="gt.cifm"),
    ])
    save_manifest(man, tmp_path / "manifest.json")
    back = load_manifest(tmp_path / "manifest.json")
    assert back.class_name == "widget"
    assert back.samples == man.samples
    assert back.root == tmp_path


def test_manifest_rejects_bad_entries(tmp_path):
    (tmp_path / "a.cift").write_bytes(b"")
    bad_train = DatasetManifest("w", [SampleEntry("s", "train", "anomalous", {"rgb": "a.cift"})])
    save_manifest(bad_train, tmp_path / "m1.json")
    with pytest.raises(InvalidConfig):
        load_manifest(tmp_path / "m1.json")

    missing = DatasetManifest("w", [SampleEntry("s", "test", "normal", {"rgb": "gone.cift"})])
    save_manifest(missing, tmp_path / "m2.json")
    with pytest.raises(InvalidConfig):
        load_manifest(tmp_path / "m2.json")

    with pytest.raises(IoFailure):
        load_manifest(tmp_path / "absent.json")


# ------------------------------------------------------------- foreground

def test_constant_depth_is_background():
    m = extract_foreground_mask(DepthMap(np.full((16, 16), 0.4)), 4, 4)
    assert not m.bits.any()


def test_centered_square():
    d = np.full((32, 32), 0.5)
    d[10:22, 10:22] = 0.6
    m = extract_foreground_mask(DepthMap(d), 4, 4)
    # count square pixels inside each 8x8 patch by hand
    expected = np.zeros((4, 4), bool)
    for r in range(4):
        for c in range(4):
            block = d[8 * r:8 * r + 8, 8 * c:8 * c + 8]
            expected[r, c] = (block == 0.6).sum() > 32
    assert np.array_equal(m.as_image(), expected)
    assert m.as_image()[1:3, 1:3].all() and m.bits.sum() == 4


def test_all_missing_depth():
    with pytest.raises(AllDepthMissing):
        extract_foreground_mask(DepthMap(np.zeros((8, 8))), 2, 2)


def test_holes_are_filled_from_neighbours():
    d = np.full((12, 12), 0.5)
    d[3:9, 3:9] = 0.6
    d[5, 5] = 0.0  # hole inside the object
    d[0, 6] = 0.0  # hole in the background
    m = extract_foreground_mask(DepthMap(d), 12, 12)
    img = m.as_image()
    assert img[5, 5] and not img[0, 6]


def test_fill_missing_depth_mean_and_reach():
    v = np.zeros((1, 5))
    v[0, 0] = 1.0
    valid = v != 0
    d, ok = fill_missing_depth(v, valid, 2)
    assert ok.tolist() == [[True, True, True, False, False]]
    assert d[0, 1] == 1.0 and d[0, 2] == 1.0
    # two valid neighbours average
    v = np.array([[2.0, 0.0, 4.0]])
    d, _ = fill_missing_depth(v, v != 0, 1)
    assert d[0, 1] == 3.0


def test_pool_majority_is_strict():
    pix = np.zeros((4, 4), bool)
    pix[:2, :2] = True
    pix[0, 2:] = True  # exactly half of the top-right 2x2 block
    assert pool_to_grid(pix, 2, 2).tolist() == [[True, False], [False, False]]


@settings(max_examples=25, deadline=None)
@given(hnp.arrays(np.float64, (10, 10), elements=st.sampled_from([0.0, 0.3, 0.5, 0.51, 0.9])))
def test_mask_extraction_is_deterministic(values):
    if not values.any():
        return
    a = extract_foreground_mask(DepthMap(values), 5, 5)
    b = extract_foreground_mask(DepthMap(values.copy()), 5, 5)
    assert np.array_equal(a.bits, b.bits)
