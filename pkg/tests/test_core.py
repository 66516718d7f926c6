import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from segquery.core import (IGNORE_ID, BinaryMask, Category, CategoryTable, LabelMap, ManifestError,
                           load_manifest, normalize_name, read_labelmap, resolve_category, rle_decode,
                           rle_encode, rle_from_text, rle_to_text)

from .conftest import FOUR_CATEGORIES, write_manifest


@pytest.mark.parametrize("raw,expected", [
    ("  Traffic   Light ", "traffic light"),
    ("cat", "cat"),
    ("SKY\t", "sky"),
    ("", ""),
])
def test_normalize_name(raw, expected):
    assert normalize_name(raw) == expected


@given(st.text())
def test_normalize_idempotent(text):
    once = normalize_name(text)
    assert normalize_name(once) == once


def test_resolve_category():
    table = CategoryTable([Category(3, "person"), Category(7, "television", ("tv monitor",))])
    assert resolve_category(table, "person") == (3, "exact")
    assert resolve_category(table, " TV  Monitor") == (7, "alias")
    assert resolve_category(table, "unicorn") == (None, "none")
    # no fuzzy matching
    assert resolve_category(table, "persons") == (None, "none")


@pytest.mark.parametrize("entries", [
    [Category(1, "a"), Category(1, "b")],
    [Category(1, "a"), Category(2, " A ")],
    [Category(IGNORE_ID, "a")],
    [Category(1, "   ")],
    [Category(1, "a,b")],
])
def test_table_rejects_invalid(entries):
    with pytest.raises(ManifestError):
        CategoryTable(entries)


def test_load_valid_manifest(small_manifest):
    assert small_manifest.table.ids == [0, 3, 5, 7]
    assert [r.image_id for r in small_manifest.records] == ["a", "b"]
    assert small_manifest.records[0].present_ids == {0, 3, 5}
    assert small_manifest.records[1].present_ids == {0, 7}


def test_labelmap_fixture_bytes(small_manifest):
    data = small_manifest.records[0].labelmap_ref.read_bytes()
    assert data[:4] == b"LSEG"
    assert struct.unpack("<II", data[4:12]) == (3, 2)
    assert struct.unpack("<6H", data[12:]) == (0, 0, 3, 5, 5, 65535)


def test_declared_absent_class_is_named(tmp_path):
    cats = FOUR_CATEGORIES + [{"id": 9, "name": "unicorn", "aliases": []}]
    path = write_manifest(tmp_path, cats, [("img1", [[0, 3]], [0, 3, 9])])
    with pytest.raises(ManifestError) as err:
        load_manifest(path)
    assert err.value.image_id == "img1"
    assert err.value.ids == [9]
    assert "img1" in str(err.value) and "9" in str(err.value)


def test_empty_image_list(tmp_path):
    m = load_manifest(write_manifest(tmp_path, FOUR_CATEGORIES, []))
    assert len(m.table) == 4 and m.records == ()


INVALID_MANIFESTS = {
    "duplicate id": (FOUR_CATEGORIES + [{"id": 0, "name": "x", "aliases": []}], [("i", [[0]], None)]),
    "undeclared pixel": (FOUR_CATEGORIES, [("i", [[0, 3]], [0])]),
    "unknown pixel id": (FOUR_CATEGORIES, [("i", [[0, 42]], [0])]),
    "unknown declared id": (FOUR_CATEGORIES, [("i", [[0]], [0, 42])]),
    "duplicate name": (FOUR_CATEGORIES + [{"id": 8, "name": "Sky", "aliases": []}], []),
    "duplicate image": (FOUR_CATEGORIES, [("i", [[0]], None), ("i", [[0]], None)]),
}


@pytest.mark.parametrize("case", sorted(INVALID_MANIFESTS))
def test_manifest_rejects(tmp_path, case):
    cats, images = INVALID_MANIFESTS[case]
    with pytest.raises(ManifestError):
        load_manifest(write_manifest(tmp_path, cats, images))


def test_manifest_rejects_bad_json_and_bad_labelmap(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ManifestError):
        load_manifest(bad)
    (tmp_path / "x.lseg").write_bytes(b"XXXX" + bytes(8))
    doc = {"categories": FOUR_CATEGORIES, "images": [{"id": "x", "labelmap": "x.lseg", "present": []}]}
    (tmp_path / "m.json").write_text(json.dumps(doc))
    with pytest.raises(ManifestError, match="magic"):
        load_manifest(tmp_path / "m.json")
    (tmp_path / "y.lseg").write_bytes(b"LSEG" + struct.pack("<II", 2, 2) + bytes(6))
    doc["images"] = [{"id": "y", "labelmap": "y.lseg", "present": []}]
    (tmp_path / "m.json").write_text(json.dumps(doc))
    with pytest.raises(ManifestError, match="bytes"):
        load_manifest(tmp_path / "m.json")


@settings(max_examples=50)
@given(arrays(np.uint16, st.tuples(st.integers(0, 12), st.integers(0, 12))))
def test_labelmap_bytes_roundtrip(arr):
    lmap = LabelMap.from_array(arr)
    back = LabelMap.from_bytes(lmap.to_bytes())
    assert back.width == lmap.width and back.height == lmap.height
    assert np.array_equal(back.pixels, arr)


def test_labelmap_file_roundtrip(tmp_path):
    from segquery.core import write_labelmap

    arr = np.array([[1, 2, IGNORE_ID]], dtype=np.uint16)
    write_labelmap(tmp_path / "m.lseg", LabelMap.from_array(arr))
    lm = read_labelmap(tmp_path / "m.lseg")
    assert np.array_equal(lm.pixels, arr)
    assert lm.present_ids() == {1, 2}


def test_rle_examples():
    assert rle_encode(BinaryMask.empty(2, 2)) == [4]
    m = BinaryMask.from_array([[0, 1], [1, 0]])
    assert rle_encode(m) == [1, 2, 1]
    assert rle_encode(BinaryMask.from_array([[1, 1]])) == [0, 2]
    assert rle_decode([1, 2, 1], 2, 2) == m
    assert rle_to_text([1, 2, 1]) == "1,2,1"
    assert rle_from_text("1,2,1") == [1, 2, 1]


def test_rle_decode_rejects_bad_sum():
    with pytest.raises(ValueError):
        rle_decode([1, 2], 2, 2)
    with pytest.raises(ValueError):
        rle_from_text("1,x")


def test_rle_random_16x16():
    rng = np.random.default_rng(0)
    for _ in range(20):
        m = BinaryMask.from_array(rng.random((16, 16)) < 0.5)
        assert rle_decode(rle_encode(m), 16, 16) == m


@given(arrays(bool, st.tuples(st.integers(1, 20), st.integers(1, 20))))
def test_rle_roundtrip_property(bits):
    m = BinaryMask.from_array(bits)
    runs = rle_encode(m)
    assert rle_decode(runs, m.width, m.height) == m
    assert sum(runs) == bits.size
    # only the leading run may be zero-length
    assert all(r > 0 for r in runs[1:])
