import json

import numpy as np
import pytest

from segquery.core import LabelMap, load_manifest, write_labelmap
from segquery.synthetic import make_synthetic_manifest


def write_manifest(tmp_path, categories, images):
    """images: list of (image_id, 2-D id array, declared present list or None)."""
    entries = []
    for image_id, arr, present in images:
        lmap = LabelMap.from_array(np.asarray(arr, dtype=np.uint16))
        write_labelmap(tmp_path / f"{image_id}.lseg", lmap)
        if present is None:
            present = sorted(lmap.present_ids())
        entries.append({"id": image_id, "labelmap": f"{image_id}.lseg", "present": present})
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps({"categories": categories, "images": entries}))
    return path


FOUR_CATEGORIES = [
    {"id": 0, "name": "sky", "aliases": []},
    {"id": 3, "name": "person", "aliases": ["human"]},
    {"id": 5, "name": "road", "aliases": []},
    {"id": 7, "name": "television", "aliases": ["tv monitor"]},
]


@pytest.fixture
def small_manifest_path(tmp_path):
    return write_manifest(tmp_path, FOUR_CATEGORIES, [
        ("a", [[0, 0, 3], [5, 5, 65535]], None),
        ("b", [[7, 7], [7, 0]], None),
    ])


@pytest.fixture
def small_manifest(small_manifest_path):
    return load_manifest(small_manifest_path)


@pytest.fixture(scope="session")
def synth_path(tmp_path_factory):
    return make_synthetic_manifest(tmp_path_factory.mktemp("synth"), n_images=10, size=32,
                                   n_classes=12, seed=0)


@pytest.fixture(scope="session")
def synth(synth_path):
    return load_manifest(synth_path)


ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
