"""Seeded synthetic manifests for end-to-end runs and tests."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Optional

import numpy as np

from .core import IGNORE_ID, LabelMap, load_manifest, write_labelmap, Manifest

DEFAULT_NAMES = (
    "sky", "road", "person", "car", "tree", "building", "grass", "cat",
    "dog", "traffic light", "water", "bicycle", "bench", "mountain", "sand", "boat",
)


def make_synthetic_manifest(out_dir, n_images: int = 10, size: int = 32, n_classes: int = 12,
                            seed: int = 0, max_present: Optional[int] = None,
                            ignore_frac: float = 0.05) -> Path:
    """Write label maps plus ``manifest.json`` under ``out_dir`` and return the manifest path.

    Each image holds a uniformly drawn number (1..max_present) of uniformly drawn
    classes laid out as random blobs, with a sprinkle of ignore pixels.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    names = [DEFAULT_NAMES[i] if i < len(DEFAULT_NAMES) else f"class {i}" for i in range(n_classes)]
    max_present = max_present or n_classes
    ids = np.arange(n_classes)

    images = []
    for i in range(n_images):
        k = int(rng.integers(1, max_present + 1))
        present = np.sort(rng.choice(ids, size=k, replace=False))
        # coarse random grid upsampled so classes form contiguous regions
        cell = max(1, size // 8)
        coarse = rng.choice(present, size=(-(-size // cell),) * 2)
        pixels = np.kron(coarse, np.ones((cell, cell), dtype=np.int64))[:size, :size]
        # guarantee every chosen class occupies at least one pixel
        flat = pixels.reshape(-1)
        slots = rng.choice(flat.size, size=k, replace=False)
        flat[slots] = present
        ignore = rng.random(flat.size) < ignore_frac
        ignore[slots] = False
        flat[ignore] = IGNORE_ID
        lmap = LabelMap.from_array(flat.reshape(size, size))
        fname = f"img{i:04d}.lseg"
        write_labelmap(out_dir / fname, lmap)
        images.append({"id": f"img{i:04d}", "labelmap": fname, "present": sorted(lmap.present_ids())})

    doc = {"categories": [{"id": int(c), "name": n, "aliases": []} for c, n in zip(ids, names)],
           "images": images}
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(doc, indent=2))
    return path


def synthetic_manifest(out_dir, **kwargs) -> Manifest:
    return load_manifest(make_synthetic_manifest(out_dir, **kwargs))
