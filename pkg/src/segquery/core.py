"""Domain types, manifest ingestion and the on-disk label-map / RLE formats."""
from __future__ import annotations

import json
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

IGNORE_ID = 65535
LABELMAP_MAGIC = b"LSEG"

# characters that would collide with the query/response grammar
_RESERVED_CHARS = (",", "<", ">")
_WS_RUN = re.compile(r"\s+")


class ManifestError(ValueError):
    """Raised when a manifest or label map violates an ingestion invariant."""

    def __init__(self, message: str, image_id: Optional[str] = None, ids: Sequence[int] = ()):
        self.image_id = image_id
        self.ids = sorted(ids)
        if image_id is not None:
            message = f"image {image_id!r}: {message}"
        if self.ids:
            message = f"{message} (ids: {', '.join(map(str, self.ids))})"
        super().__init__(message)


def normalize_name(raw: str) -> str:
    return _WS_RUN.sub(" ", raw.strip()).lower()


@dataclass(frozen=True)
class Category:
    id: int
    name: str
    aliases: tuple[str, ...] = ()


class CategoryTable:
    """Ordered registry of classes; entry order is the dataset canonical order."""

    def __init__(self, entries: Iterable[Category]):
        self.entries: tuple[Category, ...] = tuple(entries)
        self._by_id: dict[int, Category] = {}
        self._by_name: dict[str, int] = {}
        self._by_alias: dict[str, int] = {}
        for cat in self.entries:
            if not isinstance(cat.id, int) or not 0 <= cat.id < IGNORE_ID:
                raise ManifestError(f"category id out of range: {cat.id!r}", ids=[])
            if cat.id in self._by_id:
                raise ManifestError("duplicate category id", ids=[cat.id])
            name = normalize_name(cat.name)
            if not name:
                raise ManifestError("empty category name", ids=[cat.id])
            if any(ch in name for ch in _RESERVED_CHARS):
                raise ManifestError(f"category name {cat.name!r} contains a reserved character", ids=[cat.id])
            if name in self._by_name:
                raise ManifestError(f"duplicate category name {name!r}", ids=[self._by_name[name], cat.id])
            self._by_id[cat.id] = cat
            self._by_name[name] = cat.id
        for cat in self.entries:
            for alias in cat.aliases:
                key = normalize_name(alias)
                if not key or key in self._by_name:
                    continue
                other = self._by_alias.setdefault(key, cat.id)
                if other != cat.id:
                    raise ManifestError(f"alias {key!r} maps to two categories", ids=[other, cat.id])

    @classmethod
    def from_names(cls, names: Sequence[str]) -> "CategoryTable":
        return cls(Category(i, n) for i, n in enumerate(names))

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, class_id: int) -> bool:
        return class_id in self._by_id

    @property
    def ids(self) -> list[int]:
        return [c.id for c in self.entries]

    def name(self, class_id: int) -> str:
        return self._by_id[class_id].name

    def canonical_rank(self, class_id: int) -> int:
        return self.ids.index(class_id)

    def resolve(self, raw: str) -> tuple[Optional[int], str]:
        """Return ``(id, kind)`` where kind is ``exact``, ``alias`` or ``none``."""
        key = normalize_name(raw)
        if key in self._by_name:
            return self._by_name[key], "exact"
        if key in self._by_alias:
            return self._by_alias[key], "alias"
        return None, "none"


def resolve_category(table: CategoryTable, raw: str) -> tuple[Optional[int], str]:
    return table.resolve(raw)


@dataclass(frozen=True)
class LabelMap:
    width: int
    height: int
    pixels: np.ndarray  # (height, width) uint16

    def __post_init__(self):
        pixels = np.asarray(self.pixels, dtype=np.uint16)
        if pixels.shape != (self.height, self.width):
            raise ValueError(f"label map shape {pixels.shape} != ({self.height}, {self.width})")
        pixels = pixels.copy()
        pixels.flags.writeable = False
        object.__setattr__(self, "pixels", pixels)

    @classmethod
    def from_array(cls, arr) -> "LabelMap":
        arr = np.asarray(arr, dtype=np.uint16)
        return cls(width=arr.shape[1], height=arr.shape[0], pixels=arr)

    def present_ids(self) -> set[int]:
        ids = np.unique(self.pixels)
        return {int(i) for i in ids if i != IGNORE_ID}

    def class_mask(self, class_id: int) -> "BinaryMask":
        return BinaryMask.from_array(self.pixels == class_id)

    def to_bytes(self) -> bytes:
        header = LABELMAP_MAGIC + struct.pack("<II", self.width, self.height)
        return header + self.pixels.astype("<u2").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "LabelMap":
        if len(data) < 12 or data[:4] != LABELMAP_MAGIC:
            raise ManifestError("label map missing LSEG magic")
        width, height = struct.unpack_from("<II", data, 4)
        expected = 12 + 2 * width * height
        if len(data) != expected:
            raise ManifestError(f"label map has {len(data)} bytes, expected {expected}")
        pixels = np.frombuffer(data, dtype="<u2", offset=12).reshape(height, width)
        return cls(width=width, height=height, pixels=pixels)


def write_labelmap(path, labelmap: LabelMap) -> None:
    Path(path).write_bytes(labelmap.to_bytes())


def read_labelmap(path) -> LabelMap:
    return LabelMap.from_bytes(Path(path).read_bytes())


@dataclass(frozen=True)
class BinaryMask:
    width: int
    height: int
    bits: np.ndarray  # (height, width) bool

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=bool)
        if bits.shape != (self.height, self.width):
            raise ValueError(f"mask shape {bits.shape} != ({self.height}, {self.width})")
        bits = bits.copy()
        bits.flags.writeable = False
        object.__setattr__(self, "bits", bits)

    @classmethod
    def from_array(cls, arr) -> "BinaryMask":
        arr = np.asarray(arr, dtype=bool)
        return cls(width=arr.shape[1], height=arr.shape[0], bits=arr)

    @classmethod
    def empty(cls, width: int, height: int) -> "BinaryMask":
        return cls(width, height, np.zeros((height, width), dtype=bool))

    def __eq__(self, other):
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return (self.width, self.height) == (other.width, other.height) and np.array_equal(self.bits, other.bits)

    def __hash__(self):
        return hash((self.width, self.height, self.bits.tobytes()))


def rle_encode(mask: BinaryMask) -> list[int]:
    """Alternating run lengths over the row-major bits, starting with a 0-run."""
    flat = mask.bits.ravel()
    if flat.size == 0:
        return [0]
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs.insert(0, 0)
    return runs


def rle_decode(runs: Sequence[int], width: int, height: int) -> BinaryMask:
    runs = [int(r) for r in runs]
    if any(r < 0 for r in runs):
        raise ValueError("negative run length")
    if sum(runs) != width * height:
        raise ValueError(f"run lengths sum to {sum(runs)}, expected {width * height}")
    values = np.arange(len(runs)) % 2 == 1
    flat = np.repeat(values, runs)
    return BinaryMask(width, height, flat.reshape(height, width))


def rle_to_text(runs: Sequence[int]) -> str:
    return ",".join(str(r) for r in runs)


def rle_from_text(text: str) -> list[int]:
    text = text.strip()
    if not text:
        raise ValueError("empty RLE string")
    try:
        return [int(tok) for tok in text.split(",")]
    except ValueError as exc:
        raise ValueError(f"malformed RLE string {text!r}") from exc


@dataclass(frozen=True)
class ImageRecord:
    image_id: str
    labelmap_ref: Path
    present_ids: frozenset[int] = field(default_factory=frozenset)

    def load_labelmap(self) -> LabelMap:
        return read_labelmap(self.labelmap_ref)


@dataclass(frozen=True)
class Manifest:
    table: CategoryTable
    records: tuple[ImageRecord, ...]
    path: Optional[Path] = None

    def record(self, image_id: str) -> ImageRecord:
        for rec in self.records:
            if rec.image_id == image_id:
                return rec
        raise KeyError(image_id)


def _require(cond: bool, message: str, image_id: Optional[str] = None, ids: Sequence[int] = ()):
    if not cond:
        raise ManifestError(message, image_id=image_id, ids=ids)


def parse_manifest(doc: dict, base_dir: Path) -> Manifest:
    _require(isinstance(doc, dict), "manifest must be a JSON object")
    _require(isinstance(doc.get("categories"), list), "manifest 'categories' must be a list")
    _require(isinstance(doc.get("images"), list), "manifest 'images' must be a list")

    cats = []
    for raw in doc["categories"]:
        _require(isinstance(raw, dict) and "id" in raw and "name" in raw, f"malformed category entry {raw!r}")
        _require(isinstance(raw["id"], int) and not isinstance(raw["id"], bool), f"category id must be int: {raw!r}")
        _require(isinstance(raw["name"], str), f"category name must be str: {raw!r}")
        aliases = raw.get("aliases", [])
        _require(isinstance(aliases, list) and all(isinstance(a, str) for a in aliases),
                 "aliases must be a list of strings", ids=[raw["id"]])
        cats.append(Category(raw["id"], raw["name"], tuple(aliases)))
    table = CategoryTable(cats)

    records = []
    seen = set()
    for raw in doc["images"]:
        _require(isinstance(raw, dict) and {"id", "labelmap", "present"} <= raw.keys(), f"malformed image entry {raw!r}")
        image_id = raw["id"]
        _require(isinstance(image_id, str) and image_id != "", f"image id must be a non-empty string: {image_id!r}")
        _require(image_id not in seen, "duplicate image id", image_id=image_id)
        seen.add(image_id)
        declared = raw["present"]
        _require(isinstance(declared, list) and all(isinstance(i, int) for i in declared),
                 "'present' must be a list of ints", image_id=image_id)
        ref = Path(raw["labelmap"])
        if not ref.is_absolute():
            ref = base_dir / ref
        _require(ref.is_file(), f"label map not found: {ref}", image_id=image_id)
        try:
            lmap = read_labelmap(ref)
        except ManifestError as exc:
            raise ManifestError(str(exc), image_id=image_id) from exc

        actual = lmap.present_ids()
        unknown = actual - set(table.ids)
        _require(not unknown, "label map contains ids absent from the category table", image_id, unknown)
        undeclared_unknown = set(declared) - set(table.ids)
        _require(not undeclared_unknown, "declared present ids absent from the category table", image_id, undeclared_unknown)
        mismatch = actual.symmetric_difference(declared)
        _require(not mismatch, "declared present ids disagree with label map", image_id, mismatch)
        records.append(ImageRecord(image_id, ref, frozenset(actual)))
    return Manifest(table, tuple(records))


def load_manifest(path) -> Manifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"manifest is not valid JSON: {exc}") from exc
    manifest = parse_manifest(doc, path.parent)
    return Manifest(manifest.table, manifest.records, path)
