"""Domain types, the same-place convention and the binary feature store.

A dataset is a set of traversals, one per condition (season, day/night, ...).
Each traversal is an ordered run of per-frame feature vectors of a fixed
dimension plus a place id per frame.  For freshly generated or exported data
the place id of frame ``i`` is simply ``i``; perturbations (reversal, speed
changes) reorder or drop frames but keep the original place ids, so ground
truth stays content-based.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

SPF_MAGIC = b"SPF1"
_HEADER = struct.Struct("<4sIII")  # magic, dim, count, condition_id


class StoreError(Exception):
    """Base class for feature store load/validation failures."""


class HeaderError(StoreError):
    pass


class TruncationError(StoreError):
    pass


class DimensionError(StoreError):
    pass


class NonFiniteError(StoreError):
    pass


@dataclass(frozen=True)
class PlaceConvention:
    """Frames i and j depict the same place iff |i - j| <= tolerance."""

    tolerance: int = 0

    def __post_init__(self):
        if self.tolerance < 0:
            raise ValueError(f"tolerance must be >= 0, got {self.tolerance}")


@dataclass(frozen=True)
class FeatureFrame:
    frame_id: int
    condition_id: int
    features: np.ndarray

    def __post_init__(self):
        if self.frame_id < 0:
            raise ValueError(f"frame_id must be >= 0, got {self.frame_id}")
        if not np.all(np.isfinite(self.features)):
            raise ValueError(f"frame {self.frame_id}: non-finite feature values")


@dataclass(frozen=True)
class QuerySequence:
    """An ordered window of frames from a single traversal."""

    frames: tuple[FeatureFrame, ...]

    def __post_init__(self):
        if not self.frames:
            raise ValueError("query sequence must contain at least one frame")
        cond = self.frames[0].condition_id
        if any(f.condition_id != cond for f in self.frames):
            raise ValueError("all frames of a query sequence must share a condition")

    @property
    def condition_id(self) -> int:
        return self.frames[0].condition_id

    @property
    def frame_ids(self) -> tuple[int, ...]:
        return tuple(f.frame_id for f in self.frames)

    def matrix(self) -> np.ndarray:
        return np.stack([f.features for f in self.frames])


def same_place_ids(ids1: Iterable[int], ids2: Iterable[int], tolerance: int) -> bool:
    """True iff some id of ids1 lies within `tolerance` of some id of ids2."""
    a = np.asarray(list(ids1), dtype=np.int64)
    b = np.asarray(list(ids2), dtype=np.int64)
    if a.size == 0 or b.size == 0:
        return False
    return bool((np.abs(a[:, None] - b[None, :]) <= tolerance).any())


def same_place(q1: QuerySequence, q2: QuerySequence, conv: PlaceConvention) -> bool:
    """Two query sequences match iff they contain two frames, one per
    sequence, whose ids fall in the same place set.  Symmetric."""
    return same_place_ids(q1.frame_ids, q2.frame_ids, conv.tolerance)


@dataclass
class Traversal:
    """One condition's run of frames.

    `features` has shape (length, dim) and dtype float32; `place_ids[t]` is
    the place identity of the frame at position t (equal to t unless the
    traversal was perturbed).
    """

    condition_id: int
    features: np.ndarray
    place_ids: np.ndarray = field(default=None)  # type: ignore[assignment]
    name: str = ""

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float32)
        if self.features.ndim != 2:
            raise ValueError("features must be a (length, dim) matrix")
        if self.place_ids is None:
            self.place_ids = np.arange(len(self.features), dtype=np.int64)
        else:
            self.place_ids = np.asarray(self.place_ids, dtype=np.int64)
        if len(self.place_ids) != len(self.features):
            raise ValueError("place_ids length must match frame count")
        if not self.name:
            self.name = f"condition{self.condition_id}"

    def __len__(self) -> int:
        return len(self.features)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def frame(self, position: int) -> FeatureFrame:
        return FeatureFrame(position, self.condition_id, self.features[position])

    def window(self, start: int, n: int) -> QuerySequence:
        if start < 0 or start + n > len(self):
            raise IndexError(f"window [{start}, {start + n}) out of range")
        return QuerySequence(tuple(self.frame(start + t) for t in range(n)))

    def window_place_ids(self, start: int, n: int) -> tuple[int, ...]:
        return tuple(int(p) for p in self.place_ids[start:start + n])


@dataclass
class FeatureStore:
    """Read-only collection of traversals sharing one feature dimension."""

    dim: int
    traversals: dict[int, Traversal] = field(default_factory=dict)
    convention: PlaceConvention = field(default_factory=PlaceConvention)

    def __post_init__(self):
        for cond, trav in self.traversals.items():
            if trav.dim != self.dim:
                raise DimensionError(
                    f"condition {cond}: dimension {trav.dim} != store dimension {self.dim}"
                )

    @property
    def condition_ids(self) -> list[int]:
        return list(self.traversals.keys())

    def get(self, condition_id: int) -> Traversal:
        if condition_id not in self.traversals:
            raise KeyError(f"unknown condition {condition_id}")
        return self.traversals[condition_id]

    def add(self, trav: Traversal) -> None:
        if trav.dim != self.dim:
            raise DimensionError(
                f"condition {trav.condition_id}: dimension {trav.dim} != store dimension {self.dim}"
            )
        self.traversals[trav.condition_id] = trav

    def replace(self, trav: Traversal) -> "FeatureStore":
        """New store with one traversal swapped out; shares the others."""
        travs = dict(self.traversals)
        if trav.condition_id not in travs:
            raise KeyError(f"unknown condition {trav.condition_id}")
        travs[trav.condition_id] = trav
        return FeatureStore(self.dim, travs, self.convention)


def atomic_write_bytes(path: str, data: bytes) -> None:
    """Write via a temp file in the same directory + rename."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def write_feature_file(path: str, trav: Traversal) -> None:
    """Serialize one traversal in the binary feature format.

    Layout (little-endian): magic "SPF1", u32 dim, u32 count, u32 condition
    id, then `count` records of (u32 frame_id, dim x f32).  Frame ids are the
    positions 0..count-1.
    """
    count, dim = trav.features.shape
    out = bytearray(_HEADER.pack(SPF_MAGIC, dim, count, trav.condition_id))
    record = np.empty(count, dtype=_record_dtype(dim))
    record["frame_id"] = np.arange(count, dtype=np.uint32)
    record["features"] = trav.features
    out += record.tobytes()
    atomic_write_bytes(path, bytes(out))


def _record_dtype(dim: int) -> np.dtype:
    return np.dtype([("frame_id", "<u4"), ("features", "<f4", (dim,))])


def load_feature_file(path: str) -> Traversal:
    """Load one traversal, validating the header and every record.

    Raises HeaderError / TruncationError / NonFiniteError naming the byte
    offset or record at fault.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise HeaderError(
            f"{path}: file has {len(raw)} bytes, header needs {_HEADER.size}"
        )
    magic, dim, count, condition_id = _HEADER.unpack_from(raw, 0)
    if magic != SPF_MAGIC:
        raise HeaderError(f"{path}: bad magic {magic!r} at offset 0")
    if dim == 0:
        raise HeaderError(f"{path}: header declares dimension 0")
    rec_dtype = _record_dtype(dim)
    body = raw[_HEADER.size:]
    expected = count * rec_dtype.itemsize
    if len(body) != expected:
        raise TruncationError(
            f"{path}: header declares {count} records ({expected} bytes), "
            f"found {len(body)} bytes after offset {_HEADER.size}"
        )
    records = np.frombuffer(body, dtype=rec_dtype)
    features = records["features"]
    bad = ~np.isfinite(features)
    if bad.any():
        rec = int(np.nonzero(bad.any(axis=1))[0][0])
        raise NonFiniteError(f"{path}: non-finite feature value in record {rec}")
    frame_ids = records["frame_id"].astype(np.int64)
    if count and (np.diff(frame_ids) <= 0).any():
        rec = int(np.nonzero(np.diff(frame_ids) <= 0)[0][0]) + 1
        raise HeaderError(f"{path}: frame ids not strictly ascending at record {rec}")
    return Traversal(int(condition_id), features.copy(), name="")


def validate_traversal(trav: Traversal) -> list[str]:
    """Non-fatal findings for an already loadable traversal."""
    warnings = []
    ids = trav.place_ids
    if len(ids) and ids[0] != 0:
        warnings.append(f"condition {trav.condition_id}: first frame id is {ids[0]}, not 0")
    gaps = np.nonzero(np.diff(ids) != 1)[0]
    for g in gaps:
        warnings.append(
            f"condition {trav.condition_id}: frame id gap between "
            f"records {g} and {g + 1} ({int(ids[g])} -> {int(ids[g + 1])})"
        )
    return warnings


def write_manifest(path: str, store: FeatureStore, files: dict[int, str],
                   ground_truth: str | None = None) -> None:
    """Sidecar manifest listing the per-condition files and the convention."""
    doc = {
        "format": "spf-manifest/1",
        "dim": store.dim,
        "tolerance": store.convention.tolerance,
        "conditions": [
            {"id": cond, "name": store.get(cond).name, "file": files[cond]}
            for cond in store.condition_ids
        ],
    }
    if ground_truth is not None:
        doc["ground_truth"] = ground_truth
    atomic_write_text(path, json.dumps(doc, indent=2) + "\n")


def write_ground_truth(path: str, store: FeatureStore) -> None:
    doc = {
        "format": "spf-ground-truth/1",
        "conditions": {
            str(cond): [int(p) for p in store.get(cond).place_ids]
            for cond in store.condition_ids
        },
    }
    atomic_write_text(path, json.dumps(doc, indent=2) + "\n")


def write_store(out_dir: str, store: FeatureStore,
                manifest_name: str = "manifest.json") -> str:
    """Write all traversals + manifest + ground truth; returns manifest path."""
    os.makedirs(out_dir, exist_ok=True)
    files = {}
    for cond in store.condition_ids:
        fname = f"{store.get(cond).name}.spf"
        write_feature_file(os.path.join(out_dir, fname), store.get(cond))
        files[cond] = fname
    write_ground_truth(os.path.join(out_dir, "ground_truth.json"), store)
    manifest_path = os.path.join(out_dir, manifest_name)
    write_manifest(manifest_path, store, files, ground_truth="ground_truth.json")
    return manifest_path


def load_feature_store(path: str) -> FeatureStore:
    """Load a store from a manifest (JSON) or a single feature file.

    Frames come back in ascending frame id per condition; the dimension is
    read from the headers and must agree across files.
    """
    if path.endswith(".json"):
        return _load_from_manifest(path)
    trav = load_feature_file(path)
    return FeatureStore(trav.dim, {trav.condition_id: trav})


def _load_from_manifest(path: str) -> FeatureStore:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise HeaderError(f"{path}: manifest is not valid JSON ({exc})") from exc
    for key in ("dim", "conditions"):
        if key not in doc:
            raise HeaderError(f"{path}: manifest missing '{key}'")
    base = os.path.dirname(os.path.abspath(path))
    tolerance = int(doc.get("tolerance", 0))
    gt = None
    if doc.get("ground_truth"):
        with open(os.path.join(base, doc["ground_truth"]), "r", encoding="utf-8") as fh:
            gt = json.load(fh).get("conditions", {})
    traversals = {}
    for entry in doc["conditions"]:
        trav = load_feature_file(os.path.join(base, entry["file"]))
        trav.condition_id = int(entry["id"])
        trav.name = entry.get("name", "") or trav.name
        if trav.dim != int(doc["dim"]):
            raise DimensionError(
                f"{entry['file']}: dimension {trav.dim} != manifest dimension {doc['dim']}"
            )
        if gt is not None and str(trav.condition_id) in gt:
            ids = gt[str(trav.condition_id)]
            if len(ids) != len(trav):
                raise DimensionError(
                    f"{entry['file']}: ground truth lists {len(ids)} frames, file has {len(trav)}"
                )
            trav.place_ids = np.asarray(ids, dtype=np.int64)
        traversals[trav.condition_id] = trav
    return FeatureStore(int(doc["dim"]), traversals, PlaceConvention(tolerance))


def windows(length: int, n: int, stride: int = 1) -> Sequence[int]:
    """Start positions of every n-frame window at the given stride."""
    if n < 1 or stride < 1:
        raise ValueError("n and stride must be >= 1")
    return range(0, length - n + 1, stride)
