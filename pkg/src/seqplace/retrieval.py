"""Place database and exhaustive nearest-neighbor search.

Search is a brute-force scan with squared Euclidean distance, O(k*N) per
query.  The descriptors are too high-dimensional for space-partitioning
structures to pay off, so the scan IS the method; the kernel just keeps
storage contiguous and branch-free so it vectorizes.
"""

from __future__ import annotations

import struct
import time
from dataclasses import dataclass

import numpy as np

from .core import Traversal, atomic_write_bytes, windows
from .composers import SPW_MAGIC, Pipeline

KIND_INDEX = 3
_CHUNK = 8192  # rows per distance block; bounds temporary memory


class EmptyIndexError(Exception):
    pass


@dataclass(frozen=True)
class IndexEntry:
    descriptor: np.ndarray
    place_ids: tuple[int, ...]
    start_frame_id: int


@dataclass
class PlaceIndex:
    """Reference descriptors with their window place ids.

    Rows of `descriptors` are ordered by ascending start frame, which makes
    the first-minimum scan's tie-break (lowest start) fall out naturally.
    """

    descriptors: np.ndarray        # (N, k), contiguous
    start_frame_ids: np.ndarray    # (N,)
    place_ids: np.ndarray          # (N, n)
    condition_id: int = 0

    def __post_init__(self):
        self.descriptors = np.ascontiguousarray(self.descriptors)
        self.start_frame_ids = np.asarray(self.start_frame_ids, dtype=np.int64)
        self.place_ids = np.asarray(self.place_ids, dtype=np.int64)
        if self.descriptors.ndim != 2:
            raise ValueError("descriptors must be a (N, k) matrix")
        if len(self.start_frame_ids) != len(self.descriptors):
            raise ValueError("start_frame_ids length must match descriptor count")
        if self.place_ids.shape[0] != len(self.descriptors):
            raise ValueError("place_ids row count must match descriptor count")
        if len(self.start_frame_ids) > 1 and (np.diff(self.start_frame_ids) < 0).any():
            raise ValueError("entries must be ordered by ascending start frame")

    def __len__(self) -> int:
        return len(self.descriptors)

    @property
    def dim(self) -> int:
        return self.descriptors.shape[1]

    def entry(self, i: int) -> IndexEntry:
        return IndexEntry(
            descriptor=self.descriptors[i],
            place_ids=tuple(int(p) for p in self.place_ids[i]),
            start_frame_id=int(self.start_frame_ids[i]),
        )


def build_index(trav: Traversal, pipeline: Pipeline, stride: int = 1) -> PlaceIndex:
    """One entry per n-frame window of the reference traversal."""
    n = pipeline.n
    if len(trav) < n:
        raise ValueError(f"traversal has {len(trav)} frames, composer needs {n}")
    starts = np.asarray(list(windows(len(trav), n, stride)), dtype=np.int64)
    wins = np.stack([trav.features[s:s + n] for s in starts]).astype(np.float64)
    descs = pipeline.describe_batch(wins)
    pids = np.stack([trav.place_ids[s:s + n] for s in starts])
    return PlaceIndex(descs, starts, pids, trav.condition_id)


def nn_scan(descriptors: np.ndarray, q: np.ndarray) -> tuple[int, float]:
    """Index and squared distance of the first minimum in a row scan."""
    best_i = -1
    best_d = np.inf
    n = len(descriptors)
    for lo in range(0, n, _CHUNK):
        block = descriptors[lo:lo + _CHUNK]
        diff = block - q
        d2 = np.einsum("ij,ij->i", diff, diff)
        i = int(np.argmin(d2))
        if d2[i] < best_d:  # strict: keeps the lowest qualifying row
            best_d = float(d2[i])
            best_i = lo + i
    return best_i, best_d


def query_nn(index: PlaceIndex, q: np.ndarray) -> tuple[IndexEntry, float]:
    """Exhaustive scan for the entry minimizing squared Euclidean distance.

    Ties break to the entry with the lowest start frame id.
    """
    if len(index) == 0:
        raise EmptyIndexError("cannot query an empty index")
    q = np.asarray(q, dtype=index.descriptors.dtype)
    if q.shape != (index.dim,):
        raise ValueError(f"query has shape {q.shape}, index holds dimension {index.dim}")
    i, d2 = nn_scan(index.descriptors, q)
    return index.entry(i), d2


# ---------------------------------------------------------------------------
# persistence: same container family as parameter checkpoints, kind tag 3


def save_index(path: str, index: PlaceIndex) -> None:
    n = index.place_ids.shape[1]
    out = bytearray(SPW_MAGIC)
    out += struct.pack("<BIIII", KIND_INDEX, index.dim, len(index), n, index.condition_id)
    out += index.start_frame_ids.astype("<u4").tobytes()
    out += index.place_ids.astype("<u4").tobytes()
    out += index.descriptors.astype("<f4").tobytes()
    atomic_write_bytes(path, bytes(out))


def load_index(path: str) -> PlaceIndex:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 21 or raw[:4] != SPW_MAGIC:
        raise ValueError(f"{path}: not an index file (bad magic)")
    kind, k, count, n, condition_id = struct.unpack_from("<BIIII", raw, 4)
    if kind != KIND_INDEX:
        raise ValueError(f"{path}: kind tag {kind} is not an index")
    off = 21
    starts = np.frombuffer(raw, dtype="<u4", count=count, offset=off).astype(np.int64)
    off += 4 * count
    pids = np.frombuffer(raw, dtype="<u4", count=count * n, offset=off)
    pids = pids.astype(np.int64).reshape(count, n)
    off += 4 * count * n
    descs = np.frombuffer(raw, dtype="<f4", count=count * k, offset=off)
    descs = descs.astype(np.float64).reshape(count, k)
    return PlaceIndex(descs, starts, pids, int(condition_id))


# ---------------------------------------------------------------------------
# timing harness


@dataclass(frozen=True)
class BenchResult:
    k: int
    N: int
    trials: int
    mean_ms: float
    stddev_ms: float


def bench_search(k: int, N: int, trials: int = 10, seed: int = 0,
                 dtype=np.float32) -> BenchResult:
    """Wall time of query_nn on a synthetic random database.

    One query at a time (single-query latency); mean and population stddev
    over `trials` fresh queries against the same database.
    """
    if k < 1 or N < 1 or trials < 1:
        raise ValueError("k, N and trials must all be >= 1")
    rng = np.random.default_rng(seed)
    descs = rng.standard_normal((N, k)).astype(dtype)
    index = PlaceIndex(descs, np.arange(N), np.arange(N)[:, None])
    queries = rng.standard_normal((trials + 1, k)).astype(dtype)
    query_nn(index, queries[0])  # warm-up: page in the database
    times = np.zeros(trials)
    for t in range(trials):
        t0 = time.perf_counter()
        query_nn(index, queries[t + 1])
        times[t] = time.perf_counter() - t0
    return BenchResult(k, N, trials,
                       float(times.mean() * 1e3), float(times.std() * 1e3))


def bench_grid(ks, ns, trials: int = 10, seed: int = 0) -> list[BenchResult]:
    return [bench_search(k, n, trials, seed) for k in ks for n in ns]


def bench_csv(results) -> str:
    lines = ["k,N,trials,mean_ms,stddev_ms"]
    for r in results:
        lines.append(f"{r.k},{r.N},{r.trials},{r.mean_ms!r},{r.stddev_ms!r}")
    return "\n".join(lines) + "\n"
