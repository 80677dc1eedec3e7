"""Sequence-matching baseline: distance matrix, local contrast
enhancement and a constant-velocity line search.

The matcher assumes the query and reference traversals advance at a
linearly related speed; it scores straight lines through the enhanced
distance matrix and picks the cheapest one.  That assumption is exactly
what the reverse / random-speed experiments break.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import PlaceConvention, Traversal, same_place_ids

EPS = 1e-9


class NoMatchError(Exception):
    """Reference too short for any feasible line."""


def build_difference_matrix(query_frames: np.ndarray, reference_frames: np.ndarray
                            ) -> np.ndarray:
    """D[q, r] = squared Euclidean distance between frame features."""
    Q = np.asarray(query_frames, dtype=np.float64)
    R = np.asarray(reference_frames, dtype=np.float64)
    if Q.ndim != 2 or R.ndim != 2:
        raise ValueError("inputs must be (count, dim) matrices")
    if Q.shape[0] == 0 or R.shape[0] == 0:
        raise ValueError("inputs must be non-empty")
    if Q.shape[1] != R.shape[1]:
        raise ValueError(f"feature dimensions differ: {Q.shape[1]} vs {R.shape[1]}")
    d2 = (Q * Q).sum(axis=1)[:, None] + (R * R).sum(axis=1)[None, :] - 2.0 * (Q @ R.T)
    return np.maximum(d2, 0.0)


def contrast_enhance(D: np.ndarray, window: int) -> np.ndarray:
    """Standardize each entry against its column's local statistics.

    The window is a fixed-length span of `window` rows, centered when
    possible and clamped at the column ends; entries become
    (D - mean) / (stddev + eps) with population stddev.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    D = np.asarray(D, dtype=np.float64)
    Q = D.shape[0]
    if Q <= window:
        mean = D.mean(axis=0, keepdims=True)
        std = D.std(axis=0, keepdims=True)
        return (D - mean) / (std + EPS)
    starts = np.clip(np.arange(Q) - window // 2, 0, Q - window)
    csum = np.vstack([np.zeros((1, D.shape[1])), np.cumsum(D, axis=0)])
    csum2 = np.vstack([np.zeros((1, D.shape[1])), np.cumsum(D * D, axis=0)])
    win_sum = csum[starts + window] - csum[starts]
    win_sum2 = csum2[starts + window] - csum2[starts]
    mean = win_sum / window
    var = np.maximum(win_sum2 / window - mean * mean, 0.0)
    return (D - mean) / (np.sqrt(var) + EPS)


@dataclass(frozen=True)
class MatchResult:
    ref_index: int
    score: float
    velocity: float


def _line_columns(v: float, seq_len: int) -> np.ndarray:
    # round half up, so column steps are reproducible across platforms
    t = np.arange(seq_len, dtype=np.float64)
    return np.floor(v * t + 0.5).astype(np.int64)


def match_sequence(Dhat: np.ndarray, q_start: int, seq_len: int,
                   v_min: float = 0.8, v_max: float = 1.2, v_steps: int = 5
                   ) -> MatchResult:
    """Best constant-velocity line through Dhat starting at query row q_start.

    For each reference start r and velocity v the score is the mean of
    Dhat[q_start + t, round(r + v*t)] over t in [0, seq_len); lines leaving
    the reference are skipped.  Returns the reference start of the global
    minimum, ties to the lowest r.
    """
    Dhat = np.asarray(Dhat, dtype=np.float64)
    Q, R = Dhat.shape
    if not 0 < v_min <= v_max:
        raise ValueError(f"need 0 < v_min <= v_max, got [{v_min}, {v_max}]")
    if v_steps < 1:
        raise ValueError("v_steps must be >= 1")
    if q_start < 0 or q_start + seq_len > Q:
        raise ValueError(f"query rows [{q_start}, {q_start + seq_len}) out of range")
    velocities = np.linspace(v_min, v_max, v_steps) if v_steps > 1 else np.array([v_min])
    rows = q_start + np.arange(seq_len)
    best_per_r = np.full(R, np.inf)
    best_v_per_r = np.zeros(R)
    for v in velocities:
        cols = _line_columns(float(v), seq_len)
        max_r = R - 1 - int(cols[-1])
        if max_r < 0:
            continue
        r = np.arange(max_r + 1)
        scores = Dhat[rows[None, :], r[:, None] + cols[None, :]].mean(axis=1)
        better = scores < best_per_r[:max_r + 1]
        best_v_per_r[:max_r + 1][better] = v
        best_per_r[:max_r + 1][better] = scores[better]
    if not np.isfinite(best_per_r).any():
        raise NoMatchError(
            f"no line of length {seq_len} fits a reference of {R} frames"
        )
    r_best = int(np.argmin(best_per_r))  # first minimum = lowest r
    return MatchResult(r_best, float(best_per_r[r_best]), float(best_v_per_r[r_best]))


@dataclass
class SeqslamMatch:
    query_start: int
    ref_start: int
    score: float
    velocity: float
    correct: bool


@dataclass
class SeqslamReport:
    matches: list[SeqslamMatch]
    precision: float


def run_seqslam(query: Traversal, reference: Traversal, convention: PlaceConvention,
                seq_len: int = 3, v_min: float = 0.8, v_max: float = 1.2,
                v_steps: int = 5, enhance_window: int = 10) -> SeqslamReport:
    """Full baseline: matrix, enhancement, line search over every query
    start, scored against the same-place convention."""
    D = build_difference_matrix(query.features, reference.features)
    Dhat = contrast_enhance(D, enhance_window)
    matches = []
    correct = 0
    for q_start in range(len(query) - seq_len + 1):
        m = match_sequence(Dhat, q_start, seq_len, v_min, v_max, v_steps)
        cols = m.ref_index + _line_columns(m.velocity, seq_len)
        q_ids = query.place_ids[q_start:q_start + seq_len]
        r_ids = reference.place_ids[cols]
        ok = same_place_ids(q_ids, r_ids, convention.tolerance)
        correct += ok
        matches.append(SeqslamMatch(q_start, m.ref_index, m.score, m.velocity, ok))
    if not matches:
        raise NoMatchError(f"query traversal shorter than seq_len={seq_len}")
    return SeqslamReport(matches, correct / len(matches))
