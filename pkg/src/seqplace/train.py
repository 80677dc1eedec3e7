"""Triplet training: hinge-ratio loss, sampling under the same-place
convention, and the SGD loop for the learnable composers.

The loss for descriptors (anchor a, positive p, negative n) is

    L = max(0, 1 - |a - n| / (m + |a - p|))

with Euclidean norms and margin m > 0.  It lives in [0, 1], is zero when
the negative is pushed m beyond the positive, and 1 when the negative
coincides with the anchor.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, fields
from typing import Sequence

import numpy as np

from .core import FeatureStore, PlaceConvention, QuerySequence, atomic_write_text
from .composers import (
    FusionParams,
    LstmParams,
    _lstm_backward_batch,
    _lstm_forward_batch,
)

COMPOSER_KINDS = ("grouping", "fusion", "recurrent")


class SamplingExhaustedError(Exception):
    """No valid positive or negative window exists for a drawn anchor."""


class TrainingDivergedError(Exception):
    def __init__(self, step: int, loss: float):
        super().__init__(f"non-finite loss {loss} at step {step}")
        self.step = step


# ---------------------------------------------------------------------------
# loss


def wl_loss(d_a: np.ndarray, d_p: np.ndarray, d_n: np.ndarray, m: float) -> float:
    d_a, d_p, d_n = (np.asarray(v, dtype=np.float64) for v in (d_a, d_p, d_n))
    if not (d_a.shape == d_p.shape == d_n.shape):
        raise ValueError(
            f"descriptor shapes differ: {d_a.shape}, {d_p.shape}, {d_n.shape}"
        )
    if m <= 0:
        raise ValueError(f"margin must be positive, got {m}")
    dist_n = float(np.linalg.norm(d_a - d_n))
    dist_p = float(np.linalg.norm(d_a - d_p))
    raw = 1.0 - dist_n / (m + dist_p)
    if not np.isfinite(raw):
        return raw  # propagate blown-up descriptors; max() would mask nan
    return max(0.0, raw)


def wl_loss_grad(d_a: np.ndarray, d_p: np.ndarray, d_n: np.ndarray, m: float
                 ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Exact gradient where differentiable; subgradient 0 at the hinge kink
    and at zero-norm singularities."""
    d_a, d_p, d_n = (np.asarray(v, dtype=np.float64) for v in (d_a, d_p, d_n))
    if not (d_a.shape == d_p.shape == d_n.shape):
        raise ValueError(
            f"descriptor shapes differ: {d_a.shape}, {d_p.shape}, {d_n.shape}"
        )
    if m <= 0:
        raise ValueError(f"margin must be positive, got {m}")
    zero = np.zeros_like(d_a)
    diff_n = d_a - d_n
    diff_p = d_a - d_p
    dist_n = float(np.linalg.norm(diff_n))
    dist_p = float(np.linalg.norm(diff_p))
    denom = m + dist_p
    if 1.0 - dist_n / denom <= 0.0:  # inactive hinge (kink included)
        return zero, zero.copy(), zero.copy()
    unit_n = diff_n / dist_n if dist_n > 0 else zero
    unit_p = diff_p / dist_p if dist_p > 0 else zero
    ratio = dist_n / denom ** 2
    g_a = -unit_n / denom + ratio * unit_p
    g_p = -ratio * unit_p
    g_n = unit_n / denom
    return g_a, g_p, g_n


# ---------------------------------------------------------------------------
# triplet sampling


@dataclass(frozen=True)
class Triplet:
    anchor: QuerySequence
    positive: QuerySequence
    negative: QuerySequence


@dataclass
class TrainConfig:
    margin: float = 0.1
    learning_rate: float = 1e-3
    epochs: int = 5
    triplets_per_epoch: int = 2000
    rng_seed: int = 0
    frame_substitution_prob: float = 0.5
    dropout_rate: float = 0.5
    n: int = 3
    descriptor_size: int = 128

    def __post_init__(self):
        if self.margin <= 0:
            raise ValueError("margin must be positive")
        if self.learning_rate < 0:  # zero allowed: a no-op run is well-defined
            raise ValueError("learning_rate must be non-negative")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.triplets_per_epoch < 1:
            raise ValueError("triplets_per_epoch must be >= 1")
        if not 0.0 <= self.frame_substitution_prob <= 1.0:
            raise ValueError("frame_substitution_prob must be in [0, 1]")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.descriptor_size < 1:
            raise ValueError("descriptor_size must be >= 1")


class TripletSampler:
    """Draws valid triplets from a store.

    The anchor is uniform over one condition's windows; the positive comes
    from a different condition and must satisfy the same-place convention;
    the negative is uniform over all windows that violate it.  All draws
    come from the supplied generator, so a fixed seed fixes the stream.
    """

    def __init__(self, store: FeatureStore, convention: PlaceConvention, n: int,
                 rng: np.random.Generator):
        if len(store.condition_ids) < 2:
            raise SamplingExhaustedError("need at least two conditions to form triplets")
        self.store = store
        self.convention = convention
        self.n = n
        self.rng = rng
        self.conds = sorted(store.condition_ids)
        # per condition: (num_windows, n) matrix of window place ids
        self.window_ids: dict[int, np.ndarray] = {}
        for cond in self.conds:
            trav = store.get(cond)
            if len(trav) < n:
                raise SamplingExhaustedError(
                    f"condition {cond} has {len(trav)} frames, needs >= {n}"
                )
            ids = trav.place_ids
            self.window_ids[cond] = np.stack(
                [ids[s:len(ids) - n + 1 + s] for s in range(n)], axis=1
            )

    def _matching(self, cond: int, anchor_ids: np.ndarray) -> np.ndarray:
        """Boolean mask over cond's window starts: same place as anchor_ids."""
        w = self.window_ids[cond]  # (num_windows, n)
        tol = self.convention.tolerance
        return (np.abs(w[:, :, None] - anchor_ids[None, None, :]) <= tol).any(axis=(1, 2))

    def sample(self) -> Triplet:
        a_cond = self.conds[self.rng.integers(len(self.conds))]
        a_start = int(self.rng.integers(len(self.window_ids[a_cond])))
        anchor_ids = self.window_ids[a_cond][a_start]

        others = [c for c in self.conds if c != a_cond]
        p_cond = others[self.rng.integers(len(others))]
        pos_starts = np.nonzero(self._matching(p_cond, anchor_ids))[0]
        if pos_starts.size == 0:
            raise SamplingExhaustedError(
                f"no window of condition {p_cond} shares a place with anchor "
                f"window {a_start} of condition {a_cond}"
            )
        p_start = int(pos_starts[self.rng.integers(pos_starts.size)])

        # uniform draw over all windows violating the convention, any condition
        bad_masks = {c: ~self._matching(c, anchor_ids) for c in self.conds}
        total = sum(int(m.sum()) for m in bad_masks.values())
        if total == 0:
            raise SamplingExhaustedError(
                f"every window shares a place with anchor window {a_start} "
                f"of condition {a_cond}"
            )
        k = int(self.rng.integers(total))
        n_cond, n_start = -1, -1
        for cond in self.conds:
            cnt = int(bad_masks[cond].sum())
            if k < cnt:
                n_cond = cond
                n_start = int(np.nonzero(bad_masks[cond])[0][k])
                break
            k -= cnt

        return Triplet(
            anchor=self.store.get(a_cond).window(a_start, self.n),
            positive=self.store.get(p_cond).window(p_start, self.n),
            negative=self.store.get(n_cond).window(n_start, self.n),
        )

    def substitute_frame(self, window: np.ndarray, cond: int, start: int) -> np.ndarray:
        """Replace one uniformly chosen frame by a same-place frame drawn
        from anywhere in the store (usually another condition)."""
        slot = int(self.rng.integers(self.n))
        pid = int(self.store.get(cond).place_ids[start + slot])
        tol = self.convention.tolerance
        candidates = []
        for c in self.conds:
            ids = self.store.get(c).place_ids
            for pos in np.nonzero(np.abs(ids - pid) <= tol)[0]:
                if not (c == cond and int(pos) == start + slot):
                    candidates.append((c, int(pos)))
        if not candidates:
            return window
        c, pos = candidates[self.rng.integers(len(candidates))]
        out = window.copy()
        out[slot] = self.store.get(c).features[pos]
        return out


def sample_triplet(store: FeatureStore, convention: PlaceConvention, n: int,
                   rng: np.random.Generator) -> Triplet:
    return TripletSampler(store, convention, n, rng).sample()


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainResult:
    kind: str
    params: FusionParams | LstmParams
    losses: np.ndarray


def train_composer(composer_kind: str, store: FeatureStore, config: TrainConfig,
                   convention: PlaceConvention | None = None) -> TrainResult:
    """Run epochs x triplets_per_epoch single-triplet SGD steps.

    grouping trains its per-frame head on single-frame triplets; fusion and
    recurrent train on n-frame windows.  The recurrent composer additionally
    sees same-place frame substitution and inverted dropout on its output,
    training time only.  Deterministic for a fixed config.rng_seed.
    """
    if composer_kind not in COMPOSER_KINDS:
        raise ValueError(f"unknown composer kind {composer_kind!r}")
    convention = convention if convention is not None else store.convention
    rng = np.random.default_rng(config.rng_seed)
    d_in = store.dim
    n = 1 if composer_kind == "grouping" else config.n

    if composer_kind == "recurrent":
        params: FusionParams | LstmParams = LstmParams.init(d_in, config.descriptor_size, rng)
    else:
        params = FusionParams.init(n, d_in, config.descriptor_size, rng)

    sampler = TripletSampler(store, convention, n, rng)
    steps = config.epochs * config.triplets_per_epoch
    losses = np.zeros(steps)
    keep = 1.0 - config.dropout_rate

    for step in range(steps):
        triplet = sampler.sample()
        batch = np.stack([triplet.anchor.matrix(), triplet.positive.matrix(),
                          triplet.negative.matrix()]).astype(np.float64)

        if composer_kind == "recurrent":
            assert isinstance(params, LstmParams)
            seqs = (triplet.anchor, triplet.positive, triplet.negative)
            for idx, seq in enumerate(seqs):
                if config.frame_substitution_prob > 0 and \
                        rng.random() < config.frame_substitution_prob:
                    batch[idx] = sampler.substitute_frame(
                        batch[idx], seq.condition_id, seq.frame_ids[0])
            descs, caches = _lstm_forward_batch(params, batch)
            if config.dropout_rate > 0:
                masks = (rng.random(descs.shape) < keep) / keep
                descs = descs * masks
            else:
                masks = None
        else:
            assert isinstance(params, FusionParams)
            flat = batch.reshape(3, -1)
            descs = flat @ params.W.T + params.b
            masks = None

        loss = wl_loss(descs[0], descs[1], descs[2], config.margin)
        if not np.isfinite(loss):
            raise TrainingDivergedError(step, loss)
        losses[step] = loss

        upstream = np.stack(wl_loss_grad(descs[0], descs[1], descs[2], config.margin))
        if masks is not None:
            upstream = upstream * masks
        if composer_kind == "recurrent":
            grads, _ = _lstm_backward_batch(params, caches, upstream)
            for f in fields(params):
                getattr(params, f.name)[...] -= config.learning_rate * getattr(grads, f.name)
        else:
            params.W -= config.learning_rate * (upstream.T @ flat)
            params.b -= config.learning_rate * upstream.sum(axis=0)

    return TrainResult(composer_kind, params, losses)


def write_loss_csv(path: str, losses: Sequence[float]) -> None:
    buf = io.StringIO()
    buf.write("step,loss\n")
    for i, v in enumerate(losses):
        buf.write(f"{i},{float(v)!r}\n")
    atomic_write_text(path, buf.getvalue())
