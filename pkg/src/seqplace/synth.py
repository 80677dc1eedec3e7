"""Synthetic multi-condition worlds.

Each place is a random direction on the unit sphere; each condition sees
it through its own near-identity affine transform plus white noise.  The
transform scale controls how hard cross-condition recognition is, the
noise scale how hard within-condition recognition is.  Frame i of every
condition depicts place i, which gives exact ground truth for free.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import FeatureStore, PlaceConvention, Traversal


@dataclass(frozen=True)
class WorldConfig:
    num_places: int = 200
    dim: int = 64
    conditions: int = 2
    transform_scale: float = 0.5   # per-condition affine distortion
    noise_scale: float = 0.1       # additive white noise, per component
    rng_seed: int = 0
    tolerance: int = 0

    def __post_init__(self):
        if self.num_places < 6:
            raise ValueError("num_places must be >= 6 (two sequence windows)")
        if self.dim < 2:
            raise ValueError("dim must be >= 2")
        if self.conditions < 2:
            raise ValueError("conditions must be >= 2")
        if self.transform_scale < 0 or self.noise_scale < 0:
            raise ValueError("scales must be non-negative")
        if self.tolerance < 0:
            raise ValueError("tolerance must be >= 0")


def generate_world(cfg: WorldConfig) -> FeatureStore:
    """One traversal per condition; frame i of condition c is

        A_c z_i + b_c + noise,   A_c = I + s * R_c

    with z_i uniform on the unit sphere, R_c a fixed random matrix with
    N(0, 1/dim) entries and b_c a fixed random offset of typical norm s.
    Deterministic for a fixed seed.
    """
    rng = np.random.default_rng(cfg.rng_seed)
    P, D, s = cfg.num_places, cfg.dim, cfg.transform_scale
    z = rng.standard_normal((P, D))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    traversals = {}
    for c in range(cfg.conditions):
        R = rng.standard_normal((D, D)) / np.sqrt(D)
        b = rng.standard_normal(D) * (s / np.sqrt(D))
        noise = rng.standard_normal((P, D)) * cfg.noise_scale
        feats = z + s * (z @ R.T) + b + noise
        traversals[c] = Traversal(c, feats.astype(np.float32), name=f"condition{c}")
    return FeatureStore(D, traversals, PlaceConvention(cfg.tolerance))


def perturb_reverse(store: FeatureStore, condition_id: int) -> FeatureStore:
    """Play one condition's traversal backwards.

    Place ids follow the frames, so content still defines the place; applying
    it twice gives back the original store.
    """
    trav = store.get(condition_id)
    reversed_trav = Traversal(
        condition_id,
        trav.features[::-1].copy(),
        place_ids=trav.place_ids[::-1].copy(),
        name=trav.name,
    )
    return store.replace(reversed_trav)


def perturb_speed(store: FeatureStore, condition_id: int,
                  multipliers=(1, 2, 3),
                  rng: np.random.Generator | None = None) -> FeatureStore:
    """Subsample one traversal at a randomly varying speed.

    Walk from frame 0 advancing by a multiplier drawn uniformly from the
    set at every step, keeping visited frames.  Kept frames retain their
    original place ids, so the 1-to-1 correspondence between conditions is
    gone but ground truth survives.
    """
    trav = store.get(condition_id)
    multipliers = tuple(int(m) for m in multipliers)
    if not multipliers or any(m < 1 for m in multipliers):
        raise ValueError("multipliers must be positive integers")
    if rng is None:
        rng = np.random.default_rng(0)
    kept = []
    i = 0
    while i < len(trav):
        kept.append(i)
        i += multipliers[rng.integers(len(multipliers))]
    kept = np.asarray(kept, dtype=np.int64)
    sub = Traversal(
        condition_id,
        trav.features[kept].copy(),
        place_ids=trav.place_ids[kept].copy(),
        name=trav.name,
    )
    return store.replace(sub)
