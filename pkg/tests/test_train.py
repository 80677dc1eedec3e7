import math

import numpy as np
import pytest

from seqplace.core import FeatureStore, PlaceConvention, Traversal, same_place
from seqplace.composers import FusionParams, LstmParams
from seqplace.synth import WorldConfig, generate_world
from seqplace.train import (
    SamplingExhaustedError,
    TrainConfig,
    TrainingDivergedError,
    TripletSampler,
    sample_triplet,
    train_composer,
    wl_loss,
    wl_loss_grad,
    write_loss_csv,
)


def wl_oracle(a, p, n, m):
    """Independent evaluator: plain python norms."""
    dn = math.sqrt(sum((x - y) ** 2 for x, y in zip(a, n)))
    dp = math.sqrt(sum((x - y) ** 2 for x, y in zip(a, p)))
    return max(0.0, 1.0 - dn / (m + dp))


class TestWlLoss:
    def test_negative_equals_anchor(self):
        d = np.array([1.0, 2.0])
        assert wl_loss(d, d + 1, d, 0.3) == 1.0

    def test_hinge_boundary_exact_zero(self):
        # distance to negative exactly equals margin + distance to positive
        out = wl_loss(np.zeros(2), np.zeros(2), np.array([1.0, 0.0]), 1.0)
        assert out == 0.0

    def test_half(self):
        out = wl_loss(np.zeros(2), np.array([1.0, 0.0]), np.array([1.0, 0.0]), 1.0)
        assert out == 0.5

    def test_matches_oracle_on_random_triples(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            dim = int(rng.integers(1, 6))
            a, p, n = (rng.standard_normal(dim) for _ in range(3))
            m = float(rng.uniform(0.01, 2.0))
            assert abs(wl_loss(a, p, n, m) - wl_oracle(a, p, n, m)) <= 1e-12

    def test_bounds(self):
        rng = np.random.default_rng(1)
        for _ in range(500):
            a, p, n = (rng.standard_normal(4) * 10 for _ in range(3))
            v = wl_loss(a, p, n, 0.5)
            assert 0.0 <= v <= 1.0

    def test_rigid_invariance(self):
        # common rotation + translation leaves the loss unchanged
        rng = np.random.default_rng(2)
        for _ in range(50):
            a, p, n = (rng.standard_normal(5) for _ in range(3))
            q, _ = np.linalg.qr(rng.standard_normal((5, 5)))
            t = rng.standard_normal(5)
            before = wl_loss(a, p, n, 0.3)
            after = wl_loss(q @ a + t, q @ p + t, q @ n + t, 0.3)
            assert abs(before - after) <= 1e-9

    def test_rejects_bad_inputs(self):
        with pytest.raises(ValueError):
            wl_loss(np.zeros(2), np.zeros(3), np.zeros(2), 0.1)
        with pytest.raises(ValueError):
            wl_loss(np.zeros(2), np.zeros(2), np.zeros(2), 0.0)


def fd_vec(f, arr, eps=1e-5):
    g = np.zeros_like(arr)
    for i in range(arr.size):
        orig = arr[i]
        arr[i] = orig + eps
        fp = f()
        arr[i] = orig - eps
        fm = f()
        arr[i] = orig
        g[i] = (fp - fm) / (2 * eps)
    return g


class TestWlLossGrad:
    def test_inactive_hinge_zero(self):
        a = np.zeros(2)
        p = np.zeros(2)
        n = np.array([5.0, 0.0])  # dist_n = 5 >= m + 0
        g_a, g_p, g_n = wl_loss_grad(a, p, n, 1.0)
        assert not g_a.any() and not g_p.any() and not g_n.any()

    def test_finite_difference_agreement_at_active_points(self):
        rng = np.random.default_rng(3)
        checked = 0
        while checked < 60:
            a, p, n = (rng.standard_normal(3) for _ in range(3))
            m = float(rng.uniform(0.1, 1.0))
            if not 0.05 < wl_loss(a, p, n, m) < 0.95:
                continue  # stay away from the kink
            g_a, g_p, g_n = wl_loss_grad(a, p, n, m)
            num_a = fd_vec(lambda: wl_loss(a, p, n, m), a)
            num_p = fd_vec(lambda: wl_loss(a, p, n, m), p)
            num_n = fd_vec(lambda: wl_loss(a, p, n, m), n)
            scale = max(np.abs(num_a).max(), 1e-9)
            assert np.abs(g_a - num_a).max() / scale <= 1e-5
            assert np.abs(g_p - num_p).max() / scale <= 1e-5
            assert np.abs(g_n - num_n).max() / scale <= 1e-5
            checked += 1

    def test_zero_positive_distance_subgradient_finite(self):
        a = np.array([1.0, 1.0])
        n = np.array([1.1, 1.0])
        g_a, g_p, g_n = wl_loss_grad(a, a.copy(), n, 0.5)
        for g in (g_a, g_p, g_n):
            assert np.all(np.isfinite(g))
        # the positive's unit vector is undefined; convention sets its term to 0
        assert not g_p.any()

    def test_gradients_sum_to_zero(self):
        # translation invariance implies the three gradients cancel
        rng = np.random.default_rng(4)
        for _ in range(100):
            a, p, n = (rng.standard_normal(4) for _ in range(3))
            g_a, g_p, g_n = wl_loss_grad(a, p, n, 0.2)
            assert np.abs(g_a + g_p + g_n).max() <= 1e-12


def aligned_store(length=50, dim=6, conditions=2, tolerance=0, seed=0):
    rng = np.random.default_rng(seed)
    feats = rng.standard_normal((length, dim)).astype(np.float32)
    travs = {c: Traversal(c, feats + 0.01 * c) for c in range(conditions)}
    return FeatureStore(dim, travs, PlaceConvention(tolerance))


class TestSampling:
    def test_every_triplet_valid_exhaustive(self):
        store = aligned_store()
        conv = store.convention
        rng = np.random.default_rng(5)
        sampler = TripletSampler(store, conv, 3, rng)
        for _ in range(500):
            t = sampler.sample()
            assert same_place(t.anchor, t.positive, conv)
            assert not same_place(t.anchor, t.negative, conv)
            assert t.anchor.condition_id != t.positive.condition_id

    def test_positive_window_intersects_anchor(self):
        store = aligned_store(length=10)
        rng = np.random.default_rng(6)
        sampler = TripletSampler(store, store.convention, 3, rng)
        for _ in range(100):
            t = sampler.sample()
            a = set(t.anchor.frame_ids)
            p = set(t.positive.frame_ids)
            n = set(t.negative.frame_ids)
            assert a & p
            assert not a & n

    def test_deterministic_stream(self):
        store = aligned_store()
        t1 = [sample_triplet(store, store.convention, 3, np.random.default_rng(42))
              for _ in range(1)]
        s1 = TripletSampler(store, store.convention, 3, np.random.default_rng(42))
        s2 = TripletSampler(store, store.convention, 3, np.random.default_rng(42))
        for _ in range(50):
            a, b = s1.sample(), s2.sample()
            assert a.anchor.frame_ids == b.anchor.frame_ids
            assert a.positive.frame_ids == b.positive.frame_ids
            assert a.negative.frame_ids == b.negative.frame_ids
        first = s1.sample()
        del first, t1

    def test_single_condition_rejected(self):
        store = aligned_store(conditions=2)
        del store.traversals[1]
        with pytest.raises(SamplingExhaustedError):
            TripletSampler(store, store.convention, 3, np.random.default_rng(0))

    def test_no_negative_available(self):
        # tolerance so large every window is a positive
        store = aligned_store(length=8, tolerance=10)
        with pytest.raises(SamplingExhaustedError):
            sample_triplet(store, store.convention, 3, np.random.default_rng(0))

    def test_substitution_preserves_place(self):
        store = aligned_store(length=20, tolerance=1)
        rng = np.random.default_rng(7)
        sampler = TripletSampler(store, store.convention, 3, rng)
        window = store.get(0).features[4:7].astype(np.float64)
        for _ in range(50):
            out = sampler.substitute_frame(window.copy(), 0, 4)
            changed = np.nonzero((out != window).any(axis=1))[0]
            assert len(changed) <= 1
            if len(changed):
                slot = int(changed[0])
                # replacement frame exists somewhere within tolerance of 4+slot
                found = False
                for c in store.condition_ids:
                    trav = store.get(c)
                    for pos in range(len(trav)):
                        if abs(pos - (4 + slot)) <= 1 and \
                                np.array_equal(out[slot], trav.features[pos].astype(np.float64)):
                            found = True
                assert found


class TestTrainComposer:
    def test_zero_learning_rate_keeps_init(self):
        world = generate_world(WorldConfig(30, 8, 2, 0.3, 0.05, rng_seed=0))
        cfg = TrainConfig(learning_rate=0.0, epochs=1, triplets_per_epoch=20,
                          rng_seed=3, n=3, descriptor_size=8)
        result = train_composer("fusion", world, cfg)
        fresh = FusionParams.init(3, 8, 8, np.random.default_rng(3))
        assert np.array_equal(result.params.W, fresh.W)
        assert np.array_equal(result.params.b, fresh.b)

    def test_zero_epochs_returns_initialization(self):
        world = generate_world(WorldConfig(30, 8, 2, 0.3, 0.05, rng_seed=0))
        cfg = TrainConfig(epochs=0, rng_seed=9, n=3, descriptor_size=4)
        result = train_composer("recurrent", world, cfg)
        fresh = LstmParams.init(8, 4, np.random.default_rng(9))
        assert np.array_equal(result.params.w_i, fresh.w_i)
        assert len(result.losses) == 0

    def test_fusion_loss_decreases_on_separable_world(self):
        world = generate_world(WorldConfig(60, 16, 2, 0.4, 0.02, rng_seed=1))
        cfg = TrainConfig(learning_rate=0.05, epochs=1, triplets_per_epoch=2000,
                          rng_seed=1, n=3, descriptor_size=32)
        result = train_composer("fusion", world, cfg)
        steps = len(result.losses)
        first = result.losses[: steps // 10].mean()
        last = result.losses[-steps // 10:].mean()
        assert last < first

    def test_same_seed_bit_identical_traces(self):
        world = generate_world(WorldConfig(30, 8, 2, 0.3, 0.05, rng_seed=0))
        cfg = TrainConfig(learning_rate=0.01, epochs=1, triplets_per_epoch=100,
                          rng_seed=5, n=3, descriptor_size=8, dropout_rate=0.3)
        r1 = train_composer("recurrent", world, cfg)
        r2 = train_composer("recurrent", world, cfg)
        assert np.array_equal(r1.losses, r2.losses)
        assert np.array_equal(r1.params.w_g, r2.params.w_g)

    def test_grouping_trains_single_frame_head(self):
        world = generate_world(WorldConfig(30, 8, 2, 0.3, 0.05, rng_seed=0))
        cfg = TrainConfig(learning_rate=0.01, epochs=1, triplets_per_epoch=50,
                          rng_seed=0, n=3, descriptor_size=16)
        result = train_composer("grouping", world, cfg)
        assert isinstance(result.params, FusionParams)
        assert result.params.in_dim == 8  # one frame, not n stacked

    def test_divergence_reports_step(self):
        world = generate_world(WorldConfig(30, 8, 2, 0.3, 0.05, rng_seed=0))
        # the loss is a ratio of distances, so it stays in [0, 1] for any
        # finite parameters; divergence means an actual overflow to inf/nan
        cfg = TrainConfig(learning_rate=1e200, epochs=1, triplets_per_epoch=200,
                          rng_seed=0, n=3, descriptor_size=8)
        with pytest.raises(TrainingDivergedError):
            with np.errstate(all="ignore"):
                train_composer("fusion", world, cfg)

    def test_unknown_kind(self):
        world = generate_world(WorldConfig(30, 8, 2, 0.3, 0.05, rng_seed=0))
        with pytest.raises(ValueError):
            train_composer("pooling", world, TrainConfig())

    def test_config_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(margin=0.0)
        with pytest.raises(ValueError):
            TrainConfig(dropout_rate=1.0)
        with pytest.raises(ValueError):
            TrainConfig(frame_substitution_prob=1.5)
        with pytest.raises(ValueError):
            TrainConfig(learning_rate=-0.1)

    def test_loss_csv(self, tmp_path):
        path = str(tmp_path / "loss.csv")
        write_loss_csv(path, [0.5, 0.25])
        assert open(path).read() == "step,loss\n0,0.5\n1,0.25\n"
