import numpy as np
import pytest

from seqplace.composers import make_pipeline
from seqplace.synth import WorldConfig, generate_world, perturb_reverse, perturb_speed


class TestGenerateWorld:
    def test_identity_conditions_identical_traversals(self):
        world = generate_world(WorldConfig(40, 8, 3, 0.0, 0.0, rng_seed=0))
        base = world.get(0).features
        for c in (1, 2):
            assert np.array_equal(world.get(c).features, base)

    def test_same_seed_bit_identical(self):
        cfg = WorldConfig(30, 8, 2, 0.5, 0.1, rng_seed=7)
        w1, w2 = generate_world(cfg), generate_world(cfg)
        for c in (0, 1):
            assert np.array_equal(w1.get(c).features, w2.get(c).features)

    def test_different_seed_differs(self):
        a = generate_world(WorldConfig(30, 8, 2, 0.5, 0.1, rng_seed=0))
        b = generate_world(WorldConfig(30, 8, 2, 0.5, 0.1, rng_seed=1))
        assert not np.array_equal(a.get(0).features, b.get(0).features)

    def test_shapes_and_ground_truth(self):
        world = generate_world(WorldConfig(25, 6, 2, 0.3, 0.05, rng_seed=3, tolerance=2))
        assert world.dim == 6
        assert world.convention.tolerance == 2
        for c in (0, 1):
            assert world.get(c).features.shape == (25, 6)
            assert np.array_equal(world.get(c).place_ids, np.arange(25))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            WorldConfig(num_places=4)
        with pytest.raises(ValueError):
            WorldConfig(conditions=1)
        with pytest.raises(ValueError):
            WorldConfig(transform_scale=-0.1)


class TestPerturbReverse:
    def test_involution(self):
        world = generate_world(WorldConfig(20, 4, 2, 0.2, 0.05, rng_seed=0))
        twice = perturb_reverse(perturb_reverse(world, 1), 1)
        assert np.array_equal(twice.get(1).features, world.get(1).features)
        assert np.array_equal(twice.get(1).place_ids, world.get(1).place_ids)

    def test_same_multiset_of_frames(self):
        world = generate_world(WorldConfig(20, 4, 2, 0.2, 0.05, rng_seed=1))
        rev = perturb_reverse(world, 0)
        a = np.sort(world.get(0).features, axis=0)
        b = np.sort(rev.get(0).features, axis=0)
        assert np.array_equal(a, b)

    def test_place_ids_follow_content(self):
        world = generate_world(WorldConfig(10, 4, 2, 0.2, 0.05, rng_seed=2))
        rev = perturb_reverse(world, 1)
        assert list(rev.get(1).place_ids) == list(range(9, -1, -1))
        # the frame now at position 0 is the content of original frame 9
        assert np.array_equal(rev.get(1).features[0], world.get(1).features[9])

    def test_grouping_descriptors_block_reversed(self):
        world = generate_world(WorldConfig(12, 4, 2, 0.2, 0.05, rng_seed=3))
        pipe = make_pipeline("grouping", 3, 4)
        rev = perturb_reverse(world, 0)
        L = 12
        # window starting at s in the reversed run covers original frames
        # L-1-s, L-2-s, L-3-s; its descriptor is the block reversal of the
        # original window at L-3-s
        for s in (0, 4, 9):
            got = pipe.describe(rev.get(0).features[s:s + 3].astype(np.float64))
            orig = pipe.describe(world.get(0).features[L - 3 - s:L - s].astype(np.float64))
            assert np.array_equal(got, orig.reshape(3, 4)[::-1].reshape(-1))

    def test_unknown_condition(self):
        world = generate_world(WorldConfig(10, 4, 2, 0.2, 0.05, rng_seed=4))
        with pytest.raises(KeyError):
            perturb_reverse(world, 9)

    def test_other_conditions_untouched(self):
        world = generate_world(WorldConfig(10, 4, 2, 0.2, 0.05, rng_seed=5))
        rev = perturb_reverse(world, 1)
        assert rev.get(0) is world.get(0)


class TestPerturbSpeed:
    def test_unit_multiplier_is_identity(self):
        world = generate_world(WorldConfig(12, 4, 2, 0.2, 0.05, rng_seed=0))
        out = perturb_speed(world, 0, multipliers=(1,), rng=np.random.default_rng(0))
        assert np.array_equal(out.get(0).features, world.get(0).features)
        assert np.array_equal(out.get(0).place_ids, world.get(0).place_ids)

    def test_constant_double_speed(self):
        world = generate_world(WorldConfig(10, 4, 2, 0.2, 0.05, rng_seed=1))
        out = perturb_speed(world, 0, multipliers=(2,), rng=np.random.default_rng(0))
        assert list(out.get(0).place_ids) == [0, 2, 4, 6, 8]
        assert np.array_equal(out.get(0).features, world.get(0).features[[0, 2, 4, 6, 8]])

    def test_length_bounds(self):
        world = generate_world(WorldConfig(60, 4, 2, 0.2, 0.05, rng_seed=2))
        for seed in range(20):
            out = perturb_speed(world, 1, rng=np.random.default_rng(seed))
            L = len(out.get(1))
            assert int(np.ceil(60 / 3)) <= L <= 60

    def test_ground_truth_survives(self):
        world = generate_world(WorldConfig(40, 4, 2, 0.2, 0.05, rng_seed=3))
        out = perturb_speed(world, 1, rng=np.random.default_rng(5))
        kept = out.get(1).place_ids
        for pos, pid in enumerate(kept):
            assert np.array_equal(out.get(1).features[pos], world.get(1).features[pid])

    def test_deterministic_given_rng(self):
        world = generate_world(WorldConfig(40, 4, 2, 0.2, 0.05, rng_seed=4))
        a = perturb_speed(world, 0, rng=np.random.default_rng(9))
        b = perturb_speed(world, 0, rng=np.random.default_rng(9))
        assert np.array_equal(a.get(0).place_ids, b.get(0).place_ids)

    def test_bad_multipliers(self):
        world = generate_world(WorldConfig(10, 4, 2, 0.2, 0.05, rng_seed=5))
        with pytest.raises(ValueError):
            perturb_speed(world, 0, multipliers=(0, 1))
