import math

import numpy as np
import pytest

from constants import A_RANGE, BETA_CHOICES
from errors import DataError, DimensionError, ParameterError
from haze_physics import (
    HazeParams, SynthesisConfig, XorShift64Star, compose_haze, expected_transmission,
    fill_invalid_depth, make_toy_clip, recover_scene, synthesize_video,
    synthesize_video_variants, transmission_from_depth,
)


def _frame(rng, h=6, w=5):
    return rng.uniform(0.0, 1.0, size=(h, w, 3))


class TestTransmission:
    def test_zero_depth_or_beta_gives_one(self, rng):
        assert np.all(transmission_from_depth(np.zeros((3, 3)), 0.02) == 1.0)
        assert np.all(transmission_from_depth(rng.uniform(0, 100, (3, 3)), 0.0) == 1.0)

    def test_known_value(self):
        t = transmission_from_depth(np.full((2, 2), 100.0), 0.02)
        assert np.max(np.abs(t - math.exp(-2.0))) <= 1e-12

    def test_negative_beta(self):
        with pytest.raises(ParameterError):
            transmission_from_depth(np.ones((2, 2)), -0.1)

    def test_larger_beta_means_less_transmission(self, rng):
        depth = rng.uniform(1.0, 200.0, size=(4, 4))
        assert np.all(transmission_from_depth(depth, 0.03) < transmission_from_depth(depth, 0.01))


class TestScatteringModel:
    def test_no_haze_and_opaque_haze(self, rng):
        scene = _frame(rng)
        assert np.array_equal(compose_haze(scene, np.ones(scene.shape[:2]), 0.9), scene)
        assert np.all(compose_haze(scene, np.zeros(scene.shape[:2]), 0.9) == 0.9)

    def test_hand_value(self):
        hazy = compose_haze(np.full((1, 1, 3), 0.8), np.full((1, 1), 0.5), 1.0)
        assert np.allclose(hazy, 0.9, atol=1e-15)

    def test_shape_mismatch(self, rng):
        with pytest.raises(DimensionError):
            compose_haze(_frame(rng), np.ones((2, 2)), 0.8)

    @pytest.mark.parametrize("bad", [1.5, -0.2, float("nan")])
    def test_transmission_outside_unit_interval(self, rng, bad):
        t = np.full((6, 5), 0.5)
        t[2, 3] = bad
        with pytest.raises(ParameterError):
            compose_haze(_frame(rng), t, 0.8)

    def test_round_trip_is_exact(self, rng):
        scene = _frame(rng)
        t = rng.uniform(0.05, 1.0, size=scene.shape[:2])
        back = recover_scene(compose_haze(scene, t, 0.85), t, 0.85, t_floor=0.05)
        assert np.max(np.abs(back - scene)) <= 1e-12

    def test_airlight_recovers_to_airlight(self):
        out = recover_scene(np.full((2, 2, 3), 0.8), np.full((2, 2), 0.05), 0.8, t_floor=0.05)
        assert np.allclose(out, 0.8, atol=1e-12)

    def test_transmission_below_floor_is_clamped(self, rng):
        hazy = _frame(rng)
        low = recover_scene(hazy, np.full(hazy.shape[:2], 0.01), 0.9, t_floor=0.05)
        floor = recover_scene(hazy, np.full(hazy.shape[:2], 0.05), 0.9, t_floor=0.05)
        assert np.array_equal(low, floor)

    def test_bad_floor(self, rng):
        with pytest.raises(ParameterError):
            recover_scene(_frame(rng), np.ones((6, 5)), 0.9, t_floor=0.0)

    def test_params_validation(self):
        with pytest.raises(ParameterError):
            HazeParams(beta=0.01, airlight=1.5)


class TestSynthesis:
    def _video(self, rng, frames=3):
        clear = [_frame(rng) for _ in range(frames)]
        depths = [rng.uniform(1.0, 150.0, size=(6, 5)) for _ in range(frames)]
        return clear, depths

    def test_defaults(self):
        cfg = SynthesisConfig()
        assert cfg.beta_choices == (0.005, 0.01, 0.02, 0.03)
        assert cfg.airlight_range == (0.75, 1.0)

    def test_deterministic(self, rng):
        clear, depths = self._video(rng)
        a = synthesize_video(clear, depths, SynthesisConfig(rng_seed=11))
        b = synthesize_video(clear, depths, SynthesisConfig(rng_seed=11))
        assert a.params == b.params
        for x, y in zip(a.hazy + a.transmissions, b.hazy + b.transmissions):
            assert x.tobytes() == y.tobytes()

    def test_parameters_shared_across_frames(self, rng):
        clear, depths = self._video(rng)
        video = synthesize_video(clear, depths, SynthesisConfig(rng_seed=5))
        assert video.params.beta in BETA_CHOICES
        assert A_RANGE[0] <= video.params.airlight <= A_RANGE[1]
        for scene, depth, hazy, t in zip(clear, depths, video.hazy, video.transmissions):
            assert np.array_equal(t, transmission_from_depth(depth, video.params.beta))
            assert np.array_equal(hazy, compose_haze(scene, t, video.params.airlight))

    def test_length_mismatch(self, rng):
        clear, depths = self._video(rng)
        with pytest.raises(DimensionError):
            synthesize_video(clear, depths[:-1], SynthesisConfig())

    def test_parallel_matches_serial(self, rng):
        clear, depths = self._video(rng, frames=5)
        serial = synthesize_video(clear, depths, SynthesisConfig(rng_seed=2))
        parallel = synthesize_video(clear, depths, SynthesisConfig(rng_seed=2), workers=3)
        for x, y in zip(serial.hazy, parallel.hazy):
            assert np.array_equal(x, y)

    def test_variants_cover_every_beta(self, rng):
        clear, depths = self._video(rng)
        videos = synthesize_video_variants(clear, depths, SynthesisConfig(rng_seed=4))
        assert [v.params.beta for v in videos] == list(BETA_CHOICES)
        assert all(A_RANGE[0] <= v.params.airlight <= A_RANGE[1] for v in videos)

    def test_config_validation(self):
        with pytest.raises(ParameterError):
            SynthesisConfig(beta_choices=())
        with pytest.raises(ParameterError):
            SynthesisConfig(airlight_range=(0.5, 1.2))

    def test_config_from_text_values(self):
        cfg = SynthesisConfig.from_mapping({"beta_choices": "0.01, 0.02", "seed": "9"})
        assert cfg.beta_choices == (0.01, 0.02) and cfg.rng_seed == 9


class TestGenerator:
    def test_reproducible_and_in_range(self):
        a, b = XorShift64Star(42), XorShift64Star(42)
        xs = [a.uniform() for _ in range(1000)]
        assert xs == [b.uniform() for _ in range(1000)]
        assert min(xs) >= 0.0 and max(xs) < 1.0

    def test_seeds_differ(self):
        assert XorShift64Star(1).next_u64() != XorShift64Star(2).next_u64()

    def test_choice_uses_every_option(self):
        rng = XorShift64Star(0)
        assert {rng.choice(BETA_CHOICES) for _ in range(200)} == set(BETA_CHOICES)


class TestDepthAndExtras:
    def test_fill_invalid_depth(self):
        depth = np.array([[1.0, np.nan], [-2.0, 7.0]])
        assert np.array_equal(fill_invalid_depth(depth), [[1.0, 7.0], [7.0, 7.0]])

    def test_all_invalid_depth(self):
        with pytest.raises(DataError):
            fill_invalid_depth(np.full((2, 2), np.inf))

    def test_expected_transmission_of_one_hot(self):
        dist = np.zeros((5, 2, 2))
        dist[3] = 1.0
        assert np.allclose(expected_transmission(dist), 0.75)

    def test_toy_clip(self):
        frames, depths = make_toy_clip(num_frames=6, height=16, width=16, seed=1)
        assert len(frames) == len(depths) == 6
        assert frames[0].shape == (16, 16, 3) and depths[0].shape == (16, 16)
        assert all(f.min() >= 0.0 and f.max() <= 1.0 for f in frames)
        assert all(d.min() > 0 for d in depths)
        assert not np.array_equal(frames[0], frames[1])
        again, _ = make_toy_clip(num_frames=6, height=16, width=16, seed=1)
        assert all(np.array_equal(x, y) for x, y in zip(frames, again))
