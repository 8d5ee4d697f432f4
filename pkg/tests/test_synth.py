import numpy as np
import pytest

from poselift import parts as bp
from poselift import synth
from poselift.camera import project
from poselift.frames import box_iou
from poselift.skeleton import BONE_EDGES, THETA_BOUNDS


class TestGenMotion:
    def test_seed_reproducibility(self):
        a = synth.gen_motion(synth.MotionConfig(n_frames=15, seed=5))
        b = synth.gen_motion(synth.MotionConfig(n_frames=15, seed=5))
        assert np.array_equal(a.theta, b.theta)
        assert np.array_equal(a.poses2d, b.poses2d)

    def test_step_cap(self):
        cfg = synth.MotionConfig(n_frames=40, seed=2, max_theta_step=0.05)
        clip = synth.gen_motion(cfg)
        steps = np.abs(np.diff(clip.theta, axis=0))
        assert steps.max() <= 0.05 + 1e-12

    def test_theta_within_bounds(self):
        clip = synth.gen_motion(synth.MotionConfig(n_frames=40, seed=3,
                                                   theta_amplitude=1.0))
        lo = np.array([b[0] for b in THETA_BOUNDS])
        hi = np.array([b[1] for b in THETA_BOUNDS])
        assert np.all(clip.theta >= lo - 1e-12)
        assert np.all(clip.theta <= hi + 1e-12)

    def test_projection_consistency(self):
        clip = synth.gen_motion(synth.MotionConfig(n_frames=12, seed=4))
        reproj = project(clip.poses3d, clip.camera)
        scale = max(1.0, np.abs(clip.poses2d).max())
        assert np.abs(reproj - clip.poses2d).max() / scale <= 1e-9

    def test_bone_lengths_constant(self):
        clip = synth.gen_motion(synth.MotionConfig(n_frames=25, seed=6,
                                                   theta_amplitude=0.8))
        for i, j, _ in BONE_EDGES:
            d = np.linalg.norm(clip.poses3d[:, i] - clip.poses3d[:, j], axis=1)
            assert (d.max() - d.min()) / d.mean() <= 1e-9

    def test_noise_mode(self):
        clean = synth.gen_motion(synth.MotionConfig(n_frames=10, seed=7))
        noisy = synth.gen_motion(synth.MotionConfig(n_frames=10, seed=7,
                                                    noise_sigma=2.0))
        assert np.array_equal(clean.poses2d, noisy.poses2d)
        assert not np.array_equal(noisy.poses2d, noisy.poses2d_noisy)
        spread = np.abs(noisy.poses2d_noisy - noisy.poses2d)
        assert 0.5 < spread.mean() < 4.0

    def test_too_short_rejected(self):
        with pytest.raises(ValueError):
            synth.gen_motion(synth.MotionConfig(n_frames=5))


class TestPrimitives:
    def test_up_strictly_increases(self):
        for part in ("l_upper_arm", "l_upper_leg", "head", "r_lower_arm"):
            clip = synth.gen_primitive(part, "up", n_frames=30, seed=1)
            joint = bp.get_part(part).indicator_joint
            up = -clip.poses3d[:, joint, 1]
            assert np.all(np.diff(up) > 0), part

    def test_down_strictly_decreases(self):
        clip = synth.gen_primitive("r_upper_arm", "down", n_frames=30, seed=2)
        joint = bp.get_part("r_upper_arm").indicator_joint
        up = -clip.poses3d[:, joint, 1]
        assert np.all(np.diff(up) < 0)

    def test_only_part_offsets_vary(self):
        clip = synth.gen_primitive("l_lower_arm", "circle", n_frames=30, seed=3)
        part = bp.get_part("l_lower_arm")
        moving = np.ptp(clip.theta, axis=0) > 1e-12
        assert set(np.flatnonzero(moving)) <= set(part.offsets)

    def test_labels_hot_every_frame(self):
        clip = synth.gen_primitive("hips", "circle", n_frames=20, seed=4)
        mat = clip.labels["matrix"]
        assert mat.shape == (20, 3)
        assert np.all(mat[:, bp.SYNTH_LABELS.index("circle")] == 1.0)

    def test_two_labels_differ(self):
        a = synth.gen_primitive("l_foot", "up", n_frames=25, seed=5)
        b = synth.gen_primitive("l_foot", "down", n_frames=25, seed=5)
        assert np.linalg.norm(a.poses3d - b.poses3d) > 0

    def test_unsupported_label(self):
        with pytest.raises(ValueError):
            synth.gen_primitive("head", "wiggle")

    def test_dataset_balanced(self):
        clips = synth.gen_primitive_dataset("neck", n_frames=12,
                                            clips_per_label=20, seed=0)
        assert len(clips) == 60
        kinds = [c.labels["kind"] for c in clips]
        assert all(kinds.count(k) == 20 for k in bp.SYNTH_LABELS)

    def test_every_part_has_usable_span(self):
        for part in bp.PART_NAMES:
            clip = synth.gen_primitive(part, "up", n_frames=15, seed=9)
            joint = bp.get_part(part).indicator_joint
            up = -clip.poses3d[:, joint, 1]
            assert np.all(np.diff(up) > 0), part
            assert up[-1] - up[0] > 1.0, part


class TestGenreLabels:
    def test_shapes_and_determinism(self):
        a = synth.gen_genre_labels(3, 30, seed=11)
        b = synth.gen_genre_labels(3, 30, seed=11)
        assert a.shape == (30, bp.TOTAL_LABELS)
        assert np.array_equal(a, b)

    def test_genres_distinct(self):
        a = synth.gen_genre_labels(0, 40, seed=1, flip_prob=0.0)
        b = synth.gen_genre_labels(5, 40, seed=1, flip_prob=0.0)
        assert not np.array_equal(a, b)

    def test_dataset(self):
        data = synth.gen_genre_dataset(clips_per_genre=2, n_frames=10, seed=0)
        assert len(data) == 18
        assert {g for _, g in data} == set(range(9))

    def test_rejects_bad_genre(self):
        with pytest.raises(ValueError):
            synth.gen_genre_labels(9, 10, seed=0)


class TestCrossingScene:
    def test_reproducible(self):
        a = synth.gen_crossing_scene(synth.CrossingConfig(seed=21))
        b = synth.gen_crossing_scene(synth.CrossingConfig(seed=21))
        assert np.array_equal(a.boxes, b.boxes)
        assert np.array_equal(a.colors, b.colors)

    def test_contact_frame_matches_kinematics(self):
        scene = synth.gen_crossing_scene(synth.CrossingConfig(seed=22))
        assert scene.first_contact is not None
        first = None
        for t in range(scene.config.n_frames):
            if box_iou(tuple(scene.boxes[t, 0]), tuple(scene.boxes[t, 1])) > 0:
                first = t
                break
        assert scene.first_contact == first
        assert scene.first_iou02 is not None
        assert scene.gt_end is not None
        assert scene.first_contact <= scene.first_iou02 < scene.gt_end

    def test_disjoint_mode_has_no_overlap(self):
        scene = synth.gen_crossing_scene(synth.CrossingConfig(seed=23, crossing=False))
        for t in range(scene.config.n_frames):
            assert box_iou(tuple(scene.boxes[t, 0]), tuple(scene.boxes[t, 1])) == 0.0
        assert scene.first_contact is None

    def test_occluded_actor_loses_detections(self):
        scene = synth.gen_crossing_scene(synth.CrossingConfig(seed=24))
        t = scene.first_iou02
        # During deep overlap the back actor (index 1) drops below full
        # visibility while the front actor stays fully visible.
        assert np.all(scene.visible_fraction[:, 0] == 1.0)
        assert scene.visible_fraction[t:, 1].min() < 1.0

    def test_frames_histograms_reflect_colors(self):
        scene = synth.gen_crossing_scene(synth.CrossingConfig(seed=25))
        from poselift.frames import color_bin

        hist = scene.frames[0].histogram(tuple(scene.boxes[0, 0]))
        assert hist[color_bin(scene.colors[0])] == pytest.approx(1.0)

    def test_actor_count_validation(self):
        with pytest.raises(ValueError):
            synth.gen_crossing_scene(synth.CrossingConfig(n_actors=7))
