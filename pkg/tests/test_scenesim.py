#!/usr/bin/env python3
"""
Unit tests for the synthetic multi-agent scene generator
"""

import math
import sys
import tempfile
import unittest
from dataclasses import replace
from pathlib import Path

import numpy as np

# Add packages to path
sys.path.append(str(Path(__file__).parent.parent))
from packages.config.settings import SceneConfig
from packages.errors import InvalidInputError, SceneGenerationError
from packages.geometry.boxes import Box3D, PointCloud, PoseSE3
from packages.geometry.iou import rotated_iou_bev
from packages.geometry.transforms import points_in_box, relative_pose, transform_points
from packages.scenesim import (
    Frame,
    SensorFrame,
    apply_latency,
    fuse_to_ego,
    generate_scene,
    ground_truth_index,
    load_scene,
    perturb_poses,
    save_scene,
    sensor_views,
)
from packages.scenesim.sampling import Face, expected_face_points, sample_vehicle, sight_line_blocked
from packages.scenesim.scene import render_frame
from packages.scenesim.storage import load_scene_config
from packages.scenesim.world import ClutterObject, SegmentLayout, build_segment, vehicle_boxes


def small_scene_config(**updates) -> SceneConfig:
    base = dict(num_frames=6, frames_per_segment=3, ground_points_per_agent=200, rng_seed=4)
    base.update(updates)
    return SceneConfig(**base)


class TestSceneGeneration(unittest.TestCase):
    """Determinism and structure of generated frames"""

    @classmethod
    def setUpClass(cls):
        cls.cfg = small_scene_config()
        cls.frames = generate_scene(cls.cfg)

    def assertFramesEqual(self, a, b):
        self.assertEqual(a.frame_id, b.frame_id)
        self.assertEqual(a.segment_id, b.segment_id)
        self.assertEqual(a.agent_poses, b.agent_poses)
        self.assertEqual(a.gt_boxes, b.gt_boxes)
        for ca, cb in zip(a.agent_clouds, b.agent_clouds):
            np.testing.assert_array_equal(ca.points, cb.points)

    def test_same_seed_same_scene(self):
        again = generate_scene(self.cfg)
        for a, b in zip(self.frames, again):
            self.assertFramesEqual(a, b)

    def test_worker_count_does_not_change_output(self):
        parallel = generate_scene(self.cfg, workers=3)
        for a, b in zip(self.frames, parallel):
            self.assertFramesEqual(a, b)

    def test_frames_do_not_depend_on_scene_length(self):
        longer = generate_scene(small_scene_config(num_frames=9))
        for a, b in zip(self.frames, longer):
            self.assertFramesEqual(a, b)

    def test_different_seed_differs(self):
        other = generate_scene(small_scene_config(rng_seed=5))
        self.assertFalse(np.array_equal(self.frames[0].ego_cloud.points, other[0].ego_cloud.points))

    def test_frame_structure(self):
        self.assertEqual([f.frame_id for f in self.frames], list(range(6)))
        self.assertEqual([f.segment_id for f in self.frames], [0, 0, 0, 1, 1, 1])
        for f in self.frames:
            self.assertEqual(f.num_agents, self.cfg.num_agents)
            lo, hi = self.cfg.vehicles_per_frame
            self.assertGreaterEqual(len(f.gt_boxes), max(lo, self.cfg.num_agents - 1))
            self.assertLessEqual(len(f.gt_boxes), hi)

    def test_ground_truth_excludes_ego_vehicle(self):
        for f in self.frames:
            for box in f.gt_boxes:
                self.assertGreater(math.hypot(box.cx, box.cy), 0.5)

    def test_prior_boxes_match_agent_ground_truth(self):
        for f in self.frames:
            priors = f.prior_boxes()
            self.assertEqual(len(priors), f.num_agents - 1)
            for prior, gt in zip(priors, f.gt_boxes):
                self.assertAlmostEqual(rotated_iou_bev(prior, gt), 1.0, places=6)

    def test_layout_failure_raises_scene_generation_error(self):
        with self.assertRaises(SceneGenerationError) as ctx:
            generate_scene(small_scene_config(map_extent=1.0, placement_attempts=5))
        self.assertEqual(ctx.exception.frame_index, 0)

    def test_fixed_vehicle_count_without_overlap(self):
        frames = generate_scene(small_scene_config(vehicles_per_frame=(10, 10)))
        for f in frames:
            self.assertEqual(len(f.gt_boxes), 10)
            for i, a in enumerate(f.gt_boxes):
                for b in f.gt_boxes[i + 1:]:
                    self.assertEqual(rotated_iou_bev(a, b), 0.0)

    def test_empty_world_is_ground_only(self):
        cfg = small_scene_config(num_agents=1, vehicles_per_frame=(0, 0),
                                 clutter_clusters_per_frame=(0, 0), ground_jitter=0.0)
        for f in generate_scene(cfg):
            self.assertEqual(f.gt_boxes, ())
            self.assertEqual(len(f.ego_cloud), cfg.ground_points_per_agent)
            self.assertTrue(np.all(f.ego_cloud.points[:, 2] == 0.0))

    def test_vehicle_returns_lie_on_their_boxes(self):
        cfg = small_scene_config(clutter_clusters_per_frame=(0, 0), ground_points_per_agent=0)
        for f in generate_scene(cfg):
            layout = build_segment(cfg, f.segment_id)
            boxes = vehicle_boxes(layout, f.frame_id - layout.first_frame, cfg.frame_interval_s)
            for pose, cloud in zip(f.agent_poses, f.agent_clouds):
                world = PointCloud(pose.apply(cloud.points))
                covered = np.zeros(len(world), dtype=bool)
                for box in boxes:
                    covered[points_in_box(world, box.inflated(2e-6)).indices] = True
                self.assertTrue(covered.all())


class TestSensorModel(unittest.TestCase):
    """Density falloff and occlusion"""

    def test_density_follows_inverse_power_of_range(self):
        face = Face((0.0, 0.0, 0.0), (1.0, 0.0, 0.0), (0.0, 1.0, 0.0), 1.0, (0.0, 0.0, 1.0), 0.5)
        near = expected_face_points(face, np.array([10.0, 0.0, 0.0]), 40.0, 2.0)
        far = expected_face_points(face, np.array([20.0, 0.0, 0.0]), 40.0, 2.0)
        self.assertAlmostEqual(near, 40.0 * face.area)
        self.assertAlmostEqual(near / far, 4.0)

    def test_back_face_gets_no_points(self):
        face = Face((0.0, 0.0, 0.0), (1.0, 0.0, 0.0), (0.0, 1.0, 0.0), 1.0, (0.0, 0.0, 1.0), 0.5)
        self.assertEqual(expected_face_points(face, np.array([-10.0, 0.0, 0.0]), 40.0, 2.0), 0.0)

    def test_sight_line_blocking(self):
        occluder = Box3D(5.0, 0.0, 0.8, 4.0, 2.0, 1.6, 0.0)
        self.assertTrue(sight_line_blocked((0.0, 0.0), (10.0, 0.0), occluder))
        self.assertFalse(sight_line_blocked((0.0, 0.0), (10.0, 6.0), occluder))
        self.assertFalse(sight_line_blocked((0.0, 0.0), (2.0, 0.0), occluder))

    def test_occluded_vehicle_gets_no_points(self):
        sensor = np.array([0.0, 0.0, 2.0])
        target = Box3D(20.0, 0.0, 0.75, 2.0, 2.0, 1.5, 0.0)
        wall = Box3D(10.0, 0.0, 1.0, 1.0, 6.0, 2.0, 0.0)
        rng = np.random.default_rng(0)
        hidden = sample_vehicle(target, sensor, [target, wall], rng, 40.0, 2.0, True, 100.0)
        visible = sample_vehicle(target, sensor, [target, wall], rng, 40.0, 2.0, False, 100.0)
        self.assertEqual(len(hidden), 0)
        self.assertGreater(len(visible), 0)

    def test_sampled_points_stay_inside_generating_box(self):
        rng = np.random.default_rng(17)
        sensor = np.array([0.0, 0.0, 2.0])
        for _ in range(300):
            r, theta = rng.uniform(5.0, 40.0), rng.uniform(-math.pi, math.pi)
            l, w, h = rng.uniform(3.5, 5.5), rng.uniform(1.6, 2.2), rng.uniform(1.4, 1.9)
            box = Box3D(r * math.cos(theta), r * math.sin(theta), 0.5 * h, l, w, h, rng.uniform(-math.pi, math.pi))
            pts = sample_vehicle(box, sensor, [box], rng, 40.0, 2.0, False, 100.0)
            self.assertEqual(points_in_box(PointCloud(pts), box.inflated(2e-6)).count, len(pts))

    def test_points_per_vehicle_fall_with_range(self):
        rng = np.random.default_rng(19)
        sensor = np.array([0.0, 0.0, 2.0])
        edges = np.array([5.0, 15.0, 25.0, 35.0, 45.0, 55.0])
        ranges, counts = [], []
        for _ in range(1500):
            r, theta = rng.uniform(edges[0], edges[-1]), rng.uniform(-math.pi, math.pi)
            box = Box3D(r * math.cos(theta), r * math.sin(theta), 0.75, 4.5, 1.8, 1.5, rng.uniform(-math.pi, math.pi))
            ranges.append(r)
            counts.append(len(sample_vehicle(box, sensor, [box], rng, 40.0, 2.0, False, 100.0)))
        bins = np.digitize(ranges, edges[1:-1])
        means = [float(np.mean(np.array(counts)[bins == b])) for b in range(len(edges) - 1)]
        self.assertTrue(all(b < a for a, b in zip(means, means[1:])), means)

    def test_clutter_blocks_sight_lines(self):
        cfg = SceneConfig(num_agents=1, ground_points_per_agent=0, occlusion_enabled=True)
        parked = Box3D(30.0, 0.0, 0.75, 4.0, 2.0, 1.5, 0.0)
        wall = ClutterObject("wall", Box3D(15.0, 0.0, 1.5, 1.0, 6.0, 3.0, 0.0), 50)
        layout = SegmentLayout(segment_id=0, first_frame=0, road_heading=0.0, speed_mps=0.0,
                               agent_dims=((4.0, 1.8, 1.5),), agent_offsets=((0.0, 0.0),),
                               parked=(parked,), clutter=(wall,))
        behind_wall = render_frame(cfg, layout, 0).ego_cloud
        open_road = render_frame(cfg, replace(layout, clutter=()), 0).ego_cloud
        target = parked.inflated(0.01)
        self.assertEqual(points_in_box(behind_wall, target).count, 0)
        self.assertGreater(points_in_box(open_road, target).count, 0)


class TestFusion(unittest.TestCase):
    """Multi-agent fusion into the ego frame"""

    def setUp(self):
        self.frames = generate_scene(small_scene_config(num_frames=3))

    def test_fused_cloud_is_union(self):
        f = self.frames[0]
        fused = fuse_to_ego(f)
        self.assertEqual(len(fused), sum(len(c) for c in f.agent_clouds))
        np.testing.assert_array_equal(fused.points[:len(f.ego_cloud)], f.ego_cloud.points)

    def test_communicated_points_use_relative_pose(self):
        for f in self.frames:
            fused = fuse_to_ego(f)
            expected = transform_points(f.agent_clouds[1], relative_pose(f.agent_poses[0], f.agent_poses[1]))
            np.testing.assert_allclose(fused.points[len(f.ego_cloud):], expected.points, atol=1e-12)

    def test_single_agent_fusion_is_ego_cloud(self):
        f = apply_latency(self.frames, 1)[0]
        np.testing.assert_array_equal(fuse_to_ego(f).points, f.ego_cloud.points)

    def test_sensor_view_strips_ground_truth(self):
        views = sensor_views(self.frames)
        for v in views:
            self.assertIsInstance(v, SensorFrame)
            self.assertNotIsInstance(v, Frame)
            self.assertFalse(hasattr(v, "gt_boxes"))
        truth = ground_truth_index(self.frames)
        self.assertEqual(sorted(truth), [0, 1, 2])


class TestPerturbations(unittest.TestCase):
    """Pose noise and communication latency"""

    def setUp(self):
        self.frames = generate_scene(small_scene_config())

    def test_pose_noise_touches_only_communicated_poses(self):
        noisy = perturb_poses(self.frames, 0.2, seed=7)
        for a, b in zip(self.frames, noisy):
            self.assertEqual(a.agent_poses[0], b.agent_poses[0])
            self.assertNotEqual(a.agent_poses[1], b.agent_poses[1])
            self.assertEqual(a.gt_boxes, b.gt_boxes)
            self.assertIs(a.agent_clouds[1], b.agent_clouds[1])

    def test_pose_noise_is_seeded(self):
        a = perturb_poses(self.frames, 0.2, seed=7)
        b = perturb_poses(self.frames, 0.2, seed=7)
        self.assertEqual([f.agent_poses for f in a], [f.agent_poses for f in b])

    def test_pose_noise_matches_sigma(self):
        dims = [(4.0, 2.0, 1.5)] * 11
        frames = [SensorFrame(fid, 0, [PoseSE3.identity()] + [PoseSE3((float(k), 2.0, 0.0), 0.3) for k in range(10)],
                              [PointCloud()] * 11, dims) for fid in range(200)]
        noisy = perturb_poses(frames, 0.2, seed=11)
        dx = np.array([n.translation[0] - o.translation[0]
                       for a, b in zip(frames, noisy) for o, n in zip(a.agent_poses[1:], b.agent_poses[1:])])
        self.assertEqual(dx.size, 2000)
        self.assertLess(abs(float(np.std(dx)) - 0.2), 0.02)

    def test_zero_noise_is_identity(self):
        out = perturb_poses(self.frames, 0.0, seed=7, yaw_noise_enabled=False)
        self.assertEqual([f.agent_poses for f in out], [f.agent_poses for f in self.frames])
        with self.assertRaises(InvalidInputError):
            perturb_poses(self.frames, -0.1, seed=7)

    def test_latency_delivers_stale_agent_data(self):
        delayed = apply_latency(self.frames, 1)
        # first frame of each segment has no earlier frame in the same segment
        for idx in (0, 3):
            self.assertEqual(delayed[idx].num_agents, 1)
        for idx in (1, 2, 4, 5):
            self.assertEqual(delayed[idx].agent_poses[0], self.frames[idx].agent_poses[0])
            self.assertEqual(delayed[idx].agent_poses[1], self.frames[idx - 1].agent_poses[1])
            self.assertIs(delayed[idx].agent_clouds[1], self.frames[idx - 1].agent_clouds[1])
            self.assertEqual(delayed[idx].gt_boxes, self.frames[idx].gt_boxes)

    def test_latency_offsets_moving_vehicle_by_one_frame_of_motion(self):
        cfg = small_scene_config(clutter_clusters_per_frame=(0, 0), ground_points_per_agent=0,
                                 occlusion_enabled=False)
        frames = generate_scene(cfg)
        delayed = apply_latency(frames, 1)
        for idx in (1, 2, 4, 5):
            prev = frames[idx - 1]
            ref = fuse_to_ego(prev).points[len(prev.ego_cloud):]
            stale = fuse_to_ego(delayed[idx]).points[len(delayed[idx].ego_cloud):]
            # ego vehicle returns in agent 1's cloud, located with the ego body frame of the previous frame
            l, w, h = prev.agent_dims[0]
            sel = points_in_box(PointCloud(ref), Box3D(0.0, 0.0, 0.5 * h, l, w, h, 0.0).inflated(1e-3)).indices
            self.assertGreater(sel.size, 0)
            step = np.asarray(frames[idx].agent_poses[0].translation) - np.asarray(prev.agent_poses[0].translation)
            moved = math.hypot(step[0], step[1])
            self.assertAlmostEqual(moved, cfg.agent_speed_mps * cfg.frame_interval_s, places=9)
            offset = stale[sel].mean(axis=0) - ref[sel].mean(axis=0)
            np.testing.assert_allclose(offset, [-moved, 0.0, 0.0], atol=1e-9)

    def test_zero_latency_is_identity(self):
        self.assertEqual(apply_latency(self.frames, 0), list(self.frames))
        with self.assertRaises(InvalidInputError):
            apply_latency(self.frames, -1)


class TestSceneStorage(unittest.TestCase):
    """Scene directories on disk"""

    def test_save_and_load_scene(self):
        cfg = small_scene_config(num_frames=3)
        frames = generate_scene(cfg)
        with tempfile.TemporaryDirectory() as tmp:
            save_scene(frames, tmp, cfg)
            loaded = load_scene(tmp)
            self.assertEqual(load_scene_config(tmp), cfg)
            bare = load_scene(tmp, with_ground_truth=False)
        self.assertEqual(len(loaded), 3)
        for a, b in zip(frames, loaded):
            self.assertEqual(a.agent_poses, b.agent_poses)
            self.assertEqual(a.agent_dims, b.agent_dims)
            self.assertEqual(a.gt_boxes, b.gt_boxes)
            for ca, cb in zip(a.agent_clouds, b.agent_clouds):
                np.testing.assert_array_equal(ca.points, cb.points)
        self.assertTrue(all(f.gt_boxes == () for f in bare))


if __name__ == "__main__":
    unittest.main()
