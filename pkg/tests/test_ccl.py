#!/usr/bin/env python3
"""
Unit tests for cross-view consensus labels and BEV alignment
"""

import math
import sys
import tempfile
import unittest
from pathlib import Path

import numpy as np

# Add packages to path
sys.path.append(str(Path(__file__).parent.parent))
from packages.ccl import (
    BevGrid,
    GridSpec,
    bev_alignment_loss,
    bev_rasterize,
    build_guidance,
    ccl_guidance,
    consensus_labels,
    load_grid,
    save_grid,
    unmatched_valid_set,
    visibility_mask,
)
from packages.errors import ArtifactIOError, InvalidInputError
from packages.geometry.boxes import Box3D, PointCloud, Proposal, ProposalSet, View
from packages.geometry.iou import rotated_iou_bev
from packages.geometry.nms import nms


def car(x: float, y: float = 0.0, yaw: float = 0.0) -> Box3D:
    return Box3D(x, y, 0.8, 4.0, 1.8, 1.5, yaw)


def points_at(box: Box3D, n: int) -> np.ndarray:
    """n points spread along the box's long axis, all strictly inside it"""
    offsets = np.linspace(-0.4, 0.4, n) * box.l
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    return np.column_stack([box.cx + c * offsets, box.cy + s * offsets, np.full(n, box.cz)])


def count_inside(points: np.ndarray, box: Box3D) -> int:
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    dx, dy = points[:, 0] - box.cx, points[:, 1] - box.cy
    lx, ly = c * dx + s * dy, -s * dx + c * dy
    dz = points[:, 2] - box.cz
    return int(np.sum((np.abs(lx) <= box.l / 2) & (np.abs(ly) <= box.w / 2) & (np.abs(dz) <= box.h / 2)))


class TestConsensusLabels(unittest.TestCase):
    """Unmatched valid set and label fusion"""

    def test_empty_multi_view_gives_empty_set(self):
        ego = ProposalSet(0, View.EGO, [Proposal(car(0), 0.8)])
        out = unmatched_valid_set(ego, ProposalSet(0, View.MULTI), PointCloud(points_at(car(0), 10)))
        self.assertEqual(len(out), 0)

    def test_overlapping_proposal_is_excluded(self):
        ego = ProposalSet(0, View.EGO, [Proposal(car(0), 0.8)])
        multi = ProposalSet(0, View.MULTI, [Proposal(car(0.2), 0.9)])
        self.assertGreater(rotated_iou_bev(car(0), car(0.2)), 0.9)
        cloud = PointCloud(points_at(car(0.2), 20))
        self.assertEqual(len(unmatched_valid_set(ego, multi, cloud)), 0)

    def test_point_support_threshold(self):
        target = car(20, 5)
        multi = ProposalSet(0, View.MULTI, [Proposal(target, 0.6)])
        ego = ProposalSet(0, View.EGO)
        self.assertEqual(len(unmatched_valid_set(ego, multi, PointCloud(), rho=5)), 0)
        self.assertEqual(len(unmatched_valid_set(ego, multi, PointCloud(), rho=0)), 1)
        self.assertEqual(len(unmatched_valid_set(ego, multi, PointCloud(points_at(target, 4)), rho=5)), 0)
        self.assertEqual(len(unmatched_valid_set(ego, multi, PointCloud(points_at(target, 5)), rho=5)), 1)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(21)
        for trial in range(5):
            def random_set(view, n):
                return ProposalSet(trial, view, [
                    Proposal(Box3D(rng.uniform(-25, 25), rng.uniform(-25, 25), 0.8,
                                   rng.uniform(3, 5), rng.uniform(1.5, 2.2), 1.5, rng.uniform(-math.pi, math.pi)),
                             rng.uniform(0, 1))
                    for _ in range(n)])

            ego, multi = random_set(View.EGO, 30), random_set(View.MULTI, 30)
            points = np.column_stack([rng.uniform(-27, 27, 4000), rng.uniform(-27, 27, 4000),
                                      rng.uniform(0.0, 1.6, 4000)])
            out = unmatched_valid_set(ego, multi, PointCloud(points), eta_ccl=0.3, rho=5)
            expected = [
                m for m in multi
                if max(rotated_iou_bev(m.box, e.box) for e in ego) < 0.3 and count_inside(points, m.box) >= 5
            ]
            self.assertEqual(list(out.items), expected)
            self.assertEqual(out.view, View.MULTI)

    def test_consensus_without_unmatched_is_plain_nms(self):
        ego = ProposalSet(4, View.EGO, [Proposal(car(0), 0.8), Proposal(car(0.3), 0.5), Proposal(car(15), 0.3)])
        out = consensus_labels(ego, ProposalSet(4, View.MULTI), eta_ccl=0.3)
        self.assertEqual(out, nms(ego, 0.3))
        self.assertEqual(out.view, View.EGO)

    def test_consensus_adds_recovered_objects(self):
        ego = ProposalSet(1, View.EGO, [Proposal(car(0), 0.8)])
        recovered = ProposalSet(1, View.MULTI, [Proposal(car(30), 0.7)])
        out = consensus_labels(ego, recovered)
        self.assertEqual(out.boxes, [car(0), car(30)])
        self.assertEqual(out.frame_id, 1)

    def test_invalid_parameters(self):
        empty = ProposalSet(0, View.EGO)
        with self.assertRaises(InvalidInputError):
            unmatched_valid_set(empty, ProposalSet(0, View.MULTI), PointCloud(), eta_ccl=0.0)
        with self.assertRaises(InvalidInputError):
            unmatched_valid_set(empty, ProposalSet(0, View.MULTI), PointCloud(), rho=-1)


class TestBevRaster(unittest.TestCase):
    """Rasterization and visibility"""

    def setUp(self):
        self.spec = GridSpec(1.0, 2.0)

    def test_grid_geometry(self):
        self.assertEqual(self.spec.shape, (4, 4))
        self.assertEqual(self.spec.origin, (-2.0, -2.0))
        with self.assertRaises(InvalidInputError):
            GridSpec(0.0, 2.0)

    def test_single_point_fills_one_cell(self):
        grid = bev_rasterize(PointCloud([[0.5, -1.5, 1.2]]), self.spec)
        expected = np.zeros((4, 4, 4))
        expected[2, 0] = [math.log(2.0), 1.2, 1.2, 1.0]
        np.testing.assert_allclose(grid.values, expected)

    def test_channel_statistics(self):
        cloud = PointCloud([[0.1, 0.1, 1.0], [0.9, 0.9, 3.0], [0.5, 0.5, 2.0], [5.0, 5.0, 9.0]])
        grid = bev_rasterize(cloud, self.spec)
        np.testing.assert_allclose(grid.values[2, 2], [math.log(4.0), 3.0, 2.0, 1.0])
        self.assertEqual(int(grid.values[:, :, 3].sum()), 1)

    def test_empty_cloud_gives_zero_grid(self):
        grid = bev_rasterize(PointCloud(), self.spec)
        self.assertTrue(np.all(grid.values == 0.0))

    def test_grid_values_are_validated(self):
        with self.assertRaises(InvalidInputError):
            BevGrid(self.spec, np.zeros((3, 4, 4)))
        bad = np.zeros((4, 4, 4))
        bad[0, 0, 0] = np.nan
        with self.assertRaises(InvalidInputError):
            BevGrid(self.spec, bad)

    def test_visibility_mask(self):
        gamma = 0.01
        self.assertEqual(visibility_mask(np.zeros((4, 4, 4)), gamma).visible_cells, 0)
        self.assertEqual(visibility_mask(np.full((4, 4, 4), 2 * gamma), gamma).visible_cells, 16)
        with self.assertRaises(InvalidInputError):
            visibility_mask(np.zeros((4, 4, 4)), -1.0)


class TestAlignmentLoss(unittest.TestCase):
    """Masked alignment loss and its gradient"""

    def setUp(self):
        rng = np.random.default_rng(3)
        self.fe = rng.normal(size=(8, 8, 4))
        self.fm = rng.normal(size=(8, 8, 4))
        self.mask = rng.random((8, 8)) < 0.6

    def test_single_cell_value(self):
        loss, grad = bev_alignment_loss(np.full((1, 1, 1), 3.0), np.full((1, 1, 1), 1.0), np.ones((1, 1), bool))
        self.assertAlmostEqual(loss, 4.0)
        np.testing.assert_allclose(grad, np.full((1, 1, 1), 4.0))

    def test_gradient_matches_finite_differences(self):
        _, grad = bev_alignment_loss(self.fe, self.fm, self.mask)
        numeric = np.zeros_like(self.fe)
        eps = 1e-6
        for idx in np.ndindex(self.fe.shape):
            step = np.zeros_like(self.fe)
            step[idx] = eps
            numeric[idx] = (bev_alignment_loss(self.fe + step, self.fm, self.mask)[0]
                            - bev_alignment_loss(self.fe - step, self.fm, self.mask)[0]) / (2 * eps)
        np.testing.assert_allclose(grad, numeric, rtol=1e-5, atol=1e-8)

    def test_masked_cells_have_zero_gradient(self):
        _, grad = bev_alignment_loss(self.fe, self.fm, self.mask)
        self.assertTrue(np.all(grad[~self.mask] == 0.0))

    def test_symmetric_and_quadratic(self):
        loss, _ = bev_alignment_loss(self.fe, self.fm, self.mask)
        swapped, _ = bev_alignment_loss(self.fm, self.fe, self.mask)
        scaled, _ = bev_alignment_loss(3.0 * self.fe, 3.0 * self.fm, self.mask)
        self.assertAlmostEqual(loss, swapped, places=12)
        self.assertAlmostEqual(scaled, 9.0 * loss, places=9)
        self.assertGreaterEqual(loss, 0.0)

    def test_no_visible_cells(self):
        loss, grad = bev_alignment_loss(self.fe, self.fm, np.zeros((8, 8), bool))
        self.assertEqual(loss, 0.0)
        self.assertTrue(np.all(grad == 0.0))

    def test_shape_mismatch_raises(self):
        with self.assertRaises(InvalidInputError):
            bev_alignment_loss(self.fe, self.fm[:4], self.mask)
        with self.assertRaises(InvalidInputError):
            bev_alignment_loss(self.fe, self.fm, self.mask[:4])

    def test_guidance_scales_with_mu3(self):
        base = ccl_guidance(self.fe, self.fm, gamma=0.0, mu3=1.0)
        np.testing.assert_allclose(ccl_guidance(self.fe, self.fm, 0.0, mu3=2.5), 2.5 * base)
        self.assertTrue(np.all(ccl_guidance(self.fe, self.fm, 0.0, mu3=0.0) == 0.0))


class TestGuidance(unittest.TestCase):
    """Per-footprint alignment signal and grid files"""

    def setUp(self):
        self.spec = GridSpec(0.5, 20.0)
        self.seen = car(5.0, 3.0)
        ego_points = points_at(self.seen, 12)
        extra = points_at(self.seen, 30)
        self.ego = PointCloud(ego_points)
        self.multi = PointCloud(np.vstack([ego_points, extra]))

    def test_discrepancy_inside_and_outside_visible_region(self):
        guidance = build_guidance(self.ego, self.multi, self.spec, mu3=1.5)
        self.assertGreater(guidance.loss, 0.0)
        self.assertGreater(guidance.footprint_discrepancy(self.seen), 0.0)
        self.assertEqual(guidance.footprint_discrepancy(car(-12.0, -12.0)), 0.0)
        self.assertEqual(guidance.footprint_discrepancy(car(80.0, 0.0)), 0.0)
        np.testing.assert_allclose(guidance.footprint_discrepancies([self.seen, car(-12.0, -12.0)]),
                                   [guidance.footprint_discrepancy(self.seen), 0.0])

    def test_zero_mu3_silences_guidance(self):
        guidance = build_guidance(self.ego, self.multi, self.spec, mu3=0.0)
        self.assertEqual(guidance.footprint_discrepancy(self.seen), 0.0)
        self.assertTrue(np.all(guidance.gradient == 0.0))

    def test_identical_views_give_no_signal(self):
        guidance = build_guidance(self.ego, self.ego, self.spec)
        self.assertEqual(guidance.loss, 0.0)
        self.assertEqual(guidance.footprint_discrepancy(self.seen), 0.0)

    def test_grid_file_round_trip(self):
        grid = bev_rasterize(self.multi, self.spec)
        with tempfile.TemporaryDirectory() as tmp:
            loaded = load_grid(save_grid(grid, Path(tmp) / "grids" / "f0.txt"))
            (Path(tmp) / "bad.txt").write_text("not a grid\n", encoding="utf-8")
            with self.assertRaises(ArtifactIOError):
                load_grid(Path(tmp) / "bad.txt")
        self.assertEqual(loaded.spec, self.spec)
        np.testing.assert_array_equal(loaded.values, grid.values)


if __name__ == "__main__":
    unittest.main()
