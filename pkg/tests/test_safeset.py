import unittest

import numpy as np

from flat_core import augmented_exponential, double_integrator
from safeset import (
    EmptyTightenedRegion,
    HalfSpace,
    SafeGeometry,
    cbf_interval_constraints,
    is_safe,
    locate,
    rectangle_region,
    region_constraints,
    safety_margin,
    tighten,
    tighten_region,
)
from tracker import ErrorEllipsoid

FLAT = double_integrator(2)
FIVE_ROOMS = [
    (0.0, 0.0, 3.0, 6.0),
    (0.0, 3.5, 5.5, 6.0),
    (4.0, 0.0, 5.5, 6.0),
    (4.0, 0.0, 9.0, 2.5),
    (6.5, 0.0, 9.0, 6.0),
]


def _geometry(boxes):
    return SafeGeometry.from_regions(
        [rectangle_region(i, (b[0], b[1]), (b[2], b[3])) for i, b in enumerate(boxes)]
    )


def _x_wall(b=1.0):
    return HalfSpace(np.array([1.0, 0.0, 0.0, 0.0]), b)


class TightenTests(unittest.TestCase):
    def test_empty_tube_keeps_offset(self):
        hs = _x_wall(2.0)
        self.assertEqual(tighten(hs, ErrorEllipsoid(np.eye(4), 0.0)).b, 2.0)

    def test_unit_ball(self):
        level = 0.7
        D = ErrorEllipsoid(2.0 * level * np.eye(4), level)
        hs = HalfSpace(np.array([3.0, 4.0, 0.0, 0.0]), 10.0)
        self.assertAlmostEqual(tighten(hs, D).b, 5.0)

    def test_tightened_region_keeps_normals(self):
        region = rectangle_region(0, (0.0, 0.0), (2.0, 2.0))
        D = ErrorEllipsoid(2.0 * 0.1 * np.eye(4), 0.1)
        tightened = tighten_region(region, D)
        self.assertEqual(tightened.id, 0)
        for raw, tight in zip(region.halfspaces, tightened.halfspaces):
            np.testing.assert_array_equal(raw.a, tight.a)
            self.assertAlmostEqual(raw.b - tight.b, 1.0)

    def test_larger_tube_tightens_more(self):
        rng = np.random.default_rng(4)
        M = rng.normal(size=(4, 4))
        P = M @ M.T + np.eye(4)
        hs = HalfSpace(np.array([1.0, 2.0, 0.5, 0.0]), 3.0)
        offsets = [tighten(hs, ErrorEllipsoid(P, level)).b for level in (0.0, 0.01, 0.1, 1.0, 10.0)]
        self.assertEqual(offsets[0], 3.0)
        self.assertTrue(np.all(np.diff(offsets) < 0))

    def test_zero_normal_rejected(self):
        with self.assertRaises(ValueError):
            HalfSpace(np.zeros(4), 1.0)


class CbfTests(unittest.TestCase):
    def _satisfied(self, hs, z, v, T=1.0):
        G, h = cbf_interval_constraints(hs, FLAT, T)
        self.assertEqual(G.shape, (3, 6))
        return bool(np.all(G @ np.concatenate([z, v]) <= h + 1e-12))

    def test_interior_at_rest(self):
        self.assertTrue(self._satisfied(_x_wall(), np.array([0.0, 0.0, 0.0, 0.0]), np.zeros(2)))

    def test_boundary_feasible_approach(self):
        hs = _x_wall(1.0)
        z = np.array([0.0, 0.0, 1.0, 0.0])
        G, h = cbf_interval_constraints(hs, FLAT, 1.0)
        np.testing.assert_allclose(G @ np.concatenate([z, np.zeros(2)]), [0.0, 1.0, 1.0])
        self.assertTrue(self._satisfied(hs, z, np.zeros(2)))

    def test_too_fast_approach_rejected(self):
        z = np.array([0.0, 0.0, 1.01, 0.0])
        self.assertFalse(self._satisfied(_x_wall(1.0), z, np.zeros(2)))

    def test_acceleration_toward_wall_rejected(self):
        z = np.array([0.0, 0.0, 0.5, 0.0])
        self.assertTrue(self._satisfied(_x_wall(1.0), z, np.array([1.0, 0.0])))
        self.assertFalse(self._satisfied(_x_wall(1.0), z, np.array([1.2, 0.0])))

    def test_interval_stays_inside(self):
        rng = np.random.default_rng(2)
        hs = _x_wall(1.0)
        G, h = cbf_interval_constraints(hs, FLAT, 1.0)
        for _ in range(500):
            z = np.concatenate([rng.uniform(-2, 1, 2), rng.uniform(-1, 1, 2)])
            v = rng.uniform(-1, 1, 2)
            if not np.all(G @ np.concatenate([z, v]) <= h):
                continue
            for t in np.linspace(0.0, 1.0, 21):
                x = z[0] + z[2] * t + 0.5 * v[0] * t**2
                self.assertLessEqual(x, 1.0 + 1e-12)

    def test_rows_match_max_form_condition(self):
        rng = np.random.default_rng(8)
        G, h = cbf_interval_constraints(_x_wall(0.0), FLAT, 1.0)
        for h0, h0_dot, h0_ddot in rng.uniform(-2.0, 2.0, size=(10_000, 3)):
            z = np.array([h0, 0.0, h0_dot, 0.0])
            v = np.array([h0_ddot, 0.0])
            rows = bool(np.all(G @ np.concatenate([z, v]) <= h))
            max_form = h0 <= 0 and h0 + h0_dot + 0.5 * max(0.0, h0_ddot) <= 0
            self.assertEqual(rows, max_form, (h0, h0_dot, h0_ddot))


class RegionTests(unittest.TestCase):
    def test_center_at_rest_is_feasible(self):
        region = rectangle_region(0, (0.0, 0.0), (2.0, 2.0))
        D = ErrorEllipsoid(np.eye(4), 0.005)
        for T in (0.1, 1.0, 5.0):
            G, h = region_constraints(region, D, FLAT, T)
            self.assertEqual(G.shape, (12, 6))
            self.assertTrue(np.all(G @ np.array([1.0, 1.0, 0.0, 0.0, 0.0, 0.0]) <= h))

    def test_dense_interval_stays_in_tightened_region(self):
        region = rectangle_region(0, (0.0, 0.0), (4.0, 2.0))
        D = ErrorEllipsoid(np.eye(4), 0.005)
        T = 1.0
        G, h = region_constraints(region, D, FLAT, T)
        tight_G, tight_h = tighten_region(region, D).as_inequalities()
        steps = [augmented_exponential(FLAT, t) for t in np.arange(1000) * T / 1000]
        Phi = np.array([s[0] for s in steps])
        Gamma = np.array([s[1] for s in steps])
        rng = np.random.default_rng(12)
        accepted = 0
        while accepted < 1000:
            z = np.concatenate([rng.uniform([0.0, 0.0], [4.0, 2.0]), rng.normal(scale=0.5, size=2)])
            v = rng.normal(scale=0.5, size=2)
            if not np.all(G @ np.concatenate([z, v]) <= h):
                continue
            accepted += 1
            path = Phi @ z + Gamma @ v
            self.assertLessEqual(float(np.max(path @ tight_G.T - tight_h)), 1e-9)

    def test_tube_wider_than_region(self):
        region = rectangle_region(0, (0.0, 0.0), (1.0, 1.0))
        D = ErrorEllipsoid(2.0 * np.eye(4), 1.0)
        with self.assertRaises(EmptyTightenedRegion):
            region_constraints(region, D, FLAT, 1.0)

    def test_degenerate_rectangle_rejected(self):
        with self.assertRaises(ValueError):
            rectangle_region(0, (1.0, 0.0), (1.0, 2.0))


class GeometryTests(unittest.TestCase):
    def test_overlaps(self):
        geometry = _geometry(FIVE_ROOMS)
        self.assertEqual(len(geometry), 5)
        self.assertTrue(geometry.overlap(0, 1))
        self.assertTrue(geometry.overlap(1, 0))
        self.assertTrue(geometry.overlap(3, 4))
        self.assertFalse(geometry.overlap(0, 3))
        self.assertFalse(geometry.overlap(1, 4))
        self.assertTrue(geometry.overlap(2, 2))
        self.assertEqual(geometry.neighbors(0), [0, 1])

    def test_shared_edge_is_not_overlap(self):
        geometry = _geometry([(0.0, 0.0, 1.0, 1.0), (1.0, 0.0, 2.0, 1.0)])
        self.assertFalse(geometry.overlap(0, 1))

    def test_ids_must_be_dense(self):
        with self.assertRaises(ValueError):
            SafeGeometry.from_regions([rectangle_region(1, (0.0, 0.0), (1.0, 1.0))])

    def test_locate(self):
        geometry = _geometry(FIVE_ROOMS)
        self.assertEqual(locate(geometry, np.array([1.0, 4.0, 0.0, 0.0])), [0, 1])
        self.assertEqual(locate(geometry, np.array([7.75, 4.5, 0.0, 0.0])), [4])
        self.assertEqual(locate(geometry, np.array([3.5, 1.0, 0.0, 0.0])), [])

    def test_locate_tightened(self):
        geometry = _geometry(FIVE_ROOMS)
        D = ErrorEllipsoid(np.eye(4), 0.005)
        self.assertEqual(locate(geometry, np.array([2.5, 4.0, 0.0, 0.0]), D), [0, 1])
        self.assertEqual(locate(geometry, np.array([2.95, 1.0, 0.0, 0.0]), D), [])

    def test_safety_margin(self):
        geometry = _geometry([(0.0, 0.0, 1.0, 1.0)])
        self.assertAlmostEqual(safety_margin(geometry, np.array([0.5, 0.5, 3.0, -3.0])), 0.5)
        self.assertAlmostEqual(safety_margin(geometry, np.array([1.5, 0.5, 0.0, 0.0])), -0.5)
        self.assertTrue(is_safe(geometry, np.array([1.0, 0.5, 0.0, 0.0])))
        self.assertFalse(is_safe(geometry, np.array([1.0 + 1e-6, 0.5, 0.0, 0.0])))


if __name__ == "__main__":
    unittest.main()
