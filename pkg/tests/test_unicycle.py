import math
import unittest

import numpy as np

from unicycle import (
    SingularState,
    UnicycleState,
    disturbance_jacobian,
    endogenous_feedback,
    flat_map,
    inverse_map,
    plant_derivative,
    unicycle_flat_system,
    wrap_angle,
)


class FlatMapTests(unittest.TestCase):
    def test_flat_coordinates(self):
        s = UnicycleState(1.0, 2.0, 0.3, 0.4, -0.5)
        np.testing.assert_array_equal(flat_map(s), [1.0, 2.0, 0.4, -0.5])

    def test_inverse_recovers_aligned_heading(self):
        xi = np.array([1.0, -2.0, -0.3, 0.4])
        s = inverse_map(xi)
        self.assertAlmostEqual(s.x3, math.atan2(0.4, -0.3))
        np.testing.assert_allclose(flat_map(s), xi)

    def test_singular_at_rest(self):
        with self.assertRaises(SingularState):
            inverse_map(np.array([1.0, 1.0, 0.0, 0.0]))

    def test_non_finite_state_rejected(self):
        with self.assertRaises(ValueError):
            UnicycleState(0.0, math.nan, 0.0, 1.0, 0.0)

    def test_flat_system_dimensions(self):
        flat = unicycle_flat_system()
        self.assertEqual((flat.n_f, flat.m), (4, 2))


class EndogenousFeedbackTests(unittest.TestCase):
    def test_turn_rate(self):
        s = UnicycleState(0.0, 0.0, 0.0, 1.0, 0.0)
        np.testing.assert_allclose(endogenous_feedback(s, np.array([0.0, 1.0])), [1.0, 1.0])

    def test_zero_flat_input(self):
        s = UnicycleState(0.0, 0.0, 0.0, 0.6, 0.8)
        np.testing.assert_allclose(endogenous_feedback(s, np.zeros(2)), [1.0, 0.0])

    def test_heading_alignment_term(self):
        s = UnicycleState(0.0, 0.0, 0.1, 1.0, 0.0)
        u = endogenous_feedback(s, np.zeros(2), heading_gain=2.0)
        self.assertAlmostEqual(float(u[1]), -0.2)

    def test_singular_speed(self):
        with self.assertRaises(SingularState):
            endogenous_feedback(UnicycleState(0.0, 0.0, 0.0, 0.0, 0.0), np.zeros(2))

    def test_turn_rate_matches_velocity_rotation(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            y = rng.normal(size=2)
            v = rng.normal(size=2)
            s = UnicycleState(0.0, 0.0, math.atan2(y[1], y[0]), y[0], y[1])
            u = endogenous_feedback(s, v)
            expected = (y[0] * v[1] - y[1] * v[0]) / float(y @ y)
            self.assertAlmostEqual(float(u[1]), expected)
            self.assertAlmostEqual(float(u[0]), float(np.linalg.norm(y)))


class PlantTests(unittest.TestCase):
    def test_straight_line(self):
        s = UnicycleState(0.0, 0.0, 0.0, 1.0, 0.0)
        np.testing.assert_allclose(plant_derivative(s, np.array([1.0, 0.0]), np.zeros(2)), [1, 0, 0, 0, 0])

    def test_rest(self):
        s = UnicycleState(3.0, -1.0, 0.7, 0.0, 0.0)
        np.testing.assert_array_equal(plant_derivative(s, np.zeros(2), np.zeros(2)), np.zeros(5))

    def test_position_rate_equals_flat_velocity(self):
        s = UnicycleState(0.0, 0.0, math.atan2(0.8, 0.6), 0.6, 0.8)
        v = np.array([0.1, -0.2])
        dx = plant_derivative(s, endogenous_feedback(s, v), np.zeros(2), v)
        np.testing.assert_allclose(dx[:2], [0.6, 0.8])
        np.testing.assert_allclose(dx[3:], v)

    def test_disturbance_image(self):
        s = UnicycleState(0.0, 0.0, 0.4, 1.0, 0.0)
        d = np.array([0.05, -0.03])
        w = disturbance_jacobian(s) @ d
        self.assertAlmostEqual(float(np.linalg.norm(w)), 0.05)
        self.assertLessEqual(float(np.linalg.norm(w)), float(np.linalg.norm(d)))
        dx = plant_derivative(s, np.array([1.0, 0.0]), d)
        np.testing.assert_allclose(dx[:2] - plant_derivative(s, np.array([1.0, 0.0]), np.zeros(2))[:2], w[:2])


class WrapAngleTests(unittest.TestCase):
    def test_wraps_into_principal_range(self):
        self.assertAlmostEqual(wrap_angle(3.0 * math.pi / 2.0), -math.pi / 2.0)
        self.assertAlmostEqual(wrap_angle(-0.25), -0.25)


if __name__ == "__main__":
    unittest.main()
