import unittest
from pathlib import Path

import numpy as np

from controller_stack import describe, synthesize_controller
from safeset import EmptyTightenedRegion
from scenario_io import ScenarioError, load_scenario

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"
QUICK = SCENARIOS / "quick.toml"
OPEN_FIELD = [
    "geometry.regions=[[0.0, 0.0, 100.0, 100.0]]",
    "start.position=[20.0, 20.0]",
    "goal.position=[50.0, 50.0]",
]


class SynthesisTests(unittest.TestCase):
    def test_gamma_search_picks_smallest_tube(self):
        stack = synthesize_controller(load_scenario(QUICK))
        feasible = [c for c in stack.gamma_scan if c.solution is not None]
        self.assertTrue(feasible)
        self.assertEqual(stack.law.gamma, min(feasible, key=lambda c: c.metric).gamma)
        self.assertEqual(stack.spec.N, 6)
        self.assertIs(stack.spec.D.P, stack.law.P)

    def test_fixed_gamma_anchor(self):
        overrides = OPEN_FIELD + ["tracking.gamma=2.0", "disturbance.d_bar=1.0"]
        stack = synthesize_controller(load_scenario(QUICK, overrides))
        self.assertEqual(stack.gamma_scan, ())
        self.assertAlmostEqual(stack.law.V_max, 9.66, delta=0.05)

    def test_custom_gamma_grid(self):
        stack = synthesize_controller(load_scenario(QUICK, ["tracking.gamma_grid=[2.0, 4.0, 3]"]))
        np.testing.assert_allclose([c.gamma for c in stack.gamma_scan], [2.0, 2.0 * np.sqrt(2.0), 4.0])

    def test_tube_wider_than_rooms(self):
        with self.assertRaises(EmptyTightenedRegion):
            synthesize_controller(load_scenario(SCENARIOS / "crowded.json"))

    def test_goal_outside_tightened_rooms(self):
        with self.assertRaises(ScenarioError):
            synthesize_controller(load_scenario(QUICK, ["goal.position=[4.999, 3.0]"]))


class DescribeTests(unittest.TestCase):
    def test_summary_fields(self):
        stack = synthesize_controller(load_scenario(QUICK))
        summary = describe(stack)
        for key in ("gamma", "P", "K", "lambda_max_P", "lambda_min_P", "V_max", "w_bar", "semi_axes", "tightening"):
            self.assertIn(key, summary)
        self.assertEqual(len(summary["tightening"]), 4 * len(stack.geometry))
        self.assertEqual(len(summary["position_offsets"]), 2)
        for entry in summary["tightening"]:
            self.assertAlmostEqual(entry["b"] - entry["tightened_b"], entry["offset"])
            self.assertGreater(entry["offset"], 0.0)

    def test_zero_disturbance_has_no_tightening(self):
        stack = synthesize_controller(load_scenario(QUICK, ["disturbance.d_bar=0.0", "tracking.gamma=2.0"]))
        summary = describe(stack)
        self.assertEqual(summary["V_max"], 0.0)
        self.assertTrue(all(entry["offset"] == 0.0 for entry in summary["tightening"]))


if __name__ == "__main__":
    unittest.main()
