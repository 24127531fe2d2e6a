import unittest

import numpy as np
from scipy.optimize import minimize

from convex_solver import ConvexSubproblem, EllipsoidConstraint, Multipliers, check_kkt, primal_residual, solve


def _random_instance(rng, n=5):
    M = rng.normal(size=(n, n))
    H = M.T @ M + 0.1 * np.eye(n)
    g = rng.normal(size=n) * 3.0
    x0 = rng.normal(size=n)
    Aeq = rng.normal(size=(1, n))
    beq = Aeq @ x0
    Ain = rng.normal(size=(4, n))
    bin_ = Ain @ x0 + rng.uniform(0.1, 1.0, size=4)
    P = np.diag(rng.uniform(0.5, 2.0, size=3))
    ellipsoid = EllipsoidConstraint(P, x0[:3] + 0.05, 1.0, (0, 1, 2))
    return ConvexSubproblem(H, g, Aeq, beq, Ain, bin_, ellipsoid=ellipsoid), x0


def _reference_objective(prob, x0):
    ell = prob.ellipsoid
    idx = list(ell.indices)
    constraints = [
        {"type": "eq", "fun": lambda x: prob.Aeq @ x - prob.beq},
        {"type": "ineq", "fun": lambda x: prob.bin - prob.Ain @ x},
        {
            "type": "ineq",
            "fun": lambda x: ell.level - 0.5 * (x[idx] - ell.center) @ ell.P @ (x[idx] - ell.center),
        },
    ]
    result = minimize(
        prob.objective,
        x0,
        jac=lambda x: prob.H @ x + prob.g,
        constraints=constraints,
        method="SLSQP",
        options={"ftol": 1e-14, "maxiter": 500},
    )
    return result.fun


class AnalyticTests(unittest.TestCase):
    def test_projection_onto_hyperplane(self):
        prob = ConvexSubproblem(2.0 * np.eye(2), np.zeros(2), [[1.0, 0.0]], [1.0], np.zeros((0, 2)), [])
        report = solve(prob)
        self.assertEqual(report.status, "optimal")
        np.testing.assert_allclose(report.x, [1.0, 0.0], atol=1e-8)
        self.assertAlmostEqual(report.objective, 1.0, places=8)

    def test_clamped_by_ellipsoid(self):
        prob = ConvexSubproblem(
            [[2.0]],
            [-4.0],
            np.zeros((0, 1)),
            [],
            np.zeros((0, 1)),
            [],
            ellipsoid=EllipsoidConstraint([[2.0]], [0.0], 1.0, (0,)),
            constant=4.0,
        )
        report = solve(prob)
        self.assertTrue(report.optimal)
        self.assertAlmostEqual(float(report.x[0]), 1.0, places=8)
        self.assertAlmostEqual(report.objective, 1.0, places=8)
        self.assertAlmostEqual(report.duals.ellipsoid, 1.0, places=6)
        self.assertLessEqual(report.kkt_residual, 1e-8)
        exact = check_kkt(prob, np.array([1.0]), Multipliers(np.zeros(0), np.zeros(0), 1.0))
        self.assertLessEqual(exact, 1e-10)

    def test_unconstrained(self):
        prob = ConvexSubproblem(np.eye(3), [1.0, -2.0, 0.5], np.zeros((0, 3)), [], np.zeros((0, 3)), [])
        report = solve(prob)
        self.assertTrue(report.optimal)
        np.testing.assert_allclose(report.x, [-1.0, 2.0, -0.5], atol=1e-8)

    def test_zero_level_pins_center(self):
        prob = ConvexSubproblem(
            np.eye(2),
            np.zeros(2),
            np.zeros((0, 2)),
            [],
            np.zeros((0, 2)),
            [],
            ellipsoid=EllipsoidConstraint(np.eye(2), [0.3, -0.4], 0.0, (0, 1)),
        )
        report = solve(prob)
        self.assertTrue(report.optimal)
        np.testing.assert_allclose(report.x, [0.3, -0.4], atol=1e-8)
        self.assertEqual(report.dual_bound, report.objective)


class InfeasibleTests(unittest.TestCase):
    def test_contradictory_inequalities(self):
        prob = ConvexSubproblem([[1.0]], [0.0], np.zeros((0, 1)), [], [[1.0], [-1.0]], [0.0, -1.0])
        report = solve(prob)
        self.assertEqual(report.status, "infeasible")
        self.assertLessEqual(report.certificate_residual, 1e-6)
        self.assertTrue(np.all(report.duals.ineq >= 0))

    def test_inconsistent_equalities(self):
        prob = ConvexSubproblem(np.eye(2), np.zeros(2), [[1.0, 0.0], [1.0, 0.0]], [0.0, 1.0], np.zeros((0, 2)), [])
        report = solve(prob)
        self.assertEqual(report.status, "infeasible")
        self.assertLessEqual(report.certificate_residual, 1e-6)

    def test_ellipsoid_outside_halfspace(self):
        prob = ConvexSubproblem(
            np.eye(2),
            np.zeros(2),
            np.zeros((0, 2)),
            [],
            [[1.0, 0.0]],
            [-2.0],
            ellipsoid=EllipsoidConstraint(2.0 * np.eye(2), [0.0, 0.0], 1.0, (0, 1)),
        )
        self.assertEqual(solve(prob).status, "infeasible")


class RandomInstanceTests(unittest.TestCase):
    def test_matches_reference_solver(self):
        rng = np.random.default_rng(2024)
        for _ in range(20):
            prob, x0 = _random_instance(rng)
            report = solve(prob)
            self.assertTrue(report.optimal, report.status)
            self.assertLessEqual(report.kkt_residual, 1e-6)
            self.assertLessEqual(check_kkt(prob, report.x, report.duals), 1e-6)
            self.assertLessEqual(report.dual_bound, report.objective + 1e-6)
            reference = _reference_objective(prob, x0)
            self.assertLessEqual(report.objective, reference + 1e-5 * max(1.0, abs(reference)))
            self.assertAlmostEqual(report.objective, reference, delta=1e-4 * max(1.0, abs(reference)))

    def test_repeated_solves_are_identical(self):
        prob, _ = _random_instance(np.random.default_rng(5))
        first, second = solve(prob), solve(prob)
        np.testing.assert_array_equal(first.x, second.x)
        self.assertEqual(first.objective, second.objective)
        self.assertEqual(first.iterations, second.iterations)
        np.testing.assert_array_equal(first.duals.ineq, second.duals.ineq)

    def test_contradicting_equality_removes_optimality(self):
        prob, _ = _random_instance(np.random.default_rng(6))
        self.assertTrue(solve(prob).optimal)
        Aeq = np.vstack([prob.Aeq, prob.Aeq[0]])
        beq = np.append(prob.beq, prob.beq[0] + 1.0)
        extended = ConvexSubproblem(prob.H, prob.g, Aeq, beq, prob.Ain, prob.bin, ellipsoid=prob.ellipsoid)
        self.assertNotEqual(solve(extended).status, "optimal")

    def test_primal_residual_of_solution(self):
        prob, x0 = _random_instance(np.random.default_rng(9))
        self.assertLessEqual(primal_residual(prob, solve(prob).x), 1e-7)
        shifted = x0.copy()
        shifted[0] += 10.0
        self.assertGreater(primal_residual(prob, shifted), 1e-3)


class ValidationTests(unittest.TestCase):
    def test_asymmetric_hessian(self):
        with self.assertRaises(ValueError):
            ConvexSubproblem([[1.0, 1.0], [0.0, 1.0]], [0.0, 0.0], np.zeros((0, 2)), [], np.zeros((0, 2)), [])

    def test_rhs_mismatch(self):
        with self.assertRaises(ValueError):
            ConvexSubproblem(np.eye(2), [0.0, 0.0], [[1.0, 0.0]], [1.0, 2.0], np.zeros((0, 2)), [])

    def test_ellipsoid_shape_mismatch(self):
        with self.assertRaises(ValueError):
            EllipsoidConstraint(np.eye(2), [0.0], 1.0, (0, 1))


if __name__ == "__main__":
    unittest.main()
