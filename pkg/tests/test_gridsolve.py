import math

import numpy as np
import pytest

from tailopt.gridsolve import (
    build_cells,
    project_increasing,
    solve_joint_grid,
    solve_left_cells,
    solve_left_grid,
    solve_right_cells,
    solve_right_grid,
)
from tailopt.market import KernelQuantile, MarketParams, q_integral
from tailopt.solve import solve_limited_liability
from tailopt.utility import PowerGain, PowerLoss

FLAT = MarketParams(mu=0.02, r=0.02, sigma=0.2, T=1.0)


class TestCells:
    def test_weights_sum_to_interval_masses(self, ref_kernel):
        cells = build_cells(ref_kernel, 0.0, 0.3, 500)
        assert float(np.sum(cells.w)) == pytest.approx(0.3, abs=1e-9)
        assert float(np.sum(cells.qw)) == pytest.approx(
            q_integral(ref_kernel, 0.0, 0.3), rel=1e-9
        )

    def test_full_interval(self, ref_kernel):
        cells = build_cells(ref_kernel, 0.0, 1.0, 2000)
        assert float(np.sum(cells.w)) == pytest.approx(1.0, abs=1e-12)
        assert float(np.sum(cells.qw)) == pytest.approx(1.0, abs=1e-9)

    def test_cell_means_decrease(self, ref_kernel):
        cells = build_cells(ref_kernel, 0.0, 1.0, 300)
        qbar = cells.qw / cells.w
        assert bool(np.all(np.diff(qbar) <= 1e-12))

    def test_custom_kernel_rejected(self, ref_market):
        generic = KernelQuantile.from_quantile(ref_market, lambda x: 0.0)
        with pytest.raises(ValueError, match="Black-Scholes"):
            build_cells(generic, 0.0, 1.0, 10)


class TestIsotonicProjection:
    def test_already_monotone_untouched(self):
        y = np.array([1.0, 2.0, 5.0])
        w = np.ones(3)
        assert project_increasing(y, w).tolist() == y.tolist()

    def test_violations_pooled(self):
        y = np.array([3.0, 1.0])
        w = np.ones(2)
        assert project_increasing(y, w).tolist() == [2.0, 2.0]


class TestGridSolvesFlatKernel:
    """theta = 0 keeps q == 1, where the discrete optimum is exact."""

    def test_left(self):
        k = KernelQuantile.from_market(FLAT)
        cost, phi = solve_left_grid(k, PowerLoss(2.0), -1.0, 0.3, 400)
        assert cost == pytest.approx(-math.sqrt(0.3), rel=1e-6)
        assert bool(np.all(np.diff(phi) >= -1e-12))

    def test_right(self):
        k = KernelQuantile.from_market(FLAT)
        val, phi = solve_right_grid(k, PowerGain(0.5), 2.0, 0.1, 400)
        assert val == pytest.approx(math.sqrt(2.0 * 0.9), rel=1e-6)
        assert bool(np.all(phi >= 0.0))


class TestGridVsClosedForms:
    def test_left_reference(self, ref_kernel):
        from tailopt.solve import left_problem

        for p in (0.05, 0.3):
            cost, _ = solve_left_grid(ref_kernel, PowerLoss(2.0), -1.0, p, 1500)
            assert cost == pytest.approx(
                left_problem(ref_kernel, PowerLoss(2.0), -1.0, p).c1, rel=2e-4
            )

    def test_right_reference(self, ref_kernel):
        from tailopt.solve import right_problem

        for p in (0.1, 0.5):
            val, _ = solve_right_grid(ref_kernel, PowerGain(0.5), 1.0, p, 1500)
            assert val == pytest.approx(
                right_problem(ref_kernel, PowerGain(0.5), 1.0, p).value, rel=2e-4
            )

    def test_subdifferential_route_matches_bruteforce(self, ref_kernel, rng):
        # same grid, two solvers: closed-form inverse marginal with a
        # calibrated multiplier vs numeric dual bisection
        for _ in range(4):
            p = float(rng.uniform(0.1, 0.9))
            g_r = float(rng.uniform(1.2, 4.0))
            level = float(-rng.uniform(0.2, 2.0))
            cells = build_cells(ref_kernel, 0.0, p, 200)
            qbar = cells.qw / cells.w
            u_r = PowerLoss(g_r)

            def util(mult):
                phi = -((mult * qbar / g_r) ** (1.0 / (g_r - 1.0)))
                return float(np.dot(cells.w, u_r.evaluate(phi)))

            lo, hi = 1e-8, 1e8
            for _ in range(200):
                mid = math.sqrt(lo * hi)
                if util(mid) > level:
                    lo = mid
                else:
                    hi = mid
            mult = math.sqrt(lo * hi)
            phi = -((mult * qbar / g_r) ** (1.0 / (g_r - 1.0)))
            cost_closed = float(np.dot(cells.qw, phi))
            cost_bf, _ = solve_left_cells(cells, u_r, level)
            assert abs(cost_closed - cost_bf) <= 1e-6


class TestJointGrid:
    def test_matches_two_stage_solver(self, ref_kernel, ref_market):
        fwd = math.exp(ref_market.r * ref_market.T)
        joint = solve_joint_grid(
            ref_kernel, PowerLoss(2.0), PowerGain(0.5), -1.0, fwd, 600, coarse=17
        )
        report = solve_limited_liability(
            ref_kernel, PowerLoss(2.0), PowerGain(0.5), -1.0, 1.0, ref_market.r, ref_market.T
        )
        assert joint.value == pytest.approx(report.value, rel=5e-3)
        assert joint.p_star == pytest.approx(report.p_star, abs=0.05)

    def test_empty_sides_handled(self, ref_kernel):
        # split at 0 means no loss cells; at n no gain cells
        cells = build_cells(ref_kernel, 0.0, 1.0, 50)
        val, _ = solve_right_cells(cells, PowerGain(0.5), 1.0)
        assert val > 0.0
        cost, phi = solve_left_cells(
            type(cells)(w=cells.w[:0], qw=cells.qw[:0], x_edges=cells.x_edges[:1]),
            PowerLoss(2.0),
            -1.0,
        )
        assert cost == 0.0 and len(phi) == 0
