"""Outer loop, baseline schemes, and the moving-time sweep.

Proves:
  1. the three scheme trajectories match their hand geometry and pass the
     endpoint/speed screen
  2. optimized beats both baselines on the stock cell; traces are short,
     non-increasing, and consistent with the recomputed energy
  3. every returned plan passes exact-formula verification at 1e-6
  4. identical inputs give bit-identical plans
  5. the sweep validates its grid, orders cells, and records per-cell
     failures instead of raising
"""

from dataclasses import replace

import numpy as np
import pytest

from fduav import energy, planner
from fduav.model import trajectory_violations
from fduav.planner import (PlannerError, Scheme, benchmark1_trajectory,
                           benchmark2_trajectory, initial_trajectory,
                           run_scheme, sweep_moving_time)


@pytest.fixture(scope="module")
def solutions(cfg, layout, chans):
    return {s: run_scheme(s, cfg, layout, chans) for s in Scheme}


# ── scheme geometry ────────────────────────────────────────────────────────────

def test_initial_trajectory_is_equal_spaced_line(cfg):
    traj = initial_trajectory(cfg)
    assert traj.N == cfg.N
    np.testing.assert_allclose(traj.points[0], cfg.q_ui, atol=1e-15)
    np.testing.assert_allclose(traj.points[-1], cfg.q_uf, atol=1e-15)
    np.testing.assert_allclose(traj.leg_lengths(), 2.0 / (cfg.N + 1), rtol=1e-12)


def test_benchmark1_hovers_at_centre(cfg):
    traj = benchmark1_trajectory(cfg)
    np.testing.assert_allclose(traj.hover_points(), 0.0, atol=1e-15)
    legs = traj.leg_lengths()
    assert legs[0] == pytest.approx(np.sqrt(2.0)) and \
        legs[-1] == pytest.approx(np.sqrt(2.0))
    bd = energy.energy_breakdown(
        traj, _zero_beams(cfg), cfg)
    assert bd.propulsion_total == pytest.approx(
        2 * cfg.tau * 2.0 / cfg.t_move ** 2, rel=1e-12)


def test_benchmark2_sweeps_collection_segment(cfg):
    traj = benchmark2_trajectory(cfg)
    xs = traj.hover_points()[:, 0]
    assert xs[0] == pytest.approx(-0.7778) and xs[-1] == pytest.approx(0.7778)
    np.testing.assert_allclose(traj.hover_points()[:, 1], 0.0, atol=1e-15)
    np.testing.assert_allclose(np.diff(xs), 2 * 0.7778 / (cfg.N - 1), rtol=1e-12)
    assert np.diff(xs)[0] == pytest.approx(0.22223, abs=1e-5)

    single = benchmark2_trajectory(replace(cfg, N=1))
    np.testing.assert_allclose(single.hover_points(), [[-0.7778, 0.0]])


def test_scheme_trajectories_are_feasible(cfg):
    for traj in (initial_trajectory(cfg), benchmark1_trajectory(cfg),
                 benchmark2_trajectory(cfg)):
        assert trajectory_violations(traj, cfg) == []


def _zero_beams(cfg):
    from fduav.model import BeamPlan
    return BeamPlan(np.zeros((cfg.N, cfg.M, cfg.M), dtype=complex))


# ── solved plans ───────────────────────────────────────────────────────────────

def test_optimized_dominates_baselines(solutions):
    opt = solutions[Scheme.OPTIMIZED].objective
    b1 = solutions[Scheme.BENCHMARK1].objective
    b2 = solutions[Scheme.BENCHMARK2].objective
    assert opt <= min(b1, b2) + 1e-6


def test_traces_are_short_and_monotone(solutions):
    opt = solutions[Scheme.OPTIMIZED]
    assert 1 <= len(opt.trace) <= 8
    objs = [rec.objective for rec in opt.trace]
    assert all(b <= a + 1e-6 for a, b in zip(objs, objs[1:]))
    assert all(rec.first_loop_iters >= 1 for rec in opt.trace)
    for s in (Scheme.BENCHMARK1, Scheme.BENCHMARK2):
        assert len(solutions[s].trace) == 1
        assert solutions[s].trace[0].second_loop_iters == 0


def test_objective_matches_recomputed_energy(cfg, solutions):
    for sol in solutions.values():
        bd = energy.total_energy(sol, cfg)
        assert sol.objective == pytest.approx(bd.total, rel=1e-9)


def test_every_plan_verifies(cfg, layout, chans, solutions):
    for sol in solutions.values():
        report = energy.verify_feasibility(sol, chans, cfg, layout, tol=1e-6)
        assert report.ok, report.failures()


def test_optimizer_is_deterministic(cfg, layout, chans, solutions):
    again = planner.optimize(cfg, layout, chans)
    ref = solutions[Scheme.OPTIMIZED]
    assert again.objective == ref.objective
    assert np.array_equal(again.trajectory.points, ref.trajectory.points)
    assert np.array_equal(again.powers.powers, ref.powers.powers)
    assert np.array_equal(again.beams.covariances, ref.beams.covariances)
    assert again.trace == ref.trace


def test_run_scheme_accepts_names(cfg, layout, chans, solutions):
    sol = run_scheme("benchmark1", cfg, layout, chans)
    assert sol.objective == solutions[Scheme.BENCHMARK1].objective
    with pytest.raises(ValueError):
        run_scheme("warp_drive", cfg, layout, chans)


# ── sweep ──────────────────────────────────────────────────────────────────────

def test_sweep_rejects_bad_grids(cfg, layout, chans):
    with pytest.raises(ValueError, match="positive"):
        sweep_moving_time(cfg, layout, chans, [-1.0, 1.0])
    with pytest.raises(ValueError, match="ascending"):
        sweep_moving_time(cfg, layout, chans, [2.0, 1.0])


def test_sweep_orders_cells_and_matches_single_runs(cfg, layout, chans, solutions):
    cells = sweep_moving_time(cfg, layout, chans, [1.0])
    assert [c.scheme for c in cells] == ["optimized", "benchmark1", "benchmark2"]
    assert all(c.status == "ok" and c.t_move == 1.0 for c in cells)
    for cell, scheme in zip(cells, Scheme):
        assert cell.breakdown.total == pytest.approx(
            solutions[scheme].objective, rel=1e-12)


def test_sweep_records_failures_per_cell(cfg, layout, chans):
    crawl = replace(cfg, V_max=0.15)    # 9 legs cannot span the 2 m diagonal
    cells = sweep_moving_time(crawl, layout, chans, [1.0])
    assert len(cells) == 3
    assert all(c.status != "ok" for c in cells)
    assert all(c.breakdown is None and c.solution is None for c in cells)
    assert any("infeasible" in c.status for c in cells)
