"""Hover-plan drivers: the alternating two-loop optimizer, the two fixed
trajectory baseline schemes, and the moving-time sweep used for experiments.

The optimizer alternates the power/beam loop and the trajectory loop, then
re-anchors the linearization at the exact formulas, until the total UAV
energy settles. Baseline schemes keep their trajectory fixed and run the
power/beam loop only. Every returned plan is verified against the exact
constraint formulas before it leaves this module.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace

import numpy as np

from . import channel, energy, sca
from .model import (BeamPlan, DeviceLayout, OuterIterRecord, PowerSchedule,
                    Solution, SystemConfig, Trajectory, trajectory_violations,
                    validate_config)

EPS_OUTER = 1e-3    # relative change of total energy that stops the outer loop
MAX_OUTER = 20


class PlannerError(RuntimeError):
    pass


class Scheme(str, enum.Enum):
    OPTIMIZED = "optimized"
    BENCHMARK1 = "benchmark1"
    BENCHMARK2 = "benchmark2"


def initial_trajectory(cfg: SystemConfig) -> Trajectory:
    """Equal-spaced straight line from q_ui to q_uf (N+2 points)."""
    a = np.asarray(cfg.q_ui, dtype=float)
    b = np.asarray(cfg.q_uf, dtype=float)
    s = np.linspace(0.0, 1.0, cfg.N + 2)[:, None]
    return Trajectory((1.0 - s) * a + s * b)


def benchmark1_trajectory(cfg: SystemConfig) -> Trajectory:
    """Fly to the area centre, hover there for all N slots, fly out."""
    centre = np.zeros(2)
    pts = np.vstack([cfg.q_ui, np.tile(centre, (cfg.N, 1)), cfg.q_uf])
    return Trajectory(pts)


BENCH2_HALF_SPAN = 0.7778   # x-extent of the benchmark collection segment


def benchmark2_trajectory(cfg: SystemConfig) -> Trajectory:
    """Sweep the x-axis segment: N equally spaced collection points from
    [-0.7778, 0] to [0.7778, 0] inclusive, entered from q_ui, exited to q_uf."""
    if cfg.N == 1:
        xs = np.array([-BENCH2_HALF_SPAN])
    else:
        xs = np.linspace(-BENCH2_HALF_SPAN, BENCH2_HALF_SPAN, cfg.N)
    hover = np.column_stack([xs, np.zeros_like(xs)])
    pts = np.vstack([cfg.q_ui, hover, cfg.q_uf])
    return Trajectory(pts)


def _initial_lin(cfg, chans, layout, traj) -> sca.LinearizationState:
    """Starting expansion points for the first loop at a given trajectory.

    The base attempt splits each device's payload equally over all N slots
    (t_bar from the closed-form SINR level). That split can be infeasible
    when a slot's zero-forcing row norm is large: the noise floor and the
    self-interference it amplifies then exceed what any power-capped beam
    can deliver in that slot. On infeasibility, retry with the j worst
    conditioned slots per device excluded from the initial split (their
    t_bar set to 0) and the per-slot target raised to keep the payload,
    escalating j until the feasibility program admits a point."""
    K, N = cfg.K, cfg.N
    Z = channel.zf_receivers(chans)
    zn = np.array([[float(np.vdot(Z[n][k], Z[n][k]).real) for n in range(N)]
                   for k in range(K)])
    order = np.argsort(zn, axis=1)      # slots per device, best first
    err = None
    for j in range(N):
        t_bar = np.zeros((K, N))
        for k in range(K):
            kept = order[k, :N - j]
            t_bar[k, kept] = sca.init_t(cfg.R[k], cfg.T * (N - j) / N, cfg.B)
        try:
            e_bar, _, _ = sca.init_e(cfg, chans, layout, traj, t_bar,
                                     cheapest=False)
        except sca.InitializationError as exc:
            err = exc
            continue
        break
    else:
        raise err
    hover = traj.hover_points()
    f_bar = np.zeros((K, N))
    for k in range(K):
        qk = layout.positions[k]
        for n in range(N):
            f_bar[k, n] = cfg.L * cfg.L + float(np.sum((hover[n] - qk) ** 2))
    return sca.LinearizationState(t_bar=t_bar, e_bar=e_bar,
                                  r_bar=1.0 / f_bar, f_bar=f_bar)


def _assemble(cfg, chans, layout, traj, P, X, trace) -> Solution:
    """Final packaging: exact-formula power polish, objective, verification."""
    try:
        P = sca.refine_powers(cfg, chans, layout, traj, X)
    except sca.SubproblemError:
        pass    # rate margin keeps the loop schedule itself feasible
    breakdown = energy.energy_breakdown(traj, BeamPlan(X), cfg)
    sol = Solution(trajectory=traj, beams=BeamPlan(X),
                   powers=PowerSchedule(P), objective=breakdown.total,
                   trace=tuple(trace))
    report = energy.verify_feasibility(sol, chans, cfg, layout, tol=1e-6)
    if not report.ok:
        worst = report.failures()[0]
        raise PlannerError(
            f"plan failed verification: {worst.name} at {worst.index} "
            f"(slack {worst.slack:.3e})")
    return sol


def optimize(cfg: SystemConfig, layout: DeviceLayout, chans: channel.ChannelSet,
             eps_outer: float = EPS_OUTER, max_outer: int = MAX_OUTER) -> Solution:
    """Jointly optimize trajectory, beams, and powers by alternating the two
    convex loops with exact re-anchoring between passes."""
    validate_config(cfg)
    traj = initial_trajectory(cfg)
    lin = _initial_lin(cfg, chans, layout, traj)
    trace: list[OuterIterRecord] = []
    last = None                 # (P, X, traj) of the last complete pass
    consecutive_bad = 0
    P = X = None
    for i in range(1, max_outer + 1):
        try:
            P, X, lin, rep1 = sca.run_first_loop(cfg, chans, layout, traj, lin,
                                                 recover=True)
            traj, lin, rep2 = sca.run_second_loop(cfg, chans, layout, P, X, lin)
            bad = "infeasible" in (rep1.termination, rep2.termination)
        except sca.SubproblemError as exc:
            if last is None:
                raise PlannerError(
                    f"outer iteration {i}: {exc}") from exc
            # descent is numerically exhausted; keep the last complete pass
            P, X, traj = last
            break
        lin = sca.restore_linearization(cfg, chans, layout, traj, P, X)
        if bad:
            # the pass produced a stale iterate; rewind rather than record it
            consecutive_bad += 1
            if consecutive_bad >= 2:
                if last is None:
                    raise PlannerError(
                        f"outer iteration {i}: two consecutive infeasible passes")
                P, X, traj = last
                break
            if last is not None:
                P, X, traj = last
                lin = sca.restore_linearization(cfg, chans, layout, traj, P, X)
            continue
        consecutive_bad = 0
        obj = energy.energy_breakdown(traj, BeamPlan(X), cfg).total
        if trace and obj > trace[-1].objective:
            # a pass can tick the exact energy up a hair while the surrogate
            # settles; keep the cheaper iterate and call the descent finished
            P, X, traj = last
            break
        last = (P, X, traj)
        trace.append(OuterIterRecord(i, obj, rep1.iterations, rep2.iterations))
        if len(trace) >= 2 and abs(trace[-1].objective - trace[-2].objective) \
                <= eps_outer * max(1.0, abs(trace[-1].objective)):
            break
    return _assemble(cfg, chans, layout, traj, P, X, trace)


def _benchmark(cfg, layout, chans, traj) -> Solution:
    validate_config(cfg)
    bad = trajectory_violations(traj, cfg)
    if bad:
        raise PlannerError("baseline trajectory infeasible: " + "; ".join(bad))
    lin = _initial_lin(cfg, chans, layout, traj)
    P, X, lin, rep1 = sca.run_first_loop(cfg, chans, layout, traj, lin,
                                         recover=True)
    obj = energy.energy_breakdown(traj, BeamPlan(X), cfg).total
    trace = [OuterIterRecord(1, obj, rep1.iterations, 0)]
    return _assemble(cfg, chans, layout, traj, P, X, trace)


def benchmark1(cfg: SystemConfig, layout: DeviceLayout,
               chans: channel.ChannelSet) -> Solution:
    return _benchmark(cfg, layout, chans, benchmark1_trajectory(cfg))


def benchmark2(cfg: SystemConfig, layout: DeviceLayout,
               chans: channel.ChannelSet) -> Solution:
    return _benchmark(cfg, layout, chans, benchmark2_trajectory(cfg))


def run_scheme(scheme: Scheme | str, cfg: SystemConfig, layout: DeviceLayout,
               chans: channel.ChannelSet) -> Solution:
    scheme = Scheme(scheme)
    if scheme is Scheme.OPTIMIZED:
        return optimize(cfg, layout, chans)
    if scheme is Scheme.BENCHMARK1:
        return benchmark1(cfg, layout, chans)
    return benchmark2(cfg, layout, chans)


@dataclass(frozen=True)
class SweepCell:
    t_move: float
    scheme: str
    status: str                             # "ok" or the failure reason
    breakdown: energy.EnergyBreakdown | None
    solution: Solution | None


def sweep_moving_time(cfg: SystemConfig, layout: DeviceLayout,
                      chans: channel.ChannelSet,
                      t_values) -> list[SweepCell]:
    """All three schemes at each moving time, same channel draw throughout.

    Cells are emitted in input order, schemes ordered optimized, baseline 1,
    baseline 2 within each t. Per-cell failures are recorded, not raised."""
    t_values = [float(t) for t in t_values]
    if any(t <= 0 for t in t_values):
        raise ValueError("moving times must be positive")
    if any(b <= a for a, b in zip(t_values, t_values[1:])):
        raise ValueError("moving times must be ascending")
    cells = []
    for t in t_values:
        cfg_t = replace(cfg, t_move=t)
        for scheme in Scheme:
            try:
                sol = run_scheme(scheme, cfg_t, layout, chans)
                cells.append(SweepCell(
                    t_move=t, scheme=scheme.value, status="ok",
                    breakdown=energy.total_energy(sol, cfg_t), solution=sol))
            except (PlannerError, sca.SubproblemError) as exc:
                cells.append(SweepCell(t_move=t, scheme=scheme.value,
                                       status=str(exc), breakdown=None,
                                       solution=None))
    return cells
