"""UAV energy accounting and the plan feasibility verifier.

The objective charged to the UAV is propulsion over all N+1 trajectory legs
plus (T/N) times the WPT transmit power in each hover slot. The verifier
recomputes every constraint of the master problem from scratch (exact SINR,
prefix-sum energy causality, endpoints, speed, power cap, PSD beams) and is
what the planner and the CLI validate command both call.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import channel
from .model import BeamPlan, DeviceLayout, Solution, SystemConfig, Trajectory


@dataclass(frozen=True)
class EnergyBreakdown:
    """Per-leg propulsion energies (N+1,) and per-slot WPT energies (N,), in J."""

    propulsion: np.ndarray
    wpt: np.ndarray

    def __post_init__(self):
        p = np.array(self.propulsion, dtype=float)
        w = np.array(self.wpt, dtype=float)
        p.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "propulsion", p)
        object.__setattr__(self, "wpt", w)

    @property
    def propulsion_total(self) -> float:
        return float(np.sum(self.propulsion))

    @property
    def wpt_total(self) -> float:
        return float(np.sum(self.wpt))

    @property
    def total(self) -> float:
        return self.propulsion_total + self.wpt_total


def propulsion_energy(q_a, q_b, t_move: float, tau: float) -> float:
    """tau * (leg distance / moving time)^2 for one leg."""
    d = float(np.linalg.norm(np.asarray(q_b, dtype=float) - np.asarray(q_a, dtype=float)))
    return tau * (d / t_move) ** 2


def wpt_power(X_n: np.ndarray, kappa: float) -> float:
    """UAV transmit power spent on the energy beam: (1 + kappa) tr(X)."""
    return float((1.0 + kappa) * np.trace(np.asarray(X_n)).real)


def energy_breakdown(traj: Trajectory, beams: BeamPlan, cfg: SystemConfig) -> EnergyBreakdown:
    legs = traj.leg_lengths()
    prop = cfg.tau * (legs / cfg.t_move) ** 2
    slot = cfg.slot_duration()
    wpt = np.array([slot * wpt_power(X, cfg.kappa) for X in beams.covariances])
    return EnergyBreakdown(propulsion=prop, wpt=wpt)


def total_energy(sol: Solution, cfg: SystemConfig) -> EnergyBreakdown:
    return energy_breakdown(sol.trajectory, sol.beams, cfg)


@dataclass(frozen=True)
class ConstraintCheck:
    name: str       # rate, causality, endpoints, speed, wpt_power, beam_psd
    index: str      # device/slot the worst slack occurs at
    slack: float    # >= 0 means satisfied with margin, in the constraint's units
    ok: bool


@dataclass(frozen=True)
class FeasibilityReport:
    checks: tuple[ConstraintCheck, ...]
    tol: float

    @property
    def ok(self) -> bool:
        return all(c.ok for c in self.checks)

    def failures(self) -> list[ConstraintCheck]:
        return [c for c in self.checks if not c.ok]

    def check(self, name: str) -> ConstraintCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f)
            w.writerow(["constraint", "worst_index", "slack", "status"])
            for c in self.checks:
                w.writerow([c.name, c.index, f"{c.slack:.15g}",
                            "pass" if c.ok else "FAIL"])

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "tol": self.tol,
            "checks": [
                {"constraint": c.name, "worst_index": c.index,
                 "slack": c.slack, "ok": c.ok}
                for c in self.checks
            ],
        }


def _worst(name, slacks, labels, tol) -> ConstraintCheck:
    i = int(np.argmin(slacks))
    return ConstraintCheck(name=name, index=labels[i],
                           slack=float(slacks[i]), ok=bool(slacks[i] >= -tol))


def verify_feasibility(sol: Solution, chans: channel.ChannelSet,
                       cfg: SystemConfig, layout: DeviceLayout,
                       tol: float = 1e-6) -> FeasibilityReport:
    """Recompute every constraint of the hover plan from first principles.

    Slack convention: nonnegative slack means satisfied with that margin.
    Rate slack is in bits scaled by R_k (tolerance tol * R_k), causality slack
    in J, endpoint slack in m (negated deviation), speed slack in m/s, power
    slack in W, PSD slack is the min eigenvalue relative to the slot trace.
    """
    K, N = cfg.K, cfg.N
    traj, X, P = sol.trajectory, sol.beams.covariances, sol.powers.powers
    slot = cfg.slot_duration()
    Z = channel.zf_receivers(chans)
    r = channel.path_loss_map(traj, layout, cfg.L)

    checks = []

    # uploaded bits vs payload, exact SINR
    rate_slack, rate_labels = [], []
    for k in range(K):
        bits = 0.0
        for n in range(N):
            g = channel.sinr(P[k, n], r[k, n], chans.H[n][:, k], Z[n][k],
                             chans.H_u[n], X[n], cfg.kappa, cfg.beta, cfg.sigma2)
            bits += slot * cfg.B * np.log2(1.0 + g)
        rate_slack.append((bits - cfg.R[k]) / cfg.R[k])
        rate_labels.append(f"k={k + 1}")
    checks.append(_worst("rate", np.array(rate_slack), rate_labels, tol))

    # energy causality: every prefix of spent transmit energy within harvested
    caus_slack, caus_labels = [], []
    for k in range(K):
        spent = 0.0
        gained = 0.0
        for n in range(N):
            gained += slot * channel.harvested_power(
                r[k, n], chans.H[n][:, k], X[n], cfg.kappa, cfg.eta)
            spent += slot * P[k, n]
            caus_slack.append(gained - spent)
            caus_labels.append(f"k={k + 1},n={n + 1}")
    checks.append(_worst("causality", np.array(caus_slack), caus_labels, tol))

    dev_i = np.max(np.abs(traj.points[0] - np.asarray(cfg.q_ui)))
    dev_f = np.max(np.abs(traj.points[-1] - np.asarray(cfg.q_uf)))
    checks.append(_worst("endpoints", np.array([-dev_i, -dev_f]),
                         ["initial", "final"], tol))

    speeds = traj.speeds(cfg.t_move)
    checks.append(_worst("speed", cfg.V_max - speeds,
                         [f"leg={n}" for n in range(N + 1)], tol * cfg.V_max))

    pw = np.array([wpt_power(Xn, cfg.kappa) for Xn in X])
    checks.append(_worst("wpt_power", cfg.P_max - pw,
                         [f"n={n + 1}" for n in range(N)], tol * cfg.P_max))

    checks.append(_worst("power_nonneg", np.min(P, axis=0),
                         [f"n={n + 1}" for n in range(N)], tol))

    psd_slack = []
    for Xn in X:
        scale = max(1.0, abs(np.trace(Xn).real))
        herm = np.max(np.abs(Xn - Xn.conj().T)) / scale
        mineig = float(np.linalg.eigvalsh((Xn + Xn.conj().T) / 2)[0]) / scale
        psd_slack.append(min(mineig, -herm if herm > 0 else 0.0))
    checks.append(_worst("beam_psd", np.array(psd_slack),
                         [f"n={n + 1}" for n in range(N)], tol))

    return FeasibilityReport(checks=tuple(checks), tol=tol)
