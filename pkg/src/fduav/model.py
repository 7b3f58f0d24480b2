"""Problem data types: system configuration, device layout, trajectories,
beam/power schedules, and the solved-plan container.

Conventions used throughout the package:
  * time slots are indexed n = 1..N but stored 0-based, so arrays over slots
    have length N and index n-1;
  * a trajectory has N+2 points (initial point, N hover points, final point);
  * beam covariances are M x M complex Hermitian PSD, one per slot.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace
from importlib import resources

import numpy as np

PSD_TOL = 1e-8  # relative to trace, used by BeamPlan validation


class ConfigError(ValueError):
    """Raised when a configuration fails validation; carries all violations."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("invalid configuration: " + "; ".join(self.violations))


def _frozen(a, dtype=float):
    out = np.array(a, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class SystemConfig:
    K: int                      # number of ground devices
    M: int                      # UAV antennas (shared tx/rx array)
    L: float                    # hover altitude [m]
    T: float                    # mission duration [s]
    N: int                      # number of hover slots
    B: float                    # bandwidth [MHz], rates in Mbits
    R: tuple[float, ...]        # per-device payload [Mbits], length K
    kappa: float                # tx distortion coefficient
    beta: float                 # rx distortion coefficient
    eta: float                  # harvest conversion efficiency, in (0, 1]
    tau: float                  # propulsion energy coefficient [J s^2 / m^2]
    sigma2: float               # receiver noise power
    V_max: float                # speed limit [m/s]
    P_max: float                # WPT transmit power budget per slot [W]
    t_move: float               # per-leg travel time [s]
    q_ui: tuple[float, float]   # initial horizontal position
    q_uf: tuple[float, float]   # final horizontal position
    rician_K_dev: float         # Rician factor, device links
    rician_K_si: float          # Rician factor, self-interference channel
    seed: int                   # channel sampling seed

    def slot_duration(self) -> float:
        return self.T / self.N


def config_violations(cfg: SystemConfig) -> list[str]:
    """All invariant violations of cfg, as human-readable strings.

    Empty list means the configuration is valid.
    """
    v = []
    if not (isinstance(cfg.K, (int, np.integer)) and cfg.K >= 1):
        v.append(f"K must be a positive integer (got {cfg.K})")
    if not (isinstance(cfg.M, (int, np.integer)) and cfg.M >= 1):
        v.append(f"M must be a positive integer (got {cfg.M})")
    if isinstance(cfg.K, (int, np.integer)) and isinstance(cfg.M, (int, np.integer)) \
            and cfg.K > cfg.M:
        v.append(f"K ≤ M violated (K={cfg.K}, M={cfg.M}); zero-forcing needs "
                 "at least as many antennas as devices")
    if not (isinstance(cfg.N, (int, np.integer)) and cfg.N >= 1):
        v.append(f"N must be a positive integer (got {cfg.N})")
    for name in ("L", "T", "B", "kappa", "beta", "eta", "tau", "sigma2",
                 "V_max", "P_max", "t_move"):
        val = getattr(cfg, name)
        if not (np.isfinite(val) and val > 0):
            v.append(f"{name} must be positive (got {val})")
    if np.isfinite(cfg.eta) and cfg.eta > 1:
        v.append(f"eta must not exceed 1 (got {cfg.eta})")
    if len(cfg.R) != cfg.K:
        v.append(f"R must have one entry per device (got {len(cfg.R)} for K={cfg.K})")
    for k, r in enumerate(cfg.R):
        if not (np.isfinite(r) and r > 0):
            v.append(f"R[{k}] must be positive (got {r})")
    for name in ("q_ui", "q_uf"):
        q = getattr(cfg, name)
        if len(q) != 2 or not all(np.isfinite(x) for x in q):
            v.append(f"{name} must be a finite 2-vector (got {q})")
    for name in ("rician_K_dev", "rician_K_si"):
        val = getattr(cfg, name)
        if not (np.isfinite(val) and val >= 0):
            v.append(f"{name} must be nonnegative (got {val})")
    if not isinstance(cfg.seed, (int, np.integer)):
        v.append(f"seed must be an integer (got {cfg.seed!r})")
    return v


def validate_config(cfg: SystemConfig) -> SystemConfig:
    """Return cfg unchanged if valid, else raise ConfigError listing every violation."""
    v = config_violations(cfg)
    if v:
        raise ConfigError(v)
    return cfg


def config_to_dict(cfg: SystemConfig) -> dict:
    d = {}
    for f in fields(SystemConfig):
        val = getattr(cfg, f.name)
        if isinstance(val, tuple):
            val = list(val)
        elif isinstance(val, np.integer):
            val = int(val)
        elif isinstance(val, np.floating):
            val = float(val)
        d[f.name] = val
    return d


def config_from_dict(d: dict) -> SystemConfig:
    names = {f.name for f in fields(SystemConfig)}
    unknown = sorted(set(d) - names)
    if unknown:
        raise ConfigError([f"unknown config keys: {', '.join(unknown)}"])
    missing = sorted(names - set(d))
    if missing:
        raise ConfigError([f"missing config keys: {', '.join(missing)}"])
    kw = dict(d)
    kw["K"] = int(kw["K"])
    kw["M"] = int(kw["M"])
    kw["N"] = int(kw["N"])
    kw["seed"] = int(kw["seed"])
    kw["R"] = tuple(float(r) for r in kw["R"])
    kw["q_ui"] = tuple(float(x) for x in kw["q_ui"])
    kw["q_uf"] = tuple(float(x) for x in kw["q_uf"])
    for f in fields(SystemConfig):
        if f.name not in ("K", "M", "N", "seed", "R", "q_ui", "q_uf"):
            kw[f.name] = float(kw[f.name])
    return SystemConfig(**kw)


def load_config(path) -> SystemConfig:
    with open(path, "r", encoding="utf-8") as f:
        return config_from_dict(json.load(f))


def save_config(cfg: SystemConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(config_to_dict(cfg), f, indent=2)
        f.write("\n")


def default_config() -> SystemConfig:
    """The configuration shipped with the package (desk-scale scenario)."""
    text = resources.files("fduav.data").joinpath("default_config.json").read_text()
    return config_from_dict(json.loads(text))


@dataclass(frozen=True)
class DeviceLayout:
    """Horizontal positions of the K ground devices, shape (K, 2)."""

    positions: np.ndarray

    def __post_init__(self):
        p = _frozen(self.positions)
        if p.ndim != 2 or p.shape[1] != 2:
            raise ValueError(f"device positions must be (K, 2), got shape {p.shape}")
        object.__setattr__(self, "positions", p)

    @property
    def K(self) -> int:
        return self.positions.shape[0]

    def to_list(self) -> list[list[float]]:
        return self.positions.tolist()


def load_layout(path) -> DeviceLayout:
    with open(path, "r", encoding="utf-8") as f:
        d = json.load(f)
    return DeviceLayout(np.asarray(d["positions"], dtype=float))


def save_layout(layout: DeviceLayout, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump({"positions": layout.to_list()}, f, indent=2)
        f.write("\n")


def reference_layout() -> DeviceLayout:
    """The device layout shipped with the package."""
    text = resources.files("fduav.data").joinpath("reference_layout.json").read_text()
    return DeviceLayout(np.asarray(json.loads(text)["positions"], dtype=float))


@dataclass(frozen=True)
class Trajectory:
    """UAV horizontal waypoints, shape (N+2, 2): initial, N hover points, final."""

    points: np.ndarray

    def __post_init__(self):
        p = _frozen(self.points)
        if p.ndim != 2 or p.shape[1] != 2 or p.shape[0] < 3:
            raise ValueError(f"trajectory must be (N+2, 2) with N >= 1, got {p.shape}")
        object.__setattr__(self, "points", p)

    @property
    def N(self) -> int:
        return self.points.shape[0] - 2

    def hover_points(self) -> np.ndarray:
        return self.points[1:-1]

    def leg_lengths(self) -> np.ndarray:
        """Lengths of the N+1 legs between consecutive points."""
        return np.linalg.norm(np.diff(self.points, axis=0), axis=1)

    def speeds(self, t_move: float) -> np.ndarray:
        return self.leg_lengths() / t_move


def trajectory_violations(traj: Trajectory, cfg: SystemConfig,
                          tol: float = 1e-9) -> list[str]:
    v = []
    if traj.N != cfg.N:
        v.append(f"trajectory has {traj.N} hover points, config wants {cfg.N}")
    if np.max(np.abs(traj.points[0] - np.asarray(cfg.q_ui))) > tol:
        v.append(f"initial point {traj.points[0].tolist()} != q_ui {list(cfg.q_ui)}")
    if np.max(np.abs(traj.points[-1] - np.asarray(cfg.q_uf))) > tol:
        v.append(f"final point {traj.points[-1].tolist()} != q_uf {list(cfg.q_uf)}")
    speeds = traj.speeds(cfg.t_move)
    worst = int(np.argmax(speeds))
    if speeds[worst] > cfg.V_max * (1 + tol) + tol:
        v.append(f"leg {worst} speed {speeds[worst]:.6g} exceeds V_max {cfg.V_max}")
    return v


@dataclass(frozen=True)
class BeamPlan:
    """Energy-beam covariance matrices, shape (N, M, M) complex Hermitian PSD."""

    covariances: np.ndarray

    def __post_init__(self):
        x = np.array(self.covariances, dtype=complex)
        if x.ndim != 3 or x.shape[1] != x.shape[2]:
            raise ValueError(f"beam covariances must be (N, M, M), got {x.shape}")
        x.setflags(write=False)
        object.__setattr__(self, "covariances", x)

    @property
    def N(self) -> int:
        return self.covariances.shape[0]

    @property
    def M(self) -> int:
        return self.covariances.shape[1]

    def violations(self, tol: float = PSD_TOL) -> list[str]:
        """Hermitian-PSD check per slot; tol is relative to the slot's trace."""
        v = []
        for n, X in enumerate(self.covariances):
            scale = max(1.0, abs(np.trace(X).real))
            if np.max(np.abs(X - X.conj().T)) > tol * scale:
                v.append(f"slot {n + 1}: covariance not Hermitian")
                continue
            w = np.linalg.eigvalsh((X + X.conj().T) / 2)
            if w[0] < -tol * scale:
                v.append(f"slot {n + 1}: covariance not PSD (min eig {w[0]:.3e})")
        return v


@dataclass(frozen=True)
class PowerSchedule:
    """Device transmit powers, shape (K, N), nonnegative."""

    powers: np.ndarray

    def __post_init__(self):
        p = _frozen(self.powers)
        if p.ndim != 2:
            raise ValueError(f"powers must be (K, N), got shape {p.shape}")
        object.__setattr__(self, "powers", p)

    @property
    def K(self) -> int:
        return self.powers.shape[0]

    @property
    def N(self) -> int:
        return self.powers.shape[1]


@dataclass(frozen=True)
class OuterIterRecord:
    outer_iter: int
    objective: float            # total UAV energy after this outer loop [J]
    first_loop_iters: int
    second_loop_iters: int


@dataclass(frozen=True)
class Solution:
    """A complete hover plan: where to hover, how to beam, how devices transmit."""

    trajectory: Trajectory
    beams: BeamPlan
    powers: PowerSchedule
    objective: float            # total UAV energy [J]
    trace: tuple[OuterIterRecord, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "trace", tuple(self.trace))


def solution_to_dict(sol: Solution) -> dict:
    X = sol.beams.covariances
    return {
        "objective_J": float(sol.objective),
        "trajectory": sol.trajectory.points.tolist(),
        "powers": sol.powers.powers.tolist(),
        "beams_re": X.real.tolist(),
        "beams_im": X.imag.tolist(),
        "trace": [
            {"outer_iter": r.outer_iter, "objective_J": r.objective,
             "first_loop_iters": r.first_loop_iters,
             "second_loop_iters": r.second_loop_iters}
            for r in sol.trace
        ],
    }


def solution_from_dict(d: dict) -> Solution:
    X = np.asarray(d["beams_re"], dtype=float) + 1j * np.asarray(d["beams_im"], dtype=float)
    trace = tuple(
        OuterIterRecord(int(r["outer_iter"]), float(r["objective_J"]),
                        int(r["first_loop_iters"]), int(r["second_loop_iters"]))
        for r in d["trace"]
    )
    return Solution(
        trajectory=Trajectory(np.asarray(d["trajectory"], dtype=float)),
        beams=BeamPlan(X),
        powers=PowerSchedule(np.asarray(d["powers"], dtype=float)),
        objective=float(d["objective_J"]),
        trace=trace,
    )
