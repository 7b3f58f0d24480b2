"""Wireless channel layer: Rician fading draws, distance path loss, zero-forcing
reception, transceiver distortion covariances, per-device SINR and harvested power.

Small-scale fading is sampled once per slot and does not depend on the UAV
position; only the path loss does. All functions here are pure; sampling takes
its seed from the config.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .model import DeviceLayout, SystemConfig, Trajectory

COND_LIMIT = 1e12       # zero-forcing refuses channels worse-conditioned than this
REAL_RESIDUE_TOL = 1e-9


class ChannelRankError(ValueError):
    pass


class RealnessError(ArithmeticError):
    """A quantity that must be real came out complex; inputs are inconsistent."""


@dataclass(frozen=True)
class ChannelSet:
    """Fading realizations for all N slots.

    H[n] is M x K (device uplink columns h_k[n]); H_u[n] is M x M
    (loop-back self-interference). Stored stacked: H (N, M, K), H_u (N, M, M).
    """

    H: np.ndarray
    H_u: np.ndarray
    seed: int

    def __post_init__(self):
        H = np.array(self.H, dtype=complex)
        H_u = np.array(self.H_u, dtype=complex)
        if H.ndim != 3 or H_u.ndim != 3 or H.shape[0] != H_u.shape[0] \
                or H_u.shape[1] != H_u.shape[2] or H.shape[1] != H_u.shape[1]:
            raise ValueError(f"inconsistent channel shapes {H.shape}, {H_u.shape}")
        H.setflags(write=False)
        H_u.setflags(write=False)
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "H_u", H_u)

    @property
    def N(self) -> int:
        return self.H.shape[0]

    @property
    def M(self) -> int:
        return self.H.shape[1]

    @property
    def K(self) -> int:
        return self.H.shape[2]


def rician_moments(k_factor: float) -> tuple[float, float]:
    """Per-element complex-Gaussian mean mu and variance nu2 for a Rician
    K-factor, normalized to unit element power: mu^2/nu2 = Kf, mu^2 + nu2 = 1."""
    if k_factor < 0:
        raise ValueError(f"K-factor must be nonnegative (got {k_factor})")
    nu2 = 1.0 / (k_factor + 1.0)
    mu = np.sqrt(k_factor / (k_factor + 1.0))
    return float(mu), float(nu2)


def _draw(rng, mu, nu2, shape):
    # circularly symmetric CN(mu, nu2): each quadrature gets variance nu2/2
    s = np.sqrt(nu2 / 2.0)
    re = rng.standard_normal(shape)
    im = rng.standard_normal(shape)
    return mu + s * (re + 1j * im)


def sample_channels(cfg: SystemConfig) -> ChannelSet:
    """Draw all fading matrices for the run.

    Draw order is fixed (device block first, then SI block, real quadrature
    before imaginary within each) so a seed pins the ChannelSet bit-for-bit.
    """
    rng = np.random.default_rng(cfg.seed)
    mu_d, nu2_d = rician_moments(cfg.rician_K_dev)
    mu_s, nu2_s = rician_moments(cfg.rician_K_si)
    H = _draw(rng, mu_d, nu2_d, (cfg.N, cfg.M, cfg.K))
    H_u = _draw(rng, mu_s, nu2_s, (cfg.N, cfg.M, cfg.M))
    return ChannelSet(H=H, H_u=H_u, seed=cfg.seed)


def path_loss(q_u, q_k, L: float) -> float:
    """r = 1 / (L^2 + ||q_u - q_k||^2). Broadcasts over leading axes."""
    d2 = np.sum((np.asarray(q_u, dtype=float) - np.asarray(q_k, dtype=float)) ** 2,
                axis=-1)
    out = 1.0 / (L * L + d2)
    return float(out) if np.ndim(out) == 0 else out


def path_loss_map(traj: Trajectory, layout: DeviceLayout, L: float) -> np.ndarray:
    """Path loss r[k, n] from hover point n to device k, shape (K, N)."""
    hover = traj.hover_points()                       # (N, 2)
    diff = layout.positions[:, None, :] - hover[None, :, :]
    return 1.0 / (L * L + np.sum(diff ** 2, axis=-1))


def zf_receiver(H_n: np.ndarray, slot: int | None = None) -> np.ndarray:
    """Zero-forcing receive matrix Z = (H^H H)^{-1} H^H, rows z_k. Z H = I_K."""
    H_n = np.asarray(H_n, dtype=complex)
    if np.linalg.cond(H_n) > COND_LIMIT:
        where = f" in slot {slot}" if slot is not None else ""
        raise ChannelRankError(
            f"device channel matrix is rank-deficient{where} "
            f"(condition number {np.linalg.cond(H_n):.3e})")
    G = H_n.conj().T @ H_n
    return np.linalg.solve(G, H_n.conj().T)


def zf_receivers(chans: ChannelSet) -> np.ndarray:
    """ZF matrices for every slot, shape (N, K, M); errors name the slot (1-based)."""
    return np.stack([zf_receiver(chans.H[n], slot=n + 1) for n in range(chans.N)])


def distortion_covariances(X_n: np.ndarray, H_u_n: np.ndarray,
                           kappa: float, beta: float) -> tuple[np.ndarray, np.ndarray]:
    """Transmit- and receive-side distortion covariances for one slot.

    E_out = kappa * diag(X); E_in = beta * diag(H_u (X + E_out) H_u^H).
    diag() keeps only the diagonal. Both results are diagonal PSD.
    """
    X_n = np.asarray(X_n, dtype=complex)
    E_out = kappa * np.diag(np.diagonal(X_n))
    inner = H_u_n @ (X_n + E_out) @ H_u_n.conj().T
    E_in = beta * np.diag(np.diagonal(inner))
    return E_out, E_in


def sinr_denominator(z_kn, H_u_n, X_n, kappa, beta, sigma2) -> float:
    """Interference-plus-noise power seen by one device's ZF output:
    z (H_u E_out H_u^H + sigma2 I + E_in) z^H."""
    z = np.asarray(z_kn, dtype=complex)
    E_out, E_in = distortion_covariances(X_n, H_u_n, kappa, beta)
    S = H_u_n @ E_out @ H_u_n.conj().T + E_in
    val = z @ S @ z.conj() + sigma2 * np.vdot(z, z)
    return float(val.real)


def sinr(P_kn, r_kn, h_kn, z_kn, H_u_n, X_n, kappa, beta, sigma2) -> float:
    """Uplink SINR of one device in one slot under ZF reception."""
    z = np.asarray(z_kn, dtype=complex)
    h = np.asarray(h_kn, dtype=complex)
    num = P_kn * r_kn * abs(z @ h) ** 2
    return float(num / sinr_denominator(z, H_u_n, X_n, kappa, beta, sigma2))


def harvested_power(r_kn, h_kn, X_n, kappa, eta) -> float:
    """Power a device harvests from the energy beam.

    The received energy signal is y = sqrt(r) h^T (x + e_out), so the mean
    power E|y|^2 contracts the beam covariance between h^T and its conjugate:
    P_hp = eta * r * h^T (X + kappa diag(X)) conj(h). Real for Hermitian X;
    a non-real result means the inputs are inconsistent and raises.
    """
    h = np.asarray(h_kn, dtype=complex)
    X_n = np.asarray(X_n, dtype=complex)
    W = X_n + kappa * np.diag(np.diagonal(X_n))
    val = eta * r_kn * (h @ W @ h.conj())
    if abs(val.imag) > REAL_RESIDUE_TOL * max(1.0, abs(val)):
        raise RealnessError(
            f"harvested power has imaginary residue {val.imag:.3e}; "
            "beam covariance is not Hermitian")
    return float(val.real)


def sinr_denominator_matrix(z_kn, H_u_n, kappa, beta) -> np.ndarray:
    """Hermitian C with sinr_denominator = sigma2 ||z||^2 + Re tr(C^H X).

    The denominator is linear in X; this is the coefficient matrix the convex
    subproblems use. C = kappa diag(|z H_u|^2)
                       + beta sum_m |z_m|^2 (rho_m^H rho_m + kappa diag(|rho_m|^2)),
    rho_m the m-th row of H_u.
    """
    z = np.asarray(z_kn, dtype=complex)
    H_u_n = np.asarray(H_u_n, dtype=complex)
    M = H_u_n.shape[0]
    zHu = z @ H_u_n
    C = kappa * np.diag(np.abs(zHu) ** 2).astype(complex)
    for m in range(M):
        rho = H_u_n[m]
        w = beta * abs(z[m]) ** 2
        C += w * (np.outer(rho.conj(), rho) + kappa * np.diag(np.abs(rho) ** 2))
    return C


def harvest_matrix(h_kn, kappa) -> np.ndarray:
    """Hermitian D with harvested_power = eta * r * Re tr(D^H X).

    D = conj(h) h^T + kappa diag(|h|^2)."""
    h = np.asarray(h_kn, dtype=complex)
    v = h.conj()
    return np.outer(v, v.conj()) + kappa * np.diag(np.abs(h) ** 2)


def dump_channels_csv(chans: ChannelSet, path) -> None:
    """One row per complex entry: slot, row, col, re, im, kind in {dev, si}.

    Device rows give H[n][row, col] (row = antenna, col = device); SI rows give
    H_u[n][row, col]. Slots are 1-based to match the formulation.
    """
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["slot", "row", "col", "re", "im", "kind"])
        for n in range(chans.N):
            for i in range(chans.M):
                for j in range(chans.K):
                    c = chans.H[n, i, j]
                    w.writerow([n + 1, i, j, f"{c.real:.15g}", f"{c.imag:.15g}", "dev"])
            for i in range(chans.M):
                for j in range(chans.M):
                    c = chans.H_u[n, i, j]
                    w.writerow([n + 1, i, j, f"{c.real:.15g}", f"{c.imag:.15g}", "si"])
