"""Successive convex approximation core: the two alternating convex
subproblems behind the hover planner.

First loop (trajectory fixed): optimize device powers P, beam covariances X,
SINR lower bounds t, and interference-budget variables e. The bilinear rate
coupling "P r G >= t * e" is linearized around (t_bar, e_bar) and re-expanded
at the solution until the objective settles.

Second loop (P, X fixed): optimize hover points q, surrogate path losses r,
and squared-distance bounds f. The coupling "r * f <= 1" is linearized
around (r_bar, f_bar). Because f upper-bounds L^2 + d^2 and the linearized
constraint implies r f <= 1 for any feasible pair, the surrogate r never
exceeds the true path loss, so rate and causality hold exactly at the
returned trajectory, not just in surrogate form.

Restoration re-anchors all four expansion points at the exact formulas after
each complete outer pass, which keeps successive subproblems feasible and the
outer objective monotone in practice.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import channel, conic
from .model import DeviceLayout, SystemConfig, Trajectory

EPS_INNER = 1e-4    # relative objective change that stops an inner loop
MAX_INNER = 50
LOOP_MARGIN = 1e-4  # relative interior slack the loops keep on payload and causality
POWER_FLOOR = 1e-9  # watts; schedule entries below this are solver dust, treated as off


class SubproblemError(RuntimeError):
    """A convex subproblem had no usable solution; carries solver status."""

    def __init__(self, message, status="", diagnostics=""):
        super().__init__(message)
        self.status = status
        self.diagnostics = diagnostics


class InitializationError(SubproblemError):
    pass


def _frozen(a):
    out = np.array(a, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class LinearizationState:
    """Expansion points of the two bilinear constraints, all shape (K, N)."""

    t_bar: np.ndarray   # SINR targets
    e_bar: np.ndarray   # interference budgets
    r_bar: np.ndarray   # surrogate path losses
    f_bar: np.ndarray   # squared-distance bounds, r_bar * f_bar = 1 at anchors

    def __post_init__(self):
        for name in ("t_bar", "e_bar", "r_bar", "f_bar"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))


@dataclass(frozen=True)
class InnerLoopReport:
    iterations: int
    objectives: tuple[float, ...]
    termination: str    # converged | max_iters | infeasible


@dataclass(frozen=True)
class LinkConstants:
    """Per-slot channel quantities that no decision variable touches.

    Z[n] stacks the ZF rows; G[k, n] = |z h|^2; znorm2[k, n] = ||z||^2;
    C[n][k] is the Hermitian coefficient of the SINR denominator,
    denom = sigma2 * znorm2 + Re tr(C^H X); D[n][k] the harvest coefficient,
    P_hp = eta * r * Re tr(D^H X)."""

    Z: np.ndarray
    G: np.ndarray
    znorm2: np.ndarray
    C: np.ndarray
    D: np.ndarray


def link_constants(chans: channel.ChannelSet, kappa: float, beta: float) -> LinkConstants:
    N, M, K = chans.N, chans.M, chans.K
    Z = channel.zf_receivers(chans)
    G = np.zeros((K, N))
    zn = np.zeros((K, N))
    C = np.zeros((N, K, M, M), dtype=complex)
    D = np.zeros((N, K, M, M), dtype=complex)
    for n in range(N):
        for k in range(K):
            z = Z[n][k]
            h = chans.H[n][:, k]
            G[k, n] = abs(z @ h) ** 2
            zn[k, n] = float(np.vdot(z, z).real)
            C[n, k] = channel.sinr_denominator_matrix(z, chans.H_u[n], kappa, beta)
            D[n, k] = channel.harvest_matrix(h, kappa)
    return LinkConstants(Z=Z, G=G, znorm2=zn, C=C, D=D)


def init_t(R_k: float, T: float, B: float) -> float:
    """SINR level at which N equal slots exactly meet the payload:
    solve sum_n (T/N) B log2(1 + t) = R_k for t."""
    return float(2.0 ** (R_k / (T * B)) - 1.0)


def taylor_bilinear(a_bar, b_bar, a, b):
    """First-order expansion of the product a*b around (a_bar, b_bar).

    Exact at the expansion point; the gap to the true product is
    (a - a_bar)(b - b_bar), of indefinite sign."""
    return a_bar * b_bar + b_bar * (a - a_bar) + a_bar * (b - b_bar)


# -- first loop ---------------------------------------------------------------


def _denominator_caps(cfg: SystemConfig, lc: LinkConstants) -> np.ndarray:
    """Largest value each SINR denominator can reach under the WPT power cap."""
    caps = np.zeros((cfg.K, cfg.N))
    budget = cfg.P_max / (1.0 + cfg.kappa)
    for k in range(cfg.K):
        for n in range(cfg.N):
            lam = float(np.linalg.eigvalsh(lc.C[n, k])[-1])
            caps[k, n] = cfg.sigma2 * lc.znorm2[k, n] + lam * budget
    return caps


def _first_loop_program(cfg: SystemConfig, lc: LinkConstants, r: np.ndarray,
                        t_bar: np.ndarray, e_bar: np.ndarray) -> conic.ConicProgram:
    K, N, M = cfg.K, cfg.N, cfg.M
    slot = cfg.slot_duration()
    prog = conic.ConicProgram()
    P = prog.add_variable("P", (K, N))
    t = prog.add_variable("t", (K, N))
    e = prog.add_variable("e", (K, N))
    Xs = [prog.add_hermitian_psd_variable(f"X{n + 1}", M) for n in range(N)]

    # objective: WPT energy over the mission, sum_n (T/N)(1+kappa) tr X[n]
    for n in range(N):
        prog.add_objective_terms(Xs[n].trace_terms(slot * (1.0 + cfg.kappa)))

    nn = [([(P.index(k, n), 1.0)], 0.0) for k in range(K) for n in range(N)]
    nn += [([(t.index(k, n), 1.0)], 0.0) for k in range(K) for n in range(N)]
    nn += [([(e.index(k, n), 1.0)], 0.0) for k in range(K) for n in range(N)]
    prog.add_constraint(nn, conic.NonNegCone(len(nn)))

    # linearized SINR coupling: P r G >= e_bar t + t_bar e - t_bar e_bar
    rows = []
    for k in range(K):
        for n in range(N):
            rows.append(([
                (P.index(k, n), r[k, n] * lc.G[k, n]),
                (t.index(k, n), -e_bar[k, n]),
                (e.index(k, n), -t_bar[k, n]),
            ], t_bar[k, n] * e_bar[k, n]))
    prog.add_constraint(rows, conic.NonNegCone(len(rows)))

    # e upper-bounds the exact denominator, which is linear in X
    rows = []
    for k in range(K):
        for n in range(N):
            terms = [(e.index(k, n), 1.0)]
            terms += Xs[n].real_inner_terms(lc.C[n, k], -1.0)
            rows.append((terms, -cfg.sigma2 * lc.znorm2[k, n]))
    prog.add_constraint(rows, conic.NonNegCone(len(rows)))

    # ranges the exact model implies but the linearization loses: e cannot
    # exceed the denominator at full WPT power, and t cannot beat the SINR
    # over the bare noise floor; both kill recession directions that stall
    # the solver without cutting any exact-feasible point
    caps = _denominator_caps(cfg, lc)
    rows = [([(e.index(k, n), -1.0)], caps[k, n])
            for k in range(K) for n in range(N)]
    rows += [([(P.index(k, n),
                r[k, n] * lc.G[k, n] / (cfg.sigma2 * lc.znorm2[k, n])),
               (t.index(k, n), -1.0)], 0.0)
             for k in range(K) for n in range(N)]
    prog.add_constraint(rows, conic.NonNegCone(len(rows)))

    # WPT transmit power cap per slot
    rows = [(Xs[n].trace_terms(-(1.0 + cfg.kappa)), cfg.P_max) for n in range(N)]
    prog.add_constraint(rows, conic.NonNegCone(len(rows)))

    # energy causality: every prefix of harvested minus spent energy >= 0,
    # with a hair of interior slack so the minimized point does not hand the
    # trajectory loop an iterate exactly on the causality boundary
    rows = []
    for k in range(K):
        prefix: list[conic.Term] = []
        for n in range(N):
            prefix += Xs[n].real_inner_terms(lc.D[n, k],
                                             slot * cfg.eta * r[k, n])
            prefix.append((P.index(k, n), -slot * (1.0 + LOOP_MARGIN)))
            rows.append((list(prefix), 0.0))
    prog.add_constraint(rows, conic.NonNegCone(len(rows)))

    for k in range(K):
        # require a hair above the payload: the bilinear surrogate can
        # under-deliver by O(inner tol) against the exact SINR formula
        t_exprs = [([(t.index(k, n), 1.0)], 0.0) for n in range(N)]
        conic.add_log_rate_constraint(prog, t_exprs, slot * cfg.B,
                                      cfg.R[k] * (1.0 + LOOP_MARGIN),
                                      name=f"rate{k + 1}")
    return prog


def build_first_loop(cfg: SystemConfig, chans: channel.ChannelSet,
                     layout: DeviceLayout, traj: Trajectory,
                     lin: LinearizationState) -> conic.ConicProgram:
    """Convex restriction of the power/beam subproblem at expansion point lin."""
    lc = link_constants(chans, cfg.kappa, cfg.beta)
    r = channel.path_loss_map(traj, layout, cfg.L)
    return _first_loop_program(cfg, lc, r, lin.t_bar, lin.e_bar)


def _psd_project(X: np.ndarray) -> np.ndarray:
    """Clip the tiny negative eigenvalues a solver leaves on a PSD block."""
    out = np.empty_like(X)
    for n in range(X.shape[0]):
        A = 0.5 * (X[n] + X[n].conj().T)
        w, V = np.linalg.eigh(A)
        out[n] = (V * np.maximum(w, 0.0)) @ V.conj().T
    return out


def _extract_first(prog, res, N):
    P = np.maximum(res.value(prog.variable("P")), 0.0)
    t = res.value(prog.variable("t"))
    e = res.value(prog.variable("e"))
    X = _psd_project(np.stack([
        res.hermitian_value(prog.hermitian(f"X{n + 1}")) for n in range(N)]))
    return P, t, e, X


def _exact_sinr(cfg, lc, r, P, X) -> np.ndarray:
    """Exact per-slot SINR of an iterate (P, X), shape (K, N)."""
    K, N = cfg.K, cfg.N
    t_ex = np.zeros((K, N))
    for k in range(K):
        for n in range(N):
            den = cfg.sigma2 * lc.znorm2[k, n] + float(
                np.trace(lc.C[n, k].conj().T @ X[n]).real)
            t_ex[k, n] = max(P[k, n], 0.0) * r[k, n] * lc.G[k, n] / den
    return t_ex


def _rescaled_targets(cfg, lc, r, P, X) -> np.ndarray:
    """Per-slot SINR targets that restore the exact payload of an iterate.

    Takes the exact SINR profile of (P, X), then raises it along
    1 + t -> (1 + t)^alpha per device until the exact rate formula meets the
    payload (with the loop's allowance) again. Preserves which slots carry
    the rate while undoing the surrogate's overshoot."""
    slot_bits = cfg.slot_duration() * cfg.B
    t_ex = _exact_sinr(cfg, lc, r, P, X)
    targets = np.zeros_like(t_ex)
    for k in range(cfg.K):
        bits = slot_bits * float(np.log2(1.0 + t_ex[k]).sum())
        # aim a notch above the loops' own allowance so the re-seeded point
        # is interior, not boundary, for every downstream program
        need = cfg.R[k] * (1.0 + 2.0 * LOOP_MARGIN)
        if bits <= 0.0:
            raise SubproblemError("iterate carries no rate to rescale")
        alpha = max(need / bits, 1.0)
        targets[k] = (1.0 + t_ex[k]) ** alpha - 1.0
    return targets


def run_first_loop(cfg: SystemConfig, chans: channel.ChannelSet,
                   layout: DeviceLayout, traj: Trajectory,
                   lin: LinearizationState, eps: float = EPS_INNER,
                   max_iters: int = MAX_INNER, tol: float = conic.DEFAULT_TOL,
                   backend: str = "clarabel", recover: bool = False):
    """Iterate the first-loop program, re-expanding (t_bar, e_bar) at each
    solution, until the objective settles. Returns (P, X, lin, report).

    The bilinear expansion is not one-sided, so a re-expanded program can
    exclude its own incumbent. With recover=True such a stumble is absorbed
    by re-seeding from the feasibility program at payload-restoring SINR
    targets instead of ending the loop."""
    lc = link_constants(chans, cfg.kappa, cfg.beta)
    r = channel.path_loss_map(traj, layout, cfg.L)
    t_bar = np.array(lin.t_bar)
    e_bar = np.array(lin.e_bar)
    P = X = None
    objs: list[float] = []
    recoveries = 0
    termination = "max_iters"
    for it in range(1, max_iters + 1):
        prog = _first_loop_program(cfg, lc, r, t_bar, e_bar)
        res = conic.solve(prog, tol=tol, backend=backend)
        if res.status != "optimal":
            if P is None:
                raise SubproblemError(
                    f"power/beam subproblem {res.status} at inner iteration {it}",
                    status=res.status, diagnostics=res.diagnostics)
            if recover and recoveries < 2:
                try:
                    t_bar = _rescaled_targets(cfg, lc, r, P, X)
                    e_bar, P, X = init_e(cfg, chans, layout, traj, t_bar,
                                         tol=tol, backend=backend)
                except (SubproblemError, InitializationError):
                    termination = "infeasible"
                    break
                recoveries += 1
                continue
            termination = "infeasible"
            break
        P, t_sol, e_sol, X = _extract_first(prog, res, cfg.N)
        # anchors must stay in the model's range: a -1e-10 residue on t flips
        # the sign of the t_bar*e term and opens an unbounded rate channel
        t_bar = np.maximum(t_sol, 0.0)
        e_bar = np.maximum(e_sol, cfg.sigma2 * lc.znorm2)
        objs.append(res.objective)
        if it >= 2 and abs(objs[-1] - objs[-2]) <= eps * max(1.0, abs(objs[-1])):
            termination = "converged"
            break
    if P is not None:
        # the surrogate keeps only a linear slice of the rate constraint, so
        # the iterate can land a little short of the exact payload; when it
        # does, hand the exact SINR profile to the feasibility program, whose
        # point meets the exact formula by construction
        slot_bits = cfg.slot_duration() * cfg.B
        bits = slot_bits * np.log2(1.0 + _exact_sinr(cfg, lc, r, P, X)).sum(axis=1)
        if np.any(bits < np.asarray(cfg.R) * (1.0 + LOOP_MARGIN)):
            try:
                t_bar = _rescaled_targets(cfg, lc, r, P, X)
                e_bar, P, X = init_e(cfg, chans, layout, traj, t_bar,
                                     tol=tol, backend=backend)
            except (SubproblemError, InitializationError):
                pass    # leave the iterate as is; verification has final say
    new_lin = replace(lin, t_bar=t_bar, e_bar=e_bar)
    return P, X, new_lin, InnerLoopReport(len(objs), tuple(objs), termination)


# -- second loop --------------------------------------------------------------


def _leg_delta(q: conic.VarBlock, n_leg: int, axis: int, cfg: SystemConfig,
               scale: float = 1.0) -> conic.Row:
    """Affine expression for scale * (p[n_leg+1] - p[n_leg])[axis], where
    p[0] = q_ui and p[N+1] = q_uf are constants and p[1..N] are variables."""
    N = cfg.N
    terms: list[conic.Term] = []
    const = 0.0
    if n_leg + 1 <= N:
        terms.append((q.index(n_leg, axis), scale))
    else:
        const += scale * cfg.q_uf[axis]
    if n_leg >= 1:
        terms.append((q.index(n_leg - 1, axis), -scale))
    else:
        const -= scale * cfg.q_ui[axis]
    return terms, const


def _second_loop_program(cfg: SystemConfig, layout: DeviceLayout,
                         c_coef: np.ndarray, d_coef: np.ndarray, P: np.ndarray,
                         r_bar: np.ndarray, f_bar: np.ndarray) -> conic.ConicProgram:
    K, N = cfg.K, cfg.N
    slot = cfg.slot_duration()
    prog = conic.ConicProgram()
    q = prog.add_variable("q", (N, 2))
    r = prog.add_variable("r", (K, N))
    f = prog.add_variable("f", (K, N))
    w = prog.add_variable("w", (N + 1,))   # per-leg squared-length epigraph

    prog.add_objective_terms(
        [(w.index(n), cfg.tau / cfg.t_move ** 2) for n in range(N + 1)])

    nn = [([(r.index(k, n), 1.0)], 0.0) for k in range(K) for n in range(N)]
    prog.add_constraint(nn, conic.NonNegCone(len(nn)))

    for n_leg in range(N + 1):
        dx, dy = _leg_delta(q, n_leg, 0, cfg, 2.0), _leg_delta(q, n_leg, 1, cfg, 2.0)
        # ||p[n+1] - p[n]||^2 <= w via (w+1, 2dx, 2dy, w-1) in the SOC
        prog.add_constraint([
            ([(w.index(n_leg), 1.0)], 1.0),
            dx, dy,
            ([(w.index(n_leg), 1.0)], -1.0),
        ], conic.SecondOrderCone(4))
        sx, sy = _leg_delta(q, n_leg, 0, cfg), _leg_delta(q, n_leg, 1, cfg)
        prog.add_constraint([
            ([], cfg.V_max * cfg.t_move), sx, sy,
        ], conic.SecondOrderCone(3))

    # f[k,n] >= L^2 + ||q[n] - q_k||^2, rotated into a plain SOC
    L2 = cfg.L ** 2
    for k in range(K):
        qk = layout.positions[k]
        for n in range(N):
            fx = [(f.index(k, n), 1.0)]
            prog.add_constraint([
                (list(fx), 1.0 - L2),
                ([(q.index(n, 0), 2.0)], -2.0 * qk[0]),
                ([(q.index(n, 1), 2.0)], -2.0 * qk[1]),
                (list(fx), -1.0 - L2),
            ], conic.SecondOrderCone(4))

    # linearized reciprocal coupling r * f <= 1 around (r_bar, f_bar)
    rows = []
    for k in range(K):
        for n in range(N):
            rows.append(([
                (r.index(k, n), -f_bar[k, n]),
                (f.index(k, n), -r_bar[k, n]),
            ], 1.0 + r_bar[k, n] * f_bar[k, n]))
    prog.add_constraint(rows, conic.NonNegCone(len(rows)))

    # causality in surrogate path-loss form: prefix harvested >= prefix spent,
    # at half the power/beam loop's interior slack so the incumbent hover
    # points sit strictly inside this program's feasible set
    rows = []
    for k in range(K):
        prefix: list[conic.Term] = []
        spent = 0.0
        for n in range(N):
            prefix.append((r.index(k, n), slot * d_coef[k, n]))
            spent += slot * P[k, n] * (1.0 + 0.5 * LOOP_MARGIN)
            rows.append((list(prefix), -spent))
    prog.add_constraint(rows, conic.NonNegCone(len(rows)))

    for k in range(K):
        # half the power/beam loop's payload allowance, for the same interior
        # reason; the path-loss surrogate only understates the exact rate, so
        # any solution still clears the payload itself
        t_exprs = [([(r.index(k, n), c_coef[k, n])], 0.0) for n in range(N)]
        conic.add_log_rate_constraint(prog, t_exprs, slot * cfg.B,
                                      cfg.R[k] * (1.0 + 0.5 * LOOP_MARGIN),
                                      name=f"rate{k + 1}")
    return prog


def _rate_harvest_coefficients(cfg, lc, X):
    """Constants that make SINR = c * r and harvest = d * r once P, X are fixed."""
    K, N = cfg.K, cfg.N
    c = np.zeros((K, N))
    d = np.zeros((K, N))
    for k in range(K):
        for n in range(N):
            denom = cfg.sigma2 * lc.znorm2[k, n] + float(
                np.trace(lc.C[n, k].conj().T @ X[n]).real)
            c[k, n] = lc.G[k, n] / denom
            d[k, n] = cfg.eta * float(np.trace(lc.D[n, k].conj().T @ X[n]).real)
    return c, d


def build_second_loop(cfg: SystemConfig, chans: channel.ChannelSet,
                      layout: DeviceLayout, P: np.ndarray, X: np.ndarray,
                      lin: LinearizationState) -> conic.ConicProgram:
    """Convex restriction of the trajectory subproblem at expansion point lin."""
    lc = link_constants(chans, cfg.kappa, cfg.beta)
    c, d = _rate_harvest_coefficients(cfg, lc, X)
    return _second_loop_program(cfg, layout, c * P, d, P, lin.r_bar, lin.f_bar)


def run_second_loop(cfg: SystemConfig, chans: channel.ChannelSet,
                    layout: DeviceLayout, P: np.ndarray, X: np.ndarray,
                    lin: LinearizationState, eps: float = EPS_INNER,
                    max_iters: int = MAX_INNER, tol: float = conic.DEFAULT_TOL,
                    backend: str = "clarabel"):
    """Iterate the trajectory program, re-expanding (r_bar, f_bar) at each
    solution, until the propulsion objective settles. Returns
    (trajectory, lin, report)."""
    lc = link_constants(chans, cfg.kappa, cfg.beta)
    # sub-nanowatt schedule entries are solver dust; kept, they put degenerate
    # causality rows in the program and can poison infeasibility certificates
    P = np.where(P > POWER_FLOOR, P, 0.0)
    c, d = _rate_harvest_coefficients(cfg, lc, X)
    cP = c * P
    r_bar = np.array(lin.r_bar)
    f_bar = np.array(lin.f_bar)
    traj = None
    objs: list[float] = []
    termination = "max_iters"
    for it in range(1, max_iters + 1):
        prog = _second_loop_program(cfg, layout, cP, d, P, r_bar, f_bar)
        res = conic.solve(prog, tol=tol, backend=backend)
        if res.status != "optimal":
            if traj is None:
                raise SubproblemError(
                    f"trajectory subproblem {res.status} at inner iteration {it}",
                    status=res.status, diagnostics=res.diagnostics)
            termination = "infeasible"
            break
        hover = res.value(prog.variable("q"))
        traj = Trajectory(np.vstack([cfg.q_ui, hover, cfg.q_uf]))
        r_bar = res.value(prog.variable("r"))
        f_bar = res.value(prog.variable("f"))
        objs.append(res.objective)
        if it >= 2 and abs(objs[-1] - objs[-2]) <= eps * max(1.0, abs(objs[-1])):
            termination = "converged"
            break
    new_lin = replace(lin, r_bar=r_bar, f_bar=f_bar)
    return traj, new_lin, InnerLoopReport(len(objs), tuple(objs), termination)


# -- anchoring and initialization ---------------------------------------------


def restore_linearization(cfg: SystemConfig, chans: channel.ChannelSet,
                          layout: DeviceLayout, traj: Trajectory,
                          P: np.ndarray, X: np.ndarray) -> LinearizationState:
    """Re-anchor all expansion points at the exact formulas of the current
    iterate: t_bar = exact SINR, e_bar = exact denominator, f_bar = L^2 + d^2,
    r_bar = 1/f_bar."""
    K, N = cfg.K, cfg.N
    Z = channel.zf_receivers(chans)
    hover = traj.hover_points()
    t_bar = np.zeros((K, N))
    e_bar = np.zeros((K, N))
    f_bar = np.zeros((K, N))
    r_bar = np.zeros((K, N))
    for k in range(K):
        qk = layout.positions[k]
        for n in range(N):
            d2 = float(np.sum((hover[n] - qk) ** 2))
            f_bar[k, n] = cfg.L * cfg.L + d2
            r_bar[k, n] = 1.0 / f_bar[k, n]
            t_bar[k, n] = channel.sinr(
                P[k, n], r_bar[k, n], chans.H[n][:, k], Z[n][k], chans.H_u[n],
                X[n], cfg.kappa, cfg.beta, cfg.sigma2)
            e_bar[k, n] = channel.sinr_denominator(
                Z[n][k], chans.H_u[n], X[n], cfg.kappa, cfg.beta, cfg.sigma2)
    return LinearizationState(t_bar=t_bar, e_bar=e_bar, r_bar=r_bar, f_bar=f_bar)


def init_e(cfg: SystemConfig, chans: channel.ChannelSet, layout: DeviceLayout,
           traj: Trajectory, t_bar: np.ndarray,
           tol: float = conic.DEFAULT_TOL, backend: str = "clarabel",
           cheapest: bool = True):
    """Find a feasible starting point for the first loop at fixed SINR targets.

    Solves the program over (P, e, X) with the coupling frozen at t = t_bar
    (P r G >= t_bar * e, linear), the denominator bound, the power cap, and
    causality. With cheapest=True it minimizes the WPT energy, giving the
    cheapest point that meets the exact formulas at those targets; with
    cheapest=False it solves the bare feasibility program, whose point lands
    away from the cost boundary and anchors the first expansion better.
    Returns (e_bar, P0, X0)."""
    K, N, M = cfg.K, cfg.N, cfg.M
    slot = cfg.slot_duration()
    t_bar = np.broadcast_to(np.asarray(t_bar, dtype=float), (K, N))
    lc = link_constants(chans, cfg.kappa, cfg.beta)
    r = channel.path_loss_map(traj, layout, cfg.L)

    prog = conic.ConicProgram()
    P = prog.add_variable("P", (K, N))
    e = prog.add_variable("e", (K, N))
    Xs = [prog.add_hermitian_psd_variable(f"X{n + 1}", M) for n in range(N)]
    if cheapest:
        for n in range(N):
            prog.add_objective_terms(Xs[n].trace_terms(slot * (1.0 + cfg.kappa)))

    nn = [([(P.index(k, n), 1.0)], 0.0) for k in range(K) for n in range(N)]
    nn += [([(e.index(k, n), 1.0)], 0.0) for k in range(K) for n in range(N)]
    prog.add_constraint(nn, conic.NonNegCone(len(nn)))

    rows = []
    for k in range(K):
        for n in range(N):
            rows.append(([
                (P.index(k, n), r[k, n] * lc.G[k, n]),
                (e.index(k, n), -t_bar[k, n]),
            ], 0.0))
    prog.add_constraint(rows, conic.NonNegCone(len(rows)))

    rows = []
    for k in range(K):
        for n in range(N):
            terms = [(e.index(k, n), 1.0)]
            terms += Xs[n].real_inner_terms(lc.C[n, k], -1.0)
            rows.append((terms, -cfg.sigma2 * lc.znorm2[k, n]))
    prog.add_constraint(rows, conic.NonNegCone(len(rows)))

    # same implied denominator cap as the first loop; without it e is free
    # to run off wherever its SINR target is zero
    caps = _denominator_caps(cfg, lc)
    rows = [([(e.index(k, n), -1.0)], caps[k, n])
            for k in range(K) for n in range(N)]
    prog.add_constraint(rows, conic.NonNegCone(len(rows)))

    rows = [(Xs[n].trace_terms(-(1.0 + cfg.kappa)), cfg.P_max) for n in range(N)]
    prog.add_constraint(rows, conic.NonNegCone(len(rows)))

    rows = []
    for k in range(K):
        prefix: list[conic.Term] = []
        for n in range(N):
            prefix += Xs[n].real_inner_terms(lc.D[n, k], slot * cfg.eta * r[k, n])
            # double interior slack, matching the re-seeding rate targets, so
            # the point stays interior for every downstream program
            prefix.append((P.index(k, n), -slot * (1.0 + 2.0 * LOOP_MARGIN)))
            rows.append((list(prefix), 0.0))
    prog.add_constraint(rows, conic.NonNegCone(len(rows)))

    res = conic.solve(prog, tol=tol, backend=backend)
    if res.status != "optimal":
        raise InitializationError(
            "initialization infeasible at given trajectory",
            status=res.status, diagnostics=res.diagnostics)
    e_bar = np.maximum(res.value(prog.variable("e")),
                       cfg.sigma2 * lc.znorm2)
    P0 = np.maximum(res.value(prog.variable("P")), 0.0)
    X0 = _psd_project(np.stack([
        res.hermitian_value(prog.hermitian(f"X{n + 1}")) for n in range(N)]))
    return e_bar, P0, X0


def refine_powers(cfg: SystemConfig, chans: channel.ChannelSet,
                  layout: DeviceLayout, traj: Trajectory, X: np.ndarray,
                  tol: float = conic.DEFAULT_TOL, backend: str = "clarabel") -> np.ndarray:
    """Re-solve device powers against the exact rate and causality formulas
    with (trajectory, beams) fixed.

    Device powers never enter the UAV energy objective, and with X fixed the
    exact per-slot SINR is linear in P, so this is a plain convex program. It
    removes the residual surrogate-model slack from the returned schedule:
    minimize total transmit power subject to exact payload delivery and exact
    prefix causality."""
    K, N = cfg.K, cfg.N
    slot = cfg.slot_duration()
    lc = link_constants(chans, cfg.kappa, cfg.beta)
    r = channel.path_loss_map(traj, layout, cfg.L)
    a = np.zeros((K, N))    # SINR per unit transmit power
    hp = np.zeros((K, N))   # exact harvested power
    for k in range(K):
        for n in range(N):
            denom = cfg.sigma2 * lc.znorm2[k, n] + float(
                np.trace(lc.C[n, k].conj().T @ X[n]).real)
            a[k, n] = r[k, n] * lc.G[k, n] / denom
            hp[k, n] = channel.harvested_power(
                r[k, n], chans.H[n][:, k], X[n], cfg.kappa, cfg.eta)

    prog = conic.ConicProgram()
    P = prog.add_variable("P", (K, N))
    prog.add_objective_terms([(P.index(k, n), 1.0)
                              for k in range(K) for n in range(N)])
    nn = [([(P.index(k, n), 1.0)], 0.0) for k in range(K) for n in range(N)]
    prog.add_constraint(nn, conic.NonNegCone(len(nn)))
    rows = []
    for k in range(K):
        budget = 0.0
        terms: list[conic.Term] = []
        for n in range(N):
            budget += slot * hp[k, n]
            terms.append((P.index(k, n), -slot))
            rows.append((list(terms), budget))
    prog.add_constraint(rows, conic.NonNegCone(len(rows)))
    for k in range(K):
        t_exprs = [([(P.index(k, n), a[k, n])], 0.0) for n in range(N)]
        conic.add_log_rate_constraint(prog, t_exprs, slot * cfg.B, cfg.R[k],
                                      name=f"rate{k + 1}")

    res = conic.solve(prog, tol=tol, backend=backend)
    if res.status != "optimal":
        raise SubproblemError(
            f"power refinement {res.status}",
            status=res.status, diagnostics=res.diagnostics)
    return np.maximum(res.value(prog.variable("P")), 0.0)
