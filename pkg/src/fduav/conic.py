"""Minimal conic-program intermediate representation and solver backends.

A program is a set of named variable blocks, a linear objective, and
constraints of the form  A x + b in K  where K is one of: zero cone
(equalities), nonnegative orthant, second-order cone (first row is the
radius), exponential cone (rows (x, y, z) with y*exp(x/y) <= z, y > 0),
or the PSD cone of real symmetric d x d matrices.

Constraint rows are affine expressions: a row is (terms, const) with terms a
list of (column, coefficient) pairs. For PSD cones the rows list the matrix
upper triangle in column-major order ((0,0), (0,1), (1,1), (0,2), ...), one
row per triangle entry, giving the matrix entry (not the scaled svec entry;
scaling is a backend concern).

Complex Hermitian PSD variables enter through add_hermitian_psd_variable,
which stores the real symmetric embedding [[Re X, -Im X], [Im X, Re X]] and
adds the tie equalities that make the four blocks consistent. Linear
functionals Re tr(C^H X) become linear rows over the embedding triangle.

Backends: "clarabel" (default; interior point, supports the full cone set)
and "linprog" (scipy HiGHS; zero/nonneg cones only, used to cross-check the
IR lowering on LPs).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

LN2 = math.log(2.0)
DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 200

Term = tuple[int, float]
Row = tuple[list[Term], float]


class BackendCapabilityError(ValueError):
    """The selected backend does not support a cone used by the program."""


@dataclass(frozen=True)
class ZeroCone:
    dim: int
    tag = "zero"


@dataclass(frozen=True)
class NonNegCone:
    dim: int
    tag = "nonneg"


@dataclass(frozen=True)
class SecondOrderCone:
    dim: int
    tag = "soc"


@dataclass(frozen=True)
class ExponentialCone:
    tag = "exp"

    @property
    def dim(self) -> int:
        return 3


@dataclass(frozen=True)
class PsdCone:
    order: int
    tag = "psd"

    @property
    def dim(self) -> int:
        return self.order * (self.order + 1) // 2


def _tri(i: int, j: int) -> int:
    """Position of entry (i, j), i <= j, in the column-major upper triangle."""
    return j * (j + 1) // 2 + i


@dataclass(frozen=True)
class VarBlock:
    name: str
    offset: int
    shape: tuple[int, ...]

    @property
    def size(self) -> int:
        return int(np.prod(self.shape)) if self.shape else 1

    def index(self, *idx) -> int:
        """Global column of an element, C-order within the block."""
        if not self.shape:
            return self.offset
        return self.offset + int(np.ravel_multi_index(idx, self.shape))

    def __getitem__(self, idx) -> int:
        if not isinstance(idx, tuple):
            idx = (idx,)
        return self.index(*idx)


@dataclass(frozen=True)
class HermitianPsdBlock:
    """Complex Hermitian PSD M x M variable, stored as the upper triangle of
    its real symmetric 2M x 2M embedding (a PSD cone member plus ties)."""

    name: str
    m: int
    var: VarBlock

    @property
    def order(self) -> int:
        return 2 * self.m

    def tri_col(self, i: int, j: int) -> int:
        """Global column of embedding entry (i, j), i <= j."""
        return self.var.offset + _tri(i, j)

    def trace_terms(self, scale: float = 1.0) -> list[Term]:
        """Terms computing scale * trace(X) (half the embedding trace)."""
        return [(self.tri_col(i, i), 0.5 * scale) for i in range(self.order)]

    def real_inner_terms(self, C: np.ndarray, scale: float = 1.0) -> list[Term]:
        """Terms computing scale * Re tr(C^H X) for a fixed Hermitian C.

        Uses Re tr(C^H X) = 1/2 tr(embed(C)^T embed(X)); on the stored upper
        triangle that is sum over i<j of E_ij Y_ij plus half the diagonal.
        """
        E = hermitian_embed(C)
        d = self.order
        terms = []
        for j in range(d):
            for i in range(j + 1):
                w = (0.5 if i == j else 1.0) * E[i, j] * scale
                if w != 0.0:
                    terms.append((self.tri_col(i, j), float(w)))
        return terms

    def extract(self, x: np.ndarray) -> np.ndarray:
        """Recover the complex Hermitian matrix from a solution vector."""
        d = self.order
        m = self.m
        Y = np.zeros((d, d))
        t = x[self.var.offset:self.var.offset + self.var.size]
        for j in range(d):
            for i in range(j + 1):
                Y[i, j] = Y[j, i] = t[_tri(i, j)]
        A = 0.5 * (Y[:m, :m] + Y[m:, m:])
        Bl = Y[m:, :m]
        B = 0.5 * (Bl - Bl.T)
        return A + 1j * B


def hermitian_embed(X: np.ndarray) -> np.ndarray:
    """Real symmetric embedding [[Re X, -Im X], [Im X, Re X]] of Hermitian X.

    Preserves definiteness (each eigenvalue of X appears twice) and doubles
    the trace; Re tr(C^H X) = 1/2 tr(embed(C)^T embed(X))."""
    X = np.asarray(X)
    return np.block([[X.real, -X.imag], [X.imag, X.real]])


def hermitian_unembed(Y: np.ndarray) -> np.ndarray:
    """Inverse of hermitian_embed on its image (bit-exact round trip)."""
    m = Y.shape[0] // 2
    return Y[:m, :m] + 1j * Y[m:, :m]


class ConicProgram:
    def __init__(self):
        self._vars: dict[str, VarBlock] = {}
        self._herm: dict[str, HermitianPsdBlock] = {}
        self._num_cols = 0
        self._blocks: list[tuple[list[Row], object]] = []
        self._obj: dict[int, float] = {}
        self._obj_const = 0.0

    # -- variables ---------------------------------------------------------

    def add_variable(self, name: str, shape: tuple[int, ...] = ()) -> VarBlock:
        if name in self._vars:
            raise ValueError(f"duplicate variable block {name!r}")
        blk = VarBlock(name=name, offset=self._num_cols, shape=tuple(shape))
        self._vars[name] = blk
        self._num_cols += blk.size
        return blk

    def add_hermitian_psd_variable(self, name: str, m: int) -> HermitianPsdBlock:
        """Hermitian PSD M x M matrix variable via the real embedding.

        Adds the PSD cone membership of the 2M x 2M triangle and the tie
        equalities (top-left equals bottom-right block, top-right block
        antisymmetric) that characterize the image of hermitian_embed."""
        d = 2 * m
        var = self.add_variable(name, (d * (d + 1) // 2,))
        blk = HermitianPsdBlock(name=name, m=m, var=var)
        self._herm[name] = blk

        ties: list[Row] = []
        for j in range(m):
            for i in range(j + 1):
                ties.append(([(blk.tri_col(i, j), 1.0),
                              (blk.tri_col(m + i, m + j), -1.0)], 0.0))
        for i in range(m):
            ties.append(([(blk.tri_col(i, m + i), 1.0)], 0.0))
        for j in range(m):
            for i in range(j):
                ties.append(([(blk.tri_col(i, m + j), 1.0),
                              (blk.tri_col(j, m + i), 1.0)], 0.0))
        self.add_constraint(ties, ZeroCone(len(ties)))

        psd_rows: list[Row] = []
        for j in range(d):
            for i in range(j + 1):
                psd_rows.append(([(blk.tri_col(i, j), 1.0)], 0.0))
        self.add_constraint(psd_rows, PsdCone(d))
        return blk

    def variable(self, name: str) -> VarBlock:
        return self._vars[name]

    def hermitian(self, name: str) -> HermitianPsdBlock:
        return self._herm[name]

    @property
    def num_cols(self) -> int:
        return self._num_cols

    @property
    def num_rows(self) -> int:
        return sum(len(rows) for rows, _ in self._blocks)

    # -- constraints and objective ------------------------------------------

    def add_constraint(self, rows: list[Row], cone) -> None:
        if len(rows) != cone.dim:
            raise ValueError(
                f"{cone.tag} cone of dim {cone.dim} given {len(rows)} rows")
        for terms, _ in rows:
            for col, _ in terms:
                if not 0 <= col < self._num_cols:
                    raise ValueError(f"row references unknown column {col}")
        self._blocks.append(([(list(t), float(c)) for t, c in rows], cone))

    def add_objective_terms(self, terms: list[Term], const: float = 0.0) -> None:
        """Accumulate linear objective terms (minimization)."""
        for col, coeff in terms:
            self._obj[col] = self._obj.get(col, 0.0) + float(coeff)
        self._obj_const += const

    def validate(self) -> list[str]:
        """Structural problems, empty when well formed."""
        issues = []
        used = set(self._obj)
        for rows, _ in self._blocks:
            for terms, _ in rows:
                used.update(col for col, _ in terms)
        for blk in self._vars.values():
            cols = set(range(blk.offset, blk.offset + blk.size))
            if not (cols & used):
                issues.append(f"variable block {blk.name!r} unused")
        return issues

    # -- dump ----------------------------------------------------------------

    def dump(self, f) -> None:
        """Sparse-triplet text dump for external cross-checking.

        Line types: `var name offset size [shape]`, `objconst c`,
        `obj col coeff`, `cone tag dim` followed by that cone's
        `row local col coeff` and nonzero `rhs local const` lines.
        PSD rows are matrix entries (unscaled), triangle column-major.
        """
        f.write("fduav-conic-dump v1\n")
        f.write(f"cols {self._num_cols}\n")
        for blk in self._vars.values():
            shape = ",".join(map(str, blk.shape)) if blk.shape else "scalar"
            f.write(f"var {blk.name} {blk.offset} {blk.size} {shape}\n")
        f.write(f"objconst {self._obj_const:.17g}\n")
        for col in sorted(self._obj):
            f.write(f"obj {col} {self._obj[col]:.17g}\n")
        for rows, cone in self._blocks:
            tag = f"psd:{cone.order}" if isinstance(cone, PsdCone) else cone.tag
            f.write(f"cone {tag} {cone.dim}\n")
            for p, (terms, const) in enumerate(rows):
                for col, coeff in terms:
                    f.write(f"row {p} {col} {coeff:.17g}\n")
                if const != 0.0:
                    f.write(f"rhs {p} {const:.17g}\n")


@dataclass
class SolverResult:
    status: str                 # optimal | infeasible | unbounded | numerical_failure
    objective: float | None
    x: np.ndarray | None
    iterations: int
    gap: float | None           # relative primal-dual gap, None if not reported
    diagnostics: str = ""

    def value(self, block: VarBlock):
        v = self.x[block.offset:block.offset + block.size]
        if not block.shape:
            return float(v[0])
        return v.reshape(block.shape).copy()

    def hermitian_value(self, block: HermitianPsdBlock) -> np.ndarray:
        return block.extract(self.x)


def add_log_rate_constraint(prog: ConicProgram, t_exprs: list[Row],
                            coeff: float, required: float,
                            name: str = "rate") -> VarBlock:
    """Enforce sum_n coeff * log2(1 + t_n) >= required.

    t_exprs are affine expressions for the t_n (each a (terms, const) row).
    Adds one auxiliary u_n per slot, in bits-per-coeff units (u_n in log2),
    with u_n <= log2(1 + t_n) through an exponential cone each, then the
    linear row sum coeff * u_n >= required."""
    n = len(t_exprs)
    u = prog.add_variable(f"{name}_u", (n,))
    for i, (terms, const) in enumerate(t_exprs):
        prog.add_constraint([
            ([(u.index(i), LN2)], 0.0),          # x = u ln2
            ([], 1.0),                            # y = 1
            (list(terms), 1.0 + const),           # z = 1 + t
        ], ExponentialCone())
    prog.add_constraint(
        [([(u.index(i), coeff) for i in range(n)], -required)], NonNegCone(1))
    return u


# -- backends ---------------------------------------------------------------


def solve(prog: ConicProgram, tol: float = DEFAULT_TOL, backend: str = "clarabel",
          max_iter: int = DEFAULT_MAX_ITER, verbose: bool = False) -> SolverResult:
    if backend == "clarabel":
        return _solve_clarabel(prog, tol, max_iter, verbose)
    if backend == "linprog":
        return _solve_linprog(prog)
    raise ValueError(f"unknown backend {backend!r}")


def _assemble(prog: ConicProgram, psd_scale: bool):
    """Stack all blocks into triplet form; returns (A, b, cone list).

    Row meaning is `a.x + const in K`; the -a sign flip for solvers that
    want `A x + s = b` happens here. When psd_scale is set, PSD off-diagonal
    triangle rows (matrix entries) are scaled by sqrt(2) into svec form."""
    sq2 = math.sqrt(2.0)
    rs, cs, vs, b = [], [], [], []
    cones = []
    offset = 0
    for rows, cone in prog._blocks:
        if isinstance(cone, PsdCone):
            scales = []
            for j in range(cone.order):
                for i in range(j + 1):
                    scales.append(1.0 if i == j or not psd_scale else sq2)
        else:
            scales = [1.0] * cone.dim
        for p, (terms, const) in enumerate(rows):
            s = scales[p]
            for col, coeff in terms:
                rs.append(offset + p)
                cs.append(col)
                vs.append(-coeff * s)
            b.append(const * s)
        cones.append(cone)
        offset += cone.dim
    A = sp.csc_matrix((vs, (rs, cs)), shape=(offset, prog.num_cols))
    return A, np.asarray(b), cones


def _solve_clarabel(prog, tol, max_iter, verbose) -> SolverResult:
    import clarabel

    A, b, cones = _assemble(prog, psd_scale=True)
    cone_map = []
    for cone in cones:
        if isinstance(cone, ZeroCone):
            cone_map.append(clarabel.ZeroConeT(cone.dim))
        elif isinstance(cone, NonNegCone):
            cone_map.append(clarabel.NonnegativeConeT(cone.dim))
        elif isinstance(cone, SecondOrderCone):
            cone_map.append(clarabel.SecondOrderConeT(cone.dim))
        elif isinstance(cone, ExponentialCone):
            cone_map.append(clarabel.ExponentialConeT())
        elif isinstance(cone, PsdCone):
            cone_map.append(clarabel.PSDTriangleConeT(cone.order))
        else:
            raise BackendCapabilityError(f"unsupported cone {cone!r}")

    q = np.zeros(prog.num_cols)
    for col, coeff in prog._obj.items():
        q[col] = coeff
    P = sp.csc_matrix((prog.num_cols, prog.num_cols))

    settings = clarabel.DefaultSettings()
    settings.verbose = verbose
    settings.max_iter = max_iter
    settings.tol_gap_abs = tol
    settings.tol_gap_rel = tol
    settings.tol_feas = tol
    solver = clarabel.DefaultSolver(P, q, A, b, cone_map, settings)
    sol = solver.solve()

    name = str(sol.status)
    if name in ("Solved", "AlmostSolved"):
        status = "optimal"
    elif name in ("PrimalInfeasible", "AlmostPrimalInfeasible"):
        status = "infeasible"
    elif name in ("DualInfeasible", "AlmostDualInfeasible"):
        status = "unbounded"
    else:
        status = "numerical_failure"

    x = np.asarray(sol.x) if status == "optimal" else None
    obj = float(sol.obj_val) + prog._obj_const if status == "optimal" else None
    gap = None
    if status == "optimal":
        p_, d_ = float(sol.obj_val), float(sol.obj_val_dual)
        gap = abs(p_ - d_) / max(1.0, abs(p_), abs(d_))
    return SolverResult(status=status, objective=obj, x=x,
                        iterations=int(sol.iterations), gap=gap,
                        diagnostics=name)


def _solve_linprog(prog) -> SolverResult:
    from scipy.optimize import linprog

    for _, cone in prog._blocks:
        if not isinstance(cone, (ZeroCone, NonNegCone)):
            raise BackendCapabilityError(
                f"linprog backend handles zero/nonneg cones only, got {cone.tag}")
    A, b, cones = _assemble(prog, psd_scale=False)
    # split rows by cone kind: a.x + c = 0 -> eq; a.x + c >= 0 -> ub on -a.x
    kinds = np.concatenate([[isinstance(c, ZeroCone)] * c.dim for c in cones]) \
        if cones else np.zeros(0, dtype=bool)
    q = np.zeros(prog.num_cols)
    for col, coeff in prog._obj.items():
        q[col] = coeff
    A_eq, b_eq = A[kinds], b[kinds]
    A_ub, b_ub = A[~kinds], b[~kinds]
    res = linprog(q, A_ub=A_ub if A_ub.shape[0] else None,
                  b_ub=b_ub if A_ub.shape[0] else None,
                  A_eq=A_eq if A_eq.shape[0] else None,
                  b_eq=b_eq if A_eq.shape[0] else None,
                  bounds=(None, None), method="highs")
    status = {0: "optimal", 2: "infeasible", 3: "unbounded"}.get(
        res.status, "numerical_failure")
    x = np.asarray(res.x) if status == "optimal" and res.x is not None else None
    obj = float(res.fun) + prog._obj_const if status == "optimal" else None
    nit = int(getattr(res, "nit", 0) or 0)
    return SolverResult(status=status, objective=obj, x=x, iterations=nit,
                        gap=None, diagnostics=res.message or "")
