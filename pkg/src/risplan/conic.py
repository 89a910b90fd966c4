"""Real-valued conic programs and their solution.

A :class:`ConicProgram` is a linear objective over scalar variables plus
equality rows and an ordered list of cone blocks, each block an affine map of
the variables constrained to lie in one of:

* ``Nonnegative(dim)``  every row >= 0
* ``SecondOrder(dim)``  rows (t, x) with ||x||_2 <= t
* ``Exponential``       rows (a, b, c) with c >= b * exp(a / b), b > 0
                        (closure at b = 0: a <= 0, c >= 0)

Variables carrying a binary mark are relaxed to the [0, 1] box when the
program is solved directly; exact binary solves live in the optimizer's
branch-and-bound.  Solving delegates to the Clarabel interior-point solver;
the contract is feasibility within ``feas_tol`` and a relative duality gap
within ``gap_tol``, never a silently wrong answer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import clarabel
import numpy as np
import scipy.sparse as sp

# solution statuses
OPTIMAL = "Optimal"
INFEASIBLE = "Infeasible"
UNBOUNDED = "Unbounded"
ITER_LIMIT = "IterLimit"
NUMERICAL_FAILURE = "NumericalFailure"

NONNEG = "nonneg"
SOC = "soc"
EXP = "exp"


@dataclass
class LinExpr:
    """Sparse affine expression: sum_i terms[i] * x_i + const."""

    terms: dict[int, float] = field(default_factory=dict)
    const: float = 0.0

    def value(self, x: np.ndarray) -> float:
        return sum(c * x[i] for i, c in self.terms.items()) + self.const

    def scaled(self, factor: float) -> "LinExpr":
        return LinExpr({i: c * factor for i, c in self.terms.items()}, self.const * factor)


def lin(terms: dict[int, float] | None = None, const: float = 0.0) -> LinExpr:
    return LinExpr(dict(terms) if terms else {}, float(const))


@dataclass(frozen=True)
class SolverTolerances:
    feas_tol: float = 1e-8
    gap_tol: float = 1e-8
    max_iter: int = 200


@dataclass
class ConicSolution:
    status: str
    primal: np.ndarray | None
    objective_value: float | None
    max_cone_violation: float
    rel_gap: float
    dual_objective_value: float | None = None
    iterations: int = 0


class ConicProgram:
    """Mutable during assembly, treated as immutable once handed to ``solve``."""

    def __init__(self):
        self.num_vars = 0
        self.var_names: list[str] = []
        self.objective: dict[int, float] = {}
        self.equalities: list[LinExpr] = []
        self.cone_blocks: list[tuple[str, list[LinExpr]]] = []
        self.binary_marks: set[int] = set()
        self._compiled: "_Compiled | None" = None

    def add_var(self, name: str | None = None) -> int:
        idx = self.num_vars
        self.num_vars += 1
        self.var_names.append(name or f"x{idx}")
        return idx

    def add_vars(self, n: int, name: str | None = None) -> list[int]:
        base = self.num_vars
        self.num_vars += n
        stem = name or "x"
        self.var_names.extend(f"{stem}[{i}]" for i in range(n))
        return list(range(base, base + n))

    def add_objective_term(self, idx: int, coeff: float) -> None:
        self.objective[idx] = self.objective.get(idx, 0.0) + coeff
        self._compiled = None

    def mark_binary(self, idx: int) -> None:
        self.binary_marks.add(idx)
        self._compiled = None

    def add_equality(self, expr: LinExpr) -> None:
        self.equalities.append(expr)
        self._compiled = None

    def add_nonneg(self, *exprs: LinExpr) -> None:
        self.cone_blocks.append((NONNEG, list(exprs)))
        self._compiled = None

    def add_soc(self, exprs: list[LinExpr]) -> None:
        if len(exprs) < 2:
            raise ValueError("a second-order cone block needs at least 2 rows")
        self.cone_blocks.append((SOC, list(exprs)))
        self._compiled = None

    def add_exp(self, a: LinExpr, b: LinExpr, c: LinExpr) -> None:
        self.cone_blocks.append((EXP, [a, b, c]))
        self._compiled = None

    def check(self) -> None:
        """Raise if the program is structurally malformed."""
        for expr in self._all_rows():
            for i in expr.terms:
                if not 0 <= i < self.num_vars:
                    raise ValueError(f"row references undeclared variable {i}")
        for kind, rows in self.cone_blocks:
            if kind == EXP and len(rows) != 3:
                raise ValueError("exponential cone blocks have exactly 3 rows")
            if kind == SOC and len(rows) < 2:
                raise ValueError("second-order cone blocks need >= 2 rows")
        for i in self.binary_marks:
            if not 0 <= i < self.num_vars:
                raise ValueError(f"binary mark on undeclared variable {i}")

    def _all_rows(self):
        yield from self.equalities
        for _, rows in self.cone_blocks:
            yield from rows

    def compiled(self) -> "_Compiled":
        if self._compiled is None:
            self.check()
            self._compiled = _compile(self)
        return self._compiled


# --- complex lifting ----------------------------------------------------------


@dataclass(frozen=True)
class ComplexVars:
    """A complex vector variable lifted to (real, imaginary) index pairs."""

    re: tuple[int, ...]
    im: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.re)

    def re_inner(self, u: np.ndarray) -> LinExpr:
        """Re(u^H z) = Re(u).Re(z) + Im(u).Im(z) as a real affine expression."""
        u = np.asarray(u, dtype=complex)
        terms: dict[int, float] = {}
        for i in range(len(self)):
            if u[i].real != 0.0:
                terms[self.re[i]] = terms.get(self.re[i], 0.0) + u[i].real
            if u[i].imag != 0.0:
                terms[self.im[i]] = terms.get(self.im[i], 0.0) + u[i].imag
        return LinExpr(terms)

    def im_inner(self, u: np.ndarray) -> LinExpr:
        """Im(u^H z) = Re(u).Im(z) - Im(u).Re(z)."""
        u = np.asarray(u, dtype=complex)
        terms: dict[int, float] = {}
        for i in range(len(self)):
            if u[i].real != 0.0:
                terms[self.im[i]] = terms.get(self.im[i], 0.0) + u[i].real
            if u[i].imag != 0.0:
                terms[self.re[i]] = terms.get(self.re[i], 0.0) - u[i].imag
        return LinExpr(terms)

    def value(self, x: np.ndarray) -> np.ndarray:
        return x[list(self.re)] + 1j * x[list(self.im)]


def realify(prog: ConicProgram, n: int, name: str | None = None) -> ComplexVars:
    """Declare a length-n complex vector variable as 2n real variables."""
    stem = name or "z"
    re = prog.add_vars(n, f"{stem}.re")
    im = prog.add_vars(n, f"{stem}.im")
    return ComplexVars(re=tuple(re), im=tuple(im))


def add_modulus_bound(prog: ConicProgram, z: ComplexVars, i: int, bound: LinExpr) -> None:
    """|z_i| <= bound as the 3-row SOC (bound, Re z_i, Im z_i)."""
    prog.add_soc([bound, lin({z.re[i]: 1.0}), lin({z.im[i]: 1.0})])


# --- named constraint encodings ------------------------------------------------


def add_time_allocation_soc(prog: ConicProgram, tau: int, tau_tilde: int) -> None:
    """||(tau, tau_tilde, sqrt(2))|| <= tau + tau_tilde, i.e. tau*tau_tilde >= 1
    with both nonnegative."""
    prog.add_soc(
        [
            lin({tau: 1.0, tau_tilde: 1.0}),
            lin({tau: 1.0}),
            lin({tau_tilde: 1.0}),
            lin(const=math.sqrt(2.0)),
        ]
    )


def add_rate_expcone(
    prog: ConicProgram, d: int, tau_tilde: int, rate_threshold: float, bandwidth: float
) -> None:
    """d >= 2^(threshold * tau_tilde / bandwidth) as the exponential cone
    (ln2 * threshold * tau_tilde / B, 1, d)."""
    if rate_threshold < 0.0 or bandwidth <= 0.0:
        raise ValueError("rate threshold must be >= 0 and bandwidth > 0")
    prog.add_exp(
        lin({tau_tilde: math.log(2.0) * rate_threshold / bandwidth}),
        lin(const=1.0),
        lin({d: 1.0}),
    )


# --- compilation and violations --------------------------------------------------


@dataclass
class _Compiled:
    """Assembled matrix form of a program, reused across repeated solves."""

    q: np.ndarray
    A: sp.csc_matrix  # rows: equalities, binary boxes, declared blocks in order
    b: np.ndarray
    n_eq: int
    n_box: int
    nonneg_rows: np.ndarray  # row indices of all scalar >= 0 rows (boxes + blocks)
    soc_groups: dict[int, np.ndarray]  # dim -> start offsets
    exp_starts: np.ndarray
    cones: list  # clarabel cone descriptors matching the row layout


def _compile(prog: ConicProgram) -> _Compiled:
    rows: list[LinExpr] = list(prog.equalities)
    cones = []
    n_eq = len(rows)
    if n_eq:
        cones.append(clarabel.ZeroConeT(n_eq))

    nonneg_rows: list[int] = []
    n_box = 2 * len(prog.binary_marks)
    if n_box:
        for i in sorted(prog.binary_marks):
            nonneg_rows.append(len(rows))
            rows.append(lin({i: 1.0}))  # x >= 0
            nonneg_rows.append(len(rows))
            rows.append(lin({i: -1.0}, 1.0))  # 1 - x >= 0
        cones.append(clarabel.NonnegativeConeT(n_box))

    soc_groups: dict[int, list[int]] = {}
    exp_starts: list[int] = []
    for kind, block in prog.cone_blocks:
        start = len(rows)
        rows.extend(block)
        if kind == NONNEG:
            nonneg_rows.extend(range(start, start + len(block)))
            cones.append(clarabel.NonnegativeConeT(len(block)))
        elif kind == SOC:
            soc_groups.setdefault(len(block), []).append(start)
            cones.append(clarabel.SecondOrderConeT(len(block)))
        else:
            exp_starts.append(start)
            cones.append(clarabel.ExponentialConeT())

    m = len(rows)
    nnz = sum(len(r.terms) for r in rows)
    r_idx = np.empty(nnz, dtype=np.int64)
    c_idx = np.empty(nnz, dtype=np.int64)
    data = np.empty(nnz)
    b = np.empty(m)
    pos = 0
    for r, expr in enumerate(rows):
        b[r] = expr.const
        for i, coeff in expr.terms.items():
            r_idx[pos] = r
            c_idx[pos] = i
            data[pos] = -coeff  # cone membership s = b - A x
            pos += 1
    A = sp.coo_matrix((data, (r_idx, c_idx)), shape=(m, prog.num_vars)).tocsc()
    q = np.zeros(prog.num_vars)
    for i, coeff in prog.objective.items():
        q[i] = coeff
    return _Compiled(
        q=q, A=A, b=b, n_eq=n_eq, n_box=n_box,
        nonneg_rows=np.asarray(nonneg_rows, dtype=np.int64),
        soc_groups={d: np.asarray(s, dtype=np.int64) for d, s in soc_groups.items()},
        exp_starts=np.asarray(exp_starts, dtype=np.int64),
        cones=cones,
    )


def _exp_violation(a: float, b: float, c: float) -> float:
    if b > 0.0:
        # clamp the exponent; overflow means a genuine gross violation anyway
        return max(0.0, b * math.exp(min(a / b, 700.0)) - c)
    v = max(0.0, -b)
    v = max(v, -c)
    v = max(v, a)  # closure requires a <= 0 when b = 0
    return v


def _compiled_violation(comp: _Compiled, x: np.ndarray) -> float:
    """Largest cone/equality violation at x, normalized per block by its magnitude."""
    vals = comp.b - comp.A @ x
    worst = 0.0
    if comp.n_eq:
        v = vals[: comp.n_eq]
        scale = np.maximum(1.0, np.abs(v - comp.b[: comp.n_eq]))
        worst = max(worst, float(np.max(np.abs(v) / scale, initial=0.0)))
    if len(comp.nonneg_rows):
        v = vals[comp.nonneg_rows]
        worst = max(worst, float(np.max(-v / np.maximum(1.0, np.abs(v)), initial=0.0)))
    for dim, starts in comp.soc_groups.items():
        block = vals[starts[:, None] + np.arange(dim)[None, :]]
        t = block[:, 0]
        rest = np.linalg.norm(block[:, 1:], axis=1)
        scale = np.maximum(1.0, np.abs(block).max(axis=1))
        worst = max(worst, float(np.max((rest - t) / scale, initial=0.0)))
    for start in comp.exp_starts:
        a, bb, c = vals[start], vals[start + 1], vals[start + 2]
        scale = max(1.0, abs(a), abs(bb), abs(c))
        worst = max(worst, _exp_violation(a, bb, c) / scale)
    return worst


def max_violation(prog: ConicProgram, x: np.ndarray) -> float:
    return _compiled_violation(prog.compiled(), np.asarray(x, dtype=float))


# --- solving -------------------------------------------------------------------

_STATUS_FROM_CLARABEL = {
    "Solved": OPTIMAL,
    "AlmostSolved": OPTIMAL,  # demoted below if the violation check fails
    "PrimalInfeasible": INFEASIBLE,
    "AlmostPrimalInfeasible": INFEASIBLE,
    "DualInfeasible": UNBOUNDED,
    "AlmostDualInfeasible": UNBOUNDED,
    "MaxIterations": ITER_LIMIT,
    "MaxTime": ITER_LIMIT,
}


def solve(
    prog: ConicProgram,
    tolerances: SolverTolerances | None = None,
    *,
    fixed_values: dict[int, float] | None = None,
) -> ConicSolution:
    """Solve the continuous relaxation of ``prog``.

    Binary-marked variables are boxed to [0, 1] unless pinned through
    ``fixed_values`` (used by branch-and-bound to explore subproblems).
    The assembled matrices are cached on the program, so repeated solves with
    different pins only pay for the extra pinning rows.
    """
    tol = tolerances or SolverTolerances()
    fixed_values = fixed_values or {}
    comp = prog.compiled()

    A, b, cones = comp.A, comp.b, comp.cones
    if fixed_values:
        items = sorted(fixed_values.items())
        n_fix = len(items)
        fix_A = sp.coo_matrix(
            (np.full(n_fix, -1.0), (np.arange(n_fix), [i for i, _ in items])),
            shape=(n_fix, prog.num_vars),
        )
        A = sp.vstack([fix_A, A], format="csc")
        b = np.concatenate([[-v for _, v in items], b])
        cones = [clarabel.ZeroConeT(n_fix)] + cones

    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.tol_feas = tol.feas_tol
    settings.tol_gap_abs = tol.gap_tol
    settings.tol_gap_rel = tol.gap_tol
    settings.max_iter = tol.max_iter

    raw = clarabel.DefaultSolver(sp.csc_matrix((prog.num_vars,) * 2), comp.q,
                                 A, b, cones, settings).solve()
    status = _STATUS_FROM_CLARABEL.get(str(raw.status), NUMERICAL_FAILURE)

    if status in (INFEASIBLE, UNBOUNDED):
        return ConicSolution(status=status, primal=None, objective_value=None,
                             max_cone_violation=math.inf, rel_gap=math.inf,
                             iterations=raw.iterations)

    x = np.asarray(raw.x, dtype=float)
    obj = float(comp.q @ x)
    violation = _compiled_violation(comp, x)
    for i, val in fixed_values.items():
        violation = max(violation, abs(x[i] - val))
    dual = float(raw.obj_val_dual)
    rel_gap = abs(obj - dual) / max(1.0, abs(obj))

    if status == OPTIMAL and violation > tol.feas_tol:
        status = NUMERICAL_FAILURE
    return ConicSolution(
        status=status,
        primal=x,
        objective_value=obj,
        max_cone_violation=violation,
        rel_gap=rel_gap,
        dual_objective_value=dual,
        iterations=raw.iterations,
    )


# --- debug dump ----------------------------------------------------------------


def _format_row(expr: LinExpr) -> str:
    parts = [f"({i} {coeff!r})" for i, coeff in sorted(expr.terms.items())]
    parts.append(f"const={expr.const!r}")
    return " ".join(parts)


def dump_program(prog: ConicProgram) -> str:
    """Text snapshot of a program for regression diffs."""
    out = [f"VARS {prog.num_vars}"]
    obj = " ".join(f"({i} {c!r})" for i, c in sorted(prog.objective.items()))
    out.append(f"OBJ {obj}")
    if prog.binary_marks:
        out.append("BINARY " + " ".join(str(i) for i in sorted(prog.binary_marks)))
    for expr in prog.equalities:
        out.append(f"EQ {_format_row(expr)}")
    for kind, rows in prog.cone_blocks:
        if kind == NONNEG:
            out.append(f"NONNEG dim={len(rows)}")
        elif kind == SOC:
            out.append(f"SOC dim={len(rows)}")
        else:
            out.append("EXP")
        out.extend("  " + _format_row(r) for r in rows)
    return "\n".join(out) + "\n"
