"""Solvers for :class:`~vvots.conic.ConicProgram`.

The reference backend maps each complex PSD block onto its real embedding
and hands the problem to CVXOPT's primal-dual interior-point cone solver
(Nesterov-Todd scaling, dense KKT factorisation). A second backend based on
cvxpy is available for cross-checking.

Dual sign convention: for a ``<=`` constraint the multiplier is nonnegative
and ``d(optimal value)/d(rhs) = -multiplier``; the same derivative relation
holds for equalities, whose multipliers are free.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Hashable, Iterable, Protocol

import numpy as np
import scipy.linalg

from .conic import EQ, ConicProgram, ConicSolution, constraint_lhs, objective_value

log = logging.getLogger(__name__)

OPTIMAL, INFEASIBLE, UNBOUNDED, MAX_ITER = "optimal", "infeasible", "unbounded", "max_iter"


@dataclass(frozen=True)
class SolverOptions:
    tol_gap: float = 1e-7
    tol_primal: float = 1e-7
    tol_dual: float = 1e-7
    max_iterations: int = 200
    step_fraction: float = 0.99  # CVXOPT uses a fixed 0.99; kept for other backends
    verbosity: int = 0

    def __post_init__(self):
        if min(self.tol_gap, self.tol_primal, self.tol_dual) <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if not 0 < self.step_fraction < 1:
            raise ValueError("step_fraction must lie in (0, 1)")


class Solver(Protocol):
    def solve(self, prog: ConicProgram, opts: SolverOptions | None = None) -> ConicSolution: ...


# --------------------------------------------------------------------------
# variable layout shared by the backends


class _Layout:
    """Real coordinates of a program: scalars, then per block
    ``Re X_ii``, ``Re X_ik`` and ``Im X_ik`` (``i < k``)."""

    def __init__(self, prog: ConicProgram):
        self.scalar_idx = {s: j for j, s in enumerate(prog.scalars)}
        off = len(prog.scalars)
        self.block_off: dict[str, int] = {}
        self.tri: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        for name, n in prog.blocks.items():
            self.block_off[name] = off
            iu, ku = np.triu_indices(n, 1)
            self.tri[name] = (iu, ku)
            off += n + 2 * len(iu)
        self.size = off
        self._pair_pos = {}
        for name, n in prog.blocks.items():
            iu, ku = self.tri[name]
            m = len(iu)
            pos = np.full((n, n), -1, dtype=int)
            pos[iu, ku] = np.arange(m)
            self._pair_pos[name] = (pos, m)

    def row(self, blocks: dict, scalars: dict[str, float]) -> dict[int, float]:
        r: dict[int, float] = {}
        for s, c in scalars.items():
            j = self.scalar_idx[s]
            r[j] = r.get(j, 0.0) + c
        for name, mat in blocks.items():
            off = self.block_off[name]
            n = mat.n
            pos, m = self._pair_pos[name]
            for (i, k), v in mat.entries.items():
                if i == k:
                    j = off + i
                    r[j] = r.get(j, 0.0) + v.real
                else:
                    p = pos[i, k]
                    jr, ji = off + n + p, off + n + m + p
                    r[jr] = r.get(jr, 0.0) + 2.0 * v.real
                    r[ji] = r.get(ji, 0.0) + 2.0 * v.imag
        return r

    def unpack(self, prog: ConicProgram, x: np.ndarray):
        scalars = {s: float(x[j]) for s, j in self.scalar_idx.items()}
        blocks = {}
        for name, n in prog.blocks.items():
            off = self.block_off[name]
            iu, ku = self.tri[name]
            m = len(iu)
            mat = np.zeros((n, n), dtype=complex)
            mat[np.arange(n), np.arange(n)] = x[off : off + n]
            vals = x[off + n : off + n + m] + 1j * x[off + n + m : off + n + 2 * m]
            mat[iu, ku] = vals
            mat[ku, iu] = np.conj(vals)
            blocks[name] = mat
        return scalars, blocks


def _presolve_equalities(a: np.ndarray, b: np.ndarray, tol: float = 1e-10):
    """Select a maximal independent row subset of ``a x = b``.

    Returns ``(rows, consistent)``.
    """
    if a.shape[0] == 0:
        return np.arange(0), True
    _, r, piv = scipy.linalg.qr(a.T, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    if diag.size == 0 or diag[0] == 0:
        rank = 0
    else:
        rank = int(np.sum(diag > tol * diag[0]))
    rows = np.sort(piv[:rank])
    if rank == a.shape[0]:
        return rows, True
    dropped = np.setdiff1d(np.arange(a.shape[0]), rows)
    coef, *_ = np.linalg.lstsq(a[rows].T, a[dropped].T, rcond=None)
    pred = coef.T @ b[rows]
    scale = max(1.0, float(np.max(np.abs(b))))
    return rows, bool(np.all(np.abs(pred - b[dropped]) <= 1e-8 * scale))


def kkt_residuals(prog: ConicProgram, sol: ConicSolution) -> dict[str, float]:
    """Absolute KKT residuals of ``sol`` measured on the original program.

    ``primal``: largest equality/inequality violation and cone violation;
    ``dual``: stationarity residual reported by the backend;
    ``gap``: |primal objective - dual objective|.
    """
    viol = 0.0
    for c in prog.constraints:
        r = constraint_lhs(c, sol) - c.rhs
        viol = max(viol, abs(r) if c.sense == EQ else max(r, 0.0))
    for q in prog.cones:
        viol = max(viol, q.coef * sol.scalars[q.var] ** 2 - sol.scalars[q.epi], 0.0)
    for x in sol.blocks.values():
        viol = max(viol, -float(np.linalg.eigvalsh(x)[0]))
    gap = abs(sol.objective - sol.dual_objective) if np.isfinite(sol.dual_objective) else np.inf
    out = {"primal": viol, "gap": gap}
    if "dual" in sol.residuals:
        out["dual"] = sol.residuals["dual"]
    return out


# --------------------------------------------------------------------------
# CVXOPT reference backend


class CvxoptSolver:
    """Primal-dual interior-point reference solver (CVXOPT ``conelp``)."""

    name = "cvxopt"

    def __init__(self, options: SolverOptions | None = None):
        self.options = options or SolverOptions()

    def solve(self, prog: ConicProgram, opts: SolverOptions | None = None) -> ConicSolution:
        from cvxopt import matrix, solvers, spmatrix

        opts = opts or self.options
        lay = _Layout(prog)
        nx = lay.size

        eq_rows, eq_b, eq_idx = [], [], []
        le_rows, le_h, le_idx = [], [], []
        for idx, c in enumerate(prog.constraints):
            row = lay.row(c.blocks, c.scalars)
            if c.sense == EQ:
                eq_rows.append(row), eq_b.append(c.rhs), eq_idx.append(idx)
            else:
                le_rows.append(row), le_h.append(c.rhs), le_idx.append(idx)

        a_dense = np.zeros((len(eq_rows), nx))
        for r, row in enumerate(eq_rows):
            for j, v in row.items():
                a_dense[r, j] = v
        b_vec = np.array(eq_b, dtype=float)
        keep, consistent = _presolve_equalities(a_dense, b_vec)
        if not consistent:
            return ConicSolution(INFEASIBLE, np.inf, solver=self.name, duals=np.zeros(len(prog.constraints)))

        # constant inequality rows are checked here and dropped
        le_keep = []
        for r, row in enumerate(le_rows):
            if any(abs(v) > 0 for v in row.values()):
                le_keep.append(r)
            elif le_h[r] < -1e-12:
                return ConicSolution(INFEASIBLE, np.inf, solver=self.name, duals=np.zeros(len(prog.constraints)))

        gi, gj, gv, h = [], [], [], []
        nrow = 0
        for r in le_keep:
            for j, v in le_rows[r].items():
                gi.append(nrow), gj.append(j), gv.append(v)
            h.append(le_h[r])
            nrow += 1
        n_l = nrow
        # t >= c s^2  <=>  ||(2 sqrt(c) s, t - 1)|| <= t + 1
        for q in prog.cones:
            jt, js = lay.scalar_idx[q.epi], lay.scalar_idx[q.var]
            gi += [nrow, nrow + 1, nrow + 2]
            gj += [jt, js, jt]
            gv += [-1.0, -2.0 * np.sqrt(q.coef), -1.0]
            h += [1.0, 0.0, -1.0]
            nrow += 3
        s_dims = []
        for name, n in prog.blocks.items():
            off = lay.block_off[name]
            iu, ku = lay.tri[name]
            m = len(iu)
            d = 2 * n
            base = nrow

            def put(r, c, j, v, base=base, d=d):
                gi.append(base + c * d + r), gj.append(j), gv.append(-v)

            for i in range(n):
                put(i, i, off + i, 1.0)
                put(n + i, n + i, off + i, 1.0)
            for p, (i, k) in enumerate(zip(iu, ku)):
                jr, jm = off + n + p, off + n + m + p
                for r, c in ((i, k), (k, i), (n + i, n + k), (n + k, n + i)):
                    put(r, c, jr, 1.0)
                for r, c in ((n + i, k), (k, n + i)):
                    put(r, c, jm, 1.0)
                for r, c in ((i, n + k), (n + k, i)):
                    put(r, c, jm, -1.0)
            h += [0.0] * (d * d)
            nrow += d * d
            s_dims.append(d)

        c_vec = np.zeros(nx)
        for s, coef in prog.objective.items():
            c_vec[lay.scalar_idx[s]] += coef

        G = spmatrix([float(v) for v in gv], [int(i) for i in gi], [int(j) for j in gj], (nrow, nx))
        dims = {"l": n_l, "q": [3] * len(prog.cones), "s": s_dims}
        A = matrix(a_dense[keep]) if len(keep) else matrix(0.0, (0, nx))
        b = matrix(b_vec[keep]) if len(keep) else matrix(0.0, (0, 1))
        feastol = min(opts.tol_primal, opts.tol_dual)
        options = {
            "abstol": opts.tol_gap,
            "reltol": opts.tol_gap,
            "feastol": feastol,
            "maxiters": opts.max_iterations,
            "show_progress": opts.verbosity > 0,
        }
        try:
            res = solvers.conelp(matrix(c_vec), G, matrix(h, (len(h), 1), "d"), dims, A, b, options=options)
        except (ValueError, ArithmeticError) as exc:
            log.warning("conelp failed on %s: %s", prog.name, exc)
            return ConicSolution(MAX_ITER, np.nan, solver=self.name, duals=np.zeros(len(prog.constraints)))

        raw = res["status"]
        status = {
            "optimal": OPTIMAL,
            "primal infeasible": INFEASIBLE,
            "dual infeasible": UNBOUNDED,
        }.get(raw, MAX_ITER)
        duals = np.zeros(len(prog.constraints))
        # certificates carry only half of (x, y, z); no primal-dual pair to report
        if status in (INFEASIBLE, UNBOUNDED) or res["x"] is None or res["z"] is None:
            return ConicSolution(status, np.inf if status == INFEASIBLE else -np.inf, solver=self.name,
                                 duals=duals, iterations=res.get("iterations", 0))
        x = np.array(res["x"]).ravel()
        y = np.array(res["y"]).ravel()
        z = np.array(res["z"]).ravel()
        for pos, r in enumerate(keep):
            duals[eq_idx[r]] = y[pos]
        for pos, r in enumerate(le_keep):
            duals[le_idx[r]] = z[pos]
        scalars, blocks = lay.unpack(prog, x)
        obj = objective_value(prog, scalars)
        dual_obj = float(-np.dot(np.array(h), z) - np.dot(b_vec[keep], y)) + prog.objective_constant
        # stationarity on the scalar coordinates
        gz = np.array(G.T * matrix(z)).ravel()
        ay = a_dense[keep].T @ y if len(keep) else np.zeros(nx)
        stat = c_vec + gz + ay
        residuals = {
            "primal": float(res["primal infeasibility"] or 0.0),
            "dual": float(np.max(np.abs(stat))) if nx else 0.0,
            "gap": float(abs(res["gap"])) if res["gap"] is not None else np.inf,
            "relative_gap": float(abs(res["relative gap"])) if res["relative gap"] is not None else np.inf,
        }
        if status == MAX_ITER and raw == "unknown":
            log.info("conelp stopped early on %s (%s)", prog.name, raw)
        return ConicSolution(
            status,
            obj,
            blocks,
            scalars,
            duals,
            residuals,
            dual_obj,
            int(res.get("iterations", 0)),
            self.name,
        )


# --------------------------------------------------------------------------
# cvxpy backend (cross-checking)


class CvxpySolver:
    """Backend that re-expresses the program in cvxpy (default solver Clarabel)."""

    name = "cvxpy"

    def __init__(self, solver: str = "CLARABEL", options: SolverOptions | None = None):
        self.solver = solver
        self.options = options or SolverOptions()

    def solve(self, prog: ConicProgram, opts: SolverOptions | None = None) -> ConicSolution:
        import cvxpy as cp

        opts = opts or self.options
        sv = {s: cp.Variable(name=s) for s in prog.scalars}
        bv = {name: cp.Variable((n, n), hermitian=True, name=name) for name, n in prog.blocks.items()}
        cons, handles = [], []
        for c in prog.constraints:
            expr = 0
            for name, mat in c.blocks.items():
                expr = expr + cp.real(cp.trace(mat.to_dense() @ bv[name]))
            for s, coef in c.scalars.items():
                expr = expr + coef * sv[s]
            con = (expr == c.rhs) if c.sense == EQ else (expr <= c.rhs)
            cons.append(con)
            handles.append(con)
        for q in prog.cones:
            cons.append(q.coef * cp.square(sv[q.var]) <= sv[q.epi])
        cons += [bv[name] >> 0 for name in prog.blocks]
        obj = prog.objective_constant + sum(c * sv[s] for s, c in prog.objective.items())
        problem = cp.Problem(cp.Minimize(obj), cons)
        try:
            problem.solve(solver=self.solver, verbose=opts.verbosity > 0)
        except cp.error.SolverError as exc:
            log.warning("cvxpy failed on %s: %s", prog.name, exc)
            return ConicSolution(MAX_ITER, np.nan, solver=self.name, duals=np.zeros(len(prog.constraints)))
        status = {
            cp.OPTIMAL: OPTIMAL,
            cp.INFEASIBLE: INFEASIBLE,
            cp.UNBOUNDED: UNBOUNDED,
        }.get(problem.status, MAX_ITER)
        duals = np.zeros(len(prog.constraints))
        if status != OPTIMAL:
            return ConicSolution(status, np.inf if status == INFEASIBLE else np.nan, solver=self.name, duals=duals)
        for idx, (c, h) in enumerate(zip(prog.constraints, handles)):
            duals[idx] = float(np.real(h.dual_value))
        scalars = {s: float(v.value) for s, v in sv.items()}
        blocks = {name: np.asarray(v.value, dtype=complex) for name, v in bv.items()}
        obj_val = objective_value(prog, scalars)
        return ConicSolution(status, obj_val, blocks, scalars, duals, {}, np.nan, 0, self.name)


_DEFAULT = CvxoptSolver()


def default_solver() -> CvxoptSolver:
    return _DEFAULT


def solve(prog: ConicProgram, opts: SolverOptions | None = None, solver: Solver | None = None) -> ConicSolution:
    if not prog.frozen:
        prog.freeze()
    return (solver or _DEFAULT).solve(prog, opts)


def extract_duals(prog: ConicProgram, sol: ConicSolution, tags: Iterable[Hashable]) -> dict:
    if sol.status != OPTIMAL:
        raise ValueError(f"duals requested from a {sol.status} solution")
    return {t: sol.dual(prog, t) for t in tags}
