"""From a virtual-voltage solution to switch decisions, bounds and diagnostics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .case_io import ValidatedNetwork
from .conic import ConicProgram, ConicSolution
from .network import M_HAT, build_line_matrices, line_flows
from .relaxations import TopologyError, build_p1
from .solver import SolverOptions, solve

RANK_TOL = 1e-6
DEGENERATE_TRACE = 1e-9


class DegenerateVoltageError(ValueError):
    pass


@dataclass
class OtsBounds:
    lower: float
    upper: float
    alpha: tuple[int, ...] = ()
    alpha_hat: tuple[float, ...] = ()
    feasible: bool = True
    optimal: bool = False
    status_lower: str = "optimal"
    status_upper: str = "optimal"

    @property
    def gap_rel(self) -> float:
        if not math.isfinite(self.upper) or not math.isfinite(self.lower):
            return math.inf
        return (self.upper - self.lower) / max(abs(self.lower), 1e-12)

    def as_dict(self) -> dict:
        return {
            "lower": self.lower,
            "upper": self.upper,
            "gap_rel": self.gap_rel,
            "alpha": list(self.alpha),
            "alpha_hat": list(self.alpha_hat),
            "feasible": self.feasible,
            "optimal": self.optimal,
        }


def _principal(w: np.ndarray, i: int, k: int) -> np.ndarray:
    return w[np.ix_((i, k), (i, k))]


def extract_alpha_hat(prog: ConicProgram, sol: ConicSolution, net: ValidatedNetwork) -> np.ndarray:
    """``tr{U_ik} / tr{W_ik}`` per switchable line, clamped to ``[0, 1]``."""
    if not sol.optimal:
        raise ValueError(f"cannot read switch estimates from a {sol.status} solution")
    u_blocks = prog.meta["u_blocks"]
    pos = {b: p for p, b in enumerate(prog.meta["buses"])}
    w = sol.blocks[prog.meta["w_block"]]
    out = []
    for k, name in u_blocks.items():
        i, j = net.lines[k]
        tw = float(np.trace(_principal(w, pos[i], pos[j])).real)
        if tw < DEGENERATE_TRACE:
            raise DegenerateVoltageError(f"line {k} ({i}, {j}): voltage trace {tw:.3g} is degenerate")
        out.append(float(np.trace(sol.blocks[name]).real) / tw)
    return np.clip(np.array(out, dtype=float), 0.0, 1.0)


def round_alpha(alpha_hat: Sequence[float], threshold: float = 0.5) -> tuple[int, ...]:
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    return tuple(int(a >= threshold) for a in alpha_hat)


def certify(
    net: ValidatedNetwork,
    alpha_r: Sequence[int],
    lower: float,
    beta: float = 0.0,
    alpha_hat: Sequence[float] = (),
    opts: SolverOptions | None = None,
    solver=None,
    tol: float = 1e-6,
) -> tuple[OtsBounds, ConicSolution | None]:
    """Upper bound from the fixed-topology relaxation at ``alpha_r``."""
    alpha_r = tuple(int(a) for a in alpha_r)
    if any(a not in (0, 1) for a in alpha_r):
        raise ValueError("alpha_r must be binary")
    try:
        prog = build_p1(net, alpha_r, beta=beta)
    except TopologyError:
        return OtsBounds(lower, math.inf, alpha_r, tuple(alpha_hat), feasible=False, status_upper="disconnected"), None
    sol = solve(prog, opts, solver)
    if not sol.optimal:
        return OtsBounds(lower, math.inf, alpha_r, tuple(alpha_hat), feasible=False, status_upper=sol.status), sol
    upper = sol.objective
    closed = abs(upper - lower) <= tol * max(1.0, abs(lower))
    return OtsBounds(lower, upper, alpha_r, tuple(alpha_hat), feasible=True, optimal=closed), sol


# --------------------------------------------------------------------------
# diagnostics


def numerical_rank(x: np.ndarray, rank_tol: float = RANK_TOL) -> int:
    ev = np.linalg.eigvalsh(x)
    top = ev[-1]
    if top <= 0:
        return 0
    return int(np.sum(ev > rank_tol * top))


def condition_number(u: np.ndarray) -> float:
    """Ratio of the two largest eigenvalues (``inf`` if the second vanishes)."""
    ev = np.linalg.eigvalsh(u)[::-1]
    if len(ev) < 2:
        return 1.0
    if ev[1] <= 0:
        return math.inf
    return float(ev[0] / ev[1])


@dataclass
class LineDiagnostics:
    line: int
    buses: tuple[int, int]
    alpha_hat: float
    eigenvalues: tuple[float, float]
    condition: float
    cond_bound: float
    cond_slack: float
    p_sum: float
    q_sum: float
    p_sum_cap: float
    q_sum_cap: float
    p_ik: float
    q_ik: float
    p_ki: float
    q_ki: float
    prop1_applies: bool
    prop1_ok: bool | None


@dataclass
class Diagnostics:
    lines: list[LineDiagnostics] = field(default_factory=list)
    rank_w: int = 0
    condition_w: float = math.nan

    @property
    def min_condition_u(self) -> float:
        return min((d.condition for d in self.lines), default=math.nan)

    def condition_ok(self, tol: float = 1e-6) -> bool:
        return all(d.cond_slack >= -tol for d in self.lines)

    def flow_sums_ok(self, tol: float = 1e-7) -> bool:
        return all(
            d.p_sum >= -tol and d.p_sum <= d.p_sum_cap + tol and d.q_sum >= -tol and d.q_sum <= d.q_sum_cap + tol
            for d in self.lines
        )


def condition_terms(u: np.ndarray) -> tuple[float, float, float]:
    """``(a, S, R)`` for ``U = a x x* + y y*`` with ``x = sqrt(lambda_2) v_1``.

    ``S = |x_i|^2 + |x_k|^2``, ``R = Re(x_i conj(x_k))``; then
    ``tr{M_hat U} = a (S - 2R) + (S + 2R)`` holds exactly.
    """
    ev, vec = np.linalg.eigh(u)
    lam2, lam1 = float(ev[0]), float(ev[1])
    v1 = vec[:, 1]
    if lam2 <= 0:
        return math.inf, 0.0, 0.0
    x = math.sqrt(lam2) * v1
    s = float(abs(x[0]) ** 2 + abs(x[1]) ** 2)
    r = float((x[0] * np.conj(x[1])).real)
    return lam1 / lam2, s, r


def condition_check(u: np.ndarray, vbar: float) -> tuple[float, float]:
    """Lower bound on the condition number and the relative slack of the bound.

    The slack is evaluated in multiplied form,
    ``a (vbar - (S - 2R)) - (S + 2R)``, scaled by ``a * vbar``.
    """
    a, s, r = condition_terms(u)
    if not math.isfinite(a):
        return 0.0, math.inf
    denom = vbar - (s - 2 * r)
    bound = (s + 2 * r) / denom if denom > 0 else math.inf
    slack = (a * denom - (s + 2 * r)) / max(a * vbar, 1e-300)
    return bound, slack


def diagnostics(
    prog: ConicProgram, sol: ConicSolution, net: ValidatedNetwork, rank_tol: float = RANK_TOL
) -> Diagnostics:
    if not sol.optimal:
        raise ValueError(f"diagnostics need an optimal solution, got {sol.status}")
    w = sol.blocks[prog.meta["w_block"]]
    pos = {b: p for p, b in enumerate(prog.meta["buses"])}
    ev = np.linalg.eigvalsh(w)[::-1]
    out = Diagnostics(rank_w=numerical_rank(w, rank_tol), condition_w=float(ev[0] / ev[1]) if ev[1] > 0 else math.inf)
    ahat = extract_alpha_hat(prog, sol, net) if prog.meta["u_blocks"] else []
    for n_line, (k, name) in enumerate(prog.meta["u_blocks"].items()):
        i, j = net.lines[k]
        pi, pj = pos[i], pos[j]
        u = sol.blocks[name]
        y = complex(net.admittance[k])
        lm = build_line_matrices(2, 0, 1, y)
        p_ik, q_ik = lm.y_ik.trace_with(u), lm.ybar_ik.trace_with(u)
        p_ki, q_ki = lm.y_ki.trace_with(u), lm.ybar_ki.trace_with(u)
        w_ik = _principal(w, pi, pj)
        mhat_w = float(np.trace(M_HAT @ w_ik).real)
        bound, slack = condition_check(u, net.vdiff_max(k))
        evu = np.linalg.eigvalsh(u)

        # directional-flow bound for purely inductive lines
        wi, wk = math.sqrt(max(w[pi, pi].real, 0)), math.sqrt(max(w[pj, pj].real, 0))
        lam, vec = np.linalg.eigh(u)
        virt = math.sqrt(max(lam[1], 0.0)) * vec[:, 1]
        uk = abs(virt[1])
        applies = (
            abs(y.real) <= 1e-12
            and (uk <= 1e-4 or abs(uk - wk) <= 1e-4)
            and wi >= wk / 2
            and wk >= wi / 2
        )
        ok = None
        if applies:
            f_ik, _, f_ki, _ = line_flows(w, pi, pj, y)
            ok = abs(p_ik) <= abs(f_ik) + 1e-7 and abs(p_ki) <= abs(f_ki) + 1e-7
        out.lines.append(
            LineDiagnostics(
                line=k,
                buses=(i, j),
                alpha_hat=float(ahat[n_line]),
                eigenvalues=(float(evu[1]), float(evu[0])),
                condition=condition_number(u),
                cond_bound=bound,
                cond_slack=slack,
                p_sum=p_ik + p_ki,
                q_sum=q_ik + q_ki,
                p_sum_cap=y.real * mhat_w,
                q_sum_cap=-y.imag * mhat_w,
                p_ik=p_ik,
                q_ik=q_ik,
                p_ki=p_ki,
                q_ki=q_ki,
                prop1_applies=applies,
                prop1_ok=ok,
            )
        )
    return out
