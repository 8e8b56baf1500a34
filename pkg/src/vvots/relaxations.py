"""Convex programs of the switching problem.

* :func:`build_p1` -- SDP-relaxed OPF on a fixed topology ``alpha``.
* :func:`build_p3` -- virtual-voltage relaxation: one 2x2 PSD block ``U``
  per switchable line replaces the bilinear ``alpha * flow`` terms.
* :func:`build_p3_security` -- the same with one ``W`` per N-1 scenario and
  shared ``U`` blocks.
* :func:`build_mccormick` -- McCormick envelopes on ``alpha * flow``.

Every builder shares the bus-level constraint set produced by
:func:`build_opf`, which also serves the per-block subproblems of the
partition algorithm. The voltage-difference limit is imposed on every line
whose both terminals belong to the program, switched or not.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .case_io import ValidatedNetwork, is_connected
from .conic import EQ, LE, ConicProgram, ConicSolution, add_quadratic_cost
from .network import (
    HermitianBlock,
    build_bus_admittance,
    build_line_matrices,
    injection_matrices,
    voltage_diff_matrix,
    voltage_magnitude_matrix,
)

CONSERVATIVE_FLOW_BOUNDS = (5.0, 5.0)
TIGHT_FLOW_BOUNDS = (1.0, 0.5)
MCCORMICK_PROFILES = {"mccormick5": CONSERVATIVE_FLOW_BOUNDS, "mccormick1": TIGHT_FLOW_BOUNDS}


class TopologyError(ValueError):
    pass


@dataclass(frozen=True)
class ContingencySet:
    """Single-element outages; scenario 0 is the intact network.

    ``outages`` lists ``("line", k)`` (index into ``net.lines``, fixed lines
    only) or ``("gen", g)`` entries, one per scenario ``t = 1, 2, ...``.
    """

    outages: tuple[tuple[str, int], ...] = ()

    @property
    def scenarios(self) -> list:
        return [None, *self.outages]

    def __len__(self) -> int:
        return 1 + len(self.outages)

    def check(self, net: ValidatedNetwork) -> None:
        for kind, idx in self.outages:
            if kind == "line":
                if idx not in net.fixed:
                    raise TopologyError(f"contingency line {idx} is not a fixed line")
                rest = [net.lines[k] for k in net.fixed if k != idx]
                if not is_connected(net.n_bus, rest):
                    raise TopologyError(f"outage of line {idx} disconnects the network")
            elif kind == "gen":
                if not 0 <= idx < net.n_gen:
                    raise TopologyError(f"contingency generator {idx} does not exist")
            else:
                raise TopologyError(f"unknown outage kind {kind!r}")


# --------------------------------------------------------------------------
# shared bus-level model


def _suffix(t: int) -> str:
    return "" if t == 0 else f"@{t}"


def _tag(name: str, idx, t: int):
    return (name, idx) if t == 0 else (name, idx, t)


def _add_scenario(
    prog: ConicProgram,
    net: ValidatedNetwork,
    buses: Sequence[int],
    ybus_lines: Sequence[int],
    vdiff_lines: Sequence[int],
    u_blocks: Mapping[int, str],
    offsets: Mapping[int, tuple[float, float]],
    t: int = 0,
    gen_out: Iterable[int] = (),
) -> str:
    n = len(buses)
    pos = {b: p for p, b in enumerate(buses)}
    w = prog.add_block("W" + _suffix(t), n)
    y_bus = build_bus_admittance(
        n, [(pos[net.lines[k][0]], pos[net.lines[k][1]]) for k in ybus_lines], net.admittance[list(ybus_lines)]
    )
    gen_out = set(gen_out)
    case = net.case

    # per-bus U contributions: (U name, restricted P matrix, restricted Q matrix)
    u_terms: dict[int, list] = {b: [] for b in buses}
    for k, uname in u_blocks.items():
        i, j = net.lines[k]
        lm = build_line_matrices(2, 0, 1, net.admittance[k])
        u_terms[i].append((uname, lm.y_ik, lm.ybar_ik))
        u_terms[j].append((uname, lm.y_ki, lm.ybar_ki))

    for b in buses:
        p = pos[b]
        y_i, ybar_i, m_i = injection_matrices(y_bus, p)
        bus = case.buses[b]
        gens = [g for g in net.gens_at(b)]
        p_sc, q_sc = {}, {}
        for g in gens:
            pg = prog.add_scalar(f"P[{g}]" + _suffix(t))
            qg = prog.add_scalar(f"Q[{g}]" + _suffix(t))
            p_sc[pg], q_sc[qg] = 1.0, 1.0
            gen = case.generators[g]
            if g in gen_out:
                prog.add_constraint(scalars={pg: 1.0}, sense=EQ, rhs=0.0, tag=_tag("p_out", g, t))
                prog.add_constraint(scalars={qg: 1.0}, sense=EQ, rhs=0.0, tag=_tag("q_out", g, t))
                continue
            prog.add_constraint(scalars={pg: -1.0}, sense=LE, rhs=-gen.p_min, tag=_tag("p_lo", g, t))
            prog.add_constraint(scalars={pg: 1.0}, sense=LE, rhs=gen.p_max, tag=_tag("p_hi", g, t))
            prog.add_constraint(scalars={qg: -1.0}, sense=LE, rhs=-gen.q_min, tag=_tag("q_lo", g, t))
            prog.add_constraint(scalars={qg: 1.0}, sense=LE, rhs=gen.q_max, tag=_tag("q_hi", g, t))
            if t == 0 and prog.meta.get("cost", True):
                add_quadratic_cost(prog, pg, gen.c2, gen.c1)
        p_off, q_off = offsets.get(b, (0.0, 0.0))
        p_blocks = {w: y_i.scaled(-1.0)}
        q_blocks = {w: ybar_i.scaled(-1.0)}
        for uname, yp, yq in u_terms[b]:
            p_blocks[uname] = (p_blocks[uname] + yp.scaled(-1.0)) if uname in p_blocks else yp.scaled(-1.0)
            q_blocks[uname] = (q_blocks[uname] + yq.scaled(-1.0)) if uname in q_blocks else yq.scaled(-1.0)
        prog.add_constraint(p_blocks, p_sc, EQ, bus.p_demand + p_off, tag=_tag("p_bal", b, t))
        prog.add_constraint(q_blocks, q_sc, EQ, bus.q_demand + q_off, tag=_tag("q_bal", b, t))
        prog.add_constraint({w: m_i.scaled(-1.0)}, None, LE, -bus.v_min**2, tag=_tag("v_lo", b, t))
        prog.add_constraint({w: m_i}, None, LE, bus.v_max**2, tag=_tag("v_hi", b, t))

    for k in vdiff_lines:
        i, j = net.lines[k]
        prog.add_constraint(
            {w: voltage_diff_matrix(n, pos[i], pos[j])}, None, LE, net.vdiff_max(k), tag=_tag("vdiff", k, t)
        )

    m_hat = HermitianBlock(2, {(0, 0): 1.0, (1, 1): 1.0, (0, 1): -1.0})
    for k, uname in u_blocks.items():
        i, j = net.lines[k]
        prog.add_constraint(
            {uname: HermitianBlock(2, {(0, 0): 1.0}), w: voltage_magnitude_matrix(n, pos[i]).scaled(-1.0)},
            None, LE, 0.0, tag=_tag("u_from", k, t),
        )
        prog.add_constraint(
            {uname: HermitianBlock(2, {(1, 1): 1.0}), w: voltage_magnitude_matrix(n, pos[j]).scaled(-1.0)},
            None, LE, 0.0, tag=_tag("u_to", k, t),
        )
        prog.add_constraint(
            {uname: m_hat, w: voltage_diff_matrix(n, pos[i], pos[j]).scaled(-1.0)},
            None, LE, 0.0, tag=_tag("u_diff", k, t),
        )
    return w


def _add_loss_penalty(prog, net, beta, w_name, pos, n, switched_in, u_blocks):
    """``beta`` times the active losses of switchable lines (connected or virtual)."""
    if beta == 0:
        return
    if beta < 0:
        raise ValueError("loss penalty must be nonnegative")
    blocks: dict[str, HermitianBlock] = {}
    m_hat = HermitianBlock(2, {(0, 0): 1.0, (1, 1): 1.0, (0, 1): -1.0})
    acc = HermitianBlock(n)
    for k in switched_in:
        i, j = net.lines[k]
        acc = acc + voltage_diff_matrix(n, pos[i], pos[j]).scaled(-net.admittance[k].real)
    if acc.entries:
        blocks[w_name] = acc
    for k, uname in u_blocks.items():
        blocks[uname] = m_hat.scaled(-net.admittance[k].real)
    if not blocks:
        return
    prog.add_scalar("loss")
    prog.add_constraint(blocks, {"loss": 1.0}, EQ, 0.0, tag="loss")
    prog.add_objective("loss", beta)


def build_opf(
    net: ValidatedNetwork,
    buses: Sequence[int] | None = None,
    ybus_lines: Sequence[int] | None = None,
    u_lines: Sequence[int] = (),
    offsets: Mapping[int, tuple[float, float]] | None = None,
    beta: float = 0.0,
    name: str = "opf",
) -> ConicProgram:
    """Generic single-scenario program on the bus subset ``buses``.

    ``ybus_lines`` enter the admittance matrix, ``u_lines`` get virtual
    voltage blocks, and ``offsets`` add constant ``(P, Q)`` withdrawals at
    the listed buses. All lines with both terminals in ``buses`` carry the
    voltage-difference limit.
    """
    buses = list(range(net.n_bus)) if buses is None else list(buses)
    inside = set(buses)
    ybus_lines = list(net.fixed) if ybus_lines is None else list(ybus_lines)
    vdiff_lines = [k for k, (i, j) in enumerate(net.lines) if i in inside and j in inside]
    for k in [*ybus_lines, *u_lines]:
        i, j = net.lines[k]
        if i not in inside or j not in inside:
            raise TopologyError(f"line {k} leaves the bus set")
    prog = ConicProgram(name)
    u_blocks = {k: f"U[{k}]" for k in u_lines}
    for uname in u_blocks.values():
        prog.add_block(uname, 2)
    w = _add_scenario(prog, net, buses, ybus_lines, vdiff_lines, u_blocks, offsets or {})
    pos = {b: p for p, b in enumerate(buses)}
    switched = [k for k in ybus_lines if k in set(net.switchable)]
    _add_loss_penalty(prog, net, beta, w, pos, len(buses), switched, u_blocks)
    prog.meta.update(
        buses=buses, w_block=w, u_blocks=u_blocks, ybus_lines=ybus_lines, beta=beta, offsets=dict(offsets or {})
    )
    return prog.freeze()


def build_p1(net: ValidatedNetwork, alpha: Sequence[int] | None = None, beta: float = 0.0) -> ConicProgram:
    """SDP relaxation of OPF with switchable line ``k`` in service iff ``alpha[k] == 1``."""
    if alpha is None:
        alpha = [1] * len(net.switchable)
    alpha = [int(a) for a in alpha]
    if len(alpha) != len(net.switchable):
        raise ValueError("alpha length must equal the number of switchable lines")
    if any(a not in (0, 1) for a in alpha):
        raise ValueError("alpha must be binary")
    lines = list(net.fixed) + [k for k, a in zip(net.switchable, alpha) if a]
    lines.sort()
    if not is_connected(net.n_bus, [net.lines[k] for k in lines]):
        raise TopologyError("switch configuration disconnects the network")
    prog = build_opf(net, ybus_lines=lines, beta=beta, name="P1")
    prog.meta["alpha"] = tuple(alpha)
    return prog


def build_p3(net: ValidatedNetwork, beta: float = 0.0) -> ConicProgram:
    """Virtual-voltage relaxation of the switching problem."""
    if not net.switchable:
        raise TopologyError("no switchable lines; use build_p1")
    return build_p3_security(net, ContingencySet(), beta=beta, name="P3")


def build_p3_security(
    net: ValidatedNetwork, cont: ContingencySet, beta: float = 0.0, name: str = "P3-security"
) -> ConicProgram:
    """Virtual-voltage relaxation with one ``W`` block per scenario of ``cont``.

    The ``U`` blocks are shared by all scenarios; only nominal generation
    is priced.
    """
    cont.check(net)
    if not net.switchable:
        raise TopologyError("no switchable lines; use build_p1")
    prog = ConicProgram(name)
    u_blocks = {k: f"U[{k}]" for k in net.switchable}
    for uname in u_blocks.values():
        prog.add_block(uname, 2)
    buses = list(range(net.n_bus))
    w_blocks = []
    for t, outage in enumerate(cont.scenarios):
        ybus = list(net.fixed)
        vdiff = list(range(len(net.lines)))
        gen_out = ()
        if outage is not None:
            kind, idx = outage
            if kind == "line":
                ybus.remove(idx)
                vdiff.remove(idx)
            else:
                gen_out = (idx,)
        w_blocks.append(_add_scenario(prog, net, buses, ybus, vdiff, u_blocks, {}, t=t, gen_out=gen_out))
    pos = {b: b for b in buses}
    _add_loss_penalty(prog, net, beta, w_blocks[0], pos, net.n_bus, [], u_blocks)
    prog.meta.update(
        buses=buses, w_block=w_blocks[0], w_blocks=w_blocks, u_blocks=u_blocks, beta=beta,
        ybus_lines=list(net.fixed), scenarios=cont.scenarios,
    )
    return prog.freeze()


# --------------------------------------------------------------------------
# McCormick


def mccormick_planes(xl: float, xu: float, yl: float, yu: float):
    """The four envelope planes for ``v = x*y`` as ``(a, b, c, sense)`` meaning
    ``v >= a*x + b*y + c`` (sense ``">="``) or ``v <= ...`` (``"<="``)."""
    return [
        (yl, xl, -xl * yl, ">="),
        (yu, xu, -xu * yu, ">="),
        (yl, xu, -xu * yl, "<="),
        (yu, xl, -xl * yu, "<="),
    ]


def mccormick_envelope(x: float, y: float, xl: float, xu: float, yl: float, yu: float) -> tuple[float, float]:
    """Interval ``[lower, upper]`` the surrogate of ``x*y`` may take at ``(x, y)``."""
    lo, hi = -np.inf, np.inf
    for a, b, c, sense in mccormick_planes(xl, xu, yl, yu):
        v = a * x + b * y + c
        if sense == ">=":
            lo = max(lo, v)
        else:
            hi = min(hi, v)
    return lo, hi


def build_mccormick(
    net: ValidatedNetwork,
    flow_bounds: tuple[float, float] = CONSERVATIVE_FLOW_BOUNDS,
    beta: float = 0.0,
) -> ConicProgram:
    """McCormick relaxation with ``alpha`` relaxed to ``[0, 1]``.

    ``flow_bounds = (P_max, Q_max)`` bound both directional flows of every
    switchable line symmetrically.
    """
    p_max, q_max = flow_bounds
    if p_max <= 0 or q_max <= 0:
        raise ValueError("flow bounds must be positive")
    if not net.switchable:
        raise TopologyError("no switchable lines; use build_p1")
    n = net.n_bus
    prog = ConicProgram("McCormick")
    buses = list(range(n))
    vdiff = list(range(len(net.lines)))
    # surrogates enter the balance through fictitious offsets: build W part first
    w = _add_scenario(prog, net, buses, list(net.fixed), vdiff, {}, {})
    extra_p: dict[int, dict[str, float]] = {b: {} for b in buses}
    extra_q: dict[int, dict[str, float]] = {b: {} for b in buses}
    surrogates = {}
    loss_terms = {}
    for k in net.switchable:
        i, j = net.lines[k]
        lm = build_line_matrices(n, i, j, net.admittance[k])
        a = prog.add_scalar(f"alpha[{k}]")
        prog.add_constraint(scalars={a: -1.0}, sense=LE, rhs=0.0, tag=("alpha_lo", k))
        prog.add_constraint(scalars={a: 1.0}, sense=LE, rhs=1.0, tag=("alpha_hi", k))
        names = {}
        for label, mat, bound, bus, extra in (
            ("Pf", lm.y_ik, p_max, i, extra_p),
            ("Pr", lm.y_ki, p_max, j, extra_p),
            ("Qf", lm.ybar_ik, q_max, i, extra_q),
            ("Qr", lm.ybar_ki, q_max, j, extra_q),
        ):
            f = prog.add_scalar(f"{label}[{k}]")
            prog.add_constraint({w: mat.scaled(-1.0)}, {f: 1.0}, EQ, 0.0, tag=(f"{label}_def", k))
            prog.add_constraint(scalars={f: 1.0}, sense=LE, rhs=bound, tag=(f"{label}_hi", k))
            prog.add_constraint(scalars={f: -1.0}, sense=LE, rhs=bound, tag=(f"{label}_lo", k))
            v = prog.add_scalar(f"{label}hat[{k}]")
            for idx, (ca, cb, cc, sense) in enumerate(mccormick_planes(0.0, 1.0, -bound, bound)):
                # v >= ca*alpha + cb*f + cc   <=>   -v + ca*alpha + cb*f <= -cc
                sgn = -1.0 if sense == ">=" else 1.0
                prog.add_constraint(
                    scalars={v: sgn, a: -sgn * ca, f: -sgn * cb}, sense=LE, rhs=sgn * cc,
                    tag=(f"{label}_mc{idx}", k),
                )
            extra[bus][v] = extra[bus].get(v, 0.0) - 1.0
            names[label] = v
        surrogates[k] = names
        loss_terms[names["Pf"]] = 1.0
        loss_terms[names["Pr"]] = 1.0

    # rebuild balances with the surrogate terms
    prog = _with_balance_terms(prog, extra_p, extra_q)
    if beta:
        prog.add_scalar("loss")
        prog.add_constraint(scalars={"loss": 1.0, **{v: -c for v, c in loss_terms.items()}}, sense=EQ, rhs=0.0, tag="loss")
        prog.add_objective("loss", beta)
    prog.meta.update(
        buses=buses, w_block=w, u_blocks={}, surrogates=surrogates, flow_bounds=flow_bounds, beta=beta,
        ybus_lines=list(net.fixed),
    )
    return prog.freeze()


def _with_balance_terms(prog: ConicProgram, extra_p, extra_q) -> ConicProgram:
    """Copy of ``prog`` with extra scalar terms in the bus balance rows."""
    out = ConicProgram(prog.name)
    for name, n in prog.blocks.items():
        out.add_block(name, n)
    for s in prog.scalars:
        out.add_scalar(s)
    for q in prog.cones:
        out.add_cone(q.epi, q.var, q.coef)
    for s, c in prog.objective.items():
        out.add_objective(s, c)
    out.objective_constant = prog.objective_constant
    for c in prog.constraints:
        scalars = dict(c.scalars)
        if isinstance(c.tag, tuple) and len(c.tag) == 2 and c.tag[0] in ("p_bal", "q_bal"):
            extra = (extra_p if c.tag[0] == "p_bal" else extra_q)[c.tag[1]]
            for s, v in extra.items():
                scalars[s] = scalars.get(s, 0.0) + v
        out.add_constraint(c.blocks, scalars, c.sense, c.rhs, c.tag)
    out.meta = dict(prog.meta)
    return out


# --------------------------------------------------------------------------
# dual extraction


def bus_bound_duals(prog: ConicProgram, sol: ConicSolution, net: ValidatedNetwork, t: int = 0) -> dict[str, np.ndarray]:
    """Multipliers of the bus injection bounds, indexed by global bus.

    Generator buses sum the multipliers of their generators' bounds. At
    buses without generation the injection bounds coincide at zero and are
    represented by the balance row, whose multiplier splits into its
    positive (lower bound) and negative (upper bound) parts.
    """
    if not sol.optimal:
        raise ValueError(f"duals requested from a {sol.status} solution")
    out = {key: np.zeros(net.n_bus) for key in ("lambda_lo", "lambda_hi", "gamma_lo", "gamma_hi")}
    for b in prog.meta["buses"]:
        gens = net.gens_at(b)
        live = [g for g in gens if prog.has_tag(_tag("p_lo", g, t))]
        if live:
            for g in live:
                out["lambda_lo"][b] += max(sol.dual(prog, _tag("p_lo", g, t)), 0.0)
                out["lambda_hi"][b] += max(sol.dual(prog, _tag("p_hi", g, t)), 0.0)
                out["gamma_lo"][b] += max(sol.dual(prog, _tag("q_lo", g, t)), 0.0)
                out["gamma_hi"][b] += max(sol.dual(prog, _tag("q_hi", g, t)), 0.0)
        else:
            yp = sol.dual(prog, _tag("p_bal", b, t))
            yq = sol.dual(prog, _tag("q_bal", b, t))
            out["lambda_lo"][b], out["lambda_hi"][b] = max(yp, 0.0), max(-yp, 0.0)
            out["gamma_lo"][b], out["gamma_hi"][b] = max(yq, 0.0), max(-yq, 0.0)
    return out


def generation_cost(prog: ConicProgram, sol: ConicSolution, net: ValidatedNetwork) -> float:
    """Quadratic generation cost at ``sol`` (objective without loss penalty)."""
    total = 0.0
    for g, gen in enumerate(net.case.generators):
        name = f"P[{g}]"
        if name in sol.scalars:
            p = sol.scalars[name]
            total += gen.c2 * p * p + gen.c1 * p
    return total


def build_p1_security(
    net: ValidatedNetwork,
    alpha: Sequence[int],
    cont: ContingencySet,
    beta: float = 0.0,
    couple_switchable: bool = True,
) -> ConicProgram:
    """Fixed-topology relaxation that must stay feasible in every scenario of ``cont``.

    With ``couple_switchable`` the 2x2 voltage blocks of closed switchable
    lines are equal across scenarios, which is the coupling the shared
    ``U`` blocks of :func:`build_p3_security` impose; the security
    relaxation then bounds this program from below.
    """
    cont.check(net)
    alpha = [int(a) for a in alpha]
    if len(alpha) != len(net.switchable) or any(a not in (0, 1) for a in alpha):
        raise ValueError("alpha must be a binary vector with one entry per switchable line")
    on = sorted(list(net.fixed) + [k for k, a in zip(net.switchable, alpha) if a])
    prog = ConicProgram("P1-security")
    buses = list(range(net.n_bus))
    w_blocks = []
    for t, outage in enumerate(cont.scenarios):
        ybus, gen_out = list(on), ()
        if outage is not None:
            kind, idx = outage
            if kind == "line":
                ybus.remove(idx)
            else:
                gen_out = (idx,)
        if not is_connected(net.n_bus, [net.lines[k] for k in ybus]):
            raise TopologyError(f"switch configuration disconnects scenario {t}")
        vdiff = [k for k in range(len(net.lines)) if not (outage and outage[0] == "line" and outage[1] == k)]
        w_blocks.append(_add_scenario(prog, net, buses, ybus, vdiff, {}, {}, t=t, gen_out=gen_out))
    switched = [k for k, a in zip(net.switchable, alpha) if a]
    if couple_switchable:
        # mirror the shared virtual-voltage block: closed switchable lines see the
        # same terminal voltages in every scenario
        n = net.n_bus
        for k in switched:
            i, j = net.lines[k]
            parts = {
                "ii": HermitianBlock(n, {(i, i): 1.0}),
                "kk": HermitianBlock(n, {(j, j): 1.0}),
                "re": HermitianBlock(n, {(i, j): 0.5}),
                "im": HermitianBlock(n, {(i, j): 0.5j}),
            }
            for t in range(1, len(w_blocks)):
                for label, sel in parts.items():
                    prog.add_constraint(
                        {w_blocks[t]: sel, w_blocks[0]: sel.scaled(-1.0)}, None, EQ, 0.0, tag=("tie", k, t, label)
                    )
    _add_loss_penalty(prog, net, beta, w_blocks[0], {b: b for b in buses}, net.n_bus, switched, {})
    prog.meta.update(
        buses=buses, w_block=w_blocks[0], w_blocks=w_blocks, u_blocks={}, beta=beta,
        ybus_lines=on, scenarios=cont.scenarios, alpha=tuple(alpha),
    )
    return prog.freeze()
