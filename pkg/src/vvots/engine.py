"""End-to-end switching pipelines and the exhaustive reference solver.

The partition pipeline runs: virtual-voltage relaxation, graph reduction,
dual-weighted recursive bisection, one mixed-integer subproblem per block
(solved concurrently) and a final fixed-topology solve for the upper bound.
"""

from __future__ import annotations

import heapq
import itertools
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .case_io import ValidatedNetwork, is_connected
from .network import line_flows
from .partition import WeightedPartition, partition_network
from .recovery import (
    Diagnostics,
    OtsBounds,
    certify,
    diagnostics,
    extract_alpha_hat,
    numerical_rank,
    round_alpha,
)
from .relaxations import (
    MCCORMICK_PROFILES,
    ContingencySet,
    TopologyError,
    build_mccormick,
    build_opf,
    build_p1,
    build_p1_security,
    build_p3,
    build_p3_security,
    bus_bound_duals,
)
from .solver import SolverOptions, solve

log = logging.getLogger(__name__)

ENUM_THRESHOLD = 8
ORACLE_GUARD = 16


class StageError(RuntimeError):
    def __init__(self, stage: str, exc: Exception):
        super().__init__(f"[{stage}] {exc}")
        self.stage = stage
        self.cause = exc


@dataclass(frozen=True)
class SubproblemSpec:
    block: int
    buses: tuple[int, ...]
    lines: tuple[int, ...]
    switchable: tuple[int, ...]
    boundary: tuple[int, ...]
    offsets: dict = field(default_factory=dict)


@dataclass
class BlockResult:
    block: int
    alpha: dict
    objective: float
    method: str
    nodes: int
    feasible: bool = True

    def as_dict(self) -> dict:
        return {
            "block": self.block,
            "alpha": {str(k): v for k, v in self.alpha.items()},
            "objective": self.objective,
            "method": self.method,
            "nodes": self.nodes,
            "feasible": self.feasible,
        }


@dataclass
class OtsResult:
    method: str
    alpha: tuple[int, ...]
    bounds: OtsBounds
    alpha_hat: tuple[float, ...] = ()
    partition: WeightedPartition | None = None
    blocks: list[BlockResult] = field(default_factory=list)
    timings_ms: dict = field(default_factory=dict)
    diagnostics: Diagnostics | None = None
    rank_w: int | None = None
    status: str = "optimal"
    extra: dict = field(default_factory=dict)


class _Timer:
    def __init__(self):
        self.ms: dict[str, float] = {}

    def __call__(self, stage):
        timer = self

        class _Ctx:
            def __enter__(self):
                self.t0 = time.perf_counter()

            def __exit__(self, *exc):
                timer.ms[stage] = timer.ms.get(stage, 0.0) + 1e3 * (time.perf_counter() - self.t0)

        return _Ctx()


def _stage(stage, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except Exception as exc:  # noqa: BLE001 - re-raised with the stage tag
        raise StageError(stage, exc) from exc


# --------------------------------------------------------------------------
# subproblems


def make_subproblems(
    net: ValidatedNetwork, part: WeightedPartition, w: np.ndarray | None
) -> list[SubproblemSpec]:
    """Per-block specs; boundary buses withdraw the relaxation's cut-line flows."""
    where = {b: l for l, blk in enumerate(part.blocks) for b in blk}
    sw = set(net.switchable)
    specs = []
    for l, blk in enumerate(part.blocks):
        inside = set(blk)
        lines = tuple(k for k, (i, j) in enumerate(net.lines) if i in inside and j in inside and k not in sw)
        swl = tuple(k for k in net.switchable if net.lines[k][0] in inside and net.lines[k][1] in inside)
        offsets: dict[int, list[float]] = {}
        for k in part.cut_lines:
            i, j = net.lines[k]
            if where[i] == l:
                p, q, _, _ = line_flows(w, i, j, net.admittance[k])
                bus = i
            elif where[j] == l:
                _, _, p, q = line_flows(w, i, j, net.admittance[k])
                bus = j
            else:
                continue
            acc = offsets.setdefault(bus, [0.0, 0.0])
            acc[0] += p
            acc[1] += q
        specs.append(
            SubproblemSpec(
                l, tuple(blk), lines, swl, tuple(sorted(offsets)), {b: tuple(v) for b, v in offsets.items()}
            )
        )
    return specs


def build_p4(spec: SubproblemSpec, net: ValidatedNetwork, fixed_on=(), relaxed=(), beta: float = 0.0):
    """Convex program of one block.

    Switchable lines in ``fixed_on`` enter the block admittance matrix,
    lines in ``relaxed`` get virtual-voltage blocks, the rest are open.
    """
    return build_opf(
        net,
        buses=spec.buses,
        ybus_lines=sorted([*spec.lines, *fixed_on]),
        u_lines=list(relaxed),
        offsets=spec.offsets,
        beta=beta,
        name=f"P4[{spec.block}]",
    )


def _block_connected(net, spec, on) -> bool:
    pos = {b: p for p, b in enumerate(spec.buses)}
    edges = [(pos[net.lines[k][0]], pos[net.lines[k][1]]) for k in [*spec.lines, *on]]
    return is_connected(len(spec.buses), edges)


def _leaf(net, spec, on, beta, opts, solver):
    if not _block_connected(net, spec, on):
        return math.inf
    sol = solve(build_p4(spec, net, fixed_on=on, beta=beta), opts, solver)
    return sol.objective if sol.optimal else math.inf


def solve_p4(
    spec: SubproblemSpec,
    net: ValidatedNetwork,
    beta: float = 0.0,
    opts: SolverOptions | None = None,
    solver=None,
    enum_threshold: int = ENUM_THRESHOLD,
    method: str | None = None,
) -> BlockResult:
    """Best binary switch assignment of one block."""
    method = method or ("enum" if len(spec.switchable) <= enum_threshold else "bnb")
    if method == "enum":
        return _enumerate(spec, net, beta, opts, solver)
    if method == "bnb":
        return _branch_and_bound(spec, net, beta, opts, solver)
    raise ValueError(f"unknown method {method!r}")


def _enumerate(spec, net, beta, opts, solver) -> BlockResult:
    best, best_alpha, count = math.inf, None, 0
    for bits in itertools.product((0, 1), repeat=len(spec.switchable)):
        on = [k for k, b in zip(spec.switchable, bits) if b]
        val = _leaf(net, spec, on, beta, opts, solver)
        count += 1
        if val < best:
            best, best_alpha = val, bits
    if best_alpha is None:
        return BlockResult(spec.block, {}, math.inf, "enum", count, feasible=False)
    return BlockResult(spec.block, dict(zip(spec.switchable, best_alpha)), best, "enum", count)


def _branch_and_bound(spec, net, beta, opts, solver) -> BlockResult:
    inc_val, inc_alpha = math.inf, None
    seen_leaves: dict[tuple, float] = {}
    counter = itertools.count()
    heap = [(-math.inf, next(counter), {})]
    nodes = 0

    def leaf(assign):
        key = tuple(assign[k] for k in spec.switchable)
        if key not in seen_leaves:
            seen_leaves[key] = _leaf(net, spec, [k for k in spec.switchable if assign[k]], beta, opts, solver)
        return seen_leaves[key]

    while heap:
        bound, _, fixed = heapq.heappop(heap)
        if bound >= inc_val - 1e-6 * max(1.0, abs(inc_val)):
            continue
        free = [k for k in spec.switchable if k not in fixed]
        nodes += 1
        if not free:
            val = leaf(fixed)
            if val < inc_val:
                inc_val, inc_alpha = val, dict(fixed)
            continue
        on = [k for k in spec.switchable if fixed.get(k) == 1]
        prog = build_p4(spec, net, fixed_on=on, relaxed=free, beta=beta)
        sol = solve(prog, opts, solver)
        if not sol.optimal:
            continue
        lb = sol.objective
        if lb >= inc_val - 1e-6 * max(1.0, abs(inc_val)):
            continue
        ahat = dict(zip(free, extract_alpha_hat(prog, sol, net)))
        rounded = {**fixed, **{k: int(a >= 0.5) for k, a in ahat.items()}}
        val = leaf(rounded)
        if val < inc_val:
            inc_val, inc_alpha = val, rounded
        if lb >= inc_val - 1e-6 * max(1.0, abs(inc_val)):
            continue
        frac = {k: abs(a - round(a)) for k, a in ahat.items()}
        k_branch = min(free, key=lambda k: (-frac[k], k))
        for v in (1, 0):
            heapq.heappush(heap, (lb, next(counter), {**fixed, k_branch: v}))
    if inc_alpha is None:
        return BlockResult(spec.block, {}, math.inf, "bnb", nodes, feasible=False)
    return BlockResult(spec.block, {k: inc_alpha[k] for k in spec.switchable}, inc_val, "bnb", nodes)


# --------------------------------------------------------------------------
# exhaustive reference


def brute_force_oracle(
    net: ValidatedNetwork, beta: float = 0.0, opts: SolverOptions | None = None, solver=None
) -> tuple[tuple[int, ...] | None, float, dict]:
    """Exact mixed-integer optimum by solving every switch configuration."""
    p = len(net.switchable)
    if p > ORACLE_GUARD:
        raise ValueError(f"oracle limited to {ORACLE_GUARD} switchable lines, got {p}")
    table = {}
    for bits in itertools.product((0, 1), repeat=p):
        try:
            prog = build_p1(net, bits, beta=beta)
        except TopologyError:
            table[bits] = math.inf
            continue
        sol = solve(prog, opts, solver)
        table[bits] = sol.objective if sol.optimal else math.inf
    best = min(table, key=lambda b: table[b])
    if not math.isfinite(table[best]):
        return None, math.inf, table
    return best, table[best], table


# --------------------------------------------------------------------------
# pipelines


def _lower_stage(net, beta, opts, solver, timer):
    with timer("relaxation"):
        prog = _stage("relaxation", build_p3, net, beta)
        sol = _stage("relaxation", solve, prog, opts, solver)
    if not sol.optimal:
        raise StageError("relaxation", RuntimeError(f"virtual-voltage relaxation ended {sol.status}"))
    return prog, sol


def _no_switch_result(net, method, beta, opts, solver, timer) -> OtsResult:
    with timer("final"):
        sol = _stage("final", solve, build_p1(net, (), beta), opts, solver)
    if not sol.optimal:
        bounds = OtsBounds(math.inf, math.inf, (), (), feasible=False, status_lower=sol.status, status_upper=sol.status)
        return OtsResult(method, (), bounds, timings_ms=timer.ms, status="infeasible")
    bounds = OtsBounds(sol.objective, sol.objective, (), (), feasible=True, optimal=True)
    return OtsResult(method, (), bounds, timings_ms=timer.ms, rank_w=numerical_rank(sol.blocks["W"]))


def _finish(net, method, alpha, lower, ahat, beta, opts, solver, timer, **kw) -> OtsResult:
    with timer("final"):
        bounds, sol = _stage("final", certify, net, alpha, lower, beta, ahat, opts, solver)
    status = "optimal" if bounds.feasible else "infeasible"
    res = OtsResult(method, tuple(alpha), bounds, tuple(ahat), timings_ms=timer.ms, status=status, **kw)
    if sol is not None and sol.optimal:
        res.extra["rank_w_upper"] = numerical_rank(sol.blocks["W"])
    return res


def run_vv(net: ValidatedNetwork, beta: float = 0.0, opts=None, solver=None, threshold: float = 0.5) -> OtsResult:
    """Relax, round ``alpha_hat`` and certify."""
    timer = _Timer()
    if not net.switchable:
        return _no_switch_result(net, "vv", beta, opts, solver, timer)
    prog, sol = _lower_stage(net, beta, opts, solver, timer)
    with timer("recovery"):
        ahat = _stage("recovery", extract_alpha_hat, prog, sol, net)
        diag = _stage("recovery", diagnostics, prog, sol, net)
    alpha = round_alpha(ahat, threshold)
    return _finish(
        net, "vv", alpha, sol.objective, ahat, beta, opts, solver, timer, diagnostics=diag, rank_w=diag.rank_w
    )


def run_mccormick(
    net: ValidatedNetwork, profile: str | tuple = "mccormick5", beta: float = 0.0, opts=None, solver=None
) -> OtsResult:
    """McCormick relaxation, rounding of the relaxed switches and certification."""
    bounds = MCCORMICK_PROFILES[profile] if isinstance(profile, str) else tuple(profile)
    name = profile if isinstance(profile, str) else "mccormick"
    timer = _Timer()
    if not net.switchable:
        return _no_switch_result(net, name, beta, opts, solver, timer)
    with timer("relaxation"):
        prog = _stage("relaxation", build_mccormick, net, bounds, beta)
        sol = _stage("relaxation", solve, prog, opts, solver)
    if not sol.optimal:
        b = OtsBounds(math.nan, math.inf, (), (), feasible=False, status_lower=sol.status, status_upper="skipped")
        return OtsResult(name, (), b, timings_ms=timer.ms, status="infeasible")
    ahat = np.clip([sol.scalars[f"alpha[{k}]"] for k in net.switchable], 0.0, 1.0)
    alpha = round_alpha(ahat)
    rank = numerical_rank(sol.blocks["W"])
    return _finish(net, name, alpha, sol.objective, ahat, beta, opts, solver, timer, rank_w=rank)


def run_ots(
    net: ValidatedNetwork,
    n_blocks: int = 1,
    beta: float = 0.0,
    opts: SolverOptions | None = None,
    solver=None,
    enum_threshold: int = ENUM_THRESHOLD,
    max_workers: int | None = None,
    block_method: str | None = None,
) -> OtsResult:
    """Partition-based switching: relaxation, partition, block solves, certification."""
    if n_blocks < 1:
        raise ValueError("n_blocks must be at least 1")
    timer = _Timer()
    if not net.switchable:
        return _no_switch_result(net, "partition", beta, opts, solver, timer)
    prog, sol = _lower_stage(net, beta, opts, solver, timer)
    w = sol.blocks["W"]
    with timer("recovery"):
        ahat = _stage("recovery", extract_alpha_hat, prog, sol, net)
        diag = _stage("recovery", diagnostics, prog, sol, net)
    fallback = dict(zip(net.switchable, round_alpha(ahat)))

    with timer("partition"):
        if n_blocks == 1:
            part = WeightedPartition([tuple(range(net.n_bus))], (), np.zeros((1, 1)))
        else:
            duals = _stage("partition", bus_bound_duals, prog, sol, net)
            part = _stage("partition", partition_network, net, duals, n_blocks)
        specs = make_subproblems(net, part, w)

    def work(spec):
        if not spec.switchable:
            return BlockResult(spec.block, {}, math.nan, "none", 0)
        return solve_p4(spec, net, beta, opts, solver, enum_threshold, block_method)

    with timer("blocks"):
        if max_workers == 1 or len(specs) == 1:
            results = [_stage("blocks", work, s) for s in specs]
        else:
            with ThreadPoolExecutor(max_workers=max_workers) as pool:
                futures = [pool.submit(work, s) for s in specs]
                results = [_stage("blocks", f.result) for f in futures]
    results.sort(key=lambda r: r.block)

    alpha = dict(fallback)
    for r in results:
        if r.feasible:
            alpha.update(r.alpha)
        else:
            log.warning("block %d infeasible; keeping rounded relaxation switches", r.block)
    final_alpha = tuple(alpha[k] for k in net.switchable)
    return _finish(
        net, "partition", final_alpha, sol.objective, ahat, beta, opts, solver, timer,
        partition=part, blocks=results, diagnostics=diag, rank_w=diag.rank_w,
    )


def run_security(
    net: ValidatedNetwork, cont: ContingencySet, beta: float = 0.0, opts=None, solver=None
) -> OtsResult:
    """Security-constrained relaxation, rounding and a security-constrained upper bound."""
    if not cont.outages:
        raise ValueError("empty contingency list; use the nominal solve")
    timer = _Timer()
    with timer("relaxation"):
        prog = _stage("relaxation", build_p3_security, net, cont, beta)
        sol = _stage("relaxation", solve, prog, opts, solver)
    if not sol.optimal:
        b = OtsBounds(math.nan, math.inf, (), (), feasible=False, status_lower=sol.status, status_upper="skipped")
        return OtsResult("security", (), b, timings_ms=timer.ms, status="infeasible")
    ahat = extract_alpha_hat(prog, sol, net)
    alpha = round_alpha(ahat)
    with timer("final"):
        try:
            up = build_p1_security(net, alpha, cont, beta)
            usol = solve(up, opts, solver)
        except TopologyError:
            usol = None
    ok = usol is not None and usol.optimal
    upper = usol.objective if ok else math.inf
    closed = ok and abs(upper - sol.objective) <= 1e-6 * max(1.0, abs(sol.objective))
    bounds = OtsBounds(sol.objective, upper, alpha, tuple(ahat), feasible=ok, optimal=closed)
    scen = []
    for t, name in enumerate(prog.meta["w_blocks"]):
        scen.append({"scenario": t, "outage": cont.scenarios[t], "rank_w": numerical_rank(sol.blocks[name])})
    return OtsResult(
        "security", alpha, bounds, tuple(ahat), timings_ms=timer.ms,
        rank_w=scen[0]["rank_w"], status="optimal" if ok else "infeasible",
        extra={"scenarios": scen, "n_psd_blocks": prog.block_count(net.n_bus), "n_u_blocks": len(prog.meta["u_blocks"])},
    )


def run_oracle(net: ValidatedNetwork, beta: float = 0.0, opts=None, solver=None) -> OtsResult:
    timer = _Timer()
    with timer("oracle"):
        alpha, p2, table = _stage("oracle", brute_force_oracle, net, beta, opts, solver)
    ok = alpha is not None
    bounds = OtsBounds(p2, p2, tuple(alpha or ()), (), feasible=ok, optimal=ok)
    return OtsResult(
        "oracle", tuple(alpha or ()), bounds, timings_ms=timer.ms, status="optimal" if ok else "infeasible",
        extra={"p2_opt": p2, "table": {"".join(map(str, k)): v for k, v in table.items()}},
    )
