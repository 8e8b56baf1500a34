"""``ots`` command-line entry point.

Exit codes: 0 when every requested solve reached optimality, 2 when a
bound is infeasible, 1 on any error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

from .case_io import CaseError, load_case, select_switchable, validate
from .engine import StageError, run_mccormick, run_oracle, run_ots, run_security, run_vv
from .relaxations import ContingencySet
from .solver import SolverOptions

log = logging.getLogger("vvots")

METHODS = ("vv", "mccormick5", "mccormick1", "partition", "oracle", "security")
REPORT_FIELDS = (
    "case", "method", "lower", "upper", "gap_rel", "alpha_hat", "alpha",
    "rank_W", "min_condition_U", "per_stage_ms", "status",
)


@dataclass
class RunConfig:
    command: str
    case: str
    fmt: str | None = None
    switchable: int | None = None
    blocks: int = 1
    method: str = "vv"
    contingencies: list[str] = field(default_factory=list)
    beta: float = 0.0
    tol: float = 1e-7
    out: str | None = None
    csv: str | None = None
    seed: int = 0

    def validate(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.blocks < 1:
            raise ValueError("--blocks must be at least 1")
        if self.switchable is not None and self.switchable < 1:
            raise ValueError("--switchable must be at least 1")
        if self.beta < 0:
            raise ValueError("--beta must be nonnegative")
        if self.tol <= 0:
            raise ValueError("--tol must be positive")
        if self.command == "security" or self.method == "security":
            if not self.contingencies:
                raise ValueError("security mode needs at least one --contingency; use 'solve' for the nominal case")

    @property
    def options(self) -> SolverOptions:
        return SolverOptions(tol_gap=self.tol, tol_primal=self.tol, tol_dual=self.tol)


def _finite(x):
    if x is None:
        return None
    x = float(x)
    return x if math.isfinite(x) else None


def _clean(obj):
    if isinstance(obj, float):
        return _finite(obj)
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if hasattr(obj, "item"):
        return _clean(obj.item())
    return obj


def _line_label(net, k):
    ln = net.case.lines[k]
    return f"{ln.from_bus}-{ln.to_bus}"


def report(net, res, case_name: str) -> dict:
    d = res.diagnostics
    rep = {
        "case": case_name,
        "method": res.method,
        "lower": res.bounds.lower,
        "upper": res.bounds.upper,
        "gap_rel": res.bounds.gap_rel,
        "alpha_hat": list(res.alpha_hat),
        "alpha": list(res.alpha),
        "rank_W": res.rank_w,
        "min_condition_U": d.min_condition_u if d is not None and d.lines else None,
        "per_stage_ms": dict(res.timings_ms),
        "status": res.status,
        "switchable_lines": [_line_label(net, k) for k in net.switchable],
        "provably_optimal": res.bounds.optimal,
    }
    if d is not None:
        rep["lines"] = [
            {
                "line": _line_label(net, x.line),
                "alpha_hat": x.alpha_hat,
                "condition": x.condition,
                "cond_bound": x.cond_bound,
                "p_ik": x.p_ik, "q_ik": x.q_ik, "p_ki": x.p_ki, "q_ki": x.q_ki,
            }
            for x in d.lines
        ]
    if res.partition is not None:
        rep["partition"] = res.partition.as_dict()
        rep["blocks"] = [b.as_dict() for b in res.blocks]
    rep.update(res.extra)
    return _clean(rep)


def _parse_contingencies(net, items) -> ContingencySet:
    ids = {b.id: i for i, b in enumerate(net.case.buses)}
    out = []
    for item in items:
        kind, _, what = item.partition(":")
        if kind == "line":
            a, _, b = what.partition("-")
            key = tuple(sorted((ids[int(a)], ids[int(b)])))
            matches = [k for k, ln in enumerate(net.lines) if ln == key]
            if not matches:
                raise ValueError(f"no line between buses {a} and {b}")
            out.append(("line", matches[0]))
        elif kind == "gen":
            out.append(("gen", int(what)))
        else:
            raise ValueError(f"contingency {item!r} must look like line:FROM-TO or gen:INDEX")
    return ContingencySet(tuple(out))


def _load(cfg: RunConfig):
    case = load_case(cfg.case, cfg.fmt)
    net = validate(case)
    if cfg.switchable:
        net = select_switchable(net, cfg.switchable)
    return net, case.name


def _run_method(net, cfg: RunConfig, method: str):
    opts = cfg.options
    if method == "vv":
        return run_vv(net, cfg.beta, opts)
    if method in ("mccormick5", "mccormick1"):
        return run_mccormick(net, method, cfg.beta, opts)
    if method == "partition":
        return run_ots(net, cfg.blocks, cfg.beta, opts)
    if method == "oracle":
        return run_oracle(net, cfg.beta, opts)
    if method == "security":
        return run_security(net, _parse_contingencies(net, cfg.contingencies), cfg.beta, opts)
    raise ValueError(method)


def _write(doc, cfg: RunConfig, rows=None):
    text = json.dumps(doc, indent=2)
    if cfg.out:
        Path(cfg.out).write_text(text + "\n")
    else:
        print(text)
    if cfg.csv and rows:
        with open(cfg.csv, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["method", "lower", "upper", "gap_rel", "rank_W", "status"])
            w.writeheader()
            for r in rows:
                w.writerow({k: r.get(k) for k in w.fieldnames})


def _code(statuses) -> int:
    return 0 if all(s == "optimal" for s in statuses) else 2


def cmd_solve(cfg: RunConfig) -> int:
    net, name = _load(cfg)
    res = _run_method(net, cfg, cfg.method)
    rep = report(net, res, name)
    _write(rep, cfg, [rep])
    return _code([res.status])


def cmd_compare(cfg: RunConfig) -> int:
    net, name = _load(cfg)
    rows = []
    for method in ("vv", "mccormick5", "mccormick1"):
        rows.append(report(net, _run_method(net, cfg, method), name))
    vv, mc5, mc1 = rows

    def le(a, b):
        if a is None:
            return False
        return b is None or a <= b + 1e-6 * max(1.0, abs(b))

    flags = {
        "vv_upper_le_mccormick5": le(vv["upper"], mc5["upper"]),
        "vv_upper_le_mccormick1": le(vv["upper"], mc1["upper"]),
        "vv_lower_ge_mccormick5": mc5["lower"] is None or le(mc5["lower"], vv["lower"]),
        "vv_lower_ge_mccormick1": mc1["lower"] is None or le(mc1["lower"], vv["lower"]),
    }
    doc = {"case": name, "rows": rows, "flags": flags}
    _write(doc, cfg, rows)
    return _code([vv["status"]])


def cmd_partition(cfg: RunConfig) -> int:
    cfg.method = "partition"
    return cmd_solve(cfg)


def cmd_oracle(cfg: RunConfig) -> int:
    cfg.method = "oracle"
    return cmd_solve(cfg)


def cmd_security(cfg: RunConfig) -> int:
    cfg.method = "security"
    cfg.validate()
    return cmd_solve(cfg)


COMMANDS = {
    "solve": cmd_solve,
    "compare": cmd_compare,
    "partition": cmd_partition,
    "oracle": cmd_oracle,
    "security": cmd_security,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ots", description="Optimal transmission switching via convex relaxations.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--case", required=True, help="case file, or a bundled case name such as case30")
        p.add_argument("--format", dest="fmt", choices=("matpower", "native"), default=None)
        p.add_argument("--switchable", type=int, default=None, help="mark the p lowest-admittance lines switchable")
        p.add_argument("--blocks", type=int, default=1 if name != "partition" else 2)
        p.add_argument("--method", choices=METHODS, default="vv")
        p.add_argument("--contingency", dest="contingencies", action="append", default=[],
                       help="line:FROM-TO or gen:INDEX (repeatable)")
        p.add_argument("--beta", type=float, default=0.0, help="loss penalty")
        p.add_argument("--tol", type=float, default=1e-7)
        p.add_argument("--out", default=None)
        p.add_argument("--csv", default=None)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    cfg = RunConfig(
        command=args.command, case=args.case, fmt=args.fmt, switchable=args.switchable, blocks=args.blocks,
        method=args.method, contingencies=args.contingencies, beta=args.beta, tol=args.tol,
        out=args.out, csv=args.csv, seed=args.seed,
    )
    try:
        cfg.validate()
        return COMMANDS[args.command](cfg)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (CaseError, ValueError, FileNotFoundError, KeyError) as exc:
        stage = "input" if isinstance(exc, (CaseError, FileNotFoundError)) else "config"
        print(f"error: [{stage}] {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
