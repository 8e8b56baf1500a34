"""Power-network case data: parsing, validation and switchable-line selection.

All quantities inside a :class:`PowerCase` are per-unit on ``base_mva``.
Cost coefficients are expressed per p.u. of active power so that the
objective value does not depend on the MVA base.
"""

from __future__ import annotations

import json
import re
from collections import deque
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import jsonschema
import numpy as np

DEFAULT_VDIFF_MAX = 0.1


class CaseError(ValueError):
    """Raised for malformed or inconsistent case data."""


class UnsupportedFeatureError(CaseError):
    """Raised for network elements the switching model cannot represent."""


class DisconnectedNetworkError(CaseError):
    def __init__(self, components):
        self.components = [sorted(c) for c in components]
        super().__init__(f"network is disconnected; components: {self.components}")


@dataclass(frozen=True)
class Bus:
    id: int
    p_demand: float = 0.0
    q_demand: float = 0.0
    v_min: float = 0.9
    v_max: float = 1.1


@dataclass(frozen=True)
class Generator:
    bus: int
    p_min: float
    p_max: float
    q_min: float
    q_max: float
    c2: float = 0.0
    c1: float = 0.0


@dataclass(frozen=True)
class Line:
    from_bus: int
    to_bus: int
    resistance: float
    reactance: float
    vdiff_max: float = DEFAULT_VDIFF_MAX
    switchable: bool = False

    @property
    def admittance(self) -> complex:
        return 1.0 / complex(self.resistance, self.reactance)


@dataclass(frozen=True)
class PowerCase:
    base_mva: float
    buses: tuple[Bus, ...]
    generators: tuple[Generator, ...]
    lines: tuple[Line, ...]
    name: str = "case"

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "generators", tuple(self.generators))
        object.__setattr__(self, "lines", tuple(self.lines))
        _check_case(self)


def _check_case(case: PowerCase) -> None:
    ids = [b.id for b in case.buses]
    if len(set(ids)) != len(ids):
        raise CaseError("bus ids are not unique")
    known = set(ids)
    for b in case.buses:
        if b.v_min > b.v_max:
            raise CaseError(f"bus {b.id}: v_min > v_max")
        if b.v_min < 0:
            raise CaseError(f"bus {b.id}: negative v_min")
    for g, gen in enumerate(case.generators):
        if gen.bus not in known:
            raise CaseError(f"generator {g} references unknown bus {gen.bus}")
        if gen.p_min > gen.p_max:
            raise CaseError(f"generator {g}: p_min > p_max")
        if gen.q_min > gen.q_max:
            raise CaseError(f"generator {g}: q_min > q_max")
        if gen.c2 < 0:
            raise CaseError(f"generator {g}: c2 < 0 makes the cost nonconvex")
    for k, ln in enumerate(case.lines):
        if ln.from_bus not in known or ln.to_bus not in known:
            raise CaseError(f"line {k} references an unknown bus")
        if ln.from_bus == ln.to_bus:
            raise CaseError(f"line {k} is a self-loop at bus {ln.from_bus}")
        if ln.resistance < 0:
            raise CaseError(f"line {k}: negative resistance")
        if ln.reactance == 0:
            raise CaseError(f"line {k}: zero reactance")
        if ln.vdiff_max <= 0:
            raise CaseError(f"line {k}: vdiff_max must be positive")


# --------------------------------------------------------------------------
# MATPOWER import

_TABLE_RE = re.compile(r"mpc\.(bus|gen|branch|gencost)\s*=\s*\[(.*?)\]\s*;?", re.S)
_SCALAR_RE = re.compile(r"mpc\.baseMVA\s*=\s*([-+0-9.eE]+)")


def _strip_comments(text: str) -> str:
    # keep line structure so that reported line numbers stay meaningful
    return "\n".join(line.split("%", 1)[0] for line in text.splitlines())


def _parse_table(body: str, first_line: int, name: str) -> list[tuple[int, list[float]]]:
    rows = []
    lineno = first_line
    pending: list[str] = []
    pending_line = lineno
    for raw in body.split("\n"):
        for chunk_idx, chunk in enumerate(raw.split(";")):
            if chunk_idx > 0 and pending:
                rows.append((pending_line, pending))
                pending = []
            tokens = chunk.replace(",", " ").split()
            if tokens and not pending:
                pending_line = lineno
            pending.extend(tokens)
        lineno += 1
    if pending:
        rows.append((pending_line, pending))
    out = []
    width = None
    for ln, tokens in rows:
        try:
            vals = [float(t) for t in tokens]
        except ValueError as exc:
            raise CaseError(f"line {ln}: malformed number in mpc.{name}: {exc}") from None
        if width is None:
            width = len(vals)
        elif len(vals) != width:
            raise CaseError(f"line {ln}: mpc.{name} row has {len(vals)} columns, expected {width}")
        out.append((ln, vals))
    return out


def parse_matpower(
    text: str, *, default_vdiff_max: float = DEFAULT_VDIFF_MAX, name: str = "case"
) -> PowerCase:
    """Parse the table section of a MATPOWER case file.

    Only polynomial costs of degree at most two are accepted. Off-nominal
    taps, phase shifters, line charging and bus shunts raise
    :class:`UnsupportedFeatureError`.
    """
    clean = _strip_comments(text)
    m = _SCALAR_RE.search(clean)
    if m is None:
        raise CaseError("mpc.baseMVA not found")
    base = float(m.group(1))
    if base <= 0:
        raise CaseError("mpc.baseMVA must be positive")

    tables = {}
    for tm in _TABLE_RE.finditer(clean):
        first_line = clean.count("\n", 0, tm.start(2)) + 1
        tables[tm.group(1)] = _parse_table(tm.group(2), first_line, tm.group(1))
    for key in ("bus", "gen", "branch", "gencost"):
        if key not in tables:
            raise CaseError(f"mpc.{key} table not found")

    buses = []
    for ln, row in tables["bus"]:
        if len(row) < 13:
            raise CaseError(f"line {ln}: mpc.bus rows need 13 columns")
        bus_id, btype, pd, qd, gs, bs = int(row[0]), int(row[1]), *row[2:6]
        if btype == 4:
            raise UnsupportedFeatureError(f"bus {bus_id}: isolated bus type 4 is not supported")
        if gs != 0 or bs != 0:
            raise UnsupportedFeatureError(f"bus {bus_id}: shunt elements are not supported")
        buses.append(Bus(bus_id, pd / base, qd / base, v_min=row[12], v_max=row[11]))

    gen_rows = tables["gen"]
    cost_rows = tables["gencost"]
    if len(cost_rows) < len(gen_rows):
        raise CaseError("mpc.gencost has fewer rows than mpc.gen")
    generators = []
    for (ln, g), (cln, c) in zip(gen_rows, cost_rows):
        if len(g) < 10:
            raise CaseError(f"line {ln}: mpc.gen rows need at least 10 columns")
        if g[7] <= 0:
            continue
        if int(c[0]) != 2:
            raise UnsupportedFeatureError(f"line {cln}: only polynomial (model 2) costs are supported")
        n = int(c[3])
        coeffs = c[4 : 4 + n]
        if n > 3 or len(coeffs) != n:
            raise UnsupportedFeatureError(f"line {cln}: cost polynomial degree must be at most 2")
        padded = [0.0] * (3 - n) + list(coeffs)
        c2, c1 = padded[0] * base**2, padded[1] * base
        generators.append(
            Generator(int(g[0]), g[9] / base, g[8] / base, g[4] / base, g[3] / base, c2, c1)
        )

    lines = []
    for ln, br in tables["branch"]:
        if len(br) < 11:
            raise CaseError(f"line {ln}: mpc.branch rows need at least 11 columns")
        f, t = int(br[0]), int(br[1])
        label = f"branch {f}-{t} (line {ln})"
        if br[10] == 0:
            raise CaseError(f"{label}: out-of-service branches (status 0) are rejected")
        if br[4] != 0:
            raise UnsupportedFeatureError(f"{label}: line charging susceptance is not supported")
        if br[8] not in (0, 1):
            raise UnsupportedFeatureError(f"{label}: off-nominal tap ratio is not supported")
        if br[9] != 0:
            raise UnsupportedFeatureError(f"{label}: phase shifters are not supported")
        lines.append(Line(f, t, br[2], br[3], vdiff_max=default_vdiff_max))

    return PowerCase(base, buses, generators, lines, name=name)


# --------------------------------------------------------------------------
# native JSON format

_NUM = {"type": "number"}
NATIVE_SCHEMA = {
    "type": "object",
    "required": ["base_mva", "buses", "generators", "lines"],
    "properties": {
        "name": {"type": "string"},
        "base_mva": {"type": "number", "exclusiveMinimum": 0},
        "buses": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["id"],
                "additionalProperties": False,
                "properties": {
                    "id": {"type": "integer"},
                    "p_demand": _NUM,
                    "q_demand": _NUM,
                    "v_min": _NUM,
                    "v_max": _NUM,
                },
            },
        },
        "generators": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["bus", "p_min", "p_max", "q_min", "q_max"],
                "additionalProperties": False,
                "properties": {
                    "bus": {"type": "integer"},
                    "p_min": _NUM,
                    "p_max": _NUM,
                    "q_min": _NUM,
                    "q_max": _NUM,
                    "c2": {"type": "number", "minimum": 0},
                    "c1": _NUM,
                },
            },
        },
        "lines": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["from", "to", "resistance", "reactance"],
                "additionalProperties": False,
                "properties": {
                    "from": {"type": "integer"},
                    "to": {"type": "integer"},
                    "resistance": {"type": "number", "minimum": 0},
                    "reactance": _NUM,
                    "vdiff_max": {"type": "number", "exclusiveMinimum": 0},
                    "switchable": {"type": "boolean"},
                },
            },
        },
    },
}


def parse_native(
    text: str | dict, *, default_vdiff_max: float = DEFAULT_VDIFF_MAX
) -> PowerCase:
    doc = json.loads(text) if isinstance(text, str) else text
    validator = jsonschema.Draft202012Validator(NATIVE_SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        path = "/".join(str(p) for p in err.absolute_path) or "<root>"
        raise CaseError(f"{path}: {err.message}")
    buses = [Bus(**b) for b in doc["buses"]]
    gens = [Generator(**g) for g in doc["generators"]]
    lines = []
    for ln in doc["lines"]:
        ln = dict(ln)
        lines.append(
            Line(
                ln.pop("from"),
                ln.pop("to"),
                ln.pop("resistance"),
                ln.pop("reactance"),
                vdiff_max=ln.pop("vdiff_max", default_vdiff_max),
                switchable=ln.pop("switchable", False),
            )
        )
    return PowerCase(doc["base_mva"], buses, gens, lines, name=doc.get("name", "case"))


def to_native(case: PowerCase) -> dict:
    lines = []
    for ln in case.lines:
        d = asdict(ln)
        d["from"] = d.pop("from_bus")
        d["to"] = d.pop("to_bus")
        lines.append(d)
    return {
        "name": case.name,
        "base_mva": case.base_mva,
        "buses": [asdict(b) for b in case.buses],
        "generators": [asdict(g) for g in case.generators],
        "lines": lines,
    }


def serialize_native(case: PowerCase) -> str:
    return json.dumps(to_native(case), indent=2)


def load_case(path: str | Path, fmt: str | None = None, **kwargs) -> PowerCase:
    """Read a case from disk; ``fmt`` is inferred from the suffix when omitted.

    The bundled cases can be loaded by name, e.g. ``load_case("case30")``.
    """
    path = Path(path)
    if not path.exists():
        bundled = resources.files("vvots") / "data" / f"{path.stem}.m"
        if bundled.is_file():
            return parse_matpower(bundled.read_text(), name=path.stem, **kwargs)
        raise FileNotFoundError(path)
    if fmt is None:
        fmt = "matpower" if path.suffix == ".m" else "native"
    text = path.read_text()
    if fmt == "matpower":
        return parse_matpower(text, name=path.stem, **kwargs)
    if fmt == "native":
        return parse_native(text, **kwargs)
    raise ValueError(f"unknown case format {fmt!r}")


# --------------------------------------------------------------------------
# validated network


@dataclass(frozen=True)
class ValidatedNetwork:
    """Case with canonical 0-based bus indexing and oriented lines.

    ``lines`` holds ``(i, k)`` bus indices oriented from the smaller to the
    larger bus id, in the same order as ``case.lines``; switchable lines are listed in ``switchable`` (indices
    into ``lines``) and all others in ``fixed``.
    """

    case: PowerCase
    bus_index: dict
    lines: tuple[tuple[int, int], ...]
    admittance: np.ndarray
    fixed: tuple[int, ...]
    switchable: tuple[int, ...]
    gen_bus: tuple[int, ...] = field(default=())

    @property
    def n_bus(self) -> int:
        return len(self.case.buses)

    @property
    def n_gen(self) -> int:
        return len(self.case.generators)

    def line_of(self, k: int):
        return self.case.lines[k]

    def vdiff_max(self, k: int) -> float:
        return self.case.lines[k].vdiff_max

    def gens_at(self, bus: int) -> list[int]:
        return [g for g, b in enumerate(self.gen_bus) if b == bus]


def _components(n: int, edges: Iterable[tuple[int, int]]) -> list[set[int]]:
    adj = [[] for _ in range(n)]
    for i, k in edges:
        adj[i].append(k)
        adj[k].append(i)
    seen = [False] * n
    comps = []
    for s in range(n):
        if seen[s]:
            continue
        seen[s] = True
        comp, queue = {s}, deque([s])
        while queue:
            u = queue.popleft()
            for v in adj[u]:
                if not seen[v]:
                    seen[v] = True
                    comp.add(v)
                    queue.append(v)
        comps.append(comp)
    return comps


def is_connected(n: int, edges: Iterable[tuple[int, int]]) -> bool:
    return n <= 1 or len(_components(n, edges)) == 1


def validate(case: PowerCase) -> ValidatedNetwork:
    bus_index = {b.id: i for i, b in enumerate(case.buses)}
    lines, seen = [], set()
    for ln in case.lines:
        lo, hi = sorted((ln.from_bus, ln.to_bus))
        key = (bus_index[lo], bus_index[hi])
        if key in seen:
            raise CaseError(f"duplicate line between buses {ln.from_bus} and {ln.to_bus}")
        seen.add(key)
        lines.append(key)
    comps = _components(len(case.buses), lines)
    if len(comps) > 1:
        ids = [b.id for b in case.buses]
        raise DisconnectedNetworkError([{ids[i] for i in c} for c in comps])
    y = np.array([ln.admittance for ln in case.lines], dtype=complex)
    sw = tuple(k for k, ln in enumerate(case.lines) if ln.switchable)
    fixed = tuple(k for k, ln in enumerate(case.lines) if not ln.switchable)
    gen_bus = tuple(bus_index[g.bus] for g in case.generators)
    return ValidatedNetwork(case, bus_index, tuple(lines), y, fixed, sw, gen_bus)


def with_switchable(net: ValidatedNetwork, switchable: Sequence[int]) -> ValidatedNetwork:
    """Copy of ``net`` whose switchable set is exactly ``switchable``."""
    chosen = set(switchable)
    new_lines = [replace(ln, switchable=(k in chosen)) for k, ln in enumerate(net.case.lines)]
    return validate(replace(net.case, lines=tuple(new_lines)))


def select_switchable(net: ValidatedNetwork, p: int) -> ValidatedNetwork:
    """Mark the ``p`` lines of smallest admittance modulus as switchable.

    Lines are ranked by ``|y|`` ascending with ties broken by the
    ``(from, to)`` bus ids. A candidate whose removal would disconnect the
    remaining fixed lines is skipped.
    """
    n_lines = len(net.lines)
    if p < 1:
        raise ValueError("p must be a positive integer")
    if p > n_lines:
        raise ValueError(f"p={p} exceeds the number of lines ({n_lines})")
    ids = [b.id for b in net.case.buses]

    def key(k):
        i, j = net.lines[k]
        return (abs(net.admittance[k]), ids[i], ids[j])

    order = sorted(range(n_lines), key=key)
    fixed = set(range(n_lines))
    chosen = []
    for k in order:
        if len(chosen) == p:
            break
        trial = fixed - {k}
        if is_connected(net.n_bus, [net.lines[j] for j in trial]):
            fixed = trial
            chosen.append(k)
    if len(chosen) < p:
        raise ValueError(
            f"only {len(chosen)} lines can be switchable without disconnecting the fixed network"
        )
    return with_switchable(net, chosen)
