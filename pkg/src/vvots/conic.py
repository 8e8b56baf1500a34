"""Conic programs over Hermitian PSD blocks, scalars and quadratic-cost cones."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Hashable, Iterable

import numpy as np

from .network import HermitianBlock, embed_hermitian, extract_complex

__all__ = [
    "Constraint",
    "QuadCone",
    "ConicProgram",
    "ConicSolution",
    "add_quadratic_cost",
    "evaluate_constraint",
    "embed_hermitian",
    "extract_complex",
]

EQ, LE = "==", "<="


@dataclass(frozen=True)
class Constraint:
    """``sum tr{A_m X_m} + sum c_j s_j  (== | <=)  rhs``."""

    blocks: dict[str, HermitianBlock]
    scalars: dict[str, float]
    sense: str
    rhs: float
    tag: Hashable = None


@dataclass(frozen=True)
class QuadCone:
    """``epi >= coef * var**2`` encoded as a 3-dimensional second-order cone."""

    epi: str
    var: str
    coef: float


class ProgramFrozenError(RuntimeError):
    pass


class ConicProgram:
    """Mutable builder that becomes immutable after :meth:`freeze`."""

    def __init__(self, name: str = "program"):
        self.name = name
        self.blocks: dict[str, int] = {}
        self.scalars: list[str] = []
        self.constraints: list[Constraint] = []
        self.cones: list[QuadCone] = []
        self.objective: dict[str, float] = {}
        self.objective_constant = 0.0
        self.meta: dict = {}
        self._frozen = False
        self._scalar_set: set[str] = set()
        self._tags: dict[Hashable, int] = {}

    # -- construction ---------------------------------------------------
    def _check_open(self):
        if self._frozen:
            raise ProgramFrozenError(f"program {self.name!r} is frozen")

    def add_block(self, name: str, n: int) -> str:
        self._check_open()
        if name in self.blocks:
            raise ValueError(f"duplicate block {name!r}")
        if n < 1:
            raise ValueError("block dimension must be positive")
        self.blocks[name] = int(n)
        return name

    def add_scalar(self, name: str) -> str:
        self._check_open()
        if name in self._scalar_set:
            raise ValueError(f"duplicate scalar {name!r}")
        self.scalars.append(name)
        self._scalar_set.add(name)
        return name

    def add_constraint(
        self,
        blocks: dict[str, HermitianBlock] | None = None,
        scalars: dict[str, float] | None = None,
        sense: str = EQ,
        rhs: float = 0.0,
        tag: Hashable = None,
    ) -> int:
        self._check_open()
        blocks = dict(blocks or {})
        scalars = {k: float(v) for k, v in (scalars or {}).items() if v != 0}
        if sense not in (EQ, LE):
            raise ValueError(f"unknown relation {sense!r}")
        for name, mat in blocks.items():
            if name not in self.blocks:
                raise KeyError(f"unknown block {name!r}")
            if mat.n != self.blocks[name]:
                raise ValueError(
                    f"coefficient of dimension {mat.n} for block {name!r} of dimension {self.blocks[name]}"
                )
        for s in scalars:
            if s not in self._scalar_set:
                raise KeyError(f"unknown scalar {s!r}")
        if tag is not None and tag in self._tags:
            raise ValueError(f"duplicate constraint tag {tag!r}")
        self.constraints.append(Constraint(blocks, scalars, sense, float(rhs), tag))
        idx = len(self.constraints) - 1
        if tag is not None:
            self._tags[tag] = idx
        return idx

    def add_cone(self, epi: str, var: str, coef: float) -> None:
        self._check_open()
        for s in (epi, var):
            if s not in self._scalar_set:
                raise KeyError(f"unknown scalar {s!r}")
        if coef <= 0:
            raise ValueError("cone coefficient must be positive")
        self.cones.append(QuadCone(epi, var, float(coef)))

    def add_objective(self, name: str, coef: float) -> None:
        self._check_open()
        if name not in self._scalar_set:
            raise KeyError(f"unknown scalar {name!r}")
        self.objective[name] = self.objective.get(name, 0.0) + float(coef)

    def freeze(self) -> "ConicProgram":
        self._frozen = True
        return self

    @property
    def frozen(self) -> bool:
        return self._frozen

    # -- queries --------------------------------------------------------
    def index_of(self, tag: Hashable) -> int:
        try:
            return self._tags[tag]
        except KeyError:
            raise KeyError(f"no constraint tagged {tag!r}") from None

    def has_tag(self, tag: Hashable) -> bool:
        return tag in self._tags

    @property
    def tags(self) -> list:
        return list(self._tags)

    def block_count(self, dim: int | None = None) -> int:
        return sum(1 for n in self.blocks.values() if dim is None or n == dim)

    def structure(self) -> tuple:
        """Hashable summary used for structural comparisons."""
        cons = []
        for c in self.constraints:
            blk = tuple(
                (name, tuple(sorted((k, complex(v)) for k, v in m.entries.items() if v != 0)))
                for name, m in sorted(c.blocks.items())
            )
            cons.append((blk, tuple(sorted(c.scalars.items())), c.sense, c.rhs, c.tag))
        return (
            tuple(self.blocks.items()),
            tuple(self.scalars),
            tuple(cons),
            tuple((q.epi, q.var, q.coef) for q in self.cones),
            tuple(sorted(self.objective.items())),
            self.objective_constant,
        )

    # -- debug format ---------------------------------------------------
    def dump(self) -> str:
        out = [f"program\t{json.dumps(self.name)}"]
        for name, n in self.blocks.items():
            out.append(f"block\t{json.dumps([name, n])}")
        for s in self.scalars:
            out.append(f"scalar\t{json.dumps(s)}")
        for q in self.cones:
            out.append(f"cone\t{json.dumps([q.epi, q.var, q.coef])}")
        obj = sorted(self.objective.items())
        out.append(f"objective\t{json.dumps([obj, self.objective_constant])}")
        for c in self.constraints:
            blocks = {
                name: [[i, k, v.real, v.imag] for (i, k), v in sorted(m.entries.items())]
                for name, m in c.blocks.items()
            }
            out.append(
                "constraint\t"
                + json.dumps([_tag_to_json(c.tag), blocks, c.scalars, c.sense, c.rhs])
            )
        return "\n".join(out) + "\n"

    @classmethod
    def parse_dump(cls, text: str) -> "ConicProgram":
        prog = None
        for line in text.splitlines():
            if not line.strip():
                continue
            kind, payload = line.split("\t", 1)
            data = json.loads(payload)
            if kind == "program":
                prog = cls(data)
            elif kind == "block":
                prog.add_block(data[0], data[1])
            elif kind == "scalar":
                prog.add_scalar(data)
            elif kind == "cone":
                prog.add_cone(*data)
            elif kind == "objective":
                for name, coef in data[0]:
                    prog.add_objective(name, coef)
                prog.objective_constant = data[1]
            elif kind == "constraint":
                tag, blocks, scalars, sense, rhs = data
                mats = {
                    name: HermitianBlock(
                        prog.blocks[name], {(i, k): complex(re, im) for i, k, re, im in ents}
                    )
                    for name, ents in blocks.items()
                }
                prog.add_constraint(mats, scalars, sense, rhs, _tag_from_json(tag))
            else:
                raise ValueError(f"unknown record {kind!r}")
        return prog

    def __repr__(self) -> str:
        return (
            f"ConicProgram({self.name!r}, blocks={len(self.blocks)}, scalars={len(self.scalars)}, "
            f"constraints={len(self.constraints)}, cones={len(self.cones)})"
        )


def _tag_to_json(tag):
    if isinstance(tag, tuple):
        return {"t": [_tag_to_json(t) for t in tag]}
    return tag


def _tag_from_json(tag):
    if isinstance(tag, dict):
        return tuple(_tag_from_json(t) for t in tag["t"])
    return tag


@dataclass
class ConicSolution:
    status: str
    objective: float
    blocks: dict[str, np.ndarray] = field(default_factory=dict)
    scalars: dict[str, float] = field(default_factory=dict)
    duals: np.ndarray = field(default_factory=lambda: np.zeros(0))
    residuals: dict[str, float] = field(default_factory=dict)
    dual_objective: float = float("nan")
    iterations: int = 0
    solver: str = ""

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"

    def dual(self, prog: ConicProgram, tag: Hashable) -> float:
        return float(self.duals[prog.index_of(tag)])


def constraint_lhs(c: Constraint, sol: ConicSolution) -> float:
    total = sum(m.trace_with(sol.blocks[name]) for name, m in c.blocks.items())
    total += sum(coef * sol.scalars[s] for s, coef in c.scalars.items())
    return float(total)


def evaluate_constraint(prog: ConicProgram, sol: ConicSolution, index: int) -> float:
    """Residual of one constraint: ``lhs - rhs`` for ``<=``, ``|lhs - rhs|`` for ``==``."""
    if not 0 <= index < len(prog.constraints):
        raise IndexError(f"constraint index {index} out of range")
    c = prog.constraints[index]
    r = constraint_lhs(c, sol) - c.rhs
    return abs(r) if c.sense == EQ else r


def add_quadratic_cost(prog: ConicProgram, var: str, c2: float, c1: float, epi: str | None = None):
    """Add ``c2 * var**2 + c1 * var`` to the objective; returns the epigraph scalar or ``None``."""
    if c2 < 0:
        raise ValueError("c2 < 0 gives a nonconvex cost")
    if c1:
        prog.add_objective(var, c1)
    if c2 == 0:
        return None
    epi = epi or f"t[{var}]"
    prog.add_scalar(epi)
    prog.add_cone(epi, var, c2)
    prog.add_objective(epi, 1.0)
    return epi


def objective_value(prog: ConicProgram, scalars: dict[str, float]) -> float:
    return prog.objective_constant + sum(c * scalars[s] for s, c in prog.objective.items())


def psd_project_check(blocks: Iterable[np.ndarray]) -> float:
    """Smallest eigenvalue over the given Hermitian blocks."""
    return min(float(np.linalg.eigvalsh(b)[0]) for b in blocks)
