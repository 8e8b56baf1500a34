"""Complex matrix data of the power-flow model.

Every matrix that enters a trace constraint is a :class:`HermitianBlock`,
stored sparsely as its upper triangle. Line matrices follow the physical
sign convention ``Q_ik = -Im(y)|V_i|^2 + Im(y conj(V_i) V_k)``, which is the
convention under which the injection matrices and the per-line matrices
agree (``sum_k Q_ik = Q_i``).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np

M_HAT = np.array([[1.0, -1.0], [-1.0, 1.0]], dtype=complex)


class HermitianBlock:
    """Sparse Hermitian matrix of size ``n``.

    Only entries with ``i <= k`` are stored; ``H[k, i] = conj(H[i, k])``
    holds by construction. Diagonal entries are forced real.
    """

    def __init__(self, n: int, entries: Mapping[tuple[int, int], complex] | None = None):
        self.n = int(n)
        self.entries: dict[tuple[int, int], complex] = {}
        for (i, k), v in (entries or {}).items():
            self._add(i, k, v)

    def _add(self, i: int, k: int, v: complex) -> None:
        if not (0 <= i < self.n and 0 <= k < self.n):
            raise IndexError(f"entry ({i}, {k}) outside a {self.n}x{self.n} block")
        if i > k:
            i, k, v = k, i, np.conj(v)
        if i == k:
            v = complex(np.real(v))
        self.entries[(i, k)] = self.entries.get((i, k), 0.0) + complex(v)

    @classmethod
    def from_dense(cls, a: np.ndarray, atol: float = 0.0) -> "HermitianBlock":
        a = np.asarray(a, dtype=complex)
        if a.shape[0] != a.shape[1]:
            raise ValueError("matrix must be square")
        if not np.allclose(a, a.conj().T, atol=max(atol, 1e-12), rtol=0):
            raise ValueError("matrix is not Hermitian")
        n = a.shape[0]
        iu, ku = np.triu_indices(n)
        vals = a[iu, ku]
        keep = np.abs(vals) > atol
        return cls(n, {(int(i), int(k)): v for i, k, v in zip(iu[keep], ku[keep], vals[keep])})

    def to_dense(self) -> np.ndarray:
        a = np.zeros((self.n, self.n), dtype=complex)
        for (i, k), v in self.entries.items():
            a[i, k] = v
            if i != k:
                a[k, i] = np.conj(v)
        return a

    @cached_property
    def embedding(self) -> np.ndarray:
        return embed_hermitian(self.to_dense())

    def trace_with(self, x: np.ndarray) -> float:
        """Return ``tr{H X}`` for a dense Hermitian ``X``."""
        total = 0.0
        for (i, k), v in self.entries.items():
            if i == k:
                total += v.real * x[i, i].real
            else:
                total += 2.0 * (v * x[k, i]).real
        return total

    def quad(self, v: np.ndarray) -> float:
        """Return ``tr{H v v*}``."""
        return float(np.real(np.vdot(v, self.to_dense() @ v)))

    def restrict(self, idx: Sequence[int]) -> "HermitianBlock":
        """Principal submatrix on ``idx`` (in the given order)."""
        pos = {g: p for p, g in enumerate(idx)}
        out = HermitianBlock(len(idx))
        for (i, k), v in self.entries.items():
            if i in pos and k in pos:
                out._add(pos[i], pos[k], v)
        return out

    def lift(self, idx: Sequence[int], n: int) -> "HermitianBlock":
        """Place this block on rows/cols ``idx`` of an ``n``-dimensional zero matrix."""
        out = HermitianBlock(n)
        for (i, k), v in self.entries.items():
            out._add(idx[i], idx[k], v)
        return out

    def scaled(self, c: float) -> "HermitianBlock":
        return HermitianBlock(self.n, {key: c * v for key, v in self.entries.items()})

    def __add__(self, other: "HermitianBlock") -> "HermitianBlock":
        if other.n != self.n:
            raise ValueError("dimension mismatch")
        out = HermitianBlock(self.n, self.entries)
        for (i, k), v in other.entries.items():
            out._add(i, k, v)
        return out

    def __eq__(self, other) -> bool:
        if not isinstance(other, HermitianBlock) or other.n != self.n:
            return NotImplemented
        return np.array_equal(self.to_dense(), other.to_dense())

    def __repr__(self) -> str:
        return f"HermitianBlock(n={self.n}, nnz={len(self.entries)})"


def embed_hermitian(h: np.ndarray | HermitianBlock) -> np.ndarray:
    """Real symmetric embedding ``[[Re H, -Im H], [Im H, Re H]]``."""
    if isinstance(h, HermitianBlock):
        h = h.to_dense()
    h = np.asarray(h, dtype=complex)
    return np.block([[h.real, -h.imag], [h.imag, h.real]])


def extract_complex(r: np.ndarray) -> np.ndarray:
    """Inverse of :func:`embed_hermitian`; averages the redundant copies."""
    n = r.shape[0] // 2
    re = 0.5 * (r[:n, :n] + r[n:, n:])
    im = 0.5 * (r[n:, :n] - r[:n, n:])
    return re + 1j * im


# --------------------------------------------------------------------------
# builders


def build_bus_admittance(
    n: int,
    lines: Iterable[tuple[int, int]],
    admittances: Iterable[complex],
) -> np.ndarray:
    """Dense Y-bus ``Y(i,i) = sum y``, ``Y(i,k) = -y`` over the given lines."""
    y_bus = np.zeros((n, n), dtype=complex)
    for (i, k), y in zip(lines, admittances):
        y_bus[i, i] += y
        y_bus[k, k] += y
        y_bus[i, k] -= y
        y_bus[k, i] -= y
    return y_bus


def network_admittance(net, alpha: Sequence[int] | None = None) -> np.ndarray:
    """Y-bus of ``net`` with fixed lines plus switchable lines whose ``alpha`` is 1."""
    use = list(net.fixed)
    if alpha is not None:
        if len(alpha) != len(net.switchable):
            raise ValueError("alpha length must equal the number of switchable lines")
        use += [k for k, a in zip(net.switchable, alpha) if a]
    return build_bus_admittance(net.n_bus, [net.lines[k] for k in use], net.admittance[use])


def injection_matrices(y_bus: np.ndarray, i: int) -> tuple[HermitianBlock, HermitianBlock, HermitianBlock]:
    """``(Y_i, Ybar_i, M_i)`` with ``tr{Y_i W} = P_i - P_D``, ``tr{Ybar_i W} = Q_i - Q_D``."""
    n = y_bus.shape[0]
    a = np.zeros((n, n), dtype=complex)
    a[i, :] = y_bus[i, :]
    ah = a.conj().T
    y_i = HermitianBlock.from_dense((ah + a) / 2.0)
    ybar_i = HermitianBlock.from_dense((ah - a) / 2j)
    return y_i, ybar_i, HermitianBlock(n, {(i, i): 1.0})


def voltage_magnitude_matrix(n: int, i: int) -> HermitianBlock:
    return HermitianBlock(n, {(i, i): 1.0})


def voltage_diff_matrix(n: int, i: int, k: int) -> HermitianBlock:
    """``M_ik`` with ``tr{M_ik W} = |V_i - V_k|^2``."""
    if i == k:
        raise ValueError("voltage difference needs two distinct buses")
    return HermitianBlock(n, {(i, i): 1.0, (k, k): 1.0, (i, k): -1.0})


def line_flow_matrix(n: int, i: int, k: int, y: complex) -> HermitianBlock:
    """``Y_ik``: active power sent from ``i`` towards ``k``."""
    return HermitianBlock(n, {(i, i): y.real, (i, k): -y / 2.0})


def line_flow_matrix_reactive(n: int, i: int, k: int, y: complex) -> HermitianBlock:
    """``Ybar_ik``: reactive power sent from ``i`` towards ``k``."""
    return HermitianBlock(n, {(i, i): -y.imag, (i, k): -1j * y / 2.0})


@dataclass(frozen=True)
class LineMatrices:
    """Per-line flow matrices at full size and restricted to the line's buses.

    Restrictions are ordered ``(i, k)`` for the oriented line ``i -> k``; the
    ``*_rev`` variants give the flow from ``k`` to ``i`` in the same ordering.
    """

    i: int
    k: int
    y: complex
    y_ik: HermitianBlock
    ybar_ik: HermitianBlock
    y_ki: HermitianBlock
    ybar_ki: HermitianBlock

    @property
    def y_hat(self) -> HermitianBlock:
        return self.y_ik.restrict((self.i, self.k))

    @property
    def ybar_hat(self) -> HermitianBlock:
        return self.ybar_ik.restrict((self.i, self.k))

    @property
    def y_hat_rev(self) -> HermitianBlock:
        return self.y_ki.restrict((self.i, self.k))

    @property
    def ybar_hat_rev(self) -> HermitianBlock:
        return self.ybar_ki.restrict((self.i, self.k))

    @property
    def m_hat(self) -> HermitianBlock:
        return HermitianBlock.from_dense(M_HAT)


def build_line_matrices(n: int, i: int, k: int, y: complex) -> LineMatrices:
    return LineMatrices(
        i,
        k,
        complex(y),
        line_flow_matrix(n, i, k, y),
        line_flow_matrix_reactive(n, i, k, y),
        line_flow_matrix(n, k, i, y),
        line_flow_matrix_reactive(n, k, i, y),
    )


def line_flows(w: np.ndarray, i: int, k: int, y: complex) -> tuple[float, float, float, float]:
    """``(P_ik, Q_ik, P_ki, Q_ki)`` evaluated on a Hermitian ``W`` (any size)."""
    wii, wkk, wik = w[i, i].real, w[k, k].real, w[i, k]
    # tr{Y_ik W} = Re(y) W_ii - Re(y W_ki)
    p_ik = y.real * wii - (y * np.conj(wik)).real
    q_ik = -y.imag * wii + (y * np.conj(wik)).imag
    p_ki = y.real * wkk - (y * wik).real
    q_ki = -y.imag * wkk + (y * wik).imag
    return float(p_ik), float(q_ik), float(p_ki), float(q_ki)
