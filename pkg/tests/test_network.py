import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vvots.network import (
    M_HAT,
    HermitianBlock,
    build_bus_admittance,
    build_line_matrices,
    injection_matrices,
    line_flows,
    voltage_diff_matrix,
    voltage_magnitude_matrix,
)


def rand_v(rng, n):
    return rng.normal(size=n) + 1j * rng.normal(size=n)


def test_two_bus_ybus():
    y = build_bus_admittance(2, [(0, 1)], [1 - 5j])
    np.testing.assert_allclose(y, [[1 - 5j, -1 + 5j], [-1 + 5j, 1 - 5j]])


def test_empty_and_triangle_ybus():
    assert not build_bus_admittance(3, [], []).any()
    y = build_bus_admittance(3, [(0, 1), (1, 2), (0, 2)], [1, 1, 1])
    np.testing.assert_allclose(y, 3 * np.eye(3) - np.ones((3, 3)))


def test_injection_matrix_example():
    y = build_bus_admittance(2, [(0, 1)], [1 - 5j])
    y1, _, m1 = injection_matrices(y, 0)
    np.testing.assert_allclose(y1.to_dense(), [[1, (-1 + 5j) / 2], [(-1 - 5j) / 2, 0]])
    np.testing.assert_allclose(m1.to_dense(), [[1, 0], [0, 0]])
    zero = np.zeros((2, 2), dtype=complex)
    a, b, _ = injection_matrices(zero, 1)
    assert not a.to_dense().any() and not b.to_dense().any()


def test_injection_matches_power():
    rng = np.random.default_rng(0)
    y = build_bus_admittance(4, [(0, 1), (1, 2), (2, 3), (0, 3)], [1 - 5j, 0.5 - 2j, 2 - 8j, 1 - 1j])
    v = rand_v(rng, 4)
    s = v * np.conj(y @ v)
    for i in range(4):
        yi, ybi, _ = injection_matrices(y, i)
        assert yi.quad(v) == pytest.approx(s[i].real, abs=1e-10)
        assert ybi.quad(v) == pytest.approx(s[i].imag, abs=1e-10)


def test_voltage_diff_matrix():
    np.testing.assert_allclose(voltage_diff_matrix(2, 0, 1).to_dense(), M_HAT)
    m = voltage_diff_matrix(2, 0, 1)
    assert m.quad(np.array([1, 1])) == pytest.approx(0)
    assert m.quad(np.array([1, 1j])) == pytest.approx(2)
    with pytest.raises(ValueError):
        voltage_diff_matrix(2, 1, 1)
    assert voltage_magnitude_matrix(3, 2).quad(np.array([0, 0, 2j])) == pytest.approx(4)


def test_line_matrices_examples():
    lm = build_line_matrices(2, 0, 1, -5j)
    yh = lm.y_hat.to_dense()
    assert yh[0, 0] == 0 and yh[0, 1] == pytest.approx(2.5j) and yh[1, 0] == pytest.approx(-2.5j)
    np.testing.assert_allclose(build_line_matrices(2, 0, 1, 1.0).y_hat.to_dense(), [[1, -0.5], [-0.5, 0]])


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 5), st.floats(-20, 20), st.integers(0, 2**31))
def test_line_sum_is_loss(g, b, seed):
    y = complex(g, b)
    lm = build_line_matrices(3, 0, 2, y)
    s = (lm.y_ik + lm.y_ki).restrict((0, 2)).to_dense()
    np.testing.assert_allclose(s, M_HAT * g, atol=1e-12)
    v = rand_v(np.random.default_rng(seed), 3)
    assert (lm.y_ik + lm.y_ki).quad(v) >= -1e-12


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31))
def test_line_flows_sum_to_injection(seed):
    rng = np.random.default_rng(seed)
    lines = [(0, 1), (1, 2), (0, 2), (2, 3)]
    ys = [complex(rng.uniform(0, 3), -rng.uniform(0.5, 10)) for _ in lines]
    ybus = build_bus_admittance(4, lines, ys)
    v = rand_v(rng, 4)
    w = np.outer(v, v.conj())
    s = v * np.conj(ybus @ v)
    p = np.zeros(4)
    q = np.zeros(4)
    for (i, k), y in zip(lines, ys):
        lm = build_line_matrices(4, i, k, y)
        fik, gik, fki, gki = line_flows(w, i, k, y)
        assert lm.y_ik.quad(v) == pytest.approx(fik, abs=1e-9)
        assert lm.ybar_ik.quad(v) == pytest.approx(gik, abs=1e-9)
        assert lm.y_ki.quad(v) == pytest.approx(fki, abs=1e-9)
        assert lm.ybar_ki.quad(v) == pytest.approx(gki, abs=1e-9)
        p[i] += fik; p[k] += fki; q[i] += gik; q[k] += gki
    np.testing.assert_allclose(p, s.real, atol=1e-9)
    np.testing.assert_allclose(q, s.imag, atol=1e-9)
    total = sum(injection_matrices(ybus, i)[0].quad(v) for i in range(4))
    assert total == pytest.approx(float(s.real.sum()), abs=1e-10)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 6))
def test_hermitian_quad_is_real(seed, n):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    h = HermitianBlock.from_dense(a + a.conj().T)
    v = rand_v(rng, n)
    val = np.vdot(v, h.to_dense() @ v)
    assert abs(val.imag) <= 1e-10 * max(1, abs(val))
    w = np.outer(v, v.conj())
    assert h.trace_with(w) == pytest.approx(val.real, rel=1e-10, abs=1e-10)


def test_hermitian_block_ops():
    h = HermitianBlock(3, {(2, 0): 1 + 2j, (1, 1): 3 + 4j})
    d = h.to_dense()
    assert d[0, 2] == 1 - 2j and d[1, 1] == 3
    np.testing.assert_allclose(h.restrict((2, 0)).to_dense(), [[0, 1 + 2j], [1 - 2j, 0]])
    assert h.restrict((0, 2)).lift((0, 2), 3) == HermitianBlock(3, {(0, 2): 1 - 2j})
    with pytest.raises(IndexError):
        HermitianBlock(2, {(0, 2): 1})
    with pytest.raises(ValueError):
        HermitianBlock.from_dense(np.array([[0, 1], [2, 0]]))
