import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vvots.case_io import validate
from vvots.network import M_HAT
from vvots.recovery import (
    DegenerateVoltageError,
    OtsBounds,
    certify,
    condition_number,
    diagnostics,
    extract_alpha_hat,
    condition_check,
    condition_terms,
    numerical_rank,
    round_alpha,
)
from vvots.relaxations import build_p3
from vvots.solver import solve


def rand_psd2(rng):
    a = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    return a @ a.conj().T


@pytest.fixture
def ring5_p3(ring5):
    prog = build_p3(ring5)
    return prog, solve(prog)


def test_alpha_hat_in_unit_interval(ring5, ring5_p3):
    prog, sol = ring5_p3
    ahat = extract_alpha_hat(prog, sol, ring5)
    assert ahat.shape == (2,) and np.all((0 <= ahat) & (ahat <= 1))


def test_alpha_hat_degenerate(ring5, ring5_p3):
    prog, sol = ring5_p3
    blocks = dict(sol.blocks)
    blocks["W"] = np.zeros_like(blocks["W"])
    with pytest.raises(DegenerateVoltageError):
        extract_alpha_hat(prog, replace(sol, blocks=blocks), ring5)
    with pytest.raises(ValueError):
        extract_alpha_hat(prog, replace(sol, status="infeasible"), ring5)


def test_round_examples():
    assert round_alpha([0.49, 0.5, 0.51]) == (0, 1, 1)
    assert round_alpha([0.2, 0.9], threshold=0.95) == (0, 0)
    with pytest.raises(ValueError):
        round_alpha([0.5], threshold=1.0)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 1), max_size=10), st.floats(0.01, 0.99))
def test_round_idempotent(ahat, thr):
    r = round_alpha(ahat, thr)
    assert set(r) <= {0, 1}
    assert round_alpha(r, thr) == r


def test_certify_ring5(ring5, ring5_p3):
    _, sol = ring5_p3
    bounds, p1 = certify(ring5, (1, 1), sol.objective)
    assert bounds.feasible and p1.optimal
    assert bounds.upper >= bounds.lower - 1e-6
    with pytest.raises(ValueError):
        certify(ring5, (1, 2), sol.objective)


def test_certify_disconnected():
    from conftest import two_bus

    net = validate(two_bus(switchable=True))
    bounds, sol = certify(net, (0,), 1.0)
    assert sol is None and not bounds.feasible and bounds.upper == math.inf
    assert bounds.gap_rel == math.inf


def test_bounds_gap():
    b = OtsBounds(100.0, 101.0)
    assert b.gap_rel == pytest.approx(0.01)
    assert b.as_dict()["upper"] == 101.0


def test_rank_and_condition():
    v = np.array([1, 1j, 2])
    assert numerical_rank(np.outer(v, v.conj())) == 1
    assert numerical_rank(np.eye(3)) == 3
    assert numerical_rank(np.zeros((2, 2))) == 0
    assert condition_number(np.diag([4.0, 2.0])) == pytest.approx(2.0)
    assert condition_number(np.diag([4.0, 0.0])) == math.inf


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**31))
def test_condition_identity(seed):
    u = rand_psd2(np.random.default_rng(seed))
    a, s, r = condition_terms(u)
    lhs = float(np.trace(M_HAT @ u).real)
    assert lhs == pytest.approx(a * (s - 2 * r) + (s + 2 * r), rel=1e-9, abs=1e-12)
    assert a >= 1 - 1e-12


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**31), st.floats(1.0, 3.0))
def test_cond_slack_nonnegative_when_feasible(seed, scale):
    u = rand_psd2(np.random.default_rng(seed))
    vbar = scale * float(np.trace(M_HAT @ u).real)
    bound, slack = condition_check(u, vbar)
    assert slack >= -1e-9
    assert condition_number(u) >= bound * (1 - 1e-9) - 1e-12


def test_condition_rank_one():
    v = np.array([1.0, 0.5])
    bound, slack = condition_check(np.outer(v, v).astype(complex), 1.0)
    assert slack == math.inf


def test_diagnostics_ring5(ring5, ring5_p3):
    prog, sol = ring5_p3
    d = diagnostics(prog, sol, ring5)
    assert len(d.lines) == 2
    assert d.condition_ok() and d.flow_sums_ok()
    assert d.rank_w >= 1
    for x in d.lines:
        assert x.p_sum == pytest.approx(x.p_ik + x.p_ki)
        assert x.eigenvalues[0] >= x.eigenvalues[1]


def test_prop1_inductive(ring5):
    case = ring5.case
    lines = tuple(replace(ln, resistance=0.0) for ln in case.lines)
    net = validate(replace(case, lines=lines))
    prog = build_p3(net)
    d = diagnostics(prog, solve(prog), net)
    for x in d.lines:
        assert x.p_sum_cap == pytest.approx(0.0)
        if x.prop1_applies:
            assert x.prop1_ok
        else:
            assert x.prop1_ok is None
