import json
from dataclasses import replace

import pytest
from hypothesis import given, settings, strategies as st

from vvots.case_io import (
    Bus,
    CaseError,
    DisconnectedNetworkError,
    Generator,
    Line,
    PowerCase,
    UnsupportedFeatureError,
    load_case,
    parse_matpower,
    parse_native,
    select_switchable,
    serialize_native,
    validate,
)

TWO_BUS_M = """
function mpc = tiny
mpc.baseMVA = 100;
mpc.bus = [
    1 3 0  0 0 0 1 1 0 230 1 1.1 0.9;
    2 1 50 10 0 0 1 1 0 230 1 1.1 0.9;
];
mpc.gen = [
    1 0 0 100 -100 1 100 1 200 0;
];
mpc.branch = [
    1 2 0.0 0.2 0 0 0 0 {tap} 0 1 -360 360;
];
mpc.gencost = [
    2 0 0 3 0.01 20 5;
];
"""


def tiny(tap="0"):
    return parse_matpower(TWO_BUS_M.replace("{tap}", tap))


def test_matpower_two_bus():
    case = tiny()
    assert len(case.buses) == 2 and len(case.lines) == 1
    assert case.buses[1].p_demand == pytest.approx(0.5)
    assert case.lines[0].admittance == pytest.approx(-5j)
    g = case.generators[0]
    # $/MW^2 -> $/pu^2 and $/MW -> $/pu
    assert g.c2 == pytest.approx(100.0) and g.c1 == pytest.approx(2000.0)
    assert g.p_max == pytest.approx(2.0)


def test_matpower_tap_one_is_nominal():
    assert len(tiny("1").lines) == 1


def test_matpower_rejects_tap():
    with pytest.raises(UnsupportedFeatureError, match="tap"):
        tiny("0.9")


@pytest.mark.parametrize(
    "old,new,msg",
    [
        ("0.2 0 0 0 0", "0.2 0.05 0 0 0", "charging"),
        ("0 1 -360", "7 1 -360", "phase"),
        ("0 1 -360", "0 0 -360", "status 0"),
    ],
)
def test_matpower_rejects_branch_features(old, new, msg):
    text = TWO_BUS_M.replace("{tap}", "0").replace(old, new)
    with pytest.raises(CaseError, match=msg):
        parse_matpower(text)


def test_matpower_malformed_row_reports_line():
    text = TWO_BUS_M.replace("{tap}", "0").replace("2 1 50 10", "2 1 5x0 10")
    with pytest.raises(CaseError, match=r"line \d+"):
        parse_matpower(text)


def test_ieee30_dimensions(case30):
    assert len(case30.case.buses) == 30
    assert len(case30.case.lines) == 41
    assert len(case30.case.generators) == 6


def test_native_minimal_and_defaults():
    doc = {
        "base_mva": 100,
        "buses": [{"id": 1, "p_demand": 0, "q_demand": 0}, {"id": 2, "p_demand": 0.5, "q_demand": 0}],
        "generators": [{"bus": 1, "p_min": 0, "p_max": 2, "q_min": -1, "q_max": 1}],
        "lines": [{"from": 1, "to": 2, "resistance": 0, "reactance": 0.2}],
    }
    case = parse_native(json.dumps(doc))
    assert len(case.buses) == 2
    assert case.lines[0].vdiff_max == 0.1
    assert parse_native(doc, default_vdiff_max=0.05).lines[0].vdiff_max == 0.05


def test_native_schema_error_names_field():
    doc = {"base_mva": 100, "buses": [{"id": 1, "p_demand": "x", "q_demand": 0}], "generators": [], "lines": []}
    with pytest.raises(CaseError, match="buses/0/p_demand"):
        parse_native(doc)


def test_native_vmin_above_vmax():
    doc = {
        "base_mva": 100,
        "buses": [{"id": 1, "p_demand": 0, "q_demand": 0, "v_min": 1.2, "v_max": 1.0}],
        "generators": [],
        "lines": [],
    }
    with pytest.raises(CaseError, match="v_min"):
        parse_native(doc)


def test_native_roundtrip(ring5):
    case = ring5.case
    assert parse_native(serialize_native(case)) == case


bus_st = st.builds(
    lambda pd, qd, lo, span: (pd, qd, lo, lo + span),
    st.floats(0, 2), st.floats(-1, 1), st.floats(0.8, 1.0), st.floats(0, 0.2),
)


@settings(max_examples=40, deadline=None)
@given(st.lists(bus_st, min_size=2, max_size=6), st.data())
def test_native_roundtrip_property(bus_data, data):
    buses = [Bus(i + 1, *b) for i, b in enumerate(bus_data)]
    n = len(buses)
    lines = [
        Line(i, i + 1, data.draw(st.floats(0, 0.1)), data.draw(st.floats(0.01, 0.5)),
             vdiff_max=data.draw(st.floats(0.01, 0.2)), switchable=data.draw(st.booleans()))
        for i in range(1, n)
    ]
    gens = [Generator(1, 0.0, 5.0, -1.0, 1.0, data.draw(st.floats(0, 50)), data.draw(st.floats(0, 50)))]
    case = PowerCase(100.0, buses, gens, lines, name="h")
    assert parse_native(serialize_native(case)) == case


def test_validate_path_and_admittance():
    case = PowerCase(
        100.0, [Bus(1), Bus(2), Bus(3)], [Generator(1, 0, 1, -1, 1)],
        [Line(1, 2, 0.01, 0.1), Line(3, 2, 0.01, 0.1)],
    )
    net = validate(case)
    assert net.lines == ((0, 1), (1, 2))
    y = net.admittance[0]
    assert y.real == pytest.approx(0.990099, abs=1e-6)
    assert y.imag == pytest.approx(-9.90099, abs=1e-5)


def test_validate_disconnected_lists_components():
    case = PowerCase(100.0, [Bus(1), Bus(2), Bus(3), Bus(4)], [], [Line(1, 2, 0, 0.1), Line(3, 4, 0, 0.1)])
    with pytest.raises(DisconnectedNetworkError) as info:
        validate(case)
    assert {frozenset(c) for c in info.value.components} == {frozenset({1, 2}), frozenset({3, 4})}


def test_validate_duplicate_edge():
    case = PowerCase(100.0, [Bus(1), Bus(2)], [], [Line(1, 2, 0, 0.1), Line(2, 1, 0, 0.2)])
    with pytest.raises(CaseError, match="duplicate"):
        validate(case)


@pytest.mark.parametrize(
    "bad",
    [
        dict(lines=[Line(1, 1, 0, 0.1)]),
        dict(lines=[Line(1, 2, -0.1, 0.1)]),
        dict(lines=[Line(1, 2, 0.1, 0.0)]),
        dict(generators=[Generator(9, 0, 1, 0, 1)]),
        dict(generators=[Generator(1, 2, 1, 0, 1)]),
        dict(generators=[Generator(1, 0, 1, 0, 1, c2=-1)]),
    ],
)
def test_case_invariants(bad):
    base = dict(base_mva=100.0, buses=[Bus(1), Bus(2)], generators=[], lines=[Line(1, 2, 0, 0.1)])
    base.update(bad)
    with pytest.raises(CaseError):
        PowerCase(**base)


def _triangle(ys):
    # reactance-only lines with |y| = ys
    lines = [Line(1, 2, 0, 1 / ys[0]), Line(2, 3, 0, 1 / ys[1]), Line(1, 3, 0, 1 / ys[2])]
    return validate(PowerCase(100.0, [Bus(1), Bus(2), Bus(3)], [], lines))


def test_select_switchable_ranking():
    net = select_switchable(_triangle([5.1, 0.2, 3.3]), 1)
    assert net.switchable == (1,)
    # the second-smallest would leave a tree; removing it as well is allowed only if still connected
    with pytest.raises(ValueError):
        select_switchable(_triangle([5.1, 0.2, 3.3]), 2)


def test_select_switchable_ranking_mesh():
    lines = [Line(1, 2, 0, 1 / 5.1), Line(2, 3, 0, 1 / 0.2), Line(1, 3, 0, 1 / 3.3), Line(3, 4, 0, 1), Line(1, 4, 0, 1)]
    net = validate(PowerCase(100.0, [Bus(i) for i in (1, 2, 3, 4)], [], lines))
    # 0.2 first, then the 1.0 tie is broken towards the lower (from, to) pair
    assert set(select_switchable(net, 2).switchable) == {1, 4}


def test_select_switchable_tie_rule():
    lines = [Line(2, 3, 0, 0.5), Line(1, 2, 0, 0.5), Line(1, 3, 0, 0.1)]
    net = validate(PowerCase(100.0, [Bus(1), Bus(2), Bus(3)], [], lines))
    sel = select_switchable(net, 1)
    assert [net.case.lines[k] for k in sel.switchable][0].from_bus == 1


def test_select_switchable_errors():
    net = _triangle([1, 2, 3])
    with pytest.raises(ValueError):
        select_switchable(net, 0)
    with pytest.raises(ValueError):
        select_switchable(net, 4)
    tree = validate(PowerCase(100.0, [Bus(1), Bus(2), Bus(3)], [], [Line(1, 2, 0, 1), Line(2, 3, 0, 1)]))
    with pytest.raises(ValueError):
        select_switchable(tree, 2)


@settings(max_examples=25, deadline=None)
@given(st.permutations(range(41)), st.integers(1, 8))
def test_select_switchable_order_invariant(case30, perm, p):
    case = case30.case
    shuffled = replace(case, lines=tuple(case.lines[i] for i in perm))
    a = select_switchable(case30, p)
    b = select_switchable(validate(shuffled), p)
    key = lambda net: {(net.case.lines[k].from_bus, net.case.lines[k].to_bus) for k in net.switchable}
    assert key(a) == key(b)
    fixed = [b.lines[k] for k in b.fixed]
    from vvots.case_io import is_connected

    assert is_connected(b.n_bus, fixed)


def test_load_bundled_and_native(tmp_path, ring5):
    p = tmp_path / "r.json"
    p.write_text(serialize_native(ring5.case))
    assert load_case(p).name == "ring5"
    assert load_case("case30").name == "case30"
    with pytest.raises(FileNotFoundError):
        load_case(tmp_path / "missing.json")
