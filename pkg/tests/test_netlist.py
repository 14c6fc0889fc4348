from pathlib import Path

import pytest
from hypothesis import given, strategies as st

from mirrorsim import analyses as an
from mirrorsim.devices import MosModelParams, Waveform
from mirrorsim.netlist import (Buffer, Capacitor, ISource, Mosfet, NetlistError, Resistor, Rram,
                               VSource, elaborate, format_netlist, load, load_file, parse,
                               parse_number)

NETLISTS = Path(an.__file__).parent / "netlists"


@pytest.mark.parametrize("text,value", [("10u", 1e-5), ("50", 50.0), ("1.5k", 1500.0),
                                        ("2MEG", 2e6), ("3m", 3e-3), ("-0.7", -0.7),
                                        (".5p", 5e-13), ("1e-3", 1e-3), ("4.7nF", None)])
def test_parse_number(text, value):
    if value is None:
        with pytest.raises(NetlistError, match="unknown suffix"):
            parse_number(text)
    else:
        assert parse_number(text) == pytest.approx(value, rel=1e-15)


def test_resistor_card():
    c = load("R1 n1 0 50\n")
    assert c.elements == (Resistor("R1", "n1", "0", 50.0),)
    assert c.nodes == ("0", "n1")


def test_mosfet_card():
    c = load(".model PCH PMOS (VTH=-0.7 KP=60u)\nM5 d g s b PCH W=20u L=0.5u\n"
             "R1 d 0 1\nR2 g 0 1\nR3 s 0 1\nR4 b 0 1\n")
    m = c.element("M5")
    assert isinstance(m, Mosfet)
    assert m.inst.w == pytest.approx(2e-5) and m.inst.l == pytest.approx(5e-7)
    assert c.models["PCH"].polarity == "P"


def test_sources_and_primitives():
    c = load("""
.title mixed
.model RR RRAM (RON=2k)
V1 a 0 PULSE(0 1 1u 10n 20n 5u 10u)
I1 a 0 DC 1m VSAT=0.2
C1 a 0 1p IC=0.5
XR a b RRAM RR X0=0.25
XB b out BUF CIN=2f
R1 out 0 1k
""")
    v = c.element("V1")
    assert isinstance(v, VSource) and v.wave.kind == "pulse"
    assert (v.wave.rise, v.wave.fall, v.wave.width, v.wave.period) == pytest.approx(
        (10e-9, 20e-9, 5e-6, 10e-6))
    assert c.element("I1") == ISource("I1", "a", "0", Waveform.constant(1e-3), 0.2)
    assert c.element("C1") == Capacitor("C1", "a", "0", 1e-12, 0.5)
    assert c.element("XR") == Rram("XR", "a", "b", "RR", 0.25)
    assert c.element("XB") == Buffer("XB", "b", "out", 2e-15)
    assert c.models["RR"].r_on == 2e3
    assert c.title == "mixed"


def test_comments_continuation_and_case():
    c = load("* header\nr1 N1 0 ; inline comment\n+ 50\n.END\nR2 ignored 0 1\n")
    assert c.elements == (Resistor("R1", "n1", "0", 50.0),)


def test_bundled_set_branch_counts():
    c = load_file(NETLISTS / "set_branch.cir")
    assert [m.name for m in c.of_type(Mosfet)] == ["M4", "M5", "M6", "M7", "M0"]
    assert len(c.of_type(ISource)) == 1
    assert len(c.of_type(VSource)) == 2
    assert c.element("RSENSE").r == 50.0


@pytest.mark.parametrize("name", ["set_branch.cir", "reset_branch.cir",
                                  "full_2m1r1b.cir", "cascode_mirror.cir"])
def test_bundled_netlists_are_clean(name):
    c = load_file(NETLISTS / name)
    assert not c.warnings
    assert load(format_netlist(c)) == c


@pytest.mark.parametrize("text,message", [
    ("", "no elements"),
    ("R1 a b 1\n", "no ground node"),
    ("R1 a 0 5x\n", "line 1: unknown suffix"),
    ("R1 a 0 1\nR1 a 0 2\n", "line 2: duplicate element"),
    ("M1 d g 0 0 NX W=1u L=1u\nR1 d g 1\n", "unresolved MOS model"),
    ("XR a 0 RRAM RX\n", "unresolved RRAM model"),
    ("R1 a 0\n", "expected 3 fields"),
    ("M1 d g 0 NCH W=1u L=1u\n", "expected 5 fields"),
    (".op\nR1 a 0 1\n", "unsupported directive"),
    ("R1 a 0 1 FOO=2\n", "unknown parameter"),
    ("+ 1\n", "continuation"),
    ("Q1 a 0 1\n", "unknown element kind"),
    ("V1 a 0 PULSE(0 1 0 0 1u 1u)\n", "rise and fall"),
    ("XB a 0 FOO\n", "RRAM or BUF"),
    (".model A NMOS (KP=1u)\nM1 a a 0 0 A W=1u L=1u\n", "VTH and KP"),
])
def test_errors(text, message):
    with pytest.raises(NetlistError, match=message):
        load(text)


def test_error_carries_line_number():
    with pytest.raises(NetlistError) as info:
        load("* c\n\nR1 a 0 1\nR2 a 0 oops\n")
    assert info.value.line == 4


def test_single_connection_warning():
    c = load("V1 a 0 1\nR1 a b 1k\n")
    assert c.warnings == ("node 'b' has a single connection",)


def test_parse_keeps_document_structure():
    doc = parse(".title t\n.model N NMOS (VTH=1 KP=1u)\nR1 a 0 1\n")
    assert doc.title == "t" and list(doc.model_cards) == ["N"]
    assert [card.line for card in doc.element_cards] == [3]
    assert elaborate(doc).element("R1").r == 1.0


def test_circuit_editing():
    c = load_file(NETLISTS / "set_branch.cir")
    c2 = c.with_source("VDD", 3.3).with_value("RSENSE", 10.0).with_deltas({"M6": (0.01, 0.02)})
    assert c2.element("VDD").wave == Waveform.constant(3.3)
    assert c2.element("RSENSE").r == 10.0
    assert c2.element("M6").inst.dvth == 0.01 and c2.element("M6").inst.dbeta == 0.02
    assert c.element("VDD").wave == Waveform.constant(5.0)
    with pytest.raises(KeyError):
        c.with_source("M6", 1.0)
    with pytest.raises(KeyError):
        c.element("NOPE")


# ---------------------------------------------------------------- properties

names = st.from_regex(r"[a-z][a-z0-9_]{0,6}", fullmatch=True)
values = st.floats(1e-15, 1e9, allow_nan=False, allow_infinity=False)


@st.composite
def circuits(draw):
    nodes = ["0"] + draw(st.lists(names, min_size=1, max_size=5, unique=True))
    lines = [".model NM NMOS (VTH=0.6 KP=100u LAMBDA=0.02)",
             ".model PM PMOS (VTH=-0.6 KP=40u)", ".model RR RRAM (RON=1k ROFF=50k)"]
    pick = st.sampled_from(nodes)
    for k in range(draw(st.integers(1, 8))):
        kind = draw(st.sampled_from("RCVIMXB"))
        a, b = draw(pick), draw(pick)
        v = draw(values)
        if kind == "R":
            lines.append(f"R{k} {a} {b} {v!r}")
        elif kind == "C":
            lines.append(f"C{k} {a} {b} {v!r} IC={draw(st.floats(-5, 5))!r}")
        elif kind in "VI":
            lines.append(f"{kind}{k} {a} {b} DC {draw(st.floats(-10, 10))!r}")
        elif kind == "M":
            g, s = draw(pick), draw(pick)
            lines.append(f"M{k} {a} {g} {s} 0 {draw(st.sampled_from(['NM', 'PM']))} "
                         f"W={draw(st.floats(1e-7, 1e-4))!r} L={draw(st.floats(1e-7, 1e-5))!r}")
        elif kind == "X":
            lines.append(f"X{k} {a} {b} RRAM RR X0={draw(st.floats(0, 1))!r}")
        else:
            lines.append(f"XB{k} {a} {b} BUF")
    lines.append("R99 0 " + nodes[-1] + " 1")
    return "\n".join(lines) + "\n"


@given(circuits())
def test_round_trip(text):
    c = load(text)
    assert load(format_netlist(c)) == c


@given(st.text(max_size=200))
def test_parser_is_total(text):
    try:
        load(text)
    except NetlistError as exc:
        assert exc.line is None or exc.line >= 1


@given(st.lists(st.sampled_from(["R1 a 0 1k", "C1 a 0 1p", "V1 a 0 PULSE(0 1 0 1n 1n 1u)",
                                 "M1 a a 0 0 N W=1u L=1u", ".model N NMOS (VTH=0.5 KP=1u)",
                                 "XB a b BUF", "I1 0 a 1m", "+ 2", "*", ".end", "garbage !",
                                 "R2 a", "= =", "V2 a 0 PULSE(", ")"]), max_size=10))
def test_parser_is_total_on_card_soup(cards):
    try:
        load("\n".join(cards))
    except NetlistError:
        pass
