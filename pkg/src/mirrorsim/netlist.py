"""SPICE-like netlist reader.

Grammar, one card per logical line (``+`` continues the previous line,
``*`` starts a comment line, ``;`` starts an inline comment)::

    R<name> n1 n2 <value>
    C<name> n1 n2 <value> [IC=<v>]
    V<name> n+ n- [DC] <value> | PULSE(v1 v2 delay rise fall width [period])
    I<name> n+ n- [DC] <value> | PULSE(...) [VSAT=<v>]   ; flows n+ -> n- inside
    M<name> d g s b <model> W=<w> L=<l> [DVTH=<v>] [DBETA=<rel>]
    X<name> n1 n2 RRAM <model> [X0=<state>]
    X<name> in out BUF [CIN=<farad>]
    .model <name> NMOS|PMOS|RRAM (KEY=value ...)
    .title <text>
    .end

Numbers take the suffixes f p n u m k meg g t.  Keywords, element names and
model names are case-insensitive (stored upper-case); node names are stored
lower-case.  Node ``0`` is ground.
"""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field, replace
from typing import Union

from .devices import MosInstance, MosModelParams, RramModelParams, Waveform

log = logging.getLogger(__name__)

GROUND = "0"

_SUFFIX = {"f": 1e-15, "p": 1e-12, "n": 1e-9, "u": 1e-6, "m": 1e-3,
           "k": 1e3, "meg": 1e6, "g": 1e9, "t": 1e12}
_NUMBER = re.compile(r"([+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)([a-zA-Z]*)")

_MODEL_KEYS = {
    "NMOS": {"VTH": "vth", "KP": "kp", "LAMBDA": "lam"},
    "PMOS": {"VTH": "vth", "KP": "kp", "LAMBDA": "lam"},
    "RRAM": {"RON": "r_on", "ROFF": "r_off", "VSET": "v_set", "VRESET": "v_reset",
             "TAUSET": "tau_set", "TAURESET": "tau_reset"},
}
_INSTANCE_KEYS = {
    "M": {"W", "L", "DVTH", "DBETA"},
    "C": {"IC"},
    "XRRAM": {"X0"},
    "XBUF": {"CIN"},
    "I": {"VSAT"},
}


class NetlistError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.message = message
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


def parse_number(text: str, line: int | None = None) -> float:
    """Decode ``"10u"`` -> 1e-5.  Anything after the number must be a known suffix."""
    m = _NUMBER.fullmatch(text.strip())
    if m is None:
        raise NetlistError(f"expected a number, got {text!r}", line)
    value, suffix = m.groups()
    scale = 1.0
    if suffix:
        try:
            scale = _SUFFIX[suffix.lower()]
        except KeyError:
            raise NetlistError(f"unknown suffix {suffix!r} in {text!r}", line) from None
    return float(value) * scale


# ---------------------------------------------------------------- elements

@dataclass(frozen=True)
class Resistor:
    name: str
    n1: str
    n2: str
    r: float

    @property
    def nodes(self):
        return (self.n1, self.n2)


@dataclass(frozen=True)
class Capacitor:
    name: str
    n1: str
    n2: str
    c: float
    ic: float | None = None

    @property
    def nodes(self):
        return (self.n1, self.n2)


@dataclass(frozen=True)
class VSource:
    name: str
    npos: str
    nneg: str
    wave: Waveform

    @property
    def nodes(self):
        return (self.npos, self.nneg)


@dataclass(frozen=True)
class ISource:
    """Current ``wave`` flowing from ``npos`` through the source to ``nneg``.

    ``vsat`` > 0 gives the source a compliance: the current is only fully
    delivered once ``v(npos) - v(nneg)`` reaches ``vsat``.
    """

    name: str
    npos: str
    nneg: str
    wave: Waveform
    vsat: float = 0.0

    @property
    def nodes(self):
        return (self.npos, self.nneg)


@dataclass(frozen=True)
class Mosfet:
    name: str
    d: str
    g: str
    s: str
    b: str
    model: str
    inst: MosInstance

    @property
    def nodes(self):
        return (self.d, self.g, self.s, self.b)


@dataclass(frozen=True)
class Rram:
    name: str
    n1: str
    n2: str
    model: str
    x0: float = 0.0

    @property
    def nodes(self):
        return (self.n1, self.n2)


@dataclass(frozen=True)
class Buffer:
    """Ideal unity-gain voltage buffer; ``cin`` loads the input node."""

    name: str
    inp: str
    out: str
    cin: float = 0.0

    @property
    def nodes(self):
        return (self.inp, self.out)


Element = Union[Resistor, Capacitor, VSource, ISource, Mosfet, Rram, Buffer]
Model = Union[MosModelParams, RramModelParams]


@dataclass(frozen=True)
class ModelCard:
    name: str
    kind: str
    params: dict
    line: int = 0


@dataclass(frozen=True)
class Card:
    """A parsed element card, already decoded into a typed element."""

    line: int
    element: Element


@dataclass
class NetlistDocument:
    title: str = ""
    element_cards: list[Card] = field(default_factory=list)
    model_cards: dict[str, ModelCard] = field(default_factory=dict)


@dataclass(frozen=True)
class Circuit:
    title: str
    nodes: tuple[str, ...]
    elements: tuple[Element, ...]
    models: dict
    warnings: tuple[str, ...] = ()

    def node_index(self, name: str) -> int:
        return self.nodes.index(name.lower())

    def element(self, name: str) -> Element:
        key = name.upper()
        for e in self.elements:
            if e.name == key:
                return e
        raise KeyError(name)

    def of_type(self, cls) -> list:
        return [e for e in self.elements if isinstance(e, cls)]

    def replace_element(self, new: Element) -> "Circuit":
        if new.name not in {e.name for e in self.elements}:
            raise KeyError(new.name)
        elements = tuple(new if e.name == new.name else e for e in self.elements)
        return replace(self, elements=elements)

    def with_source(self, name: str, wave: Waveform | float) -> "Circuit":
        """Copy of the circuit with source ``name`` driven by ``wave``."""
        src = self.element(name)
        if not isinstance(src, (VSource, ISource)):
            raise KeyError(f"{name} is not an independent source")
        if not isinstance(wave, Waveform):
            wave = Waveform.constant(wave)
        return self.replace_element(replace(src, wave=wave))

    def with_value(self, name: str, value: float) -> "Circuit":
        """Copy with a new resistance/capacitance/input capacitance."""
        e = self.element(name)
        if isinstance(e, Resistor):
            return self.replace_element(replace(e, r=value))
        if isinstance(e, Capacitor):
            return self.replace_element(replace(e, c=value))
        if isinstance(e, Buffer):
            return self.replace_element(replace(e, cin=value))
        raise KeyError(f"{name} has no scalar value")

    def with_deltas(self, deltas: dict) -> "Circuit":
        """Apply ``{mosfet name: (dvth, dbeta)}`` on top of the nominal instances."""
        elements = []
        for e in self.elements:
            if isinstance(e, Mosfet) and e.name in deltas:
                dvth, dbeta = deltas[e.name]
                e = replace(e, inst=replace(e.inst, dvth=e.inst.dvth + dvth,
                                            dbeta=e.inst.dbeta + dbeta))
            elements.append(e)
        return replace(self, elements=tuple(elements))


# ---------------------------------------------------------------- parsing

def _logical_lines(text: str):
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split(";", 1)[0].strip()
        if not line or line.startswith("*"):
            continue
        if line.startswith("+"):
            if current is None:
                raise NetlistError("continuation line with nothing to continue", lineno)
            current[1] = current[1] + " " + line[1:].strip()
            continue
        if current is not None:
            yield tuple(current)
        current = [lineno, line]
    if current is not None:
        yield tuple(current)


def _tokens(body: str) -> list[str]:
    body = re.sub(r"\s*=\s*", "=", body)
    body = body.replace("(", " ").replace(")", " ").replace(",", " ")
    return body.split()


def _split_params(tokens, line, allowed):
    positional, params = [], {}
    for tok in tokens:
        if "=" in tok:
            key, _, val = tok.partition("=")
            key = key.upper()
            if not key or not val:
                raise NetlistError(f"malformed parameter {tok!r}", line)
            if key not in allowed:
                raise NetlistError(f"unknown parameter {key!r}", line)
            if key in params:
                raise NetlistError(f"parameter {key!r} given twice", line)
            params[key] = parse_number(val, line)
        else:
            if params:
                raise NetlistError(f"positional field {tok!r} after parameters", line)
            positional.append(tok)
    return positional, params


def _node(tok: str, line: int) -> str:
    if "=" in tok or not re.fullmatch(r"[A-Za-z0-9_.:#\[\]<>!$%&@^~|-]+", tok):
        raise NetlistError(f"bad node name {tok!r}", line)
    return tok.lower()


def _expect(fields, n, what, line):
    if len(fields) != n:
        raise NetlistError(f"{what}: expected {n} fields, got {len(fields)}", line)


def _parse_source_spec(fields, line) -> Waveform:
    if not fields:
        raise NetlistError("source value missing", line)
    head = fields[0].upper()
    if head == "PULSE":
        args = [parse_number(f, line) for f in fields[1:]]
        if not 6 <= len(args) <= 7:
            raise NetlistError("PULSE needs v1 v2 delay rise fall width [period]", line)
        v1, v2, delay, rise, fall, width = args[:6]
        period = args[6] if len(args) == 7 else 0.0
        try:
            return Waveform.pulse(v1, v2, delay, rise, width, fall, period)
        except ValueError as exc:
            raise NetlistError(str(exc), line) from None
    if head == "DC":
        fields = fields[1:]
    _expect(fields, 1, "DC source", line)
    return Waveform.constant(parse_number(fields[0], line))


def _parse_element(name: str, tokens: list[str], line: int) -> Element:
    letter = name[0]
    if letter in "RC":
        allowed = _INSTANCE_KEYS.get(letter, set())
        pos, params = _split_params(tokens, line, allowed)
        _expect(pos, 3, "resistor" if letter == "R" else "capacitor", line)
        n1, n2 = _node(pos[0], line), _node(pos[1], line)
        value = parse_number(pos[2], line)
        if letter == "R":
            if not value > 0:
                raise NetlistError("resistance must be positive", line)
            return Resistor(name, n1, n2, value)
        if value < 0:
            raise NetlistError("capacitance must be non-negative", line)
        return Capacitor(name, n1, n2, value, params.get("IC"))
    if letter in "VI":
        if len(tokens) < 3:
            raise NetlistError("source: expected two nodes and a value", line)
        n1, n2 = _node(tokens[0], line), _node(tokens[1], line)
        spec = [t for t in tokens[2:] if "=" not in t]
        pos, params = _split_params([t for t in tokens[2:] if "=" in t], line,
                                    _INSTANCE_KEYS.get(letter, set()))
        wave = _parse_source_spec(spec, line)
        if letter == "V":
            return VSource(name, n1, n2, wave)
        vsat = params.get("VSAT", 0.0)
        if vsat < 0:
            raise NetlistError("VSAT must be non-negative", line)
        return ISource(name, n1, n2, wave, vsat)
    if letter == "M":
        pos, params = _split_params(tokens, line, _INSTANCE_KEYS["M"])
        _expect(pos, 5, "mosfet (d g s b model)", line)
        if "W" not in params or "L" not in params:
            raise NetlistError("mosfet needs W= and L=", line)
        try:
            inst = MosInstance(params["W"], params["L"], params.get("DVTH", 0.0),
                               params.get("DBETA", 0.0))
        except ValueError as exc:
            raise NetlistError(str(exc), line) from None
        d, g, s, b = (_node(t, line) for t in pos[:4])
        return Mosfet(name, d, g, s, b, pos[4].upper(), inst)
    if letter == "X":
        upper = [t.upper() for t in tokens]
        if "RRAM" in upper:
            k = upper.index("RRAM")
            pos, params = _split_params(tokens[k + 1:], line, _INSTANCE_KEYS["XRRAM"])
            _expect(tokens[:k], 2, "rram nodes", line)
            _expect(pos, 1, "rram model", line)
            x0 = params.get("X0", 0.0)
            if not 0.0 <= x0 <= 1.0:
                raise NetlistError("X0 must lie in [0, 1]", line)
            return Rram(name, _node(tokens[0], line), _node(tokens[1], line), pos[0].upper(), x0)
        if "BUF" in upper:
            k = upper.index("BUF")
            pos, params = _split_params(tokens[k + 1:], line, _INSTANCE_KEYS["XBUF"])
            _expect(tokens[:k], 2, "buffer nodes", line)
            _expect(pos, 0, "buffer", line)
            cin = params.get("CIN", 0.0)
            if cin < 0:
                raise NetlistError("CIN must be non-negative", line)
            return Buffer(name, _node(tokens[0], line), _node(tokens[1], line), cin)
        raise NetlistError("X element must be a RRAM or BUF primitive", line)
    raise NetlistError(f"unknown element kind {letter!r}", line)


def _parse_model(tokens: list[str], line: int) -> ModelCard:
    if len(tokens) < 2:
        raise NetlistError(".model needs a name and a type", line)
    name, kind = tokens[0].upper(), tokens[1].upper()
    if kind not in _MODEL_KEYS:
        raise NetlistError(f"unknown model type {tokens[1]!r}", line)
    pos, params = _split_params(tokens[2:], line, set(_MODEL_KEYS[kind]))
    if pos:
        raise NetlistError(f"unexpected field {pos[0]!r} in .model", line)
    return ModelCard(name, kind, params, line)


def parse(text: str) -> NetlistDocument:
    """Read netlist text into a :class:`NetlistDocument`.

    Raises :class:`NetlistError` (with a line number) on any malformed input.
    """
    doc = NetlistDocument()
    seen: set[str] = set()
    for line, body in _logical_lines(text):
        try:
            first, _, rest = body.partition(" ")
            if first.startswith("."):
                directive = first.lower()
                if directive == ".end":
                    break
                if directive == ".title":
                    doc.title = rest.strip()
                    continue
                if directive == ".model":
                    card = _parse_model(_tokens(rest), line)
                    if card.name in doc.model_cards:
                        raise NetlistError(f"duplicate model {card.name!r}", line)
                    doc.model_cards[card.name] = card
                    continue
                raise NetlistError(f"unsupported directive {first!r}", line)
            name = first.upper()
            if not re.fullmatch(r"[A-Z][A-Z0-9_.]*", name) or len(name) < 2:
                raise NetlistError(f"bad element name {first!r}", line)
            if name in seen:
                raise NetlistError(f"duplicate element name {name!r}", line)
            seen.add(name)
            doc.element_cards.append(Card(line, _parse_element(name, _tokens(rest), line)))
        except NetlistError:
            raise
        except (ValueError, OverflowError) as exc:
            raise NetlistError(str(exc), line) from None
    return doc


def _build_model(card: ModelCard) -> Model:
    keys = _MODEL_KEYS[card.kind]
    kwargs = {keys[k]: v for k, v in card.params.items()}
    try:
        if card.kind == "RRAM":
            return RramModelParams(name=card.name, **kwargs)
        if "vth" not in kwargs or "kp" not in kwargs:
            raise NetlistError(f"model {card.name}: VTH and KP are required", card.line)
        return MosModelParams("N" if card.kind == "NMOS" else "P", name=card.name, **kwargs)
    except (ValueError, TypeError) as exc:
        if isinstance(exc, NetlistError):
            raise
        raise NetlistError(f"model {card.name}: {exc}", card.line) from None


def elaborate(doc: NetlistDocument) -> Circuit:
    """Resolve models, intern nodes and run connectivity checks."""
    if not doc.element_cards:
        raise NetlistError("no elements")
    models = {name: _build_model(card) for name, card in doc.model_cards.items()}
    nodes = [GROUND]
    touches: dict[str, int] = {}
    for card in doc.element_cards:
        e = card.element
        expected = 4 if isinstance(e, Mosfet) else 2
        if len(e.nodes) != expected:
            raise NetlistError(f"{e.name}: expected {expected} terminals", card.line)
        for n in e.nodes:
            if n not in nodes:
                nodes.append(n)
            touches[n] = touches.get(n, 0) + 1
        if isinstance(e, Mosfet):
            m = models.get(e.model)
            if not isinstance(m, MosModelParams):
                raise NetlistError(f"{e.name}: unresolved MOS model {e.model!r}", card.line)
        if isinstance(e, Rram):
            if not isinstance(models.get(e.model), RramModelParams):
                raise NetlistError(f"{e.name}: unresolved RRAM model {e.model!r}", card.line)
    if GROUND not in touches:
        raise NetlistError("no ground node")
    warnings = tuple(f"node {n!r} has a single connection"
                     for n in nodes[1:] if touches[n] < 2)
    for w in warnings:
        log.warning(w)
    return Circuit(doc.title, tuple(nodes), tuple(c.element for c in doc.element_cards),
                   models, warnings)


def load(text: str) -> Circuit:
    return elaborate(parse(text))


def load_file(path) -> Circuit:
    with open(path, encoding="utf-8") as fh:
        return load(fh.read())


# ---------------------------------------------------------------- writing

def _num(x: float) -> str:
    return repr(float(x))


def _wave_text(w: Waveform) -> str:
    if w.kind == "dc":
        return f"DC {_num(w.dc)}"
    args = (w.v1, w.v2, w.delay, w.rise, w.fall, w.width, w.period)
    return "PULSE(" + " ".join(_num(a) for a in args) + ")"


def format_netlist(circuit: Circuit) -> str:
    """Canonical card text; ``load(format_netlist(c)) == c``."""
    out = []
    if circuit.title:
        out.append(f".title {circuit.title}")
    for name, m in circuit.models.items():
        if isinstance(m, MosModelParams):
            kind = "NMOS" if m.polarity == "N" else "PMOS"
            out.append(f".model {name} {kind} (VTH={_num(m.vth)} KP={_num(m.kp)} "
                       f"LAMBDA={_num(m.lam)})")
        else:
            out.append(f".model {name} RRAM (RON={_num(m.r_on)} ROFF={_num(m.r_off)} "
                       f"VSET={_num(m.v_set)} VRESET={_num(m.v_reset)} "
                       f"TAUSET={_num(m.tau_set)} TAURESET={_num(m.tau_reset)})")
    for e in circuit.elements:
        if isinstance(e, Resistor):
            out.append(f"{e.name} {e.n1} {e.n2} {_num(e.r)}")
        elif isinstance(e, Capacitor):
            ic = "" if e.ic is None else f" IC={_num(e.ic)}"
            out.append(f"{e.name} {e.n1} {e.n2} {_num(e.c)}{ic}")
        elif isinstance(e, VSource):
            out.append(f"{e.name} {e.npos} {e.nneg} {_wave_text(e.wave)}")
        elif isinstance(e, ISource):
            sat = f" VSAT={_num(e.vsat)}" if e.vsat else ""
            out.append(f"{e.name} {e.npos} {e.nneg} {_wave_text(e.wave)}{sat}")
        elif isinstance(e, Mosfet):
            i = e.inst
            out.append(f"{e.name} {e.d} {e.g} {e.s} {e.b} {e.model} W={_num(i.w)} "
                       f"L={_num(i.l)} DVTH={_num(i.dvth)} DBETA={_num(i.dbeta)}")
        elif isinstance(e, Rram):
            out.append(f"{e.name} {e.n1} {e.n2} RRAM {e.model} X0={_num(e.x0)}")
        elif isinstance(e, Buffer):
            out.append(f"{e.name} {e.inp} {e.out} BUF CIN={_num(e.cin)}")
    out.append(".end")
    return "\n".join(out) + "\n"
