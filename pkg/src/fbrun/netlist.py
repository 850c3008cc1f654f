"""Reader and writer for ``.fbn`` netlist files.

A netlist holds block type declarations and at most one application::

    fbtype ADD basic {
      event_input REQ with DI1, DI2;
      event_output CNF with DO;
      var_input DI1 : INT;
      var_input DI2 : INT;
      var_output DO : INT;
      ecc {
        state START;
        state RUN do ALG emit CNF;
        transition START -> RUN on REQ when 1;
        transition RUN -> START when 1;
      }
      alg ALG { DO := DI1 + DI2; }
    }

Composite types and the application body use ``instance``, ``init``,
``connect``, ``bind`` and ``boundary`` statements; the application declares
its own interface with ``external`` prefixed event/var declarations.
Type declarations may appear in any order. ``//`` starts a line comment.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Any, Iterator

from fbrun.ecc import BasicBody, EccAction, EccState, EccTransition
from fbrun.expr import ARITH, EQUALITY, LOGIC, ORDER, TRUE, Assign, Binary, Expr, Lit, Unary, Var
from fbrun.model import (
    INT_MAX,
    INT_MIN,
    BlockInstance,
    BlockType,
    CompositeBody,
    DataConn,
    DataValue,
    EventConn,
    Interface,
    Kind,
    RecursiveComposite,
    Tag,
    ValidationError,
    VarDecl,
    format_literal,
    validate_network,
    validate_type,
)
from fbrun.subapp import Application, configure_subapplication

# -- errors --------------------------------------------------------------------------


class ParseError(Exception):
    """Netlist error with a 1-based ``line``/``column`` inside the source text."""

    def __init__(self, message: str, line: int, column: int) -> None:
        self.message = message
        self.line = line
        self.column = column
        super().__init__(f"{line}:{column}: {message}")


class NetlistSyntaxError(ParseError):
    pass


class UnknownType(ParseError):
    pass


class DuplicateDecl(ParseError):
    pass


class UnresolvedReference(ParseError):
    pass


class InvalidDeclaration(ParseError):
    """A declaration parsed fine but failed structural validation (see ``cause``)."""

    def __init__(self, cause: ValidationError, line: int, column: int) -> None:
        self.cause = cause
        super().__init__(str(cause), line, column)


# -- lexer -----------------------------------------------------------------------------

_TOKEN = re.compile(
    r"""
    (?P<ws>[ \t\r\n]+|//[^\n]*)
  | (?P<real>\d+\.\d+(?:[eE][+-]?\d+)?|\d+[eE][+-]?\d+)
  | (?P<int>\d+)
  | (?P<string>"(?:[^"\\\n]|\\.)*")
  | (?P<ident>[A-Za-z][A-Za-z0-9_]*)
  | (?P<op>:=|->|<-|<>|<=|>=|[{};:,.()<>=+\-*/])
    """,
    re.VERBOSE,
)

_ESCAPES = {"n": "\n", "t": "\t", '"': '"', "\\": "\\"}


@dataclass(frozen=True)
class Token:
    kind: str  # ident, int, real, string, op, eof
    text: str
    line: int
    column: int


def tokenize(text: str) -> list[Token]:
    text = text.replace("\r\n", "\n")
    tokens: list[Token] = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise NetlistSyntaxError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        assert kind is not None
        if kind != "ws":
            tokens.append(Token(kind, m.group(), line, pos - line_start + 1))
        newlines = m.group().count("\n")
        if newlines:
            line += newlines
            line_start = m.start() + m.group().rindex("\n") + 1
        pos = m.end()
    if tokens:
        last = tokens[-1]
        tokens.append(Token("eof", "", last.line, last.column))
    else:
        tokens.append(Token("eof", "", 1, 1))
    return tokens


def _unescape(tok: Token) -> str:
    body = tok.text[1:-1]
    out = []
    i = 0
    while i < len(body):
        c = body[i]
        if c == "\\":
            nxt = body[i + 1]
            if nxt not in _ESCAPES:
                raise NetlistSyntaxError(f"unknown escape \\{nxt}", tok.line, tok.column + i + 1)
            out.append(_ESCAPES[nxt])
            i += 2
        else:
            out.append(c)
            i += 1
    return "".join(out)


# -- document --------------------------------------------------------------------------


@dataclass(frozen=True)
class ApplicationDecl:
    """Top-level network: its own boundary interface plus a composite-style body."""

    name: str
    interface: Interface
    body: CompositeBody

    def as_type(self) -> BlockType:
        return BlockType(self.name, Kind.COMPOSITE, self.interface, composite=self.body)

    def configure(self) -> Application:
        return configure_subapplication(self.as_type(), self.name)


@dataclass(frozen=True)
class NetlistDocument:
    types: tuple[BlockType, ...] = ()
    application: ApplicationDecl | None = None
    positions: dict[str, tuple[int, int]] = field(default_factory=dict, compare=False, repr=False)

    def type_named(self, name: str) -> BlockType | None:
        for t in self.types:
            if t.name == name:
                return t
        return None


# -- parser ------------------------------------------------------------------------------

_TAGS = {t.value: t for t in Tag}
_RESERVED = {"TRUE", "FALSE", "AND", "OR", "NOT"}


@dataclass
class _Ref:
    instance: str
    port: str
    tok: Token


@dataclass
class _RawNetwork:
    """Unresolved composite/application body as read from the text."""

    # (name, type token, name token)
    instances: list[tuple[str, Token, Token]] = field(default_factory=list)
    inits: list[tuple[_Ref, Any, Token]] = field(default_factory=list)
    connects: list[tuple[_Ref, _Ref]] = field(default_factory=list)
    binds: list[tuple[_Ref, _Ref]] = field(default_factory=list)
    bound_in: list[tuple[Token, _Ref]] = field(default_factory=list)
    bound_out: list[tuple[_Ref, Token]] = field(default_factory=list)


@dataclass
class _RawType:
    name: str
    kind: Kind
    tok: Token
    interface: Interface | None = None
    basic: BasicBody | None = None
    service: str | None = None
    network: _RawNetwork | None = None


class _Parser:
    def __init__(self, text: str) -> None:
        self.tokens = tokenize(text)
        self.i = 0

    # token helpers
    @property
    def tok(self) -> Token:
        return self.tokens[self.i]

    def advance(self) -> Token:
        t = self.tokens[self.i]
        if t.kind != "eof":
            self.i += 1
        return t

    def error(self, message: str, tok: Token | None = None) -> NetlistSyntaxError:
        t = tok or self.tok
        return NetlistSyntaxError(message, t.line, t.column)

    def at(self, text: str) -> bool:
        t = self.tok
        return t.text == text and t.kind in ("ident", "op")

    def accept(self, text: str) -> Token | None:
        if self.at(text):
            return self.advance()
        return None

    def expect(self, text: str) -> Token:
        if not self.at(text):
            found = self.tok.text or "end of input"
            raise self.error(f"expected {text!r}, found {found!r}")
        return self.advance()

    def ident(self, what: str = "identifier") -> Token:
        t = self.tok
        if t.kind != "ident":
            raise self.error(f"expected {what}, found {t.text or 'end of input'!r}")
        return self.advance()

    def qualified(self) -> tuple[str, Token]:
        first = self.ident()
        parts = [first.text]
        while self.at(".") :
            self.advance()
            parts.append(self.ident().text)
        return ".".join(parts), first

    def ref(self) -> _Ref:
        name, tok = self.qualified()
        if "." not in name:
            raise self.error("expected instance.port", tok)
        inst, port = name.rsplit(".", 1)
        return _Ref(inst, port, tok)

    def ident_list(self) -> tuple[str, ...]:
        out = [self.ident().text]
        while self.accept(","):
            out.append(self.ident().text)
        return tuple(out)

    # literals and expressions
    def literal(self) -> tuple[Any, Token]:
        t = self.tok
        negative = False
        if self.at("-"):
            self.advance()
            negative = True
            t2 = self.tok
            if t2.kind not in ("int", "real"):
                raise self.error("expected a number after '-'")
        t2 = self.tok
        if t2.kind == "int":
            self.advance()
            v = -int(t2.text) if negative else int(t2.text)
            if not INT_MIN <= v <= INT_MAX:
                raise self.error("INT literal out of 64-bit range", t2)
            return v, t
        if t2.kind == "real":
            self.advance()
            return (-float(t2.text) if negative else float(t2.text)), t
        if t2.kind == "string":
            self.advance()
            return _unescape(t2), t
        if t2.kind == "ident" and t2.text in ("TRUE", "FALSE"):
            self.advance()
            return t2.text == "TRUE", t
        raise self.error(f"expected a literal, found {t2.text or 'end of input'!r}")

    def expr(self) -> Expr:
        return self._binary(0)

    _LEVELS: tuple[tuple[str, ...], ...] = (("OR",), ("AND",), EQUALITY, ORDER, ("+", "-"), ("*", "/"))

    def _binary(self, level: int) -> Expr:
        if level == len(self._LEVELS):
            return self._unary()
        left = self._binary(level + 1)
        while self.tok.kind in ("op", "ident") and self.tok.text in self._LEVELS[level]:
            op = self.advance().text
            right = self._binary(level + 1)
            left = Binary(op, left, right)
        return left

    def _unary(self) -> Expr:
        if self.at("-"):
            self.advance()
            operand = self._unary()
            # a minus directly in front of a number token is part of the literal
            if isinstance(operand, _NumLit):
                return _NumLit(-operand.raw, operand.tok)
            return Unary("-", operand)
        if self.at("NOT"):
            self.advance()
            return Unary("NOT", self._unary())
        return self._primary()

    def _primary(self) -> Expr:
        t = self.tok
        if self.accept("("):
            e = _finish(self.expr())
            self.expect(")")
            return e
        if t.kind == "int":
            self.advance()
            return _NumLit(int(t.text), t)
        if t.kind == "real":
            self.advance()
            return _NumLit(float(t.text), t)
        if t.kind == "string":
            self.advance()
            return Lit(DataValue(Tag.STRING, _unescape(t)))
        if t.kind == "ident":
            if t.text in ("TRUE", "FALSE"):
                self.advance()
                return Lit(DataValue(Tag.BOOL, t.text == "TRUE"))
            if t.text in _RESERVED:
                raise self.error(f"unexpected {t.text}")
            self.advance()
            return Var(t.text)
        raise self.error(f"expected an expression, found {t.text or 'end of input'!r}")

    def full_expr(self) -> Expr:
        return _finish(self.expr())

    # declarations
    def document(self) -> tuple[list[_RawType], tuple[str, Interface, _RawNetwork, Token] | None]:
        types: list[_RawType] = []
        app = None
        while self.tok.kind != "eof":
            if self.at("fbtype"):
                types.append(self.fbtype())
            elif self.at("application"):
                tok = self.advance()
                if app is not None:
                    raise DuplicateDecl("more than one application", tok.line, tok.column)
                name = self.ident("application name")
                self.expect("{")
                itf, net = self.network_body(application=True)
                app = (name.text, itf, net, name)
            else:
                raise self.error(f"expected 'fbtype' or 'application', found {self.tok.text!r}")
        return types, app

    def fbtype(self) -> _RawType:
        self.expect("fbtype")
        name = self.ident("type name")
        kind_tok = self.ident("block kind")
        try:
            kind = Kind(kind_tok.text)
        except ValueError:
            raise self.error("block kind must be basic, service or composite", kind_tok) from None
        self.expect("{")
        raw = _RawType(name.text, kind, name)
        if kind is Kind.COMPOSITE:
            raw.interface, raw.network = self.network_body(application=False)
            return raw
        decls = _InterfaceBuilder(self)
        internals: list[VarDecl] = []
        states: list[EccState] = []
        transitions: list[EccTransition] = []
        algorithms: dict[str, tuple[Assign, ...]] = {}
        seen_ecc = False
        while not self.accept("}"):
            if decls.try_member():
                continue
            if kind is Kind.BASIC and self.at("var_internal"):
                self.advance()
                internals.append(self.var_decl())
            elif kind is Kind.BASIC and self.at("ecc"):
                if seen_ecc:
                    raise DuplicateDecl("second ecc block", self.tok.line, self.tok.column)
                seen_ecc = True
                self.advance()
                self.ecc(states, transitions)
            elif kind is Kind.BASIC and self.at("alg"):
                self.advance()
                alg_name = self.ident("algorithm name")
                if alg_name.text in algorithms:
                    raise DuplicateDecl(f"algorithm {alg_name.text} declared twice", alg_name.line, alg_name.column)
                algorithms[alg_name.text] = self.alg_body()
            elif kind is Kind.SERVICE and self.at("behavior"):
                self.advance()
                raw.service = self.ident("behavior name").text
                self.expect(";")
            else:
                raise self.error(f"unexpected {self.tok.text or 'end of input'!r} in {kind} type")
        raw.interface = decls.build()
        if kind is Kind.BASIC:
            raw.basic = BasicBody(tuple(internals), tuple(states), tuple(transitions), algorithms)
        elif raw.service is None:
            raw.service = "none"
        return raw

    def var_decl(self) -> VarDecl:
        name = self.ident("variable name")
        self.expect(":")
        tag_tok = self.ident("type tag")
        if tag_tok.text not in _TAGS:
            raise self.error(f"unknown data type {tag_tok.text}", tag_tok)
        tag = _TAGS[tag_tok.text]
        initial = None
        if self.accept(":="):
            value, vtok = self.literal()
            initial = _coerce(value, tag, vtok)
        self.expect(";")
        return VarDecl(name.text, tag, initial)

    def ecc(self, states: list[EccState], transitions: list[EccTransition]) -> None:
        self.expect("{")
        while not self.accept("}"):
            if self.accept("state"):
                name = self.ident("state name")
                actions = []
                if not self.at(";"):
                    actions.append(self.action())
                    while self.accept(","):
                        actions.append(self.action())
                self.expect(";")
                states.append(EccState(name.text, tuple(actions)))
            elif self.accept("transition"):
                src = self.ident("state name").text
                self.expect("->")
                dst = self.ident("state name").text
                event = None
                cond: Expr = TRUE
                if self.accept("on"):
                    event = self.ident("event name").text
                if self.accept("when"):
                    cond = self.full_expr()
                    if cond == Lit(DataValue(Tag.INT, 1)):
                        cond = TRUE
                self.expect(";")
                transitions.append(EccTransition(src, dst, event, cond))
            else:
                raise self.error(f"expected 'state' or 'transition', found {self.tok.text!r}")

    def action(self) -> EccAction:
        alg = out = None
        if self.accept("do"):
            alg = self.ident("algorithm name").text
        if self.accept("emit"):
            out = self.ident("event name").text
        if alg is None and out is None:
            raise self.error("expected 'do' or 'emit'")
        return EccAction(alg, out)

    def alg_body(self) -> tuple[Assign, ...]:
        self.expect("{")
        stmts = []
        while not self.accept("}"):
            target = self.ident("variable name")
            if target.text in _RESERVED:
                raise self.error(f"cannot assign to {target.text}", target)
            self.expect(":=")
            stmts.append(Assign(target.text, self.full_expr()))
            self.expect(";")
        return tuple(stmts)

    def network_body(self, application: bool) -> tuple[Interface, _RawNetwork]:
        decls = _InterfaceBuilder(self)
        net = _RawNetwork()
        while not self.accept("}"):
            if application:
                if self.accept("external"):
                    if not decls.try_member():
                        raise self.error("expected an event or variable declaration after 'external'")
                    continue
            elif decls.try_member():
                continue
            if self.at("instance"):
                self.advance()
                name, tok = self.qualified()
                self.expect(":")
                type_tok = self.ident("type name")
                self.expect(";")
                net.instances.append((name, type_tok, tok))
            elif self.at("init"):
                tok = self.advance()
                r = self.ref()
                self.expect(":=")
                value, vtok = self.literal()
                self.expect(";")
                net.inits.append((r, value, vtok))
            elif self.at("connect"):
                self.advance()
                a = self.ref()
                self.expect("->")
                b = self.ref()
                self.expect(";")
                net.connects.append((a, b))
            elif self.at("bind"):
                self.advance()
                a = self.ref()
                self.expect("<-")
                b = self.ref()
                self.expect(";")
                net.binds.append((a, b))
            elif self.at("boundary"):
                self.advance()
                if self.accept("in"):
                    name = self.ident("interface input")
                    self.expect("->")
                    net.bound_in.append((name, self.ref()))
                elif self.accept("out"):
                    r = self.ref()
                    self.expect("->")
                    net.bound_out.append((r, self.ident("interface output")))
                else:
                    raise self.error("expected 'in' or 'out' after 'boundary'")
                self.expect(";")
            else:
                raise self.error(f"unexpected {self.tok.text or 'end of input'!r} in network body")
        return decls.build(), net


class _NumLit:
    """Number token not yet turned into a literal, so a leading minus can fold in.

    INT range is checked only after folding, which admits -9223372036854775808.
    """

    __slots__ = ("raw", "tok")

    def __init__(self, raw: int | float, tok: Token) -> None:
        self.raw = raw
        self.tok = tok


def _finish(e: Any) -> Expr:
    if isinstance(e, _NumLit):
        if isinstance(e.raw, float):
            return Lit(DataValue(Tag.REAL, e.raw))
        if not INT_MIN <= e.raw <= INT_MAX:
            raise NetlistSyntaxError("INT literal out of 64-bit range", e.tok.line, e.tok.column)
        return Lit(DataValue(Tag.INT, e.raw))
    if isinstance(e, Binary):
        return Binary(e.op, _finish(e.left), _finish(e.right))
    if isinstance(e, Unary):
        return Unary(e.op, _finish(e.operand))
    return e


class _InterfaceBuilder:
    def __init__(self, parser: _Parser) -> None:
        self.p = parser
        self.ev_in: list[str] = []
        self.ev_out: list[str] = []
        self.d_in: list[VarDecl] = []
        self.d_out: list[VarDecl] = []
        self.w_in: dict[str, tuple[str, ...]] = {}
        self.w_out: dict[str, tuple[str, ...]] = {}

    def try_member(self) -> bool:
        p = self.p
        for word, events, withs in (("event_input", self.ev_in, self.w_in), ("event_output", self.ev_out, self.w_out)):
            if p.at(word):
                p.advance()
                name = p.ident("event name")
                if name.text in events:
                    raise DuplicateDecl(f"event {name.text} declared twice", name.line, name.column)
                events.append(name.text)
                if p.accept("with"):
                    withs[name.text] = p.ident_list()
                p.expect(";")
                return True
        for word, decls in (("var_input", self.d_in), ("var_output", self.d_out)):
            if p.at(word):
                p.advance()
                tok = p.tok
                decl = p.var_decl()
                if any(d.name == decl.name for d in decls):
                    raise DuplicateDecl(f"variable {decl.name} declared twice", tok.line, tok.column)
                decls.append(decl)
                return True
        return False

    def build(self) -> Interface:
        return Interface(
            tuple(self.ev_in), tuple(self.d_in), dict(self.w_in), tuple(self.ev_out), tuple(self.d_out), dict(self.w_out)
        )


def _coerce(value: Any, tag: Tag, tok: Token) -> DataValue:
    if tag is Tag.REAL and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    try:
        return DataValue(tag, value)
    except TypeError:
        raise NetlistSyntaxError(f"literal {tok.text} does not fit {tag}", tok.line, tok.column) from None


# -- resolution ----------------------------------------------------------------------------


def parse(text: str) -> NetlistDocument:
    """Parse and validate a netlist."""
    raw_types, raw_app = _Parser(text).document()
    positions: dict[str, tuple[int, int]] = {}
    by_name: dict[str, _RawType] = {}
    for rt in raw_types:
        if rt.name in by_name:
            raise DuplicateDecl(f"type {rt.name} declared twice", rt.tok.line, rt.tok.column)
        by_name[rt.name] = rt
        positions[rt.name] = (rt.tok.line, rt.tok.column)

    order = _dependency_order(raw_types, by_name)
    built: dict[str, BlockType] = {}
    for rt in order:
        if rt.kind is Kind.COMPOSITE:
            assert rt.network is not None and rt.interface is not None
            body = _resolve_network(rt.network, rt.interface, built, positions, rt.name)
            bt = BlockType(rt.name, Kind.COMPOSITE, rt.interface, composite=body)
        elif rt.kind is Kind.BASIC:
            bt = BlockType(rt.name, Kind.BASIC, rt.interface, basic=rt.basic)  # type: ignore[arg-type]
        else:
            bt = BlockType(rt.name, Kind.SERVICE, rt.interface, service=rt.service)  # type: ignore[arg-type]
        try:
            validate_type(bt)
        except ValidationError as e:
            raise InvalidDeclaration(e, rt.tok.line, rt.tok.column) from e
        built[rt.name] = bt

    app = None
    if raw_app is not None:
        name, itf, net, tok = raw_app
        positions[name] = (tok.line, tok.column)
        body = _resolve_network(net, itf, built, positions, name)
        app = ApplicationDecl(name, itf, body)
        try:
            validate_type(app.as_type(), allow_dotted=True)
            app.configure()
        except ValidationError as e:
            raise InvalidDeclaration(e, tok.line, tok.column) from e
    return NetlistDocument(tuple(built[rt.name] for rt in order), app, positions)


def _dependency_order(raw_types: list[_RawType], by_name: dict[str, _RawType]) -> list[_RawType]:
    order: list[_RawType] = []
    state: dict[str, int] = {}  # 1 = visiting, 2 = done

    def visit(rt: _RawType, stack: tuple[str, ...]) -> None:
        if state.get(rt.name) == 2:
            return
        if state.get(rt.name) == 1:
            cycle = (*stack[stack.index(rt.name):], rt.name)
            raise InvalidDeclaration(
                RecursiveComposite(f"composite types form a cycle: {' -> '.join(cycle)}", rt.name),
                rt.tok.line,
                rt.tok.column,
            )
        state[rt.name] = 1
        if rt.network is not None:
            for _, type_tok, _ in rt.network.instances:
                dep = by_name.get(type_tok.text)
                if dep is None:
                    raise UnknownType(f"unknown type {type_tok.text}", type_tok.line, type_tok.column)
                visit(dep, (*stack, rt.name))
        state[rt.name] = 2
        order.append(rt)

    for rt in raw_types:
        visit(rt, ())
    return order


def _resolve_network(
    net: _RawNetwork,
    itf: Interface,
    types: dict[str, BlockType],
    positions: dict[str, tuple[int, int]],
    owner: str,
) -> CompositeBody:
    inst_types: dict[str, BlockType] = {}
    order: list[str] = []
    for name, type_tok, tok in net.instances:
        if name in inst_types:
            raise DuplicateDecl(f"instance {name} declared twice", tok.line, tok.column)
        bt = types.get(type_tok.text)
        if bt is None:
            raise UnknownType(f"unknown type {type_tok.text}", type_tok.line, type_tok.column)
        inst_types[name] = bt
        order.append(name)
        positions[f"{owner}.{name}"] = (tok.line, tok.column)

    def instance_type(r: _Ref) -> BlockType:
        bt = inst_types.get(r.instance)
        if bt is None:
            raise UnresolvedReference(f"no instance named {r.instance}", r.tok.line, r.tok.column)
        return bt

    def need(ok: bool, what: str, r: _Ref) -> None:
        if not ok:
            raise UnresolvedReference(f"{r.instance}.{r.port} is not {what}", r.tok.line, r.tok.column)

    init_in = {n: {v.name: v.initial for v in inst_types[n].interface.data_inputs} for n in order}
    init_out = {n: {v.name: v.initial for v in inst_types[n].interface.data_outputs} for n in order}
    for r, value, vtok in net.inits:
        bt = instance_type(r)
        decl = bt.interface.input_var(r.port)
        target = init_in
        if decl is None:
            decl = bt.interface.output_var(r.port)
            target = init_out
        need(decl is not None, "a data variable", r)
        target[r.instance][r.port] = _coerce(value, decl.ty, vtok)  # type: ignore[union-attr]

    conns: dict[str, list[EventConn]] = {n: [] for n in order}
    for a, b in net.connects:
        need(a.port in instance_type(a).interface.event_outputs, "an output event", a)
        need(b.port in instance_type(b).interface.event_inputs, "an input event", b)
        conns[a.instance].append(EventConn(a.port, b.instance, b.port))
    data: dict[str, list[DataConn]] = {n: [] for n in order}
    for a, b in net.binds:
        need(instance_type(a).interface.input_var(a.port) is not None, "an input variable", a)
        need(instance_type(b).interface.output_var(b.port) is not None, "an output variable", b)
        data[a.instance].append(DataConn(a.port, b.instance, b.port))

    ev_in: dict[str, list[tuple[str, str]]] = {}
    data_in: dict[tuple[str, str], str] = {}
    for name_tok, r in net.bound_in:
        name = name_tok.text
        bt = instance_type(r)
        is_event = name in itf.event_inputs
        is_var = itf.input_var(name) is not None
        if is_event and is_var:
            raise NetlistSyntaxError(f"{name} is both an input event and an input variable", name_tok.line, name_tok.column)
        if is_event:
            need(r.port in bt.interface.event_inputs, "an input event", r)
            ev_in.setdefault(name, []).append((r.instance, r.port))
        elif is_var:
            need(bt.interface.input_var(r.port) is not None, "an input variable", r)
            data_in[(r.instance, r.port)] = name
        else:
            raise UnresolvedReference(f"{name} is not an input of {owner}", name_tok.line, name_tok.column)
    ev_out: dict[tuple[str, str], list[str]] = {}
    data_out: dict[str, tuple[str, str]] = {}
    for r, name_tok in net.bound_out:
        name = name_tok.text
        bt = instance_type(r)
        is_event = name in itf.event_outputs
        is_var = itf.output_var(name) is not None
        if is_event and is_var:
            raise NetlistSyntaxError(f"{name} is both an output event and an output variable", name_tok.line, name_tok.column)
        if is_event:
            need(r.port in bt.interface.event_outputs, "an output event", r)
            ev_out.setdefault((r.instance, r.port), []).append(name)
        elif is_var:
            need(bt.interface.output_var(r.port) is not None, "an output variable", r)
            if name in data_out:
                raise DuplicateDecl(f"{name} already has a source", name_tok.line, name_tok.column)
            data_out[name] = (r.instance, r.port)
        else:
            raise UnresolvedReference(f"{name} is not an output of {owner}", name_tok.line, name_tok.column)

    instances = tuple(
        BlockInstance(
            name=n,
            type_name=inst_types[n].name,
            event_conns=tuple(conns[n]),
            data_conns=tuple(data[n]),
            init_inputs=init_in[n],
            init_outputs=init_out[n],
        )
        for n in order
    )
    used: list[BlockType] = []
    for n in order:
        if inst_types[n] not in used:
            used.append(inst_types[n])
    return CompositeBody(
        inner_types=tuple(used),
        inner_instances=instances,
        boundary_event_in={k: tuple(v) for k, v in ev_in.items()},
        boundary_event_out={k: tuple(v) for k, v in ev_out.items()},
        boundary_data_in=data_in,
        boundary_data_out=data_out,
    )


def parse_expression(text: str) -> Expr:
    p = _Parser(text)
    e = p.full_expr()
    if p.tok.kind != "eof":
        raise p.error(f"unexpected {p.tok.text!r} after expression")
    return e


def parse_literal(text: str, tag: Tag) -> DataValue:
    """Literal in netlist syntax, coerced to ``tag`` (INT literals widen to REAL)."""
    p = _Parser(text)
    value, tok = p.literal()
    if p.tok.kind != "eof":
        raise p.error(f"unexpected {p.tok.text!r} after literal")
    return _coerce(value, tag, tok)


# -- writer -------------------------------------------------------------------------------

_PREC = {"OR": 1, "AND": 2, "=": 3, "<>": 3, "<": 4, "<=": 4, ">": 4, ">=": 4, "+": 5, "-": 5, "*": 6, "/": 6}
_UNARY_PREC = 7


def format_expr(e: Expr) -> str:
    return _fmt(e)[0]


def _fmt(e: Expr) -> tuple[str, int]:
    if isinstance(e, Lit):
        text = format_literal(e.value.payload)
        return text, (_UNARY_PREC if text.startswith("-") else 8)
    if isinstance(e, Var):
        return e.name, 8
    if isinstance(e, Unary):
        inner, p = _fmt(e.operand)
        # -(5) must stay a negation; bare -5 would read back as a literal
        if p < _UNARY_PREC or (e.op == "-" and isinstance(e.operand, Lit)):
            inner = f"({inner})"
        sep = " " if e.op == "NOT" else ""
        return f"{e.op}{sep}{inner}", _UNARY_PREC
    prec = _PREC[e.op]
    ls, lp = _fmt(e.left)
    rs, rp = _fmt(e.right)
    if lp < prec:
        ls = f"({ls})"
    if rp <= prec:
        rs = f"({rs})"
    return f"{ls} {e.op} {rs}", prec


def _with_clause(names: tuple[str, ...]) -> str:
    return f" with {', '.join(names)}" if names else ""


def _interface_lines(itf: Interface, prefix: str = "") -> Iterator[str]:
    for ev in itf.event_inputs:
        yield f"{prefix}event_input {ev}{_with_clause(itf.with_inputs(ev))};"
    for ev in itf.event_outputs:
        yield f"{prefix}event_output {ev}{_with_clause(itf.with_outputs(ev))};"
    for v in itf.data_inputs:
        yield f"{prefix}var_input {_var(v)};"
    for v in itf.data_outputs:
        yield f"{prefix}var_output {_var(v)};"


def _var(v: VarDecl) -> str:
    return f"{v.name} : {v.ty} := {format_literal(v.initial.payload)}"


def _network_lines(body: CompositeBody, types: dict[str, BlockType]) -> Iterator[str]:
    for inst in body.inner_instances:
        yield f"instance {inst.name} : {inst.type_name};"
    for inst in body.inner_instances:
        bt = types.get(inst.type_name) or body.type_named(inst.type_name)
        assert bt is not None
        for decls, values in ((bt.interface.data_inputs, inst.init_inputs), (bt.interface.data_outputs, inst.init_outputs)):
            for v in decls:
                if values[v.name] != v.initial:
                    yield f"init {inst.name}.{v.name} := {format_literal(values[v.name].payload)};"
    for inst in body.inner_instances:
        for c in inst.event_conns:
            yield f"connect {inst.name}.{c.event} -> {c.target}.{c.target_event};"
    for inst in body.inner_instances:
        for d in inst.data_conns:
            yield f"bind {inst.name}.{d.var} <- {d.source}.{d.source_var};"
    for ev, targets in body.boundary_event_in.items():
        for inst_name, iev in targets:
            yield f"boundary in {ev} -> {inst_name}.{iev};"
    for (inst_name, var), ivar in body.boundary_data_in.items():
        yield f"boundary in {ivar} -> {inst_name}.{var};"
    for (inst_name, oev), evs in body.boundary_event_out.items():
        for ev in evs:
            yield f"boundary out {inst_name}.{oev} -> {ev};"
    for var, (inst_name, ovar) in body.boundary_data_out.items():
        yield f"boundary out {inst_name}.{ovar} -> {var};"


def _type_lines(bt: BlockType, types: dict[str, BlockType]) -> Iterator[str]:
    yield f"fbtype {bt.name} {bt.kind} {{"
    for line in _interface_lines(bt.interface):
        yield "  " + line
    if bt.kind is Kind.SERVICE and bt.service not in (None, "none"):
        yield f"  behavior {bt.service};"
    if bt.basic is not None:
        body = bt.basic
        for v in body.internals:
            yield f"  var_internal {_var(v)};"
        yield "  ecc {"
        for s in body.states:
            acts = ", ".join(
                " ".join(p for p in ((f"do {a.algorithm}" if a.algorithm else ""), (f"emit {a.output}" if a.output else "")) if p)
                for a in s.actions
            )
            yield f"    state {s.name}{' ' + acts if acts else ''};"
        for t in body.transitions:
            on = f" on {t.event}" if t.event is not None else ""
            cond = "1" if t.condition == TRUE else format_expr(t.condition)
            yield f"    transition {t.source} -> {t.target}{on} when {cond};"
        yield "  }"
        for name, stmts in body.algorithms.items():
            yield f"  alg {name} {{"
            for st in stmts:
                yield f"    {st.target} := {format_expr(st.expr)};"
            yield "  }"
    if bt.composite is not None:
        for line in _network_lines(bt.composite, types):
            yield "  " + line
    yield "}"


def serialize(doc: NetlistDocument) -> str:
    """Canonical text for a document; empty documents give the empty string."""
    types = {t.name: t for t in doc.types}
    blocks = ["\n".join(_type_lines(t, types)) for t in doc.types]
    if doc.application is not None:
        app = doc.application
        lines = [f"application {app.name} {{"]
        lines += ["  " + line for line in _interface_lines(app.interface, "external ")]
        lines += ["  " + line for line in _network_lines(app.body, types)]
        lines.append("}")
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + ("\n" if blocks else "")


def application_decl(app: Application) -> ApplicationDecl:
    """Recover a writable declaration from a configured (possibly flattened) application."""
    boundary = (app.start, app.stop)
    inner = [i for i in app.instances if i.name not in boundary]
    start = app.instance_by_name[app.start]
    stop = app.instance_by_name[app.stop]
    ev_in: dict[str, list[tuple[str, str]]] = {}
    for c in start.event_conns:
        ev_in.setdefault(c.event, []).append((c.target, c.target_event))
    ev_out: dict[tuple[str, str], list[str]] = {}
    data_in: dict[tuple[str, str], str] = {}
    instances = []
    for inst in inner:
        kept_ev = []
        for c in inst.event_conns:
            if c.target == app.stop:
                ev_out.setdefault((inst.name, c.event), []).append(c.target_event)
            else:
                kept_ev.append(c)
        kept_data = []
        for d in inst.data_conns:
            if d.source == app.start:
                data_in[(inst.name, d.var)] = d.source_var
            else:
                kept_data.append(d)
        instances.append(
            BlockInstance(inst.name, inst.type_name, tuple(kept_ev), tuple(kept_data), inst.init_inputs, inst.init_outputs)
        )
    data_out = {d.var: (d.source, d.source_var) for d in stop.data_conns}
    used: list[BlockType] = []
    for inst in inner:
        bt = app.type_of(inst.name)
        if bt not in used:
            used.append(bt)
    body = CompositeBody(
        inner_types=tuple(used),
        inner_instances=tuple(instances),
        boundary_event_in={k: tuple(v) for k, v in ev_in.items()},
        boundary_event_out={k: tuple(v) for k, v in ev_out.items()},
        boundary_data_in=data_in,
        boundary_data_out=data_out,
    )
    return ApplicationDecl(app.name, app.interface, body)


def check_network(doc: NetlistDocument) -> None:
    """Re-run connection checks on the application network (used after edits)."""
    if doc.application is None:
        return
    types = {t.name: t for t in doc.types}
    body = doc.application.body
    validate_network(body.inner_instances, {i.name: types[i.type_name] for i in body.inner_instances})
