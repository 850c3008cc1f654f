"""Expression and statement language used by algorithms and ECC guards.

Two evaluation routes exist on purpose:

* :func:`evaluate` / :func:`execute_statements` interpret the AST over
  tagged :class:`DataValue` maps and check tags at run time.
* :func:`compile_expr` type-checks statically and emits Python source over
  raw payloads; the ECC compiler stitches these into one function per type.

Both apply the same semantics: INT is 64-bit two's complement with
wrap-around, INT division truncates toward zero, REAL follows IEEE-754.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Union

from fbrun.model import INT_MIN, DataValue, Tag

ARITH = ("+", "-", "*", "/")
EQUALITY = ("=", "<>")
ORDER = ("<", "<=", ">", ">=")
LOGIC = ("AND", "OR")
BINARY_OPS = ARITH + EQUALITY + ORDER + LOGIC


@dataclass(frozen=True)
class Lit:
    value: DataValue


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Unary:
    op: str  # "-" or "NOT"
    operand: Expr


@dataclass(frozen=True)
class Binary:
    op: str
    left: Expr
    right: Expr


Expr = Union[Lit, Var, Unary, Binary]

TRUE = Lit(DataValue(Tag.BOOL, True))


@dataclass(frozen=True)
class Assign:
    target: str
    expr: Expr


def variables(expr: Expr) -> set[str]:
    if isinstance(expr, Var):
        return {expr.name}
    if isinstance(expr, Unary):
        return variables(expr.operand)
    if isinstance(expr, Binary):
        return variables(expr.left) | variables(expr.right)
    return set()


class ExecutionError(Exception):
    """Run-time fault inside a block.

    The scheduler fills in ``path`` (hierarchical instance path) as the error
    propagates outwards.
    """

    def __init__(self, message: str, *, algorithm: str | None = None, statement: int | None = None) -> None:
        self.message = message
        self.algorithm = algorithm
        self.statement = statement
        self.path: str | None = None
        super().__init__(message)

    def __str__(self) -> str:
        loc = []
        if self.path:
            loc.append(f"instance {self.path}")
        if self.algorithm is not None:
            loc.append(f"algorithm {self.algorithm}")
        if self.statement is not None:
            loc.append(f"statement {self.statement}")
        return f"{', '.join(loc)}: {self.message}" if loc else self.message


class DivisionByZero(ExecutionError):
    pass


class ValueTypeError(ExecutionError, TypeError):
    pass


def wrap_int(v: int) -> int:
    return ((v - INT_MIN) & 0xFFFFFFFFFFFFFFFF) + INT_MIN


def int_div(a: int, b: int, algorithm: str | None = None, statement: int | None = None) -> int:
    if b == 0:
        raise DivisionByZero("INT division by zero", algorithm=algorithm, statement=statement)
    q = abs(a) // abs(b)
    return wrap_int(q if (a < 0) == (b < 0) else -q)


def real_div(a: float, b: float) -> float:
    if b == 0.0:
        if a == 0.0 or math.isnan(a):
            return math.nan
        return math.copysign(math.inf, a) * math.copysign(1.0, b)
    return a / b


# -- static typing -------------------------------------------------------------


def result_tag(op: str, left: Tag, right: Tag) -> Tag | None:
    """Tag produced by a binary operator, or ``None`` if the operands are illegal."""
    if left is not right:
        return None
    if op in ARITH:
        return left if left in (Tag.INT, Tag.REAL) else None
    if op in EQUALITY:
        return Tag.BOOL
    if op in ORDER:
        return Tag.BOOL if left is not Tag.BOOL else None
    if op in LOGIC:
        return Tag.BOOL if left is Tag.BOOL else None
    return None


def unary_tag(op: str, operand: Tag) -> Tag | None:
    if op == "-":
        return operand if operand in (Tag.INT, Tag.REAL) else None
    if op == "NOT":
        return Tag.BOOL if operand is Tag.BOOL else None
    return None


def infer(expr: Expr, tags: Mapping[str, Tag]) -> Tag:
    """Static tag of ``expr``; raises ValueTypeError or KeyError for unknown vars."""
    if isinstance(expr, Lit):
        return expr.value.tag
    if isinstance(expr, Var):
        return tags[expr.name]
    if isinstance(expr, Unary):
        t = infer(expr.operand, tags)
        r = unary_tag(expr.op, t)
        if r is None:
            raise ValueTypeError(f"operator {expr.op} not defined on {t}")
        return r
    lt, rt = infer(expr.left, tags), infer(expr.right, tags)
    r = result_tag(expr.op, lt, rt)
    if r is None:
        raise ValueTypeError(f"operator {expr.op} not defined on {lt}, {rt}")
    return r


# -- reference interpreter -------------------------------------------------------


def _apply(op: str, a: DataValue, b: DataValue) -> DataValue:
    tag = result_tag(op, a.tag, b.tag)
    if tag is None:
        raise ValueTypeError(f"operator {op} not defined on {a.tag}, {b.tag}")
    x, y = a.payload, b.payload
    if op == "+":
        v = x + y
    elif op == "-":
        v = x - y
    elif op == "*":
        v = x * y
    elif op == "/":
        v = int_div(x, y) if tag is Tag.INT else real_div(x, y)
    elif op == "=":
        v = x == y
    elif op == "<>":
        v = x != y
    elif op == "<":
        v = x < y
    elif op == "<=":
        v = x <= y
    elif op == ">":
        v = x > y
    elif op == ">=":
        v = x >= y
    elif op == "AND":
        v = x and y
    else:
        v = x or y
    if tag is Tag.INT:
        v = wrap_int(v)
    return DataValue(tag, v)


def evaluate(expr: Expr, env: Mapping[str, DataValue]) -> DataValue:
    if isinstance(expr, Lit):
        return expr.value
    if isinstance(expr, Var):
        try:
            return env[expr.name]
        except KeyError:
            raise ValueTypeError(f"undefined variable {expr.name}") from None
    if isinstance(expr, Unary):
        v = evaluate(expr.operand, env)
        tag = unary_tag(expr.op, v.tag)
        if tag is None:
            raise ValueTypeError(f"operator {expr.op} not defined on {v.tag}")
        if expr.op == "NOT":
            return DataValue(Tag.BOOL, not v.payload)
        return DataValue(tag, wrap_int(-v.payload) if tag is Tag.INT else -v.payload)
    # AND/OR evaluate both sides: expressions are side-effect free, and it keeps
    # tag errors independent of operand values.
    return _apply(expr.op, evaluate(expr.left, env), evaluate(expr.right, env))


def execute_statements(
    stmts: tuple[Assign, ...], env: Mapping[str, DataValue], algorithm: str | None = None
) -> dict[str, DataValue]:
    """Run assignments in order over a copy of ``env`` and return the copy."""
    out = dict(env)
    for idx, st in enumerate(stmts):
        try:
            v = evaluate(st.expr, out)
            if st.target not in out:
                raise ValueTypeError(f"assignment to undefined variable {st.target}")
            if out[st.target].tag is not v.tag:
                raise ValueTypeError(f"cannot assign {v.tag} to {st.target}:{out[st.target].tag}")
        except ExecutionError as e:
            e.algorithm, e.statement = algorithm, idx
            raise
        out[st.target] = v
    return out


# -- code generation --------------------------------------------------------------

_MASK = 0xFFFFFFFFFFFFFFFF
_PYOP = {"=": "==", "<>": "!=", "<": "<", "<=": "<=", ">": ">", ">=": ">="}


def _wrap_src(src: str) -> str:
    return f"(((({src}) + {-INT_MIN}) & {_MASK}) - {-INT_MIN})"


def compile_expr(
    expr: Expr,
    slots: Mapping[str, tuple[str, Tag]],
    algorithm: str | None = None,
    statement: int | None = None,
) -> tuple[str, Tag]:
    """Python source and tag for ``expr``.

    ``slots`` maps a variable to ``(container, tag)`` where container is the
    name of the dict holding it in the generated code (``I``, ``O`` or ``L``).
    """
    if isinstance(expr, Lit):
        v = expr.value.payload
        if isinstance(v, float) and not math.isfinite(v):
            return f"float({repr(v)!r})", Tag.REAL
        return repr(v), expr.value.tag
    if isinstance(expr, Var):
        container, tag = slots[expr.name]
        return f"{container}[{expr.name!r}]", tag
    if isinstance(expr, Unary):
        src, t = compile_expr(expr.operand, slots, algorithm, statement)
        tag = unary_tag(expr.op, t)
        if tag is None:
            raise ValueTypeError(f"operator {expr.op} not defined on {t}", algorithm=algorithm, statement=statement)
        if expr.op == "NOT":
            return f"(not {src})", tag
        return (_wrap_src(f"-{src}") if tag is Tag.INT else f"(-{src})"), tag
    ls, lt = compile_expr(expr.left, slots, algorithm, statement)
    rs, rt = compile_expr(expr.right, slots, algorithm, statement)
    tag = result_tag(expr.op, lt, rt)
    if tag is None:
        raise ValueTypeError(
            f"operator {expr.op} not defined on {lt}, {rt}", algorithm=algorithm, statement=statement
        )
    if expr.op == "/":
        if tag is Tag.INT:
            return f"_idiv({ls}, {rs}, {algorithm!r}, {statement!r})", tag
        return f"_rdiv({ls}, {rs})", tag
    if expr.op in ARITH:
        src = f"({ls} {expr.op} {rs})"
        return (_wrap_src(src) if tag is Tag.INT else src), tag
    if expr.op in LOGIC:
        # & and | on bools evaluate both operands, matching the interpreter
        return f"({ls} {'&' if expr.op == 'AND' else '|'} {rs})", tag
    return f"({ls} {_PYOP[expr.op]} {rs})", tag


RUNTIME_NAMESPACE = {"_idiv": int_div, "_rdiv": real_div, "float": float}
