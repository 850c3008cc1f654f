"""Execution Control Charts for basic function blocks.

``run_ecc`` is the reference, value-level implementation: it copies the
runtime state, interprets guards and algorithms over tagged values and
returns a fresh state. The scheduler instead uses ``compile_basic`` which
generates one Python function per basic type that works in place on raw
payload dicts. Both implement the same run-to-completion loop:

1. take the first declared transition out of the current state whose event
   guard matches (or is absent) and whose condition holds;
2. enter the target state and run its actions in order, algorithm first,
   then output event;
3. from then on the input event counts as consumed, so only guard-free
   transitions can fire;
4. stop when nothing is enabled.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Mapping

from fbrun.expr import (
    RUNTIME_NAMESPACE,
    TRUE,
    Assign,
    ExecutionError,
    Expr,
    ValueTypeError,
    compile_expr,
    evaluate,
    execute_statements,
    infer,
    variables,
)
from fbrun.model import (
    BlockType,
    DanglingConnection,
    DataValue,
    DuplicateName,
    Interface,
    Tag,
    TypeMismatch,
    UnknownEvent,
    UnknownVar,
    ValidationError,
    VarDecl,
    same_payload,
)

DEFAULT_MAX_ITERATIONS = 10_000


class NonTermination(ExecutionError):
    pass


@dataclass(frozen=True)
class EccAction:
    algorithm: str | None = None
    output: str | None = None


@dataclass(frozen=True)
class EccState:
    name: str
    actions: tuple[EccAction, ...] = ()


@dataclass(frozen=True)
class EccTransition:
    source: str
    target: str
    event: str | None = None
    condition: Expr = TRUE


@dataclass(frozen=True)
class BasicBody:
    """Internal variables, ECC and algorithms of a basic type.

    The first state in ``states`` is the initial state.
    """

    internals: tuple[VarDecl, ...] = ()
    states: tuple[EccState, ...] = ()
    transitions: tuple[EccTransition, ...] = ()
    algorithms: Mapping[str, tuple[Assign, ...]] = field(default_factory=dict)

    @property
    def initial(self) -> str:
        return self.states[0].name

    def state_named(self, name: str) -> EccState:
        for s in self.states:
            if s.name == name:
                return s
        raise KeyError(name)


@dataclass(frozen=True)
class BasicRuntimeState:
    name: str
    inputs: Mapping[str, DataValue]
    outputs: Mapping[str, DataValue]
    internals: Mapping[str, DataValue]
    ecc_state: str


def var_tags(body: BasicBody, itf: Interface) -> dict[str, Tag]:
    return {v.name: v.ty for v in (*itf.data_inputs, *itf.data_outputs, *body.internals)}


def validate_basic_body(body: BasicBody, itf: Interface, where: str = "") -> None:
    if not body.states:
        raise ValidationError("ECC has no states", where)
    names = [s.name for s in body.states]
    seen: set[str] = set()
    for n in names:
        if n in seen:
            raise DuplicateName(f"duplicate ECC state {n!r}", where)
        seen.add(n)
    all_vars = [v.name for v in (*itf.data_inputs, *itf.data_outputs, *body.internals)]
    if len(set(all_vars)) != len(all_vars):
        dup = next(v for v in all_vars if all_vars.count(v) > 1)
        raise DuplicateName(f"variable {dup!r} declared more than once", where)
    for v in body.internals:
        if v.initial.tag is not v.ty:
            raise TypeMismatch(f"initial value of {v.name} is {v.initial.tag}, declared {v.ty}", where)
    tags = var_tags(body, itf)

    for alg, stmts in body.algorithms.items():
        for idx, st in enumerate(stmts):
            loc = f"{where}.{alg}[{idx}]" if where else f"{alg}[{idx}]"
            missing = (variables(st.expr) | {st.target}) - set(tags)
            if missing:
                raise UnknownVar(f"undeclared variable {sorted(missing)[0]!r}", loc)
            try:
                t = infer(st.expr, tags)
            except ValueTypeError as e:
                raise TypeMismatch(e.message, loc) from None
            if t is not tags[st.target]:
                raise TypeMismatch(f"cannot assign {t} to {st.target}:{tags[st.target]}", loc)

    for s in body.states:
        for a in s.actions:
            if a.algorithm is not None and a.algorithm not in body.algorithms:
                raise DanglingConnection(f"state {s.name} runs unknown algorithm {a.algorithm!r}", where)
            if a.output is not None and a.output not in itf.event_outputs:
                raise UnknownEvent(f"state {s.name} emits undeclared event {a.output!r}", where)
    for t in body.transitions:
        if t.source not in seen or t.target not in seen:
            raise DanglingConnection(f"transition {t.source} -> {t.target} names an unknown state", where)
        if t.event is not None and t.event not in itf.event_inputs:
            raise UnknownEvent(f"transition {t.source} -> {t.target} guards on undeclared event {t.event!r}", where)
        missing = variables(t.condition) - set(tags)
        if missing:
            raise UnknownVar(f"condition of {t.source} -> {t.target} uses {sorted(missing)[0]!r}", where)
        try:
            ct = infer(t.condition, tags)
        except ValueTypeError as e:
            raise TypeMismatch(e.message, where) from None
        if ct is not Tag.BOOL:
            raise TypeMismatch(f"condition of {t.source} -> {t.target} is {ct}, not BOOL", where)


def initial_runtime_state(name: str, bt: BlockType, inputs=None, outputs=None) -> BasicRuntimeState:
    body = bt.basic
    assert body is not None
    return BasicRuntimeState(
        name=name,
        inputs=dict(inputs) if inputs is not None else {v.name: v.initial for v in bt.interface.data_inputs},
        outputs=dict(outputs) if outputs is not None else {v.name: v.initial for v in bt.interface.data_outputs},
        internals={v.name: v.initial for v in body.internals},
        ecc_state=body.initial,
    )


def execute_algorithm(
    alg: tuple[Assign, ...], vars: Mapping[str, DataValue], name: str | None = None
) -> dict[str, DataValue]:
    """Execute an algorithm over a combined variable map; the input is not modified."""
    return execute_statements(alg, vars, algorithm=name)


def run_ecc(
    body: BasicBody,
    st: BasicRuntimeState,
    ev: str,
    max_iterations: int = DEFAULT_MAX_ITERATIONS,
) -> tuple[BasicRuntimeState, list[str]]:
    """Handle one input event to completion. Pure: ``st`` is left untouched."""
    scopes = {"I": dict(st.inputs), "O": dict(st.outputs), "L": dict(st.internals)}
    owner = {n: k for k, scope in scopes.items() for n in scope}
    q = st.ecc_state
    pending: str | None = ev
    emitted: list[str] = []
    taken = 0
    while True:
        env = {**scopes["I"], **scopes["O"], **scopes["L"]}
        for t in body.transitions:
            if t.source != q or (t.event is not None and t.event != pending):
                continue
            cond = evaluate(t.condition, env)
            if cond.tag is not Tag.BOOL:
                raise ValueTypeError(f"condition of {t.source} -> {t.target} is {cond.tag}")
            if cond.payload:
                break
        else:
            break
        taken += 1
        if taken > max_iterations:
            raise NonTermination(f"ECC exceeded {max_iterations} transitions (last state {q})")
        q = t.target
        pending = None
        for action in body.state_named(q).actions:
            if action.algorithm is not None:
                env = {**scopes["I"], **scopes["O"], **scopes["L"]}
                result = execute_algorithm(body.algorithms[action.algorithm], env, action.algorithm)
                for n, v in result.items():
                    scopes[owner[n]][n] = v
            if action.output is not None:
                emitted.append(action.output)
    new = replace(st, inputs=scopes["I"], outputs=scopes["O"], internals=scopes["L"], ecc_state=q)
    return new, emitted


# -- compiled route ------------------------------------------------------------------

EccFunction = Callable[[str, str, dict, dict, dict, list], str]

_compiled: dict[int, tuple[BlockType, int, EccFunction]] = {}
_CACHE_LIMIT = 1024


def compile_basic(bt: BlockType, max_iterations: int = DEFAULT_MAX_ITERATIONS) -> EccFunction:
    """Return ``f(ev, q, I, O, L, out) -> q`` for a validated basic type.

    ``I``/``O``/``L`` are raw payload dicts updated in place; emitted output
    events are appended to ``out``.
    """
    key = id(bt)
    hit = _compiled.get(key)
    if hit is not None and hit[0] is bt and hit[1] == max_iterations:
        return hit[2]
    fn = _generate(bt, max_iterations)
    if len(_compiled) >= _CACHE_LIMIT:
        _compiled.clear()
    _compiled[key] = (bt, max_iterations, fn)
    return fn


def _generate(bt: BlockType, max_iterations: int) -> EccFunction:
    body = bt.basic
    assert body is not None
    itf = bt.interface
    slots: dict[str, tuple[str, Tag]] = {}
    for container, decls in (("I", itf.data_inputs), ("O", itf.data_outputs), ("L", body.internals)):
        for v in decls:
            slots[v.name] = (container, v.ty)

    def action_lines(state: EccState, indent: str) -> list[str]:
        lines = []
        for a in state.actions:
            if a.algorithm is not None:
                for idx, st in enumerate(body.algorithms[a.algorithm]):
                    src, _ = compile_expr(st.expr, slots, a.algorithm, idx)
                    container, _ = slots[st.target]
                    lines.append(f"{indent}{container}[{st.target!r}] = {src}")
            if a.output is not None:
                lines.append(f"{indent}out.append({a.output!r})")
        return lines

    lines = ["def ecc(ev, q, I, O, L, out):", "    n = 0", "    while True:"]
    first = True
    for s in body.states:
        outgoing = [t for t in body.transitions if t.source == s.name]
        lines.append(f"        {'if' if first else 'elif'} q == {s.name!r}:")
        first = False
        branch = "if"
        for t in outgoing:
            conds = []
            if t.event is not None:
                conds.append(f"ev == {t.event!r}")
            if t.condition != TRUE:
                src, _ = compile_expr(t.condition, slots)
                conds.append(src)
            test = " and ".join(conds) if conds else "True"
            lines.append(f"            {branch} {test}:")
            lines.append(f"                q = {t.target!r}")
            lines.extend(action_lines(body.state_named(t.target), "                "))
            branch = "elif"
        if outgoing:
            lines.append("            else:")
            lines.append("                return q")
        else:
            lines.append("            return q")
    lines.append("        else:")
    lines.append("            return q")
    lines.append("        ev = None")
    lines.append("        n += 1")
    lines.append(f"        if n > {max_iterations}:")
    lines.append(f"            raise _NonTermination('ECC exceeded {max_iterations} transitions (last state ' + q + ')')")
    source = "\n".join(lines)
    namespace = dict(RUNTIME_NAMESPACE, _NonTermination=NonTermination)
    exec(compile(source, f"<ecc {bt.name}>", "exec"), namespace)
    fn = namespace["ecc"]
    fn.__source__ = source  # type: ignore[attr-defined]
    return fn


def run_ecc_compiled(
    bt: BlockType, st: BasicRuntimeState, ev: str, max_iterations: int = DEFAULT_MAX_ITERATIONS
) -> tuple[BasicRuntimeState, list[str]]:
    """Same contract as :func:`run_ecc` but through the generated function."""
    fn = compile_basic(bt, max_iterations)
    tags = var_tags(bt.basic, bt.interface)  # type: ignore[arg-type]
    raw = [{n: v.payload for n, v in m.items()} for m in (st.inputs, st.outputs, st.internals)]
    out: list[str] = []
    q = fn(ev, st.ecc_state, raw[0], raw[1], raw[2], out)
    back = [{n: _retag(v, tags[n], old[n]) for n, v in r.items()} for r, old in zip(raw, (st.inputs, st.outputs, st.internals))]
    return replace(st, inputs=back[0], outputs=back[1], internals=back[2], ecc_state=q), out


def _retag(raw, tag: Tag, old: DataValue) -> DataValue:
    if same_payload(raw, old.payload):
        return old
    return DataValue(tag, raw)
