"""Helpers shared by the test modules: corpus access, script runs, generators."""

from __future__ import annotations

import random
from functools import lru_cache
from typing import Any, Callable

from fbrun import ExternalInput, load_corpus, start_state
from fbrun.ecc import BasicBody, EccAction, EccState, EccTransition
from fbrun.expr import Assign, Binary, Var
from fbrun.model import (
    BlockInstance,
    BlockType,
    CompositeBody,
    DataConn,
    EventConn,
    Interface,
    Kind,
    Tag,
    VarDecl,
    instantiate,
    validate_type,
)
from fbrun.scheduler import total_counts
from fbrun.subapp import Application

CORPUS_APPS = ("x2y2.fbn", "motor.fbn", "nested.fbn")


@lru_cache(maxsize=None)
def corpus_doc(name: str):
    return load_corpus(name)


@lru_cache(maxsize=None)
def corpus_app(name: str) -> Application:
    return corpus_doc(name).application.configure()


@lru_cache(maxsize=None)
def x2y2_subapp() -> Application:
    from fbrun import configure_subapplication

    return configure_subapplication(corpus_doc("x2y2.fbn").type_named("X2Y2"), "x2y2")


def plain_outputs(outputs) -> list[tuple[str, tuple]]:
    """External outputs as comparable tuples (event, ((var, tag, payload), ...))."""
    return [(o.event, tuple((n, v.tag, v.payload) for n, v in o.values.items())) for o in outputs]


class ConservationLog:
    """Collects (enqueued, dequeued, pending) at every quiescence point."""

    def __init__(self) -> None:
        self.points: list[tuple[int, int, int]] = []

    def record(self, state) -> None:
        self.points.append(total_counts(state))

    def violations(self) -> list[tuple[int, int, int]]:
        return [p for p in self.points if p[0] != p[1] or p[2] != 0]


CONSERVATION = ConservationLog()


def run_script(
    app: Application,
    script: list[ExternalInput],
    *,
    trace: Callable | None = None,
    max_steps: int = 100_000,
    log: ConservationLog | None = CONSERVATION,
):
    """Inject each event, run to quiescence, return (outputs, state)."""
    state = start_state(app, trace=trace)
    eng = state.engine
    outputs = []
    for inp in script:
        eng.inject(inp)
        produced, _ = eng.run_to_quiescence(max_steps)
        outputs.extend(produced)
        if log is not None:
            log.record(state)
    return outputs, state


_RANGES = {
    "x2y2.fbn": {"DI1": (-1000, 1000), "DI2": (-1000, 1000)},
    "motor.fbn": {"SP": (-500, 4000), "MEAS": (-200, 3500)},
    "nested.fbn": {"A": (-1000, 1000), "B": (-1000, 1000)},
}


def random_value(rng: random.Random, tag: Tag, span: tuple[int, int] = (-1000, 1000)) -> Any:
    if tag is Tag.INT:
        return rng.randint(*span)
    if tag is Tag.BOOL:
        return rng.random() < 0.5
    if tag is Tag.REAL:
        return rng.uniform(*span)
    return "".join(rng.choice("abc xyz") for _ in range(rng.randint(0, 6)))


def random_script(app: Application, rng: random.Random, length: int, ranges: dict | None = None) -> list[ExternalInput]:
    start_itf = app.type_of(app.start).interface
    events = [ev for _, ev in app.external_inputs]
    ranges = ranges or {}
    script = []
    for _ in range(length):
        ev = rng.choice(events)
        values = {}
        for var in start_itf.with_outputs(ev):
            decl = start_itf.output_var(var)
            values[var] = random_value(rng, decl.ty, ranges.get(var, (-1000, 1000)))
        script.append(ExternalInput(ev, values))
    return script


def corpus_script(name: str, rng: random.Random, length: int) -> list[ExternalInput]:
    return random_script(corpus_app(name), rng, length, _RANGES.get(name))


# -- random composite types ------------------------------------------------------------


def _relay_type(name: str, n_in: int, n_out: int, n_vars: int) -> BlockType:
    """Basic type whose every input event copies the first var to all outputs."""
    ins = tuple(f"I{j}" for j in range(n_in))
    outs = tuple(f"O{j}" for j in range(n_out))
    d_in = tuple(VarDecl(f"X{j}", Tag.INT) for j in range(n_vars))
    d_out = tuple(VarDecl(f"Y{j}", Tag.INT) for j in range(n_vars))
    itf = Interface(
        event_inputs=ins,
        data_inputs=d_in,
        input_assoc={e: tuple(v.name for v in d_in) for e in ins},
        event_outputs=outs,
        data_outputs=d_out,
        output_assoc={e: tuple(v.name for v in d_out) for e in outs},
    )
    states = [EccState("IDLE")]
    transitions = []
    algorithms = {}
    for j, ev in enumerate(ins):
        alg = f"A{j}"
        algorithms[alg] = tuple(Assign(y.name, Binary("+", Var(x.name), Var(x.name))) for x, y in zip(d_in, d_out))
        acts = (EccAction(alg, outs[j % n_out] if outs else None),)
        states.append(EccState(f"S{j}", acts))
        transitions.append(EccTransition("IDLE", f"S{j}", ev))
        transitions.append(EccTransition(f"S{j}", "IDLE"))
    return BlockType(name, Kind.BASIC, itf, basic=BasicBody((), tuple(states), tuple(transitions), algorithms))


def random_composite(rng: random.Random, name: str = "RND") -> BlockType:
    """A validated composite type with random interface, inner network and boundary wiring."""
    n_vars = rng.randint(0, 2)
    inner_types = [
        _relay_type(f"R{t}", rng.randint(1, 3), rng.randint(0, 3), n_vars) for t in range(rng.randint(1, 3))
    ]
    e_i = tuple(f"EI{j}" for j in range(rng.randint(0, 3)))
    e_o = tuple(f"EO{j}" for j in range(rng.randint(0, 3)))
    d_i = tuple(VarDecl(f"DI{j}", Tag.INT) for j in range(rng.randint(0, 3)))
    d_o = tuple(VarDecl(f"DO{j}", Tag.INT) for j in range(rng.randint(0, 3)))
    g = Interface(
        event_inputs=e_i,
        data_inputs=d_i,
        input_assoc={e: tuple(v.name for v in d_i if rng.random() < 0.5) for e in e_i},
        event_outputs=e_o,
        data_outputs=d_o,
        output_assoc={e: tuple(v.name for v in d_o if rng.random() < 0.5) for e in e_o},
    )
    instances = []
    for k in range(rng.randint(0, 5)):
        bt = rng.choice(inner_types)
        instances.append(instantiate(bt, f"b{k}"))
    types_of = {i.name: next(t for t in inner_types if t.name == i.type_name) for i in instances}

    wired = []
    bound_data: set[tuple[str, str]] = set()
    for inst in instances:
        itf = types_of[inst.name].interface
        ev_conns = []
        for oev in itf.event_outputs:
            for _ in range(rng.randint(0, 2)):
                if instances:
                    tgt = rng.choice(instances)
                    ev_conns.append(EventConn(oev, tgt.name, rng.choice(types_of[tgt.name].interface.event_inputs)))
        data_conns = []
        for v in itf.data_inputs:
            if instances and rng.random() < 0.4:
                src = rng.choice(instances)
                outs = types_of[src.name].interface.data_outputs
                if outs:
                    data_conns.append(DataConn(v.name, src.name, rng.choice(outs).name))
                    bound_data.add((inst.name, v.name))
        wired.append(BlockInstance(inst.name, inst.type_name, tuple(ev_conns), tuple(data_conns), inst.init_inputs, inst.init_outputs))

    ev_in = {}
    for ev in e_i:
        if instances:
            tgts = {(t.name, rng.choice(types_of[t.name].interface.event_inputs)) for t in rng.sample(instances, rng.randint(0, len(instances)))}
            if tgts:
                ev_in[ev] = tuple(sorted(tgts))
    ev_out = {}
    for inst in instances:
        for oev in types_of[inst.name].interface.event_outputs:
            if e_o and rng.random() < 0.5:
                ev_out[(inst.name, oev)] = tuple(sorted(set(rng.sample(e_o, rng.randint(1, len(e_o))))))
    data_in = {}
    for inst in instances:
        for v in types_of[inst.name].interface.data_inputs:
            if d_i and (inst.name, v.name) not in bound_data and rng.random() < 0.5:
                data_in[(inst.name, v.name)] = rng.choice(d_i).name
    data_out = {}
    for v in d_o:
        sources = [(i.name, o.name) for i in instances for o in types_of[i.name].interface.data_outputs]
        if sources and rng.random() < 0.7:
            data_out[v.name] = rng.choice(sources)

    body = CompositeBody(
        inner_types=tuple(inner_types),
        inner_instances=tuple(wired),
        boundary_event_in=ev_in,
        boundary_event_out=ev_out,
        boundary_data_in=data_in,
        boundary_data_out=data_out,
    )
    bt = BlockType(name, Kind.COMPOSITE, g, composite=body)
    validate_type(bt)
    return bt


# -- acceptance reporting ----------------------------------------------------------------

ACCEPTANCE: dict[int, str] = {}


class criterion:
    """Context manager recording one PASS/FAIL line for an acceptance criterion."""

    def __init__(self, number: int, title: str) -> None:
        self.number = number
        self.title = title
        self.detail = ""

    def __enter__(self) -> "criterion":
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        verdict = "PASS" if exc_type is None else "FAIL"
        line = f"criterion {self.number} {verdict}: {self.title}"
        if self.detail:
            line += f" ({self.detail})"
        if exc_type is not None:
            line += f" -- {exc_type.__name__}: {exc}".rstrip(": ")
        ACCEPTANCE[self.number] = line
        print(line)
        return False
