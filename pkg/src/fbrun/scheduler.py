"""Event scheduling for applications and subapplications.

The pending queue is a FIFO of ``(instance, input event)`` pairs. Each step
dequeues one pair and hands it to the instance's event handler:

* basic blocks sample their associated inputs, run the ECC and send the
  emitted output events along their event connections;
* composite blocks inject the event into their own subapplication, run it to
  quiescence and forward whatever reached the stop block;
* service blocks are dequeued without running anything.

An :class:`Engine` is compiled once per :class:`ApplicationState`: it binds
handler closures directly to the entry dicts, so the state must only be
mutated through the engine while it is in use.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, Mapping, NamedTuple

from fbrun.ecc import DEFAULT_MAX_ITERATIONS, compile_basic
from fbrun.expr import ExecutionError, ValueTypeError
from fbrun.model import DataValue, Kind, payload_matches
from fbrun.subapp import (
    Application,
    ApplicationState,
    BasicEntry,
    CompositeEntry,
)

DEFAULT_MAX_STEPS = 1_000_000
DEFAULT_NESTED_MAX_STEPS = 100_000
EXTERNAL = "EXTERNAL"


class NonQuiescence(ExecutionError):
    pass


class NestedNonQuiescence(NonQuiescence):
    pass


class UnknownExternalEvent(KeyError):
    pass


class ExternalInputMismatch(ValueError):
    pass


class ExternalInput(NamedTuple):
    """External input event with values for its associated variables.

    Values may be :class:`DataValue` or raw payloads of the declared tag.
    """

    event: str
    values: Mapping[str, Any] = {}


class ExternalOutput(NamedTuple):
    event: str
    values: dict[str, DataValue]


@dataclass(frozen=True)
class TraceRecord:
    step: int
    instance: str
    event: str
    kind: str
    emitted: tuple[tuple[str, str], ...]
    data_after: dict[str, Any]

    def to_dict(self) -> dict[str, Any]:
        return {
            "step": self.step,
            "instance": self.instance,
            "event": self.event,
            "kind": self.kind,
            "emitted": [list(e) for e in self.emitted],
            "data_after": dict(self.data_after),
        }


TraceSink = Callable[[TraceRecord], None]


class _Clock:
    __slots__ = ("step",)

    def __init__(self) -> None:
        self.step = 0


# delivery kinds
_ENQUEUE = 0
_EXTERNAL = 1
_SERVICE = 2


class Engine:
    """Scheduler bound to one application state (and, recursively, its nested states)."""

    def __init__(
        self,
        state: ApplicationState,
        *,
        nested_max_steps: int = DEFAULT_NESTED_MAX_STEPS,
        ecc_max_iterations: int = DEFAULT_MAX_ITERATIONS,
        trace: TraceSink | None = None,
        path: str = "",
        clock: _Clock | None = None,
    ) -> None:
        self.state = state
        self.app: Application = state.app
        self.nested_max_steps = nested_max_steps
        self.ecc_max_iterations = ecc_max_iterations
        self.trace = trace
        self.path = path
        self.clock = clock or _Clock()
        self.outputs: list[tuple[str, dict[str, Any]]] = []
        self.console: list[str] = []
        self.nested: dict[str, Engine] = {}
        state.engine = self
        self._build()

    # -- compilation -------------------------------------------------------------------

    def _build(self) -> None:
        app, entries = self.app, self.state.entries
        external_outputs = set(app.external_outputs)
        self._external_inputs = {ev for _, ev in app.external_inputs}

        # (instance, output event) -> deliveries in declaration order
        self.routes: dict[str, dict[str, tuple]] = {}
        # instance -> input event -> ((var, source outputs dict, source var), ...)
        self.samplers: dict[str, dict[str, tuple]] = {}
        self.handlers: dict[str, Callable[[str], list] | None] = {}
        self.kinds: dict[str, str] = {}

        for inst in app.instances:
            bt = app.type_of(inst.name)
            itf = bt.interface
            sources = {c.var: c for c in inst.data_conns}
            samplers = {}
            for ev in itf.event_inputs:
                plan = []
                for var in itf.with_inputs(ev):
                    c = sources.get(var)
                    if c is not None:
                        plan.append((var, entries[c.source].outputs, c.source_var))
                samplers[ev] = tuple(plan)
            self.samplers[inst.name] = samplers

            routes: dict[str, list] = {ev: [] for ev in itf.event_outputs}
            for c in inst.event_conns:
                target_type = app.type_of(c.target)
                if (c.target, c.target_event) in external_outputs:
                    routes[c.event].append((_EXTERNAL, c.target, c.target_event))
                elif target_type.kind is Kind.SERVICE and target_type.service not in (None, "none"):
                    routes[c.event].append((_SERVICE, c.target, c.target_event))
                else:
                    routes[c.event].append((_ENQUEUE, c.target, c.target_event))
            self.routes[inst.name] = {ev: tuple(r) for ev, r in routes.items()}
            self.kinds[inst.name] = bt.kind.name

        for inst in app.instances:
            bt = app.type_of(inst.name)
            entry = entries[inst.name]
            if bt.kind is Kind.BASIC:
                self.handlers[inst.name] = self._basic_handler(inst.name, bt, entry)
            elif bt.kind is Kind.COMPOSITE:
                assert isinstance(entry, CompositeEntry)
                sub = Engine(
                    entry.nested,
                    nested_max_steps=self.nested_max_steps,
                    ecc_max_iterations=self.ecc_max_iterations,
                    trace=self.trace,
                    path=f"{self.path}{inst.name}.",
                    clock=self.clock,
                )
                self.nested[inst.name] = sub
                self.handlers[inst.name] = self._composite_handler(inst.name, bt, entry, sub)
            else:
                self.handlers[inst.name] = None

        self._stop_tags = {v.name: v.ty for v in app.type_of(app.stop).interface.data_inputs}

    def _basic_handler(self, name: str, bt, entry: BasicEntry) -> Callable[[str], list]:
        ecc = compile_basic(bt, self.ecc_max_iterations)
        samplers = self.samplers[name]
        inputs, outputs, internals = entry.inputs, entry.outputs, entry.internals
        send = self._send

        def handle(ev: str) -> list:
            for var, src, svar in samplers[ev]:
                inputs[var] = src[svar]
            out: list[str] = []
            try:
                entry.ecc_state = ecc(ev, entry.ecc_state, inputs, outputs, internals, out)
            except ExecutionError as e:
                if e.path is None:
                    e.path = self.path + name
                raise
            emitted: list = []
            for oev in out:
                send(name, oev, emitted)
            return emitted

        return handle

    def _composite_handler(self, name: str, bt, entry: CompositeEntry, sub: Engine) -> Callable[[str], list]:
        samplers = self.samplers[name]
        itf = bt.interface
        inputs, outputs = entry.inputs, entry.outputs
        send = self._send
        with_inputs = {ev: itf.with_inputs(ev) for ev in itf.event_inputs}
        with_outputs = {ev: itf.with_outputs(ev) for ev in itf.event_outputs}
        start_out = entry.nested.entries[sub.app.start].outputs
        limit = self.nested_max_steps

        def handle(ev: str) -> list:
            for var, src, svar in samplers[ev]:
                inputs[var] = src[svar]
            # start block: copy the associated inputs, then fire its event
            for var in with_inputs[ev]:
                start_out[var] = inputs[var]
            sub._fire_start(ev)
            mark = len(sub.outputs)
            sub._run(limit, nested=True)
            produced = sub.outputs[mark:]
            del sub.outputs[mark:]
            emitted: list = []
            for oev, values in produced:
                for var in with_outputs[oev]:
                    outputs[var] = values[var]
                send(name, oev, emitted)
            return emitted

        return handle

    # -- event movement -------------------------------------------------------------------

    def _send(self, src: str, oev: str, emitted: list | None) -> None:
        state = self.state
        for kind, target, tev in self.routes[src][oev]:
            if kind == _ENQUEUE:
                state.pending.append((target, tev))
                state.enqueued += 1
            elif kind == _EXTERNAL:
                self._latch_stop(target, tev)
            else:
                self._service_behavior(target, tev)
                state.pending.append((target, tev))
                state.enqueued += 1
            if emitted is not None:
                emitted.append((EXTERNAL if kind == _EXTERNAL else target, tev))

    def _latch_stop(self, stop: str, ev: str) -> None:
        entry = self.state.entries[stop]
        for var, src, svar in self.samplers[stop][ev]:
            entry.inputs[var] = src[svar]
        itf = self.app.type_of(stop).interface
        self.outputs.append((ev, {var: entry.inputs[var] for var in itf.with_inputs(ev)}))

    def _service_behavior(self, name: str, ev: str) -> None:
        """Built-in behaviours of plain service blocks, run when an event is delivered.

        ``latch`` samples the associated inputs and copies each to the output of
        the same name; ``console`` records a line with the sampled values.
        """
        entry = self.state.entries[name]
        for var, src, svar in self.samplers[name][ev]:
            entry.inputs[var] = src[svar]
        bt = self.app.type_of(name)
        if bt.service == "latch":
            for var, value in entry.inputs.items():
                if var in entry.outputs:
                    entry.outputs[var] = value
        elif bt.service == "console":
            shown = " ".join(f"{v}={entry.inputs[v]!r}" for v in bt.interface.with_inputs(ev))
            self.console.append(f"{self.path}{name}.{ev} {shown}".rstrip())

    def _fire_start(self, ev: str) -> None:
        self._send(self.app.start, ev, None)

    # -- public operations -------------------------------------------------------------------

    def select(self) -> tuple[str, str] | None:
        pending = self.state.pending
        if not pending:
            return None
        self.state.dequeued += 1
        return pending.popleft()

    def step(self) -> TraceRecord | None:
        """Handle the head of the queue. Returns the trace record, if tracing."""
        picked = self.select()
        if picked is None:
            return None
        return self._dispatch(*picked)

    def _dispatch(self, name: str, ev: str) -> TraceRecord | None:
        handler = self.handlers[name]
        emitted = handler(ev) if handler is not None else []
        if self.trace is None:
            return None
        self.clock.step += 1
        entry = self.state.entries[name]
        rec = TraceRecord(
            step=self.clock.step,
            instance=self.path + name,
            event=ev,
            kind=self.kinds[name],
            emitted=tuple(emitted),
            data_after=dict(entry.outputs),
        )
        self.trace(rec)
        return rec

    def _run(self, max_steps: int, nested: bool = False) -> int:
        state = self.state
        pending = state.pending
        popleft = pending.popleft
        handlers = self.handlers
        traced = self.trace is not None
        steps = 0
        while pending:
            if steps >= max_steps:
                cls = NestedNonQuiescence if nested else NonQuiescence
                err = cls(f"queue not empty after {max_steps} steps ({len(pending)} pending)")
                err.path = self.path.rstrip(".") or None
                raise err
            steps += 1
            name, ev = popleft()
            state.dequeued += 1
            if traced:
                self._dispatch(name, ev)
            else:
                handler = handlers[name]
                if handler is not None:
                    handler(ev)
        return steps

    def inject(self, inp: ExternalInput) -> None:
        app = self.app
        if inp.event not in self._external_inputs:
            raise UnknownExternalEvent(inp.event)
        start_itf = app.type_of(app.start).interface
        expected = start_itf.with_outputs(inp.event)
        given = dict(inp.values)
        if set(given) != set(expected):
            raise ExternalInputMismatch(
                f"event {inp.event} carries {sorted(expected)}, got values for {sorted(given)}"
            )
        start_out = self.state.entries[app.start].outputs
        raw = {}
        for var in expected:
            decl = start_itf.output_var(var)
            assert decl is not None
            v = given[var]
            if isinstance(v, DataValue):
                if v.tag is not decl.ty:
                    raise ValueTypeError(f"{var} expects {decl.ty}, got {v.tag}")
                v = v.payload
            elif not payload_matches(decl.ty, v):
                raise ValueTypeError(f"{var} expects {decl.ty}, got {v!r}")
            raw[var] = v
        start_out.update(raw)
        self._fire_start(inp.event)

    def inject_raw(self, event: str, values: Mapping[str, Any]) -> None:
        """Unchecked inject for hot loops; ``values`` must already be well typed."""
        self.state.entries[self.app.start].outputs.update(values)
        self._fire_start(event)

    def run_to_quiescence(self, max_steps: int = DEFAULT_MAX_STEPS) -> tuple[list[ExternalOutput], int]:
        if max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        steps = self._run(max_steps)
        # drains everything recorded since the last call, including outputs
        # produced by direct handler calls
        produced = self.outputs[:]
        self.outputs.clear()
        tags = self._stop_tags
        return [ExternalOutput(ev, {n: DataValue(tags[n], v) for n, v in vals.items()}) for ev, vals in produced], steps


# -- functional surface ---------------------------------------------------------------------
#
# Thin wrappers that operate on an ApplicationState, compiling (and caching) an
# engine on first use.


def engine_for(state: ApplicationState, **options: Any) -> Engine:
    eng = state.engine
    if eng is None or options:
        eng = Engine(state, **options)
    return eng


def select_instance(state: ApplicationState) -> tuple[str, str] | None:
    return engine_for(state).select()


def send_event(state: ApplicationState, src: str, event: str) -> ApplicationState:
    eng = engine_for(state)
    if event not in eng.routes[src]:
        raise ValueError(f"{src} has no output event {event}")
    eng._send(src, event, None)
    return state


def handle_event_basic(state: ApplicationState, k: str, event: str) -> ApplicationState:
    if state.app.type_of(k).kind is not Kind.BASIC:
        raise ValueError(f"{k} is not a basic block")
    engine_for(state).handlers[k](event)  # type: ignore[misc]
    return state


def handle_event_composite(state: ApplicationState, k: str, event: str) -> ApplicationState:
    if state.app.type_of(k).kind is not Kind.COMPOSITE:
        raise ValueError(f"{k} is not a composite block")
    engine_for(state).handlers[k](event)  # type: ignore[misc]
    return state


def step(state: ApplicationState) -> ApplicationState:
    engine_for(state).step()
    return state


def inject(state: ApplicationState, app: Application, inp: ExternalInput) -> ApplicationState:
    if state.app is not app and state.app != app:
        raise ValueError("state does not belong to this application")
    engine_for(state).inject(inp)
    return state


def run_to_quiescence(
    state: ApplicationState, app: Application, max_steps: int = DEFAULT_MAX_STEPS
) -> tuple[ApplicationState, list[ExternalOutput], list[TraceRecord]]:
    """Step until the queue is empty; returns outputs in emission order and the trace."""
    if state.app is not app and state.app != app:
        raise ValueError("state does not belong to this application")
    records: list[TraceRecord] = []
    eng = engine_for(state)
    previous = eng.trace

    def sink(rec: TraceRecord) -> None:
        records.append(rec)
        if previous is not None:
            previous(rec)

    _set_trace(eng, sink)
    try:
        outputs, _ = eng.run_to_quiescence(max_steps)
    finally:
        _set_trace(eng, previous)
    return state, outputs, records


def _set_trace(eng: Engine, sink: TraceSink | None) -> None:
    eng.trace = sink
    for sub in eng.nested.values():
        _set_trace(sub, sink)


def start_state(app: Application, **options: Any) -> ApplicationState:
    """Fresh runnable copy of the application's initial state, with its engine."""
    assert app.state_seed is not None
    st = app.state_seed.copy()
    Engine(st, **options)
    return st


def total_counts(state: ApplicationState) -> tuple[int, int, int]:
    """(enqueued, dequeued, still pending) summed over all nested states."""
    enq = deq = pend = 0
    for _, st in state.walk():
        enq += st.enqueued
        deq += st.dequeued
        pend += len(st.pending)
    return enq, deq, pend
