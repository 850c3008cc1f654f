"""Subapplications: start/stop synthesis, configuration, initial state, flattening.

A composite type is executed by turning its inner network into an
application of its own. Two service blocks are added at the boundary: the
*start* block owns the composite's input half as outputs, the *stop* block
owns its output half as inputs. The composite's boundary wiring is moved
onto those two blocks so the inner network becomes a closed application
whose external events are exactly the start outputs and the stop inputs.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Iterator

from fbrun.model import (
    BlockInstance,
    BlockType,
    CompositeBody,
    DataConn,
    EventConn,
    Interface,
    Kind,
    NameCollision,
    RecursiveComposite,
    ValidationError,
    instantiate,
)

START_BEHAVIOR = "start"
STOP_BEHAVIOR = "stop"


def derive_start_interface(g: Interface) -> Interface:
    return Interface(
        event_outputs=g.event_inputs,
        data_outputs=g.data_inputs,
        output_assoc=dict(g.input_assoc),
    )


def derive_stop_interface(g: Interface) -> Interface:
    return Interface(
        event_inputs=g.event_outputs,
        data_inputs=g.data_outputs,
        input_assoc=dict(g.output_assoc),
    )


# -- application ---------------------------------------------------------------------


@dataclass(frozen=True)
class Application:
    """Types, instances and external event sets of an executable network.

    ``start``/``stop`` name the boundary service instances; ``interface`` is
    the boundary interface they were derived from. ``state_seed`` is a
    template and must be copied before it is run.
    """

    name: str
    types: tuple[BlockType, ...]
    instances: tuple[BlockInstance, ...]
    external_inputs: tuple[tuple[str, str], ...]
    external_outputs: tuple[tuple[str, str], ...]
    start: str
    stop: str
    interface: Interface = field(default_factory=Interface)
    state_seed: ApplicationState | None = field(default=None, compare=False, repr=False)

    @cached_property
    def type_by_name(self) -> dict[str, BlockType]:
        return {t.name: t for t in self.types}

    @cached_property
    def instance_by_name(self) -> dict[str, BlockInstance]:
        return {i.name: i for i in self.instances}

    def type_of(self, instance: str) -> BlockType:
        return self.type_by_name[self.instance_by_name[instance].type_name]

    def partition(self) -> dict[Kind, list[str]]:
        """Instance names grouped by block kind."""
        out: dict[Kind, list[str]] = {k: [] for k in Kind}
        for inst in self.instances:
            out[self.type_of(inst.name).kind].append(inst.name)
        return out


# -- runtime state ---------------------------------------------------------------------
#
# Entries hold raw payloads (bool/int/float/str) keyed by variable name; the tags
# come from the type declarations. The scheduler mutates them in place.


class ServiceEntry:
    __slots__ = ("name", "inputs", "outputs")
    kind = Kind.SERVICE

    def __init__(self, name: str, inputs: dict, outputs: dict) -> None:
        self.name = name
        self.inputs = inputs
        self.outputs = outputs

    def copy(self) -> ServiceEntry:
        return ServiceEntry(self.name, dict(self.inputs), dict(self.outputs))

    def __eq__(self, other: object) -> bool:
        return isinstance(other, ServiceEntry) and _same(self.as_tuple(), other.as_tuple())

    def as_tuple(self) -> tuple:
        return (self.name, self.inputs, self.outputs)

    def __repr__(self) -> str:
        return f"ServiceEntry{self.as_tuple()!r}"


class BasicEntry:
    __slots__ = ("name", "inputs", "outputs", "internals", "ecc_state")
    kind = Kind.BASIC

    def __init__(self, name: str, inputs: dict, outputs: dict, internals: dict, ecc_state: str) -> None:
        self.name = name
        self.inputs = inputs
        self.outputs = outputs
        self.internals = internals
        self.ecc_state = ecc_state

    def copy(self) -> BasicEntry:
        return BasicEntry(self.name, dict(self.inputs), dict(self.outputs), dict(self.internals), self.ecc_state)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, BasicEntry) and _same(self.as_tuple(), other.as_tuple())

    def as_tuple(self) -> tuple:
        return (self.name, self.inputs, self.outputs, self.internals, self.ecc_state)

    def __repr__(self) -> str:
        return f"BasicEntry{self.as_tuple()!r}"


class CompositeEntry:
    __slots__ = ("name", "inputs", "outputs", "nested")
    kind = Kind.COMPOSITE

    def __init__(self, name: str, inputs: dict, outputs: dict, nested: ApplicationState) -> None:
        self.name = name
        self.inputs = inputs
        self.outputs = outputs
        self.nested = nested

    def copy(self) -> CompositeEntry:
        return CompositeEntry(self.name, dict(self.inputs), dict(self.outputs), self.nested.copy())

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, CompositeEntry)
            and _same(self.as_tuple(), other.as_tuple())
            and self.nested == other.nested
        )

    def as_tuple(self) -> tuple:
        return (self.name, self.inputs, self.outputs)

    def __repr__(self) -> str:
        return f"CompositeEntry({self.name!r}, {self.inputs!r}, {self.outputs!r}, nested=...)"


Entry = ServiceEntry | BasicEntry | CompositeEntry


def _same(a, b) -> bool:
    # dict equality plus exact type match so 1 == 1.0 == True do not blur together
    if type(a) is not type(b):
        return False
    if isinstance(a, dict):
        return a.keys() == b.keys() and all(_same(a[k], b[k]) for k in a)
    if isinstance(a, tuple):
        return len(a) == len(b) and all(_same(x, y) for x, y in zip(a, b))
    if isinstance(a, float):
        return a.hex() == b.hex() or (a != a and b != b)
    return a == b


class ApplicationState:
    """Per-instance runtime entries plus the pending (instance, event) queue."""

    # ``engine`` caches the scheduler compiled against this state's entry dicts.
    __slots__ = ("app", "entries", "pending", "enqueued", "dequeued", "engine")

    def __init__(self, app: Application, entries: dict[str, Entry], pending=None) -> None:
        self.app = app
        self.entries = entries
        self.pending: deque[tuple[str, str]] = deque(pending or ())
        self.enqueued = 0
        self.dequeued = 0
        self.engine = None

    def copy(self) -> ApplicationState:
        st = ApplicationState(self.app, {n: e.copy() for n, e in self.entries.items()}, self.pending)
        st.enqueued, st.dequeued = self.enqueued, self.dequeued
        return st

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ApplicationState):
            return NotImplemented
        return (
            list(self.entries) == list(other.entries)
            and all(self.entries[n] == other.entries[n] for n in self.entries)
            and list(self.pending) == list(other.pending)
        )

    def __getitem__(self, name: str) -> Entry:
        return self.entries[name]

    def walk(self, prefix: str = "") -> Iterator[tuple[str, ApplicationState]]:
        """This state and every nested subapplication state, with instance paths."""
        yield prefix, self
        for name, e in self.entries.items():
            if isinstance(e, CompositeEntry):
                yield from e.nested.walk(f"{prefix}{name}.")

    def entry_tuples(self) -> tuple[tuple, ...]:
        """Entries as plain tuples; composite entries drop their nested state."""
        return tuple(e.as_tuple() for e in self.entries.values())


# -- configuration -----------------------------------------------------------------------


def start_name(instance: str) -> str:
    return f"{instance}_start"


def stop_name(instance: str) -> str:
    return f"{instance}_stop"


def configure_subapplication(cfbt: BlockType, name: str) -> Application:
    """Build the subapplication of a validated composite type.

    ``name`` is the composite instance name; the boundary blocks become
    ``<name>_start`` and ``<name>_stop``.
    """
    if cfbt.kind is not Kind.COMPOSITE or cfbt.composite is None:
        raise ValidationError(f"{cfbt.name} is not a composite type", cfbt.name)
    body: CompositeBody = cfbt.composite
    g = cfbt.interface

    t_start = BlockType(f"{cfbt.name}_START", Kind.SERVICE, derive_start_interface(g), service=START_BEHAVIOR)
    t_stop = BlockType(f"{cfbt.name}_STOP", Kind.SERVICE, derive_stop_interface(g), service=STOP_BEHAVIOR)

    s_name, e_name = start_name(name), stop_name(name)
    for inst in body.inner_instances:
        if inst.name in (s_name, e_name):
            raise NameCollision(f"inner instance {inst.name!r} clashes with a boundary block", cfbt.name)
    for t in body.inner_types:
        if t.name in (t_start.name, t_stop.name):
            raise NameCollision(f"inner type {t.name!r} clashes with a boundary type", cfbt.name)

    start_conns = tuple(
        EventConn(ev, inst, iev) for ev in g.event_inputs for inst, iev in body.boundary_event_in.get(ev, ())
    )
    start = _with(instantiate(t_start, s_name), event_conns=start_conns)
    stop_conns = tuple(
        DataConn(var.name, *body.boundary_data_out[var.name])
        for var in g.data_outputs
        if var.name in body.boundary_data_out
    )
    stop = _with(instantiate(t_stop, e_name), data_conns=stop_conns)

    inner = []
    for inst in body.inner_instances:
        out_conns = tuple(
            EventConn(oev, e_name, ev)
            for (src, oev), evs in body.boundary_event_out.items()
            if src == inst.name
            for ev in evs
        )
        in_conns = tuple(
            DataConn(var, s_name, ivar) for (dst, var), ivar in body.boundary_data_in.items() if dst == inst.name
        )
        inner.append(
            _with(inst, event_conns=inst.event_conns + out_conns, data_conns=inst.data_conns + in_conns)
        )

    app = Application(
        name=name,
        types=(*body.inner_types, t_start, t_stop),
        instances=(start, *inner, stop),
        external_inputs=tuple((s_name, e) for e in t_start.interface.event_outputs),
        external_outputs=tuple((e_name, e) for e in t_stop.interface.event_inputs),
        start=s_name,
        stop=e_name,
        interface=g,
    )
    object.__setattr__(app, "state_seed", initial_state(app))
    return app


def _with(inst: BlockInstance, **changes) -> BlockInstance:
    return replace(inst, **changes)


def initial_state(app: Application) -> ApplicationState:
    entries: dict[str, Entry] = {}
    for inst in app.instances:
        bt = app.type_of(inst.name)
        d_i = {n: v.payload for n, v in inst.init_inputs.items()}
        d_o = {n: v.payload for n, v in inst.init_outputs.items()}
        if bt.kind is Kind.BASIC:
            body = bt.basic
            assert body is not None
            internals = {v.name: v.initial.payload for v in body.internals}
            entries[inst.name] = BasicEntry(inst.name, d_i, d_o, internals, body.initial)
        elif bt.kind is Kind.COMPOSITE:
            entries[inst.name] = CompositeEntry(inst.name, d_i, d_o, _nested_state(bt, inst))
        else:
            entries[inst.name] = ServiceEntry(inst.name, d_i, d_o)
    return ApplicationState(app, entries)


def _nested_state(bt: BlockType, inst: BlockInstance) -> ApplicationState:
    sub = configure_subapplication(bt, inst.name)
    assert sub.state_seed is not None
    st = sub.state_seed.copy()
    # The boundary blocks start out mirroring the composite instance's own
    # initial values, which may override the type defaults.
    st.entries[sub.start].outputs.update((n, v.payload) for n, v in inst.init_inputs.items())
    st.entries[sub.stop].inputs.update((n, v.payload) for n, v in inst.init_outputs.items())
    return st


def network_size(app: Application) -> tuple[int, int]:
    """(blocks, connections) of the top-level network.

    Boundary blocks are not counted as blocks; their connections are.
    """
    blocks = sum(1 for i in app.instances if i.name not in (app.start, app.stop))
    conns = sum(len(i.event_conns) + len(i.data_conns) for i in app.instances)
    return blocks, conns


# -- flattening --------------------------------------------------------------------------


def flatten_application(app: Application) -> Application:
    """Inline every composite instance until none remain.

    Inner instances are renamed ``<composite>.<inner>`` and the composite's
    boundary wiring is spliced so producers and consumers connect directly.
    Boundary inputs or outputs with nothing on the other side are replaced by
    the composite instance's initial values on the consumer.
    """
    if not any(app.type_of(i.name).kind is Kind.COMPOSITE for i in app.instances):
        return app

    types = {t.name: t for t in app.types}
    instances = list(app.instances)
    enclosing: dict[str, tuple[str, ...]] = {i.name: () for i in instances}

    while True:
        idx = next((n for n, i in enumerate(instances) if types[i.type_name].kind is Kind.COMPOSITE), None)
        if idx is None:
            break
        k = instances[idx]
        ct = types[k.type_name]
        chain = (*enclosing[k.name], ct.name)
        body = ct.composite
        assert body is not None
        for t in body.inner_types:
            if t.name in chain:
                raise RecursiveComposite(f"type {t.name} is expanded inside itself", ".".join(chain))
            have = types.get(t.name)
            if have is None:
                types[t.name] = t
            elif have != t:
                raise NameCollision(f"two different types are named {t.name}", k.name)

        inner = _expand(k, body)
        taken = {i.name for i in instances}
        for i in inner:
            if i.name in taken:
                raise NameCollision(f"flattened name {i.name!r} already exists", k.name)
            enclosing[i.name] = chain
        instances[idx : idx + 1] = inner
        instances = [_retarget(i, k, body) for i in instances]

    used = {i.type_name for i in instances}
    kept = tuple(t for t in types.values() if t.name in used)
    flat = Application(
        name=app.name,
        types=kept,
        instances=tuple(instances),
        external_inputs=app.external_inputs,
        external_outputs=app.external_outputs,
        start=app.start,
        stop=app.stop,
        interface=app.interface,
    )
    object.__setattr__(flat, "state_seed", initial_state(flat))
    return flat


def _expand(k: BlockInstance, body: CompositeBody) -> list[BlockInstance]:
    p = k.name + "."
    out = []
    for inst in body.inner_instances:
        conns = [EventConn(c.event, p + c.target, c.target_event) for c in inst.event_conns]
        for (src, oev), evs in body.boundary_event_out.items():
            if src != inst.name:
                continue
            for ev in evs:
                conns.extend(EventConn(oev, c.target, c.target_event) for c in k.event_conns if c.event == ev)
        data = [DataConn(c.var, p + c.source, c.source_var) for c in inst.data_conns]
        init_inputs = dict(inst.init_inputs)
        for (dst, var), ivar in body.boundary_data_in.items():
            if dst != inst.name:
                continue
            src = k.source_of(ivar)
            if src is not None:
                data.append(DataConn(var, src.source, src.source_var))
            else:
                init_inputs[var] = k.init_inputs[ivar]
        out.append(
            BlockInstance(
                name=p + inst.name,
                type_name=inst.type_name,
                event_conns=tuple(conns),
                data_conns=tuple(data),
                init_inputs=init_inputs,
                init_outputs=dict(inst.init_outputs),
            )
        )
    return out


def _retarget(inst: BlockInstance, k: BlockInstance, body: CompositeBody) -> BlockInstance:
    """Point connections that referenced the composite ``k`` at its inner blocks."""
    if not any(c.target == k.name for c in inst.event_conns) and not any(
        c.source == k.name for c in inst.data_conns
    ):
        return inst
    p = k.name + "."
    conns: list[EventConn] = []
    for c in inst.event_conns:
        if c.target != k.name:
            conns.append(c)
            continue
        conns.extend(EventConn(c.event, p + t, tev) for t, tev in body.boundary_event_in.get(c.target_event, ()))
    data: list[DataConn] = []
    init_inputs = dict(inst.init_inputs)
    for c in inst.data_conns:
        if c.source != k.name:
            data.append(c)
            continue
        src = body.boundary_data_out.get(c.source_var)
        if src is not None:
            data.append(DataConn(c.var, p + src[0], src[1]))
        else:
            init_inputs[c.var] = k.init_outputs[c.source_var]
    return BlockInstance(
        name=inst.name,
        type_name=inst.type_name,
        event_conns=tuple(conns),
        data_conns=tuple(data),
        init_inputs=init_inputs,
        init_outputs=dict(inst.init_outputs),
    )
