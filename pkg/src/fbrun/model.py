"""Core data model: values, interfaces, block types and block instances.

Everything here is immutable by convention once validated. Collections that
carry order (declarations, connections) are tuples; association maps are
plain dicts keyed by event name and are never mutated after construction.
"""

from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, Iterable, Mapping, NamedTuple

if TYPE_CHECKING:
    from fbrun.ecc import BasicBody

INT_MIN = -(2**63)
INT_MAX = 2**63 - 1


class Tag(str, enum.Enum):
    BOOL = "BOOL"
    INT = "INT"
    REAL = "REAL"
    STRING = "STRING"

    def __str__(self) -> str:
        return self.value


class Kind(str, enum.Enum):
    BASIC = "basic"
    SERVICE = "service"
    COMPOSITE = "composite"

    def __str__(self) -> str:
        return self.value


_ZERO = {Tag.BOOL: False, Tag.INT: 0, Tag.REAL: 0.0, Tag.STRING: ""}


def tag_of(raw: Any) -> Tag:
    """Tag of a raw Python payload. ``bool`` is checked before ``int``."""
    if isinstance(raw, bool):
        return Tag.BOOL
    if isinstance(raw, int):
        return Tag.INT
    if isinstance(raw, float):
        return Tag.REAL
    if isinstance(raw, str):
        return Tag.STRING
    raise TypeError(f"no value tag for {type(raw).__name__}")


def payload_matches(tag: Tag, raw: Any) -> bool:
    if tag is Tag.BOOL:
        return isinstance(raw, bool)
    if tag is Tag.INT:
        return isinstance(raw, int) and not isinstance(raw, bool) and INT_MIN <= raw <= INT_MAX
    if tag is Tag.REAL:
        return isinstance(raw, float)
    return isinstance(raw, str)


def same_payload(a: Any, b: Any) -> bool:
    """Exact equality on raw payloads; REAL compares bit patterns."""
    if isinstance(a, float) and isinstance(b, float):
        return struct.pack("<d", a) == struct.pack("<d", b)
    return type(a) is type(b) and a == b


@dataclass(frozen=True, eq=False)
class DataValue:
    tag: Tag
    payload: Any

    def __post_init__(self) -> None:
        if not payload_matches(self.tag, self.payload):
            raise TypeError(f"payload {self.payload!r} does not match tag {self.tag}")

    @classmethod
    def zero(cls, tag: Tag) -> DataValue:
        return cls(tag, _ZERO[tag])

    @classmethod
    def of(cls, raw: Any) -> DataValue:
        return cls(tag_of(raw), raw)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DataValue):
            return NotImplemented
        return self.tag is other.tag and same_payload(self.payload, other.payload)

    def __hash__(self) -> int:
        if self.tag is Tag.REAL:
            return hash((self.tag, struct.pack("<d", self.payload)))
        return hash((self.tag, self.payload))

    def __repr__(self) -> str:
        return f"{self.tag}#{format_literal(self.payload)}"


def format_literal(raw: Any) -> str:
    """Canonical text for a payload, shared by the netlist writer and traces."""
    if isinstance(raw, bool):
        return "TRUE" if raw else "FALSE"
    if isinstance(raw, int):
        return str(raw)
    if isinstance(raw, float):
        if not math.isfinite(raw):
            raise ValueError(f"non-finite REAL {raw!r} has no literal form")
        return repr(raw)
    return '"' + raw.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n").replace("\t", "\\t") + '"'


@dataclass(frozen=True)
class VarDecl:
    name: str
    ty: Tag
    initial: DataValue = None  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if self.initial is None:
            object.__setattr__(self, "initial", DataValue.zero(self.ty))


@dataclass(frozen=True)
class Interface:
    """Event/data interface shared by every block kind.

    ``input_assoc`` maps an input event to the input variables sampled with
    it; ``output_assoc`` maps an output event to the output variables it
    publishes.
    """

    event_inputs: tuple[str, ...] = ()
    data_inputs: tuple[VarDecl, ...] = ()
    input_assoc: Mapping[str, tuple[str, ...]] = field(default_factory=dict)
    event_outputs: tuple[str, ...] = ()
    data_outputs: tuple[VarDecl, ...] = ()
    output_assoc: Mapping[str, tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        # an empty association is the same as none, so drop those entries
        for name in ("input_assoc", "output_assoc"):
            assoc = getattr(self, name)
            object.__setattr__(self, name, {e: tuple(vs) for e, vs in assoc.items() if vs})

    def input_var(self, name: str) -> VarDecl | None:
        for v in self.data_inputs:
            if v.name == name:
                return v
        return None

    def output_var(self, name: str) -> VarDecl | None:
        for v in self.data_outputs:
            if v.name == name:
                return v
        return None

    def with_inputs(self, event: str) -> tuple[str, ...]:
        return tuple(self.input_assoc.get(event, ()))

    def with_outputs(self, event: str) -> tuple[str, ...]:
        return tuple(self.output_assoc.get(event, ()))


class EventConn(NamedTuple):
    event: str
    target: str
    target_event: str


class DataConn(NamedTuple):
    var: str
    source: str
    source_var: str


@dataclass(frozen=True)
class BlockInstance:
    name: str
    type_name: str
    event_conns: tuple[EventConn, ...] = ()
    data_conns: tuple[DataConn, ...] = ()
    init_inputs: Mapping[str, DataValue] = field(default_factory=dict)
    init_outputs: Mapping[str, DataValue] = field(default_factory=dict)

    def source_of(self, var: str) -> DataConn | None:
        for c in self.data_conns:
            if c.var == var:
                return c
        return None


@dataclass(frozen=True)
class CompositeBody:
    """Inner network of a composite type.

    The boundary maps record how the composite's own interface is wired to
    the inner instances:

    * ``boundary_event_in``: interface input event -> inner (instance, input event) targets
    * ``boundary_event_out``: inner (instance, output event) -> interface output events
    * ``boundary_data_in``: inner (instance, input var) -> interface input var
    * ``boundary_data_out``: interface output var -> inner (instance, output var)
    """

    inner_types: tuple[BlockType, ...] = ()
    inner_instances: tuple[BlockInstance, ...] = ()
    boundary_event_in: Mapping[str, tuple[tuple[str, str], ...]] = field(default_factory=dict)
    boundary_event_out: Mapping[tuple[str, str], tuple[str, ...]] = field(default_factory=dict)
    boundary_data_in: Mapping[tuple[str, str], str] = field(default_factory=dict)
    boundary_data_out: Mapping[str, tuple[str, str]] = field(default_factory=dict)

    def type_named(self, name: str) -> BlockType | None:
        for t in self.inner_types:
            if t.name == name:
                return t
        return None

    def instance_named(self, name: str) -> BlockInstance | None:
        for i in self.inner_instances:
            if i.name == name:
                return i
        return None


@dataclass(frozen=True)
class BlockType:
    name: str
    kind: Kind
    interface: Interface
    basic: BasicBody | None = None
    composite: CompositeBody | None = None
    service: str | None = None

    @property
    def is_basic(self) -> bool:
        return self.kind is Kind.BASIC

    @property
    def is_composite(self) -> bool:
        return self.kind is Kind.COMPOSITE

    @property
    def is_service(self) -> bool:
        return self.kind is Kind.SERVICE


# -- validation ---------------------------------------------------------------


class ValidationError(Exception):
    """Structural problem in a type, interface, instance or application.

    ``where`` is a dotted location such as ``X2Y2.mul.DI1``.
    """

    def __init__(self, message: str, where: str = "") -> None:
        self.message = message
        self.where = where
        super().__init__(f"{where}: {message}" if where else message)


class UnknownEvent(ValidationError):
    pass


class UnknownVar(ValidationError):
    pass


class DuplicateName(ValidationError):
    pass


class KindBodyMismatch(ValidationError):
    pass


class UnknownInnerType(ValidationError):
    pass


class DanglingConnection(ValidationError):
    pass


class TypeMismatch(ValidationError):
    pass


class MultipleDataSources(ValidationError):
    pass


class RecursiveComposite(ValidationError):
    pass


class NameCollision(ValidationError):
    pass


def _check_unique(names: Iterable[str], what: str, where: str) -> None:
    seen: set[str] = set()
    for n in names:
        if n in seen:
            raise DuplicateName(f"duplicate {what} {n!r}", where)
        seen.add(n)


def validate_interface(itf: Interface, where: str = "") -> None:
    """Raise on the first violated interface constraint."""
    _check_unique(itf.event_inputs, "input event", where)
    _check_unique(itf.event_outputs, "output event", where)
    _check_unique((v.name for v in itf.data_inputs), "input var", where)
    _check_unique((v.name for v in itf.data_outputs), "output var", where)
    for decl in (*itf.data_inputs, *itf.data_outputs):
        if decl.initial.tag is not decl.ty:
            raise TypeMismatch(f"initial value of {decl.name} is {decl.initial.tag}, declared {decl.ty}", where)
    for events, decls, assoc in (
        (itf.event_inputs, itf.data_inputs, itf.input_assoc),
        (itf.event_outputs, itf.data_outputs, itf.output_assoc),
    ):
        declared = {v.name for v in decls}
        for ev, members in assoc.items():
            if ev not in events:
                raise UnknownEvent(f"association key {ev!r} is not a declared event", where)
            for m in members:
                if m not in declared:
                    raise UnknownVar(f"event {ev!r} associates undeclared var {m!r}", where)


def validate_type(bt: BlockType, known: Iterable[BlockType] = (), *, allow_dotted: bool = False) -> None:
    """Validate a block type, recursing into nested composite bodies.

    Inner instance types resolve through the composite's own inner type set;
    ``known`` supplies extra types that may appear in it. Raises on the first
    violation; returns ``None`` when the type is well formed.

    ``allow_dotted`` admits dotted instance names in the outermost body only,
    as produced by flattening an application.
    """
    _validate_type(bt, {t.name: t for t in known}, (), allow_dotted)


def _validate_type(bt: BlockType, known: dict[str, BlockType], stack: tuple[str, ...], allow_dotted: bool = False) -> None:
    where = ".".join((*stack, bt.name))
    if bt.name in stack:
        raise RecursiveComposite(f"type {bt.name} contains itself", where)
    bodies = {Kind.BASIC: bt.basic, Kind.COMPOSITE: bt.composite, Kind.SERVICE: bt.service}
    present = [k for k, body in bodies.items() if body is not None]
    if present != [bt.kind]:
        raise KindBodyMismatch(f"{bt.kind} type carries bodies {[str(k) for k in present]}", where)
    validate_interface(bt.interface, where)
    if bt.kind is Kind.BASIC:
        from fbrun.ecc import validate_basic_body

        validate_basic_body(bt.basic, bt.interface, where)  # type: ignore[arg-type]
    elif bt.kind is Kind.COMPOSITE:
        _validate_composite(bt, known, (*stack, bt.name), allow_dotted)


def _validate_composite(
    bt: BlockType, known: dict[str, BlockType], stack: tuple[str, ...], allow_dotted: bool = False
) -> None:
    body = bt.composite
    assert body is not None
    where = ".".join(stack)
    itf = bt.interface
    types = dict(known)
    types.update((t.name, t) for t in body.inner_types)
    _check_unique((t.name for t in body.inner_types), "inner type", where)
    _check_unique((i.name for i in body.inner_instances), "inner instance", where)

    inner_names = {t.name for t in body.inner_types}
    for inst in body.inner_instances:
        if "." in inst.name and not allow_dotted:
            raise ValidationError(f"instance name {inst.name!r} may not contain '.'", where)
        if inst.type_name in stack:
            raise RecursiveComposite(f"instance {inst.name} has enclosing type {inst.type_name}", where)
        if inst.type_name not in inner_names:
            raise UnknownInnerType(f"instance {inst.name} has type {inst.type_name} not in the inner type set", where)
    for t in body.inner_types:
        _validate_type(t, known, stack)

    by_name = {i.name: i for i in body.inner_instances}
    type_of = {i.name: types[i.type_name] for i in body.inner_instances}
    validate_network(body.inner_instances, type_of, where)

    # boundary endpoints
    for ev, targets in body.boundary_event_in.items():
        if ev not in itf.event_inputs:
            raise DanglingConnection(f"boundary input event {ev!r} is not declared", where)
        for inst, iev in targets:
            if inst not in by_name or iev not in type_of[inst].interface.event_inputs:
                raise DanglingConnection(f"boundary {ev} -> {inst}.{iev} has no such input event", where)
    for (inst, oev), evs in body.boundary_event_out.items():
        if inst not in by_name or oev not in type_of[inst].interface.event_outputs:
            raise DanglingConnection(f"boundary {inst}.{oev} has no such output event", where)
        for ev in evs:
            if ev not in itf.event_outputs:
                raise DanglingConnection(f"boundary output event {ev!r} is not declared", where)
    for (inst, var), src in body.boundary_data_in.items():
        if inst not in by_name:
            raise DanglingConnection(f"boundary data target {inst}.{var} does not exist", where)
        dst = type_of[inst].interface.input_var(var)
        decl = itf.input_var(src)
        if dst is None or decl is None:
            raise DanglingConnection(f"boundary data {src} -> {inst}.{var} names an undeclared var", where)
        if dst.ty is not decl.ty:
            raise TypeMismatch(f"boundary data {src}:{decl.ty} -> {inst}.{var}:{dst.ty}", where)
        if by_name[inst].source_of(var) is not None:
            raise MultipleDataSources(f"{inst}.{var} has both an inner and a boundary source", where)
    for var, (inst, ovar) in body.boundary_data_out.items():
        decl = itf.output_var(var)
        if decl is None:
            raise DanglingConnection(f"boundary output var {var!r} is not declared", where)
        if inst not in by_name:
            raise DanglingConnection(f"boundary data source {inst}.{ovar} does not exist", where)
        src = type_of[inst].interface.output_var(ovar)
        if src is None:
            raise DanglingConnection(f"boundary data source {inst}.{ovar} is not an output var", where)
        if src.ty is not decl.ty:
            raise TypeMismatch(f"boundary data {inst}.{ovar}:{src.ty} -> {var}:{decl.ty}", where)


def validate_instance(inst: BlockInstance, bt: BlockType, where: str = "") -> None:
    loc = f"{where}.{inst.name}" if where else inst.name
    itf = bt.interface
    for side, decls, values in (
        ("input", itf.data_inputs, inst.init_inputs),
        ("output", itf.data_outputs, inst.init_outputs),
    ):
        names = [v.name for v in decls]
        if set(values) != set(names):
            raise UnknownVar(f"initial {side} values cover {sorted(values)}, expected {sorted(names)}", loc)
        for v in decls:
            if values[v.name].tag is not v.ty:
                raise TypeMismatch(f"initial {v.name} is {values[v.name].tag}, declared {v.ty}", loc)


def validate_network(
    instances: Iterable[BlockInstance], type_of: Mapping[str, BlockType], where: str = ""
) -> None:
    """Check connection endpoints, tag compatibility and single data sources."""
    insts = tuple(instances)
    for inst in insts:
        bt = type_of[inst.name]
        validate_instance(inst, bt, where)
        loc = f"{where}.{inst.name}" if where else inst.name
        for c in inst.event_conns:
            if c.event not in bt.interface.event_outputs:
                raise DanglingConnection(f"{inst.name}.{c.event} is not an output event", loc)
            tgt = type_of.get(c.target)
            if tgt is None or c.target_event not in tgt.interface.event_inputs:
                raise DanglingConnection(f"{c.target}.{c.target_event} is not an input event", loc)
        seen: set[str] = set()
        for c in inst.data_conns:
            if c.var in seen:
                raise MultipleDataSources(f"{inst.name}.{c.var} has more than one source", loc)
            seen.add(c.var)
            dst = bt.interface.input_var(c.var)
            if dst is None:
                raise DanglingConnection(f"{inst.name}.{c.var} is not an input var", loc)
            src_t = type_of.get(c.source)
            src = src_t.interface.output_var(c.source_var) if src_t is not None else None
            if src is None:
                raise DanglingConnection(f"{c.source}.{c.source_var} is not an output var", loc)
            if src.ty is not dst.ty:
                raise TypeMismatch(f"{c.source}.{c.source_var}:{src.ty} -> {inst.name}.{c.var}:{dst.ty}", loc)


def instantiate(bt: BlockType, name: str) -> BlockInstance:
    """Fresh, unconnected instance with declared initial values."""
    itf = bt.interface
    return BlockInstance(
        name=name,
        type_name=bt.name,
        init_inputs={v.name: v.initial for v in itf.data_inputs},
        init_outputs={v.name: v.initial for v in itf.data_outputs},
    )
