import math
from dataclasses import replace

import pytest
from hypothesis import given
from hypothesis import strategies as st

from fbrun.model import (
    BlockInstance,
    BlockType,
    CompositeBody,
    DanglingConnection,
    DataConn,
    DataValue,
    DuplicateName,
    EventConn,
    Interface,
    Kind,
    KindBodyMismatch,
    MultipleDataSources,
    RecursiveComposite,
    Tag,
    TypeMismatch,
    UnknownEvent,
    UnknownInnerType,
    UnknownVar,
    VarDecl,
    format_literal,
    instantiate,
    validate_interface,
    validate_type,
)
from support import corpus_doc


def x2y2_interface() -> Interface:
    return Interface(
        event_inputs=("EI",),
        data_inputs=(VarDecl("DI1", Tag.INT), VarDecl("DI2", Tag.INT)),
        input_assoc={"EI": ("DI1", "DI2")},
        event_outputs=("EO",),
        data_outputs=(VarDecl("DO", Tag.INT),),
        output_assoc={"EO": ("DO",)},
    )


def zero_int(*names):
    return {n: DataValue(Tag.INT, 0) for n in names}


# -- values --------------------------------------------------------------------------


def test_payload_must_match_tag():
    with pytest.raises(TypeError):
        DataValue(Tag.INT, 1.0)
    with pytest.raises(TypeError):
        DataValue(Tag.INT, True)
    with pytest.raises(TypeError):
        DataValue(Tag.INT, 2**63)
    with pytest.raises(TypeError):
        DataValue(Tag.REAL, 1)
    DataValue(Tag.INT, -(2**63))


def test_real_equality_is_bitwise():
    assert DataValue(Tag.REAL, math.nan) == DataValue(Tag.REAL, math.nan)
    assert DataValue(Tag.REAL, 0.0) != DataValue(Tag.REAL, -0.0)
    assert DataValue(Tag.INT, 1) != DataValue(Tag.REAL, 1.0)
    assert len({DataValue(Tag.REAL, 0.0), DataValue(Tag.REAL, -0.0)}) == 2


def test_zero_defaults():
    assert [DataValue.zero(t).payload for t in Tag] == [False, 0, 0.0, ""]
    assert VarDecl("X", Tag.STRING).initial == DataValue(Tag.STRING, "")


def test_format_literal():
    assert format_literal(True) == "TRUE"
    assert format_literal(-7) == "-7"
    assert format_literal(0.1) == "0.1"
    assert format_literal('a"b\\c\n') == '"a\\"b\\\\c\\n"'
    with pytest.raises(ValueError):
        format_literal(math.inf)


# -- interfaces ------------------------------------------------------------------------


def test_x2y2_interface_is_valid():
    validate_interface(x2y2_interface())


def test_empty_interface_is_valid():
    validate_interface(Interface())


def test_association_key_must_be_declared():
    itf = replace(x2y2_interface(), input_assoc={"EX": ("DI1",)})
    with pytest.raises(UnknownEvent):
        validate_interface(itf)


def test_association_member_must_be_declared():
    itf = replace(x2y2_interface(), output_assoc={"EO": ("NOPE",)})
    with pytest.raises(UnknownVar):
        validate_interface(itf)


def test_duplicate_event_names_rejected():
    with pytest.raises(DuplicateName):
        validate_interface(Interface(event_inputs=("A", "A")))


# -- types -------------------------------------------------------------------------------


def test_corpus_x2y2_type_is_valid():
    x2y2 = corpus_doc("x2y2.fbn").type_named("X2Y2")
    validate_type(x2y2)
    body = x2y2.composite
    assert [t.name for t in body.inner_types] == ["ADD", "SUB", "MUL"]
    assert [i.name for i in body.inner_instances] == ["add", "sub", "mul"]
    assert x2y2.interface == x2y2_interface()


def _composite(name, inner_types, instances, **boundary):
    return BlockType(name, Kind.COMPOSITE, Interface(), composite=CompositeBody(tuple(inner_types), tuple(instances), **boundary))


def test_instance_type_outside_inner_set():
    add = corpus_doc("x2y2.fbn").type_named("ADD")
    bt = _composite("C", [], [instantiate(add, "add")])
    with pytest.raises(UnknownInnerType):
        validate_type(bt)


def test_composite_containing_itself():
    inst = BlockInstance("me", "SELF")
    inner = _composite("SELF", [], [])
    bt = _composite("SELF", [inner], [inst])
    with pytest.raises(RecursiveComposite):
        validate_type(bt)


def test_kind_body_mismatch():
    with pytest.raises(KindBodyMismatch):
        validate_type(BlockType("S", Kind.SERVICE, Interface()))
    with pytest.raises(KindBodyMismatch):
        validate_type(BlockType("S", Kind.BASIC, Interface(), service="latch"))


def test_network_connection_errors():
    doc = corpus_doc("x2y2.fbn")
    add, mul = doc.type_named("ADD"), doc.type_named("MUL")
    a, m = instantiate(add, "a"), instantiate(mul, "m")
    dangling = replace(a, event_conns=(EventConn("CNF", "m", "NOPE"),))
    with pytest.raises(DanglingConnection):
        validate_type(_composite("C", [add, mul], [dangling, m]))
    twice = replace(m, data_conns=(DataConn("DI1", "a", "DO"), DataConn("DI1", "a", "DO")))
    with pytest.raises(MultipleDataSources):
        validate_type(_composite("C", [add, mul], [a, twice]))


def test_data_connection_tags_must_agree():
    real_src = BlockType(
        "R", Kind.SERVICE, Interface(data_outputs=(VarDecl("V", Tag.REAL),)), service="none"
    )
    add = corpus_doc("x2y2.fbn").type_named("ADD")
    a = replace(instantiate(add, "a"), data_conns=(DataConn("DI1", "r", "V"),))
    with pytest.raises(TypeMismatch):
        validate_type(_composite("C", [add, real_src], [a, instantiate(real_src, "r")]))


def test_boundary_source_conflicts_with_inner_source():
    doc = corpus_doc("x2y2.fbn")
    x2y2 = doc.type_named("X2Y2")
    body = x2y2.composite
    extra = dict(body.boundary_data_in)
    extra[("mul", "DI1")] = "DI1"  # mul.DI1 already sourced from add.DO
    bad = replace(x2y2, composite=replace(body, boundary_data_in=extra))
    with pytest.raises(MultipleDataSources):
        validate_type(bad)


def test_validate_type_is_repeatable():
    x2y2 = corpus_doc("x2y2.fbn").type_named("X2Y2")
    assert validate_type(x2y2) is None
    assert validate_type(x2y2) is None


# -- instances -----------------------------------------------------------------------------


def test_instantiate_x2y2():
    inst = instantiate(corpus_doc("x2y2.fbn").type_named("X2Y2"), "x2y2")
    assert inst == BlockInstance("x2y2", "X2Y2", (), (), zero_int("DI1", "DI2"), zero_int("DO"))


def test_instantiate_add_from_corpus():
    inst = instantiate(corpus_doc("x2y2.fbn").type_named("ADD"), "add")
    assert (inst.name, inst.event_conns, inst.data_conns) == ("add", (), ())
    assert inst.init_inputs == zero_int("DI1", "DI2")
    assert inst.init_outputs == zero_int("DO")


def test_instantiate_empty_interface():
    inst = instantiate(BlockType("E", Kind.SERVICE, Interface(), service="none"), "e")
    assert (inst.event_conns, inst.data_conns, dict(inst.init_inputs), dict(inst.init_outputs)) == ((), (), {}, {})


_names = st.lists(st.from_regex(r"[A-Z][A-Z0-9]{0,4}", fullmatch=True), unique=True, max_size=5)
_tags = st.sampled_from(list(Tag))


@st.composite
def interfaces(draw):
    d_in = tuple(VarDecl(n, draw(_tags)) for n in draw(_names))
    d_out = tuple(VarDecl(n, draw(_tags)) for n in draw(_names))
    e_in, e_out = tuple(draw(_names)), tuple(draw(_names))
    w_in = {e: tuple(v.name for v in d_in if draw(st.booleans())) for e in e_in}
    w_out = {e: tuple(v.name for v in d_out if draw(st.booleans())) for e in e_out}
    return Interface(e_in, d_in, w_in, e_out, d_out, w_out)


@given(interfaces())
def test_instantiate_covers_declared_vars(itf):
    validate_interface(itf)
    inst = instantiate(BlockType("T", Kind.SERVICE, itf, service="none"), "t")
    assert set(inst.init_inputs) == {v.name for v in itf.data_inputs}
    assert set(inst.init_outputs) == {v.name for v in itf.data_outputs}
    for v in itf.data_inputs:
        assert inst.init_inputs[v.name].tag is v.ty
    for v in itf.data_outputs:
        assert inst.init_outputs[v.name].tag is v.ty
