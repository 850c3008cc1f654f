"""Event-driven function block runtime.

Typical use::

    from fbrun import load_corpus, start_state, ExternalInput

    app = load_corpus("x2y2.fbn").application.configure()
    state = start_state(app)
    state.engine.inject(ExternalInput("EI", {"DI1": 3, "DI2": 2}))
    outputs, steps = state.engine.run_to_quiescence()
"""

from importlib import resources

from fbrun.ecc import BasicBody, EccAction, EccState, EccTransition, NonTermination, run_ecc
from fbrun.expr import DivisionByZero, ExecutionError
from fbrun.model import (
    BlockInstance,
    BlockType,
    CompositeBody,
    DataConn,
    DataValue,
    EventConn,
    Interface,
    Kind,
    Tag,
    ValidationError,
    VarDecl,
    instantiate,
    validate_type,
)
from fbrun.netlist import NetlistDocument, ParseError, parse, serialize
from fbrun.scheduler import (
    Engine,
    ExternalInput,
    ExternalOutput,
    NonQuiescence,
    TraceRecord,
    run_to_quiescence,
    start_state,
)
from fbrun.subapp import (
    Application,
    ApplicationState,
    configure_subapplication,
    flatten_application,
    initial_state,
    network_size,
)


def corpus_text(name: str) -> str:
    """Source of a netlist shipped in ``fbrun/corpus``."""
    return resources.files("fbrun").joinpath("corpus", name).read_text(encoding="utf-8")


def load_corpus(name: str) -> NetlistDocument:
    return parse(corpus_text(name))


__all__ = [
    "Application",
    "ApplicationState",
    "BasicBody",
    "BlockInstance",
    "BlockType",
    "CompositeBody",
    "DataConn",
    "DataValue",
    "DivisionByZero",
    "EccAction",
    "EccState",
    "EccTransition",
    "Engine",
    "EventConn",
    "ExecutionError",
    "ExternalInput",
    "ExternalOutput",
    "Interface",
    "Kind",
    "NetlistDocument",
    "NonQuiescence",
    "NonTermination",
    "ParseError",
    "Tag",
    "TraceRecord",
    "ValidationError",
    "VarDecl",
    "configure_subapplication",
    "corpus_text",
    "flatten_application",
    "initial_state",
    "instantiate",
    "load_corpus",
    "network_size",
    "parse",
    "run_ecc",
    "run_to_quiescence",
    "serialize",
    "start_state",
    "validate_type",
]
