"""Command-line front end.

Commands::

    fbrun validate FILE
    fbrun run FILE --script SCRIPT [--flatten] [--max-steps N]
              [--nested-max-steps N] [--trace PATH]
    fbrun flatten FILE -o OUT

Exit codes: 0 success, 1 parse or validation error, 2 I/O error,
3 no quiescence within the step bound, 4 run-time error inside a block,
5 recursive composite found while flattening.

A script holds one external input event per line, ``EVENT var=literal ...``;
blank lines and ``//`` comments are skipped. Between two scripted events the
application runs to quiescence. Setting ``FBRUN_TRACE=off`` drops the
per-step trace records; the final ``external`` record is always written.
"""

from __future__ import annotations

import argparse
import json
import os
import queue
import re
import sys
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Any, Callable, Sequence

from fbrun.expr import ExecutionError
from fbrun.model import DataValue, Kind, RecursiveComposite, ValidationError
from fbrun.netlist import InvalidDeclaration, NetlistDocument, ParseError, application_decl, parse, parse_literal, serialize
from fbrun.scheduler import (
    DEFAULT_MAX_STEPS,
    DEFAULT_NESTED_MAX_STEPS,
    Engine,
    ExternalInput,
    ExternalInputMismatch,
    ExternalOutput,
    NonQuiescence,
    TraceRecord,
    UnknownExternalEvent,
)
from fbrun.subapp import Application, flatten_application, network_size

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_IO = 2
EXIT_NON_QUIESCENT = 3
EXIT_RUNTIME = 4
EXIT_RECURSIVE = 5


@dataclass(frozen=True)
class RunConfig:
    netlist: Path
    script: Path | None = None
    events: tuple[str, ...] = ()  # inline script lines, used when script is None
    max_steps: int = DEFAULT_MAX_STEPS
    nested_max_steps: int = DEFAULT_NESTED_MAX_STEPS
    trace: Path | None = None  # None writes the trace to stdout
    flatten: bool = False

    def __post_init__(self) -> None:
        if self.max_steps < 1 or self.nested_max_steps < 1:
            raise ValueError("step bounds must be at least 1")


class ScriptError(Exception):
    def __init__(self, message: str, line: int) -> None:
        self.line = line
        super().__init__(f"script line {line}: {message}")


class _Failure(Exception):
    """Carries an exit status and diagnostic up to :func:`main`."""

    def __init__(self, status: int, message: str) -> None:
        self.status = status
        super().__init__(message)


# -- scripts -----------------------------------------------------------------------

_ASSIGN = re.compile(r'\s*([A-Za-z][A-Za-z0-9_]*)=("(?:[^"\\\n]|\\.)*"|[^\s"]+)')


def parse_script(lines: Sequence[str], app: Application) -> list[ExternalInput]:
    """Turn script lines into external inputs typed by the application's interface."""
    start_itf = app.type_of(app.start).interface
    known = {ev for _, ev in app.external_inputs}
    inputs = []
    for lineno, raw in enumerate(lines, 1):
        text = _strip_comment(raw)
        if not text:
            continue
        event, _, rest = text.partition(" ")
        if event not in known:
            raise ScriptError(f"unknown external event {event!r}", lineno)
        values: dict[str, DataValue] = {}
        pos = 0
        rest = rest.rstrip()
        while pos < len(rest):
            m = _ASSIGN.match(rest, pos)
            if m is None:
                raise ScriptError(f"expected var=literal, found {rest[pos:].strip()!r}", lineno)
            var, literal = m.groups()
            decl = start_itf.output_var(var)
            if decl is None or var not in start_itf.with_outputs(event):
                raise ScriptError(f"{var} is not carried by {event}", lineno)
            if var in values:
                raise ScriptError(f"{var} given twice", lineno)
            try:
                values[var] = parse_literal(literal, decl.ty)
            except ParseError as e:
                raise ScriptError(e.message, lineno) from None
            pos = m.end()
        missing = [v for v in start_itf.with_outputs(event) if v not in values]
        if missing:
            raise ScriptError(f"{event} needs a value for {', '.join(missing)}", lineno)
        inputs.append(ExternalInput(event, values))
    return inputs


def _strip_comment(line: str) -> str:
    # a // inside a string literal is not a comment
    in_string = escaped = False
    for i, c in enumerate(line):
        if in_string:
            if escaped:
                escaped = False
            elif c == "\\":
                escaped = True
            elif c == '"':
                in_string = False
        elif c == '"':
            in_string = True
        elif line.startswith("//", i):
            return line[:i].strip()
    return line.strip()


# -- trace output -------------------------------------------------------------------


def _json_value(v: Any) -> Any:
    return v.payload if isinstance(v, DataValue) else v


def encode_record(record: dict[str, Any]) -> str:
    return json.dumps(record, separators=(",", ":"), ensure_ascii=False, default=_json_value)


def external_record(outputs: Sequence[ExternalOutput]) -> dict[str, Any]:
    return {
        "kind": "external",
        "outputs": [{"event": o.event, "values": {n: v.payload for n, v in o.values.items()}} for o in outputs],
    }


class TraceWriter:
    """Writes JSON lines to a stream, optionally from a background thread.

    The threaded variant hands records over through a FIFO queue, so the
    output is the same as the direct one.
    """

    _DONE = object()

    def __init__(self, stream: IO[str], threaded: bool = False) -> None:
        self.stream = stream
        self._queue: queue.Queue | None = None
        self._thread: threading.Thread | None = None
        self._error: BaseException | None = None
        if threaded:
            self._queue = queue.Queue(maxsize=4096)
            self._thread = threading.Thread(target=self._drain, name="trace-writer", daemon=True)
            self._thread.start()

    def _drain(self) -> None:
        assert self._queue is not None
        while True:
            item = self._queue.get()
            if item is self._DONE:
                return
            if self._error is None:
                try:
                    self.stream.write(item)
                except BaseException as e:  # surfaced by close()
                    self._error = e

    def write(self, record: dict[str, Any]) -> None:
        line = encode_record(record) + "\n"
        if self._queue is not None:
            self._queue.put(line)
        else:
            self.stream.write(line)

    def __call__(self, rec: TraceRecord) -> None:
        self.write(rec.to_dict())

    def close(self) -> None:
        if self._queue is not None and self._thread is not None:
            self._queue.put(self._DONE)
            self._thread.join()
            self._queue = None
        if self._error is not None:
            raise self._error
        self.stream.flush()


def trace_enabled(environ: dict[str, str] | os._Environ = os.environ) -> bool:
    return environ.get("FBRUN_TRACE", "").strip().lower() != "off"


# -- commands --------------------------------------------------------------------------


def _read(path: Path) -> str:
    try:
        data = path.read_bytes()
        return data.decode("utf-8")
    except (OSError, UnicodeDecodeError) as e:
        raise _Failure(EXIT_IO, f"cannot read {path}: {e}") from None


def _load(path: Path) -> NetlistDocument:
    text = _read(path)
    try:
        return parse(text)
    except ParseError as e:
        raise _Failure(EXIT_INVALID, f"{path}:{e.line}:{e.column}: {type(e).__name__}: {e.message}") from None


def _application(doc: NetlistDocument, path: Path) -> Application:
    if doc.application is None:
        raise _Failure(EXIT_INVALID, f"{path}: no application declared")
    return doc.application.configure()


def cmd_validate(path: Path, out: IO[str]) -> int:
    doc = _load(path)
    app = "" if doc.application is None else f", application {doc.application.name}"
    print(f"{path}: ok ({len(doc.types)} types{app})", file=out)
    return EXIT_OK


def cmd_run(cfg: RunConfig, out: IO[str], environ: dict[str, str] | os._Environ = os.environ) -> int:
    doc = _load(cfg.netlist)
    app = _application(doc, cfg.netlist)
    if cfg.flatten:
        try:
            app = flatten_application(app)
        except ValidationError as e:
            raise _Failure(EXIT_RECURSIVE if isinstance(e, RecursiveComposite) else EXIT_INVALID, str(e)) from None
    lines = _read(cfg.script).splitlines() if cfg.script is not None else list(cfg.events)
    try:
        inputs = parse_script(lines, app)
    except ScriptError as e:
        raise _Failure(EXIT_INVALID, str(e)) from None

    trace_file = None
    if cfg.trace is not None:
        try:
            trace_file = open(cfg.trace, "w", encoding="utf-8", newline="\n")
        except OSError as e:
            raise _Failure(EXIT_IO, f"cannot write {cfg.trace}: {e}") from None
    writer = TraceWriter(trace_file if trace_file is not None else out, threaded=trace_file is not None)
    assert app.state_seed is not None
    state = app.state_seed.copy()
    engine = Engine(
        state,
        nested_max_steps=cfg.nested_max_steps,
        trace=writer if trace_enabled(environ) else None,
    )
    outputs: list[ExternalOutput] = []
    status, message = EXIT_OK, ""
    try:
        for inp in inputs:
            engine.inject(inp)
            produced, _ = engine.run_to_quiescence(cfg.max_steps)
            outputs.extend(produced)
    except NonQuiescence as e:
        status, message = EXIT_NON_QUIESCENT, f"no quiescence: {e}"
    except ExecutionError as e:
        status, message = EXIT_RUNTIME, f"run-time error: {e}"
    except (UnknownExternalEvent, ExternalInputMismatch) as e:
        status, message = EXIT_INVALID, str(e)
    final = external_record(outputs)
    writer.write(final)
    try:
        writer.close()
    finally:
        if trace_file is not None:
            trace_file.close()
    if trace_file is not None:
        out.write(encode_record(final) + "\n")
    if status != EXIT_OK:
        raise _Failure(status, message)
    return EXIT_OK


def flatten_document(doc: NetlistDocument) -> tuple[NetlistDocument, tuple[int, int], tuple[int, int]]:
    """Flattened document plus (blocks, connections) before and after."""
    if doc.application is None:
        raise ValueError("no application to flatten")
    app = doc.application.configure()
    flat = flatten_application(app)
    before, after = network_size(app), network_size(flat)
    if flat is app:
        return doc, before, after
    types = tuple(t for t in doc.types if t.kind is not Kind.COMPOSITE)
    return NetlistDocument(types, application_decl(flat)), before, after


def cmd_flatten(path: Path, dest: str, out: IO[str], err: IO[str]) -> int:
    text = _read(path)
    try:
        doc = parse(text)
    except InvalidDeclaration as e:
        status = EXIT_RECURSIVE if isinstance(e.cause, RecursiveComposite) else EXIT_INVALID
        raise _Failure(status, f"{path}:{e.line}:{e.column}: {type(e.cause).__name__}: {e.message}") from None
    except ParseError as e:
        raise _Failure(EXIT_INVALID, f"{path}:{e.line}:{e.column}: {type(e).__name__}: {e.message}") from None
    if doc.application is None:
        raise _Failure(EXIT_INVALID, f"{path}: no application declared")
    try:
        flat, before, after = flatten_document(doc)
    except RecursiveComposite as e:
        raise _Failure(EXIT_RECURSIVE, str(e)) from None
    except ValidationError as e:
        raise _Failure(EXIT_INVALID, str(e)) from None
    result = serialize(flat)
    report = out
    if dest == "-":
        out.write(result)
        report = err
    else:
        try:
            Path(dest).write_text(result, encoding="utf-8", newline="\n")
        except OSError as e:
            raise _Failure(EXIT_IO, f"cannot write {dest}: {e}") from None
    print(f"blocks: {before[0]} -> {after[0]}", file=report)
    print(f"connections: {before[1]} -> {after[1]}", file=report)
    return EXIT_OK


# -- entry point ---------------------------------------------------------------------------


def _positive(text: str) -> int:
    try:
        n = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if n < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return n


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fbrun", description="Run event-driven function block applications.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="parse and validate a netlist")
    p.add_argument("file", type=Path)

    p = sub.add_parser("run", help="run an application against an input script")
    p.add_argument("file", type=Path)
    p.add_argument("--script", type=Path, required=True, help="external input events, one per line")
    p.add_argument("--flatten", action="store_true", help="inline all composites before running")
    p.add_argument("--max-steps", type=_positive, default=DEFAULT_MAX_STEPS)
    p.add_argument("--nested-max-steps", type=_positive, default=DEFAULT_NESTED_MAX_STEPS)
    p.add_argument("--trace", type=Path, help="write the trace here instead of stdout")

    p = sub.add_parser("flatten", help="write the application with all composites inlined")
    p.add_argument("file", type=Path)
    p.add_argument("-o", "--output", default="-", help="destination file, '-' for stdout")
    return parser


def main(
    argv: Sequence[str] | None = None,
    stdout: IO[str] | None = None,
    stderr: IO[str] | None = None,
    environ: dict[str, str] | None = None,
) -> int:
    out = stdout if stdout is not None else sys.stdout
    err = stderr if stderr is not None else sys.stderr
    env = environ if environ is not None else os.environ
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_INVALID if e.code else EXIT_OK
    commands: dict[str, Callable[[], int]] = {
        "validate": lambda: cmd_validate(args.file, out),
        "run": lambda: cmd_run(
            RunConfig(
                netlist=args.file,
                script=args.script,
                max_steps=args.max_steps,
                nested_max_steps=args.nested_max_steps,
                trace=args.trace,
                flatten=args.flatten,
            ),
            out,
            env,
        ),
        "flatten": lambda: cmd_flatten(args.file, args.output, out, err),
    }
    try:
        return commands[args.command]()
    except _Failure as f:
        print(f"fbrun: {f}", file=err)
        return f.status


if __name__ == "__main__":
    sys.exit(main())
