"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

A summary of all lines is also shown at the end of the pytest run.
"""

import io
import random
import time

from fbrun import ExternalInput, flatten_application, start_state
from fbrun.cli import TraceWriter, external_record
from fbrun.ecc import BasicRuntimeState, run_ecc
from fbrun.model import Kind
from fbrun.scheduler import total_counts
from fbrun.subapp import BasicEntry, CompositeEntry, ServiceEntry, configure_subapplication, initial_state
from support import (
    CONSERVATION,
    CORPUS_APPS,
    corpus_app,
    corpus_doc,
    corpus_script,
    criterion,
    plain_outputs,
    random_composite,
    run_script,
    x2y2_subapp,
)

GRID = range(-1000, 1001)
GRID_CASES = len(GRID) ** 2  # 4,004,001
BUDGET_S = 60.0
CALIBRATION_ROWS = 40
SUBSAMPLE = 10_000

# quiescence checks made outside run_script (criteria 1 and 7)
_extra_checks = {"points": 0, "violations": 0}


def _check_point(state) -> None:
    _extra_checks["points"] += 1
    if state.enqueued != state.dequeued or state.pending:
        _extra_checks["violations"] += 1


# -- 1 --------------------------------------------------------------------------------------------


def test_criterion_1_x2y2_oracle():
    with criterion(1, "X2Y2 subapplication matches x*x - y*y") as c:
        app = x2y2_subapp()
        state = start_state(app)
        eng = state.engine
        mismatches = []
        evaluated = [0]

        def check(x: int, y: int) -> None:
            evaluated[0] += 1
            eng.inject_raw("EI", {"DI1": x, "DI2": y})
            outputs, _ = eng.run_to_quiescence(100)
            _check_point(state)
            if len(outputs) != 1 or outputs[0].event != "EO" or outputs[0].values["DO"].payload != x * x - y * y:
                mismatches.append((x, y, outputs))

        rows = list(GRID)
        started = time.perf_counter()
        for x in rows[:CALIBRATION_ROWS]:
            for y in GRID:
                check(x, y)
        per_case = (time.perf_counter() - started) / (CALIBRATION_ROWS * len(GRID))
        projected = per_case * GRID_CASES

        if projected <= BUDGET_S:
            for x in rows[CALIBRATION_ROWS:]:
                for y in GRID:
                    check(x, y)
            checked = GRID_CASES
            c.detail = f"full grid, {checked} cases in {time.perf_counter() - started:.1f} s"
        else:
            rng = random.Random(20240611)
            for _ in range(SUBSAMPLE):
                check(rng.choice(rows), rng.choice(rows))
            checked = SUBSAMPLE
            c.detail = f"projected full grid {projected:.0f} s > {BUDGET_S:.0f} s, {SUBSAMPLE} random cases"
        assert mismatches == [], mismatches[:5]
        # four internal deliveries per case: start -> add, sub; add, sub -> mul
        assert total_counts(state) == (4 * evaluated[0], 4 * evaluated[0], 0)


# -- 2 --------------------------------------------------------------------------------------------


def _configuration_shape(bt) -> None:
    app = configure_subapplication(bt, bt.name.lower())
    body, g = bt.composite, bt.interface
    assert len(app.types) == len(body.inner_types) + 2
    assert len(app.instances) == len(body.inner_instances) + 2
    assert len(app.external_inputs) == len(g.event_inputs)
    assert len(app.external_outputs) == len(g.event_outputs)
    start = app.type_of(app.start).interface
    stop = app.type_of(app.stop).interface
    assert (start.event_inputs, start.data_inputs, dict(start.input_assoc)) == ((), (), {})
    assert (stop.event_outputs, stop.data_outputs, dict(stop.output_assoc)) == ((), (), {})


def test_criterion_2_configuration_structure():
    with criterion(2, "configured subapplication structure") as c:
        _configuration_shape(corpus_doc("x2y2.fbn").type_named("X2Y2"))
        for seed in range(20):
            _configuration_shape(random_composite(random.Random(1000 + seed), f"RND{seed}"))
        c.detail = "X2Y2 and 20 random composites"


# -- 3 --------------------------------------------------------------------------------------------


def test_criterion_3_initial_state():
    with criterion(3, "initial state of the configured X2Y2 subapplication"):
        app = x2y2_subapp()
        state = initial_state(app)
        assert len(state.entries) == 5
        assert not state.pending
        for name, entry in state.entries.items():
            kind = app.type_of(name).kind
            values = [*entry.inputs.values(), *entry.outputs.values()]
            assert values and all(v == 0 for v in values), name
            if kind is Kind.BASIC:
                assert isinstance(entry, BasicEntry)
                first = app.type_of(name).basic.states[0].name
                assert entry.ecc_state == first and entry.internals == {}
                assert len(entry.as_tuple()) == 5
            else:
                assert isinstance(entry, ServiceEntry) and not isinstance(entry, CompositeEntry)
                assert len(entry.as_tuple()) == 3
        assert [e.ecc_state for e in state.entries.values() if isinstance(e, BasicEntry)] == ["START", "START", "IDLE"]


# -- 4 --------------------------------------------------------------------------------------------


def test_criterion_4_flattening_equivalence():
    with criterion(4, "hierarchical and flattened runs agree") as c:
        divergences = []
        scripts = 0
        for name in CORPUS_APPS:
            app = corpus_app(name)
            flat = flatten_application(app)
            assert flat is not app
            assert all(flat.type_of(i.name).kind is not Kind.COMPOSITE for i in flat.instances)
            rng = random.Random(f"flatten-{name}")
            for k in range(100):
                script = corpus_script(name, rng, rng.randint(1, 30))
                hier, _ = run_script(app, script)
                flattened, _ = run_script(flat, script)
                scripts += 1
                if plain_outputs(hier) != plain_outputs(flattened):
                    divergences.append((name, k))
        c.detail = f"{len(CORPUS_APPS)} applications, {scripts} scripts, {len(divergences)} divergences"
        assert divergences == []


# -- 5 --------------------------------------------------------------------------------------------


def _trace_stream(app, script) -> str:
    buf = io.StringIO()
    writer = TraceWriter(buf)
    outputs, _ = run_script(app, script, trace=writer)
    writer.write(external_record(outputs))
    writer.close()
    return buf.getvalue()


def test_criterion_5_determinism():
    with criterion(5, "repeated runs give byte-identical traces") as c:
        sizes = []
        for name in CORPUS_APPS:
            script = corpus_script(name, random.Random(f"determinism-{name}"), 1000)
            first = _trace_stream(corpus_app(name), script)
            second = _trace_stream(corpus_app(name), script)
            assert first.encode() == second.encode(), name
            sizes.append(len(first.encode()))
        c.detail = "1000-event scripts, trace sizes " + ", ".join(f"{n} bytes" for n in sizes)


# -- 6 --------------------------------------------------------------------------------------------


def test_criterion_6_conservation():
    with criterion(6, "enqueued == dequeued and queue empty at every quiescence point") as c:
        if not CONSERVATION.points:
            # run on its own: generate some quiescence points first
            for name in CORPUS_APPS:
                run_script(corpus_app(name), corpus_script(name, random.Random(6), 200))
        total = len(CONSERVATION.points) + _extra_checks["points"]
        c.detail = f"{total} quiescence points checked"
        assert CONSERVATION.violations() == []
        assert _extra_checks["violations"] == 0
        assert total > 0


# -- 7 --------------------------------------------------------------------------------------------


def test_criterion_7_throughput():
    with criterion(7, "one million X2Y2 inject-and-quiesce cycles within 60 s") as c:
        app = corpus_app("x2y2.fbn")
        state = start_state(app)
        eng = state.engine
        cycles = 1_000_000
        started = time.perf_counter()
        last = None
        for i in range(cycles):
            x, y = i % 2001 - 1000, (i * 7) % 2001 - 1000
            eng.inject_raw("EI", {"DI1": x, "DI2": y})
            last, _ = eng.run_to_quiescence(100)
        elapsed = time.perf_counter() - started
        _check_point(state)
        c.detail = f"{elapsed:.1f} s"
        x, y = (cycles - 1) % 2001 - 1000, ((cycles - 1) * 7) % 2001 - 1000
        assert [(o.event, o.values["DO"].payload) for o in last] == [("EO", x * x - y * y)]
        assert total_counts(state) == (5 * cycles, 5 * cycles, 0)
        assert elapsed < 60.0


# -- 8 --------------------------------------------------------------------------------------------


def test_criterion_8_element_kinds():
    with criterion(8, "basic, service, composite, application and subapplication all executed") as c:
        seen = set()

        # application with basic, service and composite instances
        app = corpus_app("motor.fbn")
        records = []
        outputs, state = run_script(
            app,
            [ExternalInput("CMD", {"SP": 1500}), ExternalInput("TICK", {"MEAS": 1000})],
            trace=records.append,
        )
        kinds = {r.kind for r in records}
        assert {"BASIC", "COMPOSITE", "SERVICE"} <= kinds
        assert [o.event for o in outputs] == ["DRIVE"]
        assert state["duty"].outputs["DUTY"] == outputs[0].values["DUTY"].payload  # latch ran
        assert state.engine.console == ["log.REQ"]  # console ran
        seen |= {"basic", "service", "composite", "application"}

        # a configured subapplication on its own
        sub = x2y2_subapp()
        assert sub.type_of(sub.start).kind is Kind.SERVICE
        out, _ = run_script(sub, [ExternalInput("EI", {"DI1": 4, "DI2": 1})])
        assert [(o.event, o.values["DO"].payload) for o in out] == [("EO", 15)]
        seen.add("subapplication")
        c.detail = ", ".join(sorted(seen))
        assert len(seen) == 5


# -- 9 --------------------------------------------------------------------------------------------


def test_criterion_9_two_state_chart():
    with criterion(9, "two-state chart runs Alg once, emits EO once, returns to STATE0"):
        bt = corpus_doc("oneshot.fbn").type_named("ONESHOT")
        st0 = BasicRuntimeState("fb", {}, {"RUNS": bt.interface.output_var("RUNS").initial}, {}, "STATE0")
        st1, emitted = run_ecc(bt.basic, st0, "EI")
        assert st1.ecc_state == "STATE0"
        assert emitted == ["EO"]
        assert st1.outputs["RUNS"].payload == 1

        # the same chart inside an application
        app = corpus_app("oneshot.fbn")
        records = []
        out, st = run_script(app, [ExternalInput("EI")], trace=records.append)
        assert [(o.event, o.values["RUNS"].payload) for o in out] == [("EO", 1)]
        assert [(r.instance, r.event, r.emitted) for r in records] == [("fb", "EI", (("EXTERNAL", "EO"),))]
        assert st["fb"].ecc_state == "STATE0"
