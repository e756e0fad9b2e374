"""Deterministic interpreter for the relaxed stack under chosen schedules.

The simulator runs the same numbered algorithm as the live stack (see the
relaxed_stack docstring) over an explicit shared state, so a schedule,
replayed twice, yields byte-identical histories.  One scheduled slot is
one shared-memory action (a top load, a flag read, the flag write, or a
compare-and-set) plus the private bookkeeping around it: invocations fuse
into the first action of an operation, returns into its last, and the
empty test of line 17 into the load that feeds it.  Shared actions are
never fused with each other, so every interleaving of shared actions is a
reachable schedule.  A fresh operation therefore enters at:

    push:  [inv, 3] -> [4] -> [6, res] with retries via [10] or a failed [6]
    pop:   [inv, 16, 17, res-empty]  or  [inv, 16, 17] -> [20] -> [21]
           -> [22, res], with [25] -> [16, 17] on a deleted top

Nodes live in an arena indexed by creation order; node references in the
top cell and thread registers are arena indices, so compare-and-set is
exact identity.  Histories produced here open with a provenance prologue:
a sequential run (process 0) that builds the initial memory, pushing each
seeded element and immediately popping the ones seeded as deleted.  The
prologue makes the emitted history self-contained, so the checker can
consume it without being told about the seed.

Every step re-checks two invariants on the new state: a deletion flag
never goes back to False and the reachable chain is acyclic; violations
raise instead of propagating silently.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterator, Optional, Sequence, Union

from .elements import EMPTY, Element, _Empty
from .history import Event, EventKind, History, OpName, Payload

PUSH_ENTRY_PC = 3
POP_ENTRY_PC = 16


class ScheduleError(Exception):
    """A schedule slot named a thread with nothing to do."""


class FixtureFormatError(ValueError):
    def __init__(self, lineno: int, message: str) -> None:
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class SimulationInvariantError(AssertionError):
    """A per-step invariant failed; the run is not trustworthy past here."""


class ExplorationTruncated(Exception):
    """A run exceeded the step bound before all threads finished."""


# ---------------------------------------------------------------------------
# Scenario and configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PlannedOp:
    op_id: int
    name: OpName
    element: Optional[Element] = None  # pushes only

    def __post_init__(self) -> None:
        if (self.name is OpName.PUSH) != (self.element is not None):
            raise ValueError("pushes carry an element; pops do not")


Expectation = Union[bool, int, _Empty]


@dataclass(frozen=True)
class Scenario:
    """Initial memory, per-thread programs, and optional schedule and checks.

    initial_memory lists (element, deleted) pairs deepest first; the last
    pair is the initial top.  Schedules use 1-based thread indices, the
    numbering the fixture files and printed runs share.
    """

    initial_memory: tuple[tuple[Element, bool], ...] = ()
    programs: tuple[tuple[PlannedOp, ...], ...] = ()
    schedule: Optional[tuple[int, ...]] = None
    expect_returns: Optional[tuple[Expectation, ...]] = None
    expect_logical: Optional[tuple[int, ...]] = None
    expect_memory: Optional[tuple[tuple[int, bool], ...]] = None


@dataclass(frozen=True)
class ArenaNode:
    element: Element
    next: Optional[int]
    elim: bool


@dataclass(frozen=True)
class ThreadState:
    """pc is the numbered line the thread executes next; None means idle.
    t and x are the register copies of the algorithm: arena indices,
    with None standing for the empty marker."""

    pc: Optional[int] = None
    op_index: int = 0
    t: Optional[int] = None
    x: Optional[int] = None


@dataclass(frozen=True)
class SimConfig:
    arena: tuple[ArenaNode, ...]
    top: Optional[int]
    threads: tuple[ThreadState, ...]


def initial_config(scenario: Scenario) -> SimConfig:
    arena = []
    for index, (element, elim) in enumerate(scenario.initial_memory):
        arena.append(ArenaNode(element, index - 1 if index else None, elim))
    top = len(arena) - 1 if arena else None
    threads = tuple(ThreadState() for _ in scenario.programs)
    return SimConfig(tuple(arena), top, threads)


def thread_enabled(scenario: Scenario, config: SimConfig, thread: int) -> bool:
    state = config.threads[thread]
    return state.pc is not None or state.op_index < len(scenario.programs[thread])


def finished(scenario: Scenario, config: SimConfig) -> bool:
    return not any(thread_enabled(scenario, config, i) for i in range(len(config.threads)))


# ---------------------------------------------------------------------------
# Stepping
# ---------------------------------------------------------------------------


def step(
    scenario: Scenario, config: SimConfig, thread: int, seq: int
) -> tuple[SimConfig, tuple[Event, ...]]:
    """Run one slot of the given 0-based thread.  Returns the new
    configuration and the events the slot emitted, seq-stamped from seq."""
    if not 0 <= thread < len(config.threads):
        raise ScheduleError(f"no thread {thread + 1}")
    state = config.threads[thread]
    program = scenario.programs[thread]
    if state.pc is None and state.op_index >= len(program):
        raise ScheduleError(f"thread {thread + 1} has no operations left")
    op = program[state.op_index]
    process = thread + 1

    events: list[Event] = []

    def emit(kind: EventKind, payload: Payload) -> None:
        events.append(Event(seq + len(events), process, op.op_id, kind, op.name, payload))

    arena = config.arena
    top = config.top
    pc = state.pc

    if pc is None and op.name is OpName.PUSH:
        # A push allocates its node once, up front; retries relink the same
        # node, mirroring the single x of the algorithm.
        emit(EventKind.INVOCATION, op.element)
        assert op.element is not None
        arena = arena + (ArenaNode(op.element, None, False),)
        state = replace(state, x=len(arena) - 1)
        pc = PUSH_ENTRY_PC

    if pc is None or pc == POP_ENTRY_PC:
        if pc is None:
            emit(EventKind.INVOCATION, None)
        state = replace(state, t=top)
        emit(EventKind.STEP, 16)
        emit(EventKind.STEP, 17)
        if top is None:
            emit(EventKind.RESPONSE, EMPTY)
            state = ThreadState(op_index=state.op_index + 1)
        else:
            state = replace(state, pc=20)
    elif pc == PUSH_ENTRY_PC:
        state = replace(state, t=top)
        emit(EventKind.STEP, 3)
        state = replace(state, pc=4)
    elif pc == 4:
        deleted = state.t is not None and arena[state.t].elim
        emit(EventKind.STEP, 4)
        state = replace(state, pc=10 if deleted else 6)
    elif pc == 6:
        assert state.x is not None
        arena = _with_node(arena, state.x, replace(arena[state.x], next=state.t))
        emit(EventKind.STEP, 6)
        if top == state.t:
            top = state.x
            emit(EventKind.RESPONSE, True)
            state = ThreadState(op_index=state.op_index + 1)
        else:
            state = replace(state, pc=PUSH_ENTRY_PC)
    elif pc == 10:
        assert state.t is not None
        if top == state.t:
            top = arena[state.t].next
        emit(EventKind.STEP, 10)
        state = replace(state, pc=PUSH_ENTRY_PC)
    elif pc == 20:
        assert state.t is not None
        deleted = arena[state.t].elim
        emit(EventKind.STEP, 20)
        state = replace(state, pc=25 if deleted else 21)
    elif pc == 21:
        assert state.t is not None
        arena = _with_node(arena, state.t, replace(arena[state.t], elim=True))
        emit(EventKind.STEP, 21)
        state = replace(state, pc=22)
    elif pc == 22:
        assert state.t is not None
        if top == state.t:  # one attempt, outcome ignored
            top = arena[state.t].next
        emit(EventKind.STEP, 22)
        emit(EventKind.RESPONSE, arena[state.t].element)
        state = ThreadState(op_index=state.op_index + 1)
    elif pc == 25:
        assert state.t is not None
        if top == state.t:
            top = arena[state.t].next
        emit(EventKind.STEP, 25)
        state = replace(state, pc=POP_ENTRY_PC)
    else:
        raise ScheduleError(f"thread {thread + 1} at impossible pc {pc}")

    threads = config.threads[:thread] + (state,) + config.threads[thread + 1 :]
    new_config = SimConfig(arena, top, threads)
    _check_step_invariants(config, new_config)
    return new_config, tuple(events)


def _with_node(
    arena: tuple[ArenaNode, ...], index: int, node: ArenaNode
) -> tuple[ArenaNode, ...]:
    return arena[:index] + (node,) + arena[index + 1 :]


def _check_step_invariants(before: SimConfig, after: SimConfig) -> None:
    for old, new in zip(before.arena, after.arena):
        if old.elim and not new.elim:
            raise SimulationInvariantError(
                f"deletion flag of {old.element} went back to False"
            )
    chain_indices(after)  # raises on a cycle


def chain_indices(config: SimConfig) -> list[int]:
    """Arena indices reachable from top, top first.  Raises on a cycle."""
    indices = []
    seen = set()
    node = config.top
    while node is not None:
        if node in seen:
            raise SimulationInvariantError(
                f"reachable chain has a cycle at {config.arena[node].element}"
            )
        seen.add(node)
        indices.append(node)
        node = config.arena[node].next
    return indices


def memory_of(config: SimConfig) -> list[tuple[Element, bool]]:
    """(element, deleted) for each reachable node, deepest first."""
    return [
        (config.arena[i].element, config.arena[i].elim)
        for i in reversed(chain_indices(config))
    ]


def logical_of(config: SimConfig) -> tuple[Element, ...]:
    """Undeleted reachable elements, deepest first."""
    return tuple(e for e, elim in memory_of(config) if not elim)


# ---------------------------------------------------------------------------
# Provenance prologue
# ---------------------------------------------------------------------------


def prologue_events(scenario: Scenario) -> list[Event]:
    """A sequential history (process 0) that legitimately builds the seeded
    memory: push every seeded element in depth order, and pop each one
    seeded as deleted right after its push, while it is still on top."""
    events: list[Event] = []
    op_id = 0

    def op(name: OpName, inv_payload: Payload, res_payload: Payload) -> None:
        nonlocal op_id
        op_id += 1
        events.append(Event(len(events), 0, op_id, EventKind.INVOCATION, name, inv_payload))
        events.append(Event(len(events), 0, op_id, EventKind.RESPONSE, name, res_payload))

    for element, elim in scenario.initial_memory:
        op(OpName.PUSH, element, True)
        if elim:
            op(OpName.POP, None, element)
    return events


# ---------------------------------------------------------------------------
# Scheduled replay
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScenarioResult:
    history: History
    config: SimConfig
    returns: tuple[tuple[Payload, ...], ...]  # per thread, in program order
    logical: tuple[Element, ...]
    memory: tuple[tuple[Element, bool], ...]


def replay_scenario(scenario: Scenario) -> ScenarioResult:
    """Run the scenario's schedule to its end and package the outcome."""
    if scenario.schedule is None:
        raise ValueError("scenario has no schedule to replay")
    config = initial_config(scenario)
    events = prologue_events(scenario)
    for slot, entry in enumerate(scenario.schedule):
        if not 1 <= entry <= len(config.threads):
            raise ScheduleError(f"schedule slot {slot + 1} names thread {entry}")
        config, emitted = step(scenario, config, entry - 1, len(events))
        events.extend(emitted)
    history = History(tuple(events))
    return ScenarioResult(
        history=history,
        config=config,
        returns=_returns_by_thread(scenario, history),
        logical=logical_of(config),
        memory=tuple(memory_of(config)),
    )


def _returns_by_thread(
    scenario: Scenario, history: History
) -> tuple[tuple[Payload, ...], ...]:
    results = {
        e.op_id: e.payload for e in history.events if e.kind is EventKind.RESPONSE
    }
    return tuple(
        tuple(results.get(op.op_id) for op in program if op.op_id in results)
        for program in scenario.programs
    )


def verify_expectations(scenario: Scenario, result: ScenarioResult) -> list[str]:
    """Compare a result against the scenario's EXPECT clauses; returns
    human-readable mismatch descriptions (empty means all pass)."""
    problems = []
    if scenario.expect_returns is not None:
        actual = [value for per_thread in result.returns for value in per_thread]
        expected = scenario.expect_returns
        if len(actual) != len(expected):
            problems.append(
                f"expected {len(expected)} returns, run produced {len(actual)}"
            )
        else:
            for index, (want, got) in enumerate(zip(expected, actual)):
                if not _return_matches(want, got):
                    problems.append(
                        f"return {index + 1}: expected {_expectation_text(want)}, "
                        f"got {got!r}"
                    )
    if scenario.expect_logical is not None:
        got_values = tuple(e.value for e in result.logical)
        if got_values != scenario.expect_logical:
            problems.append(
                f"logical state: expected {scenario.expect_logical}, got {got_values}"
            )
    if scenario.expect_memory is not None:
        got_memory = tuple((e.value, elim) for e, elim in result.memory)
        if got_memory != scenario.expect_memory:
            problems.append(
                f"memory: expected {scenario.expect_memory}, got {got_memory}"
            )
    return problems


def _return_matches(want: Expectation, got: Payload) -> bool:
    if want is True:
        return got is True
    if isinstance(want, _Empty):
        return isinstance(got, _Empty)
    return isinstance(got, Element) and got.value == want


def _expectation_text(want: Expectation) -> str:
    if want is True:
        return "true"
    if isinstance(want, _Empty):
        return "empty"
    return str(want)


# ---------------------------------------------------------------------------
# Exhaustive exploration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExploredRun:
    schedule: tuple[int, ...]
    history: History
    config: SimConfig


def explore(scenario: Scenario, max_steps: int = 500) -> Iterator[ExploredRun]:
    """Depth-first enumeration of every schedule of the scenario, yielding
    one finished run per interleaving, in deterministic order (lowest
    thread index first at every branch)."""
    prologue = prologue_events(scenario)
    events: list[Event] = list(prologue)
    schedule: list[int] = []

    def walk(config: SimConfig) -> Iterator[ExploredRun]:
        enabled = [
            i for i in range(len(config.threads)) if thread_enabled(scenario, config, i)
        ]
        if not enabled:
            yield ExploredRun(tuple(schedule), History(tuple(events)), config)
            return
        if len(schedule) >= max_steps:
            raise ExplorationTruncated(
                f"run exceeded {max_steps} slots at schedule {tuple(schedule)}"
            )
        for i in enabled:
            next_config, emitted = step(scenario, config, i, len(events))
            events.extend(emitted)
            schedule.append(i + 1)
            yield from walk(next_config)
            del events[len(events) - len(emitted) :]
            schedule.pop()

    yield from walk(initial_config(scenario))


def reachable_configs(scenario: Scenario) -> Iterator[SimConfig]:
    """Every distinct configuration any schedule can reach, each once.

    Distinctness is modulo arena numbering: configurations are keyed by
    which elements sit where, not by node creation order, so runs that
    allocate in a different order collapse together.  Runs always bottom
    out: flags only ever get set, the arena only grows, and a retry needs
    somebody else's successful swing, of which there are finitely many.
    """
    seen: set = set()

    def walk(config: SimConfig) -> Iterator[SimConfig]:
        key = config_key(config)
        if key in seen:
            return
        seen.add(key)
        yield config
        for i in range(len(config.threads)):
            if thread_enabled(scenario, config, i):
                next_config, _ = step(scenario, config, i, 0)
                yield from walk(next_config)

    yield from walk(initial_config(scenario))


def config_key(config: SimConfig):
    def ref(index: Optional[int]) -> Optional[Element]:
        return None if index is None else config.arena[index].element

    nodes = frozenset(
        (node.element, ref(node.next), node.elim) for node in config.arena
    )
    threads = tuple(
        (state.pc, state.op_index, ref(state.t), ref(state.x))
        for state in config.threads
    )
    return nodes, ref(config.top), threads


# ---------------------------------------------------------------------------
# Stall probe
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProbeReport:
    stalled: int
    budget: int
    steps_used: tuple[tuple[int, int], ...]  # (thread, slots its op took)
    failures: tuple[int, ...]  # 0-based threads whose op missed the budget

    @property
    def all_completed(self) -> bool:
        return not self.failures


def progress_probe(
    scenario: Scenario, config: SimConfig, stalled: int, budget: int
) -> ProbeReport:
    """Freeze one thread wherever it stands and let every other thread run
    round robin.  Each other thread must finish its current operation (or
    its next, if idle) within the given number of its own slots; no steps
    of the frozen thread are ever taken."""
    targets = {}
    for i in range(len(config.threads)):
        if i == stalled:
            continue
        if thread_enabled(scenario, config, i):
            targets[i] = config.threads[i].op_index + 1
    used = {i: 0 for i in targets}
    failures = []
    active = sorted(targets)
    while active:
        for i in list(active):
            if config.threads[i].op_index >= targets[i]:
                active.remove(i)
                continue
            if used[i] >= budget:
                failures.append(i)
                active.remove(i)
                continue
            config, _ = step(scenario, config, i, 0)
            used[i] += 1
    return ProbeReport(
        stalled=stalled,
        budget=budget,
        steps_used=tuple(sorted(used.items())),
        failures=tuple(sorted(failures)),
    )


def probe_budget(config: SimConfig, slack: int = 6) -> int:
    """The step allowance used by the sweep: slack slots per node still
    reachable from the top, plus slack for the empty case.  Deleted but
    not yet unlinked nodes count: each one can cost a traversing thread a
    help round, so the bound must pay for them.  Counting only undeleted
    nodes is genuinely too tight: park a pop between its flag write and
    its swing and the chain holds a deleted top with nothing live behind
    it, yet a fresh push still needs a failed swing, a reread, a help and
    a retry before it lands."""
    return slack * (len(chain_indices(config)) + 1)


# ---------------------------------------------------------------------------
# Fixtures
# ---------------------------------------------------------------------------


def parse_fixture(text: str) -> Scenario:
    """Parse the fixture format:

        INIT (17,F) (11,T) ...        seeded memory, deepest first
        OP <thread> PUSH <value>      one planned operation
        OP <thread> POP
        SCHED 1 2 3 ...               slot sequence, 1-based threads
        EXPECT RETURNS 13 empty true  planned-op returns, program order
        EXPECT LOGICAL 17 7
        EXPECT MEMORY (17,F) (8,F)

    '#' starts a comment; blank lines are ignored.  Element ids are minted
    deterministically: seeded elements first (deepest first), then pushed
    values in line order."""
    initial: Optional[list[tuple[int, bool]]] = None
    ops: list[tuple[int, int, Optional[int]]] = []  # (lineno, thread, value|None)
    schedule: Optional[tuple[int, ...]] = None
    expect_returns = None
    expect_logical = None
    expect_memory = None

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.split()
        keyword = fields[0]
        if keyword == "INIT":
            if initial is not None:
                raise FixtureFormatError(lineno, "INIT given twice")
            initial = [_parse_memory_pair(tok, lineno) for tok in fields[1:]]
        elif keyword == "OP":
            if len(fields) < 3:
                raise FixtureFormatError(lineno, "OP needs a thread and an operation")
            thread = _parse_int(fields[1], lineno, "thread")
            if thread < 1:
                raise FixtureFormatError(lineno, "threads are numbered from 1")
            if fields[2] == "PUSH":
                if len(fields) != 4:
                    raise FixtureFormatError(lineno, "OP ... PUSH needs one value")
                ops.append((lineno, thread, _parse_int(fields[3], lineno, "value")))
            elif fields[2] == "POP":
                if len(fields) != 3:
                    raise FixtureFormatError(lineno, "OP ... POP takes no value")
                ops.append((lineno, thread, None))
            else:
                raise FixtureFormatError(lineno, f"unknown operation {fields[2]!r}")
        elif keyword == "SCHED":
            if schedule is not None:
                raise FixtureFormatError(lineno, "SCHED given twice")
            schedule = tuple(_parse_int(tok, lineno, "schedule entry") for tok in fields[1:])
        elif keyword == "EXPECT":
            if len(fields) < 2:
                raise FixtureFormatError(lineno, "EXPECT needs a clause")
            clause = fields[1]
            if clause == "RETURNS":
                expect_returns = tuple(_parse_expectation(tok, lineno) for tok in fields[2:])
            elif clause == "LOGICAL":
                expect_logical = tuple(
                    _parse_int(tok, lineno, "value") for tok in fields[2:]
                )
            elif clause == "MEMORY":
                expect_memory = tuple(_parse_memory_pair(tok, lineno) for tok in fields[2:])
            else:
                raise FixtureFormatError(lineno, f"unknown EXPECT clause {clause!r}")
        else:
            raise FixtureFormatError(lineno, f"unknown keyword {keyword!r}")

    if initial is None:
        initial = []
    if not ops:
        raise FixtureFormatError(0, "fixture plans no operations")

    thread_count = max(thread for _, thread, _ in ops)
    if {thread for _, thread, _ in ops} != set(range(1, thread_count + 1)):
        raise FixtureFormatError(0, "threads must be numbered 1..n without gaps")

    next_id = 1
    memory = []
    for value, elim in initial:
        memory.append((Element(value, next_id), elim))
        next_id += 1
    op_id = sum(2 if elim else 1 for _, elim in memory)  # prologue ops come first
    programs: list[list[PlannedOp]] = [[] for _ in range(thread_count)]
    for _, thread, value in ops:
        op_id += 1
        if value is None:
            programs[thread - 1].append(PlannedOp(op_id, OpName.POP))
        else:
            programs[thread - 1].append(PlannedOp(op_id, OpName.PUSH, Element(value, next_id)))
            next_id += 1

    return Scenario(
        initial_memory=tuple(memory),
        programs=tuple(tuple(p) for p in programs),
        schedule=schedule,
        expect_returns=expect_returns,
        expect_logical=expect_logical,
        expect_memory=expect_memory,
    )


def _parse_memory_pair(token: str, lineno: int) -> tuple[int, bool]:
    if not (token.startswith("(") and token.endswith(")")):
        raise FixtureFormatError(lineno, f"memory pair {token!r} needs parentheses")
    value_text, sep, flag = token[1:-1].partition(",")
    if not sep or flag not in ("T", "F"):
        raise FixtureFormatError(lineno, f"memory pair {token!r} must be (value,T|F)")
    return _parse_int(value_text, lineno, "value"), flag == "T"


def _parse_expectation(token: str, lineno: int) -> Expectation:
    if token == "true":
        return True
    if token == "empty":
        return EMPTY
    return _parse_int(token, lineno, "return value")


def _parse_int(token: str, lineno: int, what: str) -> int:
    try:
        return int(token)
    except ValueError:
        raise FixtureFormatError(lineno, f"bad {what} {token!r}") from None


def load_fixture(path) -> Scenario:
    with open(path, "r", encoding="utf-8") as handle:
        return parse_fixture(handle.read())


def load_bundled_fixture(name: str) -> Scenario:
    """Load one of the packaged scenarios (shared_pop, helped_pop,
    push_race, push_helps)."""
    from importlib.resources import files

    resource = files(__package__).joinpath("fixtures", f"{name}.txt")
    return parse_fixture(resource.read_text(encoding="utf-8"))
