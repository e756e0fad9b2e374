"""Recorded runs: events, operation records, and the history text format.

A history is a globally ordered list of events.  Each line of the text
format is

    SEQ PROC OPID KIND NAME PAYLOAD

where SEQ is a gapless 0-based global sequence number, PROC a process
index, OPID the operation the event belongs to, KIND one of INV/RES/STEP
and NAME one of PUSH/POP.  PAYLOAD is one of

    v:<value>#<pushid>   an element (push argument, pop return)
    empty                the empty-stack pop return
    true                 the push return
    L<line>              the numbered algorithm line of a STEP event
    -                    no payload (pop invocation)

Files are UTF-8, newline-terminated, sorted by SEQ.  This format is the
contract between the CLI subcommands: whatever records a run writes it,
and the checker reads it back.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Optional, Union

from .elements import EMPTY, Element, _Empty

Payload = Union[Element, _Empty, bool, int, None]


class EventKind(Enum):
    INVOCATION = "INV"
    RESPONSE = "RES"
    STEP = "STEP"


class OpName(Enum):
    PUSH = "PUSH"
    POP = "POP"


@dataclass(frozen=True)
class Event:
    """One atomic observation: an invocation, a response, or a numbered step.

    The payload depends on the kind: the pushed element for a PUSH
    invocation (None for POP), the returned value for a response (True,
    an Element, or EMPTY), and the algorithm line number for a step.
    """

    seq: int
    process: int
    op_id: int
    kind: EventKind
    name: OpName
    payload: Payload


class RecorderError(RuntimeError):
    """An event that no well-formed run could produce; aborts the run."""


class HistoryFormatError(ValueError):
    """A history file that does not parse; carries the offending line."""

    def __init__(self, lineno: int, message: str) -> None:
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class IllFormedHistory(ValueError):
    """An event sequence no single run could have produced."""

    def __init__(self, seq: int, message: str) -> None:
        super().__init__(message)
        self.seq = seq


# ---------------------------------------------------------------------------
# Recording
# ---------------------------------------------------------------------------


class Recorder:
    """Thread-safe event sink assigning the global sequence order.

    Every record call takes one internal lock, so the sequence numbers are
    gapless and unique, and the order of events in the history is the order
    in which the recording threads got through the recorder.  Per-process
    well-formedness (invoke, then steps, then respond) is enforced here so
    a harness bug cannot masquerade as an interesting history.

    With store_steps=False, step events are only tallied per line number,
    which keeps long stress runs cheap while preserving INV/RES events.
    """

    def __init__(self, store_steps: bool = True) -> None:
        self._lock = threading.Lock()
        self._events: list[Event] = []
        self._next_seq = 0
        self._pending: dict[int, tuple[int, OpName]] = {}
        self._step_counts: dict[int, int] = {}
        self._store_steps = store_steps

    def invocation(
        self, process: int, op_id: int, name: OpName, argument: Optional[Element] = None
    ) -> None:
        if name is OpName.PUSH and argument is None:
            raise RecorderError(f"push invocation of op {op_id} without an argument")
        if name is OpName.POP and argument is not None:
            raise RecorderError(f"pop invocation of op {op_id} with an argument")
        with self._lock:
            if process in self._pending:
                raise RecorderError(
                    f"process {process} invoked op {op_id} while op "
                    f"{self._pending[process][0]} is still pending"
                )
            self._pending[process] = (op_id, name)
            self._append(process, op_id, EventKind.INVOCATION, name, argument)

    def response(self, process: int, op_id: int, value: Payload) -> None:
        with self._lock:
            self._require_pending(process, op_id)
            name = self._pending.pop(process)[1]
            self._append(process, op_id, EventKind.RESPONSE, name, value)

    def step(self, process: int, op_id: int, line: int) -> None:
        with self._lock:
            name = self._require_pending(process, op_id)
            self._step_counts[line] = self._step_counts.get(line, 0) + 1
            if self._store_steps:
                self._append(process, op_id, EventKind.STEP, name, line)

    def tracer(self, process: int, op_id: int):
        """Bind process and op id into a step callback for a stack to call."""
        return lambda line: self.step(process, op_id, line)

    def history(self) -> "History":
        with self._lock:
            return History(tuple(self._events))

    def step_counts(self) -> dict[int, int]:
        with self._lock:
            return dict(self._step_counts)

    def _require_pending(self, process: int, op_id: int) -> OpName:
        pending = self._pending.get(process)
        if pending is None:
            raise RecorderError(f"process {process} has no pending operation")
        if pending[0] != op_id:
            raise RecorderError(
                f"process {process} recorded for op {op_id} while op "
                f"{pending[0]} is pending"
            )
        return pending[1]

    def _append(
        self, process: int, op_id: int, kind: EventKind, name: OpName, payload: Payload
    ) -> None:
        self._events.append(Event(self._next_seq, process, op_id, kind, name, payload))
        self._next_seq += 1


# ---------------------------------------------------------------------------
# Histories and operation records
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class History:
    """A validated, seq-ordered event sequence."""

    events: tuple[Event, ...]

    def __post_init__(self) -> None:
        for position, event in enumerate(self.events):
            if event.seq != position:
                raise ValueError(
                    f"event at position {position} has seq {event.seq}; "
                    "the sequence must be gapless and 0-based"
                )

    def __len__(self) -> int:
        return len(self.events)


@dataclass(frozen=True)
class OperationRecord:
    """One operation's interval: its invocation and (if any) its response."""

    op_id: int
    process: int
    name: OpName
    argument: Optional[Element]
    result: Payload
    invoked_at: int
    responded_at: Optional[int]

    @property
    def complete(self) -> bool:
        return self.responded_at is not None


def operations(history: History) -> list[OperationRecord]:
    """Pair up invocations and responses, in invocation order.

    Step events only need to belong to an invoked-but-unresponded op of the
    same process; anything else means the history is not well formed.
    """
    records: dict[int, OperationRecord] = {}
    pending: dict[int, int] = {}
    for event in history.events:
        if event.kind is EventKind.INVOCATION:
            if event.op_id in records:
                raise IllFormedHistory(event.seq, f"op {event.op_id} invoked twice")
            if event.process in pending:
                raise IllFormedHistory(
                    event.seq,
                    f"process {event.process} invoked op {event.op_id} "
                    f"while op {pending[event.process]} is pending",
                )
            argument = event.payload if event.name is OpName.PUSH else None
            if event.name is OpName.PUSH and not isinstance(argument, Element):
                raise IllFormedHistory(
                    event.seq, f"push invocation of op {event.op_id} lacks an element"
                )
            records[event.op_id] = OperationRecord(
                op_id=event.op_id,
                process=event.process,
                name=event.name,
                argument=argument,
                result=None,
                invoked_at=event.seq,
                responded_at=None,
            )
            pending[event.process] = event.op_id
        elif event.kind is EventKind.RESPONSE:
            if pending.get(event.process) != event.op_id:
                raise IllFormedHistory(
                    event.seq,
                    f"response for op {event.op_id} does not match the pending "
                    f"operation of process {event.process}",
                )
            del pending[event.process]
            record = records[event.op_id]
            records[event.op_id] = OperationRecord(
                op_id=record.op_id,
                process=record.process,
                name=record.name,
                argument=record.argument,
                result=event.payload,
                invoked_at=record.invoked_at,
                responded_at=event.seq,
            )
        else:
            if pending.get(event.process) != event.op_id:
                raise IllFormedHistory(
                    event.seq, f"step for op {event.op_id} outside its invocation interval"
                )
    return sorted(records.values(), key=lambda r: r.invoked_at)


def complete_operations(history: History) -> list[OperationRecord]:
    return [r for r in operations(history) if r.complete]


def pending_operations(history: History) -> list[OperationRecord]:
    return [r for r in operations(history) if not r.complete]


def precedes(a: OperationRecord, b: OperationRecord) -> bool:
    """True when a responded before b was invoked (the real-time order)."""
    return a.responded_at is not None and a.responded_at < b.invoked_at


def concurrent(a: OperationRecord, b: OperationRecord) -> bool:
    return a is not b and not precedes(a, b) and not precedes(b, a)


# ---------------------------------------------------------------------------
# Text format
# ---------------------------------------------------------------------------


def format_payload(payload: Payload) -> str:
    if payload is None:
        return "-"
    if payload is True:
        return "true"
    if isinstance(payload, _Empty):
        return "empty"
    if isinstance(payload, Element):
        return f"v:{payload.value}#{payload.push_id}"
    if isinstance(payload, int) and not isinstance(payload, bool):
        return f"L{payload}"
    raise ValueError(f"unencodable payload {payload!r}")


def format_event(event: Event) -> str:
    return (
        f"{event.seq} {event.process} {event.op_id} "
        f"{event.kind.value} {event.name.value} {format_payload(event.payload)}"
    )


def dumps(history: History) -> str:
    return "".join(format_event(e) + "\n" for e in history.events)


def _parse_payload(token: str, lineno: int) -> Payload:
    if token == "-":
        return None
    if token == "true":
        return True
    if token == "empty":
        return EMPTY
    if token.startswith("v:"):
        body = token[2:]
        value_text, sep, id_text = body.partition("#")
        if not sep:
            raise HistoryFormatError(lineno, f"element payload without '#': {token!r}")
        try:
            return Element(int(value_text), int(id_text))
        except ValueError:
            raise HistoryFormatError(lineno, f"bad element payload {token!r}") from None
    if token.startswith("L"):
        try:
            return int(token[1:])
        except ValueError:
            raise HistoryFormatError(lineno, f"bad step payload {token!r}") from None
    raise HistoryFormatError(lineno, f"unrecognized payload {token!r}")


def parse_event(line: str, lineno: int) -> Event:
    fields = line.split()
    if len(fields) != 6:
        raise HistoryFormatError(lineno, f"expected 6 fields, got {len(fields)}")
    seq_text, proc_text, opid_text, kind_text, name_text, payload_text = fields
    try:
        seq, process, op_id = int(seq_text), int(proc_text), int(opid_text)
    except ValueError:
        raise HistoryFormatError(lineno, "SEQ, PROC and OPID must be integers") from None
    try:
        kind = EventKind(kind_text)
    except ValueError:
        raise HistoryFormatError(lineno, f"unknown event kind {kind_text!r}") from None
    try:
        name = OpName(name_text)
    except ValueError:
        raise HistoryFormatError(lineno, f"unknown operation {name_text!r}") from None
    payload = _parse_payload(payload_text, lineno)
    is_line = isinstance(payload, int) and not isinstance(payload, bool)
    if kind is EventKind.STEP and not is_line:
        raise HistoryFormatError(lineno, "STEP events need an L<line> payload")
    if kind is not EventKind.STEP and is_line:
        raise HistoryFormatError(lineno, "L<line> payloads belong to STEP events")
    return Event(seq, process, op_id, kind, name, payload)


def loads(text: str) -> History:
    events: list[Event] = []
    linenos: list[int] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        event = parse_event(line, lineno)
        if event.seq != len(events):
            raise HistoryFormatError(
                lineno, f"seq {event.seq} out of order; expected {len(events)}"
            )
        events.append(event)
        linenos.append(lineno)
    history = History(tuple(events))
    try:
        operations(history)
    except IllFormedHistory as exc:
        raise HistoryFormatError(linenos[exc.seq], str(exc)) from None
    return history


def write_history(history: History, path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(dumps(history))


def read_history(path) -> History:
    with open(path, "r", encoding="utf-8") as handle:
        return loads(handle.read())
