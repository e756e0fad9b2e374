"""Decision procedures for recorded histories.

Two checks over the same machinery:

* check_set_linearizable: operations that observably shared one removal
  (pops returning the same push id) are grouped into a single class, and
  the search looks for an ordering of whole classes that respects
  real-time precedence and replays through the set-sequential model.
* check_linearizable: every operation is its own class, which is the
  classical condition against the plain sequential stack.

Grouping is forced, not searched: push ids are unique, so the partition
of pops by returned id is the only candidate.  That makes several
rejections structural (no search needed): pops sharing an id that do not
pairwise overlap, a popped id nobody pushed, or two pushes claiming one
id.

The search walks precedence-minimal classes depth first, replaying the
model state as it goes and memoizing (remaining classes, model state)
pairs that are known dead.  Accepted verdicts carry the witness ordering,
which is independently re-verified before being returned; histories with
more complete operations than the size cap come back undecided rather
than silently truncated.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum, auto
from typing import Optional, Sequence

from .elements import EMPTY, Element, _Empty
from .history import (
    History,
    OperationRecord,
    OpName,
    complete_operations,
    format_payload,
)
from .spec_machine import (
    ClassKind,
    ConcurrencyClass,
    TransitionError,
    apply_class,
    pop_empty_class,
    pop_group_class,
    push_class,
    replay,
)

DEFAULT_MAX_OPS = 16


class StructuralRefutation(Exception):
    """The history is rejected before any search: no grouping exists."""


class CheckOutcome(Enum):
    ACCEPTED = auto()
    REJECTED = auto()
    UNDECIDED = auto()


@dataclass(frozen=True)
class Verdict:
    outcome: CheckOutcome
    witness: Optional[tuple[ConcurrencyClass, ...]] = None
    refutation: Optional[str] = None

    @property
    def accepted(self) -> bool:
        return self.outcome is CheckOutcome.ACCEPTED


# ---------------------------------------------------------------------------
# Grouping
# ---------------------------------------------------------------------------


def _check_result_shapes(records: Sequence[OperationRecord]) -> None:
    for record in records:
        if record.name is OpName.PUSH:
            if record.result is not True:
                raise StructuralRefutation(
                    f"push op {record.op_id} returned "
                    f"{format_payload(record.result)} instead of true"
                )
            if record.argument is None:
                raise StructuralRefutation(f"push op {record.op_id} has no argument")
        else:
            if not isinstance(record.result, (Element, _Empty)):
                raise StructuralRefutation(
                    f"pop op {record.op_id} returned neither an element nor empty"
                )


def group_classes(records: Sequence[OperationRecord]) -> list[ConcurrencyClass]:
    """Partition complete operations into their only possible classes.

    Raises StructuralRefutation when no stack execution could have produced
    the records: duplicate push ids, a popped id that was never pushed, a
    popped value disagreeing with its push, or same-id pops that do not
    pairwise overlap.
    """
    if any(not r.complete for r in records):
        raise ValueError("grouping expects pending operations to be dropped first")
    _check_result_shapes(records)

    pushes_by_id: dict[int, OperationRecord] = {}
    for record in records:
        if record.name is OpName.PUSH:
            assert isinstance(record.argument, Element)
            previous = pushes_by_id.get(record.argument.push_id)
            if previous is not None:
                raise StructuralRefutation(
                    f"ops {previous.op_id} and {record.op_id} both pushed "
                    f"id #{record.argument.push_id}"
                )
            pushes_by_id[record.argument.push_id] = record

    classes: list[ConcurrencyClass] = []
    shared_pops: dict[int, list[OperationRecord]] = {}
    for record in records:
        if record.name is OpName.PUSH:
            assert isinstance(record.argument, Element)
            classes.append(push_class(record.op_id, record.argument))
        elif isinstance(record.result, _Empty):
            classes.append(pop_empty_class(record.op_id))
        else:
            assert isinstance(record.result, Element)
            returned = record.result
            push = pushes_by_id.get(returned.push_id)
            if push is None:
                raise StructuralRefutation(
                    f"op {record.op_id} popped {returned} but no push produced "
                    f"id #{returned.push_id}"
                )
            assert isinstance(push.argument, Element)
            if push.argument != returned:
                raise StructuralRefutation(
                    f"op {record.op_id} popped {returned} but op {push.op_id} "
                    f"pushed {push.argument}"
                )
            shared_pops.setdefault(returned.push_id, []).append(record)

    for push_id, members in sorted(shared_pops.items()):
        for i, a in enumerate(members):
            for b in members[i + 1 :]:
                if not _overlap(a, b):
                    raise StructuralRefutation(
                        f"ops {a.op_id} and {b.op_id} both popped id #{push_id} "
                        "but do not overlap in real time"
                    )
        element = members[0].result
        assert isinstance(element, Element)
        classes.append(pop_group_class([m.op_id for m in members], element))
    return classes


def _overlap(a: OperationRecord, b: OperationRecord) -> bool:
    assert a.responded_at is not None and b.responded_at is not None
    return not (a.responded_at < b.invoked_at or b.responded_at < a.invoked_at)


def lifted_precedence(
    records: Sequence[OperationRecord], classes: Sequence[ConcurrencyClass]
) -> set[tuple[int, int]]:
    """(i, j) pairs such that class i must be ordered before class j:
    some member of i responded before some member of j was invoked."""
    by_id = {r.op_id: r for r in records}
    pairs: set[tuple[int, int]] = set()
    for i, ci in enumerate(classes):
        for j, cj in enumerate(classes):
            if i == j:
                continue
            if any(
                by_id[a].responded_at < by_id[b].invoked_at
                for a in ci.op_ids
                for b in cj.op_ids
            ):
                pairs.add((i, j))
    return pairs


# ---------------------------------------------------------------------------
# Search
# ---------------------------------------------------------------------------


def _search(
    classes: Sequence[ConcurrencyClass],
    precedence: set[tuple[int, int]],
    inv_seq_of: dict[int, int],
) -> tuple[Optional[list[int]], str]:
    """Depth-first search for a precedence-respecting replayable order.

    Returns (order, "") on success or (None, refutation) on exhaustion.
    States are (remaining-class bitmask, model state); dead states are
    memoized so shared suffixes are refuted once.
    """
    n = len(classes)
    pred_mask = [0] * n
    for i, j in precedence:
        pred_mask[j] |= 1 << i
    # Deterministic witnesses: try ready classes by earliest member invocation.
    try_order = sorted(range(n), key=lambda i: min(inv_seq_of[op] for op in classes[i].op_ids))

    dead: set[tuple[int, tuple[int, ...]]] = set()
    prefix: list[int] = []
    best_depth = -1
    best_blocks: list[str] = []

    def recurse(remaining: int, state) -> bool:
        nonlocal best_depth, best_blocks
        if remaining == 0:
            return True
        key = (remaining, tuple(e.push_id for e in state))
        if key in dead:
            return False
        blocks: list[str] = []
        for i in try_order:
            bit = 1 << i
            if not remaining & bit or pred_mask[i] & remaining:
                continue
            try:
                next_state, _ = apply_class(state, classes[i])
            except TransitionError as exc:
                blocks.append(str(exc))
                continue
            prefix.append(i)
            if recurse(remaining & ~bit, next_state):
                return True
            prefix.pop()
        if len(prefix) > best_depth:
            best_depth = len(prefix)
            best_blocks = blocks or ["no class is ready under the precedence order"]
        dead.add(key)
        return False

    if recurse((1 << n) - 1, ()):
        return list(prefix), ""
    placed = best_depth
    detail = "; ".join(best_blocks[:3])
    return None, (
        f"no precedence-respecting order of the {n} classes replays as a stack "
        f"(best attempt placed {placed} of {n}; then: {detail})"
    )


def _verify_witness(
    order: Sequence[ConcurrencyClass], records: Sequence[OperationRecord]
) -> None:
    """Independent re-check of a found witness; a failure here is a checker bug."""
    verdict = replay(order)
    if not verdict.accepted:
        raise AssertionError(f"witness does not replay: {verdict.reason}")
    covered = sorted(op for cls in order for op in cls.op_ids)
    if covered != sorted(r.op_id for r in records):
        raise AssertionError("witness does not cover the operations exactly once")
    by_id = {r.op_id: r for r in records}
    for position, placed_first in enumerate(order):
        for placed_after in order[position + 1 :]:
            if any(
                by_id[a].responded_at < by_id[b].invoked_at
                for a in placed_after.op_ids
                for b in placed_first.op_ids
            ):
                raise AssertionError("witness order contradicts real-time precedence")


def _check(
    history: History, singletons: bool, max_ops: int
) -> Verdict:
    records = complete_operations(history)
    if len(records) > max_ops:
        return Verdict(
            CheckOutcome.UNDECIDED,
            refutation=f"{len(records)} complete operations exceed the cap of {max_ops}",
        )
    try:
        if singletons:
            _check_result_shapes(records)
            classes = _singleton_classes(records)
        else:
            classes = group_classes(records)
    except StructuralRefutation as exc:
        return Verdict(CheckOutcome.REJECTED, refutation=str(exc))

    precedence = lifted_precedence(records, classes)
    inv_seq_of = {r.op_id: r.invoked_at for r in records}
    order_indices, refutation = _search(classes, precedence, inv_seq_of)
    if order_indices is None:
        return Verdict(CheckOutcome.REJECTED, refutation=refutation)
    witness = tuple(classes[i] for i in order_indices)
    _verify_witness(witness, records)
    return Verdict(CheckOutcome.ACCEPTED, witness=witness)


def _singleton_classes(records: Sequence[OperationRecord]) -> list[ConcurrencyClass]:
    classes = []
    for record in records:
        if record.name is OpName.PUSH:
            assert isinstance(record.argument, Element)
            classes.append(push_class(record.op_id, record.argument))
        elif isinstance(record.result, _Empty):
            classes.append(pop_empty_class(record.op_id))
        else:
            assert isinstance(record.result, Element)
            classes.append(pop_group_class([record.op_id], record.result))
    return classes


def check_set_linearizable(history: History, max_ops: int = DEFAULT_MAX_OPS) -> Verdict:
    """Is there an ordering of the forced classes that replays as a stack
    and respects real-time precedence?  Pending operations are dropped."""
    return _check(history, singletons=False, max_ops=max_ops)


def check_linearizable(history: History, max_ops: int = DEFAULT_MAX_OPS) -> Verdict:
    """The classical condition: like check_set_linearizable but with every
    operation alone in its class, so no return sharing is allowed."""
    return _check(history, singletons=True, max_ops=max_ops)


# ---------------------------------------------------------------------------
# Witness files
# ---------------------------------------------------------------------------


def format_witness(witness: Sequence[ConcurrencyClass]) -> str:
    """One line per class, in witness order: CLASS k: opids -> returned value."""
    lines = []
    for k, cls in enumerate(witness, start=1):
        ops = ",".join(str(op) for op in cls.op_ids)
        if cls.kind is ClassKind.PUSH:
            value = format_payload(True)
        elif cls.kind is ClassKind.POP_EMPTY:
            value = format_payload(EMPTY)
        else:
            value = format_payload(cls.element)
        lines.append(f"CLASS {k}: {ops} -> {value}")
    return "".join(line + "\n" for line in lines)


def write_witness(witness: Sequence[ConcurrencyClass], path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(format_witness(witness))
