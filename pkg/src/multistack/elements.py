"""Shared value vocabulary for the stacks, the model, and the tooling.

Every pushed value is wrapped in an Element carrying the unique id of the
push that produced it.  Ids let the tooling tell two pushes of the same
integer apart, which is what makes return-sharing across pops observable
in a recorded run.
"""

from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass


class _Empty:
    """Singleton marker for the empty stack (also the pop result on empty)."""

    __slots__ = ()
    _instance = None

    def __new__(cls) -> "_Empty":
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "EMPTY"


EMPTY = _Empty()


@dataclass(frozen=True)
class Element:
    """A pushed value plus the identity of the push that created it."""

    value: int
    push_id: int

    def __repr__(self) -> str:
        return f"v:{self.value}#{self.push_id}"


class PushIdSource:
    """Mints process-wide unique push ids.

    CPython's itertools.count happens to be atomic, but that is an
    implementation detail, so hand out ids under a lock.
    """

    __slots__ = ("_counter", "_lock")

    def __init__(self, start: int = 1) -> None:
        self._counter = itertools.count(start)
        self._lock = threading.Lock()

    def fresh(self) -> int:
        with self._lock:
            return next(self._counter)

    def element(self, value: int) -> Element:
        return Element(value, self.fresh())
