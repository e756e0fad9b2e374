"""The baseline stack: plain LIFO, and no element ever returned twice."""

from __future__ import annotations

import random
import threading
from collections import Counter

from multistack.baseline_stack import TreiberStack
from multistack.elements import EMPTY


def test_sequential_lifo():
    stack = TreiberStack()
    model = []
    rng = random.Random(2)
    for _ in range(400):
        if rng.random() < 0.55:
            element = stack.make_element(rng.randint(1, 9))
            assert stack.push(element) is True
            model.append(element)
        else:
            result = stack.pop()
            assert result == (model.pop() if model else EMPTY)
            if result is EMPTY:
                assert not model
    assert stack.logical_state() == tuple(model)


def test_pop_on_empty():
    assert TreiberStack().pop() is EMPTY


def test_threaded_returns_are_unique_and_conserved():
    stack = TreiberStack()
    outcomes = [[] for _ in range(4)]

    def worker(thread):
        rng = random.Random(300 + thread)
        for _ in range(400):
            if rng.random() < 0.5:
                element = stack.make_element(rng.randint(1, 9))
                stack.push(element)
                outcomes[thread].append(("push", element))
            else:
                outcomes[thread].append(("pop", stack.pop()))

    workers = [threading.Thread(target=worker, args=(i,)) for i in range(4)]
    for w in workers:
        w.start()
    for w in workers:
        w.join()

    pushed = {e.push_id for ops in outcomes for kind, e in ops if kind == "push"}
    popped = [
        e for ops in outcomes for kind, e in ops if kind == "pop" and e is not EMPTY
    ]
    counts = Counter(e.push_id for e in popped)
    assert all(n == 1 for n in counts.values())  # strict: never shared
    remaining = {e.push_id for e in stack.logical_state()}
    assert set(counts) | remaining == pushed
    assert not set(counts) & remaining
