"""Unit-evaluation counters.

Every upward or downward sweep over a circuit reports ``num_units * batch_size``
here. The counters give a machine-independent cost proxy for comparing training
strategies (e.g. factored training of sub-circuits vs. feeding every sample
through the whole circuit).
"""

from contextlib import contextmanager
from dataclasses import dataclass, field


@dataclass
class EvalCounter:
    unit_evaluations: int = 0
    sweeps: int = 0

    def add(self, units: int, batch: int) -> None:
        self.unit_evaluations += units * batch
        self.sweeps += 1


@dataclass
class _Stack:
    active: list = field(default_factory=list)


_STACK = _Stack()


def record_sweep(units: int, batch: int) -> None:
    for counter in _STACK.active:
        counter.add(units, batch)


@contextmanager
def count_evaluations():
    """Collect unit-evaluation counts for everything run inside the block."""
    counter = EvalCounter()
    _STACK.active.append(counter)
    try:
        yield counter
    finally:
        _STACK.active.remove(counter)
