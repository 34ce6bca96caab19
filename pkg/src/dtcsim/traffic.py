"""Poisson task arrivals, FIFO transmission queues and delay bookkeeping.

Sizes and backlogs are integer bit counts so that queue conservation holds
exactly.  Time is tracked in slots; delays are reported in milliseconds at
slot granularity.
"""
from __future__ import annotations

import csv
import functools
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import poisson

from .exceptions import InvalidInputError

__all__ = [
    "Task",
    "UserQueue",
    "DelayStats",
    "draw_arrivals",
    "serve",
    "delay_stats",
    "urgency_slack",
    "write_task_trace",
]

CONTROL = 1
BEST_EFFORT = 0


@dataclass
class Task:
    user: int
    arrival_slot: int
    size: int
    deadline_ms: float
    remaining: int = None
    completion_slot: int | None = None

    def __post_init__(self):
        if self.size <= 0:
            raise InvalidInputError("task size must be positive")
        if self.remaining is None:
            self.remaining = self.size
        if not 0 <= self.remaining <= self.size:
            raise InvalidInputError("remaining bits must lie in [0, size]")

    @property
    def done(self):
        return self.completion_slot is not None

    def delay_ms(self, slot_ms):
        if self.completion_slot is None:
            return None
        return (self.completion_slot - self.arrival_slot) * slot_ms


@dataclass
class UserQueue:
    """FIFO queue of one user.

    ``arrival_rate`` is in tasks per second, ``task_bits`` is the fixed
    payload Q_u and ``deadline_ms`` the delay budget D_u.  ``service_class``
    is 1 for deadline-constrained control traffic and 0 for best effort.
    """

    user: int
    service_class: int = CONTROL
    arrival_rate: float = 1.0
    task_bits: int = 20_000
    deadline_ms: float = 5.0
    pending: deque = field(default_factory=deque)
    backlog: int = 0

    def __post_init__(self):
        if self.service_class not in (CONTROL, BEST_EFFORT):
            raise InvalidInputError("service_class must be 0 or 1")
        if self.arrival_rate < 0 or not math.isfinite(self.arrival_rate):
            raise InvalidInputError("arrival_rate must be finite and >= 0")
        if int(self.task_bits) != self.task_bits or self.task_bits <= 0:
            raise InvalidInputError("task_bits must be a positive integer")
        self.task_bits = int(self.task_bits)

    def push(self, slot, count=1):
        """Append ``count`` fresh tasks arriving in ``slot``; returns them."""
        new = [Task(self.user, slot, self.task_bits, self.deadline_ms) for _ in range(int(count))]
        self.pending.extend(new)
        self.backlog += self.task_bits * len(new)
        return new

    def head_arrival(self):
        return self.pending[0].arrival_slot if self.pending else None


@functools.lru_cache(maxsize=64)
def _cdf_table(mean):
    kmax = int(mean + 12.0 * math.sqrt(mean) + 20)
    return poisson.cdf(np.arange(kmax + 1), mean)


def draw_arrivals(rate, dt, rng, size=None):
    """Poisson(rate * dt) draws by inversion of the CDF.

    ``rate`` and ``dt`` only enter through their product, so any consistent
    pair of units works (tasks/s with seconds, tasks/ms with ms).
    """
    if rate < 0 or not math.isfinite(rate):
        raise InvalidInputError("arrival rate must be finite and >= 0")
    if dt <= 0:
        raise InvalidInputError("slot duration must be positive")
    u = rng.random(size)
    mean = rate * dt
    if mean == 0:
        return np.zeros_like(u, dtype=np.int64) if size is not None else 0
    cdf = _cdf_table(mean)
    k = np.minimum(np.searchsorted(cdf, u, side="right"), len(cdf) - 1)
    return k.astype(np.int64) if size is not None else int(k)


def serve(queue, bits, slot):
    """Drain up to ``bits`` from the queue head-first; returns completed tasks."""
    if bits < 0:
        raise InvalidInputError("served bits must be >= 0")
    budget = int(bits)
    done = []
    while budget > 0 and queue.pending:
        head = queue.pending[0]
        take = min(budget, head.remaining)
        head.remaining -= take
        queue.backlog -= take
        budget -= take
        if head.remaining == 0:
            head.completion_slot = slot
            done.append(queue.pending.popleft())
    return done


@dataclass(frozen=True)
class DelayStats:
    mean_delay_ms: dict
    violated: dict
    no_completions: tuple = ()

    @property
    def violation_count(self):
        return sum(self.violated.values())


def delay_stats(completed, slot_ms, users=()):
    """Per-user mean delay (ms) and violation flags against each user's deadline.

    Users listed in ``users`` with no completed task are reported in
    ``no_completions`` rather than given a delay.
    """
    sums, counts, deadlines = {}, {}, {}
    for t in completed:
        if t.completion_slot is None:
            raise InvalidInputError("delay_stats needs completed tasks only")
        sums[t.user] = sums.get(t.user, 0.0) + t.delay_ms(slot_ms)
        counts[t.user] = counts.get(t.user, 0) + 1
        deadlines[t.user] = t.deadline_ms
    mean = {u: sums[u] / counts[u] for u in sorted(sums)}
    violated = {u: mean[u] > deadlines[u] for u in mean}
    missing = tuple(sorted(set(users) - set(mean)))
    return DelayStats(mean, violated, missing)


def urgency_slack(queue, slot, slot_ms, drain_rate):
    """Time to the earliest pending deadline minus the estimated drain time, in ms.

    ``drain_rate`` (bits/s) is the service rate the user can expect.  An empty
    queue has infinite slack; a zero drain rate with backlog has -inf.
    """
    if not queue.pending:
        return math.inf
    head = queue.pending[0]
    to_deadline = head.arrival_slot * slot_ms + head.deadline_ms - slot * slot_ms
    if drain_rate <= 0:
        return -math.inf
    return to_deadline - 1000.0 * queue.backlog / drain_rate


def write_task_trace(path, tasks, slot_ms):
    """CSV of (user, arrival_slot, completion_slot, delay_ms, deadline_ms, violated)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["user", "arrival_slot", "completion_slot", "delay_ms", "deadline_ms", "violated"])
        for t in sorted(tasks, key=lambda t: (t.user, t.arrival_slot)):
            if t.completion_slot is None:
                w.writerow([t.user, t.arrival_slot, "", "", repr(float(t.deadline_ms)), ""])
            else:
                d = t.delay_ms(slot_ms)
                w.writerow([t.user, t.arrival_slot, t.completion_slot, repr(float(d)),
                            repr(float(t.deadline_ms)), int(d > t.deadline_ms)])
