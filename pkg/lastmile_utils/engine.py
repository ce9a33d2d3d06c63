"""Discrete-event simulation kernel: clock, event queue and seeded random streams.

Time is measured in hours throughout the package. The queue pops events in
``(at, seq)`` order, so simultaneous events are dispatched first-in first-out.
"""

import heapq
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from lastmile_utils.utils import NonPositiveRate, SchedulingInPast

__all__ = [
    "Payload",
    "Event",
    "EventQueue",
    "RngStream",
    "run_until",
    "sample_exponential",
    "write_event_trace",
    "RNG_ALGORITHM",
]

logger = logging.getLogger(__name__)

RNG_ALGORITHM = "numpy.random.PCG64"


@dataclass(frozen=True)
class Payload:
    """Model-level action tag plus its arguments, e.g. ``ArrivalAtSpoke("Alpha")``"""

    tag: str
    args: tuple = ()

    def __str__(self):
        return f"{self.tag}({','.join(str(a) for a in self.args)})"


@dataclass(frozen=True, order=True)
class Event:
    at: float
    seq: int
    payload: Payload = field(compare=False)

    def __str__(self):
        return f"{self.at:.9f}\t{self.seq}\t{self.payload}"


class EventQueue:
    """
    Priority queue of events ordered by ``(at, seq)`` with its own clock

    ``now`` is the time of the last dispatched event (or the last horizon
    reached by ``run_until``). Scheduling before ``now`` is an error.
    """

    def __init__(self, start=0.0):
        if start < 0:
            raise SchedulingInPast(f"Simulation clock cannot start before 0: {start}")
        self.now = float(start)
        self._heap = []
        self._next_seq = 0

    def __len__(self):
        return len(self._heap)

    def schedule(self, at, payload):
        """
        Enqueue ``payload`` to fire at time ``at``

        Parameters
        ----------
        at: float
            Absolute simulation time in hours
        payload: Payload

        Returns
        -------
        Event
            The enqueued event, carrying the next insertion sequence number

        Raises
        ------
        SchedulingInPast
            If ``at`` is earlier than the current clock
        """
        if at < self.now:
            msg = f"Cannot schedule {payload} at {at} before current clock {self.now}"
            logger.error(msg)
            raise SchedulingInPast(msg)
        event = Event(float(at), self._next_seq, payload)
        self._next_seq += 1
        heapq.heappush(self._heap, event)
        return event

    def peek(self):
        """Next event without removing it, or None when empty"""
        if len(self._heap) == 0:
            return None
        return self._heap[0]

    def pop(self):
        """Remove and return the next event, advancing the clock to its time"""
        event = heapq.heappop(self._heap)
        self.now = event.at
        return event


def run_until(queue, horizon, handler, trace=None):
    """
    Dispatch every event with ``at <= horizon`` in ``(at, seq)`` order

    The handler may schedule follow-up events; those inside the horizon are
    dispatched in the same call. When the run ends the clock is advanced to
    the horizon.

    Parameters
    ----------
    queue: EventQueue
    horizon: float
        Stop time in hours, must not precede ``queue.now``
    handler: callable
        Called as ``handler(event)`` for every dispatched event
    trace: list, optional
        If given, one trace line per dispatched event is appended to it

    Returns
    -------
    int
        Number of events dispatched
    """
    if horizon < queue.now:
        msg = f"Horizon {horizon} precedes current clock {queue.now}"
        logger.error(msg)
        raise SchedulingInPast(msg)

    steps = 0
    while len(queue) > 0 and queue.peek().at <= horizon:
        event = queue.pop()
        if trace is not None:
            trace.append(str(event))
        handler(event)
        steps += 1

    queue.now = float(horizon)
    logger.debug(f"Dispatched {steps} events up to t={horizon}")
    return steps


class RngStream:
    """
    Seeded random stream backed by numpy's PCG64 bit generator

    Identical seeds give identical sample sequences on every platform numpy
    supports. ``substream`` derives independent streams per model process
    through SeedSequence spawn keys, so adding a process never shifts the
    draws of another.
    """

    algorithm = RNG_ALGORITHM

    def __init__(self, seed, spawn_key=()):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.spawn_key = tuple(spawn_key)
        seed_seq = np.random.SeedSequence(entropy=self.seed, spawn_key=self.spawn_key)
        self._generator = np.random.Generator(np.random.PCG64(seed_seq))

    def substream(self, stream_id):
        return RngStream(self.seed, spawn_key=self.spawn_key + (int(stream_id),))

    def uniform_open_closed(self):
        """One uniform draw on (0, 1]"""
        return 1.0 - self._generator.random()

    def __repr__(self):
        return f"RngStream(seed={self.seed}, spawn_key={self.spawn_key}, algorithm={self.algorithm})"


def sample_exponential(rng, rate):
    """
    Draw an exponential time delta with the given rate

    Parameters
    ----------
    rng: RngStream
    rate: float
        Events per hour, must be positive

    Returns
    -------
    float
        ``-ln(u) / rate`` for ``u`` uniform on (0, 1]. A draw of exactly
        ``u = 1`` would give a zero gap and is redrawn, so the result is
        strictly positive.

    Raises
    ------
    NonPositiveRate
        If ``rate <= 0``
    """
    if not rate > 0:
        msg = f"Exponential rate must be positive, got {rate}"
        logger.error(msg)
        raise NonPositiveRate(msg)
    u = rng.uniform_open_closed()
    while u >= 1.0:
        u = rng.uniform_open_closed()
    return -math.log(u) / rate


def write_event_trace(trace, path):
    """Write trace lines (``time<TAB>seq<TAB>payload``) to ``path`` with LF endings"""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for line in trace:
            f.write(line + "\n")
    logger.info(f"Event trace with {len(trace)} events written to {path}")
