"""Single-flow discrete-event simulation: sender, delay link, receiver.

Events are ``(time, ordinal)`` ordered, the ordinal being a global creation
counter.  Because both link directions have a constant propagation delay and
serve segments first-in first-out, their arrival events are already sorted
on creation; the calendar is therefore two FIFO queues plus the
retransmission and delayed-ACK timers, merged by ``(time, ordinal)``.
"""

from __future__ import annotations

import json
import math
import warnings
from collections import deque
from dataclasses import asdict, dataclass, field
from typing import IO, Optional, Union

from .engine import (
    EV_DROP,
    EV_RECV,
    EVENT_NAMES,
    Params,
    Phase,
    Receiver,
    Retransmit,
    SendNew,
    Sender,
)
from .lossmodel import ChannelSpec, ScriptedSpec

WARMUP_FRACTION = 0.2
MIN_LOSS_EVENTS = 500


class SimulationError(ValueError):
    pass


@dataclass(frozen=True)
class LinkConfig:
    one_way_delay: float
    capacity: Optional[float] = None  # bits/second, None = unbounded

    @classmethod
    def for_rtt(cls, rtt: float, capacity: Optional[float] = None) -> "LinkConfig":
        return cls(rtt / 2.0, capacity)


@dataclass
class SimResult:
    sim_duration: float
    warmup: float
    delivered_segments: int
    retransmitted: int
    rto_count: int
    throughput: float
    loss_events: int
    dropped: int
    transmissions: int
    decrease_requested: int
    decrease_applied: float
    conservation_violations: int
    recovery_acks: int
    cwnd_series: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass(frozen=True)
class TraceRecord:
    t: float
    event: str
    seq: int
    cwnd: float
    phase: str
    rto_count: int

    def to_json(self) -> str:
        return json.dumps(
            {"t": self.t, "event": self.event, "seq": self.seq, "cwnd": self.cwnd,
             "phase": self.phase, "rto_count": self.rto_count}
        )


def default_rounds(p: float, b: int = 1, min_rounds: int = 20_000) -> int:
    """Rounds needed for ``MIN_LOSS_EVENTS`` expected losses, floored at ``min_rounds``."""
    expected_window = 1.0 / (b * p)
    return max(min_rounds, math.ceil(MIN_LOSS_EVENTS / (p * expected_window)))


def resolve_duration(params: Params, duration: Optional[float], rounds: Optional[int]) -> float:
    if duration is None and rounds is None:
        rounds = default_rounds(params.p, params.b)
    if duration is None:
        duration = rounds * params.rtt
    if not duration > 0:
        raise SimulationError("simulation duration must be positive")
    return float(duration)


def run_sim(
    params: Params,
    link: Optional[LinkConfig] = None,
    channel: Union[str, ChannelSpec, ScriptedSpec, None] = None,
    duration: Optional[float] = None,
    rounds: Optional[int] = None,
    trace: Optional[list] = None,
    backend: str = "fast",
) -> SimResult:
    """Simulate one bulk flow and measure its post-warmup throughput.

    ``channel`` defaults to uniform losses at ``params.p``.  ``backend`` picks
    the compiled kernel (``"fast"``) or the object-level reference
    simulator (``"reference"``); both produce identical results and traces.
    When ``trace`` is a list, one :class:`TraceRecord` is appended per state
    transition.
    """
    if link is None:
        link = LinkConfig.for_rtt(params.rtt)
    if channel is None:
        channel = ChannelSpec("uniform", params.p)
    elif isinstance(channel, str):
        channel = ChannelSpec.parse(channel)
    channel.validate()
    if link.capacity is not None and link.capacity <= 0:
        raise SimulationError("link capacity must be positive")
    end = resolve_duration(params, duration, rounds)
    if isinstance(channel, ScriptedSpec):
        # the compiled kernel only knows the random channels
        backend = "reference"
    if backend == "fast":
        from ._kernel import run_kernel

        result = run_kernel(params, link, channel, end, trace)
    elif backend == "reference":
        result = _run_reference(params, link, channel, end, trace)
    else:
        raise ValueError(f"unknown backend {backend!r}")
    if channel.p > 0 and result.loss_events < MIN_LOSS_EVENTS:
        warnings.warn(
            f"only {result.loss_events} loss events in {end:g}s; throughput may not be at steady state",
            RuntimeWarning,
            stacklevel=2,
        )
    return result


def _run_reference(params: Params, link: LinkConfig, spec: ChannelSpec, end: float,
                   trace: Optional[list]) -> SimResult:
    chan = spec.build(params.seed)
    delay = link.one_way_delay
    ser = 0.0 if link.capacity is None else params.mss * 8.0 / link.capacity
    rtt = params.rtt

    sender: Sender
    receiver = Receiver(params.b, params.delack_timeout)

    def hook(t: float, event: int, seq: int) -> None:
        trace.append(
            TraceRecord(t, EVENT_NAMES[event], seq, sender.cwnd, Phase(sender.phase).label, sender.rto_count)
        )

    sender = Sender(params, trace=hook if trace is not None else None)
    ordinal = 0
    data_q: deque = deque()
    ack_q: deque = deque()
    link_free = 0.0
    transmissions = 0
    dropped = 0
    rto_event: Optional[tuple] = None
    rto_version = -1
    delack_event: Optional[tuple] = None
    delack_version = -1

    def put_on_wire(actions, now):
        nonlocal ordinal, link_free, transmissions, dropped
        for action in actions:
            if not isinstance(action, (SendNew, Retransmit)):
                continue
            transmissions += 1
            depart = max(now, link_free) + ser
            link_free = depart
            if chan.should_drop():
                dropped += 1
                if trace is not None:
                    hook(now, EV_DROP, action.seq)
                continue
            data_q.append((depart + delay, ordinal, action.seq))
            ordinal += 1

    def sync_timers():
        nonlocal rto_event, rto_version, delack_event, delack_version, ordinal
        if sender.timer_version != rto_version:
            rto_version = sender.timer_version
            if sender.rto_timer is None:
                rto_event = None
            else:
                rto_event = (sender.rto_timer, ordinal)
                ordinal += 1
        if receiver.delack_version != delack_version:
            delack_version = receiver.delack_version
            if receiver.delack_deadline is None:
                delack_event = None
            else:
                delack_event = (receiver.delack_deadline, ordinal)
                ordinal += 1

    def send_ack(ack, now):
        nonlocal ordinal
        if ack is not None:
            ack_q.append((now + delay, ordinal, ack))
            ordinal += 1

    warm_t = WARMUP_FRACTION * end
    warm_delivered = None
    samples: list = []
    next_sample = 0

    put_on_wire(sender.start(0.0), 0.0)
    sync_timers()
    while True:
        # pick the earliest of the four event sources
        best = None
        src = -1
        if data_q:
            best = data_q[0]
            src = 0
        if ack_q and (best is None or ack_q[0][:2] < best[:2]):
            best = ack_q[0]
            src = 1
        if rto_event is not None and (best is None or rto_event < best[:2]):
            best = rto_event
            src = 2
        if delack_event is not None and (best is None or delack_event < best[:2]):
            best = delack_event
            src = 3
        if best is None or best[0] > end:
            break
        now = best[0]
        while next_sample * rtt <= now:
            samples.append((next_sample * rtt, sender.cwnd))
            next_sample += 1
        if warm_delivered is None and now >= warm_t:
            warm_delivered = receiver.rcv_next
        if src == 0:
            seq = data_q.popleft()[2]
            if trace is not None:
                hook(now, EV_RECV, seq)
            send_ack(receiver.on_segment(seq, now), now)
        elif src == 1:
            ack = ack_q.popleft()[2]
            put_on_wire(sender.on_ack(ack, now), now)
        elif src == 2:
            rto_event = None
            sender.rto_timer = None
            put_on_wire(sender.on_rto(now), now)
        else:
            delack_event = None
            send_ack(receiver.on_delack_timer(now), now)
        sync_timers()

    while next_sample * rtt <= end:
        samples.append((next_sample * rtt, sender.cwnd))
        next_sample += 1
    if warm_delivered is None:
        warm_delivered = receiver.rcv_next
    post = end - warm_t
    throughput = (receiver.rcv_next - warm_delivered) * params.mss / post if post > 0 else 0.0
    return SimResult(
        sim_duration=end,
        warmup=warm_t,
        delivered_segments=receiver.rcv_next,
        retransmitted=sender.retransmitted,
        rto_count=sender.rto_count,
        throughput=throughput,
        loss_events=sender.marked_lost,
        dropped=dropped,
        transmissions=transmissions,
        decrease_requested=sender.decrease_requested,
        decrease_applied=sender.decrease_applied,
        conservation_violations=sender.conservation_violations,
        recovery_acks=sender.recovery_acks,
        cwnd_series=samples,
    )


def measure_constant_inputs(result: SimResult, params: Params) -> dict:
    """Normalise a throughput to the constant in ``C * MSS / (RTT * p)``."""
    return {"p": params.p, "c": result.throughput * params.rtt * params.p / params.mss}


def write_trace(records: list, fh: IO[str]) -> None:
    for rec in records:
        fh.write(rec.to_json())
        fh.write("\n")


@dataclass
class TraceAudit:
    recovery_acks: int = 0
    violations: int = 0
    lost_events: int = 0
    rto_events: int = 0


def audit_trace(records: list) -> TraceAudit:
    """Re-check packet conservation from a trace alone.

    Records are grouped per processed ACK (an ``ack`` record and everything
    up to the next ``ack``, ``recv`` or ``rto``).  A group that sends while
    in Recovery may not send more segments than it saw delivered.
    """
    audit = TraceAudit()
    sent = delivered = 0
    recovery = False
    in_group = False

    def close():
        if in_group and recovery:
            audit.recovery_acks += 1
            if sent > delivered:
                audit.violations += 1

    for rec in records:
        ev = rec.event
        if ev in ("ack", "recv", "rto"):
            close()
            in_group = ev == "ack"
            sent = delivered = 0
            recovery = False
            if ev == "rto":
                audit.rto_events += 1
        elif ev == "deliver":
            delivered += 1
        elif ev in ("send", "retx"):
            sent += 1
            recovery = recovery or rec.phase == "Recovery"
        elif ev == "lost":
            audit.lost_events += 1
    close()
    return audit
