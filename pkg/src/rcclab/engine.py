"""Relentless congestion control sender and SACK receiver.

Sequence numbers are abstract segment indices.  The sender keeps a SACK
scoreboard of every outstanding segment, marks a hole lost once
``dupthresh`` higher segments have been SACKed, and reduces the congestion
window by exactly the number of segments marked lost.  With
``Variant.RCC_PLUS`` every retransmission is guarded by a trigger: the first
regular segment sent after it.  If the trigger is delivered before the
retransmission, the retransmission is presumed lost and sent again.

The sender never transmits on its own; :meth:`Sender.on_ack`,
:meth:`Sender.on_rto` and :meth:`Sender.start` return the transmissions the
caller has to put on the wire.
"""

from __future__ import annotations

import heapq
from bisect import bisect_left, bisect_right
from dataclasses import dataclass
from enum import Enum, IntEnum
from typing import Callable, Optional

DUPTHRESH = 3
INFINITE_SSTHRESH = float(2**30)


class Variant(str, Enum):
    RCC = "rcc"
    RCC_PLUS = "rcc+"


class Phase(IntEnum):
    SLOW_START = 0
    CONGESTION_AVOIDANCE = 1
    RECOVERY = 2

    @property
    def label(self) -> str:
        return ("SlowStart", "CongestionAvoidance", "Recovery")[self]


class SegState(IntEnum):
    IN_FLIGHT = 0
    SACKED = 1
    MARKED_LOST = 2
    RETRANSMITTED = 3


class ProtocolError(ValueError):
    """A malformed acknowledgement was handed to the sender."""


@dataclass(frozen=True)
class Params:
    p: float = 0.01
    b: int = 1
    rtt: float = 0.1
    mss: int = 1460
    rto_min: float = 1.0
    rto_max: float = 60.0
    rto_initial: float = 1.0
    initial_cwnd: float = 2.0
    initial_ssthresh: float = INFINITE_SSTHRESH
    seed: int = 0
    variant: Variant = Variant.RCC_PLUS
    dupthresh: int = DUPTHRESH
    cwnd_floor: float = 1.0
    delack_timeout: float = 0.2

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if not 0.0 < self.p < 1.0:
            raise ValueError(f"p must lie in (0, 1), got {self.p}")
        if self.b < 1:
            raise ValueError(f"b must be >= 1, got {self.b}")
        if self.rtt <= 0 or self.mss <= 0:
            raise ValueError("rtt and mss must be positive")
        if self.initial_cwnd < 1:
            raise ValueError("initial_cwnd must be >= 1")
        if self.cwnd_floor < 1:
            raise ValueError("cwnd_floor must be >= 1")
        if not 0 < self.rto_min <= self.rto_max:
            raise ValueError("need 0 < rto_min <= rto_max")


@dataclass(frozen=True)
class Ack:
    """Cumulative ack (next expected segment) plus half-open SACK blocks."""

    cum: int
    sack: tuple[tuple[int, int], ...] = ()


@dataclass(frozen=True)
class SendNew:
    seq: int


@dataclass(frozen=True)
class Retransmit:
    seq: int


@dataclass(frozen=True)
class CwndChanged:
    old: float
    new: float


@dataclass
class RetxTrigger:
    retx_seq: int
    trigger_seq: int = -1
    armed: bool = False


# trace event codes, shared with the compiled simulator
EV_SEND, EV_RETX, EV_DROP, EV_RECV, EV_ACK, EV_DELIVER, EV_LOST, EV_RTO = range(8)
EVENT_NAMES = ("send", "retx", "drop", "recv", "ack", "deliver", "lost", "rto")

TraceHook = Callable[[float, int, int], None]


class SackScoreboard:
    """Delivery state of every segment in ``[una, nxt)``."""

    def __init__(self, dupthresh: int = DUPTHRESH):
        self.dupthresh = dupthresh
        self.una = 0
        self.nxt = 0
        self.state: dict[int, SegState] = {}
        self.sent_at: dict[int, float] = {}
        self.ever_retx: set[int] = set()
        # SACKed ranges as seen by the sender, half-open and disjoint
        self.starts: list[int] = []
        self.ends: list[int] = []
        # un-SACKed original transmissions below high_sacked -> SACKed count above
        self.holes: dict[int, int] = {}
        self.high_sacked = -1
        self._lost_heap: list[int] = []
        self.pipe = 0
        self.unrepaired = 0

    # -- queries ---------------------------------------------------------

    def is_delivered(self, seq: int) -> bool:
        return seq < self.una or self.state.get(seq) is SegState.SACKED

    def outstanding(self) -> int:
        return self.nxt - self.una

    def holes_in_order(self) -> list[int]:
        return sorted(self.holes)

    def lost_pending(self) -> bool:
        heap = self._lost_heap
        while heap and self.state.get(heap[0]) is not SegState.MARKED_LOST:
            heapq.heappop(heap)
        return bool(heap)

    # -- transitions -----------------------------------------------------

    def record_new(self, seq: int, now: float) -> None:
        self.state[seq] = SegState.IN_FLIGHT
        self.sent_at[seq] = now
        self.nxt = seq + 1
        self.pipe += 1

    def pop_lost(self) -> Optional[int]:
        if not self.lost_pending():
            return None
        return heapq.heappop(self._lost_heap)

    def record_retx(self, seq: int, now: float) -> None:
        self.state[seq] = SegState.RETRANSMITTED
        self.sent_at[seq] = now
        self.ever_retx.add(seq)
        self.pipe += 1

    def mark_lost(self, seq: int) -> None:
        st = self.state[seq]
        if st is SegState.IN_FLIGHT:
            self.unrepaired += 1
        elif st is not SegState.RETRANSMITTED:
            raise ValueError(f"segment {seq} in state {st.name} cannot be marked lost")
        self.pipe -= 1
        self.holes.pop(seq, None)
        self.state[seq] = SegState.MARKED_LOST
        heapq.heappush(self._lost_heap, seq)

    def mark_all_lost(self) -> None:
        """Timeout: every un-SACKed outstanding segment needs retransmission."""
        for seq in range(self.una, self.nxt):
            st = self.state[seq]
            if st is SegState.IN_FLIGHT or st is SegState.RETRANSMITTED:
                self.mark_lost(seq)
        self.holes.clear()

    def validate(self, ack: Ack) -> None:
        if ack.cum > self.nxt:
            raise ProtocolError(f"cumulative ack {ack.cum} beyond highest sent {self.nxt - 1}")
        blocks = sorted(ack.sack)
        prev_end = None
        for start, end in blocks:
            if not start < end:
                raise ProtocolError(f"empty or inverted SACK block [{start}, {end})")
            if start < ack.cum or end > self.nxt:
                raise ProtocolError(f"SACK block [{start}, {end}) outside [{ack.cum}, {self.nxt})")
            if prev_end is not None and start < prev_end:
                raise ProtocolError("overlapping SACK blocks")
            prev_end = end

    def apply(self, ack: Ack, now: float):
        """Fold an acknowledgement into the scoreboard.

        Returns ``(delivered, newly_lost, rtt_sample)`` where ``delivered`` is
        the list of segments first reported delivered by this ack and
        ``newly_lost`` the holes that crossed the dupthresh.
        """
        delivered: list[int] = []
        rtt_sample = None
        state = self.state
        if ack.cum > self.una:
            last = ack.cum - 1
            if last not in self.ever_retx:
                rtt_sample = now - self.sent_at[last]
            for seq in range(self.una, ack.cum):
                st = state.pop(seq)
                del self.sent_at[seq]
                if st is SegState.SACKED:
                    continue
                delivered.append(seq)
                if st is SegState.IN_FLIGHT:
                    self.pipe -= 1
                    self.holes.pop(seq, None)
                elif st is SegState.RETRANSMITTED:
                    self.pipe -= 1
                    self.unrepaired -= 1
                else:
                    self.unrepaired -= 1
            self.ever_retx.difference_update(range(self.una, ack.cum))
            self.una = ack.cum
            self._trim_sacked(ack.cum)

        newly_sacked: list[int] = []
        for start, end in ack.sack:
            newly_sacked.extend(self._add_sacked(max(start, self.una), end))
        newly_sacked.sort()

        newly_lost: list[int] = []
        for seq in newly_sacked:
            st = state[seq]
            state[seq] = SegState.SACKED
            delivered.append(seq)
            if st is SegState.IN_FLIGHT:
                self.pipe -= 1
                self.holes.pop(seq, None)
            elif st is SegState.RETRANSMITTED:
                self.pipe -= 1
                self.unrepaired -= 1
            else:
                self.unrepaired -= 1
            if seq > self.high_sacked:
                for q in range(max(self.high_sacked + 1, self.una), seq):
                    if state[q] is SegState.IN_FLIGHT:
                        self.holes[q] = 0
                self.high_sacked = seq
            for hole in sorted(self.holes):
                if hole > seq:
                    break
                count = self.holes[hole] + 1
                if count >= self.dupthresh:
                    newly_lost.append(hole)
                    self.mark_lost(hole)
                else:
                    self.holes[hole] = count
        return delivered, newly_lost, rtt_sample

    def _trim_sacked(self, cum: int) -> None:
        i = bisect_right(self.ends, cum)
        del self.starts[:i]
        del self.ends[:i]
        if self.starts and self.starts[0] < cum:
            self.starts[0] = cum

    def _add_sacked(self, start: int, end: int) -> list[int]:
        """Merge ``[start, end)`` into the SACKed ranges, returning uncovered segments."""
        if start >= end:
            return []
        starts, ends = self.starts, self.ends
        lo = bisect_left(ends, start)
        hi = bisect_right(starts, end)
        fresh: list[int] = []
        cursor = start
        for i in range(lo, hi):
            if starts[i] > cursor:
                fresh.extend(range(cursor, min(starts[i], end)))
            cursor = max(cursor, ends[i])
        if cursor < end:
            fresh.extend(range(cursor, end))
        if lo < hi:
            new_start = min(start, starts[lo])
            new_end = max(end, ends[hi - 1])
        else:
            new_start, new_end = start, end
        starts[lo:hi] = [new_start]
        ends[lo:hi] = [new_end]
        return fresh


class Sender:
    """Bulk-transfer sender with infinite data to send."""

    def __init__(self, params: Params, trace: Optional[TraceHook] = None):
        self.params = params
        self.variant = params.variant
        self.b = params.b
        self.cwnd = float(params.initial_cwnd)
        self.ssthresh = float(params.initial_ssthresh)
        self.phase = Phase.SLOW_START
        self.scoreboard = SackScoreboard(params.dupthresh)
        self.triggers: dict[int, RetxTrigger] = {}
        self.rto_timer: Optional[float] = None
        self.timer_version = 0
        self.srtt: Optional[float] = None
        self.rttvar: Optional[float] = None
        self.rto = params.rto_initial
        self.round_end = 0
        self.round_cwnd = self.cwnd
        self.trace = trace
        # counters
        self.retransmitted = 0
        self.rto_count = 0
        self.marked_lost = 0
        self.decrease_requested = 0
        self.decrease_applied = 0.0
        self.conservation_violations = 0
        self.recovery_acks = 0

    @property
    def next_seq(self) -> int:
        return self.scoreboard.nxt

    @property
    def high_acked(self) -> int:
        return self.scoreboard.una

    @property
    def pipe(self) -> int:
        return self.scoreboard.pipe

    def _emit(self, now: float, event: int, seq: int) -> None:
        if self.trace is not None:
            self.trace(now, event, seq)

    # -- window rules ----------------------------------------------------

    def apply_rcc_decrease(self, n_lost: int) -> None:
        """Shrink the window by the number of newly lost segments."""
        if n_lost < 1:
            raise ValueError("a decrease needs at least one lost segment")
        new = max(self.params.cwnd_floor, self.cwnd - n_lost)
        self.decrease_requested += n_lost
        self.decrease_applied += self.cwnd - new
        self.cwnd = new
        self.ssthresh = new
        self.phase = Phase.RECOVERY

    def grow_window(self, acked_segments: int) -> None:
        """Slow start adds one segment per ACK; otherwise ``1/b`` per round.

        Growth continues during recovery; transmission there is separately
        limited to one segment per delivered segment.
        """
        if acked_segments <= 0:
            return
        if self.phase is Phase.SLOW_START:
            self.cwnd += 1.0
            if self.cwnd >= self.ssthresh:
                self.phase = Phase.CONGESTION_AVOIDANCE
        else:
            self.cwnd += acked_segments / (self.b * self.round_cwnd)

    # -- RCC+ triggers ---------------------------------------------------

    def register_trigger(self, retx_seq: int, trigger_seq: Optional[int] = None) -> RetxTrigger:
        trig = RetxTrigger(retx_seq)
        if trigger_seq is not None:
            trig.trigger_seq = trigger_seq
            trig.armed = True
        self.triggers[retx_seq] = trig
        return trig

    def _arm_pending(self, regular_seq: int) -> None:
        for trig in self.triggers.values():
            if not trig.armed:
                trig.trigger_seq = regular_seq
                trig.armed = True

    def check_triggers(self) -> list[Retransmit]:
        """Presume lost every retransmission whose trigger was delivered first."""
        sb = self.scoreboard
        fired: list[Retransmit] = []
        for retx_seq in sorted(self.triggers):
            trig = self.triggers[retx_seq]
            if sb.is_delivered(retx_seq):
                del self.triggers[retx_seq]
            elif trig.armed and sb.is_delivered(trig.trigger_seq):
                del self.triggers[retx_seq]
                sb.mark_lost(retx_seq)
                fired.append(Retransmit(retx_seq))
        return fired

    # -- timers ----------------------------------------------------------

    def _arm_timer(self, now: float) -> None:
        self.rto_timer = now + self.rto
        self.timer_version += 1

    def _clear_timer(self) -> None:
        if self.rto_timer is not None:
            self.rto_timer = None
            self.timer_version += 1

    def _rtt_sample(self, r: float) -> None:
        if self.srtt is None:
            self.srtt = r
            self.rttvar = r / 2.0
        else:
            self.rttvar = 0.75 * self.rttvar + 0.25 * abs(self.srtt - r)
            self.srtt = 0.875 * self.srtt + 0.125 * r
        self.rto = min(self.params.rto_max, max(self.params.rto_min, self.srtt + 4.0 * self.rttvar))

    # -- transmission ----------------------------------------------------

    def _transmit(self, now: float, budget: Optional[int]) -> list:
        sb = self.scoreboard
        plus = self.variant is Variant.RCC_PLUS
        actions: list = []
        while sb.pipe + 1.0 <= self.cwnd and (budget is None or budget > 0):
            seq = sb.pop_lost()
            if seq is not None:
                sb.record_retx(seq, now)
                self.retransmitted += 1
                if plus:
                    self.register_trigger(seq)
                actions.append(Retransmit(seq))
                self._emit(now, EV_RETX, seq)
            else:
                seq = sb.nxt
                sb.record_new(seq, now)
                if plus:
                    self._arm_pending(seq)
                actions.append(SendNew(seq))
                self._emit(now, EV_SEND, seq)
            if budget is not None:
                budget -= 1
        if actions and self.rto_timer is None:
            self._arm_timer(now)
        return actions

    def start(self, now: float = 0.0) -> list:
        return self._transmit(now, None)

    def on_ack(self, ack: Ack, now: float) -> list:
        sb = self.scoreboard
        sb.validate(ack)
        self._emit(now, EV_ACK, ack.cum)
        old_cwnd = self.cwnd
        advanced = ack.cum > sb.una
        delivered, lost, rtt = sb.apply(ack, now)
        for seq in delivered:
            self._emit(now, EV_DELIVER, seq)
        for seq in lost:
            self._emit(now, EV_LOST, seq)
        if rtt is not None:
            self._rtt_sample(rtt)
        if self.variant is Variant.RCC_PLUS:
            for fired in self.check_triggers():
                lost.append(fired.seq)
                self._emit(now, EV_LOST, fired.seq)
        if not delivered and not lost and not advanced:
            return []

        if lost:
            self.marked_lost += len(lost)
            self.apply_rcc_decrease(len(lost))
        high = max(sb.una - 1, sb.high_sacked)
        if high >= self.round_end:
            self.round_cwnd = self.cwnd
            self.round_end = sb.nxt
        self.grow_window(len(delivered))
        if self.phase is Phase.RECOVERY and sb.unrepaired == 0:
            self.phase = Phase.CONGESTION_AVOIDANCE

        if advanced:
            if sb.una < sb.nxt:
                self._arm_timer(now)
            else:
                self._clear_timer()

        in_recovery = self.phase is Phase.RECOVERY
        budget = len(delivered) if in_recovery else None
        sends = self._transmit(now, budget)
        if in_recovery:
            self.recovery_acks += 1
            if len(sends) > len(delivered):
                self.conservation_violations += 1
        actions: list = list(sends)
        if self.cwnd != old_cwnd:
            actions.append(CwndChanged(old_cwnd, self.cwnd))
        return actions

    def on_rto(self, now: float) -> list:
        sb = self.scoreboard
        if sb.una >= sb.nxt:
            self._clear_timer()
            return []
        self.rto_count += 1
        self.ssthresh = max(sb.pipe / 2.0, 2.0)
        self.cwnd = 1.0
        self.phase = Phase.SLOW_START
        sb.mark_all_lost()
        self.triggers.clear()
        self.rto = min(self.rto * 2.0, self.params.rto_max)
        self._emit(now, EV_RTO, sb.una)
        self.round_cwnd = self.cwnd
        self.round_end = sb.nxt
        self.rto_timer = None
        actions = self._transmit(now, None)
        if self.rto_timer is None:
            self._arm_timer(now)
        return actions


class Receiver:
    """In-order delivery, delayed ACKs every ``b`` segments, immediate SACK otherwise."""

    MAX_BLOCKS = 3

    def __init__(self, b: int = 1, delack_timeout: float = 0.2):
        self.b = b
        self.delack_timeout = delack_timeout
        self.rcv_next = 0
        self.starts: list[int] = []
        self.ends: list[int] = []
        self.recent: list[int] = []
        self.pending = 0
        self.delack_deadline: Optional[float] = None
        self.delack_version = 0

    def _block_of(self, seq: int) -> int:
        i = bisect_right(self.starts, seq) - 1
        if i >= 0 and self.ends[i] > seq:
            return i
        return -1

    def _ack(self) -> Ack:
        self.pending = 0
        if self.delack_deadline is not None:
            self.delack_deadline = None
            self.delack_version += 1
        blocks: list[tuple[int, int]] = []
        seen: set[int] = set()
        keep: list[int] = []
        for seq in self.recent:
            i = self._block_of(seq)
            if i < 0 or i in seen:
                continue
            seen.add(i)
            keep.append(seq)
            blocks.append((self.starts[i], self.ends[i]))
            if len(blocks) == self.MAX_BLOCKS:
                break
        self.recent = keep
        return Ack(self.rcv_next, tuple(blocks))

    def on_segment(self, seq: int, now: float) -> Optional[Ack]:
        if seq < self.rcv_next or self._block_of(seq) >= 0:
            return self._ack()
        if seq == self.rcv_next:
            had_gap = bool(self.starts)
            self.rcv_next += 1
            if self.starts and self.starts[0] == self.rcv_next:
                self.rcv_next = self.ends[0]
                del self.starts[0]
                del self.ends[0]
            if had_gap:
                return self._ack()
            self.pending += 1
            if self.pending >= self.b:
                return self._ack()
            if self.delack_deadline is None:
                self.delack_deadline = now + self.delack_timeout
                self.delack_version += 1
            return None
        # out of order
        starts, ends = self.starts, self.ends
        i = bisect_right(starts, seq)
        if i > 0 and ends[i - 1] == seq:
            ends[i - 1] = seq + 1
            if i < len(starts) and starts[i] == seq + 1:
                ends[i - 1] = ends[i]
                del starts[i]
                del ends[i]
        elif i < len(starts) and starts[i] == seq + 1:
            starts[i] = seq
        else:
            starts.insert(i, seq)
            ends.insert(i, seq + 1)
        self.recent.insert(0, seq)
        return self._ack()

    def on_delack_timer(self, now: float) -> Optional[Ack]:
        self.delack_deadline = None
        if self.pending == 0:
            return None
        return self._ack()
