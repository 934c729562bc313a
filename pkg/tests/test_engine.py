import pytest
from hypothesis import given
from hypothesis import strategies as st

from rcclab.engine import (
    Ack,
    CwndChanged,
    Params,
    Phase,
    ProtocolError,
    Receiver,
    Retransmit,
    SendNew,
    Sender,
    Variant,
)


def sends(actions):
    return [a for a in actions if isinstance(a, (SendNew, Retransmit))]


def sender_with_window(w=10, variant=Variant.RCC_PLUS):
    s = Sender(Params(initial_cwnd=w, initial_ssthresh=w, variant=variant))
    out = s.start(0.0)
    assert [a.seq for a in out] == list(range(w))
    return s


def test_params_validation():
    with pytest.raises(ValueError):
        Params(p=0.0)
    with pytest.raises(ValueError):
        Params(b=0)
    with pytest.raises(ValueError):
        Params(rto_min=5.0, rto_max=1.0)
    assert Params(variant="rcc").variant is Variant.RCC


def test_decrease_by_lost_count():
    s = Sender(Params(initial_cwnd=10))
    s.apply_rcc_decrease(3)
    assert s.cwnd == 7
    assert s.phase is Phase.RECOVERY
    assert s.decrease_requested == 3 and s.decrease_applied == 3


def test_decrease_floors_at_one():
    s = Sender(Params(initial_cwnd=2))
    s.apply_rcc_decrease(5)
    assert s.cwnd == 1
    assert s.decrease_requested == 5 and s.decrease_applied == 1


def test_decrease_needs_a_loss():
    with pytest.raises(ValueError):
        Sender(Params()).apply_rcc_decrease(0)


@given(w=st.floats(1.0, 1e4), n=st.integers(1, 10_000))
def test_decrease_never_below_floor(w, n):
    s = Sender(Params(initial_cwnd=w))
    s.apply_rcc_decrease(n)
    assert s.cwnd == max(1.0, w - n)


def test_slow_start_adds_one_per_ack():
    s = Sender(Params(initial_cwnd=2))
    s.grow_window(1)
    s.grow_window(3)
    assert s.cwnd == 4


def test_avoidance_adds_one_over_b_per_round():
    s = Sender(Params(b=2, initial_cwnd=10))
    s.phase = Phase.CONGESTION_AVOIDANCE
    s.round_cwnd = 10.0
    for _ in range(10):
        s.grow_window(1)
    assert s.cwnd == pytest.approx(10.5)


def test_slow_start_exits_at_ssthresh():
    s = Sender(Params(initial_cwnd=3, initial_ssthresh=4))
    s.grow_window(1)
    assert s.phase is Phase.CONGESTION_AVOIDANCE


def test_cumulative_ack_opens_window():
    s = Sender(Params())
    assert [a.seq for a in s.start(0.0)] == [0, 1]
    out = s.on_ack(Ack(1), 0.1)
    assert [a.seq for a in sends(out)] == [2, 3]
    assert CwndChanged(2.0, 3.0) in out


def test_third_sack_marks_hole_lost_and_retransmits():
    s = sender_with_window(10)
    assert s.on_ack(Ack(0, ((1, 3),)), 0.1) != []
    assert s.marked_lost == 0
    out = s.on_ack(Ack(0, ((1, 4),)), 0.1)
    assert s.marked_lost == 1
    assert sends(out)[0] == Retransmit(0)
    assert s.phase is Phase.RECOVERY


def test_recovery_sends_at_most_one_per_delivery():
    s = sender_with_window(10)
    out = s.on_ack(Ack(0, ((1, 4),)), 0.1)
    assert len(sends(out)) <= 3
    out = s.on_ack(Ack(0, ((1, 5),)), 0.11)
    assert len(sends(out)) <= 1
    assert s.conservation_violations == 0


def test_trigger_is_first_new_segment_after_retransmission():
    s = sender_with_window(10)
    s.on_ack(Ack(0, ((1, 4),)), 0.1)
    trig = s.triggers[0]
    assert trig.armed and trig.trigger_seq == 10


def test_trigger_delivery_remarks_retransmission_lost():
    s = sender_with_window(10)
    s.on_ack(Ack(0, ((1, 4),)), 0.1)
    out = s.on_ack(Ack(0, ((1, 4), (10, 11))), 0.2)
    assert Retransmit(0) in out
    assert s.marked_lost == 2
    assert s.retransmitted == 2


def test_rcc_has_no_trigger():
    s = sender_with_window(10, Variant.RCC)
    s.on_ack(Ack(0, ((1, 4),)), 0.1)
    out = s.on_ack(Ack(0, ((1, 4), (10, 11))), 0.2)
    assert Retransmit(0) not in out
    assert s.triggers == {}


def test_delivered_retransmission_clears_trigger():
    s = sender_with_window(10)
    s.on_ack(Ack(0, ((1, 4),)), 0.1)
    s.on_ack(Ack(4), 0.2)
    assert s.triggers == {}
    assert s.phase is not Phase.RECOVERY


def test_rto_resets_window_and_backs_off():
    s = sender_with_window(10)
    out = s.on_rto(1.0)
    assert s.rto_count == 1 and s.cwnd == 1.0
    assert s.phase is Phase.SLOW_START
    assert sends(out) == [Retransmit(0)]
    assert s.rto == 2.0
    assert s.ssthresh == 5.0


def test_rto_backoff_is_capped():
    s = sender_with_window(4)
    for k in range(10):
        s.on_rto(float(k))
    assert s.rto == 60.0


def test_rtt_estimator_floor():
    s = sender_with_window(2)
    s.on_ack(Ack(1), 0.1)
    assert s.srtt == pytest.approx(0.1)
    assert s.rto == 1.0


@pytest.mark.parametrize("ack", [
    Ack(11),
    Ack(0, ((3, 3),)),
    Ack(0, ((4, 2),)),
    Ack(2, ((0, 1),)),
    Ack(0, ((5, 12),)),
    Ack(0, ((1, 4), (3, 6))),
])
def test_malformed_acks_rejected(ack):
    s = sender_with_window(10)
    with pytest.raises(ProtocolError):
        s.on_ack(ack, 0.1)


def test_sack_blocks_in_any_order():
    s = sender_with_window(10)
    s.on_ack(Ack(0, ((6, 7), (2, 3), (4, 5))), 0.1)
    assert s.marked_lost >= 1


def test_receiver_in_order_b1():
    r = Receiver(1)
    assert r.on_segment(0, 0.0) == Ack(1)
    assert r.on_segment(1, 0.0) == Ack(2)


def test_receiver_delays_every_other_ack():
    r = Receiver(2, delack_timeout=0.2)
    assert r.on_segment(0, 0.0) is None
    assert r.delack_deadline == pytest.approx(0.2)
    assert r.on_segment(1, 0.01) == Ack(2)
    assert r.delack_deadline is None
    assert r.on_segment(2, 0.02) is None
    assert r.on_delack_timer(0.22) == Ack(3)
    assert r.on_delack_timer(0.5) is None


def test_receiver_sacks_out_of_order_most_recent_first():
    r = Receiver(2)
    assert r.on_segment(1, 0.0) == Ack(0, ((1, 2),))
    assert r.on_segment(3, 0.0) == Ack(0, ((3, 4), (1, 2)))
    assert r.on_segment(2, 0.0) == Ack(0, ((1, 4),))
    assert r.on_segment(0, 0.0) == Ack(4)


def test_receiver_caps_sack_blocks():
    r = Receiver(1)
    for seq in (1, 3, 5, 7):
        ack = r.on_segment(seq, 0.0)
    assert ack.sack == ((7, 8), (5, 6), (3, 4))


def test_receiver_acks_duplicates_immediately():
    r = Receiver(2)
    r.on_segment(0, 0.0)
    r.on_segment(1, 0.0)
    assert r.on_segment(0, 0.1) == Ack(2)


@given(perm=st.permutations(list(range(12))))
def test_receiver_delivers_everything_in_any_order(perm):
    r = Receiver(1)
    for seq in perm:
        ack = r.on_segment(seq, 0.0)
    assert ack == Ack(12)
    assert r.starts == []
