"""Compiled twin of the reference simulator.

``run_kernel`` replays exactly the logic of :class:`~rcclab.engine.Sender`,
:class:`~rcclab.engine.Receiver` and ``netsim._run_reference`` on flat
arrays, drawing from the same channel generator, so that both backends
emit identical traces and results.  Any change to the protocol logic must be
made in both places; ``tests/test_kernel.py`` checks the two agree.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from .engine import EVENT_NAMES, Phase, Variant
from .lossmodel import _BLOCK, GilbertElliottChannel

# segment states, as in engine.SegState
_IN_FLIGHT = 0
_SACKED = 1
_MARKED_LOST = 2
_RETRANSMITTED = 3

_SS = 0
_CA = 1
_REC = 2

_EV_SEND, _EV_RETX, _EV_DROP, _EV_RECV, _EV_ACK, _EV_DELIVER, _EV_LOST, _EV_RTO = range(8)

_PHASE_LABELS = tuple(Phase(i).label for i in range(3))


class CapacityExceeded(Exception):
    """A fixed-size kernel buffer overflowed; the caller reruns with more room."""


@njit(cache=True)
def _bisect_right(a, n, x):
    lo, hi = 0, n
    while lo < hi:
        mid = (lo + hi) // 2
        if x < a[mid]:
            hi = mid
        else:
            lo = mid + 1
    return lo


@njit(cache=True)
def _bisect_left(a, n, x):
    lo, hi = 0, n
    while lo < hi:
        mid = (lo + hi) // 2
        if a[mid] < x:
            lo = mid + 1
        else:
            hi = mid
    return lo


@njit(cache=True)
def _remove_sorted(keys, vals, n, x):
    """Drop key ``x`` (if present) from a sorted key array; returns the new count."""
    i = _bisect_left(keys, n, x)
    if i < n and keys[i] == x:
        for j in range(i, n - 1):
            keys[j] = keys[j + 1]
            vals[j] = vals[j + 1]
        return n - 1
    return n


@njit(cache=True)
def _heap_push(h, n, x):
    if n == h.shape[0]:
        raise CapacityExceeded("heap")
    i = n
    h[i] = x
    while i > 0:
        parent = (i - 1) // 2
        if h[parent] <= h[i]:
            break
        h[parent], h[i] = h[i], h[parent]
        i = parent
    return n + 1


@njit(cache=True)
def _heap_pop(h, n):
    top = h[0]
    n -= 1
    h[0] = h[n]
    i = 0
    while True:
        left = 2 * i + 1
        if left >= n:
            break
        c = left
        if left + 1 < n and h[left + 1] < h[left]:
            c = left + 1
        if h[i] <= h[c]:
            break
        h[i], h[c] = h[c], h[i]
        i = c
    return top, n


@njit(cache=True)
def _fill(out, rng, kind, p, g, r, bad, left):
    """Refill ``out`` in place, exactly as the Python channel classes do."""
    n = out.shape[0]
    if kind == 0:
        u = rng.random(n)
        for i in range(n):
            out[i] = u[i] < p
        return bad, left
    filled = 0
    while filled < n:
        if left == 0:
            prob = r if bad else g
            if prob > 0:
                left = rng.geometric(prob)
            else:
                left = n - filled
        take = min(left, n - filled)
        out[filled:filled + take] = bad
        filled += take
        left -= take
        if left == 0:
            bad = not bad
    return bad, left


@njit(cache=True)
def _emit(trf, tri, n, t, ev, seq, cwnd, phase, rto_count):
    if n == trf.shape[0]:
        raise CapacityExceeded("trace")
    trf[n, 0] = t
    trf[n, 1] = cwnd
    tri[n, 0] = ev
    tri[n, 1] = seq
    tri[n, 2] = phase
    tri[n, 3] = rto_count
    return n + 1


@njit(cache=True)
def _kernel(fparams, iparams, rng, chan_kind, chan_p, chan_g, chan_r, chan_bad, chan_left, tracing,
            cap, trace_cap):
    # no array is rebound inside the event loop: rebinding makes numba
    # refcount every live array on every iteration, a sixfold slowdown
    (rtt, mss, rto_min, rto_max, rto_initial, initial_cwnd, initial_ssthresh,
     cwnd_floor, delack_timeout, delay, ser, end, warm_frac) = (
        fparams[0], fparams[1], fparams[2], fparams[3], fparams[4], fparams[5], fparams[6],
        fparams[7], fparams[8], fparams[9], fparams[10], fparams[11], fparams[12])
    b = iparams[0]
    plus = iparams[1] == 1
    dupthresh = iparams[2]

    # channel
    cbuf = np.zeros(_BLOCK, dtype=np.bool_)
    cpos = _BLOCK
    bad = chan_bad
    cleft = chan_left

    # scoreboard ring, indexed by seq & mask
    mask = cap - 1
    st = np.zeros(cap, dtype=np.int8)
    sent = np.zeros(cap, dtype=np.float64)
    evr = np.zeros(cap, dtype=np.bool_)
    una = 0
    nxt = 0
    high_sacked = -1
    pipe = 0
    unrepaired = 0
    h_seq = np.empty(cap, dtype=np.int64)
    h_cnt = np.empty(cap, dtype=np.int64)
    nh = 0
    s_st = np.empty(cap, dtype=np.int64)
    s_en = np.empty(cap, dtype=np.int64)
    ns = 0
    heap = np.empty(cap, dtype=np.int64)
    nheap = 0
    t_retx = np.empty(cap, dtype=np.int64)
    t_seq = np.empty(cap, dtype=np.int64)
    nt = 0

    # sender
    cwnd = initial_cwnd
    ssthresh = initial_ssthresh
    phase = _SS
    has_timer = False
    rto_timer = 0.0
    timer_version = 0
    has_srtt = False
    srtt = 0.0
    rttvar = 0.0
    rto = rto_initial
    round_end = 0
    round_cwnd = cwnd
    retransmitted = 0
    rto_count = 0
    marked_lost = 0
    decrease_requested = 0
    decrease_applied = 0.0
    violations = 0
    recovery_acks = 0

    # receiver
    rcv_next = 0
    r_st = np.empty(cap, dtype=np.int64)
    r_en = np.empty(cap, dtype=np.int64)
    nr = 0
    recent = np.empty(8, dtype=np.int64)
    nrecent = 0
    keep = np.empty(8, dtype=np.int64)
    seen = np.empty(3, dtype=np.int64)
    pending = 0
    has_delack = False
    delack_deadline = 0.0
    delack_ver = 0

    # per-ack scratch
    dbuf = np.empty(cap, dtype=np.int64)
    lbuf = np.empty(cap, dtype=np.int64)
    fbuf = np.empty(cap, dtype=np.int64)
    act = np.empty(cap, dtype=np.int64)
    nact = 0

    # link queues: circular buffers of 2 * cap entries
    qcap = 2 * cap
    qmask = qcap - 1
    dq_t = np.empty(qcap, dtype=np.float64)
    dq_o = np.empty(qcap, dtype=np.int64)
    dq_s = np.empty(qcap, dtype=np.int64)
    dq_h = 0
    dq_n = 0
    aq_t = np.empty(qcap, dtype=np.float64)
    aq_o = np.empty(qcap, dtype=np.int64)
    aq_i = np.empty((qcap, 2), dtype=np.int64)  # cum, number of blocks
    aq_b = np.empty((qcap, 6), dtype=np.int64)  # up to 3 (start, end) pairs
    aq_h = 0
    aq_n = 0

    ordinal = 0
    link_free = 0.0
    transmissions = 0
    dropped = 0
    has_rto_ev = False
    rto_ev_t = 0.0
    rto_ev_o = 0
    rto_version = -1
    has_dl_ev = False
    dl_ev_t = 0.0
    dl_ev_o = 0
    dl_version = -1

    trf = np.empty((trace_cap if tracing else 0, 2), dtype=np.float64)
    tri = np.empty((trace_cap if tracing else 0, 4), dtype=np.int64)
    ntr = 0

    nsamp_cap = int(end / rtt) + 8
    samp = np.empty((nsamp_cap, 2), dtype=np.float64)
    nsamp = 0
    next_sample = 0

    warm_t = warm_frac * end
    have_warm = False
    warm_delivered = 0

    ack_blocks = np.empty(6, dtype=np.int64)
    out_blocks = np.empty(6, dtype=np.int64)

    # src: -1 start, 0 data, 1 ack, 2 rto, 3 delack
    src = -1
    now = 0.0
    while True:
        nact = 0
        ack_out = False
        out_cum = 0
        out_nb = 0
        if src == -1 or src == 1 or src == 2:
            # ---------------- sender side ----------------
            budget = -1
            do_transmit = True
            if src == 1:
                k = aq_h
                cum = aq_i[k, 0]
                nb = aq_i[k, 1]
                for j in range(2 * nb):
                    ack_blocks[j] = aq_b[k, j]
                aq_h = (aq_h + 1) & qmask
                aq_n -= 1
                if tracing:
                    ntr = _emit(trf, tri, ntr, now, _EV_ACK, cum, cwnd, phase, rto_count)
                old_cwnd = cwnd
                advanced = cum > una
                nd = 0
                nl = 0
                has_rtt = False
                rtt_s = 0.0
                if cum > una:
                    last = cum - 1
                    if not evr[last & mask]:
                        has_rtt = True
                        rtt_s = now - sent[last & mask]
                    for seq in range(una, cum):
                        s = st[seq & mask]
                        if s == _SACKED:
                            evr[seq & mask] = False
                            continue
                        dbuf[nd] = seq
                        nd += 1
                        if s == _IN_FLIGHT:
                            pipe -= 1
                        elif s == _RETRANSMITTED:
                            pipe -= 1
                            unrepaired -= 1
                        else:
                            unrepaired -= 1
                        evr[seq & mask] = False
                    # every hole below cum was in flight and is now delivered
                    drop_n = _bisect_left(h_seq, nh, cum)
                    if drop_n > 0:
                        for j in range(drop_n, nh):
                            h_seq[j - drop_n] = h_seq[j]
                            h_cnt[j - drop_n] = h_cnt[j]
                        nh -= drop_n
                    una = cum
                    # trim sacked ranges
                    i = _bisect_right(s_en, ns, cum)
                    if i > 0:
                        for j in range(i, ns):
                            s_st[j - i] = s_st[j]
                            s_en[j - i] = s_en[j]
                        ns -= i
                    if ns > 0 and s_st[0] < cum:
                        s_st[0] = cum
                # merge SACK blocks
                nf = 0
                for bi in range(nb):
                    start = max(ack_blocks[2 * bi], una)
                    stop = ack_blocks[2 * bi + 1]
                    if start >= stop:
                        continue
                    lo = _bisect_left(s_en, ns, start)
                    hi = _bisect_right(s_st, ns, stop)
                    cursor = start
                    for i in range(lo, hi):
                        if s_st[i] > cursor:
                            for q in range(cursor, min(s_st[i], stop)):
                                fbuf[nf] = q
                                nf += 1
                        cursor = max(cursor, s_en[i])
                    if cursor < stop:
                        for q in range(cursor, stop):
                            fbuf[nf] = q
                            nf += 1
                    if lo < hi:
                        new_start = min(start, s_st[lo])
                        new_end = max(stop, s_en[hi - 1])
                        shift = hi - lo - 1
                        s_st[lo] = new_start
                        s_en[lo] = new_end
                        if shift > 0:
                            for j in range(hi, ns):
                                s_st[j - shift] = s_st[j]
                                s_en[j - shift] = s_en[j]
                            ns -= shift
                    else:
                        for j in range(ns, lo, -1):
                            s_st[j] = s_st[j - 1]
                            s_en[j] = s_en[j - 1]
                        s_st[lo] = start
                        s_en[lo] = stop
                        ns += 1
                # insertion sort: blocks are few and mostly ordered
                for i in range(1, nf):
                    x = fbuf[i]
                    j = i - 1
                    while j >= 0 and fbuf[j] > x:
                        fbuf[j + 1] = fbuf[j]
                        j -= 1
                    fbuf[j + 1] = x
                for fi in range(nf):
                    seq = fbuf[fi]
                    s = st[seq & mask]
                    st[seq & mask] = _SACKED
                    dbuf[nd] = seq
                    nd += 1
                    if s == _IN_FLIGHT:
                        pipe -= 1
                        nh = _remove_sorted(h_seq, h_cnt, nh, seq)
                    elif s == _RETRANSMITTED:
                        pipe -= 1
                        unrepaired -= 1
                    else:
                        unrepaired -= 1
                    if seq > high_sacked:
                        for q in range(max(high_sacked + 1, una), seq):
                            if st[q & mask] == _IN_FLIGHT:
                                h_seq[nh] = q
                                h_cnt[nh] = 0
                                nh += 1
                        high_sacked = seq
                    w = 0
                    j = 0
                    while j < nh and h_seq[j] <= seq:
                        hole = h_seq[j]
                        count = h_cnt[j] + 1
                        if count >= dupthresh:
                            lbuf[nl] = hole
                            nl += 1
                            # mark_lost: the hole is in flight
                            unrepaired += 1
                            pipe -= 1
                            st[hole & mask] = _MARKED_LOST
                            nheap = _heap_push(heap, nheap, hole)
                        else:
                            h_seq[w] = hole
                            h_cnt[w] = count
                            w += 1
                        j += 1
                    if w < j:
                        for jj in range(j, nh):
                            h_seq[w + jj - j] = h_seq[jj]
                            h_cnt[w + jj - j] = h_cnt[jj]
                        nh -= j - w
                if tracing:
                    for j in range(nd):
                        ntr = _emit(trf, tri, ntr, now, _EV_DELIVER, dbuf[j], cwnd, phase, rto_count)
                    for j in range(nl):
                        ntr = _emit(trf, tri, ntr, now, _EV_LOST, lbuf[j], cwnd, phase, rto_count)
                if has_rtt:
                    if not has_srtt:
                        has_srtt = True
                        srtt = rtt_s
                        rttvar = rtt_s / 2.0
                    else:
                        rttvar = 0.75 * rttvar + 0.25 * abs(srtt - rtt_s)
                        srtt = 0.875 * srtt + 0.125 * rtt_s
                    rto = min(rto_max, max(rto_min, srtt + 4.0 * rttvar))
                if plus:
                    w = 0
                    for j in range(nt):
                        rs = t_retx[j]
                        ts = t_seq[j]
                        if rs < una or st[rs & mask] == _SACKED:
                            continue
                        if ts >= 0 and (ts < una or st[ts & mask] == _SACKED):
                            # trigger delivered first: the retransmission is lost
                            s = st[rs & mask]
                            if s == _IN_FLIGHT:
                                unrepaired += 1
                            pipe -= 1
                            nh = _remove_sorted(h_seq, h_cnt, nh, rs)
                            st[rs & mask] = _MARKED_LOST
                            nheap = _heap_push(heap, nheap, rs)
                            lbuf[nl] = rs
                            nl += 1
                            if tracing:
                                ntr = _emit(trf, tri, ntr, now, _EV_LOST, rs, cwnd, phase, rto_count)
                            continue
                        t_retx[w] = rs
                        t_seq[w] = ts
                        w += 1
                    nt = w
                if nd == 0 and nl == 0 and not advanced:
                    do_transmit = False
                else:
                    if nl > 0:
                        marked_lost += nl
                        new = max(cwnd_floor, cwnd - nl)
                        decrease_requested += nl
                        decrease_applied += cwnd - new
                        cwnd = new
                        ssthresh = new
                        phase = _REC
                    high = max(una - 1, high_sacked)
                    if high >= round_end:
                        round_cwnd = cwnd
                        round_end = nxt
                    if nd > 0:
                        if phase == _SS:
                            cwnd += 1.0
                            if cwnd >= ssthresh:
                                phase = _CA
                        else:
                            cwnd += nd / (b * round_cwnd)
                    if phase == _REC and unrepaired == 0:
                        phase = _CA
                    if advanced:
                        if una < nxt:
                            rto_timer = now + rto
                            has_timer = True
                            timer_version += 1
                        elif has_timer:
                            has_timer = False
                            timer_version += 1
                    if phase == _REC:
                        budget = nd
            elif src == 2:
                has_rto_ev = False
                has_timer = False
                if una >= nxt:
                    do_transmit = False
                else:
                    rto_count += 1
                    ssthresh = max(pipe / 2.0, 2.0)
                    cwnd = 1.0
                    phase = _SS
                    for seq in range(una, nxt):
                        s = st[seq & mask]
                        if s == _IN_FLIGHT or s == _RETRANSMITTED:
                            if s == _IN_FLIGHT:
                                unrepaired += 1
                            pipe -= 1
                            st[seq & mask] = _MARKED_LOST
                            nheap = _heap_push(heap, nheap, seq)
                    nh = 0
                    nt = 0
                    rto = min(rto * 2.0, rto_max)
                    if tracing:
                        ntr = _emit(trf, tri, ntr, now, _EV_RTO, una, cwnd, phase, rto_count)
                    round_cwnd = cwnd
                    round_end = nxt

            if do_transmit:
                in_recovery = src == 1 and budget >= 0
                while pipe + 1.0 <= cwnd and (budget < 0 or budget > 0):
                    # pop_lost
                    while nheap > 0 and (heap[0] < una or st[heap[0] & mask] != _MARKED_LOST):
                        _, nheap = _heap_pop(heap, nheap)
                    if nact == cap:
                        raise CapacityExceeded("burst")
                    if nheap > 0:
                        seq, nheap = _heap_pop(heap, nheap)
                        st[seq & mask] = _RETRANSMITTED
                        sent[seq & mask] = now
                        evr[seq & mask] = True
                        pipe += 1
                        retransmitted += 1
                        if plus:
                            i = _bisect_left(t_retx, nt, seq)
                            if not (i < nt and t_retx[i] == seq):
                                for j in range(nt, i, -1):
                                    t_retx[j] = t_retx[j - 1]
                                    t_seq[j] = t_seq[j - 1]
                                nt += 1
                            t_retx[i] = seq
                            t_seq[i] = -1
                        act[nact] = seq
                        nact += 1
                        if tracing:
                            ntr = _emit(trf, tri, ntr, now, _EV_RETX, seq, cwnd, phase, rto_count)
                    else:
                        seq = nxt
                        if nxt - una + 1 > cap:
                            raise CapacityExceeded("window")
                        st[seq & mask] = _IN_FLIGHT
                        sent[seq & mask] = now
                        evr[seq & mask] = False
                        nxt = seq + 1
                        pipe += 1
                        if plus:
                            for j in range(nt):
                                if t_seq[j] < 0:
                                    t_seq[j] = seq
                        act[nact] = seq
                        nact += 1
                        if tracing:
                            ntr = _emit(trf, tri, ntr, now, _EV_SEND, seq, cwnd, phase, rto_count)
                    if budget >= 0:
                        budget -= 1
                if nact > 0 and not has_timer:
                    rto_timer = now + rto
                    has_timer = True
                    timer_version += 1
                if src == 2 and not has_timer:
                    rto_timer = now + rto
                    has_timer = True
                    timer_version += 1
                if in_recovery:
                    recovery_acks += 1
                    if nact > nd:
                        violations += 1

            # put transmissions on the wire
            for j in range(nact):
                seq = act[j]
                transmissions += 1
                depart = max(now, link_free) + ser
                link_free = depart
                if cpos == _BLOCK:
                    bad, cleft = _fill(cbuf, rng, chan_kind, chan_p, chan_g, chan_r, bad, cleft)
                    cpos = 0
                drop = cbuf[cpos]
                cpos += 1
                if drop:
                    dropped += 1
                    if tracing:
                        ntr = _emit(trf, tri, ntr, now, _EV_DROP, seq, cwnd, phase, rto_count)
                    continue
                if dq_n == qcap:
                    raise CapacityExceeded("data queue")
                k = (dq_h + dq_n) & qmask
                dq_t[k] = depart + delay
                dq_o[k] = ordinal
                dq_s[k] = seq
                dq_n += 1
                ordinal += 1
        else:
            # ---------------- receiver side ----------------
            make_ack = False
            if src == 0:
                seq = dq_s[dq_h]
                dq_h = (dq_h + 1) & qmask
                dq_n -= 1
                if tracing:
                    ntr = _emit(trf, tri, ntr, now, _EV_RECV, seq, cwnd, phase, rto_count)
                i = _bisect_right(r_st, nr, seq) - 1
                held = i >= 0 and r_en[i] > seq
                if seq < rcv_next or held:
                    make_ack = True
                elif seq == rcv_next:
                    had_gap = nr > 0
                    rcv_next += 1
                    if nr > 0 and r_st[0] == rcv_next:
                        rcv_next = r_en[0]
                        for j in range(1, nr):
                            r_st[j - 1] = r_st[j]
                            r_en[j - 1] = r_en[j]
                        nr -= 1
                    if had_gap:
                        make_ack = True
                    else:
                        pending += 1
                        if pending >= b:
                            make_ack = True
                        elif not has_delack:
                            delack_deadline = now + delack_timeout
                            has_delack = True
                            delack_ver += 1
                else:
                    i = _bisect_right(r_st, nr, seq)
                    if i > 0 and r_en[i - 1] == seq:
                        r_en[i - 1] = seq + 1
                        if i < nr and r_st[i] == seq + 1:
                            r_en[i - 1] = r_en[i]
                            for j in range(i + 1, nr):
                                r_st[j - 1] = r_st[j]
                                r_en[j - 1] = r_en[j]
                            nr -= 1
                    elif i < nr and r_st[i] == seq + 1:
                        r_st[i] = seq
                    else:
                        for j in range(nr, i, -1):
                            r_st[j] = r_st[j - 1]
                            r_en[j] = r_en[j - 1]
                        r_st[i] = seq
                        r_en[i] = seq + 1
                        nr += 1
                    for j in range(nrecent, 0, -1):
                        recent[j] = recent[j - 1]
                    recent[0] = seq
                    nrecent += 1
                    make_ack = True
            else:
                has_dl_ev = False
                has_delack = False
                if pending > 0:
                    make_ack = True
            if make_ack:
                pending = 0
                if has_delack:
                    has_delack = False
                    delack_ver += 1
                out_nb = 0
                nkeep = 0
                for j in range(nrecent):
                    q = recent[j]
                    i = _bisect_right(r_st, nr, q) - 1
                    if i < 0 or r_en[i] <= q:
                        continue
                    dup = False
                    for jj in range(out_nb):
                        if seen[jj] == i:
                            dup = True
                    if dup:
                        continue
                    seen[out_nb] = i
                    keep[nkeep] = q
                    nkeep += 1
                    out_blocks[2 * out_nb] = r_st[i]
                    out_blocks[2 * out_nb + 1] = r_en[i]
                    out_nb += 1
                    if out_nb == 3:
                        break
                for j in range(nkeep):
                    recent[j] = keep[j]
                nrecent = nkeep
                out_cum = rcv_next
                ack_out = True
            if ack_out:
                if aq_n == qcap:
                    raise CapacityExceeded("ack queue")
                k = (aq_h + aq_n) & qmask
                aq_t[k] = now + delay
                aq_o[k] = ordinal
                aq_i[k, 0] = out_cum
                aq_i[k, 1] = out_nb
                for j in range(2 * out_nb):
                    aq_b[k, j] = out_blocks[j]
                aq_n += 1
                ordinal += 1

        # sync timers
        if timer_version != rto_version:
            rto_version = timer_version
            if not has_timer:
                has_rto_ev = False
            else:
                has_rto_ev = True
                rto_ev_t = rto_timer
                rto_ev_o = ordinal
                ordinal += 1
        if delack_ver != dl_version:
            dl_version = delack_ver
            if not has_delack:
                has_dl_ev = False
            else:
                has_dl_ev = True
                dl_ev_t = delack_deadline
                dl_ev_o = ordinal
                ordinal += 1

        # next event
        src = -1
        bt = 0.0
        bo = 0
        if dq_n > 0:
            bt = dq_t[dq_h]
            bo = dq_o[dq_h]
            src = 0
        if aq_n > 0:
            t = aq_t[aq_h]
            o = aq_o[aq_h]
            if src < 0 or t < bt or (t == bt and o < bo):
                bt, bo, src = t, o, 1
        if has_rto_ev:
            if src < 0 or rto_ev_t < bt or (rto_ev_t == bt and rto_ev_o < bo):
                bt, bo, src = rto_ev_t, rto_ev_o, 2
        if has_dl_ev:
            if src < 0 or dl_ev_t < bt or (dl_ev_t == bt and dl_ev_o < bo):
                bt, bo, src = dl_ev_t, dl_ev_o, 3
        if src < 0 or bt > end:
            break
        now = bt
        while next_sample * rtt <= now:
            if nsamp == nsamp_cap:
                raise CapacityExceeded("samples")
            samp[nsamp, 0] = next_sample * rtt
            samp[nsamp, 1] = cwnd
            nsamp += 1
            next_sample += 1
        if not have_warm and now >= warm_t:
            have_warm = True
            warm_delivered = rcv_next

    while next_sample * rtt <= end:
        if nsamp == nsamp_cap:
            raise CapacityExceeded("samples")
        samp[nsamp, 0] = next_sample * rtt
        samp[nsamp, 1] = cwnd
        nsamp += 1
        next_sample += 1
    if not have_warm:
        warm_delivered = rcv_next
    post = end - warm_t
    throughput = (rcv_next - warm_delivered) * mss / post if post > 0 else 0.0
    counts = np.array([rcv_next, retransmitted, rto_count, marked_lost, dropped, transmissions,
                       decrease_requested, violations, recovery_acks], dtype=np.int64)
    floats = np.array([throughput, decrease_applied, warm_t])
    return counts, floats, samp[:nsamp], trf[:ntr], tri[:ntr]


def run_kernel(params, link, spec, end, trace, initial_cap=None, initial_trace_cap=1 << 16):
    """Drop-in replacement for ``netsim._run_reference``.

    ``initial_cap`` and ``initial_trace_cap`` (powers of two) only matter for
    speed: overflowing buffers are doubled and the run repeated.
    """
    from .netsim import WARMUP_FRACTION, SimResult, TraceRecord

    chan = spec.build(params.seed)
    if isinstance(chan, GilbertElliottChannel):
        kind, g, r, bad = 1, chan.g, chan.r, chan.bad
        p = 0.0
    else:
        kind, g, r, bad = 0, 0.0, 0.0, False
        p = chan.p
    ser = 0.0 if link.capacity is None else params.mss * 8.0 / link.capacity
    fparams = np.array([
        params.rtt, float(params.mss), params.rto_min, params.rto_max, params.rto_initial,
        float(params.initial_cwnd), float(params.initial_ssthresh), float(params.cwnd_floor),
        params.delack_timeout, link.one_way_delay, ser, end, WARMUP_FRACTION,
    ])
    iparams = np.array([params.b, 1 if params.variant is Variant.RCC_PLUS else 0, params.dupthresh],
                       dtype=np.int64)
    # room for a window of ~32 / p segments; larger excursions rerun the
    # whole (deterministic) simulation with doubled buffers
    if initial_cap is None:
        initial_cap = 1 << max(12, math.ceil(math.log2(32.0 / params.p)))
    cap = initial_cap
    trace_cap = initial_trace_cap
    while True:
        chan = spec.build(params.seed)
        try:
            counts, floats, samp, trf, tri = _kernel(
                fparams, iparams, chan.rng, kind, p, g, r, bad, 0, trace is not None, cap, trace_cap
            )
            break
        except CapacityExceeded as exc:
            if exc.args and exc.args[0] == "trace":
                trace_cap *= 4
            else:
                cap *= 2
    if trace is not None:
        for (t, cwnd), (ev, seq, phase, rto_count) in zip(trf.tolist(), tri.tolist()):
            trace.append(TraceRecord(t, EVENT_NAMES[ev], seq, cwnd, _PHASE_LABELS[phase], rto_count))
    (rcv_next, retransmitted, rto_count, marked_lost, dropped, transmissions,
     decrease_requested, violations, recovery_acks) = counts.tolist()
    throughput, decrease_applied, warm_t = floats.tolist()
    return SimResult(
        sim_duration=end,
        warmup=warm_t,
        delivered_segments=rcv_next,
        retransmitted=retransmitted,
        rto_count=rto_count,
        throughput=throughput,
        loss_events=marked_lost,
        dropped=dropped,
        transmissions=transmissions,
        decrease_requested=decrease_requested,
        decrease_applied=decrease_applied,
        conservation_violations=violations,
        recovery_acks=recovery_acks,
        cwnd_series=[tuple(row) for row in samp.tolist()],
    )
