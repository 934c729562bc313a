import io
import warnings

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rcclab import LinkConfig, Params, run_sim
from rcclab._kernel import run_kernel
from rcclab.lossmodel import ChannelSpec
from rcclab.netsim import _run_reference, resolve_duration, write_trace


def both(params, link, spec, rounds, **kw):
    end = resolve_duration(params, None, rounds)
    fast_tr, ref_tr = [], []
    fast = run_kernel(params, link, spec, end, fast_tr, **kw)
    ref = _run_reference(params, link, spec, end, ref_tr)
    return fast, ref, fast_tr, ref_tr


def dump(trace):
    buf = io.StringIO()
    write_trace(trace, buf)
    return buf.getvalue()


@pytest.mark.parametrize("variant", ["rcc", "rcc+"])
@pytest.mark.parametrize("spec", ["uniform:0.03", "ge:0.02:3"])
@pytest.mark.parametrize("b", [1, 2])
def test_backends_identical(variant, spec, b):
    params = Params(p=ChannelSpec.parse(spec).p, b=b, variant=variant, seed=11)
    fast, ref, fast_tr, ref_tr = both(params, LinkConfig.for_rtt(0.1), ChannelSpec.parse(spec), 400)
    assert fast == ref
    assert dump(fast_tr) == dump(ref_tr)


def test_backends_identical_on_bounded_link():
    params = Params(p=0.002, seed=3)
    fast, ref, fast_tr, ref_tr = both(params, LinkConfig.for_rtt(0.1, 5e6), ChannelSpec("uniform", 0.002), 600)
    assert fast == ref
    assert dump(fast_tr) == dump(ref_tr)


def test_forced_overflow_reruns_identically():
    params = Params(p=0.01, seed=2)
    spec = ChannelSpec("uniform", 0.01)
    end = resolve_duration(params, None, 500)
    small_tr, big_tr = [], []
    small = run_kernel(params, LinkConfig.for_rtt(0.1), spec, end, small_tr, initial_cap=16, initial_trace_cap=64)
    big = run_kernel(params, LinkConfig.for_rtt(0.1), spec, end, big_tr)
    assert small == big
    assert small_tr == big_tr


@given(seed=st.integers(0, 2**31), p=st.sampled_from([0.05, 0.02, 0.01]),
       variant=st.sampled_from(["rcc", "rcc+"]))
@settings(max_examples=15, deadline=None)
def test_backends_agree_across_seeds(seed, p, variant):
    params = Params(p=p, seed=seed, variant=variant)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        fast = run_sim(params, rounds=300)
        ref = run_sim(params, rounds=300, backend="reference")
    assert fast == ref
