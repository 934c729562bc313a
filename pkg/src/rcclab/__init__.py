"""Single-flow Relentless congestion control lab: simulator, loss channels and throughput models."""

from .analytic import (
    C_RTO,
    ModelDomainError,
    SeriesMode,
    solve_ew,
    throughput_no_rto,
    throughput_rto,
)
from .engine import Ack, Params, Phase, Receiver, Sender, Variant
from .lossmodel import BernoulliChannel, ChannelSpec, GilbertElliottChannel, ge_from_rate_and_burst
from .netsim import LinkConfig, SimResult, TraceRecord, run_sim

__all__ = [
    "C_RTO",
    "Ack",
    "BernoulliChannel",
    "ChannelSpec",
    "GilbertElliottChannel",
    "LinkConfig",
    "ModelDomainError",
    "Params",
    "Phase",
    "Receiver",
    "Sender",
    "SeriesMode",
    "SimResult",
    "TraceRecord",
    "Variant",
    "ge_from_rate_and_burst",
    "run_sim",
    "solve_ew",
    "throughput_no_rto",
    "throughput_rto",
]
