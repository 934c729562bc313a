"""Closed-form and series throughput models for Relentless congestion control.

Two models are evaluated here:

* the cycle model without retransmission timeouts, where each TD period
  (interval between two window decreases) is described by the expected
  number of packets and rounds it contains, and
* the timeout model, where the window alternates between a slow-start
  phase and a congestion-avoidance phase that ends with a timeout.

Both come with Monte-Carlo oracles that simulate the underlying random
process directly so the analytic expressions can be cross-checked.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache

import numpy as np
from numba import njit

C_RTO = 0.49


class ModelDomainError(ValueError):
    """Raised when the model has no admissible solution for the inputs."""


class SeriesMode(str, Enum):
    LITERAL = "literal"
    SURVIVAL = "survival"


def _check_p(p: float) -> None:
    if not 0.0 < p < 1.0:
        raise ModelDomainError(f"loss probability must lie in (0, 1), got {p}")


# ---------------------------------------------------------------------------
# Cycle model (no timeouts)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CycleStats:
    e_alpha: float
    e_beta: float
    e_w: float
    e_x: float
    e_y: float
    e_n: float
    e_a: float
    v_x: float = 0.0
    # standard errors, only filled in by the Monte-Carlo oracle
    stderr: dict = field(default_factory=dict, compare=False)


@dataclass(frozen=True)
class NoRtoPrediction:
    cycle: CycleStats
    t_p_exact: float
    t_p_asymptotic: float
    c: float


def ew_quadratic(p: float, b: float, v_x: float = 0.0) -> tuple[float, float, float]:
    """Coefficients (a, b, c) of the quadratic satisfied by E[W]."""
    qa = b * p * (4.0 - p) / 8.0
    qb = b - 0.5 + (p * p * (1.0 - b) - 3.0 * p) / 4.0
    qc = (
        -(p + 1.0) / p
        + p * (-2.0 * b * b + b + 1.0) / (4.0 * b)
        - (b * b + 1.0) / (2.0 * b)
        + v_x / (2.0 * b)
        + p * p * (b * b - 1.0) / (8.0 * b)
    )
    return qa, qb, qc


def ew_residual(e_w: float, p: float, b: float, v_x: float = 0.0) -> float:
    qa, qb, qc = ew_quadratic(p, b, v_x)
    return (qa * e_w + qb) * e_w + qc


def solve_ew(p: float, b: float = 1.0, v_x: float = 0.0) -> float:
    """Positive root of the E[W] quadratic.

    The root is computed with the cancellation-free form of the quadratic
    formula and polished with one Newton step.
    """
    _check_p(p)
    if b < 1.0:
        raise ModelDomainError(f"delayed-ACK factor must be >= 1, got {b}")
    if v_x < 0.0:
        raise ModelDomainError(f"variance must be non-negative, got {v_x}")
    qa, qb, qc = ew_quadratic(p, b, v_x)
    disc = qb * qb - 4.0 * qa * qc
    if disc < 0.0:
        raise ModelDomainError("E[W] quadratic has no real root")
    sq = math.sqrt(disc)
    # with qa > 0 the larger root is the only candidate for a positive value
    if qb >= 0.0:
        root = (2.0 * qc) / (-qb - sq) if (-qb - sq) != 0.0 else 0.0
    else:
        root = (-qb + sq) / (2.0 * qa)
    if not root > 0.0:
        raise ModelDomainError(f"no positive E[W] root for p={p}, b={b}, v_x={v_x}")
    deriv = 2.0 * qa * root + qb
    if deriv != 0.0:
        root -= ((qa * root + qb) * root + qc) / deriv
    return root


def expected_cycle(p: float, b: float, e_w: float, rtt: float = 1.0, v_x: float = 0.0) -> CycleStats:
    _check_p(p)
    e_alpha = 1.0 / p
    e_beta = (e_w + 1.0 - 1.0 / b) / 2.0
    e_n = 1.0 + p * e_beta
    e_x = 1.0 + b * e_n
    e_y = e_alpha + e_beta + e_w
    return CycleStats(
        e_alpha=e_alpha,
        e_beta=e_beta,
        e_w=e_w,
        e_x=e_x,
        e_y=e_y,
        e_n=e_n,
        e_a=e_x * rtt,
        v_x=v_x,
    )


def throughput_no_rto(p: float, b: float = 1.0, rtt: float = 0.1, mss: float = 1460.0,
                      v_x: float = 0.0) -> NoRtoPrediction:
    """Throughput in bytes/s of a Relentless flow that never times out."""
    e_w = solve_ew(p, b, v_x)
    cycle = expected_cycle(p, b, e_w, rtt=rtt, v_x=v_x)
    c = 1.0 / b
    return NoRtoPrediction(
        cycle=cycle,
        t_p_exact=cycle.e_y * mss / cycle.e_a,
        t_p_asymptotic=c * mss / (rtt * p),
        c=c,
    )


def mc_cycle_oracle(p: float, b: float = 1.0, n_cycles: int = 100_000, seed: int = 0,
                    beta_law: str = "iid", burn_in: int = 1000) -> CycleStats:
    """Brute-force simulation of the round-based TD cycle.

    Every packet is lost independently with probability ``p``.  A TD period
    starts with window ``W_prev - N_prev`` and the window grows by ``1/b``
    per round.  The round holding the first loss is completed, one more round
    of ``W`` packets follows, and the losses counted against the next window
    are the first loss plus a binomial draw over the ``beta`` packets of the
    loss round.

    ``beta_law="iid"`` derives ``beta`` from the position of the first loss
    inside its round.  ``beta_law="uniform"`` instead draws it uniformly on
    ``[1, W - 1/b]``, which is the assumption the closed form is built on.
    """
    _check_p(p)
    if n_cycles < 10_000:
        raise ValueError("the cycle oracle needs at least 10^4 cycles")
    if beta_law not in ("iid", "uniform"):
        raise ValueError(f"unknown beta law {beta_law!r}")
    rng = np.random.default_rng(seed)
    total = n_cycles + burn_in
    alphas = rng.geometric(p, size=total)
    u = rng.random(total)
    alpha_out, beta_out, n_out, x_out, w_out = _cycle_walk(
        alphas, u, float(p), float(b), beta_law == "uniform", rng.integers(0, 2**63 - 1)
    )
    sl = slice(burn_in, None)
    alpha_s, beta_s, n_s, x_s, w_s = (arr[sl] for arr in (alpha_out, beta_out, n_out, x_out, w_out))
    y_s = alpha_s + beta_s + w_s
    root_n = math.sqrt(len(alpha_s))

    def se(a):
        return float(np.std(a, ddof=1) / root_n)

    return CycleStats(
        e_alpha=float(alpha_s.mean()),
        e_beta=float(beta_s.mean()),
        e_w=float(w_s.mean()),
        e_x=float(x_s.mean()),
        e_y=float(y_s.mean()),
        e_n=float(n_s.mean()),
        e_a=float(x_s.mean()),
        v_x=float(x_s.var(ddof=1)),
        stderr={
            "e_alpha": se(alpha_s),
            "e_beta": se(beta_s),
            "e_w": se(w_s),
            "e_x": se(x_s),
            "e_n": se(n_s),
        },
    )


@njit(cache=True)
def _cycle_walk(alphas, u, p, b, uniform_beta, seed):
    np.random.seed(seed % (2**32))
    n = alphas.shape[0]
    a_out = np.empty(n)
    b_out = np.empty(n)
    n_out = np.empty(n)
    x_out = np.empty(n)
    w_out = np.empty(n)
    w_prev = 1.0 / p
    n_prev = 0.0
    for c in range(n):
        start = max(1.0, w_prev - n_prev)
        alpha = alphas[c]
        k = 0
        sent = 0
        while True:
            w = max(1, int(round(start + k / b)))
            if sent + w >= alpha:
                break
            sent += w
            k += 1
        w_end = start + (k + 1) / b
        if uniform_beta:
            hi = max(1, int(round(w_end - 1.0 / b)))
            beta = 1 + int(u[c] * hi)
        else:
            beta = sent + w - alpha + 1
        lost = 1 + np.random.binomial(beta, p)
        a_out[c] = alpha
        b_out[c] = beta
        n_out[c] = lost
        x_out[c] = k + 2
        w_out[c] = w_end
        w_prev = w_end
        n_prev = lost
    return a_out, b_out, n_out, x_out, w_out


# ---------------------------------------------------------------------------
# Timeout model
# ---------------------------------------------------------------------------


def wca(n: float, w_s: float, p: float) -> float:
    """Congestion-avoidance window after ``n`` rounds starting from ``w_s``."""
    return (1.0 - p) ** n * (w_s - 1.0 / p) + 1.0 / p


def p_irto(k: int, w_s: float, p: float, mode: SeriesMode | str = SeriesMode.SURVIVAL) -> float:
    """Probability that the timeout ends the congestion-avoidance phase at round ``k``."""
    mode = SeriesMode(mode)
    if k < 1:
        raise ValueError("round index starts at 1")
    hazard = p * p * wca(k - 1, w_s, p)
    if mode is SeriesMode.LITERAL:
        return hazard
    survive = 1.0
    for j in range(k - 1):
        survive *= 1.0 - min(1.0, p * p * wca(j, w_s, p))
    return min(1.0, max(0.0, min(1.0, hazard) * survive))


def ss_limit(p: float) -> int:
    return math.ceil(1.0 / p)


def _ws_weights(p: float) -> tuple[np.ndarray, np.ndarray]:
    lim = ss_limit(p)
    k = np.arange(1, lim + 1, dtype=np.float64)
    return k, p * (1.0 - p) ** (k - 1.0)


def e_xss(p: float) -> float:
    """Expected packets sent in slow start (truncated at ceil(1/p))."""
    _check_p(p)
    k, w = _ws_weights(p)
    return math.fsum(k * w)


def e_dss(p: float) -> float:
    """Expected slow-start duration in rounds (log2 growth)."""
    _check_p(p)
    k, w = _ws_weights(p)
    return math.fsum(np.log2(k) * w)


@dataclass(frozen=True)
class SeriesResult:
    e_xca: float
    e_dca: float
    mode: SeriesMode
    tol: float
    terms: int
    diverged: bool
    tail_bound: float


@njit(cache=True)
def _ca_sums(p, literal, tol, k_cap):
    lim = int(math.ceil(1.0 / p))
    inv_p = 1.0 / p
    x_tot = 0.0
    x_c = 0.0
    d_tot = 0.0
    d_c = 0.0
    max_terms = 0
    tail_tot = 0.0
    per_ws_tol = tol / lim
    for i in range(1, lim + 1):
        weight = p * (1.0 - p) ** (i - 1)
        w_prev = float(i)
        cum_w = 0.0
        survive = 1.0
        xs = 0.0
        xs_c = 0.0
        ds = 0.0
        ds_c = 0.0
        k = 0
        tail = 0.0
        w_max = max(float(i), inv_p)
        while k < k_cap:
            k += 1
            hazard = p * p * w_prev
            if literal:
                prob = hazard
            else:
                h = min(1.0, hazard)
                prob = h * survive
                survive *= 1.0 - h
            w_k = w_prev * (1.0 - p) + 1.0
            cum_w += w_k
            # Neumaier-compensated accumulation
            term = prob * (cum_w - 0.5 * w_k)
            t = xs + term
            if abs(xs) >= abs(term):
                xs_c += (xs - t) + term
            else:
                xs_c += (term - t) + xs
            xs = t
            term = prob * k
            t = ds + term
            if abs(ds) >= abs(term):
                ds_c += (ds - t) + term
            else:
                ds_c += (term - t) + ds
            ds = t
            w_prev = w_k
            if not literal:
                h_lo = p * p * min(w_k, inv_p)
                tail = survive * (k + 1.0 / h_lo) * max(w_max, 1.0)
                if weight * tail < per_ws_tol:
                    break
        if literal:
            tail = np.inf
        if k > max_terms:
            max_terms = k
        tail_tot += weight * tail
        term = weight * (xs + xs_c)
        t = x_tot + term
        if abs(x_tot) >= abs(term):
            x_c += (x_tot - t) + term
        else:
            x_c += (term - t) + x_tot
        x_tot = t
        term = weight * (ds + ds_c)
        t = d_tot + term
        if abs(d_tot) >= abs(term):
            d_c += (d_tot - t) + term
        else:
            d_c += (term - t) + d_tot
        d_tot = t
    return x_tot + x_c, d_tot + d_c, max_terms, tail_tot


@lru_cache(maxsize=256)
def ca_series(p: float, mode: SeriesMode | str = SeriesMode.SURVIVAL, tol: float = 1e-10,
              k_cap: int | None = None) -> SeriesResult:
    """Evaluate E[X_CA] and E[D_CA] over all slow-start exits ``w_s <= ceil(1/p)``.

    In literal mode the timeout distribution does not normalise (its tail
    tends to ``p``), so the inner sum is cut at ``ceil(10/p)`` rounds and the
    result is flagged as diverged.
    """
    _check_p(p)
    if tol <= 0:
        raise ValueError("tolerance must be positive")
    mode = SeriesMode(mode)
    literal = mode is SeriesMode.LITERAL
    if k_cap is None:
        k_cap = math.ceil(10.0 / p) if literal else 10**9
    x, d, terms, tail = _ca_sums(float(p), literal, float(tol), int(k_cap))
    diverged = literal or not tail < tol
    return SeriesResult(
        e_xca=x, e_dca=d, mode=mode, tol=tol, terms=terms, diverged=diverged, tail_bound=tail
    )


def e_xca(p: float, mode: SeriesMode | str = SeriesMode.SURVIVAL, tol: float = 1e-10) -> float:
    return ca_series(p, SeriesMode(mode), tol).e_xca


def e_dca(p: float, mode: SeriesMode | str = SeriesMode.SURVIVAL, tol: float = 1e-10) -> float:
    return ca_series(p, SeriesMode(mode), tol).e_dca


@dataclass(frozen=True)
class RtoPrediction:
    e_xss: float
    e_xca: float
    e_dss: float
    e_dca: float
    t_rto_exact: float
    t_rto_asymptotic: float
    lim: int
    series_mode: SeriesMode
    tail_tol: float
    terms: int
    diverged: bool

    @property
    def c_exact(self) -> float:
        """Exact throughput expressed as a constant in front of MSS/(RTT p)."""
        return self.t_rto_exact / self.t_rto_asymptotic * C_RTO


def throughput_rto(p: float, rtt: float = 0.1, mss: float = 1460.0,
                   mode: SeriesMode | str = SeriesMode.SURVIVAL, tol: float = 1e-10) -> RtoPrediction:
    _check_p(p)
    mode = SeriesMode(mode)
    series = ca_series(p, mode, tol)
    xss = e_xss(p)
    dss = e_dss(p)
    return RtoPrediction(
        e_xss=xss,
        e_xca=series.e_xca,
        e_dss=dss,
        e_dca=series.e_dca,
        t_rto_exact=(xss + series.e_xca) * mss / ((dss + series.e_dca) * rtt),
        t_rto_asymptotic=C_RTO * mss / (rtt * p),
        lim=ss_limit(p),
        series_mode=mode,
        tail_tol=tol,
        terms=series.terms,
        diverged=series.diverged,
    )


def mc_rto_cycle_oracle(p: float, n_samples: int = 100_000, seed: int = 0) -> tuple[float, float]:
    """Monte-Carlo estimate of (E[X_CA], E[D_CA]) with survival-corrected timeouts.

    A slow-start exit ``w_s`` is drawn from the geometric law; draws beyond
    ``ceil(1/p)`` contribute zero, matching the truncated sums.  Each round
    then times out with hazard ``p^2 W_CA``.
    """
    _check_p(p)
    rng = np.random.default_rng(seed)
    lim = ss_limit(p)
    ws = rng.geometric(p, size=n_samples).astype(np.float64)
    keep = ws <= lim
    w = ws[keep]
    alive = np.ones(w.shape, dtype=bool)
    rounds = np.zeros(w.shape)
    packets = np.zeros(w.shape)
    cum = np.zeros(w.shape)
    k = 0
    while alive.any():
        k += 1
        hazard = np.minimum(1.0, p * p * w)
        w_next = w * (1.0 - p) + 1.0
        cum = cum + w_next
        fire = alive & (rng.random(w.shape) < hazard)
        rounds[fire] = k
        packets[fire] = cum[fire] - 0.5 * w_next[fire]
        alive &= ~fire
        w = w_next
    return float(packets.sum() / n_samples), float(rounds.sum() / n_samples)


def mc_truncated_geometric(p: float, n_samples: int = 1_000_000, seed: int = 0) -> tuple[float, float]:
    """Monte-Carlo estimate of (E[X_SS], E[D_SS]) from geometric draws."""
    rng = np.random.default_rng(seed)
    k = rng.geometric(p, size=n_samples).astype(np.float64)
    k[k > ss_limit(p)] = 0.0
    logs = np.zeros_like(k)
    pos = k > 0
    logs[pos] = np.log2(k[pos])
    return float(k.mean()), float(logs.mean())
