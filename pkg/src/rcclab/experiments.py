"""Parameter sweeps, constant fitting and the loss-model table.

A sweep runs one simulation per ``(p, seed)`` pair and stores the simulated
throughput next to the matching model prediction: the no-timeout model for
``rcc+`` and the timeout series for ``rcc``.  Rows are written as CSV with a
fixed column set; :func:`fit_constant` turns them into the constant ``C`` of
``T = C * MSS / (RTT * p)`` and the log-log slope.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import IO, Iterable, Mapping, Optional, Sequence

import numpy as np

from .analytic import ModelDomainError, SeriesMode, throughput_no_rto, throughput_rto
from .engine import Params, Variant
from .lossmodel import ChannelSpec
from .netsim import LinkConfig, default_rounds, run_sim

log = logging.getLogger(__name__)

CSV_COLUMNS = (
    "variant", "loss_model", "burst", "p", "rtt_s", "mss_bytes", "b", "seed",
    "throughput_sim_Bps", "throughput_model_exact_Bps", "throughput_model_asym_Bps",
    "rto_count", "retx_count", "loss_events",
)

# the constant is estimated where the o(1/p) terms are negligible
C_FIT_P_MAX = 0.01
MIN_FIT_POINTS = 5


class SweepConfigError(ValueError):
    pass


class InsufficientDataError(ValueError):
    pass


class KeyMismatchError(KeyError):
    pass


def default_p_values(n: int = 20, p_min: float = 3e-4, p_max: float = 5e-2) -> list[float]:
    return [float(v) for v in np.geomspace(p_min, p_max, n)]


@dataclass
class SweepConfig:
    """One sweep over loss rates.  ``rounds=None`` applies the default duration policy."""

    p_values: list = field(default_factory=default_p_values)
    rtt: float = 0.1
    mss: int = 1460
    b: int = 1
    variant: str = "rcc+"
    loss_model: str = "uniform"
    burst: float = 1.0
    seeds: int = 5
    seed_base: int = 0
    rounds: Optional[int] = None
    min_rounds: int = 20_000
    capacity: Optional[float] = None
    model_mode: str = "survival"
    workers: int = 1

    def __post_init__(self):
        self.p_values = [float(p) for p in self.p_values]
        self.validate()

    def validate(self) -> None:
        for p in self.p_values:
            if not 0.0 < p < 1.0:
                raise SweepConfigError(f"loss rates must lie in (0, 1), got {p}")
        if self.seeds < 1:
            raise SweepConfigError("need at least one seed per point")
        if self.rtt <= 0 or self.mss <= 0 or self.b < 1:
            raise SweepConfigError("rtt and mss must be positive and b >= 1")
        if self.loss_model not in ("uniform", "ge"):
            raise SweepConfigError(f"unknown loss model {self.loss_model!r}")
        Variant(self.variant)
        SeriesMode(self.model_mode)
        if self.rounds is not None and self.rounds <= 0:
            raise SweepConfigError("rounds must be positive")
        if self.workers < 1:
            raise SweepConfigError("workers must be >= 1")

    @classmethod
    def from_dict(cls, data: Mapping) -> "SweepConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise SweepConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path: str) -> "SweepConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return asdict(self)

    def channel(self, p: float) -> ChannelSpec:
        if self.loss_model == "uniform":
            return ChannelSpec("uniform", p)
        return ChannelSpec("ge", p, self.burst)

    def rounds_for(self, p: float) -> int:
        if self.rounds is not None:
            return self.rounds
        return default_rounds(p, self.b, self.min_rounds)


@dataclass
class SweepRow:
    variant: str
    loss_model: str
    burst: float
    p: float
    rtt_s: float
    mss_bytes: int
    b: int
    seed: int
    throughput_sim_Bps: float
    throughput_model_exact_Bps: float
    throughput_model_asym_Bps: float
    rto_count: int
    retx_count: int
    loss_events: int
    # diagnostics kept in memory only
    decrease_requested: int = -1
    decrease_applied: float = math.nan
    conservation_violations: int = -1
    recovery_acks: int = -1
    error: str = ""

    def csv_values(self) -> list:
        return [getattr(self, name) for name in CSV_COLUMNS]

    @classmethod
    def from_csv(cls, record: Mapping[str, str]) -> "SweepRow":
        missing = [c for c in CSV_COLUMNS if c not in record]
        if missing:
            raise KeyMismatchError(f"CSV is missing columns {missing}")
        kw = {}
        for f in fields(cls):
            if f.name not in CSV_COLUMNS:
                continue
            raw = record[f.name]
            if f.type in ("int",):
                kw[f.name] = int(raw)
            elif f.type in ("float",):
                kw[f.name] = float(raw)
            else:
                kw[f.name] = raw
        return cls(**kw)


def model_throughputs(config: SweepConfig, p: float) -> tuple[float, float]:
    """(exact, asymptotic) model throughput in bytes/s for one loss rate."""
    try:
        if Variant(config.variant) is Variant.RCC_PLUS:
            pred = throughput_no_rto(p, config.b, config.rtt, config.mss)
            return pred.t_p_exact, pred.t_p_asymptotic
        pred = throughput_rto(p, config.rtt, config.mss, mode=config.model_mode)
        return pred.t_rto_exact, pred.t_rto_asymptotic
    except ModelDomainError as exc:
        log.warning("model undefined at p=%g: %s", p, exc)
        return math.nan, math.nan


def _run_point(config: SweepConfig, p: float, seed: int, models: tuple[float, float]) -> SweepRow:
    spec = config.channel(p)
    base = dict(
        variant=Variant(config.variant).value, loss_model=config.loss_model,
        burst=float(config.burst if config.loss_model == "ge" else 1.0), p=p, rtt_s=config.rtt,
        mss_bytes=config.mss, b=config.b, seed=seed,
        throughput_model_exact_Bps=models[0], throughput_model_asym_Bps=models[1],
    )
    try:
        params = Params(p=p, b=config.b, rtt=config.rtt, mss=config.mss, seed=seed, variant=config.variant)
        res = run_sim(params, LinkConfig.for_rtt(config.rtt, config.capacity), spec,
                      rounds=config.rounds_for(p))
    except Exception as exc:  # recorded in the row, the sweep goes on
        log.error("simulation failed at p=%g seed=%d: %s", p, seed, exc)
        return SweepRow(throughput_sim_Bps=math.nan, rto_count=-1, retx_count=-1, loss_events=-1,
                        error=f"{type(exc).__name__}: {exc}", **base)
    return SweepRow(
        throughput_sim_Bps=res.throughput,
        rto_count=res.rto_count,
        retx_count=res.retransmitted,
        loss_events=res.loss_events,
        decrease_requested=res.decrease_requested,
        decrease_applied=res.decrease_applied,
        conservation_violations=res.conservation_violations,
        recovery_acks=res.recovery_acks,
        **base,
    )


def _run_point_args(args) -> SweepRow:
    return _run_point(*args)


def run_sweep(config: SweepConfig) -> list[SweepRow]:
    """Simulate every ``(p, seed)`` pair; rows come back ordered by ``(p, seed)``."""
    config.validate()
    ps = sorted(set(config.p_values))
    seeds = [config.seed_base + i for i in range(config.seeds)]
    models = {p: model_throughputs(config, p) for p in ps}
    tasks = [(config, p, s, models[p]) for p in ps for s in seeds]
    if config.workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            rows = list(pool.map(_run_point_args, tasks))
    else:
        rows = []
        for task in tasks:
            rows.append(_run_point(*task))
            log.info("p=%.3g seed=%d C=%.3f", task[1], task[2],
                     rows[-1].throughput_sim_Bps * config.rtt * task[1] / config.mss)
    return rows


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(rows: Iterable[SweepRow], fh: IO[str]) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in rows:
        writer.writerow([_fmt(v) for v in row.csv_values()])


def read_csv(path: str) -> list[SweepRow]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            return []
        missing = [c for c in CSV_COLUMNS if c not in reader.fieldnames]
        if missing:
            raise KeyMismatchError(f"CSV is missing columns {missing}")
        return [SweepRow.from_csv(rec) for rec in reader]


# ---------------------------------------------------------------------------
# Fitting
# ---------------------------------------------------------------------------


@dataclass
class FitResult:
    c_hat: float
    c_stderr: float
    slope_hat: float
    slope_stderr: float
    intercept: float
    n_points: int
    n_points_c: int
    c_p_max: float
    residuals: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def _point_means(rows: Sequence[SweepRow]) -> list[tuple[float, float, float, float]]:
    """(p, mean throughput, rtt, mss) per distinct p, skipping failed runs."""
    groups: dict = {}
    for row in rows:
        t = float(row.throughput_sim_Bps)
        if not (math.isfinite(t) and t > 0):
            continue
        groups.setdefault(float(row.p), []).append((t, float(row.rtt_s), float(row.mss_bytes)))
    out = []
    for p in sorted(groups):
        vals = groups[p]
        out.append((p, math.fsum(v[0] for v in vals) / len(vals), vals[0][1], vals[0][2]))
    return out


def fit_constant(rows: Sequence[SweepRow], c_p_max: float = C_FIT_P_MAX) -> FitResult:
    """Log-log regression of throughput on p, plus ``C`` from the points with ``p <= c_p_max``.

    Seeds are averaged per loss rate first.  ``C`` is the geometric mean of
    ``T * RTT * p / MSS`` over the retained points.
    """
    pts = _point_means(rows)
    if len(pts) < MIN_FIT_POINTS:
        raise InsufficientDataError(f"need >= {MIN_FIT_POINTS} distinct loss rates, got {len(pts)}")
    x = np.log([pt[0] for pt in pts])
    y = np.log([pt[1] for pt in pts])
    n = len(pts)
    xm, ym = x.mean(), y.mean()
    sxx = float(((x - xm) ** 2).sum())
    slope = float(((x - xm) * (y - ym)).sum() / sxx)
    intercept = float(ym - slope * xm)
    resid = y - (intercept + slope * x)
    s2 = float((resid ** 2).sum() / (n - 2)) if n > 2 else 0.0
    slope_se = math.sqrt(s2 / sxx)

    log_c = np.array([math.log(t * rtt * p / mss) for p, t, rtt, mss in pts if p <= c_p_max])
    if len(log_c) == 0:
        raise InsufficientDataError(f"no points with p <= {c_p_max} to estimate C")
    c_hat = math.exp(float(log_c.mean()))
    c_se = c_hat * float(log_c.std(ddof=1)) / math.sqrt(len(log_c)) if len(log_c) > 1 else math.nan
    residuals = [
        {"p": pt[0], "throughput_Bps": pt[1], "log_residual": float(r), "c": pt[1] * pt[2] * pt[0] / pt[3]}
        for pt, r in zip(pts, resid)
    ]
    return FitResult(
        c_hat=c_hat, c_stderr=c_se, slope_hat=slope, slope_stderr=slope_se, intercept=intercept,
        n_points=n, n_points_c=len(log_c), c_p_max=c_p_max, residuals=residuals,
    )


# ---------------------------------------------------------------------------
# Loss-model table
# ---------------------------------------------------------------------------

TABLE1_MODELS = (("uniform", "uniform", 1.0), ("ge_b2", "ge", 2.0), ("ge_b3", "ge", 3.0), ("ge_b4", "ge", 4.0))


@dataclass
class Table1Entry:
    name: str
    loss_model: str
    burst: float
    fit: FitResult
    rto_total: int
    failed_points: int


def table1(base: Optional[SweepConfig] = None, models=TABLE1_MODELS) -> dict[str, Table1Entry]:
    """Fit ``C`` under uniform and Gilbert-Elliott losses with the same base sweep."""
    base = base or SweepConfig()
    out = {}
    for name, kind, burst in models:
        cfg = SweepConfig.from_dict({**base.to_dict(), "loss_model": kind, "burst": burst})
        rows = run_sweep(cfg)
        out[name] = Table1Entry(
            name=name, loss_model=kind, burst=burst, fit=fit_constant(rows),
            rto_total=sum(max(r.rto_count, 0) for r in rows),
            failed_points=sum(1 for r in rows if r.error),
        )
        log.info("%s: C=%.3f slope=%.3f", name, out[name].fit.c_hat, out[name].fit.slope_hat)
    return out


def table1_to_json(table: Mapping[str, Table1Entry], config: Optional[SweepConfig] = None) -> str:
    doc = {"rows": {name: asdict(entry) for name, entry in table.items()}}
    if config is not None:
        doc["config"] = config.to_dict()
    return json.dumps(doc, indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# Model-vs-simulation report
# ---------------------------------------------------------------------------


@dataclass
class Report:
    column: str
    p_max: float
    threshold: float
    points: list
    max_abs_rel_err: float
    mean_abs_rel_err: float
    passed: bool

    def to_dict(self) -> dict:
        return asdict(self)


def report(rows: Sequence[Mapping], predictions: Optional[Mapping[float, float]] = None,
           column: str = "throughput_model_exact_Bps", p_max: float = C_FIT_P_MAX,
           threshold: float = 0.15) -> Report:
    """Relative error of simulated against predicted throughput, per ``(p, seed)``.

    ``rows`` are CSV records (mappings) or :class:`SweepRow` objects.
    Predictions come from ``predictions[p]`` when given, else from ``column``.
    The report passes when the mean absolute error over ``p <= p_max`` is at
    most ``threshold``.
    """
    points = []
    for row in rows:
        rec = asdict(row) if isinstance(row, SweepRow) else row
        for key in ("p", "seed", "throughput_sim_Bps"):
            if key not in rec:
                raise KeyMismatchError(f"row has no {key!r} column")
        p = float(rec["p"])
        if predictions is not None:
            if p not in predictions:
                raise KeyMismatchError(f"no prediction for p={p}")
            pred = float(predictions[p])
        else:
            if column not in rec:
                raise KeyMismatchError(f"row has no {column!r} column")
            pred = float(rec[column])
        sim = float(rec["throughput_sim_Bps"])
        rel = (sim - pred) / pred if pred else math.nan
        points.append({"p": p, "seed": int(rec["seed"]), "sim": sim, "model": pred, "rel_err": rel})
    inside = [abs(pt["rel_err"]) for pt in points if pt["p"] <= p_max and math.isfinite(pt["rel_err"])]
    max_err = max(inside) if inside else math.nan
    mean_err = math.fsum(inside) / len(inside) if inside else math.nan
    return Report(
        column=column if predictions is None else "predictions",
        p_max=p_max, threshold=threshold, points=points,
        max_abs_rel_err=max_err, mean_abs_rel_err=mean_err,
        passed=bool(inside) and mean_err <= threshold,
    )


def write_report(rep: Report, csv_fh: IO[str], json_fh: IO[str]) -> None:
    writer = csv.writer(csv_fh, lineterminator="\n")
    writer.writerow(["p", "seed", "sim", "model", "rel_err"])
    for pt in rep.points:
        writer.writerow([_fmt(pt["p"]), pt["seed"], _fmt(pt["sim"]), _fmt(pt["model"]), _fmt(pt["rel_err"])])
    summary = {k: v for k, v in rep.to_dict().items() if k != "points"}
    json_fh.write(json.dumps(summary, indent=2, sort_keys=True))
    json_fh.write("\n")
