"""Per-segment drop processes.

Channels are stepped once per transmitted data segment, in send order.
Decisions are drawn in blocks from a seeded numpy ``Generator`` so that a
single step (:meth:`should_drop`) and a bulk draw (:meth:`draw`) walk the
same sequence.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_BLOCK = 4096


class ChannelSpecError(ValueError):
    pass


class _BlockChannel:
    def __init__(self, seed: int):
        self.rng = np.random.default_rng(seed)
        self._buf = np.zeros(0, dtype=np.bool_)
        self._pos = 0
        self.steps = 0

    def _fill(self, n: int) -> np.ndarray:
        raise NotImplementedError

    def should_drop(self) -> bool:
        if self._pos >= len(self._buf):
            self._buf = self._fill(_BLOCK)
            self._pos = 0
        out = bool(self._buf[self._pos])
        self._pos += 1
        self.steps += 1
        return out

    def draw(self, n: int) -> np.ndarray:
        """Next ``n`` decisions, identical to ``n`` calls of :meth:`should_drop`."""
        out = np.empty(n, dtype=np.bool_)
        filled = 0
        while filled < n:
            if self._pos >= len(self._buf):
                self._buf = self._fill(_BLOCK)
                self._pos = 0
            take = min(n - filled, len(self._buf) - self._pos)
            out[filled:filled + take] = self._buf[self._pos:self._pos + take]
            self._pos += take
            filled += take
        self.steps += n
        return out


class BernoulliChannel(_BlockChannel):
    """Independent drops with probability ``p``."""

    def __init__(self, p: float, seed: int = 0):
        if not 0.0 <= p <= 1.0:
            raise ChannelSpecError(f"drop probability must lie in [0, 1], got {p}")
        super().__init__(seed)
        self.p = p

    @property
    def rate(self) -> float:
        return self.p

    def _fill(self, n: int) -> np.ndarray:
        return self.rng.random(n) < self.p


class GilbertElliottChannel(_BlockChannel):
    """Two-state Markov channel: Good never drops, Bad always drops.

    ``g`` is the per-segment Good->Bad probability and ``r`` the Bad->Good
    probability.  The emitted decision reflects the state the segment sees;
    the transition is taken afterwards.  The initial state is drawn from the
    stationary law.
    """

    def __init__(self, g: float, r: float, seed: int = 0):
        if not (0.0 <= g < 1.0 and 0.0 < r <= 1.0):
            raise ChannelSpecError(f"infeasible Gilbert-Elliott transition probabilities g={g}, r={r}")
        super().__init__(seed)
        self.g = g
        self.r = r
        stationary_bad = g / (g + r) if g > 0 else 0.0
        self.bad = bool(self.rng.random() < stationary_bad)
        self._left = 0

    @property
    def rate(self) -> float:
        return self.g / (self.g + self.r)

    @property
    def mean_burst(self) -> float:
        return 1.0 / self.r

    def _fill(self, n: int) -> np.ndarray:
        out = np.empty(n, dtype=np.bool_)
        filled = 0
        # alternate geometric sojourns; a sojourn may overrun the block, in
        # which case the remainder is carried in self._left
        left = self._left
        while filled < n:
            if left == 0:
                prob = self.r if self.bad else self.g
                left = int(self.rng.geometric(prob)) if prob > 0 else n - filled
            take = min(left, n - filled)
            out[filled:filled + take] = self.bad
            filled += take
            left -= take
            if left == 0:
                self.bad = not self.bad
        self._left = left
        return out


class ScriptedChannel:
    """Drops exactly the transmissions whose 0-based index is in ``drops``."""

    def __init__(self, drops):
        self.drops = frozenset(int(i) for i in drops)
        self.steps = 0

    def should_drop(self) -> bool:
        out = self.steps in self.drops
        self.steps += 1
        return out

    def draw(self, n: int) -> np.ndarray:
        return np.array([self.should_drop() for _ in range(n)], dtype=np.bool_)


def ge_from_rate_and_burst(p: float, burst: float, seed: int = 0) -> GilbertElliottChannel:
    """Gilbert-Elliott channel with stationary drop rate ``p`` and mean burst ``burst``."""
    if not 0.0 < p < 1.0:
        raise ChannelSpecError(f"stationary rate must lie in (0, 1), got {p}")
    if burst < 1.0:
        raise ChannelSpecError(f"mean burst size must be >= 1, got {burst}")
    r = 1.0 / burst
    g = p * r / (1.0 - p)
    if g >= 1.0:
        raise ChannelSpecError(f"rate {p} with burst {burst} needs g={g:.4g} >= 1")
    return GilbertElliottChannel(g, r, seed=seed)


@dataclass(frozen=True)
class ChannelSpec:
    """Parsed ``uniform:<p>`` or ``ge:<p>:<B>`` channel description."""

    kind: str
    p: float
    burst: float = 1.0

    @classmethod
    def parse(cls, text: str) -> "ChannelSpec":
        parts = text.strip().split(":")
        try:
            if parts[0] == "uniform" and len(parts) == 2:
                spec = cls("uniform", float(parts[1]))
            elif parts[0] == "ge" and len(parts) == 3:
                spec = cls("ge", float(parts[1]), float(parts[2]))
            else:
                raise ChannelSpecError(f"cannot parse channel spec {text!r}")
        except ValueError as exc:
            if isinstance(exc, ChannelSpecError):
                raise
            raise ChannelSpecError(f"cannot parse channel spec {text!r}") from exc
        spec.validate()
        return spec

    def validate(self) -> None:
        if self.kind == "uniform":
            if not 0.0 <= self.p <= 1.0:
                raise ChannelSpecError(f"uniform drop rate must lie in [0, 1], got {self.p}")
        elif self.kind == "ge":
            ge_from_rate_and_burst(self.p, self.burst)
        else:
            raise ChannelSpecError(f"unknown channel kind {self.kind!r}")

    def build(self, seed: int):
        if self.kind == "uniform":
            return BernoulliChannel(self.p, seed=seed)
        return ge_from_rate_and_burst(self.p, self.burst, seed=seed)

    def __str__(self) -> str:
        if self.kind == "uniform":
            return f"uniform:{self.p:g}"
        return f"ge:{self.p:g}:{self.burst:g}"


@dataclass(frozen=True)
class ScriptedSpec:
    """Deterministic drop script for directed tests (reference backend only)."""

    drops: frozenset = frozenset()
    kind: str = "script"
    p: float = 0.0
    burst: float = 1.0

    def validate(self) -> None:
        if any(i < 0 for i in self.drops):
            raise ChannelSpecError("transmission indices must be non-negative")

    def build(self, seed: int) -> ScriptedChannel:
        return ScriptedChannel(self.drops)

    def __str__(self) -> str:
        return "script:" + ",".join(str(i) for i in sorted(self.drops))
