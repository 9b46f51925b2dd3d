"""Delay windows and per-window label quantization.

The full conversion window (0, r] is partitioned into half-open ranges
(t_{i-1}, t_i]. A conversion with delay d belongs to exactly one range, and
the per-range binary/value labels sum back to the overall labels exactly.
"""

from __future__ import annotations

from bisect import bisect_left
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

DAY_SECONDS = 86_400.0


class WindowError(ValueError):
    """Invalid window boundaries or quantization input."""


@dataclass(frozen=True)
class DelayWindows:
    """Ordered boundaries 0 = t_0 < t_1 < ... < t_n = r, in seconds.

    Head i (0-based) owns delays in (boundaries[i], boundaries[i+1]].
    """

    boundaries: tuple[float, ...]

    def __post_init__(self):
        b = tuple(float(t) for t in self.boundaries)
        object.__setattr__(self, "boundaries", b)
        if len(b) < 2:
            raise WindowError("need at least two boundaries (one head)")
        if b[0] != 0.0:
            raise WindowError(f"first boundary must be 0, got {b[0]}")
        if any(lo >= hi for lo, hi in zip(b, b[1:])):
            raise WindowError(f"boundaries must be strictly increasing: {b}")

    @property
    def n_heads(self) -> int:
        return len(self.boundaries) - 1

    @property
    def full_window(self) -> float:
        return self.boundaries[-1]

    @property
    def wait_times(self) -> tuple[float, ...]:
        """Per-head release delays t_1 ... t_n."""
        return self.boundaries[1:]

    def head_of(self, delay: float) -> int:
        """0-based head owning ``delay``; delays sit in (t_{i-1}, t_i]."""
        if not 0.0 < delay <= self.full_window:
            raise WindowError(
                f"delay {delay} outside (0, {self.full_window}]; "
                "ingestion must pre-filter"
            )
        return bisect_left(self.boundaries, delay) - 1

    def head_range(self, head: int) -> tuple[float, float]:
        if not 0 <= head < self.n_heads:
            raise WindowError(f"head {head} out of range [0, {self.n_heads})")
        return self.boundaries[head], self.boundaries[head + 1]

    def is_day_aligned(self) -> bool:
        return all(t % DAY_SECONDS == 0.0 for t in self.boundaries)

    def as_days(self) -> tuple[float, ...]:
        return tuple(t / DAY_SECONDS for t in self.boundaries)

    @classmethod
    def from_days(cls, days: Sequence[float]) -> "DelayWindows":
        return cls(tuple(d * DAY_SECONDS for d in days))


@dataclass(frozen=True)
class QuantizedLabels:
    """Overall labels (y, v) plus their per-window decomposition.

    Invariants: sum(y_i) == y and sum(v_i) == v exactly; at most one head
    carries the conversion.
    """

    y: int
    v: float
    y_i: np.ndarray
    v_i: np.ndarray


def quantize(delay: Optional[float], value: Optional[float],
             windows: DelayWindows) -> QuantizedLabels:
    """Split one click's conversion into per-window labels.

    No conversion yields all zeros; otherwise exactly the owning head gets
    y_i = 1 and v_i = value.
    """
    n = windows.n_heads
    y_i = np.zeros(n, dtype=np.int64)
    v_i = np.zeros(n, dtype=np.float64)
    if delay is None:
        if value is not None:
            raise WindowError("conversion value present without a delay")
        return QuantizedLabels(0, 0.0, y_i, v_i)
    if value is None:
        raise WindowError("conversion delay present without a value")
    if value < 0:
        raise WindowError(f"conversion value must be >= 0, got {value}")
    head = windows.head_of(delay)
    y_i[head] = 1
    v_i[head] = value
    return QuantizedLabels(1, float(value), y_i, v_i)


def design_windows(delays, n: int, r: float,
                   snap: str = "none") -> DelayWindows:
    """Place boundaries at empirical delay quantiles so each head captures
    a similar share of conversions.

    Interior boundaries sit at the k/n-quantiles of ``delays`` for
    k = 1..n-1 (exact sort). Equal quantiles are shifted to the next
    distinct observed delay. ``snap="day"`` rounds each interior boundary
    up to a whole-day multiple (daily-batch mode needs day-aligned
    windows); ``snap="none"`` keeps raw quantiles.
    """
    if n < 1:
        raise WindowError(f"head count must be >= 1, got {n}")
    if snap not in ("none", "day"):
        raise WindowError(f"snap must be 'none' or 'day', got {snap!r}")
    d = np.sort(np.asarray(delays, dtype=np.float64))
    if d.size == 0:
        raise WindowError("cannot design windows from an empty delay sample")
    if d[0] <= 0 or d[-1] > r:
        raise WindowError("all delays must lie in (0, r]")
    if r <= 0:
        raise WindowError(f"full window must be positive, got {r}")
    if snap == "day" and r % DAY_SECONDS != 0.0:
        raise WindowError("day snapping requires r to be a whole-day multiple")

    distinct = np.unique(d)
    if n > distinct.size:
        raise WindowError(
            f"cannot split {distinct.size} distinct delay value(s) into "
            f"{n} windows; use a smaller head count"
        )

    interior: list[float] = []
    prev = 0.0
    for k in range(1, n):
        q = float(d[min(int(np.ceil(k / n * d.size)) - 1, d.size - 1)])
        if snap == "day":
            q = float(np.ceil(q / DAY_SECONDS) * DAY_SECONDS)
        if q <= prev:
            if snap == "day":
                q = prev + DAY_SECONDS
            else:
                nxt = np.searchsorted(distinct, prev, side="right")
                if nxt >= distinct.size:
                    raise WindowError(
                        "degenerate quantiles: not enough distinct delays "
                        f"above {prev}; use a smaller head count"
                    )
                q = float(distinct[nxt])
        if q >= r:
            raise WindowError(
                f"quantile boundary {q} reaches the full window {r}; "
                "use a smaller head count"
            )
        interior.append(q)
        prev = q
    return DelayWindows((0.0, *interior, float(r)))


def head_share(delays, windows: DelayWindows) -> np.ndarray:
    """Fraction of delays landing in each window; sums to 1."""
    d = np.asarray(delays, dtype=np.float64)
    if d.size == 0:
        raise WindowError("empty delay sample")
    if np.any(d <= 0) or np.any(d > windows.full_window):
        raise WindowError("all delays must lie in (0, r]")
    heads = np.searchsorted(windows.boundaries, d, side="left") - 1
    counts = np.bincount(heads, minlength=windows.n_heads)
    return counts / d.size
