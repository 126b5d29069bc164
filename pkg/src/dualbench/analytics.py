"""Derived metrics for native-vs-container comparisons.

All inputs are plain numbers or the immutable types below; every function is
pure. Ratios are returned as fractions (0.675, not 67.5).
"""

from __future__ import annotations

import enum
import math
import statistics
from dataclasses import dataclass
from typing import Sequence

from .model import MessageSizeSeries, NcclRow, NcclTable


class AnalyticsError(ValueError):
    pass


class EmptySamples(AnalyticsError):
    pass


class NonPositiveInput(AnalyticsError):
    pass


class NoCommonSizes(AnalyticsError):
    pass


class EmptyTable(AnalyticsError):
    pass


class InsufficientPoints(AnalyticsError):
    pass


class Spread(str, enum.Enum):
    """Which error band a report draws around the mean."""

    MEAN_STD = "mean_std"
    MIN_MAX = "min_max"


@dataclass(frozen=True)
class Stats:
    mean: float
    std: float
    min: float
    max: float
    n: int

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError("Stats needs n >= 1")
        if self.std < 0 or (self.n == 1 and self.std != 0):
            raise ValueError(f"invalid std {self.std} for n={self.n}")
        if not self.min <= self.mean <= self.max:
            raise ValueError(f"expected min <= mean <= max, got {self.min}, {self.mean}, {self.max}")

    def band(self, spread: Spread) -> tuple[float, float]:
        if spread is Spread.MIN_MAX:
            return self.min, self.max
        return self.mean - self.std, self.mean + self.std

    def scaled(self, factor: float) -> Stats:
        lo, hi = sorted((self.min * factor, self.max * factor))
        return Stats(self.mean * factor, self.std * abs(factor), lo, hi, self.n)


def aggregate(samples: Sequence[float], policy: Spread = Spread.MEAN_STD) -> Stats:
    """Summarize repeated measurements.

    Uses the sample standard deviation (n - 1 denominator); a single sample
    has std 0. ``policy`` does not change any value, it only records which
    band downstream reports will draw.
    """
    Spread(policy)
    if len(samples) == 0:
        raise EmptySamples("cannot aggregate an empty sample list")
    xs = [float(x) for x in samples]
    lo, hi = min(xs), max(xs)
    mean = min(max(statistics.fmean(xs), lo), hi)
    std = statistics.stdev(xs) if len(xs) > 1 else 0.0
    return Stats(mean, std, lo, hi, len(xs))


@dataclass(frozen=True)
class ScalingSeries:
    """Runtime (seconds) against node count, ascending."""

    points: tuple[tuple[int, Stats], ...]
    baseline_nodes: int

    def __post_init__(self) -> None:
        nodes = self.nodes
        if not nodes:
            raise ValueError("a scaling series needs at least one point")
        if any(b <= a for a, b in zip(nodes, nodes[1:])):
            raise ValueError(f"node counts must be strictly increasing: {nodes}")
        if self.baseline_nodes not in nodes:
            raise ValueError(f"baseline {self.baseline_nodes} not among {nodes}")

    @classmethod
    def from_means(cls, means: dict[int, float], baseline_nodes: int | None = None) -> ScalingSeries:
        pts = tuple((n, Stats(t, 0.0, t, t, 1)) for n, t in sorted(means.items()))
        return cls(pts, baseline_nodes if baseline_nodes is not None else pts[0][0])

    @property
    def nodes(self) -> list[int]:
        return [n for n, _ in self.points]

    @property
    def means(self) -> dict[int, float]:
        return {n: s.mean for n, s in self.points}

    def stats_at(self, nodes: int) -> Stats:
        return dict(self.points)[nodes]

    def scaled(self, factor: float) -> ScalingSeries:
        return ScalingSeries(tuple((n, s.scaled(factor)) for n, s in self.points), self.baseline_nodes)


def _positive(**values: float) -> None:
    for name, v in values.items():
        if not v > 0:
            raise NonPositiveInput(f"{name} must be > 0, got {v}")


def strong_efficiency(t_base: float, t_n: float, n: int, n_base: int = 1) -> float:
    """Parallel efficiency ``(t_base * n_base) / (t_n * n)``."""
    _positive(t_base=t_base, t_n=t_n, n=n, n_base=n_base)
    if n < n_base:
        raise NonPositiveInput(f"n ({n}) must not be below the baseline node count ({n_base})")
    return (t_base * n_base) / (t_n * n)


def speedup(t_base: float, t_n: float, n: int = 1, n_base: int = 1) -> tuple[float, bool]:
    """Return ``(t_base / t_n, superlinear)``; superlinear when above ``n / n_base``."""
    _positive(t_base=t_base, t_n=t_n, n=n, n_base=n_base)
    s = t_base / t_n
    return s, s > n / n_base


def weak_normalized(series: ScalingSeries, baseline: Stats) -> list[tuple[int, float]]:
    if not baseline.mean > 0:
        raise NonPositiveInput(f"baseline mean must be > 0, got {baseline.mean}")
    return [(n, s.mean / baseline.mean) for n, s in series.points]


def relative_overhead(t_container: float, t_native: float) -> float:
    """Signed slowdown of the container; negative means the container is faster."""
    _positive(t_native=t_native)
    return (t_container - t_native) / t_native


def absolute_overhead(t_container: float, t_native: float) -> float:
    _positive(t_native=t_native)
    return t_container - t_native


# -- message-size regimes -------------------------------------------------------


class Regime(str, enum.Enum):
    SMALL = "small"     # <= 1 KiB
    MEDIUM = "medium"   # (1 KiB, 128 KiB]
    LARGE = "large"     # > 128 KiB


SMALL_MAX = 1024
MEDIUM_MAX = 131072


def regime_of(size: int) -> Regime:
    if size <= SMALL_MAX:
        return Regime.SMALL
    if size <= MEDIUM_MAX:
        return Regime.MEDIUM
    return Regime.LARGE


@dataclass(frozen=True)
class RegimeDelta:
    count: int
    mean_abs_delta: float   # mean of (container - native), microseconds
    max_abs_delta: float    # largest (container - native), microseconds
    mean_rel_delta: float   # mean of (container - native) / native


@dataclass(frozen=True)
class RegimeSummary:
    regimes: dict[Regime, RegimeDelta]

    def __getitem__(self, regime: Regime) -> RegimeDelta:
        return self.regimes[regime]

    def get(self, regime: Regime) -> RegimeDelta | None:
        return self.regimes.get(regime)

    @property
    def total(self) -> int:
        return sum(r.count for r in self.regimes.values())


def regime_summary(native: MessageSizeSeries, container: MessageSizeSeries) -> RegimeSummary:
    """Latency deltas over the message sizes both series contain, per regime.

    Deltas are signed (container minus native). A regime with no common size
    is absent from the summary.
    """
    nat, con = native.as_dict(), container.as_dict()
    common = sorted(set(nat) & set(con))
    if not common:
        raise NoCommonSizes("the two latency series share no message size")
    buckets: dict[Regime, list[int]] = {}
    for size in common:
        buckets.setdefault(regime_of(size), []).append(size)
    out = {}
    for regime in Regime:
        sizes = buckets.get(regime)
        if not sizes:
            continue
        deltas = [con[s] - nat[s] for s in sizes]
        rels = [(con[s] - nat[s]) / nat[s] for s in sizes]
        out[regime] = RegimeDelta(len(sizes), statistics.fmean(deltas), max(deltas),
                                  statistics.fmean(rels))
    return RegimeSummary(out)


# -- NCCL bandwidth -------------------------------------------------------------------


class Side(str, enum.Enum):
    OUT_OF_PLACE = "out_of_place"
    IN_PLACE = "in_place"


def _busbw(row: NcclRow, side: Side) -> float:
    return row.oop_busbw if side is Side.OUT_OF_PLACE else row.ip_busbw


def peak_bus_bandwidth(table: NcclTable, side: Side = Side.OUT_OF_PLACE) -> tuple[int, float]:
    """Row with the highest bus bandwidth; ties go to the larger message."""
    if not table.rows:
        raise EmptyTable("NCCL table has no rows")
    best = max(table.rows, key=lambda r: (_busbw(r, side), r.size))
    return best.size, _busbw(best, side)


def bandwidth_reduction(peak_intra: float, peak_inter: float) -> float:
    _positive(peak_intra=peak_intra)
    return 1.0 - peak_inter / peak_intra


def parity_deviation(native_peak: float, container_peak: float) -> float:
    _positive(native_peak=native_peak)
    return abs(container_peak - native_peak) / native_peak


# -- overhead pattern -------------------------------------------------------------


class PatternKind(str, enum.Enum):
    CONSTANT_RELATIVE = "constant_relative"
    CONSTANT_ABSOLUTE = "constant_absolute"
    GROWING_WITH_SCALE = "growing_with_scale"
    INDISTINGUISHABLE = "indistinguishable"


@dataclass(frozen=True)
class PatternThresholds:
    noise_floor: float = 0.02
    cv_cutoff: float = 0.25
    growth_rise: float = 0.05


@dataclass(frozen=True)
class OverheadPattern:
    kind: PatternKind
    value: float | None          # r for constant-relative, seconds for constant-absolute
    nodes: tuple[int, ...]
    relative: tuple[float, ...]
    absolute: tuple[float, ...]

    @property
    def rise(self) -> float:
        return self.relative[-1] - self.relative[0]


def _cv(xs: Sequence[float]) -> float:
    std = statistics.pstdev(xs)
    if std == 0:
        return 0.0
    mean = statistics.fmean(xs)
    return math.inf if mean == 0 else std / abs(mean)


# CVs closer than this are treated as equal, so float noise cannot flip a tie.
_CV_TIE = 1e-9


def classify_overhead_pattern(
    native: ScalingSeries,
    container: ScalingSeries,
    thresholds: PatternThresholds = PatternThresholds(),
) -> OverheadPattern:
    """Decide whether the container overhead is constant in ratio, constant in
    seconds, growing with node count, or lost in the noise.

    Uses the mean runtimes at node counts present in both series.
    """
    nat, con = native.means, container.means
    nodes = sorted(set(nat) & set(con))
    if len(nodes) < 3:
        raise InsufficientPoints(f"need >= 3 common node counts, got {len(nodes)}")
    rel = [relative_overhead(con[n], nat[n]) for n in nodes]
    ab = [absolute_overhead(con[n], nat[n]) for n in nodes]
    cv_r, cv_a = _cv(rel), _cv(ab)

    def make(kind: PatternKind, value: float | None) -> OverheadPattern:
        return OverheadPattern(kind, value, tuple(nodes), tuple(rel), tuple(ab))

    if statistics.fmean(abs(r) for r in rel) < thresholds.noise_floor:
        return make(PatternKind.INDISTINGUISHABLE, None)
    if cv_r <= thresholds.cv_cutoff and cv_r <= cv_a + _CV_TIE:
        return make(PatternKind.CONSTANT_RELATIVE, statistics.fmean(rel))
    if cv_a <= thresholds.cv_cutoff and cv_a < cv_r:
        return make(PatternKind.CONSTANT_ABSOLUTE, statistics.fmean(ab))
    rising = all(b > a for a, b in zip(rel, rel[1:]))
    if rising and rel[-1] - rel[0] > thresholds.growth_rise:
        return make(PatternKind.GROWING_WITH_SCALE, rel[-1] - rel[0])
    return make(PatternKind.INDISTINGUISHABLE, None)


# -- outliers -----------------------------------------------------------------------------


def _log_interp(n0: int, t0: float, n1: int, t1: float, n: int) -> float:
    w = (math.log(n) - math.log(n0)) / (math.log(n1) - math.log(n0))
    return math.exp(math.log(t0) + w * (math.log(t1) - math.log(t0)))


def detect_outliers(series: ScalingSeries, k: float = 3.0, rtol: float = 1e-9) -> list[int]:
    """Node counts whose mean runtime breaks away from their neighbours.

    Each interior point is compared with the log-log interpolation of its two
    neighbours; it is an outlier when the gap exceeds ``k`` times the larger
    neighbour std (never less than ``rtol`` of the interpolated value).
    Outliers are removed one at a time, worst first, and the remaining points
    re-checked against their nearest unflagged neighbours, so a single spike
    does not also drag its neighbours over the line. Endpoints are never
    flagged.
    """
    if len(series.points) < 3:
        raise InsufficientPoints(f"need >= 3 points, got {len(series.points)}")
    if not k > 0:
        raise ValueError(f"k must be > 0, got {k}")
    pts = list(series.points)
    if any(s.mean <= 0 for _, s in pts):
        raise NonPositiveInput("runtimes must be > 0")
    flagged: set[int] = set()
    while True:
        keep = [i for i in range(len(pts)) if i not in flagged]
        worst, worst_gap = None, 0.0
        for j in range(1, len(keep) - 1):
            (n0, s0), (n, s), (n1, s1) = pts[keep[j - 1]], pts[keep[j]], pts[keep[j + 1]]
            expected = _log_interp(n0, s0.mean, n1, s1.mean, n)
            limit = max(k * max(s0.std, s1.std), rtol * expected)
            if abs(s.mean - expected) > limit:
                gap = abs(math.log(s.mean / expected))
                if worst is None or gap > worst_gap:
                    worst, worst_gap = keep[j], gap
        if worst is None:
            break
        flagged.add(worst)
    return sorted(pts[i][0] for i in flagged)
