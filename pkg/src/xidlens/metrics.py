"""Error counts, MTBE at several granularities, hazard curves and availability."""

from __future__ import annotations

import bisect
import math
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from numbers import Integral
from typing import Callable, Mapping, Sequence

from .config import ErrorTaxonomy, default_taxonomy, error_type
from .errors import ConfigError, DataInconsistencyError, UnsortedInputError
from .records import FleetConfig

RRE, RRF, DBE = "63", "64", "48"
UNCORRECTABLE, CONSECUTIVE_SBE = "uncorrectable-ECC", "consecutive-SBE"


def _start(item) -> int:
    return item.start if hasattr(item, "representative") else item.timestamp


def _record(item):
    return getattr(item, "representative", item)


def count_errors(coalesced: Sequence, taxonomy: ErrorTaxonomy | None = None,
                 time_range: tuple[int | None, int | None] | None = None,
                 include_excluded: bool = False) -> dict[str, int]:
    """Count coalesced errors per taxonomy label.

    ``time_range`` is a half-open ``[lo, hi)`` filter on the burst start time,
    either bound may be None. Excluded types (user-caused XIDs) are dropped
    unless ``include_excluded``.
    """
    taxonomy = taxonomy or default_taxonomy()
    lo, hi = time_range or (None, None)
    counts: Counter = Counter()
    for item in coalesced:
        t = _start(item)
        if (lo is not None and t < lo) or (hi is not None and t >= hi):
            continue
        label = error_type(_record(item), taxonomy)
        if not include_excluded and taxonomy.is_excluded(label):
            continue
        counts[label] += 1
    return dict(sorted(counts.items()))


def infer_uncorrectable(rre_count: int, rrf_count: int) -> int:
    """Uncorrectable ECC errors: every one ends in a remap event or a remap failure."""
    if rre_count < 0 or rrf_count < 0:
        raise ValueError("counts must be non-negative")
    return rre_count + rrf_count


def infer_consecutive_sbe(uncorrectable: int, dbe: int) -> int:
    if dbe > uncorrectable:
        raise DataInconsistencyError(
            f"DBE count {dbe} exceeds uncorrectable ECC count {uncorrectable}")
    return uncorrectable - dbe


def with_inferred(counts: Mapping[str, int]) -> dict[str, int]:
    """Add the inferred memory-error rows to a count map.

    The consecutive-SBE row is left out when the inputs are inconsistent.
    """
    out = dict(counts)
    unc = infer_uncorrectable(counts.get(RRE, 0), counts.get(RRF, 0))
    out[UNCORRECTABLE] = unc
    try:
        out[CONSECUTIVE_SBE] = infer_consecutive_sbe(unc, counts.get(DBE, 0))
    except DataInconsistencyError:
        pass
    return out


@dataclass(frozen=True)
class MtbeReport:
    error_type: str
    count: int
    observation_hours: float
    mtbe_system: float | None
    mtbe_per_node: float | None
    mtbe_per_gpu: float | None
    mtbe_per_gb: float | None


def _from_per_node(per_node: float, fleet: FleetConfig):
    per_gpu = per_node * fleet.gpus_total / fleet.node_count
    return per_gpu, per_gpu * fleet.gb_per_gpu


def mtbe(count: int, fleet: FleetConfig, error_type: str = "") -> MtbeReport:
    """MTBE at system, node, GPU and GB granularity.

    Node-level MTBE scales the system figure by the node count; GPU and GB
    levels use the fleet-average GPUs per node. A zero count gives absent
    MTBEs rather than infinity.
    """
    if count < 0:
        raise ValueError("count must be non-negative")
    if not fleet.observation_hours > 0:
        raise ConfigError("observation_hours must be positive")
    if count == 0:
        return MtbeReport(error_type, 0, fleet.observation_hours, None, None, None, None)
    system = fleet.observation_hours / count
    per_node = system * fleet.node_count
    per_gpu, per_gb = _from_per_node(per_node, fleet)
    return MtbeReport(error_type, count, fleet.observation_hours, system, per_node, per_gpu, per_gb)


def mtbe_from_per_node(per_node: float, fleet: FleetConfig, error_type: str = "") -> MtbeReport:
    """Rebuild the other granularities from a published per-node MTBE."""
    per_gpu, per_gb = _from_per_node(per_node, fleet)
    system = per_node / fleet.node_count
    count = round(fleet.observation_hours / system)
    return MtbeReport(error_type, count, fleet.observation_hours, system, per_node, per_gpu, per_gb)


def mtbe_table(counts: Mapping[str, int], fleet: FleetConfig) -> list[MtbeReport]:
    return [mtbe(c, fleet, label) for label, c in counts.items()]


# -- hazard ------------------------------------------------------------------

@dataclass
class HazardCurve:
    """Right-continuous step function; ``times[0] == 0`` and ``cumulative[0] == 0``."""

    times: list[float] = field(default_factory=lambda: [0.0])
    cumulative: list[float] = field(default_factory=lambda: [0.0])
    events: list[int] = field(default_factory=lambda: [0])
    at_risk: list[float] = field(default_factory=lambda: [0])

    def __call__(self, t: float) -> float:
        i = bisect.bisect_right(self.times, t) - 1
        return self.cumulative[max(i, 0)]

    @property
    def increments(self) -> list[float]:
        return [b - a for a, b in zip(self.cumulative, self.cumulative[1:])]

    def rate(self, horizon: float | None = None) -> float:
        """Least-squares slope through the origin of H(t), sampled at the steps."""
        pts = [(t, h) for t, h in zip(self.times[1:], self.cumulative[1:])
               if horizon is None or t <= horizon]
        den = sum(t * t for t, _ in pts)
        return sum(t * h for t, h in pts) / den if den else 0.0


def nelson_aalen(failure_times: Sequence[float],
                 at_risk: Callable[[float], float] | Sequence[float] | float) -> HazardCurve:
    """Nelson-Aalen cumulative hazard, H(t) = sum over event times t_i <= t of d_i / n_i.

    ``at_risk`` may be a constant, a callable of time, or a sequence with one
    entry per distinct event time.
    """
    for i in range(1, len(failure_times)):
        if failure_times[i] < failure_times[i - 1]:
            raise UnsortedInputError("failure times must be sorted")
    distinct: list[float] = []
    deaths: list[int] = []
    for t in failure_times:
        if distinct and t == distinct[-1]:
            deaths[-1] += 1
        else:
            distinct.append(t)
            deaths.append(1)
    if callable(at_risk):
        risk = [at_risk(t) for t in distinct]
    elif isinstance(at_risk, (int, float)):
        risk = [at_risk] * len(distinct)
    else:
        risk = list(at_risk)
        if len(risk) != len(distinct):
            raise ValueError(f"{len(risk)} at-risk counts for {len(distinct)} distinct event times")

    curve = HazardCurve()
    total = Fraction(0)
    exact = True
    running = 0.0
    for t, d, n in zip(distinct, deaths, risk):
        if not n > 0:
            raise DataInconsistencyError(f"no units at risk at event time {t}")
        if exact and isinstance(n, Integral):
            total += Fraction(d, int(n))
            value = float(total)
        else:
            if exact:
                running = float(total)
                exact = False
            running += d / n
            value = running
        curve.times.append(t)
        curve.cumulative.append(value)
        curve.events.append(d)
        curve.at_risk.append(n)
    return curve


def fleet_hazard(coalesced: Sequence, fleet: FleetConfig, origin: int | None = None,
                 error_types: set[str] | None = None, taxonomy: ErrorTaxonomy | None = None) -> HazardCurve:
    """Fleet hazard on a node-hours clock: all nodes stay at risk (errors recur)
    until the observation window ends, which censors everything after it."""
    starts = []
    for item in coalesced:
        if error_types is not None and error_type(_record(item), taxonomy) not in error_types:
            continue
        starts.append(_start(item))
    if not starts:
        return HazardCurve()
    origin = min(starts) if origin is None else origin
    hours = sorted((s - origin) / 3600.0 for s in starts)
    hours = [h for h in hours if 0 <= h <= fleet.observation_hours]
    return nelson_aalen(hours, fleet.node_count)


# -- availability ------------------------------------------------------------

@dataclass(frozen=True)
class AvailabilityInput:
    mttf: float
    mttr: float

    def __post_init__(self):
        if not (self.mttf > 0 and self.mttr > 0):
            raise ConfigError("mttf and mttr must be positive")


def availability(inp: AvailabilityInput) -> float:
    if math.isinf(inp.mttf):
        return 1.0
    return inp.mttf / (inp.mttf + inp.mttr)
