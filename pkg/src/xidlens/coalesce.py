"""Error coalescing: collapse bursts of identical errors from one GPU.

Records are grouped by GPU (node + PCI address) and pattern. Within a group a
burst keeps growing while the next record repeats the burst's first message
and arrives no more than ``delta_t`` seconds after the latest absorbed record;
the window slides with each absorbed record. Only the first record of a burst
is kept, along with how long the burst persisted.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .config import ErrorTaxonomy, error_type
from .errors import ConfigError, UnsortedInputError
from .records import CoalescedError, ErrorRecord


@dataclass(frozen=True)
class AnalysisParams:
    delta_t: float = 5.0

    def __post_init__(self):
        if not self.delta_t > 0:
            raise ConfigError(f"delta_t must be > 0, got {self.delta_t}")


def check_sorted(times, what="events"):
    for i in range(1, len(times)):
        if times[i] < times[i - 1]:
            raise UnsortedInputError(
                f"{what} not sorted by time: index {i} ({times[i]}) precedes index {i - 1} ({times[i - 1]}); sort before calling")


def _codes(keys) -> np.ndarray:
    table: dict = {}
    return np.fromiter((table.setdefault(k, len(table)) for k in keys), dtype=np.int64, count=len(keys))


def coalesce(events: Sequence[ErrorRecord], params: AnalysisParams | None = None,
             backend=None) -> list[CoalescedError]:
    params = params or AnalysisParams()
    impl = kernels.load(backend) if backend else kernels
    n = len(events)
    if n == 0:
        return []
    t = np.fromiter((e.timestamp for e in events), dtype=np.int64, count=n)
    check_sorted(t)
    group = _codes([(e.node_id, e.gpu_id, e.pattern_id) for e in events])
    msg = _codes([" ".join(e.message.split()) for e in events])
    order = np.argsort(group, kind="stable")
    chain = impl.coalesce_chains(group[order], msg[order], t[order], float(params.delta_t))

    firsts: dict[int, list[int]] = {}
    for pos, head in enumerate(chain.tolist()):
        entry = firsts.get(head)
        if entry is None:
            firsts[head] = [pos, pos, 1]
        else:
            entry[1] = pos
            entry[2] += 1
    out = []
    for head_pos, last_pos, count in firsts.values():
        idx = int(order[head_pos])
        start = int(t[idx])
        last = int(t[order[last_pos]])
        out.append((start, idx, CoalescedError(events[idx], start, last, last - start, count)))
    out.sort(key=lambda x: (x[0], x[1]))
    return [c for _, _, c in out]


def nearest_rank(sorted_values: Sequence[float], q: float) -> float:
    """Nearest-rank quantile of already sorted values (0 for an empty list)."""
    if not sorted_values:
        return 0
    rank = max(1, math.ceil(q * len(sorted_values)))
    return sorted_values[rank - 1]


@dataclass
class CoalesceSummary:
    count: int = 0
    raw_events: int = 0
    per_type: dict[str, int] = field(default_factory=dict)
    mean_occurrences: float = 0.0
    persistence: dict[str, float] = field(default_factory=dict)


QUANTILES = {"p50": 0.50, "p90": 0.90, "p99": 0.99, "max": 1.0}


def coalesce_stats(coalesced: Sequence[CoalescedError], taxonomy: ErrorTaxonomy | None = None) -> CoalesceSummary:
    if not coalesced:
        return CoalesceSummary(persistence={k: 0 for k in QUANTILES})
    counts = Counter(error_type(c.representative, taxonomy) for c in coalesced)
    pers = sorted(c.persistence for c in coalesced)
    raw = sum(c.occurrences for c in coalesced)
    return CoalesceSummary(
        count=len(coalesced),
        raw_events=raw,
        per_type=dict(sorted(counts.items())),
        mean_occurrences=raw / len(coalesced),
        persistence={k: nearest_rank(pers, q) for k, q in QUANTILES.items()},
    )
