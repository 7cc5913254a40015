"""Link job failures to GPU errors and summarize job and node-level impact."""

from __future__ import annotations

import bisect
import csv
import io
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

from .coalesce import check_sorted, nearest_rank
from .config import ErrorTaxonomy, default_taxonomy, error_type
from .errors import ConfigError, DataError
from .ingest import classify_ml, parse_timestamp
from .records import ErrorRecord, JobRecord

DEFAULT_BUCKETS = ("1", "2-4", "5-8", "9-32", "33-64", "65-128", "129-256", "257+")


@dataclass(frozen=True)
class AttributionParams:
    window: float = 20.0

    def __post_init__(self):
        if not self.window > 0:
            raise ConfigError(f"window must be > 0, got {self.window}")


@dataclass(frozen=True)
class GpuFailedJob:
    job: JobRecord
    attributed_errors: tuple[ErrorRecord, ...]
    window: float = 20.0

    def __post_init__(self):
        job = self.job
        if job.status != "failed":
            raise DataError(f"job {job.job_id} is {job.status}, not failed")
        for e in self.attributed_errors:
            if not (job.end - self.window <= e.timestamp <= job.end):
                raise DataError(f"job {job.job_id}: error at {e.timestamp} outside window")
            if e.node_id not in job.node_ids:
                raise DataError(f"job {job.job_id}: error on foreign node {e.node_id}")


def _by_node(errors: Sequence, taxonomy: ErrorTaxonomy) -> dict[str, tuple[list[int], list]]:
    recs = [getattr(e, "representative", e) for e in errors]
    times = [getattr(e, "start", None) if hasattr(e, "representative") else e.timestamp for e in errors]
    check_sorted(times, "errors")
    out: dict[str, tuple[list[int], list]] = {}
    for t, r in zip(times, recs):
        if taxonomy.is_excluded(error_type(r, taxonomy)):
            continue
        ts, rs = out.setdefault(r.node_id, ([], []))
        ts.append(t)
        rs.append(r)
    return out


def _errors_between(index, nodes, lo, hi) -> list:
    found = []
    for node in nodes:
        entry = index.get(node)
        if entry is None:
            continue
        ts, rs = entry
        a = bisect.bisect_left(ts, lo)
        b = bisect.bisect_right(ts, hi)
        found.extend(rs[a:b])
    found.sort(key=lambda r: (r.timestamp, r.node_id, r.gpu_id))
    return found


def attribute(jobs: Sequence[JobRecord], errors: Sequence, params: AttributionParams | None = None,
              taxonomy: ErrorTaxonomy | None = None) -> list[GpuFailedJob]:
    """Failed jobs with at least one GPU error on an allocated node shortly before the end.

    The window is clipped to the job's own runtime, so an attributed error is
    always one the job actually encountered. Zombie jobs are skipped.
    """
    params = params or AttributionParams()
    taxonomy = taxonomy or default_taxonomy()
    index = _by_node(errors, taxonomy)
    out = []
    for job in jobs:
        if job.status != "failed" or job.zombie:
            continue
        lo = max(job.start, job.end - params.window)
        hits = _errors_between(index, job.node_ids, lo, job.end)
        if hits:
            out.append(GpuFailedJob(job, tuple(hits), params.window))
    return out


@dataclass(frozen=True)
class FailureRow:
    error_type: str
    gpu_failed: int
    encountering: int

    @property
    def probability(self) -> float | None:
        return self.gpu_failed / self.encountering if self.encountering else None

    def formatted(self) -> str:
        p = self.probability
        return "--" if p is None else f"{100 * p:.2f}"


def failure_probability_per_xid(jobs: Sequence[JobRecord], attributed: Sequence[GpuFailedJob],
                                errors: Sequence, taxonomy: ErrorTaxonomy | None = None,
                                types: Iterable[str] | None = None) -> list[FailureRow]:
    """Per error type: GPU-failed jobs that saw it / jobs that saw it while running.

    A job may appear in several rows when several error types preceded its
    failure, so the rows are not mutually exclusive.
    """
    taxonomy = taxonomy or default_taxonomy()
    index = _by_node(errors, taxonomy)
    encountering: dict[str, set[str]] = defaultdict(set)
    for job in jobs:
        if job.zombie:
            continue
        for r in _errors_between(index, job.node_ids, job.start, job.end):
            encountering[error_type(r, taxonomy)].add(job.job_id)
    failed: dict[str, set[str]] = defaultdict(set)
    for g in attributed:
        for r in g.attributed_errors:
            failed[error_type(r, taxonomy)].add(g.job.job_id)
    if types is None:
        types = [e.label for e in taxonomy if e.xids and not e.excluded]
    labels = list(types) + sorted(set(encountering) - set(types))
    return [FailureRow(label, len(failed[label]), len(encountering[label])) for label in labels]


# -- job size table ----------------------------------------------------------

def _bucket_bounds(label: str) -> tuple[int, float]:
    if label.endswith("+"):
        return int(label[:-1]), float("inf")
    lo, _, hi = label.partition("-")
    return int(lo), int(hi or lo)


@dataclass
class BucketRow:
    bucket: str
    count: int = 0
    share: float = 0.0
    mean_elapsed_min: float = 0.0
    p99_elapsed_min: float = 0.0
    failed: int = 0
    failed_pct: float = 0.0
    ml_gpu_hours: float = 0.0
    non_ml_gpu_hours: float = 0.0


@dataclass
class JobSizeTable:
    rows: list[BucketRow]
    total: int
    excluded: int = 0

    @property
    def gpu_hours(self) -> float:
        return sum(r.ml_gpu_hours + r.non_ml_gpu_hours for r in self.rows)


def job_size_stats(jobs: Sequence[JobRecord], ml_classifier: Callable[[JobRecord], bool] = classify_ml,
                   buckets: Sequence[str] = DEFAULT_BUCKETS) -> JobSizeTable:
    """Bucket jobs by GPU count; jobs without GPUs are counted as excluded."""
    bounds = [_bucket_bounds(b) for b in buckets]
    elapsed: dict[str, list[float]] = {b: [] for b in buckets}
    rows = {b: BucketRow(b) for b in buckets}
    excluded = 0
    for job in jobs:
        label = next((b for b, (lo, hi) in zip(buckets, bounds) if lo <= job.gpu_count <= hi), None)
        if label is None:
            excluded += 1
            continue
        row = rows[label]
        minutes = job.elapsed / 60.0
        elapsed[label].append(minutes)
        row.count += 1
        row.failed += job.status == "failed"
        hours = job.gpu_count * job.elapsed / 3600.0
        if ml_classifier(job):
            row.ml_gpu_hours += hours
        else:
            row.non_ml_gpu_hours += hours
    total = sum(r.count for r in rows.values())
    for label, row in rows.items():
        if row.count:
            vals = sorted(elapsed[label])
            row.share = row.count / total
            row.mean_elapsed_min = sum(vals) / len(vals)
            row.p99_elapsed_min = nearest_rank(vals, 0.99)
            row.failed_pct = row.failed / row.count
    return JobSizeTable([rows[b] for b in buckets], total, excluded)


# -- downtime ----------------------------------------------------------------

@dataclass(frozen=True)
class DowntimeInterval:
    node_id: str
    start: int
    end: int
    cause: str = ""
    estimated: bool = False

    def __post_init__(self):
        if self.end < self.start:
            raise DataError(f"downtime on {self.node_id}: end before start")

    @property
    def hours(self) -> float:
        return (self.end - self.start) / 3600.0


@dataclass
class DowntimeStats:
    count: int
    mean_hours: float
    total_hours: float
    quantiles: dict[str, float] = field(default_factory=dict)


def downtime_stats(intervals: Sequence[DowntimeInterval]) -> DowntimeStats:
    hours = sorted(i.hours for i in intervals)
    if not hours:
        return DowntimeStats(0, 0.0, 0.0, {"p50": 0.0, "p90": 0.0, "p99": 0.0, "max": 0.0})
    total = sum(hours)
    return DowntimeStats(
        count=len(hours),
        mean_hours=total / len(hours),
        total_hours=total,
        quantiles={k: nearest_rank(hours, q) for k, q in (("p50", .5), ("p90", .9), ("p99", .99), ("max", 1.0))},
    )


def parse_downtime_csv(text: str | Iterable[str]) -> list[DowntimeInterval]:
    """Node-state records with columns node_id,start,end[,cause]."""
    reader = csv.DictReader(io.StringIO(text) if isinstance(text, str) else text)
    missing = {"node_id", "start", "end"} - set(reader.fieldnames or ())
    if missing:
        raise ConfigError(f"downtime records missing column(s): {', '.join(sorted(missing))}")
    out = []
    for row in reader:
        out.append(DowntimeInterval(row["node_id"], parse_timestamp(row["start"]),
                                    parse_timestamp(row["end"]), row.get("cause") or ""))
    return out


def reconstruct_downtime(errors: Sequence, jobs: Sequence[JobRecord],
                         taxonomy: ErrorTaxonomy | None = None) -> list[DowntimeInterval]:
    """Estimate node downtime when no node-state records exist.

    Each interval runs from the first reset-requiring error on a node to the
    next job start on that node; later errors inside it are absorbed. Errors
    with no subsequent job are censored and produce no interval.
    """
    taxonomy = taxonomy or default_taxonomy()
    starts: dict[str, list[int]] = defaultdict(list)
    for job in jobs:
        for node in job.node_ids:
            starts[node].append(job.start)
    for v in starts.values():
        v.sort()
    out = []
    busy_until: dict[str, int] = {}
    for item in errors:
        rec = getattr(item, "representative", item)
        t = item.start if rec is not item else rec.timestamp
        label = error_type(rec, taxonomy)
        entry = taxonomy.entries.get(label)
        if entry is None or not entry.requires_reset:
            continue
        if t < busy_until.get(rec.node_id, -1):
            continue
        node_starts = starts.get(rec.node_id, [])
        k = bisect.bisect_right(node_starts, t)
        if k == len(node_starts):
            busy_until[rec.node_id] = float("inf")
            continue
        out.append(DowntimeInterval(rec.node_id, t, node_starts[k], label, estimated=True))
        busy_until[rec.node_id] = node_starts[k]
    return out
