"""Typed event records shared by every stage, plus their JSONL interchange."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import IO, Iterable, Iterator

from .errors import ConfigError, DataError

CATEGORIES = ("hardware", "memory", "interconnect", "recovery-event")
JOB_STATUSES = ("completed", "failed", "cancelled", "timeout")


@dataclass(frozen=True)
class ErrorRecord:
    timestamp: int
    node_id: str
    gpu_id: str
    xid: int | None
    pattern_id: str
    message: str
    category: str

    def __post_init__(self):
        if self.timestamp < 0:
            raise DataError(f"negative timestamp {self.timestamp}")
        if not self.node_id:
            raise DataError("node_id must be non-empty")

    @property
    def gpu_key(self) -> tuple[str, str]:
        """GPU identity: node plus PCI bus address."""
        return (self.node_id, self.gpu_id)


@dataclass(frozen=True)
class JobRecord:
    job_id: str
    submit: int
    start: int
    end: int
    node_ids: tuple[str, ...]
    gpu_count: int
    exit_code: int
    status: str
    name: str = ""
    loaded_modules: tuple[str, ...] = ()
    zombie: bool = False

    def __post_init__(self):
        if self.start > self.end:
            raise DataError(f"job {self.job_id}: start {self.start} > end {self.end}")
        if self.gpu_count < 0:
            raise DataError(f"job {self.job_id}: negative gpu_count")
        if self.status not in JOB_STATUSES:
            raise DataError(f"job {self.job_id}: unknown status {self.status!r}")
        object.__setattr__(self, "node_ids", tuple(self.node_ids))
        object.__setattr__(self, "loaded_modules", tuple(self.loaded_modules))

    @property
    def elapsed(self) -> int:
        return self.end - self.start


@dataclass(frozen=True)
class CoalescedError:
    representative: ErrorRecord
    start: int
    last: int
    persistence: int
    occurrences: int

    def __post_init__(self):
        if self.persistence != self.last - self.start or self.persistence < 0:
            raise DataError("persistence must equal last - start and be >= 0")
        if self.occurrences < 1 or (self.occurrences == 1 and self.persistence != 0):
            raise DataError("a single occurrence has zero persistence")


@dataclass(frozen=True)
class FleetConfig:
    fleet_name: str
    node_count: int
    gpus_total: int
    gb_per_gpu: float
    observation_hours: float
    nodes: dict[str, int] | None = field(default=None, compare=False)

    def __post_init__(self):
        for name in ("node_count", "gpus_total", "gb_per_gpu", "observation_hours"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise ConfigError(f"fleet {self.fleet_name!r}: {name} must be positive, got {value}")
        if self.nodes is not None:
            if len(self.nodes) != self.node_count:
                raise ConfigError(f"fleet {self.fleet_name!r}: {len(self.nodes)} nodes listed, node_count={self.node_count}")
            if sum(self.nodes.values()) != self.gpus_total:
                raise ConfigError(f"fleet {self.fleet_name!r}: per-node GPU counts do not sum to gpus_total")

    @property
    def gpus_per_node(self) -> float:
        return self.gpus_total / self.node_count


# -- JSONL interchange -------------------------------------------------------

def _to_obj(record) -> dict:
    obj = asdict(record)
    for key, value in obj.items():
        if isinstance(value, tuple):
            obj[key] = list(value)
    return obj


def dumps(record) -> str:
    return json.dumps(_to_obj(record), separators=(",", ":"), ensure_ascii=False)


def write_jsonl(records: Iterable, dest: str | Path | IO[str]) -> int:
    if isinstance(dest, (str, Path)):
        with open(dest, "w", encoding="utf-8", newline="\n") as fh:
            return write_jsonl(records, fh)
    n = 0
    for rec in records:
        dest.write(dumps(rec))
        dest.write("\n")
        n += 1
    return n


def _iter_objs(src: str | Path | IO[str]) -> Iterator[dict]:
    if isinstance(src, (str, Path)):
        with open(src, encoding="utf-8") as fh:
            yield from _iter_objs(fh)
        return
    for lineno, line in enumerate(src, 1):
        line = line.strip()
        if not line:
            continue
        try:
            yield json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"line {lineno}: invalid JSON ({exc.msg})") from None


def error_from_obj(obj: dict) -> ErrorRecord:
    return ErrorRecord(**{f.name: obj[f.name] for f in fields(ErrorRecord)})


def job_from_obj(obj: dict) -> JobRecord:
    kw = {f.name: obj[f.name] for f in fields(JobRecord) if f.name in obj}
    return JobRecord(**kw)


def coalesced_from_obj(obj: dict) -> CoalescedError:
    return CoalescedError(
        representative=error_from_obj(obj["representative"]),
        start=obj["start"],
        last=obj["last"],
        persistence=obj["persistence"],
        occurrences=obj["occurrences"],
    )


def read_errors(src) -> list[ErrorRecord]:
    return [error_from_obj(o) for o in _iter_objs(src)]


def read_jobs(src) -> list[JobRecord]:
    return [job_from_obj(o) for o in _iter_objs(src)]


def read_coalesced(src) -> list[CoalescedError]:
    return [coalesced_from_obj(o) for o in _iter_objs(src)]
