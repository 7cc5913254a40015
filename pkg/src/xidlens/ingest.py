"""Turn raw syslog lines and scheduler accounting rows into typed records."""

from __future__ import annotations

import csv
import heapq
import io
import logging
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from functools import partial
from pathlib import Path
from typing import Iterable, Sequence

from .config import ErrorTaxonomy, PatternSet, default_patterns, default_taxonomy
from .errors import ConfigError, DataError
from .records import ErrorRecord, JobRecord

log = logging.getLogger(__name__)

DEFAULT_LINE_RE = re.compile(r"^(?P<ts>\S+)\s+(?P<node>\S+)\s+(?P<body>.*)$")
DEFAULT_ML_KEYWORDS = ("model", "train", "pytorch", "torch", "tensorflow", "keras", "jax",
                       "huggingface", "transformers", "deepspeed", "megatron", "nccl-tests")


@dataclass
class ParsedLog:
    records: list
    matched: int = 0
    skipped: int = 0
    diagnostics: list[str] = field(default_factory=list)

    @property
    def total(self) -> int:
        return self.matched + self.skipped


def parse_timestamp(token: str) -> int:
    """Integer UTC seconds from an epoch number or an ISO-8601 string.

    Sub-second digits are truncated; naive times are taken as UTC.
    """
    token = token.strip()
    if re.fullmatch(r"\d+(\.\d+)?", token):
        return int(float(token))
    if token.endswith(("Z", "z")):
        token = token[:-1] + "+00:00"
    token = re.sub(r"([T ]\d{2}:\d{2}:\d{2})\.\d+", r"\1", token)
    try:
        dt = datetime.fromisoformat(token)
    except ValueError:
        raise ValueError(f"unparseable timestamp {token!r}") from None
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    seconds = int(dt.timestamp() // 1)
    if seconds < 0:
        raise ValueError(f"timestamp before epoch: {token!r}")
    return seconds


def format_timestamp(seconds: int) -> str:
    return datetime.fromtimestamp(seconds, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def normalize_pci(text: str | None) -> str:
    if not text:
        return ""
    text = text.lower()
    if re.fullmatch(r"[0-9a-f]{4}:[0-9a-f]{2}:[0-9a-f]{2}\.[0-7]", text):
        text = text[:-2]
    return text


def parse_error_log(lines: Iterable[str], patterns: PatternSet | None = None,
                    taxonomy: ErrorTaxonomy | None = None,
                    line_regex: re.Pattern | None = None) -> ParsedLog:
    """Extract GPU error records from syslog lines.

    Lines that match no pattern are skipped silently; matching lines with a bad
    timestamp are skipped with a diagnostic. Records come back sorted by
    timestamp with ties kept in input order.
    """
    patterns = patterns or default_patterns()
    taxonomy = taxonomy or default_taxonomy()
    line_regex = line_regex or DEFAULT_LINE_RE
    out = ParsedLog(records=[])
    for lineno, raw in enumerate(lines, 1):
        line = raw.rstrip("\r\n")
        env = line_regex.match(line) if line else None
        pattern = None
        if env:
            pattern, m = patterns.match(env.group("body"))
        if pattern is None:
            out.skipped += 1
            continue
        groups = m.groupdict()
        xid = pattern.xid
        if groups.get("xid") is not None and xid is not None and int(groups["xid"]) != xid:
            out.skipped += 1
            out.diagnostics.append(f"line {lineno}: pattern {pattern.pattern_id} captured XID {groups['xid']}")
            continue
        try:
            ts = parse_timestamp(env.group("ts"))
        except ValueError as exc:
            out.skipped += 1
            out.diagnostics.append(f"line {lineno}: {exc}")
            continue
        msg = groups.get("msg")
        rec = ErrorRecord(
            timestamp=ts,
            node_id=env.group("node"),
            gpu_id=normalize_pci(groups.get("pci")),
            xid=xid,
            pattern_id=pattern.pattern_id,
            message=patterns.normalize_message(msg if msg is not None else m.group(0)),
            category=pattern.category,
        )
        out.records.append(rec)
        out.matched += 1
    out.records.sort(key=lambda r: r.timestamp)
    for d in out.diagnostics:
        log.debug(d)
    return out


def _parse_file(path: str, patterns=None, taxonomy=None, line_regex=None) -> ParsedLog:
    with open(path, encoding="utf-8", errors="replace") as fh:
        return parse_error_log(fh, patterns, taxonomy, line_regex)


def parse_error_files(paths: Sequence[str | Path], workers: int = 1, patterns: PatternSet | None = None,
                      taxonomy: ErrorTaxonomy | None = None, line_regex: re.Pattern | None = None) -> ParsedLog:
    """Parse several log files and merge them by (timestamp, file, line).

    With ``workers > 1`` files are parsed in separate processes; the merge
    order does not depend on the worker count.
    """
    paths = [str(p) for p in paths]
    job = partial(_parse_file, patterns=patterns, taxonomy=taxonomy, line_regex=line_regex)
    if workers > 1 and len(paths) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(job, paths))
    else:
        parts = [job(p) for p in paths]
    streams = [[((r.timestamp, i, j), r) for j, r in enumerate(part.records)] for i, part in enumerate(parts)]
    merged = ParsedLog(records=[r for _, r in heapq.merge(*streams, key=lambda kr: kr[0])])
    for i, part in enumerate(parts):
        merged.matched += part.matched
        merged.skipped += part.skipped
        merged.diagnostics.extend(f"{paths[i]}: {d}" for d in part.diagnostics)
    return merged


# -- job accounting ----------------------------------------------------------

JOB_COLUMNS = ("job_id", "submit", "start", "end", "nodes", "gpus", "exit", "status", "name", "modules", "zombie")
MANDATORY_JOB_COLUMNS = ("job_id", "start", "end", "nodes", "status")
_ALIASES = {
    "jobid": "job_id", "id": "job_id",
    "nodelist": "nodes", "node_ids": "nodes",
    "exitcode": "exit", "exit_code": "exit",
    "state": "status",
    "jobname": "name",
    "gpu_count": "gpus", "ngpus": "gpus", "alloc_gpus": "gpus", "allocgpus": "gpus",
    "loaded_modules": "modules",
}
_STATUS = {
    "COMPLETED": "completed",
    "FAILED": "failed", "NODE_FAIL": "failed", "OUT_OF_MEMORY": "failed", "BOOT_FAIL": "failed",
    "CANCELLED": "cancelled", "PREEMPTED": "cancelled", "REVOKED": "cancelled",
    "TIMEOUT": "timeout", "DEADLINE": "timeout",
}


def expand_hostlist(text: str) -> list[str]:
    """Expand a Slurm-style host list such as ``gpua[001-003,007],gpub010``."""
    hosts: list[str] = []
    for item in re.findall(r"[^,\s;\[]+(?:\[[^\]]*\][^,\s;\[]*)*", text):
        m = re.fullmatch(r"([^\[]*)\[([^\]]*)\](.*)", item)
        if not m:
            hosts.append(item)
            continue
        prefix, ranges, suffix = m.groups()
        for part in ranges.split(","):
            lo, _, hi = part.partition("-")
            if not hi:
                hosts.extend(expand_hostlist(f"{prefix}{lo}{suffix}"))
                continue
            width = len(lo)
            for n in range(int(lo), int(hi) + 1):
                hosts.extend(expand_hostlist(f"{prefix}{n:0{width}d}{suffix}"))
    return hosts


def _status(text: str) -> str:
    token = text.strip().split()[0].upper() if text.strip() else ""
    if token.lower() in ("completed", "failed", "cancelled", "timeout"):
        return token.lower()
    try:
        return _STATUS[token]
    except KeyError:
        raise ValueError(f"unknown job status {text!r}") from None


def _exit(text: str) -> int:
    text = (text or "0").strip()
    return int(text.split(":")[0]) if text else 0


def _split_list(text: str | None) -> list[str]:
    return [t for t in re.split(r"[;\s,]+", text or "") if t]


def parse_job_log(rows: Iterable[str] | str) -> ParsedLog:
    """Parse a CSV job trace with a header row into :class:`JobRecord` objects.

    Output is sorted by end time. Rows that cannot be parsed, or that violate a
    record invariant such as ``end < start``, are skipped with a diagnostic.
    """
    if isinstance(rows, str):
        rows = io.StringIO(rows)
    reader = csv.reader(rows)
    try:
        header = next(reader)
    except StopIteration:
        return ParsedLog(records=[])
    columns = []
    for h in header:
        key = h.strip().lower()
        columns.append(_ALIASES.get(key, key))
    missing = [c for c in MANDATORY_JOB_COLUMNS if c not in columns]
    if missing:
        raise ConfigError(f"job trace is missing mandatory column(s): {', '.join(missing)}")
    out = ParsedLog(records=[])
    for lineno, row in enumerate(reader, 2):
        if not any(cell.strip() for cell in row):
            continue
        rec = dict(zip(columns, row))
        try:
            start = parse_timestamp(rec["start"])
            end = parse_timestamp(rec["end"])
            nodes = expand_hostlist(rec["nodes"])
            gpus = int(rec.get("gpus") or 0)
            if gpus > 0 and not nodes:
                raise ValueError("GPUs allocated without nodes")
            job = JobRecord(
                job_id=rec["job_id"].strip(),
                submit=parse_timestamp(rec["submit"]) if rec.get("submit") else start,
                start=start,
                end=end,
                node_ids=tuple(nodes),
                gpu_count=gpus,
                exit_code=_exit(rec.get("exit", "0")),
                status=_status(rec["status"]),
                name=rec.get("name", "") or "",
                loaded_modules=tuple(_split_list(rec.get("modules"))),
                zombie=str(rec.get("zombie", "")).strip().lower() in ("1", "true", "yes"),
            )
        except (ValueError, DataError) as exc:
            out.skipped += 1
            out.diagnostics.append(f"row {lineno}: {exc}")
            continue
        out.records.append(job)
        out.matched += 1
    out.records.sort(key=lambda j: j.end)
    return out


def write_job_csv(jobs: Iterable[JobRecord], fh) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(JOB_COLUMNS)
    for j in jobs:
        writer.writerow([j.job_id, j.submit, j.start, j.end, ",".join(j.node_ids), j.gpu_count,
                         j.exit_code, j.status.upper(), j.name, ";".join(j.loaded_modules),
                         "1" if j.zombie else ""])


def classify_ml(job: JobRecord, keywords: Sequence[str] | None = None) -> bool:
    """True if any keyword occurs (case-insensitively) in the job name or modules."""
    keywords = [k.lower() for k in (keywords or DEFAULT_ML_KEYWORDS)]
    haystacks = [job.name.lower(), *(m.lower() for m in job.loaded_modules)]
    return any(k in h for k in keywords for h in haystacks)
