"""Acceptance suite: twelve end-to-end criteria, each at its stated tolerance.

Every criterion prints one PASS/FAIL line (visible under ``pytest -v``).
Run this file directly to print the lines without pytest.
"""

import filecmp
import io
import random
import tempfile
import time
from fractions import Fraction
from pathlib import Path

import pytest

from xidlens import synth
from xidlens.cli import main as cli_main
from xidlens.coalesce import AnalysisParams, coalesce
from xidlens.ingest import format_timestamp, parse_error_log, parse_job_log, write_job_csv
from xidlens.jobimpact import attribute, failure_probability_per_xid
from xidlens.metrics import (AvailabilityInput, availability, count_errors, infer_consecutive_sbe,
                             infer_uncorrectable, mtbe, mtbe_from_per_node, nelson_aalen)
from xidlens.propagation import build_edges
from xidlens.records import ErrorRecord, FleetConfig, JobRecord
from xidlens.simulate import SimConfig, run, sweep_recovery_time

from oracles import brute_coalesce

A100 = FleetConfig("a100", 106, 448, 40, 21480)
H100 = FleetConfig("h100", 152, 608, 96, 3504)

CRITERIA = []


def criterion(num, title):
    def wrap(fn):
        CRITERIA.append((num, title, fn))
        return fn
    return wrap


def _burst_stream(rnd, n):
    t = rnd.randint(0, 100)
    out = []
    for _ in range(n):
        # mostly short gaps so chains form, with occasional long breaks
        t += rnd.choices([0, 1, 2, 3, 4, 5, 6, 9, 60], weights=[6, 8, 6, 5, 4, 4, 3, 2, 2])[0]
        xid = rnd.choice([31, 48])
        out.append(ErrorRecord(t, rnd.choice(["n1", "n2", "n3"]), rnd.choice(["0000:07:00", "0000:27:00"]),
                               xid, f"xid{xid}", rnd.choice(["m", "m", "m", "other"]), "memory"))
    return out


@criterion(1, "coalescing equals brute-force chain enumeration")
def c01():
    rnd = random.Random(20240101)
    t0 = time.perf_counter()
    mismatches = 0
    sizes = 0
    for _ in range(1000):
        events = _burst_stream(rnd, rnd.randint(1, 500))
        sizes += len(events)
        got = [(c.start, c.last, c.occurrences, c.representative) for c in coalesce(events, AnalysisParams(5))]
        want = [(s, l, k, events[i]) for s, l, k, i in brute_coalesce(events, 5)]
        mismatches += got != want
    elapsed = time.perf_counter() - t0
    return mismatches == 0 and elapsed < 60, f"{mismatches} mismatching streams of 1000 ({sizes} events), {elapsed:.1f}s"


@criterion(2, "hand case t={0,4,8,20}, delta 5")
def c02():
    events = [ErrorRecord(t, "n1", "0000:07:00", 48, "xid48", "dbe", "memory") for t in (0, 4, 8, 20)]
    out = coalesce(events, AnalysisParams(5))
    got = [(c.persistence, c.occurrences) for c in out]
    return got == [(8, 3), (0, 1)], f"(persistence, occurrences) = {got}"


@criterion(3, "inferred memory error counts")
def c03():
    got = (infer_uncorrectable(34, 0), infer_consecutive_sbe(34, 1), infer_uncorrectable(16, 8),
           infer_consecutive_sbe(24, 17))
    return got == (34, 33, 24, 7), f"A100 {got[0]}/{got[1]}, H100 {got[2]}/{got[3]}"


@criterion(4, "MTBE normalization")
def c04():
    h = mtbe_from_per_node(22192, H100)
    a = mtbe_from_per_node(66967, A100)
    gpu_err = abs(a.mtbe_per_gpu / 283_271 - 1)
    gb_err = abs(a.mtbe_per_gb / 11_330_826 - 1)
    ratio = a.mtbe_per_gpu / h.mtbe_per_gpu
    ok = h.mtbe_per_gb == 8_521_728 and gpu_err <= 0.005 and gb_err <= 0.005 and 3.1 <= ratio <= 3.3
    return ok, (f"H100 per-GB {h.mtbe_per_gb:,.0f} h; A100 per-GPU {a.mtbe_per_gpu:,.0f} h ({100 * gpu_err:.3f}%), "
                f"per-GB {a.mtbe_per_gb:,.0f} h ({100 * gb_err:.3f}%); ratio {ratio:.3f}")


@criterion(5, "availability formula")
def c05():
    a = 100 * availability(AvailabilityInput(154, 0.88))
    h = 100 * availability(AvailabilityInput(292, 2.2))
    return abs(a - 99.4) <= 0.05 and abs(h - 99.3) <= 0.05, f"A100 {a:.3f}%, H100 {h:.3f}%"


@criterion(6, "MTBE estimator convergence on synthetic Poisson log")
def c06():
    fleet = FleetConfig("syn", 1000, 4000, 96, 1000)
    spec = synth.GenSpec(seed=6, duration_hours=1000, fleet=fleet, per_type_rate={"48": 0.01})
    lines, _ = synth.gen_error_log(spec)
    counts = count_errors(coalesce(parse_error_log(lines).records))
    est = mtbe(counts["48"], fleet).mtbe_per_node
    err = abs(est / 100 - 1)
    return err <= 0.03, f"{counts['48']} errors over 1e6 node-hours, per-node MTBE {est:.2f} h ({100 * err:.2f}% off)"


@criterion(7, "planted propagation probability recovered")
def c07():
    fleet = FleetConfig("syn", 500, 2000, 96, 1000)
    spec = synth.GenSpec(seed=7, duration_hours=1000, fleet=fleet, per_type_rate={"122/123": 0.01, "31": 0.001},
                         planted_edges=(synth.PlantedEdge("122/123", "31", 0.88, (0, 2)),))
    lines, man = synth.gen_error_log(spec)
    co = coalesce(parse_error_log(lines).records)
    edges, terms = build_edges(co)
    src = sum(1 for e in man.events if e["label"] == "122/123")
    p = next(e.probability for e in edges if (e.source_type, e.target_type) == ("122/123", "31"))
    # sums to one on this and on a mixed dataset, both scopes
    worst = 0.0
    mixed = synth.gen_error_log(synth.default_spec(H100, seed=3))[0]
    for stream in (co, coalesce(parse_error_log(mixed).records)):
        for scope in ("intra_gpu", "inter_gpu"):
            e2, t2 = build_edges(stream, scope=scope)
            for t in t2:
                total = t.terminal_probability + sum(e.probability for e in e2 if e.source_type == t.source_type)
                worst = max(worst, abs(total - 1))
    return abs(p - 0.88) <= 0.02 and worst <= 1e-9, f"{src} source events, P = {p:.4f}; max |sum - 1| = {worst:.1e}"


def _table3_trace():
    """Jobs/log text where XID 119 has 31 encountering jobs (all failing) and XID 74 has 80 (43 failing)."""
    lines, jobs = [], []
    epoch = synth.DEFAULT_EPOCH
    k = 0
    for xid, encountering, failing in ((119, 31, 31), (74, 80, 43)):
        for i in range(encountering):
            node = f"gpuh{k:03d}"
            start, end = epoch + 10_000 * k, epoch + 10_000 * k + 3_600
            fails = i < failing
            t_err = end - 12 if fails else start + 600
            lines.append((t_err, f"{format_timestamp(t_err)} {node} kernel: NVRM: Xid (PCI:0000:07:00): {xid}, "
                                 f"pid=1, name=python3, event {xid}"))
            jobs.append(JobRecord(str(k), start, start, end, (node,), 4, 1 if fails else 0,
                                  "failed" if fails else "completed", "job"))
            k += 1
    buf = io.StringIO()
    write_job_csv(jobs, buf)
    return [text for _, text in sorted(lines)], buf.getvalue()


@criterion(8, "per-XID job failure quotient")
def c08():
    log_lines, job_csv = _table3_trace()
    jobs = parse_job_log(job_csv).records
    co = coalesce(parse_error_log(log_lines).records)
    rows = {r.error_type: r for r in failure_probability_per_xid(jobs, attribute(jobs, co), co)}
    got = (rows["119/120"].formatted(), rows["74"].formatted())
    detail = (f"119/120: {rows['119/120'].gpu_failed}/{rows['119/120'].encountering} -> {got[0]}%, "
              f"74: {rows['74'].gpu_failed}/{rows['74'].encountering} -> {got[1]}%")
    return got == ("100.00", "53.75"), detail


@criterion(9, "simulator renewal limit")
def c09():
    cfg = SimConfig(job_gpus=4, gpus_per_node=4, duration_hours=1e6, node_mtbf_hours=100,
                    recovery_time_hours=1, replications=1, seed=9)
    a = run(cfg).achieved_availability
    err = abs(a / (100 / 101) - 1)
    return err <= 0.01, f"availability {a:.6f} vs {100 / 101:.6f} ({100 * err:.3f}% off, {cfg.engine} engine)"


@criterion(10, "spare capacity projection for a 608-GPU month-long job")
def c10():
    cfg = SimConfig(job_gpus=608, gpus_per_node=4, duration_hours=720, node_mtbf_hours=292, replications=100)
    t0 = time.perf_counter()
    slow, fast = sweep_recovery_time(cfg, [2.2, 5 / 60], 0.999)
    elapsed = time.perf_counter() - t0
    if not (slow.reachable and fast.reachable):
        return False, "target unreachable"
    p_slow, p_fast = 100 * slow.fraction, 100 * fast.fraction
    ratio = slow.spare_gpus / fast.spare_gpus if fast.spare_gpus else float("inf")
    ok = abs(p_slow - 5) <= 2 and abs(p_fast - 2) <= 1 and 1.5 <= ratio <= 3.5 and elapsed < 300
    return ok, (f"2.2 h: {slow.spare_gpus} GPUs ({p_slow:.2f}%), 5 min: {fast.spare_gpus} GPUs ({p_fast:.2f}%), "
                f"ratio {ratio:.2f}, {cfg.engine} engine, {elapsed:.1f}s")


@criterion(11, "Nelson-Aalen hand case")
def c11():
    h = nelson_aalen([2, 5], [3, 2])
    want = [0.0, float(Fraction(1, 3)), float(Fraction(5, 6))]
    return h.cumulative == want and h(2) == want[1] and h(5) == want[2], f"H = {h.cumulative[1:]}"


def _pipeline(out: Path):
    out = str(out)
    steps = [["synth", "--seed", "12", "--hours", "240", "--jobs", "300", "--downtime", "25"],
             ["ingest", f"{out}/errors.log", "--jobs", f"{out}/jobs.csv"], ["coalesce"], ["stats"],
             ["propagate"], ["jobs", "--downtime", f"{out}/downtime.csv"],
             ["report", "--downtime", f"{out}/downtime.csv"]]
    return [cli_main(step + ["--out", out]) for step in steps]


def _tree(root: Path):
    return sorted(p.relative_to(root) for p in root.rglob("*") if p.is_file())


@criterion(12, "end-to-end determinism")
def c12():
    with tempfile.TemporaryDirectory() as tmp:
        a, b = Path(tmp, "a"), Path(tmp, "b")
        codes = _pipeline(a) + _pipeline(b)
        files = _tree(a)
        same = files == _tree(b) and all(filecmp.cmp(a / f, b / f, shallow=False) for f in files)
    return same and not any(codes), f"{len(files)} artifacts compared byte for byte, exit codes {set(codes)}"


@pytest.mark.parametrize("num,title,fn", CRITERIA, ids=[f"criterion_{n:02d}" for n, _, _ in CRITERIA])
def test_criterion(num, title, fn, capsys):
    ok, detail = fn()
    with capsys.disabled():
        print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {num:2d} {title}: {detail}")
    assert ok, detail


if __name__ == "__main__":
    for num, title, fn in CRITERIA:
        ok, detail = fn()
        print(f"[{'PASS' if ok else 'FAIL'}] criterion {num:2d} {title}: {detail}")
