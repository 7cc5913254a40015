import pytest
from hypothesis import given, settings, strategies as st

from xidlens import synth
from xidlens.coalesce import coalesce
from xidlens.errors import ConfigError, DataError
from xidlens.ingest import parse_error_log, parse_job_log
from xidlens.jobimpact import (AttributionParams, DowntimeInterval, GpuFailedJob, attribute, downtime_stats,
                               failure_probability_per_xid, job_size_stats, parse_downtime_csv,
                               reconstruct_downtime)
from xidlens.records import FleetConfig, JobRecord

from oracles import rec


def job(jid, start, end, nodes=("n1",), status="failed", gpus=1, name="", zombie=False):
    return JobRecord(jid, start, start, end, tuple(nodes), gpus, 1 if status == "failed" else 0, status,
                     name, (), zombie)


def test_attribution_window():
    jobs = [job("a", 0, 1000)]
    assert len(attribute(jobs, [rec(990)])) == 1
    assert attribute(jobs, [rec(975)]) == []
    assert attribute(jobs, [rec(990, node="other")]) == []
    assert attribute([job("b", 0, 1000, status="completed")], [rec(990)]) == []
    assert attribute([job("c", 0, 1000, zombie=True)], [rec(990)]) == []


def test_attribution_clipped_to_runtime():
    # error before the job started is not one the job ran into
    assert attribute([job("a", 995, 1000)], [rec(990)]) == []


def test_excluded_errors_ignored():
    assert attribute([job("a", 0, 1000)], [rec(995, xid=13)]) == []


def test_gpu_failed_job_invariants():
    with pytest.raises(DataError):
        GpuFailedJob(job("a", 0, 1000), (rec(900),))
    with pytest.raises(DataError):
        GpuFailedJob(job("a", 0, 1000, status="completed"), ())
    with pytest.raises(ConfigError):
        AttributionParams(0)


def test_failure_probability_rows():
    jobs = [job("a", 0, 1000), job("b", 0, 500, status="completed"), job("c", 0, 2000, nodes=("n2",))]
    errors = coalesce([rec(490, xid=74), rec(995, xid=74, gpu="g2"), rec(1999, node="n2", xid=74)])
    att = attribute(jobs, errors)
    rows = {r.error_type: r for r in failure_probability_per_xid(jobs, att, errors)}
    assert (rows["74"].gpu_failed, rows["74"].encountering) == (2, 3)
    assert rows["48"].formatted() == "--"
    assert rows["74"].formatted() == "66.67"


def test_table3_quotients():
    def trace(encountering, failing):
        jobs, events = [], []
        for k in range(encountering):
            start, end = 10_000 * k, 10_000 * k + 5_000
            node = f"n{k}"
            if k < failing:
                jobs.append(job(str(k), start, end, (node,)))
                events.append(rec(end - 10, node=node, xid=74))
            else:
                jobs.append(job(str(k), start, end, (node,), status="completed"))
                events.append(rec(start + 100, node=node, xid=74))
        events.sort(key=lambda e: e.timestamp)
        co = coalesce(events)
        rows = {r.error_type: r for r in failure_probability_per_xid(jobs, attribute(jobs, co), co)}
        return rows["74"].formatted()
    assert trace(31, 31) == "100.00"
    assert trace(80, 43) == "53.75"


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3000), st.sampled_from(["n1", "n2"])), max_size=30),
       st.integers(1, 60), st.integers(0, 60))
def test_window_monotone_and_bounds(errs, w, extra):
    errors = sorted((rec(t, node=n) for t, n in errs), key=lambda e: e.timestamp)
    jobs = [job(str(i), 100 * i, 100 * i + 400, ("n1",) if i % 2 else ("n2",)) for i in range(25)]
    small = {g.job.job_id for g in attribute(jobs, errors, AttributionParams(w))}
    big = {g.job.job_id for g in attribute(jobs, errors, AttributionParams(w + extra))}
    assert small <= big
    att = attribute(jobs, errors, AttributionParams(w))
    for r in failure_probability_per_xid(jobs, att, errors):
        assert r.gpu_failed <= r.encountering
        assert r.probability is None or 0 <= r.probability <= 1


def test_job_size_single_job():
    table = job_size_stats([job("a", 0, 3600, status="completed", gpus=2)])
    row = next(r for r in table.rows if r.bucket == "2-4")
    assert (row.count, row.mean_elapsed_min, row.failed_pct) == (1, 60.0, 0.0)
    assert table.total == 1 and table.gpu_hours == 2.0


def test_job_size_sums_and_zero_gpu():
    jobs = [job(str(g), 0, 60 * g + 60, gpus=g, name="train" if g % 2 else "") for g in range(0, 300, 7)]
    table = job_size_stats(jobs)
    assert table.excluded == 1
    assert sum(r.count for r in table.rows) == table.total == len(jobs) - 1
    total_hours = sum(j.gpu_count * j.elapsed / 3600 for j in jobs)
    assert table.gpu_hours == pytest.approx(total_hours)


def test_downtime_stats():
    ivs = [DowntimeInterval("n", 0, 3600), DowntimeInterval("n", 0, 3 * 3600)]
    st_ = downtime_stats(ivs)
    assert (st_.mean_hours, st_.total_hours) == (2.0, 4.0)
    assert downtime_stats([]).count == 0
    with pytest.raises(DataError):
        DowntimeInterval("n", 5, 1)


def test_parse_downtime_csv():
    ivs = parse_downtime_csv("node_id,start,end,cause\nn1,0,7200,reset\n")
    assert ivs[0].hours == 2 and ivs[0].cause == "reset"
    with pytest.raises(ConfigError):
        parse_downtime_csv("node,start\n")


def test_planted_lognormal_downtime():
    fleet = FleetConfig("h", 20, 80, 96, 10_000)
    ivs = parse_downtime_csv(synth.gen_downtime(3, fleet, 2000, 2.2, sigma=0.8))
    hours = [i.hours for i in ivs]
    import statistics
    sd = statistics.pstdev(hours) / len(hours) ** 0.5
    assert downtime_stats(ivs).mean_hours == pytest.approx(2.2, abs=3 * sd + 1e-3)


def test_reconstruct_downtime():
    jobs = [job("a", 0, 100), job("b", 500, 900, status="completed"), job("c", 2000, 2100, status="completed")]
    errors = coalesce([rec(100, xid=79, category="hardware"), rec(200, xid=79, category="hardware", gpu="z"),
                       rec(950, xid=31, category="hardware")])
    ivs = reconstruct_downtime(errors, jobs)
    assert [(i.start, i.end, i.estimated) for i in ivs] == [(100, 500, True)]


def test_synthetic_trace_recall_precision():
    fleet = FleetConfig("h", 40, 160, 96, 2000)
    spec = synth.GenSpec(seed=5, duration_hours=720, fleet=fleet,
                         per_type_rate={"31": 0.03, "74": 0.02, "13": 0.02},
                         job_spec=synth.JobSpec(n_jobs=400, failure_prob=0.0, coupling_fraction=1.0, window=20))
    lines, man = synth.gen_error_log(spec)
    text, man = synth.gen_job_trace(spec, man)
    jobs = parse_job_log(text).records
    att = attribute(jobs, coalesce(parse_error_log(lines).records))
    got = {g.job.job_id for g in att}
    assert man.gpu_failed_jobs and got == set(man.gpu_failed_jobs)


def test_zero_coupling_plants_nothing():
    fleet = FleetConfig("h", 10, 40, 96, 100)
    spec = synth.GenSpec(seed=1, duration_hours=100, fleet=fleet, per_type_rate={"31": 0.05},
                         job_spec=synth.JobSpec(n_jobs=100, coupling_fraction=0.0))
    _, man = synth.gen_error_log(spec)
    assert synth.gen_job_trace(spec, man)[1].gpu_failed_jobs == []
