"""Command-line entry point: ``xidlens <subcommand> [options]``.

Stages talk through files in the output directory (JSONL for records, CSV
and JSON for tables), so every intermediate result can be inspected or fed
to another tool. Artifacts never embed wall-clock time, which keeps repeated
runs byte-identical.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .coalesce import AnalysisParams, coalesce, coalesce_stats
from .config import PipelineConfig, error_type, load_config
from .errors import DataError, UsageError, XidlensError
from .ingest import classify_ml, parse_error_files, parse_job_log
from .jobimpact import (AttributionParams, attribute, downtime_stats, failure_probability_per_xid,
                        job_size_stats, parse_downtime_csv, reconstruct_downtime)
from .metrics import DBE, RRE, RRF, count_errors, fleet_hazard, mtbe, with_inferred
from .propagation import SCOPES, build_edges, emit_graph, multi_gpu_involvement
from .records import read_coalesced, read_errors, read_jobs, write_jsonl
from .simulate import SimConfig, required_overprovision, run, sweep_recovery_time
from . import synth

log = logging.getLogger("xidlens")


# -- small I/O helpers -------------------------------------------------------

def _fmt(value, digits=2) -> str:
    return "--" if value is None else f"{value:.{digits}f}"


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _need(path: Path) -> Path:
    if not path.exists():
        raise DataError(f"input not found: {path}")
    return path


def _load_jobs(path: Path, cfg: PipelineConfig):
    _need(path)
    if path.suffix == ".jsonl":
        return read_jobs(path)
    parsed = parse_job_log(path.read_text(encoding="utf-8"))
    for d in parsed.diagnostics:
        log.warning("%s: %s", path, d)
    return parsed.records


def _ml(cfg: PipelineConfig):
    return lambda job: classify_ml(job, cfg.ml_keywords)


def _label(cfg: PipelineConfig, label: str) -> str:
    entry = cfg.taxonomy.entries.get(label)
    return f"{label}: {entry.abbreviation}" if entry else label


# -- table builders (shared by the stage commands and `report`) --------------

TABLE1_HEADER = ("event", "abbreviation", "category", "count",
                 "mtbe_system_h", "mtbe_node_h", "mtbe_gpu_h", "mtbe_gb_h")


def table1(coalesced, cfg: PipelineConfig) -> tuple[list[list], dict]:
    fleet = cfg.fleet_config
    counts = count_errors(coalesced, cfg.taxonomy)
    if any(k in counts for k in (RRE, RRF, DBE)):
        counts = with_inferred(counts)
    order = [e.label for e in cfg.taxonomy if e.label in counts]
    order += sorted(set(counts) - set(order))
    rows, doc_rows = [], []
    for label in order:
        entry = cfg.taxonomy.entries.get(label)
        m = mtbe(counts[label], fleet, label)
        abbr, cat = (entry.abbreviation, entry.category) if entry else ("", "")
        rows.append([label, abbr, cat, m.count, _fmt(m.mtbe_system), _fmt(m.mtbe_per_node),
                     _fmt(m.mtbe_per_gpu), _fmt(m.mtbe_per_gb)])
        doc_rows.append({"event": label, "abbreviation": abbr, "category": cat, "count": m.count,
                         "inferred": bool(entry and entry.inferred),
                         "mtbe_system_h": m.mtbe_system, "mtbe_node_h": m.mtbe_per_node,
                         "mtbe_gpu_h": m.mtbe_per_gpu, "mtbe_gb_h": m.mtbe_per_gb})
    observed = sum(c for label, c in counts.items()
                   if not (label in cfg.taxonomy and cfg.taxonomy[label].inferred))
    if observed:
        m = mtbe(observed, fleet, "total")
        rows.append(["total", "", "", observed, _fmt(m.mtbe_system), _fmt(m.mtbe_per_node),
                     _fmt(m.mtbe_per_gpu), _fmt(m.mtbe_per_gb)])
    hazard = fleet_hazard([c for c in coalesced if not cfg.taxonomy.is_excluded(
        error_type(c.representative, cfg.taxonomy))], fleet)
    doc = {
        "fleet": {"name": fleet.fleet_name, "nodes": fleet.node_count, "gpus": fleet.gpus_total,
                  "gb_per_gpu": fleet.gb_per_gpu, "observation_hours": fleet.observation_hours},
        "delta_t": cfg.delta_t,
        "rows": doc_rows,
        "total": observed,
        "hazard_rate_per_node_hour": hazard.rate(),
    }
    return rows, doc


def write_table1(coalesced, cfg: PipelineConfig, out: Path) -> None:
    rows, doc = table1(coalesced, cfg)
    _write_csv(out / "table1.csv", TABLE1_HEADER, rows)
    _write_json(out / "table1.json", doc)


def write_propagation(coalesced, cfg: PipelineConfig, out: Path, formats=("dot", "json")) -> dict:
    params = AnalysisParams(cfg.delta_t)
    rows = []
    summary = {}
    for scope in SCOPES:
        edges, terminals = build_edges(coalesced, params, scope, cfg.taxonomy)
        labels = {n: _label(cfg, n) for n in {e.source_type for e in edges} | {e.target_type for e in edges}
                  | {t.source_type for t in terminals}}
        for fmt in formats:
            text = emit_graph(edges, terminals, fmt, labels=labels, name=f"propagation_{scope}")
            (out / f"propagation_{scope}.{fmt}").write_text(text, encoding="utf-8")
        for e in edges:
            rows.append([scope, e.source_type, e.target_type, e.count, f"{e.probability:.6f}",
                         f"{e.mean_propagation_time:.3f}", e.propagation_times["p50"], e.propagation_times["max"]])
        for t in terminals:
            rows.append([scope, t.source_type, "terminal", t.terminal_count, f"{t.terminal_probability:.6f}",
                         "", "", ""])
        summary[scope] = len(edges)
    _write_csv(out / "edges.csv", ("scope", "source", "target", "count", "probability",
                                   "mean_seconds", "p50_seconds", "max_seconds"), rows)
    inv = multi_gpu_involvement(coalesced, params, taxonomy=cfg.taxonomy)
    _write_json(out / "involvement.json", {
        "incidents": inv.incidents, "multi_gpu": inv.multi_gpu, "three_plus": inv.three_plus,
        "fraction_multi": inv.fraction_multi, "three_plus_given_multi": inv.three_plus_given_multi,
        "delta_t": cfg.delta_t})
    return summary


def write_job_tables(jobs, coalesced, cfg: PipelineConfig, out: Path, downtime: Path | None = None) -> dict:
    tax = cfg.taxonomy
    attributed = attribute(jobs, coalesced, AttributionParams(cfg.window), tax)
    rows = failure_probability_per_xid(jobs, attributed, coalesced, tax)
    _write_csv(out / "table3.csv", ("error_type", "abbreviation", "gpu_failed_jobs", "encountering_jobs",
                                    "failure_probability_pct"),
               [[r.error_type, tax[r.error_type].abbreviation if r.error_type in tax else "",
                 r.gpu_failed, r.encountering, r.formatted()] for r in rows])
    sizes = job_size_stats(jobs, _ml(cfg), cfg.buckets)
    _write_csv(out / "table4.csv", ("bucket", "jobs", "share_pct", "mean_elapsed_min", "p99_elapsed_min",
                                    "failed_pct", "ml_gpu_hours", "non_ml_gpu_hours"),
               [[b.bucket, b.count, _fmt(100 * b.share), _fmt(b.mean_elapsed_min), _fmt(b.p99_elapsed_min),
                 _fmt(100 * b.failed_pct), _fmt(b.ml_gpu_hours), _fmt(b.non_ml_gpu_hours)] for b in sizes.rows])
    with open(out / "attribution.jsonl", "w", encoding="utf-8", newline="\n") as fh:
        for g in attributed:
            fh.write(json.dumps({
                "job_id": g.job.job_id, "end": g.job.end, "window": g.window, "nodes": list(g.job.node_ids),
                "errors": [{"timestamp": e.timestamp, "node_id": e.node_id, "gpu_id": e.gpu_id,
                            "type": error_type(e, tax)} for e in g.attributed_errors],
            }, sort_keys=True) + "\n")
    if downtime is not None:
        intervals = parse_downtime_csv(_need(downtime).read_text(encoding="utf-8"))
    else:
        intervals = reconstruct_downtime(coalesced, jobs, tax)
    st = downtime_stats(intervals)
    _write_json(out / "downtime.json", {
        "count": st.count, "mean_hours": st.mean_hours, "total_node_hours": st.total_hours,
        "quantiles_hours": st.quantiles, "estimated": downtime is None})
    return {"jobs": len(jobs), "failed": sum(j.status == "failed" for j in jobs),
            "gpu_failed": len(attributed), "excluded_no_gpu": sizes.excluded}


# -- subcommands -------------------------------------------------------------

def cmd_synth(args, cfg: PipelineConfig, out: Path) -> int:
    seed = 0 if args.seed is None else args.seed
    spec = synth.default_spec(cfg.fleet_config, seed, args.hours)
    spec = replace(spec, job_spec=replace(spec.job_spec, n_jobs=args.jobs, window=int(cfg.window)))
    lines, manifest = synth.gen_error_log(spec, cfg.taxonomy)
    (out / "errors.log").write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    jobs_csv, manifest = synth.gen_job_trace(spec, manifest, cfg.taxonomy)
    (out / "jobs.csv").write_text(jobs_csv, encoding="utf-8")
    (out / "manifest.jsonl").write_text(manifest.to_jsonl(), encoding="utf-8")
    if args.downtime:
        text = synth.gen_downtime(seed, cfg.fleet_config, args.downtime, args.downtime_mean, epoch=spec.epoch)
        (out / "downtime.csv").write_text(text, encoding="utf-8")
    print(f"synth: {len(lines)} log lines, {len(manifest.events)} base errors, "
          f"{manifest.jobs} jobs (seed {seed}) -> {out}")
    return 0


def cmd_ingest(args, cfg: PipelineConfig, out: Path) -> int:
    paths = [_need(Path(p)) for p in args.logs]
    parsed = parse_error_files(paths, args.workers, cfg.patterns, cfg.taxonomy, cfg.line_regex)
    for d in parsed.diagnostics:
        log.warning(d)
    write_jsonl(parsed.records, out / "errors.jsonl")
    msg = f"ingest: {parsed.matched} error records, {parsed.skipped} lines skipped"
    if args.jobs:
        jobs = _load_jobs(Path(args.jobs), cfg)
        write_jsonl(jobs, out / "jobs.jsonl")
        msg += f", {len(jobs)} jobs"
    print(msg)
    return 0


def cmd_coalesce(args, cfg: PipelineConfig, out: Path) -> int:
    src = Path(args.input) if args.input else out / "errors.jsonl"
    events = read_errors(_need(src))
    merged = coalesce(events, AnalysisParams(cfg.delta_t))
    write_jsonl(merged, out / "coalesced.jsonl")
    s = coalesce_stats(merged, cfg.taxonomy)
    _write_json(out / "coalesce_summary.json", {
        "delta_t": cfg.delta_t, "coalesced": s.count, "raw_events": s.raw_events, "per_type": s.per_type,
        "mean_occurrences": s.mean_occurrences, "persistence_seconds": s.persistence})
    print(f"coalesce: {len(events)} records -> {len(merged)} errors (delta_t={cfg.delta_t:g}s)")
    return 0


def _coalesced_input(args, out: Path):
    src = Path(args.input) if args.input else out / "coalesced.jsonl"
    return read_coalesced(_need(src))


def cmd_stats(args, cfg: PipelineConfig, out: Path) -> int:
    co = _coalesced_input(args, out)
    write_table1(co, cfg, out)
    print(f"stats: {len(co)} coalesced errors, fleet {cfg.fleet}")
    return 0


def cmd_propagate(args, cfg: PipelineConfig, out: Path) -> int:
    co = _coalesced_input(args, out)
    formats = ("dot", "json") if args.format == "both" else (args.format,)
    summary = write_propagation(co, cfg, out, formats)
    print("propagate: " + ", ".join(f"{k} {v} edges" for k, v in summary.items()))
    return 0


def cmd_jobs(args, cfg: PipelineConfig, out: Path) -> int:
    jobs = _load_jobs(Path(args.jobs) if args.jobs else out / "jobs.jsonl", cfg)
    co = _coalesced_input(args, out)
    s = write_job_tables(jobs, co, cfg, out, Path(args.downtime) if args.downtime else None)
    print(f"jobs: {s['jobs']} jobs, {s['failed']} failed, {s['gpu_failed']} GPU-failed (window={cfg.window:g}s)")
    return 0


def _sim_config(args, cfg: PipelineConfig) -> tuple[SimConfig, dict]:
    table = dict(cfg.simulate)
    extra = {k: table.pop(k) for k in ("target", "cost_per_gpu_hour") if k in table}
    flags = {"job_gpus": args.gpus, "gpus_per_node": args.gpus_per_node, "duration_hours": args.hours,
             "node_mtbf_hours": args.mtbf, "recovery_time_hours": args.recovery, "spare_gpus": args.spares,
             "seed": args.seed, "replications": args.replications, "engine": args.engine,
             "tick_hours": args.tick, "recovery_dist": args.recovery_dist}
    table.update({k: v for k, v in flags.items() if v is not None})
    try:
        return SimConfig(**table), extra
    except TypeError as exc:
        raise UsageError(f"[simulate] section: {exc}") from None


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None


def cmd_simulate(args, cfg: PipelineConfig, out: Path) -> int:
    sc, extra = _sim_config(args, cfg)
    rate = args.cost if args.cost is not None else extra.get("cost_per_gpu_hour", 0.0)
    target = args.target if args.target is not None else extra.get("target", 0.999)
    if args.sweep:
        results = sweep_recovery_time(sc, _floats(args.sweep), target)
        _write_csv(out / "sweep.csv", ("recovery_hours", "spare_nodes", "spare_gpus", "overprovision_pct",
                                       "availability", "reachable", "spare_cost", "seed"),
                   [[f"{r.recovery_time_hours:g}", r.spare_nodes if r.reachable else "",
                     r.spare_gpus if r.reachable else "", _fmt(None if r.fraction is None else 100 * r.fraction),
                     f"{r.availability:.6f}", r.reachable, _fmt(r.cost(rate)), r.seed] for r in results])
        for r in results:
            print(f"recovery {r.recovery_time_hours:g} h: "
                  + (f"{r.spare_gpus} spare GPUs ({100 * r.fraction:.2f}%)" if r.reachable else "unreachable"))
        return 0
    if args.target is not None:
        r = required_overprovision(sc, target)
        doc = r.to_dict()
        doc.update(engine=sc.engine, replications=sc.replications, node_mtbf_hours=sc.node_mtbf_hours,
                   spare_cost=r.cost(rate), cost_per_gpu_hour=rate)
        _write_json(out / "overprovision.json", doc)
        if r.reachable:
            print(f"simulate: {r.spare_gpus} spare GPUs ({r.spare_nodes} nodes, {100 * r.fraction:.2f}%) "
                  f"reach availability {r.availability:.5f} >= {target} (seed {r.seed})")
        else:
            print(f"simulate: target {target} unreachable (best {r.availability:.5f}, seed {r.seed})")
        return 0
    res = run(sc)
    doc = res.to_dict()
    doc["config"] = {k: getattr(sc, k) for k in sc.__dataclass_fields__}
    _write_json(out / "run.json", doc)
    print(f"simulate: availability {res.achieved_availability:.5f} +/- {res.half_width:.5f} "
          f"with {res.spare_nodes} spare nodes (seed {res.seed})")
    return 0


def cmd_report(args, cfg: PipelineConfig, out: Path) -> int:
    co = _coalesced_input(args, out)
    dest = Path(args.report_dir) if args.report_dir else out / "report"
    dest.mkdir(parents=True, exist_ok=True)
    write_table1(co, cfg, dest)
    write_propagation(co, cfg, dest)
    files = ["table1.csv", "table1.json", "edges.csv", "involvement.json"]
    files += [f"propagation_{s}.{f}" for s in SCOPES for f in ("dot", "json")]
    jobs_path = Path(args.jobs) if args.jobs else out / "jobs.jsonl"
    job_summary = None
    if jobs_path.exists():
        jobs = _load_jobs(jobs_path, cfg)
        job_summary = write_job_tables(jobs, co, cfg, dest, Path(args.downtime) if args.downtime else None)
        files += ["table3.csv", "table4.csv", "attribution.jsonl", "downtime.json"]
    else:
        log.warning("no job records at %s; skipping job tables", jobs_path)
    _write_json(dest / "summary.json", {
        "version": __version__, "fleet": cfg.fleet, "delta_t": cfg.delta_t, "window": cfg.window,
        "coalesced_errors": len(co), "jobs": job_summary, "files": sorted(files)})
    print(f"report: {len(files) + 1} files -> {dest}")
    return 0


COMMANDS = {
    "synth": cmd_synth, "ingest": cmd_ingest, "coalesce": cmd_coalesce, "stats": cmd_stats,
    "propagate": cmd_propagate, "jobs": cmd_jobs, "simulate": cmd_simulate, "report": cmd_report,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        if self.prog == "xidlens":
            self.print_help(sys.stderr)
        else:
            self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML config merged over the packaged defaults")
    common.add_argument("--fleet", help="fleet section to use (e.g. a100, h100)")
    common.add_argument("--delta-t", type=float, help="coalescing/propagation window in seconds (default 5)")
    common.add_argument("--window", type=float, help="job attribution window in seconds (default 20)")
    common.add_argument("--seed", type=int, help="random seed for synth and simulate")
    common.add_argument("--out", help="output directory (default ./out)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="xidlens", description="GPU error log analysis and resilience projections.")
    p.add_argument("--version", action="version", version=f"xidlens {__version__}")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic error log, job trace and manifest")
    s.add_argument("--hours", type=float, help="log duration (default: min(fleet window, 720 h))")
    s.add_argument("--jobs", type=int, default=500)
    s.add_argument("--downtime", type=int, default=0, help="also write this many node outages")
    s.add_argument("--downtime-mean", type=float, default=2.2, help="mean outage hours")

    s = sub.add_parser("ingest", parents=[common], help="parse syslog files (and a job CSV) into JSONL")
    s.add_argument("logs", nargs="+")
    s.add_argument("--jobs", help="job accounting CSV")
    s.add_argument("--workers", type=int, default=1)

    s = sub.add_parser("coalesce", parents=[common], help="merge error bursts")
    s.add_argument("input", nargs="?", help="error JSONL (default OUT/errors.jsonl)")

    s = sub.add_parser("stats", parents=[common], help="error counts and MTBE table")
    s.add_argument("input", nargs="?", help="coalesced JSONL (default OUT/coalesced.jsonl)")

    s = sub.add_parser("propagate", parents=[common], help="propagation edges and graphs")
    s.add_argument("input", nargs="?", help="coalesced JSONL (default OUT/coalesced.jsonl)")
    s.add_argument("--format", choices=("dot", "json", "both"), default="both")

    s = sub.add_parser("jobs", parents=[common], help="job failure attribution and job-size table")
    s.add_argument("input", nargs="?", help="coalesced JSONL (default OUT/coalesced.jsonl)")
    s.add_argument("--jobs", help="job CSV or JSONL (default OUT/jobs.jsonl)")
    s.add_argument("--downtime", help="node-state CSV (node_id,start,end[,cause])")

    s = sub.add_parser("simulate", parents=[common], help="job availability and spare capacity")
    s.add_argument("--gpus", type=int, help="GPUs used by the job")
    s.add_argument("--gpus-per-node", type=int)
    s.add_argument("--hours", type=float, help="job duration")
    s.add_argument("--mtbf", type=float, help="per-node MTBF in hours")
    s.add_argument("--recovery", type=float, help="recovery time in hours")
    s.add_argument("--recovery-dist", choices=("constant", "exponential", "lognormal"))
    s.add_argument("--spares", type=int, help="spare GPUs for a single run")
    s.add_argument("--replications", type=int)
    s.add_argument("--engine", choices=("tick", "event"))
    s.add_argument("--tick", type=float, help="tick length in hours for the tick engine")
    s.add_argument("--target", type=float, help="search the spares needed for this availability")
    s.add_argument("--sweep", help="comma-separated recovery times (hours) to sweep")
    s.add_argument("--cost", type=float, help="cost per spare GPU-hour")

    s = sub.add_parser("report", parents=[common], help="write all tables and graphs into one directory")
    s.add_argument("input", nargs="?", help="coalesced JSONL (default OUT/coalesced.jsonl)")
    s.add_argument("--jobs", help="job CSV or JSONL (default OUT/jobs.jsonl)")
    s.add_argument("--downtime", help="node-state CSV")
    s.add_argument("--report-dir", help="destination (default OUT/report)")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            parser.print_help(sys.stderr)
            return UsageError.exit_code
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                            format="%(levelname)s: %(message)s")
        cfg = load_config(args.config, fleet=args.fleet, delta_t=args.delta_t, window=args.window, out=args.out)
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](args, cfg, out)
    except XidlensError as exc:
        print(f"xidlens: error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
