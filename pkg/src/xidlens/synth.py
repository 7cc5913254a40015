"""Synthetic fleet logs and job traces with a ground-truth manifest.

Errors arrive as independent Poisson processes per node and error type.
Planted edges add follow-up errors after a source error, fan-out copies
spread an error to other GPUs of the node, and bursts repeat a line a few
seconds apart. The manifest records the ground truth *before* burst
duplication, so every estimator can be checked against known values.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .config import ErrorTaxonomy, default_taxonomy
from .errors import ConfigError
from .ingest import format_timestamp, write_job_csv
from .records import FleetConfig, JobRecord

DEFAULT_EPOCH = 1727740800  # 2024-10-01T00:00:00Z

MESSAGES = {
    13: "Graphics SM Warp Exception on (GPC 0, TPC 0, SM 0): Out Of Range Address",
    31: "MMU Fault: ENGINE GRAPHICS GPCCLIENT_T1_0 faulted @ {addr}. Fault is of type FAULT_PDE ACCESS_TYPE_VIRT_READ",
    43: "Ch 00000008, engmask 00000101",
    48: "An uncorrectable double bit error (DBE) has been detected on GPU in the framebuffer at partition 3, subpartition 0.",
    63: "Row Remapper: New row ({addr}) was marked for remapping, reset gpu to activate.",
    64: "Row Remapper: Failed to mark row ({addr}) for remapping, spare rows exhausted.",
    74: "NVLink: fatal error detected on link 3(0x10000, 0x0, 0x0, 0x0, 0x0, 0x0, 0x0)",
    79: "GPU has fallen off the bus.",
    94: "Contained: SM (0x1). RST: No, D-RST: No",
    95: "Uncontained: FBHUB. RST: Yes, D-RST: No",
    119: "Timeout waiting for RPC from GSP! Expected function 76 (GSP_RM_CONTROL) ({addr} 0x4).",
    120: "GSP task timeout @ pc:{addr}, task: 1",
    122: "SPI PMU RPC read fail",
    123: "SPI PMU RPC write fail",
}

NOISE = (
    "systemd[1]: Started Session {n} of user root.",
    "kernel: nvidia-nvlink: Nvlink Core is being initialized, major device number {n}",
    "slurmd[2210]: launch task StepId={n}.0 request from UID:1000",
    "kernel: NVRM: GPU at PCI:0000:07:00: GPU-{n:08x}",
    "sshd[{n}]: Accepted publickey for admin from 10.0.0.1 port 52222",
)

ML_NAMES = ("train_llama_7b", "resnet50_train", "bert_model_finetune", "gpt_model_eval", "train_diffusion")
HPC_NAMES = ("namd_md_run", "lammps_equil", "gromacs_prod", "vasp_relax", "amber_heat", "qe_scf")

TABLE4_BUCKET_PROBS = {
    "1": 0.7414, "2-4": 0.23773, "5-8": 0.00979, "9-32": 0.00942,
    "33-64": 0.00097, "65-128": 0.0006, "129-256": 0.00008, "257+": 0.00002,
}


@dataclass(frozen=True)
class PlantedEdge:
    source: str
    target: str
    probability: float
    gap_range: tuple[int, int] = (1, 2)
    scope: str = "intra_gpu"


@dataclass(frozen=True)
class JobSpec:
    n_jobs: int = 500
    bucket_probs: dict = field(default_factory=lambda: dict(TABLE4_BUCKET_PROBS))
    mean_minutes: float = 140.0
    sigma: float = 1.0
    failure_prob: float = 0.1
    cancel_prob: float = 0.03
    coupling_fraction: float = 1.0
    window: int = 20
    ml_fraction: float = 0.3


@dataclass(frozen=True)
class GenSpec:
    seed: int
    duration_hours: float
    fleet: FleetConfig
    per_type_rate: dict = field(default_factory=dict)
    burst_prob: float = 0.0
    burst_len_range: tuple[int, int] = (1, 4)
    burst_gap_range: tuple[int, int] = (0, 3)
    planted_edges: tuple[PlantedEdge, ...] = ()
    fanout: dict = field(default_factory=dict)
    noise_lines: int = 0
    job_spec: JobSpec = field(default_factory=JobSpec)
    epoch: int = DEFAULT_EPOCH

    def __post_init__(self):
        if not self.duration_hours > 0:
            raise ConfigError("duration_hours must be positive")
        if self.fleet.node_count <= 0:
            raise ConfigError("fleet has no nodes")
        if any(r < 0 for r in self.per_type_rate.values()):
            raise ConfigError("rates must be >= 0")
        probs = [self.burst_prob] + [e.probability for e in self.planted_edges]
        probs += [p for pair in self.fanout.values() for p in pair]
        if any(not 0 <= p <= 1 for p in probs):
            raise ConfigError("probabilities must lie in [0, 1]")
        gaps = [*self.burst_len_range, *self.burst_gap_range]
        gaps += [g for e in self.planted_edges for g in e.gap_range]
        if any(g < 0 for g in gaps):
            raise ConfigError("gaps and lengths must be >= 0")


@dataclass
class Manifest:
    events: list[dict] = field(default_factory=list)
    pairs: list[dict] = field(default_factory=list)
    incidents: list[dict] = field(default_factory=list)
    xid_lines: int = 0
    noise_lines: int = 0
    gpu_failed_jobs: list[str] = field(default_factory=list)
    ml_jobs: list[str] = field(default_factory=list)
    bucket_counts: dict = field(default_factory=dict)
    jobs: int = 0

    def counts(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for e in self.events:
            out[e["label"]] = out.get(e["label"], 0) + 1
        return dict(sorted(out.items()))

    def to_jsonl(self) -> str:
        buf = io.StringIO()
        for e in self.events:
            buf.write(json.dumps({"kind": "event", **e}, sort_keys=True) + "\n")
        for p in self.pairs:
            buf.write(json.dumps({"kind": "pair", **p}, sort_keys=True) + "\n")
        for i in self.incidents:
            buf.write(json.dumps({"kind": "incident", **i}, sort_keys=True) + "\n")
        summary = {"kind": "summary", "xid_lines": self.xid_lines, "noise_lines": self.noise_lines,
                   "jobs": self.jobs, "gpu_failed_jobs": self.gpu_failed_jobs, "ml_jobs": self.ml_jobs,
                   "bucket_counts": self.bucket_counts}
        buf.write(json.dumps(summary, sort_keys=True) + "\n")
        return buf.getvalue()

    @classmethod
    def from_jsonl(cls, text: str) -> "Manifest":
        m = cls()
        for line in text.splitlines():
            if not line.strip():
                continue
            obj = json.loads(line)
            kind = obj.pop("kind")
            if kind == "event":
                m.events.append(obj)
            elif kind == "pair":
                m.pairs.append(obj)
            elif kind == "incident":
                m.incidents.append(obj)
            else:
                for key, value in obj.items():
                    setattr(m, key, value)
        return m


def node_names(fleet: FleetConfig) -> list[str]:
    if fleet.nodes:
        return sorted(fleet.nodes)
    prefix = "gpu" + (fleet.fleet_name[:1].lower() or "x")
    return [f"{prefix}{i:03d}" for i in range(1, fleet.node_count + 1)]


def gpus_on(fleet: FleetConfig) -> dict[str, int]:
    names = node_names(fleet)
    if fleet.nodes:
        return {n: fleet.nodes[n] for n in names}
    base, extra = divmod(fleet.gpus_total, fleet.node_count)
    return {n: base + (i < extra) for i, n in enumerate(names)}


def pci_address(index: int) -> str:
    return f"0000:{(0x07 + 0x20 * index) % 0x100:02x}:00" if index < 8 else f"0001:{index:02x}:00"


def _label_xids(taxonomy: ErrorTaxonomy, label: str) -> tuple[int, ...]:
    if label not in taxonomy or not taxonomy[label].xids:
        raise ConfigError(f"cannot generate error type {label!r}: no XID in taxonomy")
    return taxonomy[label].xids


def _message(xid: int, rng) -> str:
    return MESSAGES.get(xid, f"Xid {xid} event").format(addr=f"0x{int(rng.integers(1 << 40)):010x}")


def _spread(rng, n_gpus: int, own: int, k: int) -> list[int]:
    others = [g for g in range(n_gpus) if g != own]
    k = min(k, len(others))
    return sorted(int(g) for g in rng.choice(others, size=k, replace=False)) if k else []


def gen_error_log(spec: GenSpec, taxonomy: ErrorTaxonomy | None = None) -> tuple[list[str], Manifest]:
    taxonomy = taxonomy or default_taxonomy()
    rng = np.random.default_rng(spec.seed)
    horizon = int(spec.duration_hours * 3600)
    nodes = node_names(spec.fleet)
    gpu_count = gpus_on(spec.fleet)
    events: list[dict] = []
    manifest = Manifest()

    def add(t, node, gpu, label, xid=None, origin="root"):
        if xid is None:
            xids = _label_xids(taxonomy, label)
            xid = int(xids[rng.integers(len(xids))]) if len(xids) > 1 else xids[0]
        ev = {"id": len(events), "t": int(t), "node": node, "gpu": pci_address(gpu), "gpu_index": int(gpu),
              "xid": int(xid), "label": label, "origin": origin}
        events.append(ev)
        return ev

    for label in sorted(spec.per_type_rate):
        rate = spec.per_type_rate[label]
        if rate == 0:
            continue
        _label_xids(taxonomy, label)
        counts = rng.poisson(rate * spec.duration_hours, len(nodes))
        for node, k in zip(nodes, counts.tolist()):
            if not k:
                continue
            times = np.sort(rng.integers(0, horizon, k))
            gpus = rng.integers(0, gpu_count[node], k)
            for t, g in zip(times.tolist(), gpus.tolist()):
                add(t, node, g, label)

    roots = list(events)
    by_source: dict[str, list[PlantedEdge]] = {}
    for edge in spec.planted_edges:
        by_source.setdefault(edge.source, []).append(edge)
    for ev in roots:
        for edge in by_source.get(ev["label"], ()):
            if rng.random() >= edge.probability:
                continue
            gap = int(rng.integers(edge.gap_range[0], edge.gap_range[1] + 1))
            if edge.scope == "intra_gpu":
                g = ev["gpu_index"]
            else:
                picked = _spread(rng, gpu_count[ev["node"]], ev["gpu_index"], 1)
                if not picked:
                    continue
                g = picked[0]
            child = add(ev["t"] + gap, ev["node"], g, edge.target, origin="planted")
            manifest.pairs.append({"source": ev["id"], "target": child["id"], "gap": gap, "scope": edge.scope,
                                   "source_type": edge.source, "target_type": edge.target})
        fan = spec.fanout.get(ev["label"])
        if fan:
            p_multi, p_three = fan
            reach = 1
            if rng.random() < p_multi:
                extra = 2 if rng.random() < p_three else 1
                for g in _spread(rng, gpu_count[ev["node"]], ev["gpu_index"], extra):
                    add(ev["t"] + int(rng.integers(0, 2)), ev["node"], g, ev["label"], ev["xid"], origin="fanout")
                    reach += 1
            manifest.incidents.append({"source": ev["id"], "gpus": reach})

    lines: list[tuple[int, int, str]] = []
    seq = 0
    for ev in events:
        msg = _message(ev["xid"], rng)
        t = ev["t"]
        stamps = [t]
        if spec.burst_prob and rng.random() < spec.burst_prob:
            for _ in range(int(rng.integers(spec.burst_len_range[0], spec.burst_len_range[1] + 1))):
                t += int(rng.integers(spec.burst_gap_range[0], spec.burst_gap_range[1] + 1))
                stamps.append(t)
        ev["occurrences"] = len(stamps)
        for ts in stamps:
            pid = int(rng.integers(1000, 99999))
            body = f"kernel: NVRM: Xid (PCI:{ev['gpu']}): {ev['xid']}, pid={pid}, name=python3, {msg}"
            lines.append((ts, seq, f"{format_timestamp(spec.epoch + ts)} {ev['node']} {body}"))
            seq += 1
    manifest.xid_lines = len(lines)
    for _ in range(spec.noise_lines):
        ts = int(rng.integers(0, horizon))
        node = nodes[int(rng.integers(len(nodes)))]
        text = NOISE[int(rng.integers(len(NOISE)))].format(n=int(rng.integers(1, 1 << 16)))
        lines.append((ts, seq, f"{format_timestamp(spec.epoch + ts)} {node} {text}"))
        seq += 1
    manifest.noise_lines = spec.noise_lines
    lines.sort(key=lambda x: (x[0], x[1]))
    for ev in events:
        ev["t"] += spec.epoch
    manifest.events = events
    return [text for _, _, text in lines], manifest


def _bucket_range(label: str, cap: int) -> tuple[int, int]:
    if label.endswith("+"):
        lo = int(label[:-1])
        return lo, max(lo, min(cap, 2 * lo - 1))
    lo, _, hi = label.partition("-")
    return int(lo), int(hi or lo)


def gen_job_trace(spec: GenSpec, errors: Manifest,
                  taxonomy: ErrorTaxonomy | None = None) -> tuple[str, Manifest]:
    """Job trace CSV coupled to a previously generated error manifest.

    A job that encounters a (non-excluded) planted error while running is,
    with probability ``coupling_fraction``, cut short to fail at most
    ``window`` seconds after the first such error.
    """
    taxonomy = taxonomy or default_taxonomy()
    js = spec.job_spec
    rng = np.random.default_rng([spec.seed, 1])
    nodes = node_names(spec.fleet)
    per_node = min(gpus_on(spec.fleet).values())
    horizon = int(spec.duration_hours * 3600)
    labels = list(js.bucket_probs)
    probs = np.asarray([js.bucket_probs[b] for b in labels], dtype=float)
    probs = probs / probs.sum()

    node_errors: dict[str, list[tuple[int, int]]] = {}
    for ev in errors.events:
        if taxonomy.is_excluded(ev["label"]):
            continue
        node_errors.setdefault(ev["node"], []).append((ev["t"], ev["id"]))
    for v in node_errors.values():
        v.sort()

    jobs: list[JobRecord] = []
    buckets = {b: 0 for b in labels}
    gpu_failed: list[str] = []
    ml: list[str] = []
    mu = math.log(js.mean_minutes) - js.sigma ** 2 / 2
    for i in range(js.n_jobs):
        job_id = str(1_000_000 + i)
        bucket = labels[int(rng.choice(len(labels), p=probs))]
        lo, hi = _bucket_range(bucket, spec.fleet.gpus_total)
        gpus = int(rng.integers(lo, hi + 1))
        buckets[bucket] += 1
        n_nodes = min(len(nodes), math.ceil(gpus / per_node))
        first = int(rng.integers(len(nodes)))
        alloc = [nodes[(first + k) % len(nodes)] for k in range(n_nodes)]
        elapsed = max(60, int(rng.lognormal(mu, js.sigma) * 60))
        elapsed = min(elapsed, horizon)
        start = spec.epoch + int(rng.integers(0, horizon - elapsed + 1))
        end = start + elapsed
        u = rng.random()
        status, code = ("failed", 1) if u < js.failure_prob else (
            ("cancelled", 0) if u < js.failure_prob + js.cancel_prob else ("completed", 0))
        is_ml = rng.random() < js.ml_fraction
        name = (ML_NAMES if is_ml else HPC_NAMES)[int(rng.integers(5))]
        modules = ("pytorch", "cuda") if is_ml else ("cuda", "openmpi")
        if is_ml:
            ml.append(job_id)

        hits = sorted(h for n in alloc for h in node_errors.get(n, ()) if start <= h[0] <= end)
        couple = rng.random() < js.coupling_fraction
        if hits and couple:
            t_err = hits[0][0]
            end = t_err + int(rng.integers(0, min(js.window, end - t_err) + 1))
            status, code = "failed", 1
            gpu_failed.append(job_id)
        jobs.append(JobRecord(job_id, start, start, end, tuple(alloc), gpus, code, status, name, modules))

    jobs.sort(key=lambda j: (j.end, j.job_id))
    buf = io.StringIO()
    write_job_csv(jobs, buf)
    errors.gpu_failed_jobs = gpu_failed
    errors.ml_jobs = ml
    errors.bucket_counts = buckets
    errors.jobs = js.n_jobs
    return buf.getvalue(), errors


def gen_downtime(seed: int, fleet: FleetConfig, n: int, mean_hours: float, sigma: float = 0.8,
                 epoch: int = DEFAULT_EPOCH) -> str:
    """Node-state CSV with log-normally distributed outage lengths."""
    rng = np.random.default_rng([seed, 2])
    nodes = node_names(fleet)
    mu = math.log(mean_hours) - sigma ** 2 / 2
    rows = ["node_id,start,end,cause"]
    horizon = int(fleet.observation_hours * 3600)
    for _ in range(n):
        node = nodes[int(rng.integers(len(nodes)))]
        start = epoch + int(rng.integers(0, horizon))
        length = int(round(rng.lognormal(mu, sigma) * 3600))
        rows.append(f"{node},{start},{start + length},reset")
    return "\n".join(rows) + "\n"


def default_spec(fleet: FleetConfig, seed: int = 0, duration_hours: float | None = None) -> GenSpec:
    """A representative mix of error types, edges and bursts for demos and CLI use."""
    return GenSpec(
        seed=seed,
        duration_hours=duration_hours or min(fleet.observation_hours, 720.0),
        fleet=fleet,
        per_type_rate={"31": 0.004, "48": 0.0003, "63": 0.0002, "74": 0.002, "79": 0.0001,
                       "94": 0.0002, "95": 0.0002, "119/120": 0.001, "122/123": 0.0003, "13": 0.001},
        burst_prob=0.3,
        burst_len_range=(1, 4),
        burst_gap_range=(0, 3),
        planted_edges=(
            PlantedEdge("122/123", "31", 0.88, (0, 2)),
            PlantedEdge("48", "63", 0.7, (0, 1)),
            PlantedEdge("48", "94", 0.2, (0, 1)),
            PlantedEdge("95", "79", 0.3, (1, 4)),
        ),
        fanout={"74": (0.42, 0.17)},
        noise_lines=int(fleet.node_count * 2),
        job_spec=JobSpec(n_jobs=500),
    )


def manifest_dict(manifest: Manifest) -> dict:
    return asdict(manifest)
