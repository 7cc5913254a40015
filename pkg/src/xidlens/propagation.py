"""Error propagation: which error tends to follow which, and how fast.

Each source error is linked to its first successor inside the time window:
on the same GPU for intra-GPU scope, or on another GPU of the same node for
inter-GPU scope. A source with no such successor is terminal.
"""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .coalesce import AnalysisParams, check_sorted, nearest_rank
from .config import ErrorTaxonomy, default_taxonomy, error_type
from .errors import UsageError

SCOPES = ("intra_gpu", "inter_gpu")
FORMATS = ("dot", "json")


@dataclass(frozen=True)
class PropagationEdge:
    source_type: str
    target_type: str
    scope: str
    count: int
    probability: float
    mean_propagation_time: float
    propagation_times: dict = field(default_factory=dict, compare=False)


@dataclass(frozen=True)
class TerminalMark:
    source_type: str
    terminal_count: int
    terminal_probability: float


def _events(stream):
    """(record, start time) pairs for coalesced errors or raw records."""
    out = []
    for item in stream:
        rec = getattr(item, "representative", item)
        out.append((rec, item.start if rec is not item else rec.timestamp))
    return out


def _codes(keys) -> np.ndarray:
    table: dict = {}
    return np.fromiter((table.setdefault(k, len(table)) for k in keys), dtype=np.int64, count=len(keys))


def build_edges(coalesced: Sequence, params: AnalysisParams | None = None, scope: str = "intra_gpu",
                taxonomy: ErrorTaxonomy | None = None, include_excluded: bool = False,
                backend=None) -> tuple[list[PropagationEdge], list[TerminalMark]]:
    """Propagation edges and terminal marks for one scope.

    Accepts coalesced errors (the default analysis) or raw records. Records
    without a GPU address cannot be placed on a device and are ignored.
    """
    if scope not in SCOPES:
        raise UsageError(f"unknown scope {scope!r}; expected one of {SCOPES}")
    params = params or AnalysisParams()
    taxonomy = taxonomy or default_taxonomy()
    impl = kernels.load(backend) if backend else kernels
    events = _events(coalesced)
    check_sorted([t for _, t in events], "coalesced errors")
    events = [(r, t, error_type(r, taxonomy)) for r, t in events if r.gpu_id]
    if not include_excluded:
        events = [e for e in events if not taxonomy.is_excluded(e[2])]
    if not events:
        return [], []

    n = len(events)
    t = np.fromiter((e[1] for e in events), dtype=np.int64, count=n)
    gpu = _codes([(e[0].node_id, e[0].gpu_id) for e in events])
    part = gpu if scope == "intra_gpu" else _codes([e[0].node_id for e in events])
    order = np.argsort(part, kind="stable")
    succ = impl.first_successor(part[order], gpu[order], t[order], float(params.delta_t),
                                scope == "intra_gpu")

    totals: dict[str, int] = defaultdict(int)
    gaps: dict[tuple[str, str], list[int]] = defaultdict(list)
    types = [events[i][2] for i in order.tolist()]
    ts = t[order].tolist()
    for k, j in enumerate(succ.tolist()):
        totals[types[k]] += 1
        if j >= 0:
            gaps[(types[k], types[j])].append(ts[j] - ts[k])

    edges = []
    linked: dict[str, int] = defaultdict(int)
    for (src, dst), g in sorted(gaps.items()):
        g.sort()
        linked[src] += len(g)
        edges.append(PropagationEdge(
            source_type=src, target_type=dst, scope=scope, count=len(g),
            probability=len(g) / totals[src],
            mean_propagation_time=sum(g) / len(g),
            propagation_times={"min": g[0], "p50": nearest_rank(g, 0.5), "max": g[-1]},
        ))
    terminals = []
    for src in sorted(totals):
        left = totals[src] - linked[src]
        terminals.append(TerminalMark(src, left, left / totals[src]))
    return edges, terminals


@dataclass(frozen=True)
class Involvement:
    incidents: int
    multi_gpu: int
    three_plus: int

    @property
    def fraction_multi(self) -> float:
        return self.multi_gpu / self.incidents if self.incidents else 0.0

    @property
    def fraction_three_plus(self) -> float:
        return self.three_plus / self.incidents if self.incidents else 0.0

    @property
    def three_plus_given_multi(self) -> float:
        return self.three_plus / self.multi_gpu if self.multi_gpu else 0.0


def multi_gpu_involvement(events: Sequence, params: AnalysisParams | None = None,
                          categories: tuple[str, ...] = ("interconnect",),
                          taxonomy: ErrorTaxonomy | None = None) -> Involvement:
    """How many interconnect incidents touch two or more, and three or more, GPUs.

    Interconnect errors on one node whose consecutive gaps are within
    ``delta_t`` form a single incident; its reach is the number of distinct
    GPUs involved. Fractions are over all incidents.
    """
    params = params or AnalysisParams()
    taxonomy = taxonomy or default_taxonomy()
    items = _events(events)
    check_sorted([t for _, t in items])
    per_node: dict[str, list] = defaultdict(list)
    for rec, t in items:
        if rec.category in categories:
            per_node[rec.node_id].append((t, rec.gpu_id))
    incidents = multi = three = 0
    for node in sorted(per_node):
        latest = None
        gpus: set[str] = set()
        for t, g in per_node[node] + [(None, None)]:
            if t is None or latest is None or t - latest > params.delta_t:
                if gpus:
                    incidents += 1
                    multi += len(gpus) >= 2
                    three += len(gpus) >= 3
                gpus = set()
            if t is not None:
                gpus.add(g)
                latest = t
    return Involvement(incidents, multi, three)


def _dot_id(text: str) -> str:
    return '"' + text.replace("\\", "\\\\").replace('"', '\\"') + '"'


def emit_graph(edges: Sequence[PropagationEdge], terminals: Sequence[TerminalMark] = (),
               fmt: str = "dot", nodes: Sequence[str] = (), labels: dict[str, str] | None = None,
               name: str = "propagation") -> str:
    """Render edges as DOT text or a JSON adjacency document.

    Edge labels read ``probability / mean seconds``; terminal outcomes become
    one sink node per source type. Output ordering is fully deterministic.
    """
    if fmt not in FORMATS:
        raise UsageError(f"unknown graph format {fmt!r}; expected one of {FORMATS}")
    labels = labels or {}
    declared = set(nodes)
    declared.update(e.source_type for e in edges)
    declared.update(e.target_type for e in edges)
    declared.update(t.source_type for t in terminals)
    node_ids = sorted(declared)
    edges = sorted(edges, key=lambda e: (e.scope, e.source_type, e.target_type))
    sinks = sorted((t for t in terminals if t.terminal_count > 0), key=lambda t: t.source_type)

    if fmt == "json":
        doc = {
            "name": name,
            "nodes": [{"id": n, "label": labels.get(n, n)} for n in node_ids],
            "edges": [{"source": e.source_type, "target": e.target_type, "scope": e.scope,
                       "count": e.count, "probability": e.probability,
                       "mean_propagation_time": e.mean_propagation_time} for e in edges],
            "terminals": [{"source": t.source_type, "count": t.terminal_count,
                           "probability": t.terminal_probability} for t in sinks],
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    lines = [f"digraph {_dot_id(name)} {{", "  rankdir=LR;", "  node [shape=box];"]
    for n in node_ids:
        lines.append(f"  {_dot_id(n)} [label={_dot_id(labels.get(n, n))}];")
    for t in sinks:
        lines.append(f"  {_dot_id(t.source_type + ':terminal')} [label=\"terminal\", shape=doublecircle];")
    for e in edges:
        style = ", style=dashed" if e.scope == "inter_gpu" else ""
        label = f"{e.probability:.2f} / {e.mean_propagation_time:.2f}s"
        lines.append(f"  {_dot_id(e.source_type)} -> {_dot_id(e.target_type)} [label={_dot_id(label)}{style}];")
    for t in sinks:
        lines.append(f"  {_dot_id(t.source_type)} -> {_dot_id(t.source_type + ':terminal')} "
                     f"[label={_dot_id(f'{t.terminal_probability:.2f}')}];")
    lines.append("}")
    return "\n".join(lines) + "\n"
