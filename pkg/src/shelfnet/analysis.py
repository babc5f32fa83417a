"""Analytic cost model and combinatorial path analysis over block graphs.

Costs come from closed-form per-layer formulas (``c_in * c_out * kh * kw *
H * W`` multiply-accumulates for a convolution, zero for normalization,
activations and pooling), so no network is ever executed.  Path statistics
are exact dynamic programs over the DAG.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from .arch import BlockGraph, make_backbone, build_backbone
from .errors import InputError

DEFAULT_PATH_CAP = 10**6


@dataclass
class CostRow:
    id: str
    kind: str
    column: Optional[int]
    level: Optional[str]
    params: int
    macs: int
    shared: bool = False
    note: str = ""


@dataclass
class CostReport:
    rows: List[CostRow]
    input_size: Optional[Tuple[int, int]]
    arch_hash: str
    total_params: int = 0
    total_macs: int = 0
    shared_savings: int = 0
    by_column: Dict[str, Dict[str, int]] = field(default_factory=dict)
    by_level: Dict[str, Dict[str, int]] = field(default_factory=dict)
    notes: List[str] = field(default_factory=list)

    def finalize(self) -> "CostReport":
        self.total_params = sum(r.params for r in self.rows)
        self.total_macs = sum(r.macs for r in self.rows)
        for r in self.rows:
            if r.column is not None:
                key = str(r.column)
                agg = self.by_column.setdefault(key, {"params": 0, "macs": 0})
                agg["params"] += r.params
                agg["macs"] += r.macs
            if r.level is not None:
                agg = self.by_level.setdefault(r.level, {"params": 0, "macs": 0})
                agg["params"] += r.params
                agg["macs"] += r.macs
        return self

    def shelf_macs(self) -> int:
        """MACs of the shelf interior (columns 2-4 plus their transitions),
        the part whose cost scales quadratically with the level widths."""
        return sum(
            self.by_column.get(str(c), {"macs": 0})["macs"] for c in (2, 3, 4))

    def to_json_dict(self) -> dict:
        return {
            "arch_hash": self.arch_hash,
            "input_size": list(self.input_size) if self.input_size else None,
            "unit": "MACs (multiply-accumulates); BN/activations/pooling count zero",
            "total_params": self.total_params,
            "total_macs": self.total_macs,
            "shared_savings": self.shared_savings,
            "by_column": self.by_column,
            "by_level": self.by_level,
            "notes": self.notes,
            "rows": [vars(r) for r in self.rows],
        }


@dataclass
class PathReport:
    source: str
    sink: str
    path_count: int
    longest_path_length: int
    longest_path: List[str]
    paths: Optional[List[List[str]]] = None

    def to_json_dict(self) -> dict:
        return {
            "source": self.source,
            "sink": self.sink,
            "path_count": self.path_count,
            "longest_path_length": self.longest_path_length,
            "longest_path": self.longest_path,
            "paths": self.paths,
        }


# --- cost model ---------------------------------------------------------------

def _iter_cost_units(graph: BlockGraph):
    """Yield (id, kind, column, level, layer list) for nodes and transition edges."""
    for node in graph.nodes.values():
        yield node.name, node.kind, node.id.column, node.id.level, graph.node_layers(node.name)
    for edge in graph.edges:
        if edge.transition is not None:
            col = graph.nodes[edge.dst].id.column
            yield edge.name, f"{edge.transition.kind}_transition", col, None, \
                graph.edge_layers(edge)


def cost_report(graph: BlockGraph, input_size: Optional[Tuple[int, int]] = None) -> CostReport:
    """Parameter and (optionally) MAC counts per block and transition.

    Kernels in one sharing group are counted once; ``shared_savings`` is the
    extra parameter count an unshared twin would carry.
    """
    if input_size is not None:
        h, w = input_size
        max_stride = max(n.out_stride for n in graph.nodes.values())
        if h % max_stride or w % max_stride:
            raise InputError(
                f"input {h}x{w} not divisible by the graph's total stride {max_stride}")
    rows = []
    seen_groups = set()
    savings = 0
    for uid, kind, col, level, layers in _iter_cost_units(graph):
        params = 0
        macs = 0
        shared = False
        for spec in layers:
            p = spec.param_count()
            if spec.sharing_group is not None:
                shared = True
                if spec.sharing_group in seen_groups:
                    savings += p
                    p = 0
                else:
                    seen_groups.add(spec.sharing_group)
            params += p
            if input_size is not None:
                macs += spec.mac_count(*input_size)
        rows.append(CostRow(uid, kind, col, level, params, macs, shared))
    report = CostReport(rows, input_size, graph.arch_hash()).finalize()
    report.shared_savings = savings
    bb = graph.meta.get("backbone", {})
    if bb.get("name") == "resnet50":
        report.notes.append(
            "resnet50 parameters follow the standard definition (~25.6M with the "
            "1000-class classifier); some published backbone tables list 35.6M "
            "for the same model.")
    return report


def count_params(graph: BlockGraph) -> CostReport:
    return cost_report(graph, None)


def count_flops(graph: BlockGraph, input_size: Tuple[int, int]) -> CostReport:
    return cost_report(graph, input_size)


# --- path analysis ---------------------------------------------------------------

def _check_endpoints(graph: BlockGraph, source: str, sink: str):
    for name in (source, sink):
        if name not in graph.nodes:
            raise InputError(f"block {name!r} not in graph; known: {', '.join(graph.nodes)}")


def _succ(graph: BlockGraph) -> Dict[str, List[str]]:
    succ: Dict[str, List[str]] = {n: [] for n in graph.nodes}
    for e in graph.edges:
        succ[e.src].append(e.dst)
    return succ


def count_paths(graph: BlockGraph, source: str, sink: str) -> int:
    """Number of distinct directed source->sink paths, by DP in topological order."""
    _check_endpoints(graph, source, sink)
    counts = {n: 0 for n in graph.nodes}
    counts[source] = 1
    succ = _succ(graph)
    for name in graph.topological_order():
        c = counts[name]
        if c == 0 or name == sink:
            continue
        for nxt in succ[name]:
            counts[nxt] += c
    return counts[sink]


def list_paths(graph: BlockGraph, source: str, sink: str,
               cap: int = DEFAULT_PATH_CAP) -> List[List[str]]:
    """All source->sink paths (DFS); refuses to materialize more than ``cap``."""
    _check_endpoints(graph, source, sink)
    total = count_paths(graph, source, sink)
    if total > cap:
        raise InputError(f"{total} paths exceed the listing cap of {cap}")
    succ = _succ(graph)
    out: List[List[str]] = []
    stack = [source]

    def dfs(cur: str):
        if cur == sink:
            out.append(list(stack))
            return
        for nxt in succ[cur]:
            stack.append(nxt)
            dfs(nxt)
            stack.pop()

    dfs(source)
    return out


def longest_path(graph: BlockGraph, source: str, sink: str) -> PathReport:
    """Longest source->sink path measured in blocks visited (inclusive)."""
    _check_endpoints(graph, source, sink)
    best = {n: 0 for n in graph.nodes}   # path length in nodes, 0 = unreachable
    back: Dict[str, Optional[str]] = {n: None for n in graph.nodes}
    best[source] = 1
    succ = _succ(graph)
    for name in graph.topological_order():
        if best[name] == 0 or name == sink:
            continue
        for nxt in succ[name]:
            if best[name] + 1 > best[nxt]:
                best[nxt] = best[name] + 1
                back[nxt] = name
    witness: List[str] = []
    if best[sink] > 0:
        cur: Optional[str] = sink
        while cur is not None:
            witness.append(cur)
            cur = back[cur]
        witness.reverse()
    return PathReport(source, sink, count_paths(graph, source, sink),
                      best[sink], witness)


def enumerate_paths(graph: BlockGraph, source: Optional[str] = None,
                    sink: Optional[str] = None, mode: str = "count",
                    cap: int = DEFAULT_PATH_CAP) -> PathReport:
    source = source or graph.source
    sink = sink or graph.sink
    report = longest_path(graph, source, sink)
    if mode == "list":
        report.paths = list_paths(graph, source, sink, cap)
    elif mode != "count":
        raise InputError(f"mode must be 'count' or 'list', got {mode!r}")
    return report


# --- backbone cost table -------------------------------------------------------------

BACKBONE_TABLE_ROWS = (
    ("resnet18", False), ("resnet18", True),
    ("resnet50", False), ("resnet50", True),
    ("resnet101", False), ("resnet101", True),
)


def backbone_table(input_size: Tuple[int, int] = (512, 512),
                   rows=BACKBONE_TABLE_ROWS) -> List[dict]:
    """Per-backbone parameter/MAC table (stock classifier included)."""
    out = []
    for name, dilated in rows:
        g = build_backbone(make_backbone(name, dilated=dilated), with_classifier=True)
        rep = cost_report(g, input_size)
        out.append({
            "backbone": name,
            "dilated": dilated,
            "params": rep.total_params,
            "macs": rep.total_macs,
            "input_size": list(input_size),
            "note": rep.notes[0] if rep.notes else "",
        })
    return out


def format_backbone_table(rows: List[dict]) -> str:
    lines = [f"{'backbone':<12} {'dilated':<8} {'params':>14} {'MACs':>16}"]
    lines.append("-" * len(lines[0]))
    for r in rows:
        lines.append(f"{r['backbone']:<12} {'yes' if r['dilated'] else 'no':<8} "
                     f"{r['params']:>14,} {r['macs']:>16,}")
    notes = {r["note"] for r in rows if r["note"]}
    for n in sorted(notes):
        lines.append(f"note: {n}")
    return "\n".join(lines)


def format_cost_report(report: CostReport) -> str:
    header = f"{'block':<12} {'kind':<18} {'params':>12} {'MACs':>16}"
    lines = [header, "-" * len(header)]
    for r in report.rows:
        tag = " (shared)" if r.shared else ""
        lines.append(f"{r.id:<12} {r.kind + tag:<18} {r.params:>12,} {r.macs:>16,}")
    lines.append("-" * len(header))
    lines.append(f"{'total':<31} {report.total_params:>12,} {report.total_macs:>16,}")
    if report.shared_savings:
        lines.append(f"parameters saved by weight sharing: {report.shared_savings:,}")
    for n in report.notes:
        lines.append(f"note: {n}")
    return "\n".join(lines)
