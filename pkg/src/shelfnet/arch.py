"""Declarative block graphs for the shelf architecture family.

A :class:`BlockGraph` is a DAG of named blocks laid out on a (level, column)
grid.  Levels A-D are the spatial scales 1/4, 1/8, 1/16, 1/32 of the input;
column 0 is the backbone, column 1 reduces channels, and columns 2-4 form
the decoder/encoder/decoder branches of the shelf.  Vertical edges between
shelf cells carry a transition (stride-2 conv going down, stride-2
transposed conv going up); nodes carry the blocks themselves.

The same graph drives three consumers: the cost model (via per-node
:class:`LayerSpec` expansions), the path analyses, and instantiation into an
executable network.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from .errors import ConfigError, GraphError, InputError

LEVELS = ("A", "B", "C", "D")
LEVEL_STRIDE = {"A": 4, "B": 8, "C": 16, "D": 32}

VARIANTS = (
    "fcn",
    "segnet",
    "wnet",
    "shelfnet",
    "shelfnet_lw",
    "shelfnet_simplified",
    "gridnet_simplified",
)

NODE_KINDS = (
    "backbone_stage",
    "channel_reduce",
    "s_block",
    "lw_up_block",
    "head",
    "classifier",
)

EDGE_KINDS = ("lateral", "down", "up")


@dataclass(frozen=True)
class BlockId:
    level: str
    column: int
    role: str = ""

    def __post_init__(self):
        if self.level not in LEVELS:
            raise GraphError(f"unknown level {self.level!r}")
        if self.column < 0:
            raise GraphError(f"column must be >= 0, got {self.column}")

    def __str__(self):
        return self.role if self.role else f"{self.level}{self.column}"


@dataclass(frozen=True)
class LayerSpec:
    """One parameterized layer inside a block or transition."""

    name: str
    kind: str  # conv | conv_transpose | batch_norm | classifier
    in_channels: int
    out_channels: int
    kernel: Tuple[int, int] = (1, 1)
    stride: int = 1
    padding: int = 0
    dilation: int = 1
    output_padding: int = 0
    sharing_group: Optional[str] = None
    out_stride: int = 1  # output spatial size = image / out_stride
    in_stride: int = 1
    unit_spatial: bool = False  # operates on a (n, c, 1, 1) tensor

    def param_count(self) -> int:
        kh, kw = self.kernel
        if self.kind in ("conv", "conv_transpose"):
            return self.in_channels * self.out_channels * kh * kw
        if self.kind == "batch_norm":
            return 2 * self.out_channels
        if self.kind == "classifier":
            return self.in_channels * self.out_channels + self.out_channels
        raise GraphError(f"unknown layer kind {self.kind!r}")

    def mac_count(self, h: int, w: int) -> int:
        """Multiply-accumulates at image size (h, w): c_in * c_out * kh * kw
        * H * W with (H, W) the conv's feature map (output side for plain
        convs, input side for transposed convs)."""
        kh, kw = self.kernel
        if self.kind == "batch_norm":
            return 0
        if self.kind == "classifier":
            return self.in_channels * self.out_channels
        if self.unit_spatial:
            return self.in_channels * self.out_channels * kh * kw
        s = self.in_stride if self.kind == "conv_transpose" else self.out_stride
        if h % s or w % s:
            raise InputError(f"input {h}x{w} not divisible by stride {s} of layer {self.name}")
        return self.in_channels * self.out_channels * kh * kw * (h // s) * (w // s)


@dataclass(frozen=True)
class TransitionSpec:
    """Payload of a vertical shelf edge."""

    kind: str  # down | up | up_lw
    in_channels: int
    out_channels: int
    in_stride: int
    out_stride: int

    def layers(self, prefix: str) -> List[LayerSpec]:
        if self.kind == "down":
            return [
                LayerSpec(f"{prefix}/conv", "conv", self.in_channels, self.out_channels,
                          kernel=(3, 3), stride=2, padding=1,
                          in_stride=self.in_stride, out_stride=self.out_stride),
                LayerSpec(f"{prefix}/bn", "batch_norm", self.out_channels, self.out_channels,
                          out_stride=self.out_stride),
            ]
        if self.kind == "up":
            return [
                LayerSpec(f"{prefix}/conv", "conv_transpose", self.in_channels,
                          self.out_channels, kernel=(2, 2), stride=2,
                          in_stride=self.in_stride, out_stride=self.out_stride),
                LayerSpec(f"{prefix}/bn", "batch_norm", self.out_channels, self.out_channels,
                          out_stride=self.out_stride),
            ]
        if self.kind == "up_lw":
            # direct x2 upsampling followed by a channel-halving 1x1 conv
            return [
                LayerSpec(f"{prefix}/conv", "conv", self.in_channels, self.out_channels,
                          kernel=(1, 1), in_stride=self.out_stride, out_stride=self.out_stride),
            ]
        raise GraphError(f"unknown transition kind {self.kind!r}")


@dataclass
class Node:
    id: BlockId
    kind: str
    in_channels: int
    out_channels: int
    out_stride: int
    attrs: dict = field(default_factory=dict)

    @property
    def name(self) -> str:
        return str(self.id)


@dataclass
class Edge:
    src: str
    dst: str
    kind: str
    transition: Optional[TransitionSpec] = None

    @property
    def name(self) -> str:
        return f"{self.src}->{self.dst}"


class BlockGraph:
    """Nodes in topological construction order plus typed edges."""

    def __init__(self, meta: dict):
        self.nodes: Dict[str, Node] = {}
        self.edges: List[Edge] = []
        self.meta = meta

    # -- construction -------------------------------------------------------

    def add_node(self, node: Node) -> Node:
        key = node.name
        if key in self.nodes:
            raise GraphError(f"duplicate block id {key}")
        for other in self.nodes.values():
            if (other.id.level, other.id.column) == (node.id.level, node.id.column):
                raise GraphError(f"blocks {other.name} and {key} share (level, column)")
        self.nodes[key] = node
        return node

    def add_edge(self, src: str, dst: str, kind: str,
                 transition: Optional[TransitionSpec] = None) -> Edge:
        if src not in self.nodes or dst not in self.nodes:
            raise GraphError(f"edge {src}->{dst} references missing node")
        if kind not in EDGE_KINDS:
            raise GraphError(f"unknown edge kind {kind!r}")
        e = Edge(src, dst, kind, transition)
        self.edges.append(e)
        return e

    # -- queries ------------------------------------------------------------

    @property
    def source(self) -> str:
        return self.meta["source"]

    @property
    def sink(self) -> str:
        return self.meta["sink"]

    def in_edges(self, name: str) -> List[Edge]:
        return [e for e in self.edges if e.dst == name]

    def out_edges(self, name: str) -> List[Edge]:
        return [e for e in self.edges if e.src == name]

    def topological_order(self) -> List[str]:
        return list(self.nodes)

    def validate(self):
        order = {name: i for i, name in enumerate(self.nodes)}
        seen = set()
        for e in self.edges:
            key = (e.src, e.dst)
            if key in seen:
                raise GraphError(f"duplicate edge {e.name}")
            seen.add(key)
            if order[e.src] >= order[e.dst]:
                raise GraphError(f"edge {e.name} violates topological node order")
            s, d = self.nodes[e.src].id, self.nodes[e.dst].id
            li, lj = LEVELS.index(s.level), LEVELS.index(d.level)
            if e.kind == "lateral" and (li != lj or d.column != s.column + 1):
                raise GraphError(f"lateral edge {e.name} must step one column within a level")
            if e.kind == "down" and lj != li + 1:
                raise GraphError(f"down edge {e.name} must descend exactly one level")
            if e.kind == "up" and lj != li - 1:
                raise GraphError(f"up edge {e.name} must ascend exactly one level")
        # reachability from the source
        reach = {self.source}
        frontier = [self.source]
        while frontier:
            cur = frontier.pop()
            for e in self.out_edges(cur):
                if e.dst not in reach:
                    reach.add(e.dst)
                    frontier.append(e.dst)
        missing = [n for n in self.nodes if n not in reach]
        if missing:
            raise GraphError(f"nodes unreachable from {self.source}: {missing}")
        return self

    # -- layer expansion ------------------------------------------------------

    def node_layers(self, name: str) -> List[LayerSpec]:
        return node_layers(self.nodes[name])

    def edge_layers(self, edge: Edge) -> List[LayerSpec]:
        if edge.transition is None:
            return []
        return edge.transition.layers(edge.name)

    # -- serialization ---------------------------------------------------------

    def to_json_dict(self) -> dict:
        nodes = []
        for n in self.nodes.values():
            nodes.append({
                "id": n.name,
                "level": n.id.level,
                "column": n.id.column,
                "role": n.id.role,
                "kind": n.kind,
                "in_channels": n.in_channels,
                "out_channels": n.out_channels,
                "out_stride": n.out_stride,
                "attrs": n.attrs,
            })
        edges = []
        for e in self.edges:
            t = None
            if e.transition is not None:
                t = {
                    "kind": e.transition.kind,
                    "in_channels": e.transition.in_channels,
                    "out_channels": e.transition.out_channels,
                    "in_stride": e.transition.in_stride,
                    "out_stride": e.transition.out_stride,
                }
            edges.append({"from": e.src, "to": e.dst, "kind": e.kind, "transition": t})
        return {"format": 1, "meta": self.meta, "nodes": nodes, "edges": edges}

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True, separators=(",", ":"))

    def arch_hash(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()

    @staticmethod
    def from_json_dict(doc: dict) -> "BlockGraph":
        if doc.get("format") != 1:
            raise ConfigError(f"unsupported architecture format {doc.get('format')!r}")
        g = BlockGraph(dict(doc["meta"]))
        for n in doc["nodes"]:
            g.add_node(Node(BlockId(n["level"], n["column"], n.get("role", "")),
                            n["kind"], n["in_channels"], n["out_channels"],
                            n["out_stride"], dict(n["attrs"])))
        for e in doc["edges"]:
            t = e.get("transition")
            trans = TransitionSpec(**t) if t else None
            g.add_edge(e["from"], e["to"], e["kind"], trans)
        return g.validate()

    @staticmethod
    def from_json(text: str) -> "BlockGraph":
        return BlockGraph.from_json_dict(json.loads(text))


# --- backbone specs -----------------------------------------------------------

BACKBONE_PRESETS = {
    "resnet18": ("resnet_basic", (2, 2, 2, 2), 64),
    "resnet34": ("resnet_basic", (3, 4, 6, 3), 64),
    "resnet50": ("resnet_bottleneck", (3, 4, 6, 3), 64),
    "resnet101": ("resnet_bottleneck", (3, 4, 23, 3), 64),
    "mini": ("mini", (1, 1, 1, 1), 8),
}


@dataclass(frozen=True)
class BackboneSpec:
    """Four-stage feature extractor description.

    Output strides per stage are 4, 8, 16, 32; a dilated backbone keeps
    stride 8 from stage 3 onward, replacing the strides with dilation 2 and
    then 4 (feature maps grow, parameters do not change).
    """

    name: str
    family: str  # resnet_basic | resnet_bottleneck | mini
    blocks: Tuple[int, int, int, int]
    base_width: int = 64
    dilated: bool = False

    def __post_init__(self):
        if self.family not in ("resnet_basic", "resnet_bottleneck", "mini"):
            raise ConfigError(f"unknown backbone family {self.family!r}")
        if len(self.blocks) != 4 or any(b < 1 for b in self.blocks):
            raise ConfigError(f"backbone needs 4 positive stage block counts, got {self.blocks}")

    @property
    def stage_widths(self) -> Tuple[int, ...]:
        w = self.base_width
        return (w, 2 * w, 4 * w, 8 * w)

    @property
    def expansion(self) -> int:
        return 4 if self.family == "resnet_bottleneck" else 1

    @property
    def tap_channels(self) -> Tuple[int, ...]:
        return tuple(w * self.expansion for w in self.stage_widths)

    @property
    def tap_strides(self) -> Tuple[int, ...]:
        return (4, 8, 8, 8) if self.dilated else (4, 8, 16, 32)

    def to_dict(self) -> dict:
        return {"name": self.name, "family": self.family, "blocks": list(self.blocks),
                "base_width": self.base_width, "dilated": self.dilated}

    @staticmethod
    def from_dict(d: dict) -> "BackboneSpec":
        return BackboneSpec(d["name"], d["family"], tuple(d["blocks"]),
                            d["base_width"], d["dilated"])


def make_backbone(name: str, dilated: bool = False,
                  base_width: Optional[int] = None) -> BackboneSpec:
    if name not in BACKBONE_PRESETS:
        raise ConfigError(f"unknown backbone {name!r}; have {sorted(BACKBONE_PRESETS)}")
    family, blocks, width = BACKBONE_PRESETS[name]
    return BackboneSpec(name, family, blocks, base_width or width, dilated)


# --- shelf spec -----------------------------------------------------------------

@dataclass(frozen=True)
class ShelfSpec:
    variant: str
    backbone: BackboneSpec
    channels: Tuple[int, ...]  # per level, shallow to deep; must double downward
    num_classes: int = 21
    share_weights: bool = True
    dropout_p: float = 0.1

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; have {VARIANTS}")
        want = 3 if self.variant == "shelfnet_lw" else 4
        if len(self.channels) != want:
            raise ConfigError(
                f"variant {self.variant} uses {want} levels, got {len(self.channels)} widths")
        for a, b in zip(self.channels, self.channels[1:]):
            if b != 2 * a:
                raise ConfigError(f"level widths must double going down, got {self.channels}")
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError(f"dropout_p must be in [0, 1), got {self.dropout_p}")

    @property
    def levels(self) -> Tuple[str, ...]:
        return ("B", "C", "D") if self.variant == "shelfnet_lw" else LEVELS


def default_channels(variant: str, backbone: BackboneSpec) -> Tuple[int, ...]:
    """Shelf widths: backbone taps divided by the bottleneck expansion, and
    halved again for the light-weight variant (which drops level A)."""
    full = tuple(t // backbone.expansion for t in backbone.tap_channels)
    if variant == "shelfnet_lw":
        return tuple(c // 2 for c in full[1:])
    return full


def make_shelf_spec(variant: str, backbone: BackboneSpec,
                    channels: Optional[Tuple[int, ...]] = None,
                    num_classes: int = 21, share_weights: bool = True,
                    dropout_p: float = 0.1) -> ShelfSpec:
    if channels is None:
        channels = default_channels(variant, backbone)
    return ShelfSpec(variant, backbone, tuple(channels), num_classes,
                     share_weights, dropout_p)


# --- block factories ---------------------------------------------------------------

def make_s_block(block_id: BlockId, channels: int, dropout_p: float,
                 shared: bool = True, stride: int = 1) -> Node:
    """Residual block whose two 3x3 convolutions share one kernel while the
    two batch norms stay independent; dropout sits between the convolutions."""
    if channels < 1:
        raise ConfigError(f"s_block channels must be >= 1, got {channels}")
    return Node(block_id, "s_block", channels, channels, stride,
                {"dropout_p": dropout_p, "shared": shared})


def make_transition(kind: str, in_channels: int, in_stride: int) -> TransitionSpec:
    """Vertical shelf transition: stride-2 3x3 conv doubling channels on the
    way down; stride-2 2x2 transposed conv (or x2 upsample + 1x1 conv for the
    light-weight variant) halving channels on the way up."""
    if kind == "down":
        return TransitionSpec("down", in_channels, 2 * in_channels,
                              in_stride, in_stride * 2)
    if kind in ("up", "up_lw"):
        if in_channels % 2:
            raise ConfigError(f"up transition needs an even channel count, got {in_channels}")
        return TransitionSpec(kind, in_channels, in_channels // 2,
                              in_stride, in_stride // 2)
    raise ConfigError(f"unknown transition kind {kind!r}")


# --- layer expansion per node kind ------------------------------------------------

def _residual_block_layers(prefix: str, blk: dict, in_stride: int) -> List[LayerSpec]:
    t, cin, cout, s, d = blk["type"], blk["in"], blk["out"], blk["stride"], blk["dilation"]
    out_stride = in_stride * s
    specs: List[LayerSpec] = []
    if t == "basic":
        specs += [
            LayerSpec(f"{prefix}/conv1", "conv", cin, cout, (3, 3), s, d, d,
                      in_stride=in_stride, out_stride=out_stride),
            LayerSpec(f"{prefix}/bn1", "batch_norm", cout, cout, out_stride=out_stride),
            LayerSpec(f"{prefix}/conv2", "conv", cout, cout, (3, 3), 1, d, d,
                      in_stride=out_stride, out_stride=out_stride),
            LayerSpec(f"{prefix}/bn2", "batch_norm", cout, cout, out_stride=out_stride),
        ]
    elif t == "bottleneck":
        mid = blk["mid"]
        specs += [
            LayerSpec(f"{prefix}/conv1", "conv", cin, mid, (1, 1),
                      in_stride=in_stride, out_stride=in_stride),
            LayerSpec(f"{prefix}/bn1", "batch_norm", mid, mid, out_stride=in_stride),
            LayerSpec(f"{prefix}/conv2", "conv", mid, mid, (3, 3), s, d, d,
                      in_stride=in_stride, out_stride=out_stride),
            LayerSpec(f"{prefix}/bn2", "batch_norm", mid, mid, out_stride=out_stride),
            LayerSpec(f"{prefix}/conv3", "conv", mid, cout, (1, 1),
                      in_stride=out_stride, out_stride=out_stride),
            LayerSpec(f"{prefix}/bn3", "batch_norm", cout, cout, out_stride=out_stride),
        ]
    else:
        raise GraphError(f"unknown residual block type {t!r}")
    if s != 1 or cin != cout:
        specs += [
            LayerSpec(f"{prefix}/proj", "conv", cin, cout, (1, 1), s,
                      in_stride=in_stride, out_stride=out_stride),
            LayerSpec(f"{prefix}/bnp", "batch_norm", cout, cout, out_stride=out_stride),
        ]
    return specs


def node_layers(node: Node) -> List[LayerSpec]:
    """Expand a block into its parameterized layers (cost model and
    parameter creation both read this)."""
    nid = node.name
    k = node.kind
    if k == "backbone_stage":
        specs: List[LayerSpec] = []
        if node.attrs.get("stem"):
            w = node.attrs["stem_width"]
            specs += [
                LayerSpec(f"{nid}/stem/conv", "conv", 3, w, (7, 7), 2, 3,
                          in_stride=1, out_stride=2),
                LayerSpec(f"{nid}/stem/bn", "batch_norm", w, w, out_stride=2),
            ]
        in_stride = node.attrs["in_stride"]
        for i, blk in enumerate(node.attrs["blocks"]):
            specs += _residual_block_layers(f"{nid}/b{i}", blk, in_stride)
            in_stride *= blk["stride"]
        return specs
    if k == "channel_reduce":
        return [
            LayerSpec(f"{nid}/conv", "conv", node.in_channels, node.out_channels, (1, 1),
                      in_stride=node.out_stride, out_stride=node.out_stride),
            LayerSpec(f"{nid}/bn", "batch_norm", node.out_channels, node.out_channels,
                      out_stride=node.out_stride),
        ]
    if k == "s_block":
        if node.attrs.get("structural"):
            return []
        c = node.out_channels
        group = f"{nid}/conv" if node.attrs["shared"] else None
        os = node.out_stride
        return [
            LayerSpec(f"{nid}/conv1", "conv", c, c, (3, 3), 1, 1,
                      sharing_group=group, in_stride=os, out_stride=os),
            LayerSpec(f"{nid}/bn1", "batch_norm", c, c, out_stride=os),
            LayerSpec(f"{nid}/conv2", "conv", c, c, (3, 3), 1, 1,
                      sharing_group=group, in_stride=os, out_stride=os),
            LayerSpec(f"{nid}/bn2", "batch_norm", c, c, out_stride=os),
        ]
    if k == "lw_up_block":
        c = node.out_channels
        os = node.out_stride
        return [
            LayerSpec(f"{nid}/conv", "conv", c, c, (3, 3), 1, 1,
                      in_stride=os, out_stride=os),
            LayerSpec(f"{nid}/bn", "batch_norm", c, c, out_stride=os),
            LayerSpec(f"{nid}/gate", "conv", c, c, (1, 1), unit_spatial=True),
        ]
    if k == "head":
        return [
            LayerSpec(f"{nid}/conv", "conv", node.in_channels, node.out_channels, (1, 1),
                      in_stride=node.attrs["in_stride"], out_stride=node.attrs["in_stride"]),
        ]
    if k == "classifier":
        return [
            LayerSpec(f"{nid}/fc", "classifier", node.in_channels, node.out_channels),
        ]
    raise GraphError(f"unknown node kind {k!r}")


# --- builders ------------------------------------------------------------------------

def _backbone_nodes(spec: BackboneSpec):
    """Column-0 chain A0 -> B0 -> C0 -> D0, stem folded into A0."""
    widths = spec.stage_widths
    taps = spec.tap_channels
    strides = spec.tap_strides
    dils = (1, 1, 2, 4) if spec.dilated else (1, 1, 1, 1)
    stage_strides = [1 if (i == 0 or (spec.dilated and i >= 2)) else 2 for i in range(4)]
    nodes = []
    in_c = widths[0]  # stem output width
    in_stride = 4
    for i, level in enumerate(LEVELS):
        blocks = []
        for b in range(spec.blocks[i]):
            stride = stage_strides[i] if b == 0 else 1
            blk = {
                "type": "bottleneck" if spec.family == "resnet_bottleneck" else "basic",
                "in": in_c,
                "out": taps[i],
                "stride": stride,
                "dilation": dils[i],
            }
            if blk["type"] == "bottleneck":
                blk["mid"] = widths[i]
            blocks.append(blk)
            in_c = taps[i]
        attrs = {"blocks": blocks, "in_stride": in_stride if i else 4}
        if i == 0:
            attrs["stem"] = True
            attrs["stem_width"] = widths[0]
        node = Node(BlockId(level, 0), "backbone_stage",
                    3 if i == 0 else taps[i - 1], taps[i], strides[i], attrs)
        nodes.append(node)
        in_stride = strides[i]
    return nodes


def build_backbone(spec: BackboneSpec, with_classifier: bool = True,
                   classifier_classes: int = 1000) -> BlockGraph:
    """Standalone backbone graph.  ``with_classifier`` appends the stock
    global-pool + fully-connected head so parameter totals line up with the
    published classification models."""
    g = BlockGraph({
        "variant": "backbone",
        "backbone": spec.to_dict(),
        "num_classes": classifier_classes if with_classifier else 0,
        "channels": {},
        "source": "A0",
        "sink": "D0",
        "share_weights": True,
        "dropout_p": 0.0,
    })
    nodes = _backbone_nodes(spec)
    for n in nodes:
        g.add_node(n)
    for a, b in zip(nodes, nodes[1:]):
        g.add_edge(a.name, b.name, "down")
    if with_classifier:
        tap = spec.tap_channels[-1]
        g.add_node(Node(BlockId("D", 1, "classifier"), "classifier",
                        tap, classifier_classes, nodes[-1].out_stride))
        g.add_edge("D0", "classifier", "lateral")
    return g.validate()


def _add_head(g: BlockGraph, after: str, num_classes: int):
    src = g.nodes[after]
    head_id = BlockId(src.id.level, src.id.column + 1, "head")
    g.add_node(Node(head_id, "head", src.out_channels, num_classes, 1,
                    {"in_stride": src.out_stride, "upsample": src.out_stride}))
    g.add_edge(after, "head", "lateral")


def build_shelf(spec: ShelfSpec) -> BlockGraph:
    """Construct the block graph for any variant of the family.

    Canonical shelf edge set: laterals X0->X1->X2 everywhere, the column-2
    up branch D2->C2->B2->A2, skip laterals A2->A3, B2->B3, C2->C3, the
    column-3 down branch A3->B3->C3->D3, laterals X3->X4 everywhere and the
    column-4 up branch D4->C4->B4->A4.  W-Net removes the two skip laterals
    B2->B3 and C2->C3; SegNet stops after column 2; the light-weight variant
    drops level A and swaps decoder blocks for conv + channel attention.
    """
    if spec.variant in ("shelfnet_simplified", "gridnet_simplified"):
        return _build_simplified(spec)

    g = BlockGraph({
        "variant": spec.variant,
        "backbone": spec.backbone.to_dict(),
        "num_classes": spec.num_classes,
        "channels": {lv: c for lv, c in zip(spec.levels, spec.channels)},
        "source": "A0",
        "sink": "A0",  # fixed up below
        "share_weights": spec.share_weights,
        "dropout_p": spec.dropout_p,
    })
    backbone_nodes = _backbone_nodes(spec.backbone)
    for n in backbone_nodes:
        g.add_node(n)
    for a, b in zip(backbone_nodes, backbone_nodes[1:]):
        g.add_edge(a.name, b.name, "down")

    if spec.variant == "fcn":
        _add_head(g, "D0", spec.num_classes)
        g.meta["sink"] = "head"
        return g.validate()

    levels = spec.levels
    width = {lv: c for lv, c in zip(levels, spec.channels)}
    taps = dict(zip(LEVELS, spec.backbone.tap_channels))
    strides = dict(zip(LEVELS, spec.backbone.tap_strides))
    lw = spec.variant == "shelfnet_lw"
    up_kind = "up_lw" if lw else "up"

    # column 1: channel reduction off every used backbone tap
    for lv in levels:
        g.add_node(Node(BlockId(lv, 1), "channel_reduce", taps[lv], width[lv], strides[lv]))
        g.add_edge(f"{lv}0", f"{lv}1", "lateral")

    def cell(lv: str, col: int, decoder: bool) -> Node:
        if lw and decoder:
            return Node(BlockId(lv, col), "lw_up_block", width[lv], width[lv], strides[lv])
        return make_s_block(BlockId(lv, col), width[lv], spec.dropout_p,
                            spec.share_weights, strides[lv])

    bottom, top = levels[-1], levels[0]

    # column 2: decoder branch, built bottom-up
    for lv in reversed(levels):
        g.add_node(cell(lv, 2, decoder=True))
        g.add_edge(f"{lv}1", f"{lv}2", "lateral")
    for hi, lo in zip(levels, levels[1:]):
        g.add_edge(f"{lo}2", f"{hi}2", "up",
                   make_transition(up_kind, width[lo], strides[lo]))

    if spec.variant == "segnet":
        _add_head(g, f"{top}2", spec.num_classes)
        g.meta["sink"] = f"{top}2"
        return g.validate()

    # column 3: encoder branch, top-down; skip laterals at every level but the
    # bottom (W-Net keeps only the top one)
    keep_laterals = {top} if spec.variant == "wnet" else set(levels[:-1])
    for lv in levels:
        g.add_node(cell(lv, 3, decoder=False))
        if lv in keep_laterals:
            g.add_edge(f"{lv}2", f"{lv}3", "lateral")
    for hi, lo in zip(levels, levels[1:]):
        g.add_edge(f"{hi}3", f"{lo}3", "down",
                   make_transition("down", width[hi], strides[hi]))

    # column 4: decoder branch, bottom-up, laterals at every level
    for lv in reversed(levels):
        g.add_node(cell(lv, 4, decoder=True))
        g.add_edge(f"{lv}3", f"{lv}4", "lateral")
    for hi, lo in zip(levels, levels[1:]):
        g.add_edge(f"{lo}4", f"{hi}4", "up",
                   make_transition(up_kind, width[lo], strides[lo]))

    _add_head(g, f"{top}4", spec.num_classes)
    g.meta["sink"] = f"{top}4"
    return g.validate()


def _build_simplified(spec: ShelfSpec) -> BlockGraph:
    """Unweighted 4x4 comparison grids.

    shelfnet_simplified: columns alternate down/up/down/up, so one path can
    thread all 16 blocks.  gridnet_simplified: columns 1-2 only descend and
    columns 3-4 only ascend.  Laterals join adjacent columns at every level
    in both.
    """
    g = BlockGraph({
        "variant": spec.variant,
        "backbone": spec.backbone.to_dict(),
        "num_classes": spec.num_classes,
        "channels": {lv: c for lv, c in zip(LEVELS, spec.channels)},
        "source": "A1",
        "sink": "A4",
        "share_weights": spec.share_weights,
        "dropout_p": spec.dropout_p,
    })
    width = dict(zip(LEVELS, spec.channels))
    if spec.variant == "shelfnet_simplified":
        directions = ("down", "up", "down", "up")
    else:
        directions = ("down", "down", "up", "up")

    for col, direction in enumerate(directions, start=1):
        order = LEVELS if direction == "down" else tuple(reversed(LEVELS))
        for lv in order:
            g.add_node(Node(BlockId(lv, col), "s_block", width[lv], width[lv],
                            LEVEL_STRIDE[lv], {"structural": True, "shared": True,
                                               "dropout_p": 0.0}))
        for a, b in zip(order, order[1:]):
            g.add_edge(f"{a}{col}", f"{b}{col}", direction)
        if col > 1:
            for lv in LEVELS:
                g.add_edge(f"{lv}{col - 1}", f"{lv}{col}", "lateral")
    return g.validate()


def parse_block_name(g: BlockGraph, text: str) -> str:
    if text in g.nodes:
        return text
    raise InputError(f"unknown block id {text!r}; known: {', '.join(g.nodes)}")
