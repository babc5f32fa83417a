"""Instantiate a block graph into an executable, differentiable network."""

from __future__ import annotations

from typing import Dict, List, Optional

import numpy as np

from . import ops
from .arch import BlockGraph, Edge, LayerSpec, Node
from .autograd import Parameter, Tensor4, no_grad
from .errors import ConfigError, GraphError, InputError


class _ForwardCtx:
    __slots__ = ("train", "seed")

    def __init__(self, train: bool, seed):
        self.train = train
        # flat tuple of ints usable as rng entropy together with a site index
        self.seed = tuple(int(s) for s in seed) if isinstance(seed, (tuple, list)) \
            else (int(seed),)


class ExecutableNet:
    """A block graph bound to parameters, running in topological order.

    ``forward`` returns full-resolution logits; every block output is kept in
    ``block_outputs`` for inspection.  The softmax that completes the head is
    applied by prediction helpers, not here, so losses can consume logits.
    """

    def __init__(self, graph: BlockGraph, init: str = "he_normal", seed: int = 0,
                 dtype=np.float64):
        for node in graph.nodes.values():
            if node.attrs.get("structural"):
                raise GraphError(f"{graph.meta['variant']} graphs are comparison-only "
                                 "and cannot be instantiated")
            if node.kind == "classifier":
                raise GraphError("classifier blocks are analysis-only")
        if init != "he_normal":
            raise ConfigError(f"unknown init policy {init!r}")
        self.graph = graph
        self.dtype = np.dtype(dtype)
        self.seed = seed
        self.params: Dict[str, Parameter] = {}
        self._layer_param: Dict[str, Parameter] = {}
        self.bn_states: Dict[str, ops.BatchNormState] = {}
        self.block_outputs: Dict[str, Tensor4] = {}
        self.stride_divisor = max(n.out_stride for n in graph.nodes.values())
        self._dropout_sites = {name: i for i, name in enumerate(graph.nodes)}
        rng = np.random.default_rng(seed)
        for name in graph.topological_order():
            for spec in graph.node_layers(name):
                self._create_layer(spec, rng)
        for edge in graph.edges:
            for spec in graph.edge_layers(edge):
                self._create_layer(spec, rng)

    # -- parameter creation ----------------------------------------------------

    def _create_layer(self, spec: LayerSpec, rng):
        if spec.kind in ("conv", "conv_transpose"):
            pname = spec.sharing_group or spec.name
            if pname in self.params:
                self._layer_param[spec.name] = self.params[pname]
                return
            kh, kw = spec.kernel
            if spec.kind == "conv":
                shape = (spec.out_channels, spec.in_channels, kh, kw)
            else:
                shape = (spec.in_channels, spec.out_channels, kh, kw)
            std = np.sqrt(2.0 / (spec.out_channels * kh * kw))
            data = rng.normal(0.0, std, size=shape).astype(self.dtype)
            p = Parameter(pname, Tensor4(data), sharing_group=spec.sharing_group)
            self.params[pname] = p
            self._layer_param[spec.name] = p
        elif spec.kind == "batch_norm":
            c = spec.out_channels
            gamma = Parameter(f"{spec.name}/gamma",
                              Tensor4(np.ones((1, c, 1, 1), dtype=self.dtype)))
            beta = Parameter(f"{spec.name}/beta",
                             Tensor4(np.zeros((1, c, 1, 1), dtype=self.dtype)))
            self.params[gamma.name] = gamma
            self.params[beta.name] = beta
            self.bn_states[spec.name] = ops.BatchNormState(c, dtype=self.dtype)
        else:
            raise GraphError(f"cannot instantiate layer kind {spec.kind!r}")

    def parameters(self) -> List[Parameter]:
        return list(self.params.values())

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    # -- state io ---------------------------------------------------------------

    def state_arrays(self) -> Dict[str, np.ndarray]:
        out = {f"param/{name}": p.data for name, p in self.params.items()}
        for name, st in self.bn_states.items():
            out[f"running/{name}/mean"] = st.mean
            out[f"running/{name}/var"] = st.var
        return out

    def load_state(self, arrays: Dict[str, np.ndarray]):
        mine = self.state_arrays()
        missing = sorted(set(mine) - set(arrays))
        if missing:
            raise ConfigError(f"state is missing tensors: {missing[:5]}...")
        for key, target in mine.items():
            src = arrays[key]
            if src.shape != target.shape:
                raise ConfigError(
                    f"state tensor {key} has shape {src.shape}, expected {target.shape}")
            target[...] = src.astype(target.dtype)

    # -- execution ----------------------------------------------------------------

    def _bn(self, ctx, name: str, x: Tensor4) -> Tensor4:
        return ops.batch_norm(x, self.params[f"{name}/gamma"], self.params[f"{name}/beta"],
                              self.bn_states[name], training=ctx.train)

    def _run_residual_block(self, ctx, prefix: str, blk: dict, x: Tensor4) -> Tensor4:
        s, d = blk["stride"], blk["dilation"]
        if blk["type"] == "basic":
            h = ops.relu(self._bn(ctx, f"{prefix}/bn1",
                                  ops.conv2d(x, self._layer_param[f"{prefix}/conv1"],
                                             stride=s, padding=d, dilation=d)))
            h = self._bn(ctx, f"{prefix}/bn2",
                         ops.conv2d(h, self._layer_param[f"{prefix}/conv2"],
                                    padding=d, dilation=d))
        else:
            h = ops.relu(self._bn(ctx, f"{prefix}/bn1",
                                  ops.conv2d(x, self._layer_param[f"{prefix}/conv1"])))
            h = ops.relu(self._bn(ctx, f"{prefix}/bn2",
                                  ops.conv2d(h, self._layer_param[f"{prefix}/conv2"],
                                             stride=s, padding=d, dilation=d)))
            h = self._bn(ctx, f"{prefix}/bn3",
                         ops.conv2d(h, self._layer_param[f"{prefix}/conv3"]))
        if f"{prefix}/proj" in self._layer_param:
            shortcut = self._bn(ctx, f"{prefix}/bnp",
                                ops.conv2d(x, self._layer_param[f"{prefix}/proj"], stride=s))
        else:
            shortcut = x
        return ops.relu(ops.add(h, shortcut))

    def _run_node(self, ctx, node: Node, x: Tensor4) -> Tensor4:
        nid = node.name
        k = node.kind
        if k == "backbone_stage":
            if node.attrs.get("stem"):
                x = ops.relu(self._bn(ctx, f"{nid}/stem/bn",
                                      ops.conv2d(x, self._layer_param[f"{nid}/stem/conv"],
                                                 stride=2, padding=3)))
                x = ops.max_pool2d(x, kernel=3, stride=2, padding=1)
            for i, blk in enumerate(node.attrs["blocks"]):
                x = self._run_residual_block(ctx, f"{nid}/b{i}", blk, x)
            return x
        if k == "channel_reduce":
            return ops.relu(self._bn(ctx, f"{nid}/bn",
                                     ops.conv2d(x, self._layer_param[f"{nid}/conv"])))
        if k == "s_block":
            h = ops.relu(self._bn(ctx, f"{nid}/bn1",
                                  ops.conv2d(x, self._layer_param[f"{nid}/conv1"], padding=1)))
            h = ops.dropout(h, node.attrs["dropout_p"], ctx.train,
                            rng_seed=ctx.seed + (self._dropout_sites[nid],))
            h = self._bn(ctx, f"{nid}/bn2",
                         ops.conv2d(h, self._layer_param[f"{nid}/conv2"], padding=1))
            return ops.relu(ops.add(x, h))
        if k == "lw_up_block":
            h = ops.relu(self._bn(ctx, f"{nid}/bn",
                                  ops.conv2d(x, self._layer_param[f"{nid}/conv"], padding=1)))
            gate = ops.sigmoid(ops.conv2d(ops.global_avg_pool(h),
                                          self._layer_param[f"{nid}/gate"]))
            return ops.scale_channels(h, gate)
        if k == "head":
            logits = ops.conv2d(x, self._layer_param[f"{nid}/conv"])
            return ops.bilinear_upsample(logits, node.attrs["upsample"])
        raise GraphError(f"cannot execute node kind {k!r}")

    def _run_transition(self, ctx, edge: Edge, x: Tensor4) -> Tensor4:
        t = edge.transition
        name = edge.name
        if t.kind == "down":
            return ops.relu(self._bn(ctx, f"{name}/bn",
                                     ops.conv2d(x, self._layer_param[f"{name}/conv"],
                                                stride=2, padding=1)))
        if t.kind == "up":
            return ops.relu(self._bn(ctx, f"{name}/bn",
                                     ops.conv_transpose2d(x, self._layer_param[f"{name}/conv"],
                                                          stride=2)))
        if t.kind == "up_lw":
            return ops.conv2d(ops.bilinear_upsample(x, 2), self._layer_param[f"{name}/conv"])
        raise GraphError(f"cannot execute transition kind {t.kind!r}")

    def forward(self, x, train: bool = False, seed=0,
                record: Optional[bool] = None) -> Tensor4:
        if not isinstance(x, Tensor4):
            x = Tensor4(np.asarray(x, dtype=self.dtype))
        if x.dtype != self.dtype:
            x = Tensor4(x.data.astype(self.dtype), requires_grad=x.requires_grad)
        n, c, h, w = x.shape
        if c != 3:
            raise InputError(f"network expects 3 input channels, got {c}")
        if h % self.stride_divisor or w % self.stride_divisor:
            raise InputError(
                f"input {h}x{w} must be divisible by {self.stride_divisor}")
        if record is None:
            record = train
        ctx = _ForwardCtx(train, seed)
        guard = no_grad() if not record else _null()
        with guard:
            outs: Dict[str, Tensor4] = {}
            for name, node in self.graph.nodes.items():
                in_edges = self.graph.in_edges(name)
                if not in_edges:
                    acc = self._run_node(ctx, node, x)
                else:
                    gathered = []
                    for e in in_edges:
                        src_out = outs[e.src]
                        if e.transition is not None:
                            src_out = self._run_transition(ctx, e, src_out)
                        gathered.append(src_out)
                    merged = gathered[0]
                    for extra in gathered[1:]:
                        merged = ops.add(merged, extra)
                    acc = self._run_node(ctx, node, merged)
                outs[name] = acc
            self.block_outputs = outs
            return outs["head"] if "head" in outs else outs[self.graph.sink]


class _null:
    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False


def instantiate(graph: BlockGraph, init: str = "he_normal", seed: int = 0,
                dtype=np.float64) -> ExecutableNet:
    """Materialize a graph: deterministic parameter draws for a given seed."""
    return ExecutableNet(graph, init=init, seed=seed, dtype=dtype)
