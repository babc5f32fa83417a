"""Command-line interface.

Subcommands: ``summarize`` (block table and cost totals), ``paths`` (path
counting / listing / deepest path), ``train``, ``eval``, ``bench`` and
``dataset gen``.  Every command is driven by a JSON config file plus flag
overrides; reports embed the architecture hash so runs can be cross-linked.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import analysis, kernels
from .checkpoint import (checkpoint_from_net, load_checkpoint, net_from_checkpoint,
                         optimizer_from_checkpoint, save_checkpoint)
from .config import ExperimentConfig, load_config
from .data import AugmentedSource, write_dataset_dir
from .errors import ShelfError
from .optim import SGD
from .train import bench_forward, evaluate, train_loop


def _emit_json(doc):
    print(json.dumps(doc, sort_keys=True, indent=2))


def _parse_size(text):
    if text is None:
        return None
    if "x" in text:
        h, w = text.lower().split("x", 1)
        return [int(h), int(w)]
    return int(text)


def _config(args, extra=None) -> ExperimentConfig:
    overrides = {
        "variant": getattr(args, "variant", None),
        "backbone": getattr(args, "backbone", None),
        "num_classes": getattr(args, "num_classes", None),
        "seed": getattr(args, "seed", None),
        "out_dir": getattr(args, "out", None),
        "input_size": _parse_size(getattr(args, "input", None)),
    }
    overrides.update(extra or {})
    return load_config(args.config, overrides)


# --- summarize -----------------------------------------------------------------

def cmd_summarize(args) -> int:
    if args.backbones:
        rows = analysis.backbone_table(tuple(_parse_size(args.input or "512x512")))
        if args.json:
            _emit_json({"backbone_table": rows})
        else:
            print(analysis.format_backbone_table(rows))
        return 0
    cfg = _config(args)
    graph = cfg.graph()
    report = analysis.cost_report(graph, tuple(cfg.input_size))
    if args.json:
        doc = report.to_json_dict()
        doc["variant"] = graph.meta["variant"]
        doc["architecture"] = graph.to_json_dict()
        _emit_json(doc)
        return 0
    print(f"variant: {graph.meta['variant']}   backbone: {cfg.backbone}"
          f"{' (dilated)' if cfg.dilated else ''}   input: "
          f"{cfg.input_size[0]}x{cfg.input_size[1]}   arch: {graph.arch_hash()[:12]}")
    print(f"{'block':<12} {'kind':<18} {'ch':>6} {'1/stride':>9}")
    print("-" * 48)
    for node in graph.nodes.values():
        print(f"{node.name:<12} {node.kind:<18} {node.out_channels:>6} "
              f"{'1/' + str(node.out_stride):>9}")
    print()
    print(analysis.format_cost_report(report))
    return 0


# --- paths ----------------------------------------------------------------------

def cmd_paths(args) -> int:
    cfg = _config(args)
    graph = cfg.graph()
    source = args.source or graph.source
    sink = args.sink or graph.sink
    mode = "list" if args.list else "count"
    report = analysis.enumerate_paths(graph, source, sink, mode=mode)
    if args.json:
        doc = report.to_json_dict()
        doc["arch_hash"] = graph.arch_hash()
        _emit_json(doc)
        return 0
    print(f"{source} -> {sink}: {report.path_count} paths")
    if args.longest:
        print(f"deepest path: {report.longest_path_length} blocks")
        print("  " + " -> ".join(report.longest_path))
    if args.list:
        for p in report.paths:
            print("  " + " -> ".join(p))
    return 0


# --- train ------------------------------------------------------------------------

def cmd_train(args) -> int:
    extra = {}
    if args.steps is not None:
        extra["training.total_iter"] = args.steps
    if args.lr is not None:
        extra["training.base_lr"] = args.lr
    if args.loss is not None:
        extra["training.loss"] = args.loss
    if args.batch_size is not None:
        extra["training.batch_size"] = args.batch_size
    cfg = _config(args, extra)
    out_dir = cfg.out_dir or "run"
    os.makedirs(out_dir, exist_ok=True)

    net = cfg.net()
    graph = net.graph
    source = cfg.train_source()
    policy = cfg.augment_policy()
    if policy is not None:
        source = AugmentedSource(source, policy, cfg.seed)
    opt = SGD(net.parameters(), momentum=cfg.training.momentum,
              weight_decay=cfg.training.weight_decay)
    sched = cfg.lr_schedule()
    val = cfg.val_batches()

    def eval_fn(n):
        mean, _, _ = evaluate(n, val, scales=cfg.eval.scales, flip=cfg.eval.flip)
        return mean

    trace_path = os.path.join(out_dir, "metrics.jsonl")
    every = cfg.training.checkpoint_every

    with open(trace_path, "w") as trace_file:
        header = {"arch_hash": graph.arch_hash(), "config": cfg.to_json_dict()}
        trace_file.write(json.dumps(header, sort_keys=True) + "\n")

        def sink(rec):
            trace_file.write(json.dumps(rec, sort_keys=True) + "\n")
            if every and (rec["step"] + 1) % every == 0:
                path = os.path.join(out_dir, f"ckpt-{rec['step'] + 1:06d}.shlf")
                save_checkpoint(path, checkpoint_from_net(
                    net, opt, iteration=rec["step"] + 1, rng_seed=cfg.seed))
            if not args.json:
                msg = f"step {rec['step']:>6}  lr {rec['lr']:.5f}  loss {rec['loss']:.4f}"
                if "miou" in rec:
                    msg += f"  val mIoU {rec['miou']:.4f}"
                if rec["step"] % max(1, cfg.training.total_iter // 50) == 0 or "miou" in rec:
                    print(msg)

        t0 = time.time()
        trace = train_loop(net, source, sched, loss_kind=cfg.training.loss,
                           steps=cfg.training.total_iter, seed=cfg.seed,
                           momentum=cfg.training.momentum,
                           weight_decay=cfg.training.weight_decay,
                           optimizer=opt, eval_every=cfg.training.eval_every,
                           eval_fn=eval_fn, trace_sink=sink)
        elapsed = time.time() - t0

    final = os.path.join(out_dir, "ckpt-final.shlf")
    save_checkpoint(final, checkpoint_from_net(
        net, opt, iteration=cfg.training.total_iter, rng_seed=cfg.seed))
    mean, per_class, acc = evaluate(net, val, scales=cfg.eval.scales, flip=cfg.eval.flip)
    summary = {
        "arch_hash": graph.arch_hash(),
        "steps": cfg.training.total_iter,
        "seconds": round(elapsed, 1),
        "final_loss": trace[-1]["loss"],
        "val_miou": mean,
        "val_pixel_acc": acc,
        "checkpoint": final,
        "metrics": trace_path,
    }
    if args.json:
        _emit_json(summary)
    else:
        print(f"done in {elapsed:.0f}s: final loss {trace[-1]['loss']:.4f}, "
              f"val mIoU {mean:.4f}; checkpoint -> {final}")
    return 0


# --- eval --------------------------------------------------------------------------

def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    expected = None
    if args.config:
        expected = _config(args).graph()
    net = net_from_checkpoint(ckpt, expected_graph=expected)
    cfg = _config(args) if args.config else None

    scales = tuple(float(s) for s in args.scales.split(",")) if args.scales else (1.0,)
    meta_classes = net.graph.meta["num_classes"]
    if args.dataset_dir:
        from .data import DirectorySource
        src = DirectorySource(args.dataset_dir, batch_size=4, seed=0)
        batches = [src.batch(i) for i in range(len(src.pairs) // 4)]
    else:
        base = cfg or load_config(None, {"num_classes": meta_classes,
                                         "variant": net.graph.meta["variant"],
                                         "backbone": net.graph.meta["backbone"]["name"]})
        batches = base.val_batches()
    mean, per_class, acc = evaluate(net, batches, scales=scales, flip=args.flip)
    doc = {
        "arch_hash": net.graph.arch_hash(),
        "checkpoint": args.checkpoint,
        "iteration": ckpt.iteration,
        "scales": list(scales),
        "flip": bool(args.flip),
        "miou": mean,
        "pixel_accuracy": acc,
        "per_class_iou": [None if np.isnan(v) else round(float(v), 6) for v in per_class],
    }
    if args.json:
        _emit_json(doc)
    else:
        print(f"checkpoint {args.checkpoint} (iteration {ckpt.iteration})")
        print(f"scales {list(scales)} flip={bool(args.flip)}")
        for k, v in enumerate(per_class):
            print(f"  class {k}: IoU {'n/a' if np.isnan(v) else f'{v:.4f}'}")
        print(f"mIoU {mean:.4f}   pixel accuracy {acc:.4f}")
    return 0


# --- bench -------------------------------------------------------------------------

_KERNEL_GEOMETRIES = [
    # (n, cin, h, w, cout, k, stride, padding)
    (1, 3, 64, 64, 8, 7, 2, 3),
    (1, 8, 32, 32, 8, 3, 1, 1),
    (1, 32, 16, 16, 32, 3, 1, 1),
    (1, 64, 8, 8, 64, 3, 1, 1),
    (1, 32, 64, 64, 32, 3, 1, 1),
    (1, 128, 16, 16, 128, 3, 1, 1),
]


def _bench_kernels(reps: int):
    rows = []
    for geom in _KERNEL_GEOMETRIES:
        n, cin, h, w, cout, k, s, p = geom
        rng = np.random.default_rng(0)
        x = rng.normal(size=(n, cin, h, w))
        wt = rng.normal(size=(cout, cin, k, k))
        row = {"geometry": f"{cin}x{h}x{w} -> {cout}, k{k} s{s}"}
        for backend in kernels.available_backends():
            impl = kernels.get_backend(backend)
            y = impl.conv2d_forward(x, wt, s, p, 1)
            gy = rng.normal(size=y.shape)
            timings = {}
            for name, call in (
                ("forward", lambda: impl.conv2d_forward(x, wt, s, p, 1)),
                ("grad_input", lambda: impl.conv2d_grad_input(gy, wt, s, p, 1, h, w)),
                ("grad_weight", lambda: impl.conv2d_grad_weight(x, gy, s, p, 1, k, k)),
            ):
                call()
                t0 = time.perf_counter()
                for _ in range(reps):
                    call()
                timings[name] = (time.perf_counter() - t0) / reps
            row[backend] = {k2: round(v * 1e6, 1) for k2, v in timings.items()}
        rows.append(row)
    return rows


def cmd_bench(args) -> int:
    if args.kernels:
        rows = _bench_kernels(args.reps if args.reps is not None else 20)
        if args.json:
            _emit_json({"kernel_benchmark_us": rows,
                        "active_backend": kernels.backend_name()})
            return 0
        backends = kernels.available_backends()
        print(f"kernel latency in us over {args.reps or 20} reps "
              f"(active backend: {kernels.backend_name()})")
        for row in rows:
            print(f"\n{row['geometry']}")
            for b in backends:
                t = row[b]
                print(f"  {b:<8} forward {t['forward']:>9.1f}   "
                      f"grad_input {t['grad_input']:>9.1f}   "
                      f"grad_weight {t['grad_weight']:>9.1f}")
        return 0
    cfg = _config(args)
    net = cfg.net()
    reps = args.reps if args.reps is not None else 100
    stats = bench_forward(net, tuple(cfg.input_size), repetitions=reps)
    stats["arch_hash"] = net.graph.arch_hash()
    stats["kernel_backend"] = kernels.backend_name()
    if args.json:
        _emit_json(stats)
    else:
        print(f"{cfg.variant}/{cfg.backbone} at {cfg.input_size[0]}x{cfg.input_size[1]}, "
              f"{reps} repetitions ({kernels.backend_name()} kernels)")
        print(f"mean {stats['mean_s'] * 1e3:.2f} ms   median {stats['median_s'] * 1e3:.2f} ms   "
              f"std {stats['std_s'] * 1e3:.2f} ms")
        print(f"{stats['macs']:,} MACs -> {stats['macs_per_s'] / 1e9:.2f} GMAC/s")
    return 0


# --- dataset ------------------------------------------------------------------------

def cmd_dataset_gen(args) -> int:
    cfg = _config(args, {"dataset.size": args.size} if args.size else None)
    out = args.out or cfg.out_dir
    if not out:
        raise ShelfError("dataset gen needs --out")
    write_dataset_dir(out, seed=cfg.dataset.seed, n_images=args.n,
                      config=cfg.synth_config())
    doc = {"out": out, "images": args.n, "size": cfg.dataset.size,
           "classes": cfg.num_classes, "seed": cfg.dataset.seed}
    if args.json:
        _emit_json(doc)
    else:
        print(f"wrote {args.n} image/label pairs to {out}/")
    return 0


# --- wiring --------------------------------------------------------------------------

def _add_common(p):
    p.add_argument("--config", help="JSON experiment config")
    p.add_argument("--seed", type=int, help="master seed override")
    p.add_argument("--json", action="store_true", help="machine-readable output")
    p.add_argument("--out", help="output directory override")
    p.add_argument("--variant", help="architecture variant override")
    p.add_argument("--backbone", help="backbone override")
    p.add_argument("--num-classes", dest="num_classes", type=int)
    p.add_argument("--input", help="input size, e.g. 512x512 or 64")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shelfnet",
        description="Shelf-architecture workbench: build, analyze, train, benchmark.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("summarize", help="block table plus parameter/MAC totals")
    _add_common(p)
    p.add_argument("--backbones", action="store_true",
                   help="print the per-backbone cost table instead")
    p.set_defaults(fn=cmd_summarize)

    p = sub.add_parser("paths", help="count or list source->sink paths")
    _add_common(p)
    p.add_argument("--source")
    p.add_argument("--sink")
    p.add_argument("--list", action="store_true", help="print every path")
    p.add_argument("--longest", action="store_true", help="print the deepest path")
    p.set_defaults(fn=cmd_paths)

    p = sub.add_parser("train", help="train a toy model")
    _add_common(p)
    p.add_argument("--steps", type=int, help="override training.total_iter")
    p.add_argument("--lr", type=float, help="override training.base_lr")
    p.add_argument("--loss", choices=["ce", "ohem"])
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--scales", help="comma-separated scale list, e.g. 0.5,1,2")
    p.add_argument("--flip", action="store_true", help="average with horizontal flips")
    p.add_argument("--dataset-dir", dest="dataset_dir", help="PPM/PGM directory to score")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("bench", help="forward-latency benchmark")
    _add_common(p)
    p.add_argument("--reps", type=int, help="repetitions (default 100)")
    p.add_argument("--kernels", action="store_true",
                   help="compare kernel backends instead of timing a network")
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("dataset", help="dataset utilities")
    dsub = p.add_subparsers(dest="dataset_command", required=True)
    g = dsub.add_parser("gen", help="write synthetic PPM/PGM pairs")
    _add_common(g)
    g.add_argument("--n", type=int, required=True, help="number of images")
    g.add_argument("--size", type=int, help="image size override")
    g.set_defaults(fn=cmd_dataset_gen)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ShelfError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
