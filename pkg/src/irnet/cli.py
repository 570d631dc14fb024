"""``irnet`` command-line front end.

Exit codes: 0 success, 2 usage or data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .datagen import (
    Sample,
    SynthSpec,
    build_inputs,
    ingest_sensor_csv,
    load_store,
    make_dataset,
    save_store,
    synth_network,
    write_speed_csv,
)
from .errors import ConfigMismatch, DataError, EmptyFineTuneSet, NonFiniteResult, RangeTooShort
from .gradcore import Tensor
from .model import forward, init, load_checkpoint, make_batch, save_checkpoint
from .pipeline import ExperimentConfig, prepare, train_span
from .reconstruct import build_plan, save_plan
from .roadnet import build_network, load_edges, save_edges
from .train import History, evaluate, fine_tune_transfer, train

log = logging.getLogger("irnet")


def _load_store(path):
    path = Path(path)
    return ingest_sensor_csv(path) if path.suffix.lower() == ".csv" else load_store(path)


def _load_network(edges_path, store):
    edges = load_edges(edges_path)
    return build_network(store.roads(), edges)


def cmd_synth(args):
    spec = SynthSpec(n_roads=args.roads, steps=args.steps, noise=args.noise, seed=args.seed)
    net, store = synth_network(spec)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_edges(out / "edges.csv", net.edges)
    write_speed_csv(store, out / "speeds.csv")
    print(f"wrote {len(net.roads)} roads, {len(net.edges)} edges, {store.length} steps to {out}")


def cmd_ingest(args):
    store = ingest_sensor_csv(args.sensors, forward_fill=args.forward_fill)
    save_store(store, args.out)
    print(f"roads: {len(store.series)}  series length: {store.length}")


def cmd_reconstruct(args):
    store = _load_store(args.store)
    net = _load_network(args.edges, store)
    stop = train_span(store.length, args.h, args.P, tuple(args.fractions)) if args.train_only else None
    plan = build_plan(net, args.target, store.features(stop), args.k, args.w)
    save_plan(plan, args.out)
    for direction, sets in (("upstream", plan.upstream_sets), ("downstream", plan.downstream_sets)):
        for s in sets:
            print(f"{direction} order {s.order}: {len(s)} slots, {s.dumb_count()} dumb")


def _experiment(args) -> ExperimentConfig:
    exp = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        exp = exp.with_seed(args.seed)
    model_over = {k: getattr(args, k) for k in ("h", "w", "k", "P", "kind") if getattr(args, k) is not None}
    train_over = {
        name: getattr(args, attr)
        for name, attr in (("lr", "lr"), ("batch_size", "batch_size"), ("max_epochs", "epochs"), ("patience", "patience"))
        if getattr(args, attr) is not None
    }
    if train_over.get("max_epochs") is not None and "patience" not in train_over:
        train_over["patience"] = min(exp.train.patience, train_over["max_epochs"])
    exp = replace(
        exp,
        model=replace(exp.model, **model_over),
        train=replace(exp.train, **train_over),
        edges=args.edges or exp.edges,
        store=args.store or exp.store,
        target=exp.target if args.target is None else args.target,
    )
    missing = [k for k in ("edges", "store", "target") if getattr(exp, k) is None]
    if missing:
        raise DataError(f"missing required setting(s): {', '.join(missing)}")
    return exp


def cmd_train(args):
    exp = _experiment(args)
    store = _load_store(exp.store)
    net = _load_network(exp.edges, store)
    prep = prepare(net, store, exp.target, exp.model, exp.fractions)
    params = init(exp.model)
    best, history = train(params, exp.model, prep.train, prep.val, prep.normalizer, exp.target, exp.train)
    meta = {
        "edges": str(exp.edges),
        "store": str(exp.store),
        "target": exp.target,
        "fractions": list(exp.fractions),
        "train": exp.to_dict()["train"],
        "best_epoch": history.best_epoch,
        "parent": None,
    }
    save_checkpoint(args.out, best, exp.model, prep.normalizer, meta)
    hist_path = args.history or str(Path(args.out).with_suffix(".history.csv"))
    history.save_csv(hist_path)
    best_score = min(history.val_rmspe_p1)
    print(f"epochs: {len(history.epoch)}  best epoch: {history.best_epoch}  best val RMSPE@1: {best_score:.4f}%")


def _checkpoint_context(args):
    ckpt = load_checkpoint(args.checkpoint)
    mc = ckpt.config
    for key in ("h", "w", "k", "P"):
        want = getattr(args, key, None)
        if want is not None and want != getattr(mc, key):
            raise ConfigMismatch(f"--{key} {want} does not match the checkpoint's {key}={getattr(mc, key)}")
    store = _load_store(args.store or ckpt.meta.get("store"))
    net = _load_network(args.edges or ckpt.meta.get("edges"), store)
    target = args.target if getattr(args, "target", None) is not None else ckpt.meta.get("target")
    return ckpt, store, net, target


def cmd_eval(args):
    ckpt, store, net, target = _checkpoint_context(args)
    fractions = tuple(ckpt.meta.get("fractions", (0.6, 0.2, 0.2)))
    prep = prepare(net, store, target, ckpt.config, fractions, normalizer=ckpt.normalizer)
    split = {"train": prep.train, "val": prep.val, "test": prep.test, "all": prep.train + prep.val + prep.test}[args.split]
    report = evaluate(ckpt.params, split, ckpt.normalizer, ckpt.config, target)
    report.save(args.out)
    for p in range(report.horizons):
        print(f"p={p + 1}  RMSPE {report.rmspe[p]:.3f}%  MAPE {report.mape[p]:.3f}%")


def cmd_predict(args):
    ckpt, store, net, target = _checkpoint_context(args)
    mc = ckpt.config
    fractions = tuple(ckpt.meta.get("fractions", (0.6, 0.2, 0.2)))
    stop = train_span(store.length, mc.h, mc.P, fractions)
    plan = build_plan(net, target, store.features(stop), mc.k, mc.w)
    s_tar, um, dm = build_inputs(plan, store, args.at, mc.h, ckpt.normalizer)
    batch = make_batch([Sample(args.at, s_tar, um, dm, np.zeros(mc.P))])
    frozen = {n: Tensor(t.data) for n, t in ckpt.params.items()}
    mph = ckpt.normalizer.invert(target, forward(batch, frozen, mc).data[0])
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["horizon", "predicted_mph"])
        for p, v in enumerate(mph, start=1):
            out.writerow([p, repr(float(v))])
    print(" ".join(f"p{p}={v:.2f}" for p, v in enumerate(mph, start=1)))


def cmd_transfer(args):
    if args.samples < 1:
        raise EmptyFineTuneSet("--samples must be at least 1")
    ckpt = load_checkpoint(args.checkpoint)
    mc = ckpt.config
    store = _load_store(args.store or ckpt.meta.get("store"))
    net = _load_network(args.edges or ckpt.meta.get("edges"), store)
    fractions = tuple(ckpt.meta.get("fractions", (0.6, 0.2, 0.2)))
    stop = train_span(store.length, mc.h, mc.P, fractions)
    plan = build_plan(net, args.new_road, store.features(stop), mc.k, mc.w)
    samples = make_dataset(plan, store, mc.h, mc.P, normalizer=ckpt.normalizer)
    if len(samples) < args.samples:
        raise RangeTooShort(f"road {args.new_road} has only {len(samples)} admissible samples")
    adapted = fine_tune_transfer(
        ckpt.params, mc, samples[: args.samples], ckpt.normalizer, args.new_road, steps=args.steps, lr=args.lr
    )
    meta = dict(ckpt.meta)
    meta.update(
        target=args.new_road,
        parent={"path": str(args.checkpoint), "crc32": ckpt.crc32, "target": ckpt.meta.get("target")},
        fine_tune={"samples": args.samples, "steps": args.steps, "lr": args.lr},
    )
    save_checkpoint(args.out, adapted, mc, ckpt.normalizer, meta)
    print(f"fine-tuned head on {args.samples} samples of road {args.new_road} -> {args.out}")


def cmd_report(args):
    from .plots import loss_plot, scatter_plot

    out = Path(args.out)
    history = History.load_csv(args.history)
    loss_plot(history, out)
    written = [out]
    if args.report:
        doc = json.loads(Path(args.report).read_text(encoding="utf-8"))
        if doc.get("format") != "irnet-metrics" or doc.get("version") != 1:
            raise DataError(f"{args.report} is not a version-1 metrics report")
        scatter = out.with_name(out.stem + "_scatter.svg")
        scatter_plot(doc, scatter)
        written.append(scatter)
    print("wrote " + ", ".join(str(p) for p in written))


def _add_model_flags(p):
    p.add_argument("--h", type=int, default=None, help="history length")
    p.add_argument("--w", type=int, default=None, help="space width (max adjacency order)")
    p.add_argument("--k", type=int, default=None, help="slots per intersection")
    p.add_argument("--P", type=int, default=None, help="number of prediction horizons")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="irnet", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic causal network (edges.csv, speeds.csv)")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--roads", type=int, default=15)
    p.add_argument("--steps", type=int, default=400)
    p.add_argument("--noise", type=float, default=2.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", help="average sensor speeds per road into a store file")
    p.add_argument("--sensors", required=True, help="sensor or road-speed CSV")
    p.add_argument("--out", required=True, help="store file to write (JSON)")
    p.add_argument("--forward-fill", action="store_true", help="fill grid gaps with the previous value")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("reconstruct", help="build the reconstruction plan of one target road")
    p.add_argument("--edges", required=True)
    p.add_argument("--store", required=True)
    p.add_argument("--target", type=int, required=True)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--w", type=int, default=3)
    p.add_argument("--h", type=int, default=6)
    p.add_argument("--P", type=int, default=5)
    p.add_argument("--fractions", type=float, nargs=3, default=[0.6, 0.2, 0.2])
    p.add_argument("--all-data", dest="train_only", action="store_false",
                   help="use whole series for DTW instead of the training span")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("train", help="train a model and write a checkpoint plus history CSV")
    p.add_argument("--config", help="experiment JSON; flags override its keys")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--history", help="history CSV path (default: <out>.history.csv)")
    p.add_argument("--edges")
    p.add_argument("--store")
    p.add_argument("--target", type=int)
    p.add_argument("--kind", choices=["irnet", "baseline"])
    _add_model_flags(p)
    p.add_argument("--epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint and write a metrics report")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=["train", "val", "test", "all"], default="test")
    p.add_argument("--out", required=True)
    p.add_argument("--edges")
    p.add_argument("--store")
    p.add_argument("--target", type=int)
    _add_model_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="predict horizons 1..P from the window ending at --at")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--at", type=int, required=True, help="time index of the last observed step")
    p.add_argument("--out", required=True)
    p.add_argument("--edges")
    p.add_argument("--store")
    p.add_argument("--target", type=int)
    _add_model_flags(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("transfer", help="fine-tune only the regression head on a new road")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--new-road", type=int, required=True)
    p.add_argument("--samples", type=int, default=10, help="first N admissible samples of the new road")
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--out", required=True)
    p.add_argument("--edges")
    p.add_argument("--store")
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("report", help="render loss and prediction plots as SVG")
    p.add_argument("--history", required=True)
    p.add_argument("--report", help="metrics report JSON from 'irnet eval'")
    p.add_argument("--out", required=True, help="loss plot path (.svg); scatter goes next to it")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except NonFiniteResult as exc:
        print(f"error: numeric failure: {exc}", file=sys.stderr)
        return 3
    except (DataError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
