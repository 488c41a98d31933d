"""Command line interface.

Subcommands: generate | train | eval | sample | analyze | sweep.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from ..decoding import DecodeConfig, throughput_probe
from ..diffusion import NoiseSchedule, subgoal_loss_profile
from ..tasks import encode_instances, get_task, read_instances, write_instances
from ..tasks.registry import segment_map
from .config import ExperimentConfig
from .evaluate import evaluate_model
from .metrics import MetricsRecord, append_record
from .sweep import data_scaling_sweep, reweight_ablation
from .taxonomy import error_taxonomy, taxonomy_csv
from .train import load_model, train


def _cmd_generate(args) -> int:
    task = get_task(args.task)
    kw = {}
    if args.pd:
        if args.task != "planning":
            raise SystemExit("--pd applies to the planning task only")
        kw["pds"] = tuple(args.pd)
    tr, te = task.generate(args.n_train, args.n_test, args.seed, **kw)
    os.makedirs(args.out_dir, exist_ok=True)
    train_p = os.path.join(args.out_dir, f"{args.task}_train.tsv")
    test_p = os.path.join(args.out_dir, f"{args.task}_test.tsv")
    write_instances(train_p, tr)
    write_instances(test_p, te)
    print(f"wrote {len(tr)} train -> {train_p}")
    print(f"wrote {len(te)} test  -> {test_p}")
    return 0


def _cmd_train(args) -> int:
    cfg = ExperimentConfig.from_json(args.config)
    if args.out_dir:
        cfg = cfg.replace(out_dir=args.out_dir)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    res = train(cfg, resume_from=args.resume, quiet=args.quiet)
    print(f"trained {res.steps} steps; final loss {res.final_loss:.4f}")
    if res.final_eval:
        print(f"final accuracy {res.final_eval['accuracy']:.3f}")
        if res.final_eval.get("per_pd"):
            print(f"per_pd {res.final_eval['per_pd']}")
    print(f"checkpoint: {res.checkpoint_dir}")
    print(f"metrics:    {res.metrics_path}")
    return 0


def _decode_cfg(args, cfg: ExperimentConfig, task) -> DecodeConfig:
    steps = args.steps or cfg.decode_steps or task.default_decode_steps()
    return DecodeConfig(steps=steps,
                        temperature=args.temperature or cfg.temperature,
                        strategy=args.strategy or cfg.strategy,
                        seed=args.seed if args.seed is not None else cfg.seed)


def _cmd_eval(args) -> int:
    model, vocab, cfg = load_model(args.checkpoint)
    task = get_task(cfg.task)
    instances = read_instances(args.data)
    if args.limit:
        instances = instances[: args.limit]
    dc = _decode_cfg(args, cfg, task)
    res = evaluate_model(model, cfg.model_kind, task, vocab, instances, dc)
    print(f"accuracy {res.accuracy:.4f} over {res.n} instances (steps={dc.steps})")
    if res.per_pd:
        for k in sorted(res.per_pd, key=int):
            print(f"  pd {k}: {res.per_pd[k]:.3f}")
    if args.metrics_out:
        append_record(args.metrics_out, MetricsRecord(
            kind="eval", step=0, task=task.name, model_kind=cfg.model_kind,
            seed=dc.seed, accuracy=res.accuracy, per_pd=res.per_pd, n_eval=res.n))
    return 0


def _cmd_sample(args) -> int:
    model, vocab, cfg = load_model(args.checkpoint)
    task = get_task(cfg.task)
    instances = read_instances(args.data)[: args.n]
    dc = _decode_cfg(args, cfg, task)
    res = evaluate_model(model, cfg.model_kind, task, vocab, instances, dc)
    for inst, out, v in zip(instances, res.outputs, res.verdicts):
        status = "ok" if v.ok else f"{v.kind}" + (f"@{v.step}" if v.step else "")
        print(f"input:  {inst.input_text}")
        print(f"output: {out}   [{status}]")
    return 0


def _cmd_analyze(args) -> int:
    model, vocab, cfg = load_model(args.checkpoint)
    task = get_task(cfg.task)
    instances = read_instances(args.data)
    if args.limit:
        instances = instances[: args.limit]
    dc = _decode_cfg(args, cfg, task)

    if args.what == "taxonomy":
        res = evaluate_model(model, cfg.model_kind, task, vocab, instances, dc)
        rows = error_taxonomy(res.verdicts)
        taxonomy_csv(rows, args.out)
        for r in rows:
            step = "" if r.step is None else f" step {r.step}"
            print(f"{r.kind}{step}: {r.count} ({r.rate:.1%})")
    elif args.what == "profile":
        batch = encode_instances(task, instances, vocab)
        segs = segment_map(task, batch, instances)
        rng = np.random.default_rng(dc.seed)
        schedule = NoiseSchedule.linear(cfg.schedule_T)
        prof = subgoal_loss_profile(model, batch, schedule, vocab.mask_id, rng,
                                    segments=segs)
        with open(args.out, "w", newline="") as f:
            w = csv.writer(f)
            seg_ids = [int(s) for s in prof["segments"] if s >= 0]
            w.writerow(["t", "mean_u"] + [f"segment_{s}" for s in seg_ids])
            keepcols = [i for i, s in enumerate(prof["segments"]) if s >= 0]
            for i, t in enumerate(prof["t"]):
                row = [int(t), f"{prof['mean_u'][i]:.6f}"]
                row += [f"{prof['per_segment'][i][j]:.6f}" for j in keepcols]
                w.writerow(row)
        print(f"profile over t=1..{cfg.schedule_T} -> {args.out}")
    elif args.what == "throughput":
        grid = [int(x) for x in args.grid.split(",")]
        batch = encode_instances(task, instances, vocab)

        def scorer(ids):
            outs = [vocab.decode(row) for row in ids]
            return np.mean([task.verify(i.input_text, o).ok
                            for i, o in zip(instances, outs)])

        rows = throughput_probe(model, batch, grid, dc, vocab.mask_id, vocab.pad_id,
                                repeats=args.repeats, scorer=scorer)
        with open(args.out, "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=["steps", "seconds", "samples_per_sec", "accuracy"])
            w.writeheader()
            for r in rows:
                w.writerow(r)
        for r in rows:
            print(f"steps {r['steps']:>3}: {r['samples_per_sec']:.2f} samples/s "
                  f"accuracy {r.get('accuracy', float('nan')):.3f}")
    return 0


def _cmd_sweep(args) -> int:
    base = ExperimentConfig.from_json(args.config)
    if args.out_dir:
        base = base.replace(out_dir=args.out_dir)
    if args.mode == "data-scaling":
        pds = [int(x) for x in args.pds.split(",")]
        sizes = [int(x) for x in args.sizes.split(",")]
        data_scaling_sweep(base, pds, sizes, args.threshold, args.out)
    else:
        reweight_ablation(base, args.out)
    print(f"sweep table -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="absorb-diffuse",
                                description="Train and probe discrete-diffusion sequence models "
                                            "on verifiable planning tasks.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="generate task instance files")
    g.add_argument("--task", required=True)
    g.add_argument("--out-dir", required=True)
    g.add_argument("--n-train", type=int, default=1000)
    g.add_argument("--n-test", type=int, default=200)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--pd", type=int, action="append",
                   help="planning distance; repeat for a mixture (planning only)")
    g.set_defaults(fn=_cmd_generate)

    t = sub.add_parser("train", help="train a model from a config file")
    t.add_argument("--config", required=True)
    t.add_argument("--out-dir")
    t.add_argument("--seed", type=int)
    t.add_argument("--resume", help="checkpoint directory to resume from")
    t.add_argument("--verbose", dest="quiet", action="store_false")
    t.set_defaults(fn=_cmd_train, quiet=True)

    shared = dict(steps=("--steps", int), temperature=("--temperature", float))

    e = sub.add_parser("eval", help="verifier accuracy of a checkpoint")
    for name, (flag, typ) in shared.items():
        e.add_argument(flag, type=typ, default=0)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--limit", type=int, default=0)
    e.add_argument("--strategy", choices=["topk", "random"])
    e.add_argument("--seed", type=int)
    e.add_argument("--metrics-out")
    e.set_defaults(fn=_cmd_eval)

    s = sub.add_parser("sample", help="print decoded samples")
    for name, (flag, typ) in shared.items():
        s.add_argument(flag, type=typ, default=0)
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--n", type=int, default=5)
    s.add_argument("--strategy", choices=["topk", "random"])
    s.add_argument("--seed", type=int)
    s.set_defaults(fn=_cmd_sample)

    a = sub.add_parser("analyze", help="taxonomy, loss profile, or throughput probe")
    a.add_argument("--what", choices=["taxonomy", "profile", "throughput"], required=True)
    for name, (flag, typ) in shared.items():
        a.add_argument(flag, type=typ, default=0)
    a.add_argument("--checkpoint", required=True)
    a.add_argument("--data", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--limit", type=int, default=0)
    a.add_argument("--grid", default="1,5,10,20")
    a.add_argument("--repeats", type=int, default=1)
    a.add_argument("--strategy", choices=["topk", "random"])
    a.add_argument("--seed", type=int)
    a.set_defaults(fn=_cmd_analyze)

    w = sub.add_parser("sweep", help="data-scaling or reweighting ablation sweep")
    w.add_argument("--mode", choices=["data-scaling", "ablation"], required=True)
    w.add_argument("--config", required=True)
    w.add_argument("--out", required=True)
    w.add_argument("--out-dir")
    w.add_argument("--pds", default="0,1,2,3")
    w.add_argument("--sizes", default="100,300,1000,3000")
    w.add_argument("--threshold", type=float, default=0.9)
    w.set_defaults(fn=_cmd_sweep)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
