"""Command-line entry point: prepare, synth, train, eval, gradcheck.

Every command takes explicit paths, derives all randomness from one seed,
and writes a manifest describing the run. Log verbosity is controlled by
the TRAJFORMER_LOG environment variable (DEBUG/INFO/WARNING).
"""

import argparse
import hashlib
import json
import logging
import os
import sys

import numpy as np

from . import __version__, data, evaluation, gradcheck, model, synth, training
from .config import ConfigError, parse_kv_text, read_kv, coerce
from .domain import DatConfig

log = logging.getLogger("trajformer")

MODEL_KEYS = {
    "d_model": int, "heads": int, "ff_width": int, "encoder_layers": int,
    "decoder_layers": int, "dropout": float, "use_gcn": bool, "gcn_layers": int,
}
TRAIN_KEYS = {
    "learning_rate": float, "batch_size": int, "steps": int, "seed": int,
    "grl_lambda": float, "checkpoint_every": int, "case_study": str,
}


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(out_dir, command, config, seed, inputs, outputs):
    manifest = {
        "tool_version": __version__,
        "command": command,
        "config": config,
        "seed": seed,
        "inputs": {p: _sha256(p) for p in inputs if os.path.exists(p)},
        "outputs": outputs,
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return path


def _load_config(path, overrides):
    values = read_kv(path) if path else {}
    for item in overrides or []:
        values.update(parse_kv_text(item))
    return values


def _build_configs(values):
    model_kwargs = {k: coerce(values, k, t, getattr(model.TransformerConfig, k))
                    for k, t in MODEL_KEYS.items()}
    cfg = model.TransformerConfig(**model_kwargs)
    defaults = training.TrainConfig()
    train_cfg = training.TrainConfig(
        learning_rate=coerce(values, "learning_rate", float, defaults.learning_rate),
        batch_size=coerce(values, "batch_size", int, defaults.batch_size),
        steps=coerce(values, "steps", int, defaults.steps),
        seed=coerce(values, "seed", int, defaults.seed),
        checkpoint_every=coerce(values, "checkpoint_every", int, defaults.checkpoint_every),
        case_study=coerce(values, "case_study", str, defaults.case_study),
        dat=DatConfig(grl_lambda=coerce(values, "grl_lambda", float, 1.0)),
    )
    return cfg, train_cfg


# ----------------------------------------------------------------------
# commands


def cmd_prepare(args):
    os.makedirs(args.out, exist_ok=True)
    records, rejects = data.load_records(args.input)
    if not records:
        raise ConfigError(f"{args.input}: no usable records")
    if args.scaler:
        scaler = data.Scaler.load(args.scaler)
    else:
        scaler = data.fit_scaler(data.all_coordinates(records))
    domain_id = data.DOMAIN_TARGET if args.domain == "target" else data.DOMAIN_SOURCE
    samples, stats = data.build_dataset(records, scaler, max_agents=args.max_agents,
                                        domain=domain_id)
    if not samples:
        raise ConfigError(f"{args.input}: no windows long enough to form samples")
    shard_path = os.path.join(args.out, "samples.shard")
    scaler_path = os.path.join(args.out, "scaler.txt")
    data.save_samples(shard_path, samples)
    scaler.save(scaler_path)
    _write_manifest(args.out, "prepare",
                    {"max_agents": args.max_agents, "domain": args.domain,
                     "rejected_rows": rejects,
                     "rejected_windows": stats.rejected_windows,
                     "clipped_points": stats.clipped_points},
                    args.seed, [args.input],
                    {"samples": shard_path, "scaler": scaler_path,
                     "count": len(samples)})
    print(f"wrote {len(samples)} samples to {shard_path} "
          f"({rejects} rows rejected, {stats.clipped_points} points clipped)")
    return 0


def cmd_synth(args):
    os.makedirs(args.out, exist_ok=True)
    spec = synth.SynthSpec.from_file(args.spec) if args.spec else synth.SynthSpec()
    seed = args.seed if args.seed is not None else spec.seed
    src_records, tgt_records = synth.synth_generate(spec, seed=seed)
    scaler = data.fit_scaler(data.all_coordinates(src_records))
    src_samples, _ = data.build_dataset(src_records, scaler, args.max_agents,
                                        domain=data.DOMAIN_SOURCE)
    tgt_samples, _ = data.build_dataset(tgt_records, scaler, args.max_agents,
                                        domain=data.DOMAIN_TARGET)
    if not src_samples or not tgt_samples:
        raise ConfigError("synthetic spec produced no usable windows; "
                          "increase duration_s or vehicles")
    paths = {"source": os.path.join(args.out, "source.shard"),
             "target": os.path.join(args.out, "target.shard"),
             "scaler": os.path.join(args.out, "scaler.txt")}
    data.save_samples(paths["source"], src_samples)
    data.save_samples(paths["target"], tgt_samples)
    scaler.save(paths["scaler"])
    _write_manifest(args.out, "synth", vars(spec) | {"seed": seed}, seed,
                    [args.spec] if args.spec else [],
                    paths | {"source_count": len(src_samples),
                             "target_count": len(tgt_samples)})
    print(f"wrote {len(src_samples)} source / {len(tgt_samples)} target samples "
          f"to {args.out}")
    return 0


def cmd_train(args):
    values = _load_config(args.config, args.set)
    cfg, train_cfg = _build_configs(values)
    train_cfg.dat.enabled = args.dat == "on"
    if train_cfg.dat.enabled and not args.target:
        raise ConfigError("--dat on requires --target data")

    source = data.load_samples(args.source)
    target = data.load_samples(args.target) if args.target else None
    splits = training.make_case_study_splits(
        train_cfg.case_study,
        {"source": source, "target": target},
        train_cfg.seed)

    out_dir = os.path.dirname(os.path.abspath(args.out)) or "."
    os.makedirs(out_dir, exist_ok=True)
    metrics_path = args.metrics or os.path.join(out_dir, "metrics.csv")
    training.train(cfg, train_cfg, splits["source_train"],
                   splits.get("target_train"),
                   checkpoint_path=args.out, metrics_path=metrics_path,
                   resume_from=args.resume)
    _write_manifest(out_dir, "train",
                    {**values, "dat": args.dat}, train_cfg.seed,
                    [p for p in (args.source, args.target, args.config) if p],
                    {"checkpoint": args.out, "metrics": metrics_path})
    print(f"trained {train_cfg.steps} steps -> {args.out}")
    return 0


def cmd_eval(args):
    samples = data.load_samples(args.data)
    picked = [s for s in samples
              if s.domain == (data.DOMAIN_TARGET if args.domain == "target"
                              else data.DOMAIN_SOURCE)]
    if not picked:
        raise ConfigError(f"no {args.domain}-domain samples in {args.data}")
    scaler = data.Scaler.load(args.scaler)
    report = evaluation.full_report(args.ckpt, picked, scaler,
                                    model_id=os.path.basename(args.ckpt),
                                    domain=args.domain)
    evaluation.write_report_csv(report, args.out)
    print(evaluation.render_text(report))
    if args.baseline:
        baseline = evaluation.read_report_csv(args.baseline, domain=args.domain)
        imp = evaluation.write_comparison_csv(baseline, report,
                                              args.out + ".compare")
        print(f"average improvement over baseline: {100.0 * imp['average']:.2f}%")
    return 0


def cmd_gradcheck(args):
    results = gradcheck.run_all(seed=args.seed, n_seeds=args.n_seeds)
    failed = False
    for name, err, ok in results:
        print(f"{'PASS' if ok else 'FAIL'}  {name:<14} max_rel_err={err:.3e}")
        failed |= not ok
    return 1 if failed else 0


# ----------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="trajformer",
        description="Graph-embedded Transformer trajectory prediction with "
                    "domain-adversarial training")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="CSV records -> sample shards + scaler")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--max-agents", type=int, default=8, dest="max_agents")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--domain", choices=("source", "target"), default="source")
    p.add_argument("--scaler", help="reuse an existing scaler file")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("synth", help="generate synthetic source/target shards")
    p.add_argument("--spec", help="key = value spec file")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--max-agents", type=int, default=8, dest="max_agents")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model on prepared shards")
    p.add_argument("--config", help="key = value training config")
    p.add_argument("--source", required=True, help="source-domain shard")
    p.add_argument("--target", help="target-domain shard")
    p.add_argument("--dat", choices=("on", "off"), default="off")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--metrics", help="metrics log path")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.add_argument("--set", action="append",
                   help="override a config key, e.g. --set steps=200")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="per-horizon RMSE report for a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--scaler", required=True)
    p.add_argument("--domain", choices=("source", "target"), default="source")
    p.add_argument("--out", required=True)
    p.add_argument("--baseline", help="baseline report CSV to compare against")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of all layers")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-seeds", type=int, default=5, dest="n_seeds")
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None):
    logging.basicConfig(
        level=os.environ.get("TRAJFORMER_LOG", "WARNING").upper(),
        stream=sys.stderr)
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, data.SchemaError, model.CheckpointError,
            FileNotFoundError, IOError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
