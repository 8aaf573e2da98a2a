"""Command-line entry point wiring the full pipeline.

Subcommands: gen, extract, train, eval, sweep, ablate, embed.  Every
subcommand writes its outputs under --out together with a frozen copy of the
resolved configuration and a MANIFEST of content hashes, so identical inputs
reproduce identical output trees.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path

from .errors import ConfigError, MachineSeqError

CONFIG_DEFAULTS = {
    "gen": {
        "seed": "0",
        "segments": "32",
        "limit": "0",
        "flavor": "binary",
    },
    "model": {
        "d_latent": "64",
        "n_heads": "4",
        "n_decoder_layers": "2",
        "t_max": "16",
        "dropout": "0.1",
        "leaky_relu_slope": "0.2",
        "ffn_width": "128",
        "encoder": "gat",
        "decoder_mode": "causal",
    },
    "train": {
        "batch_size": "128",
        "learning_rate": "0.001",
        "epochs": "20",
        "seed": "0",
        "split_fraction": "0.8",
        "beta1": "0.9",
        "beta2": "0.999",
        "adam_eps": "1e-8",
        "grad_clip": "0",
        "eval_mode": "tf",
    },
}


# --------------------------------------------------------------------------
# Configuration plumbing.

def load_config(path=None, overrides=(), seed=None):
    cp = configparser.ConfigParser()
    cp.read_dict(CONFIG_DEFAULTS)
    if path is not None:
        if not Path(path).is_file():
            raise ConfigError(f"config file not found: {path}")
        cp.read(path)
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override must look like section.key=value: {item!r}")
        key, value = item.split("=", 1)
        section, option = key.split(".", 1)
        if section not in cp:
            raise ConfigError(f"unknown config section {section!r}")
        cp[section][option.strip()] = value.strip()
    if seed is None:
        seed = os.environ.get("MPG_SEED")
    if seed is not None:
        cp["gen"]["seed"] = str(int(seed))
        cp["train"]["seed"] = str(int(seed))
    for section in cp.sections():
        for option in cp[section]:
            if option not in CONFIG_DEFAULTS.get(section, {}):
                raise ConfigError(f"unknown config key {section}.{option}")
    return cp


def model_config(cp):
    from .model import ModelConfig
    m = cp["model"]
    return ModelConfig(
        d_latent=m.getint("d_latent"), n_heads=m.getint("n_heads"),
        n_decoder_layers=m.getint("n_decoder_layers"), T_max=m.getint("t_max"),
        dropout=m.getfloat("dropout"),
        leaky_relu_slope=m.getfloat("leaky_relu_slope"),
        ffn_width=m.getint("ffn_width"), encoder=m["encoder"],
        decoder_mode=m["decoder_mode"])


def train_config(cp):
    from .training import TrainConfig
    t = cp["train"]
    return TrainConfig(
        batch_size=t.getint("batch_size"),
        learning_rate=t.getfloat("learning_rate"), epochs=t.getint("epochs"),
        seed=t.getint("seed"), split_fraction=t.getfloat("split_fraction"),
        beta1=t.getfloat("beta1"), beta2=t.getfloat("beta2"),
        adam_eps=t.getfloat("adam_eps"), grad_clip=t.getfloat("grad_clip"),
        eval_mode=t["eval_mode"])


def freeze_config(cp, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "config.ini", "w") as fh:
        cp.write(fh)


def write_manifest(out_dir):
    """MANIFEST: 'sha256-hex  relative-path' per artifact, sorted by path."""
    out_dir = Path(out_dir)
    lines = []
    for path in sorted(out_dir.rglob("*")):
        if path.is_file() and path.name != "MANIFEST":
            digest = hashlib.sha256(path.read_bytes()).hexdigest()
            lines.append(f"{digest}  {path.relative_to(out_dir).as_posix()}")
    (out_dir / "MANIFEST").write_text("\n".join(lines) + "\n")


def _apply_threads(n):
    if n:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
            os.environ[var] = str(n)


# --------------------------------------------------------------------------
# Data directory helpers.

def _load_grid(path):
    from . import synth
    if path is None:
        return synth.default_grid()
    if not Path(path).is_file():
        raise ConfigError(f"grid file not found: {path}")
    with open(path) as fh:
        return json.load(fh)


def load_cache_dir(data_dir):
    """Read every graph cache below data_dir/graphs into SequenceData entries."""
    from .graphs import read_graph_cache
    from .training import SequenceData
    graph_dir = Path(data_dir) / "graphs"
    if not graph_dir.is_dir():
        raise ConfigError(f"no graphs/ directory under {data_dir}; run extract first")
    entries = []
    for path in sorted(graph_dir.glob("*.txt")):
        sample_id, labels, design, process = read_graph_cache(path.read_text())
        entries.append(SequenceData(sample_id, design, process, labels))
    if not entries:
        raise ConfigError(f"no graph caches found in {graph_dir}")
    return entries


def _prepare(data_dir, tc):
    from .training import prepare_entry_splits
    entries = load_cache_dir(data_dir)
    return prepare_entry_splits(entries, tc.split_fraction, tc.seed)


# --------------------------------------------------------------------------
# Subcommands.

def cmd_gen(args, cp):
    from . import report, synth
    from .mesh import write_stl
    g = cp["gen"]
    grid = _load_grid(args.grid)
    limit = g.getint("limit") or None
    samples = synth.generate_dataset(g.getint("seed"), grid,
                                     segments=g.getint("segments"), limit=limit)
    out = Path(args.out)
    index_rows = []
    for s in samples:
        sdir = out / "samples" / s.id
        sdir.mkdir(parents=True, exist_ok=True)
        doc = {"id": s.id, "spec": synth.spec_to_dict(s.spec),
               "labels": [[lab.main, lab.sub] for lab in s.labels]}
        (sdir / "spec.json").write_text(json.dumps(doc, indent=1) + "\n")
        for t, mesh in enumerate(s.ipw_meshes, start=1):
            (sdir / f"step_{t:02d}.stl").write_bytes(write_stl(mesh, g["flavor"]))
        index_rows.append([s.id, s.spec.family, len(s.labels)])
    report.write_csv(out / "samples.csv", ["sample_id", "family", "n_operations"],
                     index_rows)
    report.render_label_distribution([s.labels for s in samples],
                                     out / "label_distribution.png")
    freeze_config(cp, out)
    write_manifest(out)
    print(f"gen: wrote {len(samples)} samples to {out}")


def cmd_extract(args, cp):
    from . import synth
    from .graphs import design_to_graph, stl_to_graph, write_graph_cache
    from .mesh import read_stl
    from .synth import OperationLabel
    data = Path(args.data)
    sample_dirs = sorted((data / "samples").glob("*")) if (data / "samples").is_dir() else []
    if not sample_dirs:
        raise ConfigError(f"no samples/ directory under {data}; run gen first")
    out = Path(args.out)
    graph_dir = out / "graphs"
    graph_dir.mkdir(parents=True, exist_ok=True)
    count = 0
    for sdir in sample_dirs:
        doc = json.loads((sdir / "spec.json").read_text())
        spec = synth.spec_from_dict(doc["spec"])
        labels = [OperationLabel(m, s) for m, s in doc["labels"]]
        process = []
        for t, stl in enumerate(sorted(sdir.glob("step_*.stl")), start=1):
            process.append(stl_to_graph(read_stl(stl.read_bytes()), t))
        if len(process) != len(labels):
            raise ConfigError(f"{doc['id']}: {len(process)} meshes for "
                              f"{len(labels)} labels")
        design = design_to_graph(spec)
        cache = write_graph_cache(doc["id"], labels, design, process)
        (graph_dir / f"{doc['id']}.txt").write_text(cache)
        count += 1
    freeze_config(cp, out)
    write_manifest(out)
    print(f"extract: wrote {count} graph caches to {graph_dir}")


def cmd_train(args, cp):
    from . import report
    from .graphs import write_norm_stats
    from .training import evaluate, run_config
    mc, tc = model_config(cp), train_config(cp)
    train_data, test_data, stats = _prepare(args.data, tc)
    out = Path(args.out)
    ckpt_dir = out / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)

    def hook(epoch, blob, is_best):
        (ckpt_dir / f"epoch_{epoch:03d}.ckpt").write_bytes(blob)
        if is_best:
            (out / "best.ckpt").write_bytes(blob)

    best, result, reports = run_config(
        train_data, test_data, mc, tc, log=lambda msg: print(msg, flush=True),
        checkpoint_hook=hook)
    (out / "last.ckpt").write_bytes(result.last_checkpoint)
    (out / "norm_stats.txt").write_text(write_norm_stats(stats))
    report.write_loss_curves(result.history, out / "loss_curves.csv")
    report.render_loss_curves(result.history, out / "loss_curves.png")
    rows = (report.metrics_rows("default", "train", reports["train"])
            + report.metrics_rows("default", "test", reports["test"]))
    report.write_metrics_csv(rows, out / "metrics.csv")
    (out / "metrics.txt").write_text(report.format_metrics_table(
        [("default", "train", reports["train"]), ("default", "test", reports["test"])]))
    report.render_metric_bars([("train", reports["train"]), ("test", reports["test"])],
                              out / "metrics.png", "Accuracy by split")
    report.write_predictions_csv(reports["test"], out / "test_predictions.csv")
    freeze_config(cp, out)
    write_manifest(out)
    print(f"train: best epoch {result.best_epoch}; "
          f"test main acc {reports['test'].main.accuracy:.4f}, "
          f"sub {reports['test'].sub.accuracy:.4f}, "
          f"joint {reports['test'].joint.accuracy:.4f}")


def _load_model(path):
    from .model import load_checkpoint
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"checkpoint not found: {path}")
    return load_checkpoint(path.read_bytes())


def cmd_eval(args, cp):
    from . import report
    from .training import evaluate
    tc = train_config(cp)
    model = _load_model(args.checkpoint)
    train_data, test_data, _stats = _prepare(args.data, tc)
    data = {"train": train_data, "test": test_data}[args.split]
    rep = evaluate(model, data, mode=args.mode)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.write_metrics_csv(report.metrics_rows("eval", args.split, rep),
                             out / "metrics.csv")
    (out / "metrics.txt").write_text(
        report.format_metrics_table([("eval", args.split, rep)]))
    report.write_predictions_csv(rep, out / "predictions.csv")
    freeze_config(cp, out)
    write_manifest(out)
    print(f"eval[{args.split},{args.mode}]: main acc {rep.main.accuracy:.4f}, "
          f"sub {rep.sub.accuracy:.4f}, joint {rep.joint.accuracy:.4f}")


def _sweep_settings(path):
    from .training import DEFAULT_SWEEP
    if path is None:
        return [{"batch_size": b, "learning_rate": lr, "epochs": e}
                for b, lr, e in DEFAULT_SWEEP]
    if not Path(path).is_file():
        raise ConfigError(f"sweep grid file not found: {path}")
    with open(path) as fh:
        settings = json.load(fh)
    if not isinstance(settings, list) or not settings:
        raise ConfigError("sweep grid must be a non-empty JSON list of objects")
    return settings


def cmd_sweep(args, cp):
    from . import report
    from .training import TrainConfig, sweep
    mc, base_tc = model_config(cp), train_config(cp)
    settings = _sweep_settings(args.grid)
    base = asdict(base_tc)
    cfgs = [TrainConfig(**{**base, **s}) for s in settings]
    train_data, test_data, _stats = _prepare(args.data, base_tc)
    rows = sweep(train_data, test_data, mc, cfgs,
                 log=lambda msg: print(msg, flush=True))
    out = Path(args.out)
    csv_rows, tagged, entries = [], [], []
    for row in rows:
        tc = row["config"]
        tag = f"b{tc.batch_size}-lr{tc.learning_rate:g}-e{tc.epochs}"
        for split in ("train", "test"):
            csv_rows += report.metrics_rows(tag, split, row["reports"][split])
            tagged.append((tag, split, row["reports"][split]))
        entries.append((tag, row["reports"]["test"]))
    report.write_metrics_csv(csv_rows, out / "sweep.csv")
    (out / "sweep.txt").write_text(report.format_metrics_table(tagged))
    report.render_metric_bars(entries, out / "sweep.png",
                              "Test accuracy by hyperparameter setting")
    freeze_config(cp, out)
    write_manifest(out)
    print(f"sweep: {len(rows)} settings -> {out}")


def cmd_ablate(args, cp):
    from . import report
    from .training import run_ablations
    mc, tc = model_config(cp), train_config(cp)
    train_data, test_data, _stats = _prepare(args.data, tc)
    rows = run_ablations(train_data, test_data, mc, tc,
                         log=lambda msg: print(msg, flush=True))
    out = Path(args.out)
    csv_rows, tagged, entries = [], [], []
    for row in rows:
        tag = row["variant"]
        for split in ("train", "test"):
            csv_rows += report.metrics_rows(tag, split, row["reports"][split])
            tagged.append((tag, split, row["reports"][split]))
        entries.append((tag, row["reports"]["test"]))
    report.write_metrics_csv(csv_rows, out / "ablation.csv")
    (out / "ablation.txt").write_text(report.format_metrics_table(tagged))
    report.render_metric_bars(entries, out / "ablation.png",
                              "Test accuracy by model variant")
    freeze_config(cp, out)
    write_manifest(out)
    print(f"ablate: {len(rows)} variants -> {out}")


def cmd_embed(args, cp):
    from . import report
    from .training import export_embeddings
    tc = train_config(cp)
    model = _load_model(args.checkpoint)
    train_data, test_data, _stats = _prepare(args.data, tc)
    rows = export_embeddings(model, train_data + test_data)
    out = Path(args.out)
    if out.suffix == ".csv":
        report.write_embeddings_csv(rows, out)
        print(f"embed: {len(rows)} rows -> {out}")
    else:
        report.write_embeddings_csv(rows, out / "embeddings.csv")
        freeze_config(cp, out)
        write_manifest(out)
        print(f"embed: {len(rows)} rows -> {out / 'embeddings.csv'}")


# --------------------------------------------------------------------------
# Argument parsing.

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI config file")
    common.add_argument("--set", action="append", default=[],
                        metavar="SEC.KEY=VAL",
                        help="override a config value (repeatable)")
    common.add_argument("--seed", type=int, help="global seed (overrides "
                        "config; env MPG_SEED is the fallback)")
    common.add_argument("--threads", type=int, default=0,
                        help="cap numeric worker threads")
    p = argparse.ArgumentParser(
        prog="machineseq",
        description="Machining-operation sequence prediction pipeline")
    sub = p.add_subparsers(dest="command", required=True)

    def add_parser(name, **kw):
        return sub.add_parser(name, parents=[common], **kw)

    s = add_parser("gen", help="synthesize the part dataset")
    s.add_argument("--grid", help="JSON parameter grid (default: built-in)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_gen)

    s = add_parser("extract", help="meshes + specs -> graph caches")
    s.add_argument("--data", required=True, help="gen output directory")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_extract)

    s = add_parser("train", help="train the model")
    s.add_argument("--data", required=True, help="extract output directory")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = add_parser("eval", help="evaluate a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--mode", choices=["tf", "ar"], default="tf")
    s.add_argument("--split", choices=["train", "test"], default="test")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_eval)

    s = add_parser("sweep", help="hyperparameter sweep")
    s.add_argument("--data", required=True)
    s.add_argument("--grid", help="JSON list of train-config overrides")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sweep)

    s = add_parser("ablate", help="train ablation variants")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_ablate)

    s = add_parser("embed", help="export decoder embeddings")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True, help="CSV file or directory")
    s.set_defaults(func=cmd_embed)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        _apply_threads(args.threads)
        cp = load_config(args.config, args.set, args.seed)
        args.func(args, cp)
    except MachineSeqError as exc:
        print(f"machineseq: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"machineseq: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
