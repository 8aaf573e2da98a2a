"""Full-scale training run plus ablation study.

Generates the built-in dataset, trains the reference configuration
(batch 128, lr 0.001, 20 epochs), then trains the encoder and decoder-mode
ablation variants on a reduced subset of the same splits.  Results are
written as JSON to tests/data/fullscale.json so the acceptance tests can
assert against a recorded run without repeating the multi-hour training.

Run from the repository root:  python3 -u scripts/run_fullscale.py
"""

import dataclasses
import json
import os
import pathlib
import sys
import time

os.environ.setdefault("OMP_NUM_THREADS", "1")
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "src"))

from machineseq import synth, training
from machineseq.model import ModelConfig

SEED = 0
OUT = pathlib.Path(__file__).resolve().parents[1] / "tests" / "data"
OUT.mkdir(parents=True, exist_ok=True)

# Ablation variants train on a subset of the same splits so the three-way
# comparison stays affordable; all variants share identical data and seed.
ABLATION_TRAIN = 720
ABLATION_TEST = 180
ABLATION_EPOCHS = 10


def report_dict(rep):
    return {head: dict(zip(("accuracy", "f1", "precision", "recall"),
                           getattr(rep, head).row()))
            for head in ("main", "sub", "joint")}


def log(msg):
    print(f"[{time.strftime('%H:%M:%S')}] {msg}", flush=True)


def main():
    t0 = time.time()
    log("generating dataset")
    samples = synth.generate_dataset(SEED, synth.default_grid())
    log(f"{len(samples)} samples")

    log("extracting graphs + normalizing")
    train_data, test_data, _stats = training.prepare_splits(samples, 0.8, SEED)
    log(f"train {len(train_data)}  test {len(test_data)}")
    prep_seconds = time.time() - t0

    model_cfg = ModelConfig()
    train_cfg = training.TrainConfig(batch_size=128, learning_rate=0.001,
                                     epochs=20, seed=SEED)

    log("training reference configuration")
    t1 = time.time()
    best, result, reports = training.run_config(train_data, test_data,
                                                model_cfg, train_cfg, log=log)
    train_seconds = time.time() - t1
    log(f"reference run done in {train_seconds/3600:.2f} h")
    (OUT / "fullscale_best.ckpt").write_bytes(result.best_checkpoint)

    payload = {
        "seed": SEED,
        "dataset": {"n_samples": len(samples), "n_train": len(train_data),
                    "n_test": len(test_data)},
        "model_config": dataclasses.asdict(model_cfg),
        "train_config": dataclasses.asdict(train_cfg),
        "prep_seconds": prep_seconds,
        "train_seconds": train_seconds,
        "best_epoch": result.best_epoch,
        "history": result.history,
        "metrics": {split: report_dict(rep) for split, rep in reports.items()},
    }
    with open(OUT / "fullscale.json", "w") as fh:
        json.dump(payload, fh, indent=2)
    log("wrote fullscale.json (reference metrics)")

    log("running ablations on reduced subset")
    t2 = time.time()
    ab_train = train_data[:ABLATION_TRAIN]
    ab_test = test_data[:ABLATION_TEST]
    ab_cfg = training.TrainConfig(batch_size=128, learning_rate=0.001,
                                  epochs=ABLATION_EPOCHS, seed=SEED)
    rows = training.run_ablations(ab_train, ab_test, model_cfg, ab_cfg, log=log)
    payload["ablation"] = {
        "n_train": len(ab_train), "n_test": len(ab_test),
        "epochs": ABLATION_EPOCHS, "seconds": time.time() - t2,
        "rows": [{"variant": r["variant"],
                  "best_epoch": r["result"].best_epoch,
                  "metrics": {split: report_dict(rep)
                              for split, rep in r["reports"].items()}}
                 for r in rows],
    }
    with open(OUT / "fullscale.json", "w") as fh:
        json.dump(payload, fh, indent=2)
    log(f"done; total {(time.time()-t0)/3600:.2f} h")


if __name__ == "__main__":
    main()
