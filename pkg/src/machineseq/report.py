"""CSV and figure emission for training runs, sweeps, and ablations.

All figures are rendered headless (Agg) next to the delimited output so a run
directory is self-contained and diffable.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .synth import MAIN_OPS, SUB_OPS  # noqa: E402

_PNG_META = {"Software": "machineseq"}

HEADS = ("main", "sub", "joint")
METRIC_NAMES = ("accuracy", "f1", "precision", "recall")


def write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, float):
        return f"{x:.10g}"
    return x


# --------------------------------------------------------------------------
# Loss curves.

def write_loss_curves(history, csv_path):
    write_csv(csv_path, ["epoch", "train_loss", "test_loss"],
              [[e, _fmt(tr), _fmt(te)] for e, tr, te in history])


def render_loss_curves(history, png_path):
    epochs = [h[0] for h in history]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(epochs, [h[1] for h in history], label="train", marker="o", ms=3)
    if any(h[2] is not None for h in history):
        ax.plot(epochs, [h[2] for h in history], label="test", marker="s", ms=3)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_title("Sequence cross-entropy per epoch")
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(png_path, dpi=120, metadata=_PNG_META)
    plt.close(fig)


# --------------------------------------------------------------------------
# Metrics.

def metrics_rows(tag, split, report):
    """CSV rows (tag, split, mode, head, accuracy, f1, precision, recall)."""
    rows = []
    for head in HEADS:
        hm = getattr(report, head)
        rows.append([tag, split, report.mode, head] + [_fmt(v) for v in hm.row()])
    return rows


METRICS_HEADER = ["tag", "split", "mode", "head"] + list(METRIC_NAMES)


def write_metrics_csv(rows, path):
    write_csv(path, METRICS_HEADER, rows)


def format_metrics_table(tagged_reports):
    """Human-readable table from (tag, split, MetricsReport) triples."""
    lines = [f"{'tag':20s} {'split':6s} {'mode':4s} {'head':6s} "
             f"{'acc':>7s} {'f1':>7s} {'prec':>7s} {'rec':>7s}"]
    for tag, split, rep in tagged_reports:
        for head in HEADS:
            hm = getattr(rep, head)
            lines.append(f"{tag:20s} {split:6s} {rep.mode:4s} {head:6s} "
                         f"{hm.accuracy:7.4f} {hm.f1:7.4f} "
                         f"{hm.precision:7.4f} {hm.recall:7.4f}")
    return "\n".join(lines) + "\n"


def render_metric_bars(entries, png_path, title, metric="accuracy"):
    """Grouped bars: one group per entry tag, one bar per head."""
    tags = [t for t, _rep in entries]
    fig, ax = plt.subplots(figsize=(max(6, 1.6 * len(tags)), 4))
    width = 0.25
    for k, head in enumerate(HEADS):
        vals = [getattr(getattr(rep, head), metric) for _t, rep in entries]
        ax.bar([i + (k - 1) * width for i in range(len(tags))], vals,
               width=width, label=head)
    ax.set_xticks(range(len(tags)))
    ax.set_xticklabels(tags, rotation=20, ha="right")
    ax.set_ylim(0, 1)
    ax.set_ylabel(metric)
    ax.set_title(title)
    ax.legend()
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(png_path, dpi=120, metadata=_PNG_META)
    plt.close(fig)


# --------------------------------------------------------------------------
# Predictions / embeddings / label distribution.

def write_predictions_csv(report, path):
    write_csv(path,
              ["sample_id", "t", "true_main", "true_sub", "pred_main", "pred_sub"],
              [[sid, t, MAIN_OPS[tm], SUB_OPS[ts], MAIN_OPS[pm], SUB_OPS[ps]]
               for sid, t, tm, ts, pm, ps in report.predictions])


def write_embeddings_csv(rows, path):
    if not rows:
        write_csv(path, ["sample_id", "t", "main", "sub"], [])
        return
    d = len(rows[0][2])
    header = ["sample_id", "t", "main", "sub"] + [f"e{i}" for i in range(d)]
    write_csv(path, header,
              [[sid, t, main, sub] + [f"{v:.10g}" for v in vec]
               for sid, t, vec, main, sub in rows])


def render_label_distribution(label_sequences, png_path):
    counts = {name: 0 for name in SUB_OPS}
    for labels in label_sequences:
        for lab in labels:
            counts[lab.sub] += 1
    fig, ax = plt.subplots(figsize=(8, 4))
    ax.bar(range(len(SUB_OPS)), [counts[n] for n in SUB_OPS])
    ax.set_xticks(range(len(SUB_OPS)))
    ax.set_xticklabels(SUB_OPS, rotation=35, ha="right", fontsize=8)
    ax.set_ylabel("operation count")
    ax.set_title("Sub-operation label distribution")
    fig.tight_layout()
    fig.savefig(png_path, dpi=120, metadata=_PNG_META)
    plt.close(fig)
