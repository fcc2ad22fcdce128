"""Diagnostics over finished runs: loss curves, bag-of-words error
series, and task-stream distance scatter data. Each series is written as
CSV next to a rendered PNG so results can be inspected directly or
re-plotted elsewhere.
"""

from __future__ import annotations

import csv
import os

import numpy as np

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .data import prepare_sample, read_jsonl, source_only_input
from .metrics import stream_distance
from .train import load_model


def _read_csv(path):
    with open(path, encoding="utf-8") as f:
        return list(csv.DictReader(f))


def _arm_name(ckpt_path):
    return os.path.basename(os.path.dirname(os.path.abspath(ckpt_path)))


def loss_curves(ckpt_paths, out_dir):
    rows_out = []
    fig, axes = plt.subplots(2, 2, figsize=(10, 7), sharex=True)
    panels = [("total", axes[0, 0]), ("L_PKE", axes[0, 1]), ("L_AKG", axes[1, 0]), ("L_BoW", axes[1, 1])]
    for ckpt in ckpt_paths:
        run_dir = os.path.dirname(os.path.abspath(ckpt))
        arm = _arm_name(ckpt)
        rows = _read_csv(os.path.join(run_dir, "steps.csv"))
        steps = [int(r["step"]) for r in rows]
        for key, ax in panels:
            ax.plot(steps, [float(r[key]) for r in rows], label=arm, linewidth=0.8)
        for r in rows:
            rows_out.append({"arm": arm, **r})
    for key, ax in panels:
        ax.set_title(key)
        ax.set_xlabel("step")
        ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(os.path.join(out_dir, "loss_curves.png"), dpi=120)
    plt.close(fig)
    _write_rows(rows_out, ["arm", "step", "L_PKE", "L_AKG", "L_BoW", "w_BoW", "total"],
                os.path.join(out_dir, "loss_curves.csv"))


def bow_error_series(ckpt_paths, out_dir):
    rows_out = []
    fig, ax = plt.subplots(figsize=(6, 4))
    for ckpt in ckpt_paths:
        run_dir = os.path.dirname(os.path.abspath(ckpt))
        arm = _arm_name(ckpt)
        rows = _read_csv(os.path.join(run_dir, "epochs.csv"))
        ax.plot([int(r["epoch"]) for r in rows], [float(r["bow_error"]) for r in rows],
                marker="o", markersize=3, label=arm)
        for r in rows:
            rows_out.append({"arm": arm, "epoch": r["epoch"], "bow_error": r["bow_error"]})
    ax.set_xlabel("epoch")
    ax.set_ylabel("bag-of-words error")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(os.path.join(out_dir, "bow_error.png"), dpi=120)
    plt.close(fig)
    _write_rows(rows_out, ["arm", "epoch", "bow_error"], os.path.join(out_dir, "bow_error.csv"))


def distance_series(ckpt_paths, data_path, out_dir, n_pairs=2000, max_docs=50, seed=0):
    records = read_jsonl(data_path)[:max_docs]
    rows_out = []
    summaries = []
    fig, ax = plt.subplots(figsize=(6, 4))
    for ckpt in ckpt_paths:
        arm = _arm_name(ckpt)
        model, vocab, meta = load_model(ckpt)
        encs = []
        for rec in records:
            s = prepare_sample(rec, vocab)
            if s.doc_tokens:
                encs.append(source_only_input(s.doc_tokens, vocab, model.config.max_len, sample_id=s.id))
        summary = stream_distance(model, encs, n_pairs, np.random.default_rng(seed))
        d = summary.pop("distances")
        summaries.append({"arm": arm, **summary})
        for i, v in enumerate(d):
            rows_out.append({"arm": arm, "pair": i, "distance": repr(v)})
        ax.scatter(range(len(d)), d, s=2, alpha=0.4, label=f"{arm} (mean {summary['mean']:.3f})")
    ax.set_xlabel("sampled pair")
    ax.set_ylabel("distance between task streams")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(os.path.join(out_dir, "stream_distance.png"), dpi=120)
    plt.close(fig)
    _write_rows(rows_out, ["arm", "pair", "distance"], os.path.join(out_dir, "stream_distance.csv"))
    _write_rows(summaries, ["arm", "n_pairs", "mean", "min", "max"],
                os.path.join(out_dir, "stream_distance_summary.csv"))


def _write_rows(rows, fields, path):
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.DictWriter(f, fieldnames=fields)
        w.writeheader()
        for r in rows:
            w.writerow(r)


def diag(ckpt_paths, out_dir, data_path=None, n_pairs=2000, seed=0):
    """Render every diagnostic available for the given checkpoints."""
    os.makedirs(out_dir, exist_ok=True)
    loss_curves(ckpt_paths, out_dir)
    bow_error_series(ckpt_paths, out_dir)
    if data_path:
        distance_series(ckpt_paths, data_path, out_dir, n_pairs=n_pairs, seed=seed)
