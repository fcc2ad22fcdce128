"""Training loop, validation-driven checkpoint selection, ablation grids.

A run directory holds the vocabulary, a model.json sidecar describing
dims and decoding defaults, per-step loss CSV, per-epoch validation CSV,
one checkpoint per epoch, and `best.ukpc` selected by validation
total-keyphrase F1@M. Fixed seed plus single-threaded execution gives
bit-identical logs across runs.
"""

from __future__ import annotations

import json
import math
import os
import time
from dataclasses import replace

import numpy as np

from .autodiff import Graph, NonFiniteError, backward, gather_rows
from .data import Vocabulary, assemble, build_vocab, prepare_sample, read_jsonl, sample_rng
from .decode import predict
from .losses import Schedule, akg_loss, bow_constraint, bwc_weight, pke_loss, total_loss
from .metrics import evaluate
from .model import EncoderConfig, KeyphraseModel
from .params import adam_step, load_checkpoint, save_checkpoint

STEP_FIELDS = ["step", "L_PKE", "L_AKG", "L_BoW", "w_BoW", "total"]
EPOCH_FIELDS = [
    "epoch", "present_f1_5", "present_f1_m", "absent_f1_5", "absent_f1_m",
    "total_f1_m", "bow_error", "is_best",
]


class TrainingDiverged(RuntimeError):
    pass


def _encoded_length(sample, max_len):
    """Total assembled length; constant across epochs (masking keeps length)."""
    n_tgt = sum(len(p) for p in sample.absent) + max(0, len(sample.absent) - 1)
    m = min(len(sample.doc_tokens), max_len - n_tgt - 3)
    return m + n_tgt + 3


def _length_bucketed_batches(lengths, batch_size, rng):
    """Shuffled batches with similar lengths to keep padding small.

    Shuffle, sort within pools of 8 batches, carve batches, shuffle batch
    order; everything driven by the per-epoch rng for reproducibility.
    """
    order = rng.permutation(len(lengths))
    pool = batch_size * 8
    batches = []
    for p0 in range(0, len(order), pool):
        chunk = order[p0 : p0 + pool]
        chunk = chunk[np.argsort(lengths[chunk], kind="stable")]
        batches.extend(chunk[i : i + batch_size] for i in range(0, len(chunk), batch_size))
    return [batches[i] for i in rng.permutation(len(batches))]


def encoder_config(cfg, vocab_size):
    return EncoderConfig(
        vocab_size=vocab_size,
        d_model=cfg.d_model,
        n_heads=cfg.n_heads,
        n_layers=cfg.n_layers,
        ff_width=cfg.ff_width,
        dropout=cfg.dropout,
        max_len=cfg.max_len,
        srl_layers=cfg.srl_layers,
    )


def load_model(ckpt_path):
    """Rebuild a model from a checkpoint plus its sidecar files."""
    run_dir = os.path.dirname(os.path.abspath(ckpt_path))
    with open(os.path.join(run_dir, "model.json"), encoding="utf-8") as f:
        meta = json.load(f)
    vocab = Vocabulary.load(os.path.join(run_dir, "vocab.txt"))
    store = load_checkpoint(ckpt_path)
    model = KeyphraseModel(EncoderConfig(**meta["encoder"]), store=store)
    return model, vocab, meta


def validate(model, vocab, records, beam_size, max_target_len):
    preds = []
    for rec in records:
        ps = predict(model, vocab, rec["document"], beam_size=beam_size,
                     max_target_len=max_target_len, sample_id=rec["id"])
        preds.append(ps.to_record())
    return evaluate(records, preds), preds


def train_run(cfg):
    """Train per config; returns the run summary dict (also saved to disk)."""
    t_start = time.time()
    os.makedirs(cfg.checkpoint_dir, exist_ok=True)
    train_records = read_jsonl(cfg.train_corpus)
    valid_records = read_jsonl(cfg.valid_corpus)[: cfg.val_subset]
    if not train_records:
        raise ValueError(f"no training records in {cfg.train_corpus}")

    vocab = build_vocab(train_records, cfg.vocab_max_size)
    vocab.save(os.path.join(cfg.checkpoint_dir, "vocab.txt"))
    enc_cfg = encoder_config(cfg, len(vocab))
    with open(os.path.join(cfg.checkpoint_dir, "model.json"), "w", encoding="utf-8") as f:
        json.dump(
            {"encoder": enc_cfg.to_dict(), "beam_size": cfg.beam_size,
             "max_target_len": cfg.max_target_len, "mask_prob": cfg.mask_prob,
             "config": cfg.to_dict()},
            f, indent=2,
        )

    samples = [prepare_sample(r, vocab) for r in train_records]
    gold_token_ids = [
        [vocab.id(t) for phrase in s.gold for t in phrase] for s in samples
    ]
    lengths = np.array([_encoded_length(s, cfg.max_len) for s in samples])

    model = KeyphraseModel(enc_cfg, seed=cfg.seed)
    store = model.store
    n = len(samples)
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    t_total = cfg.epochs * steps_per_epoch
    schedule = Schedule(cfg.w_m, t_total) if cfg.w_m > 0 else None
    warmup_steps = max(1, int(round(cfg.warmup * t_total)))
    drop_rng = np.random.default_rng([cfg.seed, 777])

    step_log = open(os.path.join(cfg.checkpoint_dir, "steps.csv"), "w", encoding="utf-8")
    step_log.write(",".join(STEP_FIELDS) + "\n")
    epoch_log = open(os.path.join(cfg.checkpoint_dir, "epochs.csv"), "w", encoding="utf-8")
    epoch_log.write(",".join(EPOCH_FIELDS) + "\n")

    step = 0
    best = {"total_f1_m": -1.0, "epoch": 0, "report": None}
    last_epoch_losses = []
    try:
        for epoch in range(1, cfg.epochs + 1):
            batches = _length_bucketed_batches(
                lengths, cfg.batch_size, np.random.default_rng([cfg.seed, epoch]))
            epoch_losses = []
            for batch in batches:
                inv = 1.0 / len(batch)
                try:
                    with Graph() as g:
                        encs = [
                            assemble(samples[si], vocab, cfg.mask_prob, cfg.max_len,
                                     sample_rng(cfg.seed, samples[si].id, epoch))
                            for si in batch
                        ]
                        y_p, y_a, doc_slices, mask_slices = model.forward_batch(
                            encs, train=True, rng=drop_rng)
                        l_pke = pke_loss(y_p, np.concatenate([e.labels for e in encs]), cfg.w_c) * inv
                        l_akg = akg_loss(y_a, np.concatenate([e.gold_ids for e in encs])) * inv
                        l_bow = None
                        for b, (e, si) in enumerate(zip(encs, batch)):
                            y_p_b = gather_rows(y_p, np.arange(*doc_slices[b]))
                            y_a_b = gather_rows(y_a, np.arange(*mask_slices[b]))
                            lb = bow_constraint(y_p_b, y_a_b, e.ids[e.doc_positions],
                                                gold_token_ids[si], dynamic=cfg.bow_dynamic_vocab)
                            l_bow = lb if l_bow is None else l_bow + lb
                        l_bow = l_bow * inv
                        loss = total_loss(l_pke, l_akg, l_bow, step, schedule)
                except NonFiniteError as exc:
                    row = [step, np.nan, np.nan, np.nan, np.nan, np.nan]
                    _dump_divergence(cfg, row, str(exc))
                    raise TrainingDiverged(f"non-finite forward at step {step}: {exc}") from exc
                w = bwc_weight(step, schedule) if schedule else 0.0
                row = [step, float(l_pke.data), float(l_akg.data), float(l_bow.data),
                       w, float(loss.data)]
                if not np.isfinite(row[-1]):
                    _dump_divergence(cfg, row, "non-finite loss")
                    raise TrainingDiverged(f"non-finite loss at step {step}: {row}")
                backward(loss, g, store)
                lr_t = cfg.lr * min(1.0, (step + 1) / warmup_steps)
                adam_step(store, lr_t)
                step_log.write(",".join(repr(v) for v in row) + "\n")
                epoch_losses.append(row)
                step += 1
            step_log.flush()
            last_epoch_losses = epoch_losses

            report, _ = validate(model, vocab, valid_records, cfg.beam_size, cfg.max_target_len)
            is_best = report.total_f1_m > best["total_f1_m"]
            if is_best:
                best = {"total_f1_m": report.total_f1_m, "epoch": epoch, "report": report.to_dict()}
                save_checkpoint(store, os.path.join(cfg.checkpoint_dir, "best.ukpc"))
            save_checkpoint(store, os.path.join(cfg.checkpoint_dir, f"epoch_{epoch:03d}.ukpc"))
            epoch_log.write(",".join(repr(v) for v in [
                epoch, report.present_f1_5, report.present_f1_m, report.absent_f1_5,
                report.absent_f1_m, report.total_f1_m, report.bow_error, int(is_best),
            ]) + "\n")
            epoch_log.flush()
    finally:
        step_log.close()
        epoch_log.close()

    final_train = {
        "l_pke": float(np.mean([r[1] for r in last_epoch_losses])),
        "l_akg": float(np.mean([r[2] for r in last_epoch_losses])),
        "l_bow": float(np.mean([r[3] for r in last_epoch_losses])),
    }
    summary = {
        "config": cfg.to_dict(),
        "best_epoch": best["epoch"],
        "best": best["report"],
        "final_train": final_train,
        "steps": step,
        "wall_seconds": time.time() - t_start,
    }
    with open(os.path.join(cfg.checkpoint_dir, "summary.json"), "w", encoding="utf-8") as f:
        json.dump(summary, f, indent=2)
    return summary


def _dump_divergence(cfg, row, reason):
    path = os.path.join(cfg.checkpoint_dir, "divergence.json")
    row = [v if np.isfinite(v) else str(v) for v in row]
    with open(path, "w", encoding="utf-8") as f:
        json.dump({"fields": STEP_FIELDS, "row": row, "reason": reason,
                   "config": cfg.to_dict()}, f, indent=2)


DEFAULT_ARMS = [
    {"name": "full", "overrides": {}},
    {"name": "no_srl", "overrides": {"srl_layers": 0}},
    {"name": "no_bwc", "overrides": {"w_m": 0.0}},
    {"name": "depth_0", "overrides": {"srl_layers": 0}},
    {"name": "depth_1", "overrides": {"srl_layers": 1}},
    {"name": "depth_2", "overrides": {"srl_layers": 2}},
    {"name": "depth_3", "overrides": {"srl_layers": 3}},
]

GRID_FIELDS = [
    "arm", "seed", "best_epoch", "present_f1_5", "present_f1_m", "absent_f1_5",
    "absent_f1_m", "total_f1_m", "bow_error", "final_l_pke", "final_l_akg", "final_l_bow",
]


def run_grid(base_cfg, grid):
    """Train every (arm, seed) pair on identical data; returns result rows.

    grid: {"seeds": [...], "arms": [{"name", "overrides"}, ...]} or
    {"preset": "default", "seeds": [...]} for the standard ablation arms.
    """
    arms = DEFAULT_ARMS if grid.get("preset") == "default" else grid["arms"]
    seeds = grid.get("seeds", [base_cfg.seed])
    rows = []
    for arm in arms:
        for seed in seeds:
            sub = os.path.join(base_cfg.checkpoint_dir, f"{arm['name']}-seed{seed}")
            cfg = replace(base_cfg, seed=seed, checkpoint_dir=sub, **arm.get("overrides", {}))
            summary = train_run(cfg)
            report = summary["best"] or {}
            rows.append({
                "arm": arm["name"],
                "seed": seed,
                "best_epoch": summary["best_epoch"],
                "present_f1_5": report.get("present_f1_5", 0.0),
                "present_f1_m": report.get("present_f1_m", 0.0),
                "absent_f1_5": report.get("absent_f1_5", 0.0),
                "absent_f1_m": report.get("absent_f1_m", 0.0),
                "total_f1_m": report.get("total_f1_m", 0.0),
                "bow_error": report.get("bow_error", 0.0),
                "final_l_pke": summary["final_train"]["l_pke"],
                "final_l_akg": summary["final_train"]["l_akg"],
                "final_l_bow": summary["final_train"]["l_bow"],
            })
    return rows


def write_grid_csv(rows, path):
    with open(path, "w", encoding="utf-8") as f:
        f.write(",".join(GRID_FIELDS) + "\n")
        for row in rows:
            f.write(",".join(repr(row[k]) for k in GRID_FIELDS) + "\n")
