"""Command-line entry point: gen-data, train, predict, eval, ablate, diag."""

from __future__ import annotations

import argparse
import json
import os
import sys

from .config import load_config, load_corpus_spec
from .corpus import gen_corpus
from .data import read_jsonl, write_jsonl
from .metrics import EvalReport, evaluate


def _cmd_gen_data(args):
    spec = load_corpus_spec(args.spec)
    train, valid, test = gen_corpus(spec)
    os.makedirs(args.out, exist_ok=True)
    for name, records in (("train", train), ("valid", valid), ("test", test)):
        write_jsonl(records, os.path.join(args.out, f"{name}.jsonl"))
    print(f"wrote {len(train)}/{len(valid)}/{len(test)} train/valid/test docs to {args.out}")
    return 0


def _cmd_train(args):
    from .train import train_run

    cfg = load_config(args.config)
    summary = train_run(cfg)
    best = summary["best"] or {}
    print(
        f"done: best epoch {summary['best_epoch']} "
        f"total F1@M {best.get('total_f1_m', 0.0):.4f} "
        f"({summary['wall_seconds']:.1f}s, checkpoints in {cfg.checkpoint_dir})"
    )
    return 0


def _cmd_predict(args):
    from .decode import predict
    from .train import load_model

    model, vocab, meta = load_model(args.ckpt)
    beam = args.beam if args.beam else meta.get("beam_size", 5)
    max_tgt = meta.get("max_target_len", 16)
    records = read_jsonl(args.inp)
    out = []
    for rec in records:
        ps = predict(model, vocab, rec["document"], beam_size=beam,
                     max_target_len=max_tgt, sample_id=rec["id"])
        out.append(ps.to_record())
    write_jsonl(out, args.out)
    print(f"predicted {len(out)} documents -> {args.out}")
    return 0


def _cmd_eval(args):
    gold = read_jsonl(args.gold)
    pred = read_jsonl(args.pred)
    report = evaluate(gold, pred)
    with open(args.out, "w", encoding="utf-8") as f:
        f.write(report.to_json() + "\n")
    csv_path = args.csv or os.path.splitext(args.out)[0] + ".csv"
    with open(csv_path, "w", encoding="utf-8") as f:
        f.write(",".join(EvalReport.CSV_FIELDS) + "\n")
        f.write(",".join(report.csv_row()) + "\n")
    print(report.to_json())
    return 0


def _cmd_ablate(args):
    from .train import run_grid, write_grid_csv

    cfg = load_config(args.config)
    with open(args.grid, encoding="utf-8") as f:
        grid = json.load(f)
    rows = run_grid(cfg, grid)
    os.makedirs(cfg.checkpoint_dir, exist_ok=True)
    out_csv = os.path.join(cfg.checkpoint_dir, "ablation.csv")
    write_grid_csv(rows, out_csv)
    for row in rows:
        print(f"{row['arm']:>10} seed={row['seed']} total F1@M={row['total_f1_m']:.4f} "
              f"bow_error={row['bow_error']:.3f}")
    print(f"wrote {out_csv}")
    return 0


def _cmd_diag(args):
    from .report import diag

    diag(args.ckpt, args.out, data_path=args.data, n_pairs=args.pairs, seed=args.seed)
    print(f"diagnostics written to {args.out}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="jointkp", description="Joint keyphrase extraction and generation.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic corpus")
    g.add_argument("--spec", required=True, help="corpus spec file (key = value lines)")
    g.add_argument("--out", required=True, help="output directory")
    g.set_defaults(fn=_cmd_gen_data)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--config", required=True, help="run config file (key = value lines)")
    t.set_defaults(fn=_cmd_train)

    pr = sub.add_parser("predict", help="predict keyphrases for documents")
    pr.add_argument("--ckpt", required=True, help="checkpoint file")
    pr.add_argument("--in", dest="inp", required=True, help="input JSONL of documents")
    pr.add_argument("--out", required=True, help="output JSONL of predictions")
    pr.add_argument("--beam", type=int, default=0, help="override beam size")
    pr.set_defaults(fn=_cmd_predict)

    e = sub.add_parser("eval", help="score predictions against gold")
    e.add_argument("--gold", required=True)
    e.add_argument("--pred", required=True)
    e.add_argument("--out", required=True, help="report JSON path")
    e.add_argument("--csv", default=None, help="flat CSV row path (default: out with .csv)")
    e.set_defaults(fn=_cmd_eval)

    a = sub.add_parser("ablate", help="run an ablation grid")
    a.add_argument("--config", required=True)
    a.add_argument("--grid", required=True, help="JSON grid: arms/seeds or preset")
    a.set_defaults(fn=_cmd_ablate)

    d = sub.add_parser("diag", help="diagnostic CSVs and figures from runs")
    d.add_argument("--ckpt", action="append", required=True, help="checkpoint (repeatable)")
    d.add_argument("--out", required=True, help="output directory")
    d.add_argument("--data", default=None, help="JSONL corpus for stream-distance sampling")
    d.add_argument("--pairs", type=int, default=2000)
    d.add_argument("--seed", type=int, default=0)
    d.set_defaults(fn=_cmd_diag)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
