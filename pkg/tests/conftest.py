"""Session-scoped trained models shared by the acceptance and e2e tests.

Both fixtures train real models, so the first test needing them pays the
wall-clock cost once (a few minutes for the default run).
"""

import os
import time

import pytest

from jointkp.config import RunConfig
from jointkp.corpus import CorpusSpec, gen_corpus
from jointkp.data import write_jsonl
from jointkp.train import run_grid, train_run


@pytest.fixture(scope="session")
def default_run(tmp_path_factory):
    """Default corpus (vocab ~200, 2000 docs) trained with the default config."""
    root = tmp_path_factory.mktemp("default_run")
    data = os.path.join(root, "data")
    os.makedirs(data)
    train, valid, test = gen_corpus(CorpusSpec())
    paths = {}
    for name, records in (("train", train), ("valid", valid), ("test", test)):
        paths[name] = os.path.join(data, f"{name}.jsonl")
        write_jsonl(records, paths[name])
    cfg = RunConfig(train_corpus=paths["train"], valid_corpus=paths["valid"],
                    checkpoint_dir=os.path.join(root, "run"))
    t0 = time.time()
    summary = train_run(cfg)
    return {
        "cfg": cfg,
        "summary": summary,
        "wall_seconds": time.time() - t0,
        "paths": paths,
        "run_dir": cfg.checkpoint_dir,
        "best_ckpt": os.path.join(cfg.checkpoint_dir, "best.ukpc"),
        "test_records": test,
    }


ABLATION_SEEDS = [1, 2, 3]


@pytest.fixture(scope="session")
def ablation_runs(tmp_path_factory):
    """3-seed grid over {full, no relation stack, no bag constraint} on a
    reduced corpus; identical data and seeds across arms. Lighter dropout
    and a faster rate let every arm reach generation competence within
    the suite's budget."""
    root = tmp_path_factory.mktemp("ablation")
    data = os.path.join(root, "data")
    os.makedirs(data)
    train, valid, _ = gen_corpus(CorpusSpec(n_docs=800, seed=21))
    train_path = os.path.join(data, "train.jsonl")
    valid_path = os.path.join(data, "valid.jsonl")
    write_jsonl(train, train_path)
    write_jsonl(valid, valid_path)
    cfg = RunConfig(epochs=30, val_subset=32, dropout=0.1, lr=2e-3,
                    train_corpus=train_path, valid_corpus=valid_path,
                    checkpoint_dir=os.path.join(root, "runs"))
    grid = {"seeds": ABLATION_SEEDS,
            "arms": [{"name": "full", "overrides": {}},
                     {"name": "no_srl", "overrides": {"srl_layers": 0}},
                     {"name": "no_bwc", "overrides": {"w_m": 0.0}}]}
    rows = run_grid(cfg, grid)
    return {"cfg": cfg, "rows": rows, "run_root": cfg.checkpoint_dir}
