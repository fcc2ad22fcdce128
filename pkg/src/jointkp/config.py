"""Run configuration: flat `key = value` files, strict about unknown keys.

The UKP_SEED environment variable overrides the configured seed.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields

from .corpus import CorpusSpec


@dataclass
class RunConfig:
    # model dims
    d_model: int = 64
    n_heads: int = 4
    n_layers: int = 2
    srl_layers: int = 2
    ff_width: int = 128
    # objective / schedule
    mask_prob: float = 0.7
    w_c: float = 5.0
    w_m: float = 1.0  # 0 disables the bag constraint (ablation arm)
    bow_dynamic_vocab: bool = True
    # decoding
    beam_size: int = 5
    max_target_len: int = 16
    # optimization
    lr: float = 1e-3
    warmup: float = 0.1
    epochs: int = 30
    batch_size: int = 16
    max_len: int = 128
    seed: int = 13
    dropout: float = 0.5
    # data / io
    vocab_max_size: int = 220
    val_subset: int = 96
    train_corpus: str = "data/train.jsonl"
    valid_corpus: str = "data/valid.jsonl"
    checkpoint_dir: str = "runs/default"

    def __post_init__(self):
        for name in ("d_model", "n_heads", "n_layers", "ff_width", "beam_size",
                     "max_target_len", "epochs", "batch_size", "max_len", "vocab_max_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not 0.0 < self.mask_prob <= 1.0:
            raise ValueError("mask_prob must be in (0, 1]")
        if self.w_m < 0 or self.w_c <= 0:
            raise ValueError("w_m must be >= 0 and w_c > 0")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if not 0.0 <= self.warmup <= 1.0:
            raise ValueError("warmup must be a proportion")

    def to_dict(self):
        return dict(self.__dict__)


def _coerce(name, raw, target_type):
    raw = raw.strip()
    if target_type is bool:
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"{name}: expected a boolean, got {raw!r}")
    if target_type is int:
        return int(raw)
    if target_type is float:
        return float(raw)
    return raw


def parse_kv_file(path, cls):
    """Parse flat `key = value` lines into a dataclass; unknown keys error."""
    known = {f.name: f.type for f in fields(cls)}
    type_map = {"int": int, "float": float, "bool": bool, "str": str}
    values = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected `key = value`, got {line!r}")
            key, _, raw = line.partition("=")
            key = key.strip()
            if key not in known:
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
            t = known[key]
            if isinstance(t, str):
                t = type_map.get(t, str)
            values[key] = _coerce(key, raw, t)
    return cls(**values)


def load_config(path):
    cfg = parse_kv_file(path, RunConfig)
    env_seed = os.environ.get("UKP_SEED")
    if env_seed is not None:
        cfg.seed = int(env_seed)
    return cfg


def load_corpus_spec(path):
    return parse_kv_file(path, CorpusSpec)


def write_config(cfg, path):
    with open(path, "w", encoding="utf-8") as f:
        for k, v in cfg.to_dict().items():
            f.write(f"{k} = {v}\n")
