"""Joint keyphrase extraction and generation, trained from scratch on
synthetic corpora with a numpy reverse-mode autodiff core."""

__version__ = "0.1.0"

from .autodiff import Graph, Tensor, backward, grad_check
from .config import RunConfig, load_config
from .corpus import CorpusSpec, gen_corpus
from .data import Sample, Vocabulary, assemble, build_vocab, tokenize
from .decode import PredictionSet, predict
from .metrics import EvalReport, evaluate, f1_at_5, f1_at_m
from .model import EncoderConfig, KeyphraseModel
from .params import ParameterStore, adam_step, load_checkpoint, save_checkpoint
from .train import train_run

__all__ = [
    "Graph", "Tensor", "backward", "grad_check",
    "RunConfig", "load_config",
    "CorpusSpec", "gen_corpus",
    "Sample", "Vocabulary", "assemble", "build_vocab", "tokenize",
    "PredictionSet", "predict",
    "EvalReport", "evaluate", "f1_at_5", "f1_at_m",
    "EncoderConfig", "KeyphraseModel",
    "ParameterStore", "adam_step", "load_checkpoint", "save_checkpoint",
    "train_run",
]
