"""Library entry points that the CLI wraps: build data, train a run, evaluate a run."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import torch

from .checkpoint import CheckpointError, load_checkpoint
from .config import check_data_files, hyperparameters, ablation as ablation_of, write_config
from .corpus import ConfigError, Tokenizer, load_conversations, load_domain_vocabulary, split_conversations
from .embedder import make_embedder
from .evaluator import EvalReport, evaluate
from .kg import load_graph
from .pointer import DomainVocabulary
from .trainer import RunData, TrainResult, eval_options, train

CONFIG_NAME = "config.json"
TRAINLOG_NAME = "trainlog.csv"
BEST_CKPT = "best.ckpt"


def build_run_data(cfg: dict, tokenizer: Tokenizer | None = None, domain_labels: list[str] | None = None) -> RunData:
    check_data_files(cfg)
    d = cfg["data"]
    graph = load_graph(d["triples"], d["labels"])
    convs = load_conversations(d["conversations"])
    labels = domain_labels or load_domain_vocabulary(d["domains"])
    tr, va, te = split_conversations(convs, d["split"], d["split_seed"])
    e = cfg["embedder"]
    emb = make_embedder(e["method"], e["dim"], e["seed"], e["cache_dir"])
    if tokenizer is None:
        return RunData.build(graph, tr, va, te, labels, emb)
    return RunData(graph, tr, va, te, DomainVocabulary.from_embedder(labels, emb), emb, tokenizer)


def train_run(cfg: dict, out_dir: str | Path, progress=None) -> TrainResult:
    """Train per ``cfg``; writes the effective config, TrainLog and checkpoints."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = dict(cfg, output_dir=str(out))
    write_config(cfg, out / CONFIG_NAME)
    data = build_run_data(cfg)
    result = train(data, hyperparameters(cfg), ablation_of(cfg), out_dir=out, progress=progress)
    if data.embedder.cache is not None:
        data.embedder.cache.save()
    return result


@dataclass
class LoadedRun:
    cfg: dict
    model: torch.nn.Module
    manifest: dict
    data: RunData


def load_run(run_dir: str | Path, checkpoint: str = BEST_CKPT) -> LoadedRun:
    run = Path(run_dir)
    if not run.is_dir():
        raise ConfigError(f"run directory not found: {run}")
    cfg_path = run / CONFIG_NAME
    if not cfg_path.exists():
        raise ConfigError(f"{run} has no {CONFIG_NAME}")
    cfg = json.loads(cfg_path.read_text(encoding="utf-8"))
    if not (run / (checkpoint + ".json")).exists():
        raise CheckpointError(f"{run} has no checkpoint {checkpoint}")
    model, manifest = load_checkpoint(run / checkpoint)
    data = build_run_data(cfg, Tokenizer(manifest["tokenizer"]), manifest["domains"])
    return LoadedRun(cfg, model, manifest, data)


def eval_run(run: LoadedRun, split: str = "test", **options) -> tuple[EvalReport, list]:
    convs = {"test": run.data.test, "valid": run.data.valid, "train": run.data.train}.get(split)
    if convs is None:
        raise ConfigError(f"unknown split {split!r}")
    opts = eval_options(hyperparameters(run.cfg), ablation_of(run.cfg), **options)
    d = run.data
    return evaluate(run.model, convs, d.graph, d.embedder, d.tokenizer, d.domains, opts, keep_rankings=True)
