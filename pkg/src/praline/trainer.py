"""Joint training, the train-separately ablation and a finite-difference gradient check."""

from __future__ import annotations

import copy
import io
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
from torch import nn

from .checkpoint import save_checkpoint
from .corpus import (
    HISTORY_MODES,
    RESPONSE_MODES,
    Batch,
    ConfigError,
    Conversation,
    Tokenizer,
    TrainingInstance,
    build_input_sequence,
    build_target,
    corpus_texts,
    make_batches,
)
from .evaluator import EvalOptions, EvalReport, evaluate
from .kg import ContextPath, KnowledgeGraph, extract_context_paths, label_paths, verbalize_path
from .model import ModelConfig, Praline, StitchedPraline, build_model, pad_batch
from .pointer import DomainVocabulary
from .ranker import cosine_torch, ranking_loss_torch
from .seq2seq import decoder_nll, shift_right

TRAINLOG_HEADER = ("epoch", "L", "L_dm", "L_rk", "L_dec", "val_mrr", "val_h5")
TRAINING_MODES = ("joint", "separate")


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class Hyperparameters:
    d: int = 64
    layers: int = 2
    heads: int = 4
    d_ff: int = 256
    dropout: float = 0.1
    epochs: int = 30
    batch_size: int = 16
    lr: float = 1e-3
    weight_decay: float = 0.01
    clip_norm: float = 5.0
    lambdas: tuple[float, float, float] = (0.25, 1.0, 0.25)
    margin: float = 0.1
    max_hops: int = 3
    include_inverse: bool = False
    all_pairs: bool = False
    seed: int = 7

    @classmethod
    def profile(cls, name: str) -> "Hyperparameters":
        if name == "desk":
            return cls()
        if name == "full":
            return cls(d=768, layers=6, heads=12, d_ff=3072, epochs=120, batch_size=32, lr=1e-4)
        raise ConfigError(f"unknown profile {name!r}; choose 'desk' or 'full'")

    def validate(self) -> None:
        if self.batch_size < 2 or self.batch_size % 2:
            raise ConfigError(f"batch_size must be even and >= 2, got {self.batch_size}")
        if self.d % self.heads:
            raise ConfigError(f"d={self.d} is not divisible by heads={self.heads}")
        if len(self.lambdas) != 3 or any(x < 0 for x in self.lambdas):
            raise ConfigError("lambdas must be three non-negative weights")
        if not 0.0 <= self.margin < 1.0:
            raise ConfigError("margin must be in [0, 1)")
        if self.epochs < 1 or self.lr <= 0:
            raise ConfigError("epochs must be >= 1 and lr > 0")

    def model_config(self, vocab_size: int) -> ModelConfig:
        return ModelConfig(vocab_size, self.d, self.layers, self.heads, self.d_ff, self.dropout)


@dataclass(frozen=True)
class Ablation:
    history_mode: str = "full"
    response_mode: str = "fluent"
    use_domain: bool = True
    training_mode: str = "joint"

    def validate(self) -> None:
        if self.history_mode not in HISTORY_MODES:
            raise ConfigError(f"history_mode must be one of {HISTORY_MODES}")
        if self.response_mode not in RESPONSE_MODES:
            raise ConfigError(f"response_mode must be one of {RESPONSE_MODES}")
        if self.training_mode not in TRAINING_MODES:
            raise ConfigError(f"training_mode must be one of {TRAINING_MODES}")


ABLATIONS = {
    "full": Ablation(),
    "no_full_conv": Ablation(history_mode="previous_turn_only"),
    "no_domain": Ablation(use_domain=False),
    "no_fluent": Ablation(response_mode="bare_answer"),
    "separate": Ablation(training_mode="separate"),
}


def effective_lambdas(hp: Hyperparameters, ablation: Ablation) -> tuple[float, float, float]:
    l1, l2, l3 = hp.lambdas
    return (l1 if ablation.use_domain else 0.0, l2, l3)


def joint_loss(l_dm, l_rk, l_dec, lambdas: Sequence[float] = (0.25, 1.0, 0.25)):
    """lambda1 * L_dm + lambda2 * L_rk + lambda3 * L_dec; works on floats or tensors."""
    for name, v in (("L_dm", l_dm), ("L_rk", l_rk), ("L_dec", l_dec)):
        val = float(v.detach()) if isinstance(v, torch.Tensor) else float(v)
        if val < 0:
            raise ValueError(f"{name} must be non-negative, got {val}")
    l1, l2, l3 = lambdas
    return l1 * l_dm + l2 * l_rk + l3 * l_dec


# --------------------------------------------------------------------- data


@dataclass
class RunData:
    graph: KnowledgeGraph
    train: list[Conversation]
    valid: list[Conversation]
    test: list[Conversation]
    domains: DomainVocabulary
    embedder: object
    tokenizer: Tokenizer

    @classmethod
    def build(cls, graph, train, valid, test, domain_labels, embedder) -> "RunData":
        tok = Tokenizer.build(corpus_texts(train))
        return cls(graph, list(train), list(valid), list(test),
                   DomainVocabulary.from_embedder(domain_labels, embedder), embedder, tok)


def turn_paths(graph: KnowledgeGraph, conv: Conversation, t: int, max_hops: int, include_inverse: bool):
    turn = conv.turns[t]
    if turn.positives or turn.negatives:
        return list(turn.positives), list(turn.negatives)
    known = [e for e in turn.context_entities if e in graph.entities]
    if not known:
        return [], []
    return label_paths(extract_context_paths(graph, known, max_hops, include_inverse), turn.answers)


def build_instances(data: RunData, convs: Sequence[Conversation], hp: Hyperparameters, ablation: Ablation):
    out = []
    for conv in convs:
        dom = data.domains.index(conv.domain)
        for t, turn in enumerate(conv.turns):
            ids = build_input_sequence(conv, t, data.tokenizer, ablation.history_mode, ablation.response_mode)
            tgt, matched = build_target(turn.fluent_response, turn.answer_labels, data.tokenizer)
            pos, neg = turn_paths(data.graph, conv, t, hp.max_hops, hp.include_inverse)
            out.append(TrainingInstance(ids or [data.tokenizer.unk_id], tgt, dom, pos, neg, conv.id, t, matched))
    return out


class _PathVectors:
    def __init__(self, graph: KnowledgeGraph, embedder) -> None:
        self.graph, self.embedder = graph, embedder
        self._cache: dict[ContextPath, np.ndarray] = {}

    def __call__(self, paths: Sequence[ContextPath]) -> torch.Tensor:
        rows = []
        for p in paths:
            v = self._cache.get(p)
            if v is None:
                v = self.embedder.embed_text(verbalize_path(p, self.graph))
                self._cache[p] = v
            rows.append(v)
        return torch.as_tensor(np.stack(rows), dtype=torch.float64)


# ------------------------------------------------------------------- losses


@dataclass
class StepContext:
    tokenizer: Tokenizer
    domain_emb: torch.Tensor
    path_vectors: Callable[[Sequence[ContextPath]], torch.Tensor]
    use_domain: bool
    margin: float
    all_pairs: bool = False


def batch_losses(model: Praline, batch: Batch, ctx: StepContext, terms=("dm", "rk", "dec")) -> dict:
    """Mean per-batch L_dm, L_rk and L_dec (decoder NLL summed per sequence)."""
    tok = ctx.tokenizer
    insts = batch.instances
    ids, mask = pad_batch([i.input_ids for i in insts], tok.pad_id)
    enc = model.encode_batch(ids, mask)
    gold = torch.as_tensor([i.domain_id for i in insts], dtype=torch.long)
    zero = enc.pooled.sum() * 0.0
    out = {}
    if "dec" in terms:
        tgt, tmask = pad_batch([i.target_ids for i in insts], tok.pad_id)
        tgt_in = shift_right(tgt, tok.bos_id)
        in_mask = torch.cat([torch.ones_like(tmask[:, :1]), tmask[:, :-1]], dim=1)
        logits = model.decoder_logits(enc, tgt_in, in_mask)
        out["dec"] = decoder_nll(logits, tgt, tok.pad_id).mean()
    if "dm" in terms:
        if ctx.use_domain:
            logp = model.domain_logprobs(enc, ctx.domain_emb)
            out["dm"] = -logp[torch.arange(len(insts)), gold].mean()
        else:
            out["dm"] = zero
    if "rk" in terms:
        rows = [j for j, lab in enumerate(batch.rk_labels) if lab != 0]
        if not rows:
            out["rk"] = zero
        else:
            if ctx.use_domain:
                dvec = ctx.domain_emb[gold]
            else:
                dvec = torch.zeros(len(insts), ctx.domain_emb.shape[1], dtype=enc.pooled.dtype)
            phi_c = model.conversation_embedding(enc, dvec)[rows]
            paths = [batch.sampled_paths[j] for j in rows]
            phi_p = model.path_embedding(ctx.path_vectors(paths))
            if ctx.all_pairs:
                cos = cosine_torch(phi_c[:, None, :], phi_p[None, :, :])
                y = torch.tensor(
                    [[1.0 if p in set(insts[i].positives) else -1.0 for p in paths] for i in rows],
                    dtype=cos.dtype,
                )
            else:
                cos = cosine_torch(phi_c, phi_p)
                y = torch.as_tensor([float(batch.rk_labels[j]) for j in rows], dtype=cos.dtype)
            out["rk"] = ranking_loss_torch(cos, y, ctx.margin).mean()
            out["hinge_active"] = tuple(bool(c > ctx.margin) for c in cos.detach()[y < 0].reshape(-1))
    return out


# ----------------------------------------------------------------- TrainLog


@dataclass
class TrainLog:
    rows: list[dict] = field(default_factory=list)

    def append(self, **row) -> None:
        self.rows.append(row)

    def column(self, key: str) -> list:
        return [r[key] for r in self.rows]

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(",".join(TRAINLOG_HEADER) + "\n")
        for r in self.rows:
            buf.write(",".join(str(r["epoch"]) if k == "epoch" else repr(float(r[k])) for k in TRAINLOG_HEADER))
            buf.write("\n")
        return buf.getvalue()

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv(), encoding="utf-8")


@dataclass
class TrainResult:
    model: nn.Module
    log: TrainLog
    best_epoch: int
    best_val: EvalReport | None
    data: RunData
    hp: Hyperparameters
    ablation: Ablation

    def eval_options(self, **kw) -> EvalOptions:
        return eval_options(self.hp, self.ablation, **kw)

    def run_config(self) -> dict:
        return run_config(self.hp, self.ablation, self.model.cfg)


def eval_options(hp: Hyperparameters, ablation: Ablation, **kw) -> EvalOptions:
    return EvalOptions(
        history_mode=ablation.history_mode,
        response_mode=ablation.response_mode,
        use_domain=ablation.use_domain,
        max_hops=hp.max_hops,
        include_inverse=hp.include_inverse,
        **kw,
    )


def run_config(hp: Hyperparameters, ablation: Ablation, cfg: ModelConfig) -> dict:
    h = asdict(hp)
    h["lambdas"] = list(hp.lambdas)
    return {"model": cfg.to_json(), "training_mode": ablation.training_mode,
            "hyperparameters": h, "ablation": asdict(ablation)}


def _check_finite(loss: torch.Tensor, epoch: int, batch: int) -> None:
    if not torch.isfinite(loss):
        raise TrainingDiverged(f"non-finite loss at epoch {epoch}, batch {batch}")


def _check_grads(model: nn.Module, epoch: int, batch: int) -> None:
    for name, p in model.named_parameters():
        if p.grad is not None and not torch.isfinite(p.grad).all():
            raise TrainingDiverged(f"non-finite gradient in {name} at epoch {epoch}, batch {batch}")


def _optimizer(model: nn.Module, hp: Hyperparameters) -> torch.optim.Optimizer:
    return torch.optim.AdamW(model.parameters(), lr=hp.lr, weight_decay=hp.weight_decay)


def _step(model, opt, loss, hp, epoch, bi) -> None:
    _check_finite(loss, epoch, bi)
    opt.zero_grad()
    loss.backward()
    _check_grads(model, epoch, bi)
    torch.nn.utils.clip_grad_norm_(model.parameters(), hp.clip_norm)
    opt.step()


def train(
    data: RunData,
    hp: Hyperparameters,
    ablation: Ablation = Ablation(),
    out_dir: str | Path | None = None,
    progress: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Train for ``hp.epochs`` epochs and return the best-validation-MRR model.

    The epoch with the highest validation MRR wins (earliest on ties).  When
    ``out_dir`` is given, ``trainlog.csv``, ``last.ckpt.*`` and
    ``best.ckpt.*`` are written there.
    """
    hp.validate()
    ablation.validate()
    if data.domains.embeddings.shape[1] != hp.d:
        raise ConfigError(f"embedding dimension {data.domains.embeddings.shape[1]} must equal d={hp.d}")
    torch.set_num_threads(1)
    lambdas = effective_lambdas(hp, ablation)
    instances = build_instances(data, data.train, hp, ablation)
    if not instances:
        raise ConfigError("no training instances")
    ctx = StepContext(
        data.tokenizer,
        torch.as_tensor(data.domains.embeddings, dtype=torch.float64),
        _PathVectors(data.graph, data.embedder),
        ablation.use_domain,
        hp.margin,
        hp.all_pairs,
    )
    cfg = hp.model_config(len(data.tokenizer))
    if ablation.training_mode == "separate":
        members = {k: build_model(cfg, hp.seed + 1000 * i) for i, k in enumerate(("dm", "rk", "dec"))}
        model: nn.Module = StitchedPraline(members["dm"], members["rk"], members["dec"])
        opts = {k: _optimizer(m, hp) for k, m in members.items()}
    else:
        model = build_model(cfg, hp.seed)
        opt = _optimizer(model, hp)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    config = run_config(hp, ablation, cfg)
    opts_eval = eval_options(hp, ablation)

    log = TrainLog()
    best = (-math.inf, 0, None, None)
    for epoch in range(1, hp.epochs + 1):
        batches = make_batches(instances, hp.batch_size, hp.seed, epoch)
        torch.manual_seed(hp.seed * 100003 + epoch)
        model.train()
        sums = {"dm": 0.0, "rk": 0.0, "dec": 0.0, "L": 0.0}
        if ablation.training_mode == "separate":
            for key, member in members.items():
                if key == "dm" and not ablation.use_domain:
                    continue
                for bi, batch in enumerate(batches):
                    loss = batch_losses(member, batch, ctx, terms=(key,))[key]
                    _step(member, opts[key], loss, hp, epoch, bi)
                    sums[key] += float(loss.detach())
            for k in ("dm", "rk", "dec"):
                sums[k] /= len(batches)
            sums["L"] = float(joint_loss(sums["dm"], sums["rk"], sums["dec"], lambdas))
        else:
            for bi, batch in enumerate(batches):
                parts = batch_losses(model, batch, ctx)
                loss = joint_loss(parts["dm"], parts["rk"], parts["dec"], lambdas)
                _step(model, opt, loss, hp, epoch, bi)
                for k in ("dm", "rk", "dec"):
                    sums[k] += float(parts[k].detach())
                sums["L"] += float(loss.detach())
            for k in sums:
                sums[k] /= len(batches)

        report, _ = evaluate(model, data.valid, data.graph, data.embedder, data.tokenizer, data.domains, opts_eval)
        row = dict(epoch=epoch, L=sums["L"], L_dm=sums["dm"], L_rk=sums["rk"], L_dec=sums["dec"],
                   val_mrr=report.overall["mrr"], val_h5=report.overall["h_at_5"])
        log.append(**row)
        if progress is not None:
            progress(row)
        if report.overall["mrr"] > best[0]:
            best = (report.overall["mrr"], epoch, copy.deepcopy(model.state_dict()), report)
            if out is not None:
                _save(out / "best.ckpt", model, config, epoch, hp.seed, data)
        if out is not None:
            _save(out / "last.ckpt", model, config, epoch, hp.seed, data)
            log.write(out / "trainlog.csv")

    model.load_state_dict(best[2])
    model.eval()
    return TrainResult(model, log, best[1], best[3], data, hp, ablation)


def _save(path: Path, model, config, epoch, seed, data: RunData) -> None:
    save_checkpoint(
        path, model, config, epoch, seed,
        extra={
            "tokenizer": data.tokenizer.to_json(),
            "domains": list(data.domains.labels),
            "embedder": {"method": data.embedder.method, "dim": data.embedder.dim, "seed": data.embedder.seed},
        },
    )


# ----------------------------------------------------------- gradient check


@dataclass
class GradCheckResult:
    errors: dict[str, float]
    excluded: int
    checked: int

    @property
    def max_error(self) -> float:
        return max(self.errors.values()) if self.errors else 0.0


def check_gradients(
    model: Praline,
    batch: Batch,
    ctx: StepContext,
    lambdas: Sequence[float] = (0.25, 1.0, 0.25),
    step: float = 1e-5,
    perturb: float = 0.0,
    abs_floor: float = 1e-6,
    only: Sequence[str] | None = None,
) -> GradCheckResult:
    """Compare autograd gradients of the joint loss with central differences.

    Returns ``||a - n|| / max(||a||, ||n||, abs_floor)`` per parameter array.  Elements
    whose +/- step moves any negative pair across the hinge at the margin
    are dropped from both sides.  ``perturb`` scales the analytic gradient by
    ``1 + perturb`` to confirm that the check can fail; ``only`` restricts
    the check to the named arrays.
    """
    model.eval()
    params = dict(model.named_parameters())
    checked_names = list(params) if only is None else [k for k in params if k in set(only)]

    def loss_and_pattern():
        parts = batch_losses(model, batch, ctx)
        L = joint_loss(parts["dm"], parts["rk"], parts["dec"], lambdas)
        return L, parts.get("hinge_active", ())

    model.zero_grad()
    L, base_pattern = loss_and_pattern()
    L.backward()
    analytic = {k: (p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p)) * (1 + perturb)
                for k, p in params.items()}
    errors = {}
    excluded = checked = 0
    with torch.no_grad():
        for name in checked_names:
            flat = params[name].view(-1)
            num = torch.zeros_like(flat)
            keep = torch.ones_like(flat, dtype=torch.bool)
            for i in range(flat.numel()):
                orig = float(flat[i])
                flat[i] = orig + step
                lp, pat_p = loss_and_pattern()
                flat[i] = orig - step
                lm, pat_m = loss_and_pattern()
                flat[i] = orig
                if pat_p != base_pattern or pat_m != base_pattern:
                    keep[i] = False
                    excluded += 1
                    continue
                num[i] = (float(lp) - float(lm)) / (2 * step)
                checked += 1
            a = analytic[name].view(-1)[keep]
            n = num[keep]
            # the floor keeps arrays whose true gradient is zero (e.g. key biases
            # under softmax shift invariance) from dividing round-off by round-off
            denom = max(float(a.norm()), float(n.norm()), abs_floor)
            errors[name] = float((a - n).norm()) / denom
    return GradCheckResult(errors, excluded, checked)


def tiny_config(vocab_size: int, d: int = 8) -> ModelConfig:
    return ModelConfig(vocab_size, d=d, layers=1, heads=2, d_ff=2 * d, dropout=0.0)


def with_seed(hp: Hyperparameters, seed: int) -> Hyperparameters:
    return replace(hp, seed=seed)
