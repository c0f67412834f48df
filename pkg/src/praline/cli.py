"""Command-line interface: ``praline {train,eval,ask,synth,paths,report}``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Sequence, TextIO

import numpy as np
import torch

from . import config as C
from .checkpoint import CheckpointError
from .corpus import ConfigError, SchemaError, assemble_input, load_conversations
from .embedder import EmbeddingError
from .kg import GraphError, dump_paths_jsonl, extract_context_paths, label_paths, load_graph, verbalize_path
from .model import pad_batch
from .pipeline import LoadedRun, eval_run, load_run, train_run
from .ranker import cosine_torch, rank_by_scores
from .seq2seq import substitute_answer
from .synth import InfeasibleSpec, SynthSpec, generate_synthetic_benchmark
from .trainer import TrainingDiverged, eval_options

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3
USAGE_ERRORS = (ConfigError, SchemaError, GraphError, InfeasibleSpec, EmbeddingError, FileNotFoundError)


# ------------------------------------------------------------------ train


def cmd_train(args) -> int:
    cfg = C.effective_config(args.config, args.set)
    if args.ablation:
        C.apply_ablation(cfg, args.ablation)
    if args.epochs is not None:
        cfg["training"]["epochs"] = args.epochs
    if args.seed is not None:
        cfg["seed"] = args.seed
    out = args.out or cfg.get("output_dir")
    if not out:
        raise ConfigError("no output directory: pass --out or set output_dir")
    C.validate_config(cfg, need_data=True)

    def progress(row):
        if not args.quiet:
            print(f"epoch {row['epoch']:3d}  L {row['L']:.4f}  val MRR {row['val_mrr']:.3f}  "
                  f"val H@5 {row['val_h5']:.3f}", flush=True)

    result = train_run(cfg, out, progress)
    print(f"best epoch {result.best_epoch}; checkpoint written to {Path(out) / 'best.ckpt.json'}")
    return EXIT_OK


# ------------------------------------------------------------------- eval


def cmd_eval(args) -> int:
    run = load_run(args.run)
    report, results = eval_run(run, args.split, gold_history=args.gold_history,
                               use_gold_domain=args.gold_domain)
    out = Path(args.out or args.run)
    out.mkdir(parents=True, exist_ok=True)
    (out / "eval_report.json").write_text(report.dumps(), encoding="utf-8")
    (out / "eval_report.txt").write_text(report.to_table(), encoding="utf-8")
    with open(out / "rankings.jsonl", "w", encoding="utf-8") as fh:
        for r in results:
            fh.write(json.dumps(r.ranking.to_json(r.turn_id), sort_keys=True) + "\n")
    sys.stdout.write(report.to_table())
    return EXIT_OK


# -------------------------------------------------------------------- ask


class AskSession:
    """Interactive four-step inference with a growing generated history."""

    def __init__(self, run: LoadedRun, out: TextIO) -> None:
        self.run = run
        self.out = out
        self.history: list[tuple[str, str]] = []
        self.opts = eval_options(C.hyperparameters(run.cfg), C.ablation(run.cfg))
        self.last_input: list[int] = []

    def reset(self) -> None:
        self.history = []
        print("history cleared", file=self.out)

    def resolve(self, question: str) -> list[str]:
        return sorted(self.run.data.graph.find_entities_by_label(question))

    @torch.no_grad()
    def turn(self, question: str, entities: Sequence[str] | None = None) -> bool:
        d = self.run.data
        ents = [e for e in (entities if entities is not None else self.resolve(question)) if e in d.graph.entities]
        if not ents:
            print("no context entities found", file=self.out)
            return False
        model = self.run.model
        model.eval()
        ids = assemble_input(self.history, question, d.tokenizer, self.opts.history_mode)
        self.last_input = ids
        tids, mask = pad_batch([ids or [d.tokenizer.unk_id]], d.tokenizer.pad_id)
        enc = model.encode_batch(tids, mask)
        dom_emb = torch.as_tensor(d.domains.embeddings, dtype=torch.float64)
        pred = int(model.domain_logprobs(enc, dom_emb).argmax(dim=-1)[0])
        if self.opts.use_domain:
            dvec = dom_emb[pred][None]
        else:
            dvec = torch.zeros(1, dom_emb.shape[1], dtype=torch.float64)
        phi_c = model.conversation_embedding(enc, dvec)
        paths = extract_context_paths(d.graph, ents, self.opts.max_hops, self.opts.include_inverse)
        if paths:
            mat = d.embedder.embed_paths([verbalize_path(p, d.graph) for p in paths])
            phi_p = model.path_embedding(torch.as_tensor(mat, dtype=torch.float64))
            ranking = rank_by_scores(paths, cosine_torch(phi_c, phi_p).tolist())
        else:
            ranking = rank_by_scores([], [])
        answers = ranking.answers()
        top = d.graph.label(answers[0][0]) if answers else "unknown"
        gen = model.generate(enc, d.tokenizer.bos_id, d.tokenizer.eos_id, 50)[0]
        response = substitute_answer(d.tokenizer.decode_tokens(gen), top)
        print(f"response: {response}", file=self.out)
        print(f"domain: {d.domains.labels[pred] if self.opts.use_domain else '(disabled)'}", file=self.out)
        for rank, (ans, s) in enumerate(answers[:5], start=1):
            print(f"  {rank}. {d.graph.label(ans)}  [{ans}]  {s:.4f}", file=self.out)
        print("", file=self.out)
        self.history.append((question, response if self.opts.response_mode == "fluent" else top))
        return True


def cmd_ask(args) -> int:
    run = load_run(args.run)
    session = AskSession(run, sys.stdout)
    if args.replay:
        convs = {c.id: c for c in load_conversations(args.replay)}
        if args.conversation not in convs:
            raise ConfigError(f"conversation {args.conversation!r} not in {args.replay}")
        for t in convs[args.conversation].turns:
            print(f"> {t.question}")
            session.turn(t.question, t.context_entities)
        return EXIT_OK
    for line in sys.stdin:
        q = line.strip()
        if not q:
            continue
        if q == ":reset":
            session.reset()
            continue
        if q in (":quit", ":q"):
            break
        session.turn(q)
    return EXIT_OK


# ------------------------------------------------------------------ synth


def cmd_synth(args) -> int:
    spec = SynthSpec(
        n_domains=args.domains,
        n_entities=args.entities,
        n_relations=args.relations,
        n_conversations=args.conversations,
        turns_per_conversation=args.turns,
        seed=args.seed,
        max_hops=args.max_hops,
        corruption_rate=args.corruption,
    )
    files = generate_synthetic_benchmark(spec, args.out)
    cfg = C.default_config()
    cfg["data"].update(
        triples=str(files.triples_file.resolve()),
        labels=str(files.labels_file.resolve()),
        conversations=str(files.conversations_file.resolve()),
        domains=str(files.domains_file.resolve()),
    )
    C.write_config(cfg, Path(args.out) / "config.json")
    print(f"benchmark written to {args.out}")
    return EXIT_OK


# ------------------------------------------------------------------ paths


def cmd_paths(args) -> int:
    if args.config:
        cfg = C.effective_config(args.config, args.set)
        C.check_data_files(cfg)
        graph = load_graph(cfg["data"]["triples"], cfg["data"]["labels"])
        hops = args.max_hops or cfg["training"]["max_hops"]
    elif args.triples:
        graph = load_graph(args.triples, args.labels)
        hops = args.max_hops or 3
    else:
        raise ConfigError("paths needs --config or --triples")
    if args.conversations:
        convs = {c.id: c for c in load_conversations(args.conversations)}
        if args.conversation not in convs:
            raise ConfigError(f"conversation {args.conversation!r} not found")
        turn = convs[args.conversation].turns[args.turn]
        ents, gold = turn.context_entities, turn.answers
    else:
        if not args.entities:
            raise ConfigError("give --entities or --conversations/--conversation/--turn")
        ents, gold = args.entities.split(","), (args.gold.split(",") if args.gold else None)
    paths = extract_context_paths(graph, ents, hops, args.inverse)
    if gold is not None:
        pos, neg = label_paths(paths, gold)
        paths = sorted(pos + neg, key=lambda p: p.sort_key)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            dump_paths_jsonl(paths, fh)
    else:
        dump_paths_jsonl(paths, sys.stdout)
    return EXIT_OK


# ----------------------------------------------------------------- report


def collect_runs(run_dirs: Sequence[str]) -> list[dict]:
    rows = []
    for r in run_dirs:
        p = Path(r)
        if not p.is_dir():
            raise ConfigError(f"run directory not found: {p}")
        rep_path = p / "eval_report.json"
        if not rep_path.exists():
            raise ConfigError(f"{p} has no eval_report.json; run `praline eval --run {p}` first")
        rep = json.loads(rep_path.read_text(encoding="utf-8"))
        cfg_path = p / "config.json"
        abl = json.loads(cfg_path.read_text(encoding="utf-8")).get("ablation", {}) if cfg_path.exists() else {}
        rows.append({"run": p.name, "report": rep, "ablation": abl})
    return rows


def comparison_table(rows: Sequence[dict]) -> str:
    name_w = max([len("run")] + [len(r["run"]) for r in rows]) + 2
    head = f"{'run':<{name_w}}{'P@1':>8}{'H@5':>8}{'H@10':>8}{'MRR':>8}{'rand MRR':>10}{'dom F1':>8}{'BLEU-4':>8}"
    lines = [head, "-" * len(head)]
    for r in rows:
        o = r["report"]["overall"]
        di = r["report"].get("domain_identification")
        f1 = f"{di['f1']:.3f}" if di else "-"
        lines.append(
            f"{r['run']:<{name_w}}{o['p_at_1']:>8.3f}{o['h_at_5']:>8.3f}{o['h_at_10']:>8.3f}{o['mrr']:>8.3f}"
            f"{r['report']['random_baseline']['mrr']:>10.3f}{f1:>8}{r['report']['generation']['bleu4']:>8.3f}"
        )
    domains = sorted({d for r in rows for d in r["report"]["per_domain"]})
    if domains:
        lines += ["", "MRR by domain", f"{'run':<{name_w}}" + "".join(f"{d:>12}" for d in domains)]
        for r in rows:
            pd = r["report"]["per_domain"]
            lines.append(f"{r['run']:<{name_w}}" + "".join(
                f"{pd[d]['mrr']:>12.3f}" if d in pd else f"{'-':>12}" for d in domains))
    return "\n".join(lines) + "\n"


def plot_hits(rows: Sequence[dict], path: str | Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    names = [r["run"] for r in rows]
    h5 = [r["report"]["overall"]["h_at_5"] for r in rows]
    h10 = [r["report"]["overall"]["h_at_10"] for r in rows]
    x = np.arange(len(rows))
    fig, ax = plt.subplots(figsize=(max(4, 1.4 * len(rows) + 2), 3.5))
    ax.bar(x - 0.2, h5, 0.4, label="H@5")
    ax.bar(x + 0.2, h10, 0.4, label="H@10")
    ax.set_xticks(x, names, rotation=20, ha="right")
    ax.set_ylim(0, 1)
    ax.set_ylabel("hit rate")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


def cmd_report(args) -> int:
    rows = collect_runs(args.runs)
    table = comparison_table(rows)
    sys.stdout.write(table)
    if args.out:
        Path(args.out).write_text(table, encoding="utf-8")
    if args.plot:
        plot_hits(rows, args.plot)
        print(f"chart written to {args.plot}")
    return EXIT_OK


# ----------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="praline", description="Conversational KGQA with path ranking.")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model from a config file")
    t.add_argument("--config", help="JSON run config")
    t.add_argument("--out", help="output run directory (overrides output_dir)")
    t.add_argument("--ablation", help=f"one of {sorted(C.ABLATION_ALIASES)}")
    t.add_argument("--epochs", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config value")
    t.add_argument("--quiet", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a trained run")
    e.add_argument("--run", required=True)
    e.add_argument("--split", default="test", choices=("test", "valid", "train"))
    e.add_argument("--out", help="where to write reports (default: the run directory)")
    e.add_argument("--gold-history", action="store_true", help="feed gold responses into the history")
    e.add_argument("--gold-domain", action="store_true", help="rank with the gold domain embedding")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ask", help="interactive question answering (reads questions from stdin)")
    a.add_argument("--run", required=True)
    a.add_argument("--replay", help="conversations JSONL to replay with its gold context entities")
    a.add_argument("--conversation", help="conversation id for --replay")
    a.set_defaults(func=cmd_ask)

    s = sub.add_parser("synth", help="generate the synthetic benchmark")
    d = SynthSpec()
    s.add_argument("--out", required=True)
    s.add_argument("--domains", type=int, default=d.n_domains)
    s.add_argument("--entities", type=int, default=d.n_entities)
    s.add_argument("--relations", type=int, default=d.n_relations)
    s.add_argument("--conversations", type=int, default=d.n_conversations)
    s.add_argument("--turns", type=int, default=d.turns_per_conversation)
    s.add_argument("--seed", type=int, default=d.seed)
    s.add_argument("--max-hops", type=int, default=d.max_hops)
    s.add_argument("--corruption", type=float, default=d.corruption_rate)
    s.set_defaults(func=cmd_synth)

    q = sub.add_parser("paths", help="dump candidate context paths as JSON Lines")
    q.add_argument("--config")
    q.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    q.add_argument("--triples")
    q.add_argument("--labels")
    q.add_argument("--entities", help="comma-separated context entity ids")
    q.add_argument("--gold", help="comma-separated gold answers (labels paths)")
    q.add_argument("--conversations", help="take entities and gold answers from this JSONL ...")
    q.add_argument("--conversation", help="... conversation id")
    q.add_argument("--turn", type=int, default=0)
    q.add_argument("--max-hops", type=int)
    q.add_argument("--inverse", action="store_true", help="also follow edges backwards")
    q.add_argument("--out")
    q.set_defaults(func=cmd_paths)

    r = sub.add_parser("report", help="compare evaluated runs")
    r.add_argument("runs", nargs="+")
    r.add_argument("--plot", help="write an H@5/H@10 bar chart here")
    r.add_argument("--out", help="also write the table to this file")
    r.set_defaults(func=cmd_report)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_USAGE
    torch.set_num_threads(1)
    try:
        return args.func(args)
    except USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingDiverged, CheckpointError, RuntimeError, ValueError, KeyError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    raise SystemExit(main())
