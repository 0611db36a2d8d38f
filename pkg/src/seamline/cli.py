"""Command-line entry point for the full pipeline.

Subcommands: synth (build a hybrid corpus from source essays), train
(fit the projection head), eval (score methods and render reports),
detect (write per-document predictions), stats (corpus statistics), and
embed (warm an embedding cache).

Exit codes: 0 success, 2 usage, 3 data error, 4 numeric failure,
5 external-service failure. Flag values take precedence over --config
file entries, which take precedence over built-in defaults; every
subcommand persists its resolved configuration next to its outputs.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import shlex
import sys
from pathlib import Path

import numpy as np

from . import corpus as corpus_mod, detector, evaluation, metric
from .embeddings import CachedProvider, HashingProvider, RemoteProvider
from .errors import DataError, ExternalServiceError, NumericError
from .synthesis import (
    TASKS,
    HttpGenerator,
    MockGenerator,
    ProcGenerator,
    synthesize_hybrid,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4
EXIT_EXTERNAL = 5


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    with open(path, encoding="utf-8") as handle:
        data = json.load(handle)
    if not isinstance(data, dict):
        raise DataError("--config file must contain a JSON object")
    return data


class Resolver:
    """flags > config file > defaults, recording the resolved values."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.file_config = _load_config_file(getattr(args, "config", None))
        self.resolved: dict = {}

    def get(self, key: str, default):
        value = getattr(self.args, key, None)
        if value is None:
            value = self.file_config.get(key, default)
        self.resolved[key] = value
        return value

    def echo(self, out_path: str | Path, extra: dict | None = None) -> None:
        record = dict(self.resolved)
        if extra:
            record.update(extra)
        path = Path(str(out_path) + ".config.json")
        with open(path, "w", encoding="utf-8", newline="\n") as handle:
            json.dump(record, handle, indent=2, sort_keys=True)
            handle.write("\n")


def _make_provider(spec: str):
    if spec == "hashing" or spec.startswith("hashing:"):
        parts = spec.split(":")
        dim = int(parts[1]) if len(parts) > 1 else 256
        seed = int(parts[2]) if len(parts) > 2 else 0
        return HashingProvider(dim=dim, seed=seed)
    if spec.startswith("cache:"):
        rest = spec[len("cache:"):]
        if ":" in rest:
            cache_path, inner_spec = rest.split(":", 1)
        else:
            cache_path, inner_spec = rest, "hashing"
        return CachedProvider(_make_provider(inner_spec), cache_path)
    if spec == "remote":
        return RemoteProvider()
    if spec.startswith("remote:"):
        return RemoteProvider(spec[len("remote:"):])
    raise DataError(
        f"unknown provider spec {spec!r}; expected hashing[:DIM[:SEED]], "
        f"cache:PATH[:INNER], or remote[:URL]"
    )


def _make_generator(spec: str, seed: int):
    if spec == "mock":
        return MockGenerator(seed=seed)
    if spec.startswith("mock:"):
        return MockGenerator(seed=seed, mode=spec[len("mock:"):])
    if spec.startswith("proc:"):
        return ProcGenerator(shlex.split(spec[len("proc:"):]))
    if spec.startswith("http://") or spec.startswith("https://"):
        return HttpGenerator(spec)
    if spec.startswith("http:"):
        return HttpGenerator(spec[len("http:"):])
    raise DataError(f"unknown generator spec {spec!r}")


def _parse_tasks(text: str, parser: argparse.ArgumentParser) -> list[int]:
    try:
        task_ids = [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        parser.error(f"--tasks must be a comma list of task ids, got {text!r}")
    if not task_ids:
        parser.error("--tasks must name at least one task")
    for task_id in task_ids:
        if task_id not in TASKS:
            parser.error(f"unknown task id {task_id}; valid ids are 1-6")
    return task_ids


# --- synth -------------------------------------------------------------------

def cmd_synth(args, parser) -> int:
    resolver = Resolver(args)
    seed = resolver.get("seed", 0)
    tasks_text = resolver.get("tasks", "1,2,3,4,5,6")
    generator_spec = resolver.get("generator", "mock")
    max_attempts = resolver.get("max_attempts", 5)
    jobs = resolver.get("jobs", 1)
    task_ids = _parse_tasks(tasks_text, parser)
    generator = _make_generator(generator_spec, seed)

    sources = corpus_mod.filter_source_essays(corpus_mod.load_sources(args.source))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    log_path = Path(str(out) + ".log.jsonl")

    def one(item):
        # Per-essay random source: results do not depend on worker order.
        index, essay = item
        task = TASKS[task_ids[index % len(task_ids)]]
        rng = np.random.default_rng([seed, index])
        try:
            result = synthesize_hybrid(
                essay, task, generator, rng, max_attempts=max_attempts
            )
        except DataError as exc:
            return None, {
                "essay_id": essay.essay_id, "task_id": task.task_id,
                "status": "skipped", "reasons": [type(exc).__name__],
            }
        if result.skipped:
            return None, {
                "essay_id": essay.essay_id, "task_id": task.task_id,
                "status": "skipped", "reasons": list(result.failure_reasons),
            }
        return result.document, {
            "essay_id": essay.essay_id, "task_id": task.task_id,
            "status": "ok", "attempts": result.attempts_used,
        }

    items = list(enumerate(sources))
    if jobs > 1 and getattr(generator, "concurrent_safe", False):
        with concurrent.futures.ThreadPoolExecutor(jobs) as pool:
            outcomes = list(pool.map(one, items))
    else:
        outcomes = [one(item) for item in items]
    docs = [doc for doc, _ in outcomes if doc is not None]
    log_records = [record for _, record in outcomes]

    corpus_mod.save_corpus(docs, out)
    with open(log_path, "w", encoding="utf-8", newline="\n") as handle:
        for record in log_records:
            handle.write(json.dumps(record, ensure_ascii=False) + "\n")
    resolver.echo(out, {"source": str(args.source), "out": str(out)})

    skipped = sum(1 for r in log_records if r["status"] == "skipped")
    print(f"synthesized {len(docs)} documents ({skipped} skipped) -> {out}")
    if docs:
        print(corpus_mod.format_stats(corpus_mod.corpus_stats(docs)))
    return EXIT_OK


# --- train -------------------------------------------------------------------

def _train_config(resolver: Resolver, seed: int) -> metric.TrainConfig:
    lr = resolver.get("lr", None)
    grid_text = resolver.get("lr_grid", None)
    if grid_text is not None:
        grid = tuple(float(x) for x in str(grid_text).split(","))
    elif resolver.get("fidelity_grid", False):
        grid = metric.FIDELITY_LR_GRID
    else:
        grid = metric.DEFAULT_LR_GRID
    return metric.TrainConfig(
        learning_rate=lr,
        lr_grid=grid,
        decay=resolver.get("decay", 0.2),
        epoch_size=resolver.get("epoch_size", 5000),
        batch_size=resolver.get("batch_size", 32),
        margin=resolver.get("margin", 1.0),
        patience=resolver.get("patience", 1),
        max_epochs=resolver.get("max_epochs", 10),
        seed=seed,
        k_validate=resolver.get("k", 3),
    )


def _history_dict(history: metric.TrainHistory) -> dict:
    return {
        "records": [
            {"epoch": r.epoch, "mean_loss": r.mean_loss,
             "val_f1": r.val_f1, "learning_rate": r.learning_rate}
            for r in history.records
        ],
        "best_epoch": history.best_epoch,
        "initial_val_f1": history.initial_val_f1,
        "base_rate": history.base_rate,
        "rate_results": [list(pair) for pair in history.rate_results],
    }


def cmd_train(args, parser) -> int:
    resolver = Resolver(args)
    seed = resolver.get("seed", 0)
    provider = _make_provider(resolver.get("provider", "hashing"))
    config = _train_config(resolver, seed)

    docs = corpus_mod.load_corpus(args.corpus)
    split = evaluation.make_id_split(docs, seed=seed)
    train_docs, val_docs, _ = evaluation.split_docs(docs, split)

    head, history = metric.train_projection(train_docs, val_docs, provider, config)

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    metric.save_head(head, out, provider.provider_id, config)
    with open(str(out) + ".history.json", "w", encoding="utf-8", newline="\n") as handle:
        json.dump(_history_dict(history), handle, indent=2, sort_keys=True)
        handle.write("\n")
    resolver.echo(out, {"corpus": str(args.corpus), "out": str(out)})

    final = history.records[-1].val_f1 if history.records else history.initial_val_f1
    print(
        f"trained head (rate {history.base_rate}, best epoch {history.best_epoch}, "
        f"val F1 {final:.3f} vs initial {history.initial_val_f1:.3f}) -> {out}"
    )
    return EXIT_OK


# --- eval --------------------------------------------------------------------

def _build_methods(names: list[str], provider, p: int, k: int, sweep_p: bool,
                   head_path: str | None, train_config: metric.TrainConfig):
    methods = []
    p_values = range(1, 7) if sweep_p else [p]
    for name in names:
        if name == "random":
            methods.append(evaluation.RandomMethod(k=k))
        elif name == "lr":
            methods.append(evaluation.LogisticMethod(provider, k=k))
        elif name == "lr-all":
            methods.append(evaluation.LogisticMethod(provider, k=None))
        elif name == "tribert-nt":
            for pv in p_values:
                methods.append(evaluation.TriBertMethod(
                    provider, detector.PrototypeParams(pv, k)
                ))
        elif name == "tribert":
            for pv in p_values:
                if head_path:
                    head, _ = metric.load_head(head_path)
                    methods.append(evaluation.TriBertMethod(
                        provider, detector.PrototypeParams(pv, k), head=head
                    ))
                else:
                    methods.append(evaluation.TriBertMethod(
                        provider, detector.PrototypeParams(pv, k),
                        train_config=train_config,
                    ))
        else:
            raise DataError(
                f"unknown method {name!r}; expected random, lr, lr-all, "
                f"tribert, or tribert-nt"
            )
    return methods


def cmd_eval(args, parser) -> int:
    resolver = Resolver(args)
    seed = resolver.get("seed", 0)
    runs = resolver.get("runs", 3)
    mode = resolver.get("mode", "id")
    p = resolver.get("p", 1)
    k = resolver.get("k", 3)
    jobs = resolver.get("jobs", 1)
    fmt = resolver.get("format", "text")
    provider = _make_provider(resolver.get("provider", "hashing"))
    names = [n.strip() for n in resolver.get("methods", "random,tribert-nt").split(",")]
    train_config = _train_config(resolver, seed)

    docs = corpus_mod.load_corpus(args.corpus)
    methods = _build_methods(
        names, provider, p, k, bool(args.sweep_p), args.head, train_config
    )

    if mode == "id":
        split = evaluation.make_id_split(docs, seed=seed)
        report = evaluation.run_experiment(
            docs, methods, split=split, runs=runs, seed=seed,
            annotate=(fmt == "html"), jobs=jobs,
        )
    elif mode == "ood":
        folds = evaluation.make_ood_folds(docs, seed=seed)
        report = evaluation.run_experiment(
            docs, methods, folds=folds, runs=runs, seed=seed,
            annotate=(fmt == "html"), jobs=jobs,
        )
    else:
        parser.error(f"--mode must be id or ood, got {mode!r}")

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    text = evaluation.render_report(report, "text")
    with open(str(out) + ".txt", "w", encoding="utf-8", newline="\n") as handle:
        handle.write(text)
    with open(str(out) + ".json", "w", encoding="utf-8", newline="\n") as handle:
        handle.write(evaluation.render_report(report, "json"))
    if fmt == "html":
        with open(str(out) + ".html", "w", encoding="utf-8", newline="\n") as handle:
            handle.write(evaluation.render_report(report, "html"))
    resolver.echo(out, {"corpus": str(args.corpus), "out": str(out)})

    print(text, end="")
    succeeded = sum(1 for m in report.methods if m.error is None)
    return EXIT_OK if succeeded > 0 else EXIT_DATA


# --- detect / stats / embed ----------------------------------------------------

def cmd_detect(args, parser) -> int:
    resolver = Resolver(args)
    p = resolver.get("p", 1)
    k = resolver.get("k", 3)
    jobs = resolver.get("jobs", 1)
    provider = _make_provider(resolver.get("provider", "hashing"))
    head = None
    if args.head:
        head, _ = metric.load_head(args.head)

    docs = corpus_mod.load_corpus(args.corpus)
    params = detector.PrototypeParams(p, k)

    def one(doc):
        prediction = detector.detect(doc, provider, head=head, params=params)
        return {
            "doc_id": doc.doc_id,
            "method_id": prediction.method_id,
            "candidates": [
                {"pos": pos, "score": score}
                for pos, score in prediction.candidates
            ],
        }

    if jobs > 1:
        with concurrent.futures.ThreadPoolExecutor(jobs) as pool:
            records = list(pool.map(one, docs))
    else:
        records = [one(doc) for doc in docs]

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8", newline="\n") as handle:
        for record in records:
            handle.write(json.dumps(record) + "\n")
    resolver.echo(out, {"corpus": str(args.corpus), "out": str(out)})
    print(f"wrote {len(records)} predictions -> {out}")
    return EXIT_OK


def cmd_stats(args, parser) -> int:
    docs = corpus_mod.load_corpus(args.corpus)
    print(corpus_mod.format_stats(corpus_mod.corpus_stats(docs)))
    return EXIT_OK


def cmd_embed(args, parser) -> int:
    resolver = Resolver(args)
    inner = _make_provider(resolver.get("provider", "hashing"))
    provider = CachedProvider(inner, args.cache)
    docs = corpus_mod.load_corpus(args.corpus)
    texts = [s.text for doc in docs for s in doc.sentences]
    provider.embed(texts)
    print(f"cached {len(texts)} sentence embeddings -> {args.cache}")
    return EXIT_OK


# --- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="seamline",
        description="Boundary detection for human/AI hybrid documents.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p_, out_required=True):
        p_.add_argument("--config", help="JSON config file (flags win)")
        p_.add_argument("--seed", type=int, default=None)
        if out_required:
            p_.add_argument("--out", required=True)

    p_synth = sub.add_parser("synth", help="synthesize a hybrid corpus")
    p_synth.add_argument("--source", required=True, help="source essays JSONL")
    p_synth.add_argument("--tasks", default=None, help="comma list of task ids 1-6")
    p_synth.add_argument("--generator", default=None,
                         help="mock | mock:MODE | proc:CMD | http:URL")
    p_synth.add_argument("--max-attempts", dest="max_attempts", type=int, default=None)
    p_synth.add_argument("--jobs", type=int, default=None)
    common(p_synth)
    p_synth.set_defaults(func=cmd_synth)

    p_train = sub.add_parser("train", help="train the projection head")
    p_train.add_argument("--corpus", required=True)
    p_train.add_argument("--provider", default=None)
    p_train.add_argument("--lr", type=float, default=None)
    p_train.add_argument("--lr-grid", dest="lr_grid", default=None)
    p_train.add_argument("--fidelity-grid", dest="fidelity_grid",
                         action="store_const", const=True, default=None,
                         help="use the full-encoder-era learning-rate grid")
    p_train.add_argument("--decay", type=float, default=None)
    p_train.add_argument("--epoch-size", dest="epoch_size", type=int, default=None)
    p_train.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p_train.add_argument("--margin", type=float, default=None)
    p_train.add_argument("--patience", type=int, default=None)
    p_train.add_argument("--max-epochs", dest="max_epochs", type=int, default=None)
    p_train.add_argument("--k", type=int, default=None)
    common(p_train)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="run methods and write reports")
    p_eval.add_argument("--corpus", required=True)
    p_eval.add_argument("--methods", default=None,
                        help="comma list: random, lr, lr-all, tribert, tribert-nt")
    p_eval.add_argument("--mode", choices=["id", "ood"], default=None)
    p_eval.add_argument("--provider", default=None)
    p_eval.add_argument("--head", default=None, help="pre-trained head JSON")
    p_eval.add_argument("--p", type=int, default=None)
    p_eval.add_argument("--k", type=int, default=None)
    p_eval.add_argument("--runs", type=int, default=None)
    p_eval.add_argument("--sweep-p", dest="sweep_p", action="store_true",
                        help="one result row per prototype size 1-6")
    p_eval.add_argument("--format", choices=["text", "json", "html"], default=None)
    p_eval.add_argument("--jobs", type=int, default=None)
    p_eval.add_argument("--lr", type=float, default=None)
    p_eval.add_argument("--lr-grid", dest="lr_grid", default=None)
    p_eval.add_argument("--fidelity-grid", dest="fidelity_grid",
                        action="store_const", const=True, default=None)
    p_eval.add_argument("--decay", type=float, default=None)
    p_eval.add_argument("--epoch-size", dest="epoch_size", type=int, default=None)
    p_eval.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p_eval.add_argument("--margin", type=float, default=None)
    p_eval.add_argument("--patience", type=int, default=None)
    p_eval.add_argument("--max-epochs", dest="max_epochs", type=int, default=None)
    common(p_eval)
    p_eval.set_defaults(func=cmd_eval)

    p_detect = sub.add_parser("detect", help="write boundary predictions")
    p_detect.add_argument("--corpus", required=True)
    p_detect.add_argument("--provider", default=None)
    p_detect.add_argument("--head", default=None)
    p_detect.add_argument("--p", type=int, default=None)
    p_detect.add_argument("--k", type=int, default=None)
    p_detect.add_argument("--jobs", type=int, default=None)
    common(p_detect)
    p_detect.set_defaults(func=cmd_detect)

    p_stats = sub.add_parser("stats", help="print corpus statistics")
    p_stats.add_argument("--corpus", required=True)
    p_stats.set_defaults(func=cmd_stats)

    p_embed = sub.add_parser("embed", help="warm an embedding cache")
    p_embed.add_argument("--corpus", required=True)
    p_embed.add_argument("--provider", default=None)
    p_embed.add_argument("--cache", required=True)
    p_embed.add_argument("--config", help="JSON config file (flags win)")
    p_embed.set_defaults(func=cmd_embed)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, parser)
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ExternalServiceError as exc:
        print(f"external service failure: {exc}", file=sys.stderr)
        return EXIT_EXTERNAL
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
