"""Operator surface.

Subcommands: ``index build|inspect``, ``retrieve``, ``train``, ``infer``,
``analyze``, ``synth``, ``pipeline``. Exit codes: 0 ok, 2 config error,
3 missing artifact, 4 reader failure, 5 internal invariant violation.
Non-zero exits print one machine-readable line to stderr:
``{"error": <category>, "message": ...}``.

Every subcommand writes new files only (inputs are never mutated) and a
run manifest goes to the output directory before any computation.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import analysis, distill, fusion, index as index_mod, jsonio, synth
from .errors import (
    ArtifactMissing,
    ConfigInvalid,
    RagfuseError,
    ReaderError,
)
from .index import RetrieverHeads
from .reader import (
    CachedReader,
    Reader,
    RemoteReader,
    SimulatedReader,
    SimulatedReaderParams,
    cache_load,
    cache_store,
)
from .runconfig import (
    RunState,
    config_hash,
    load_config_file,
    resolve,
    resolve_endpoint,
    write_manifest,
)
from .types import ClassVocab, ReaderScoreTable

BUILTIN_SPECS = {"default.synth": synth.SynthSpec()}

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ARTIFACT = 3
EXIT_READER = 4
EXIT_INTERNAL = 5


def _fail(category: str, message: str, code: int) -> int:
    sys.stderr.write(jsonio.dumps({"error": category, "message": message}) + "\n")
    return code


def _load_spec(name_or_path: str, seed: int | None) -> synth.SynthSpec:
    if name_or_path in BUILTIN_SPECS and not Path(name_or_path).exists():
        spec = BUILTIN_SPECS[name_or_path]
        return synth.SynthSpec.from_dict({**spec.to_dict(), **({"seed": seed} if seed is not None else {})})
    path = Path(name_or_path)
    if not path.exists():
        raise ArtifactMissing(f"synth spec not found: {name_or_path}")
    data = load_config_file(path)
    if seed is not None:
        data["seed"] = seed
    try:
        return synth.SynthSpec.from_dict(data)
    except (TypeError, ValueError) as exc:
        raise ConfigInvalid(f"{path}: {exc}") from exc


def _require(path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise ArtifactMissing(f"{what} not found: {p}")
    return p


def _noimg_cache_path(cache_path) -> Path:
    p = Path(cache_path)
    stem = p.name[: -len(".jsonl")] if p.name.endswith(".jsonl") else p.name
    return p.with_name(f"{stem}.noimg.jsonl")


def _base_reader(args, file_cfg: dict, vocab: ClassVocab) -> Reader | None:
    """The live reader behind any caching layer; None for pure-cache runs."""
    kind = resolve(getattr(args, "reader", None), file_cfg, "reader.kind", "simulated")
    if kind == "cached":
        return None
    if kind == "simulated":
        params = SimulatedReaderParams(
            informativeness=resolve(
                getattr(args, "alpha", None), file_cfg, "reader.informativeness", 0.95
            ),
            confusion=SimulatedReaderParams.default_confusion(
                len(vocab),
                resolve(
                    getattr(args, "confusion_diag", None),
                    file_cfg,
                    "reader.confusion_diag",
                    0.38,
                ),
            ),
            seed=resolve(getattr(args, "reader_seed", None), file_cfg, "reader.seed", 0),
            mislead=resolve(getattr(args, "mislead", None), file_cfg, "reader.mislead", 0.95),
            junk=resolve(getattr(args, "junk", None), file_cfg, "reader.junk", 0.1),
            noise_scale=resolve(
                getattr(args, "noise_scale", None), file_cfg, "reader.noise_scale", 0.3
            ),
        )
        return SimulatedReader(params)
    if kind == "remote":
        endpoint = resolve_endpoint(getattr(args, "endpoint", None), file_cfg)
        if not endpoint:
            raise ConfigInvalid("remote reader requires an endpoint (flag, env, or config)")
        return RemoteReader(
            endpoint,
            timeout=resolve(getattr(args, "timeout", None), file_cfg, "reader.timeout", 10.0),
            max_in_flight=resolve(
                getattr(args, "max_in_flight", None), file_cfg, "reader.max_in_flight", 8
            ),
        )
    raise ConfigInvalid(f"unknown reader kind {kind!r}")


def _build_reader(args, file_cfg: dict, vocab: ClassVocab, variant: str = "with_image"):
    """Resolve the reader stack; returns (reader, cache_table, cache_path).

    With a cache path configured, the reader becomes cache-backed; the
    ``no_image`` variant gets its own derived cache file so one run can
    hold both without mixing rows.
    """
    kind = resolve(getattr(args, "reader", None), file_cfg, "reader.kind", "simulated")
    cache_path = resolve(getattr(args, "cache", None), file_cfg, "reader.cache", None)
    if cache_path and variant == "no_image":
        cache_path = str(_noimg_cache_path(cache_path))
    base = _base_reader(args, file_cfg, vocab)

    if kind == "cached":
        if not cache_path:
            raise ConfigInvalid("cached reader requires --cache")
        if not Path(cache_path).exists():
            raise ArtifactMissing(f"score cache not found: {cache_path}")
        table = cache_load(cache_path, vocab)
        return CachedReader(table), table, cache_path

    if cache_path:
        if Path(cache_path).exists():
            table = cache_load(cache_path, vocab)
        else:
            table = ReaderScoreTable(vocab, variant=variant)
        return CachedReader(table, base=base), table, cache_path
    return base, None, None


def _reader_config_dict(args, file_cfg) -> dict:
    return {
        "kind": resolve(getattr(args, "reader", None), file_cfg, "reader.kind", "simulated"),
        "cache": resolve(getattr(args, "cache", None), file_cfg, "reader.cache", None),
        "informativeness": resolve(getattr(args, "alpha", None), file_cfg, "reader.informativeness", 0.95),
        "confusion_diag": resolve(getattr(args, "confusion_diag", None), file_cfg, "reader.confusion_diag", 0.38),
        "seed": resolve(getattr(args, "reader_seed", None), file_cfg, "reader.seed", 0),
        "mislead": resolve(getattr(args, "mislead", None), file_cfg, "reader.mislead", 0.95),
        "junk": resolve(getattr(args, "junk", None), file_cfg, "reader.junk", 0.1),
        "noise_scale": resolve(getattr(args, "noise_scale", None), file_cfg, "reader.noise_scale", 0.3),
        "endpoint": resolve_endpoint(getattr(args, "endpoint", None), file_cfg),
    }


def _trainer_config(args, file_cfg, seed: int) -> distill.TrainerConfig:
    try:
        return distill.TrainerConfig(
            temperature=resolve(getattr(args, "tau", None), file_cfg, "trainer.temperature", 0.1),
            candidates_per_query=resolve(getattr(args, "train_k", None), file_cfg, "trainer.candidates_per_query", 50),
            learning_rate=resolve(getattr(args, "lr", None), file_cfg, "trainer.learning_rate", 1.0),
            epochs=resolve(getattr(args, "epochs", None), file_cfg, "trainer.epochs", 100),
            head_order=tuple(
                resolve(getattr(args, "heads", None), file_cfg, "trainer.head_order", "text,image").split(",")
            ),
            seed=seed,
            momentum=resolve(getattr(args, "momentum", None), file_cfg, "trainer.momentum", 0.0),
            reretrieval=resolve(getattr(args, "reretrieval", None), file_cfg, "trainer.reretrieval", "per_epoch"),
        )
    except ValueError as exc:
        raise ConfigInvalid(str(exc)) from exc


def _load_heads(args, dimension: int) -> RetrieverHeads:
    heads = RetrieverHeads.identity(dimension)
    text_path = getattr(args, "text_head", None)
    image_path = getattr(args, "image_head", None)
    if text_path:
        heads = heads.replace(index_mod.read_head(_require(text_path, "text head")))
    if image_path:
        heads = heads.replace(index_mod.read_head(_require(image_path, "image head")))
    return heads


def _round_floats(obj, ndigits: int = 12):
    if isinstance(obj, float):
        return round(obj, ndigits)
    if isinstance(obj, dict):
        return {k: _round_floats(v, ndigits) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round_floats(v, ndigits) for v in obj]
    return obj


# --- subcommands -------------------------------------------------------------


def cmd_synth(args) -> int:
    file_cfg = load_config_file(args.config) if args.config else {}
    # an explicit flag (or config seed) overrides the spec file's own seed
    spec = _load_spec(args.spec, resolve(args.seed, file_cfg, "seed", None))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(out, "synth", spec.seed, {"synth": spec.to_dict(), "inject": args.inject}, [])
    index, queries, tags = synth.generate(spec)
    if args.inject:
        index = synth.inject_inconsistency(index, queries, args.inject)
    index_mod.write_corpus(index, out / "corpus.jsonl")
    index_mod.write_queries(queries, out / "queries.jsonl")
    synth.write_tags(tags, out / "tags.jsonl")
    index_mod.write_index(index, out / "index.rgdx")
    print(f"synth: wrote {len(index)} records / {len(queries)} queries to {out}")
    return EXIT_OK


def cmd_index_build(args) -> int:
    corpus = _require(args.corpus, "corpus")
    idx = index_mod.read_corpus(corpus, normalize=args.normalize, storage_dtype=args.dtype)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    index_mod.write_index(idx, out)
    print(f"index build: {len(idx)} records, d={idx.dimension}, dtype={idx.storage_dtype} -> {out}")
    return EXIT_OK


def cmd_index_inspect(args) -> int:
    idx = index_mod.read_index(_require(args.index, "index"))
    sources: dict[str, int] = {}
    for rec in idx.records:
        sources[rec.source_tag] = sources.get(rec.source_tag, 0) + 1
    print(
        jsonio.dumps(
            {
                "records": len(idx),
                "dimension": idx.dimension,
                "storage_dtype": idx.storage_dtype,
                "sources": sources,
            }
        )
    )
    return EXIT_OK


def cmd_retrieve(args) -> int:
    idx = index_mod.read_index(_require(args.index, "index"))
    queries = index_mod.read_queries(_require(args.queries, "queries"))
    heads = _load_heads(args, idx.dimension)
    rows = []
    for q in sorted(queries, key=lambda q: q.query_id):
        if args.head == "dual":
            cands = index_mod.dual_retrieve(
                q.image_emb, idx, heads.text, heads.image, args.k, args.merge
            )
        else:
            cands = index_mod.top_k(q.image_emb, idx, args.head, heads.get(args.head), args.k)
        rows.append(
            {
                "query_id": q.query_id,
                "record_ids": cands.record_ids(),
                "scores": [float(s) for s in cands.scores()],
                "heads": [c.head for c in cands.entries],
            }
        )
    jsonio.write_jsonl(args.out, "ragfuse-candidates", {"k": args.k, "head": args.head}, rows)
    print(f"retrieve: {len(rows)} queries -> {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    file_cfg = load_config_file(args.config) if args.config else {}
    seed = resolve(args.seed, file_cfg, "seed", 7)
    idx = index_mod.read_index(_require(args.index, "index"))
    queries = index_mod.read_queries(_require(args.queries, "queries"))
    if not queries:
        raise ConfigInvalid("query file holds no queries")
    vocab = queries[0].class_vocab
    cfg = _trainer_config(args, file_cfg, seed)
    reader, cache_table, cache_path = _build_reader(args, file_cfg, vocab)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(
        out,
        "train",
        seed,
        {"trainer": cfg.to_dict(), "reader": _reader_config_dict(args, file_cfg)},
        [args.index, args.queries] + ([cache_path] if cache_path else []),
    )
    heads, history = distill.train_sequential(idx, queries, reader, cfg)
    index_mod.write_head(heads.text, out / "text_head.rgph")
    index_mod.write_head(heads.image, out / "image_head.rgph")
    distill.write_loss_history(history, out / "loss_history.jsonl")
    if cache_table is not None and cache_path is not None:
        cache_store(cache_table, cache_path)
    by_head: dict[str, list[dict]] = {}
    for h in history:
        by_head.setdefault(h["head"], []).append(h)
    for tag, hist in by_head.items():
        print(
            f"train[{tag}]: mean KL {hist[0]['mean_kl']:.4f} -> {hist[-1]['mean_kl']:.4f}"
            f" over {len(hist)} epochs"
        )
    return EXIT_OK


def cmd_infer(args) -> int:
    file_cfg = load_config_file(args.config) if args.config else {}
    seed = resolve(args.seed, file_cfg, "seed", 7)
    idx = index_mod.read_index(_require(args.index, "index"))
    queries = index_mod.read_queries(_require(args.queries, "queries"))
    if not queries:
        raise ConfigInvalid("query file holds no queries")
    vocab = queries[0].class_vocab
    variant = "no_image" if args.mode == "no_query_image" else "with_image"
    reader, cache_table, cache_path = _build_reader(args, file_cfg, vocab, variant=variant)
    heads = _load_heads(args, idx.dimension)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    reranker = None
    if args.mode == "reranked":
        choices = analysis.read_choices(_require(args.choices, "choices file"))
        table = analysis.external_reranker(choices)
        reranker = lambda rows, cands: table({"query_id": cands.query_id})  # noqa: E731
    preds = fusion.predict_all(
        queries, idx, heads, reader, k=args.k, mode=args.mode, seed=seed,
        reranker=reranker, jobs=args.jobs,
    )
    fusion.write_predictions(preds, out, vocab)
    if cache_table is not None and cache_path is not None:
        cache_store(cache_table, cache_path)
    acc = analysis.metrics_for_rows([p.to_dict() for p in preds]).acc
    print(f"infer[{args.mode}]: {len(preds)} queries, ACC {acc:.3f} -> {out}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    vocab, rows = fusion.read_predictions(_require(args.preds, "predictions"))
    class_order = list(vocab.labels)
    if args.compare:
        _, after_rows = fusion.read_predictions(_require(args.compare, "predictions"))
        report = analysis.compare_report(rows, after_rows, class_order=class_order)
        table = analysis.format_split_table(report)
    else:
        split = analysis.split_consistency(rows)
        report = {
            "split": split.to_dict(),
            "metrics": analysis.split_metrics(rows, split, class_order=class_order),
            "oracle": analysis.oracle_eval(rows, class_order=class_order).to_dict(),
            "rerankers": {
                name: analysis.rerank_eval(rows, name, class_order=class_order).to_dict()
                for name in ("top1_similarity", "top_logit")
            },
        }
        if args.choices:
            choices = analysis.read_choices(_require(args.choices, "choices file"))
            report["rerankers"]["external"] = analysis.rerank_eval(
                rows, analysis.external_reranker(choices), class_order=class_order
            ).to_dict()
        table = (
            f"{'split':<14}{'N':>6}{'ACC':>8}{'F1':>8}\n"
            + "\n".join(
                f"{tag:<14}{report['metrics'][tag].get('count', 0):>6}"
                f"{(report['metrics'][tag].get('acc') or 0):>8.3f}"
                f"{(report['metrics'][tag].get('macro_f1') or 0):>8.3f}"
                for tag in ("inconsistent", "consistent", "overall")
                if report["metrics"][tag].get("count")
            )
            + "\n"
        )
    report = _round_floats(report)
    if args.report:
        Path(args.report).parent.mkdir(parents=True, exist_ok=True)
        Path(args.report).write_text(jsonio.dumps(report) + "\n", encoding="utf-8")
    if args.table:
        Path(args.table).parent.mkdir(parents=True, exist_ok=True)
        Path(args.table).write_text(table, encoding="utf-8")
    print(table, end="")
    return EXIT_OK


PIPELINE_MODES = ("fused", "random_retrieval", "no_retrieval", "no_query_image")


def cmd_pipeline(args) -> int:
    """synth -> baseline infer -> train -> infer -> analyze, resumable."""
    file_cfg = load_config_file(args.config) if args.config else {}
    spec = _load_spec(args.spec, resolve(args.seed, file_cfg, "seed", None))
    seed = spec.seed  # one seed drives generation, training, and inference
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = _trainer_config(args, file_cfg, seed)
    reader_cfg = _reader_config_dict(args, file_cfg)
    full_cfg = {
        "synth": spec.to_dict(),
        "trainer": cfg.to_dict(),
        "reader": reader_cfg,
        "inject": args.inject,
        "k": args.k,
    }
    write_manifest(out, "pipeline", seed, full_cfg, [])
    state = RunState(out)
    h = config_hash(full_cfg)

    # stage: synth
    synth_outputs = [out / "corpus.jsonl", out / "queries.jsonl", out / "tags.jsonl", out / "index.rgdx"]
    if state.is_done("synth", h, synth_outputs):
        print("pipeline[synth]: up to date, skipping")
    else:
        index, queries, tags = synth.generate(spec)
        if args.inject:
            index = synth.inject_inconsistency(index, queries, args.inject)
        index_mod.write_corpus(index, synth_outputs[0])
        index_mod.write_queries(queries, synth_outputs[1])
        synth.write_tags(tags, synth_outputs[2])
        index_mod.write_index(index, synth_outputs[3])
        state.mark_done("synth", h, synth_outputs)
    idx = index_mod.read_index(out / "index.rgdx")
    queries = index_mod.read_queries(out / "queries.jsonl")
    tags = synth.read_tags(out / "tags.jsonl")
    vocab = queries[0].class_vocab
    if resolve(getattr(args, "cache", None), file_cfg, "reader.cache", None) is None:
        args.cache = str(out / "score_cache.jsonl")
    reader, cache_table, cache_path = _build_reader(args, file_cfg, vocab)
    reader_noimg, cache_table_noimg, cache_path_noimg = _build_reader(
        args, file_cfg, vocab, variant="no_image"
    )

    identity = RetrieverHeads.identity(idx.dimension)

    def run_modes(heads, prefix: str):
        outputs = {}
        for mode in PIPELINE_MODES:
            path = out / f"{prefix}.{mode}.preds.jsonl"
            outputs[mode] = path
            if state.is_done(f"{prefix}.{mode}", h, [path]):
                print(f"pipeline[{prefix}.{mode}]: up to date, skipping")
                continue
            mode_reader = reader_noimg if mode == "no_query_image" else reader
            preds = fusion.predict_all(
                queries, idx, heads, mode_reader, k=args.k, mode=mode, seed=seed,
                jobs=args.jobs,
            )
            fusion.write_predictions(preds, path, vocab)
            state.mark_done(f"{prefix}.{mode}", h, [path])
        return outputs

    before = run_modes(identity, "before")

    # stage: train
    head_files = [out / "text_head.rgph", out / "image_head.rgph", out / "loss_history.jsonl"]
    if state.is_done("train", h, head_files):
        print("pipeline[train]: up to date, skipping")
    else:
        heads, history = distill.train_sequential(idx, queries, reader, cfg)
        index_mod.write_head(heads.text, head_files[0])
        index_mod.write_head(heads.image, head_files[1])
        distill.write_loss_history(history, head_files[2])
        state.mark_done("train", h, head_files)
    trained = RetrieverHeads(
        index_mod.read_head(head_files[0]), index_mod.read_head(head_files[1])
    )
    history = distill.read_loss_history(head_files[2])

    after = run_modes(trained, "after")
    if cache_table is not None and cache_path is not None:
        cache_store(cache_table, cache_path)
    if cache_table_noimg is not None and cache_path_noimg is not None:
        cache_store(cache_table_noimg, cache_path_noimg)

    # stage: analyze
    _, before_rows = fusion.read_predictions(before["fused"])
    _, after_rows = fusion.read_predictions(after["fused"])
    class_order = list(vocab.labels)
    split_rep = analysis.compare_report(before_rows, after_rows, class_order=class_order)
    mode_metrics = {}
    for name, paths in (("before", before), ("after", after)):
        mode_metrics[name] = {}
        for mode, path in paths.items():
            _, rows = fusion.read_predictions(path)
            mode_metrics[name][mode] = analysis.metrics_for_rows(rows, class_order=class_order).to_dict()
    kl_by_head = {}
    for h_row in history:
        kl_by_head.setdefault(h_row["head"], []).append(h_row["mean_kl"])
    summary = {
        "format": "ragfuse-summary",
        "version": 1,
        "seed": seed,
        "config_hash": config_hash(full_cfg),
        "recall_at_k": {
            "k": args.k,
            "identity": synth.informative_recall_at_k(idx, queries, identity, tags, k=args.k),
            "trained": synth.informative_recall_at_k(idx, queries, trained, tags, k=args.k),
        },
        "mean_kl": {
            head: {"initial": vals[0], "final": vals[-1]} for head, vals in kl_by_head.items()
        },
        "modes": mode_metrics,
        "consistency": split_rep,
        "oracle": {
            "before": analysis.oracle_eval(before_rows, class_order=class_order).to_dict(),
            "after": analysis.oracle_eval(after_rows, class_order=class_order).to_dict(),
        },
        "rerankers": {
            name: analysis.rerank_eval(after_rows, name, class_order=class_order).to_dict()
            for name in ("top1_similarity", "top_logit")
        },
    }
    summary = _round_floats(summary)
    (out / "summary.json").write_text(jsonio.dumps(summary) + "\n", encoding="utf-8")
    table = analysis.format_split_table(split_rep)
    (out / "table.txt").write_text(table, encoding="utf-8")
    print(table, end="")
    print(f"pipeline: summary -> {out / 'summary.json'}")
    return EXIT_OK


# --- argument parsing ---------------------------------------------------------


def _add_reader_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--reader", choices=["simulated", "cached", "remote"], default=None)
    p.add_argument("--cache", default=None, help="score cache path (read-through)")
    p.add_argument("--endpoint", default=None, help="remote reader endpoint")
    p.add_argument("--timeout", type=float, default=None)
    p.add_argument("--max-in-flight", dest="max_in_flight", type=int, default=None)
    p.add_argument("--alpha", type=float, default=None, help="simulated informativeness")
    p.add_argument("--mislead", type=float, default=None)
    p.add_argument("--junk", type=float, default=None)
    p.add_argument("--noise-scale", dest="noise_scale", type=float, default=None)
    p.add_argument("--confusion-diag", dest="confusion_diag", type=float, default=None)
    p.add_argument("--reader-seed", dest="reader_seed", type=int, default=None)


def _add_trainer_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--tau", type=float, default=None, help="distillation temperature")
    p.add_argument("--train-k", dest="train_k", type=int, default=None, help="candidates per query (K)")
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--heads", default=None, help="comma-separated head order")
    p.add_argument("--momentum", type=float, default=None)
    p.add_argument("--reretrieval", choices=list(distill.RERETRIEVAL_POLICIES), default=None)


def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", default=None, help="YAML config file (flags override)")
    shared.add_argument("--seed", type=int, default=None)
    shared.add_argument("--jobs", type=int, default=1, help="worker cap for parallel stages")
    shared.add_argument(
        "--deterministic", action="store_true", help="force sequential reductions"
    )

    parser = argparse.ArgumentParser(prog="ragfuse", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_index = sub.add_parser("index", help="binary index file operations", parents=[shared])
    sub_index = p_index.add_subparsers(dest="index_command", required=True)
    p_build = sub_index.add_parser("build", parents=[shared])
    p_build.add_argument("--corpus", required=True)
    p_build.add_argument("--out", required=True)
    p_build.add_argument("--dtype", choices=["f32", "f16"], default="f32")
    p_build.add_argument("--normalize", action="store_true")
    p_build.set_defaults(func=cmd_index_build)
    p_inspect = sub_index.add_parser("inspect", parents=[shared])
    p_inspect.add_argument("--index", required=True)
    p_inspect.set_defaults(func=cmd_index_inspect)

    p_retrieve = sub.add_parser("retrieve", help="top-k retrieval dump", parents=[shared])
    p_retrieve.add_argument("--index", required=True)
    p_retrieve.add_argument("--queries", required=True)
    p_retrieve.add_argument("--k", type=int, default=fusion.DEFAULT_K)
    p_retrieve.add_argument("--head", choices=["text", "image", "dual"], default="dual")
    p_retrieve.add_argument("--merge", choices=["union_rerank", "interleave"], default="union_rerank")
    p_retrieve.add_argument("--text-head", dest="text_head", default=None)
    p_retrieve.add_argument("--image-head", dest="image_head", default=None)
    p_retrieve.add_argument("--out", required=True)
    p_retrieve.set_defaults(func=cmd_retrieve)

    p_train = sub.add_parser("train", help="distill the retriever heads", parents=[shared])
    p_train.add_argument("--index", required=True)
    p_train.add_argument("--queries", required=True)
    p_train.add_argument("--out", required=True)
    _add_reader_args(p_train)
    _add_trainer_args(p_train)
    p_train.set_defaults(func=cmd_train)

    p_infer = sub.add_parser("infer", help="fusion inference over a query set", parents=[shared])
    p_infer.add_argument("--index", required=True)
    p_infer.add_argument("--queries", required=True)
    p_infer.add_argument("--out", required=True)
    p_infer.add_argument("--mode", choices=list(fusion.MODES), default="fused")
    p_infer.add_argument("--k", type=int, default=fusion.DEFAULT_K)
    p_infer.add_argument("--text-head", dest="text_head", default=None)
    p_infer.add_argument("--image-head", dest="image_head", default=None)
    p_infer.add_argument("--choices", default=None, help="external reranker choices file")
    _add_reader_args(p_infer)
    p_infer.set_defaults(func=cmd_infer)

    p_analyze = sub.add_parser("analyze", help="consistency / oracle / metric reports", parents=[shared])
    p_analyze.add_argument("--preds", required=True)
    p_analyze.add_argument("--compare", default=None, help="after-training predictions")
    p_analyze.add_argument("--choices", default=None)
    p_analyze.add_argument("--report", default=None, help="machine-readable summary path")
    p_analyze.add_argument("--table", default=None, help="plain-text table path")
    p_analyze.set_defaults(func=cmd_analyze)

    p_synth = sub.add_parser("synth", help="generate the synthetic benchmark", parents=[shared])
    p_synth.add_argument("--spec", default="default.synth")
    p_synth.add_argument("--out", required=True)
    p_synth.add_argument("--inject", type=float, default=0.0)
    p_synth.set_defaults(func=cmd_synth)

    p_pipe = sub.add_parser("pipeline", help="synth -> train -> infer -> analyze", parents=[shared])
    p_pipe.add_argument("--spec", default="default.synth")
    p_pipe.add_argument("--out", required=True)
    p_pipe.add_argument("--inject", type=float, default=0.0)
    p_pipe.add_argument("--k", type=int, default=fusion.DEFAULT_K)
    _add_reader_args(p_pipe)
    _add_trainer_args(p_pipe)
    p_pipe.set_defaults(func=cmd_pipeline)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    if args.deterministic:
        args.jobs = 1
    try:
        return args.func(args)
    except ConfigInvalid as exc:
        return _fail("config", str(exc), EXIT_CONFIG)
    except ArtifactMissing as exc:
        return _fail("artifact", str(exc), EXIT_ARTIFACT)
    except FileNotFoundError as exc:
        return _fail("artifact", str(exc), EXIT_ARTIFACT)
    except ReaderError as exc:
        return _fail("reader", str(exc), EXIT_READER)
    except RagfuseError as exc:
        return _fail("internal", str(exc), EXIT_INTERNAL)
    except ValueError as exc:
        return _fail("config", str(exc), EXIT_CONFIG)


if __name__ == "__main__":
    sys.exit(main())
